//! Plays a [`Script`] against a running server in wall-clock time.
//!
//! The user connection opens the session, so script time zero is the
//! moment the user socket is up. Operator steps go over the operator
//! socket, user steps over the user socket.

use std::time::Duration;

use anyhow::{anyhow, bail, Context};
use futures::stream::{SplitSink, SplitStream};
use futures::{SinkExt, StreamExt};
use listening_core::control::{Empty, ExpressionPayload};
use listening_core::protocol::{
    ControlChangeBody, OperatorUtteranceBody, UserUtteranceBody, WireBody, WireMessage,
};
use listening_core::sim::{Action, Script};
use tokio::net::TcpStream;
use tokio::task::JoinHandle;
use tokio::time::Instant;
use tokio_tungstenite::tungstenite::Message;
use tokio_tungstenite::{connect_async, MaybeTlsStream, WebSocketStream};

type Ws = WebSocketStream<MaybeTlsStream<TcpStream>>;

/// Everything each client received, in arrival order.
#[derive(Debug, Default)]
pub struct Transcript {
    pub user: Vec<WireMessage>,
    pub operator: Vec<WireMessage>,
}

async fn connect(url: &str) -> anyhow::Result<(SplitSink<Ws, Message>, SplitStream<Ws>)> {
    let (ws, _) = connect_async(url)
        .await
        .with_context(|| format!("connecting to {url}"))?;
    Ok(ws.split())
}

fn collect(mut stream: SplitStream<Ws>) -> JoinHandle<anyhow::Result<Vec<WireMessage>>> {
    tokio::spawn(async move {
        let mut got = Vec::new();
        while let Some(frame) = stream.next().await {
            match frame? {
                Message::Text(t) => {
                    let msg = WireMessage::parse(&t)
                        .with_context(|| format!("server sent unparseable frame {t}"))?;
                    let done = matches!(msg.body, WireBody::SessionEnd(_));
                    got.push(msg);
                    if done {
                        break;
                    }
                }
                Message::Close(_) => break,
                _ => {}
            }
        }
        Ok(got)
    })
}

async fn send(sink: &mut SplitSink<Ws, Message>, session_id: &str, t_ms: u64, body: WireBody) -> anyhow::Result<()> {
    let text = WireMessage::new(session_id, t_ms, body).to_text();
    sink.send(Message::Text(text.into())).await?;
    Ok(())
}

/// Runs `script` against the server at `base` (e.g. `ws://127.0.0.1:8080`).
pub async fn drive_script(base: &str, script: &Script) -> anyhow::Result<Transcript> {
    script.validate()?;
    let id = &script.session_id;
    let (mut user, user_rx) = connect(&format!("{base}/session/{id}/user")).await?;
    let epoch = Instant::now();
    let user_task = collect(user_rx);
    let (mut operator, operator_rx) = connect(&format!("{base}/session/{id}/operator")).await?;
    let operator_task = collect(operator_rx);

    for step in &script.steps {
        tokio::time::sleep_until(epoch + Duration::from_millis(step.at_ms)).await;
        let t = step.at_ms;
        match &step.action {
            Action::UserSay {
                text,
                annotations,
                duration_ms,
            } => {
                let body = WireBody::UserUtterance(UserUtteranceBody {
                    text: text.clone(),
                    annotations: annotations.clone(),
                    start_ms: duration_ms.map(|d| t.saturating_sub(d)),
                });
                send(&mut user, id, t, body).await?
            }
            Action::EndOfTurn => send(&mut user, id, t, WireBody::EndOfTurn(Empty {})).await?,
            Action::OperatorToggle => {
                send(&mut operator, id, t, WireBody::ControlChange(ControlChangeBody::default()))
                    .await?
            }
            Action::OperatorSay {
                text,
                expression,
                speech_ms,
            } => {
                let body = WireBody::OperatorUtterance(OperatorUtteranceBody {
                    text: text.clone(),
                    expression: *expression,
                    speech_ms: *speech_ms,
                    audio_ref: None,
                });
                send(&mut operator, id, t, body).await?
            }
            Action::OperatorExpression(expression) => {
                let body = WireBody::Expression(ExpressionPayload {
                    expression: *expression,
                });
                send(&mut operator, id, t, body).await?
            }
            Action::Wait => {}
        }
    }
    let end = script.end_time_ms();
    tokio::time::sleep_until(epoch + Duration::from_millis(end)).await;
    send(&mut user, id, end, WireBody::SessionEnd(Empty {})).await?;

    let user_msgs = user_task.await.map_err(|e| anyhow!(e))??;
    let operator_msgs = operator_task.await.map_err(|e| anyhow!(e))??;
    let _ = user.close().await;
    let _ = operator.close().await;
    if !matches!(user_msgs.last().map(|m| &m.body), Some(WireBody::SessionEnd(_))) {
        bail!("session {id} closed without session_end");
    }
    Ok(Transcript {
        user: user_msgs,
        operator: operator_msgs,
    })
}
