//! WebSocket service: one task per session, two endpoints per session.
//!
//! `GET /session/{id}/user` creates the session on first connect and ends
//! it when the user leaves. `GET /session/{id}/operator` attaches to a
//! running session. A second connection to an occupied endpoint is
//! refused with 409. Each session task is the only writer of its engine
//! and of `<log_dir>/<id>.jsonl`.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use anyhow::Context;
use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::Router;
use futures::{SinkExt, StreamExt};
use listening_core::protocol::{ClientRole, ErrorCode, Outbound, SessionHost, WireMessage};
use listening_core::{Config, SessionEvent};
use tokio::sync::{mpsc, oneshot};
use tokio::task::JoinHandle;
use tokio::time::Instant;

#[derive(Debug, Clone)]
pub struct ServerOptions {
    pub config: Config,
    pub log_dir: PathBuf,
}

enum Command {
    Attach {
        role: ClientRole,
        out: mpsc::UnboundedSender<String>,
    },
    Frame {
        role: ClientRole,
        text: String,
    },
    Detach {
        role: ClientRole,
    },
    Shutdown,
}

struct Slot {
    tx: mpsc::UnboundedSender<Command>,
    user: bool,
    operator: bool,
    task: Option<JoinHandle<()>>,
}

impl Slot {
    fn taken(&mut self, role: ClientRole) -> &mut bool {
        match role {
            ClientRole::User => &mut self.user,
            ClientRole::Operator => &mut self.operator,
        }
    }
}

struct Inner {
    options: ServerOptions,
    sessions: Mutex<HashMap<String, Slot>>,
}

#[derive(Clone)]
struct AppState(Arc<Inner>);

/// Frees an endpoint when its connection goes away, even if the upgrade
/// never completes.
struct SlotGuard {
    state: AppState,
    id: String,
    role: ClientRole,
}

impl Drop for SlotGuard {
    fn drop(&mut self) {
        let mut sessions = self.state.0.sessions.lock().expect("registry lock");
        if let Some(slot) = sessions.get_mut(&self.id) {
            *slot.taken(self.role) = false;
        }
    }
}

fn valid_id(id: &str) -> bool {
    (1..=64).contains(&id.len())
        && id
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_' || c == '.')
        && !id.starts_with('.')
}

/// What the upgraded socket should do.
enum Plan {
    Serve(mpsc::UnboundedSender<Command>, SlotGuard),
    Refuse(WireMessage),
}

impl AppState {
    fn plan(&self, id: &str, role: ClientRole) -> Result<Plan, StatusCode> {
        let mut sessions = self.0.sessions.lock().expect("registry lock");
        let guard = |state: &AppState| SlotGuard {
            state: state.clone(),
            id: id.to_string(),
            role,
        };
        if let Some(slot) = sessions.get_mut(id) {
            let taken = slot.taken(role);
            if *taken {
                return Err(StatusCode::CONFLICT);
            }
            *taken = true;
            return Ok(Plan::Serve(slot.tx.clone(), guard(self)));
        }
        if role == ClientRole::Operator {
            return Ok(Plan::Refuse(WireMessage::error(
                id,
                0,
                ErrorCode::NoSuchSession,
                format!("no running session {id}"),
            )));
        }
        let path = self.0.options.log_dir.join(format!("{id}.jsonl"));
        let file = match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(f) => f,
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                return Ok(Plan::Refuse(WireMessage::error(
                    id,
                    0,
                    ErrorCode::SessionClosed,
                    format!("session {id} already has a log"),
                )))
            }
            Err(e) => {
                tracing::error!("cannot create {}: {e}", path.display());
                return Err(StatusCode::INTERNAL_SERVER_ERROR);
            }
        };
        let (tx, rx) = mpsc::unbounded_channel();
        let task = tokio::spawn(run_session(
            self.clone(),
            id.to_string(),
            self.0.options.config.clone(),
            file,
            rx,
        ));
        sessions.insert(
            id.to_string(),
            Slot {
                tx: tx.clone(),
                user: true,
                operator: false,
                task: Some(task),
            },
        );
        Ok(Plan::Serve(tx, guard(self)))
    }
}

async fn user_endpoint(
    Path(id): Path<String>,
    State(state): State<AppState>,
    ws: WebSocketUpgrade,
) -> Response {
    endpoint(id, state, ws, ClientRole::User)
}

async fn operator_endpoint(
    Path(id): Path<String>,
    State(state): State<AppState>,
    ws: WebSocketUpgrade,
) -> Response {
    endpoint(id, state, ws, ClientRole::Operator)
}

fn endpoint(id: String, state: AppState, ws: WebSocketUpgrade, role: ClientRole) -> Response {
    if !valid_id(&id) {
        return (StatusCode::BAD_REQUEST, "invalid session id").into_response();
    }
    match state.plan(&id, role) {
        Err(code) => (code, "endpoint unavailable").into_response(),
        Ok(Plan::Refuse(msg)) => ws.on_upgrade(move |mut socket| async move {
            let _ = socket.send(Message::Text(msg.to_text().into())).await;
            let _ = socket.send(Message::Close(None)).await;
        }),
        Ok(Plan::Serve(tx, guard)) => {
            ws.on_upgrade(move |socket| connection(socket, role, tx, guard))
        }
    }
}

async fn connection(
    socket: WebSocket,
    role: ClientRole,
    tx: mpsc::UnboundedSender<Command>,
    guard: SlotGuard,
) {
    let (mut sink, mut stream) = socket.split();
    let (out_tx, mut out_rx) = mpsc::unbounded_channel::<String>();
    if tx.send(Command::Attach { role, out: out_tx }).is_err() {
        return;
    }
    let writer = tokio::spawn(async move {
        while let Some(text) = out_rx.recv().await {
            if sink.send(Message::Text(text.into())).await.is_err() {
                return;
            }
        }
        let _ = sink.send(Message::Close(None)).await;
    });
    while let Some(Ok(msg)) = stream.next().await {
        let text = match msg {
            Message::Text(t) => t.to_string(),
            Message::Binary(b) => String::from_utf8_lossy(&b).into_owned(),
            Message::Close(_) => break,
            _ => continue,
        };
        if tx.send(Command::Frame { role, text }).is_err() {
            break;
        }
    }
    let _ = tx.send(Command::Detach { role });
    drop(guard);
    let _ = writer.await;
}

struct LogSink {
    out: BufWriter<File>,
}

impl LogSink {
    fn append(&mut self, events: &[SessionEvent]) -> std::io::Result<()> {
        if events.is_empty() {
            return Ok(());
        }
        for e in events {
            serde_json::to_writer(&mut self.out, e)?;
            self.out.write_all(b"\n")?;
        }
        self.out.flush()
    }
}

async fn run_session(
    state: AppState,
    id: String,
    config: Config,
    file: File,
    mut rx: mpsc::UnboundedReceiver<Command>,
) {
    let epoch = Instant::now();
    let now = || epoch.elapsed().as_millis() as u64;
    let period = config.server.tick_period_ms.max(1);
    let mut host = SessionHost::new(id.clone(), config, 0);
    let mut log = LogSink {
        out: BufWriter::new(file),
    };
    let mut clients: HashMap<ClientRole, mpsc::UnboundedSender<String>> = HashMap::new();
    let mut next_tick = period;
    let mut last_wake = 0;

    let dispatch = |clients: &HashMap<ClientRole, mpsc::UnboundedSender<String>>,
                    out: Vec<Outbound>| {
        for o in out {
            let text = o.message.to_text();
            for (role, tx) in clients {
                if o.to.includes(*role) {
                    let _ = tx.send(text.clone());
                }
            }
        }
    };

    loop {
        // Deadlines at or before the last wake-up were already handled.
        let wake = host
            .next_deadline()
            .filter(|&d| d > last_wake)
            .map_or(next_tick, |d| d.min(next_tick));
        let out = tokio::select! {
            cmd = rx.recv() => match cmd {
                Some(Command::Attach { role, out }) => {
                    clients.insert(role, out);
                    host.connect(role, now())
                }
                Some(Command::Frame { role, text }) => host.handle_text(role, &text, now()),
                Some(Command::Detach { role }) => {
                    clients.remove(&role);
                    let t = now();
                    host.disconnect(role, t);
                    if role == ClientRole::User { host.close(t) } else { Vec::new() }
                }
                Some(Command::Shutdown) | None => host.close(now()),
            },
            _ = tokio::time::sleep_until(epoch + Duration::from_millis(wake)) => {
                let t = now();
                last_wake = t;
                if t >= next_tick {
                    next_tick = (t / period + 1) * period;
                }
                host.tick(t)
            }
        };
        if let Err(e) = log.append(&host.drain_events()) {
            tracing::error!("session {id}: log write failed: {e}");
        }
        dispatch(&clients, out);
        if host.is_ended() {
            break;
        }
    }
    drop(clients);
    state.0.sessions.lock().expect("registry lock").remove(&id);
    tracing::info!("session {id} ended");
}

/// A server bound to a local address.
pub struct RunningServer {
    pub addr: SocketAddr,
    state: AppState,
    stop: Option<oneshot::Sender<()>>,
    join: JoinHandle<std::io::Result<()>>,
}

impl RunningServer {
    /// Ids of sessions still running.
    pub fn active_sessions(&self) -> Vec<String> {
        let mut ids: Vec<String> = self
            .state
            .0
            .sessions
            .lock()
            .expect("registry lock")
            .keys()
            .cloned()
            .collect();
        ids.sort();
        ids
    }

    /// Ends every session, waits for their logs, then stops listening.
    pub async fn shutdown(mut self) -> anyhow::Result<()> {
        close_all(&self.state).await;
        if let Some(stop) = self.stop.take() {
            let _ = stop.send(());
        }
        self.join.await??;
        Ok(())
    }

    pub async fn wait(self) -> anyhow::Result<()> {
        self.join.await??;
        Ok(())
    }
}

async fn close_all(state: &AppState) {
    let tasks: Vec<JoinHandle<()>> = {
        let mut sessions = state.0.sessions.lock().expect("registry lock");
        sessions
            .values_mut()
            .filter_map(|slot| {
                let _ = slot.tx.send(Command::Shutdown);
                slot.task.take()
            })
            .collect()
    };
    for t in tasks {
        let _ = t.await;
    }
}

fn router(state: AppState) -> Router {
    Router::new()
        .route("/session/{id}/user", get(user_endpoint))
        .route("/session/{id}/operator", get(operator_endpoint))
        .route("/health", get(|| async { "ok" }))
        .with_state(state)
}

/// Binds `addr` and serves in the background.
pub async fn spawn(options: ServerOptions, addr: SocketAddr) -> anyhow::Result<RunningServer> {
    std::fs::create_dir_all(&options.log_dir)
        .with_context(|| format!("creating {}", options.log_dir.display()))?;
    let state = AppState(Arc::new(Inner {
        options,
        sessions: Mutex::new(HashMap::new()),
    }));
    let listener = tokio::net::TcpListener::bind(addr)
        .await
        .with_context(|| format!("binding {addr}"))?;
    let addr = listener.local_addr()?;
    let (stop, stopped) = oneshot::channel::<()>();
    let app = router(state.clone());
    let join = tokio::spawn(async move {
        axum::serve(listener, app)
            .with_graceful_shutdown(async {
                let _ = stopped.await;
            })
            .await
    });
    Ok(RunningServer {
        addr,
        state,
        stop: Some(stop),
        join,
    })
}

/// Serves until Ctrl-C, then closes every session.
pub async fn serve(options: ServerOptions, addr: SocketAddr) -> anyhow::Result<()> {
    let server = spawn(options, addr).await?;
    tracing::info!("listening on {}", server.addr);
    tokio::signal::ctrl_c().await?;
    tracing::info!("shutting down");
    server.shutdown().await
}
