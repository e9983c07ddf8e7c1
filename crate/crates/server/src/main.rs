use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand, ValueEnum};
use futures::{SinkExt, StreamExt};
use listening_core::control::{Empty, Expression, ExpressionPayload};
use listening_core::protocol::{
    ControlChangeBody, OperatorUtteranceBody, UserUtteranceBody, WireBody, WireMessage,
};
use listening_core::sim::FuzzProfile;
use listening_server::commands;
use listening_server::ServerOptions;
use tokio::io::{AsyncBufReadExt, BufReader};
use tokio_tungstenite::tungstenite::Message;

#[derive(Parser)]
#[command(name = "listen", version, about = "Semi-autonomous attentive-listening sessions")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the WebSocket session server.
    Serve {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: std::net::IpAddr,
        #[arg(long, default_value = "logs")]
        log_dir: PathBuf,
    },
    /// Re-drive a session log through the engine.
    Replay {
        #[arg(long)]
        log: PathBuf,
        /// Fail unless every derived event and every byte matches.
        #[arg(long)]
        verify: bool,
    },
    /// Run a script on the virtual clock, or generate a fuzz corpus.
    Simulate {
        /// Script file (JSON Lines).
        #[arg(long, conflicts_with = "fuzz", required_unless_present = "fuzz")]
        script: Option<PathBuf>,
        /// Number of fuzzed sessions to generate.
        #[arg(long)]
        fuzz: Option<u64>,
        #[arg(long, default_value_t = 0, requires = "fuzz")]
        seed: u64,
        /// Fuzz profile as JSON.
        #[arg(long, requires = "fuzz")]
        profile: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Log file for a script, directory for a fuzz corpus.
        #[arg(long)]
        out: PathBuf,
    },
    /// Session metrics and questionnaire correlations over a log directory.
    Analyze {
        #[arg(long)]
        logs: PathBuf,
        /// Ratings CSV with columns session_id,item_id,score.
        #[arg(long)]
        ratings: Option<PathBuf>,
        #[arg(long, requires = "ratings")]
        schema: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Minimal text client. User lines are sent as whole turns; operator
    /// lines are speech, `/mic` toggles control, `/happy` etc. set the face.
    Client {
        #[arg(long, default_value = "ws://127.0.0.1:8080")]
        url: String,
        #[arg(long)]
        session: String,
        #[arg(long, value_enum, default_value_t = Role::User)]
        role: Role,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Role {
    User,
    Operator,
}

fn init_tracing() {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env()
                .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("info")),
        )
        .with_writer(std::io::stderr)
        .init();
}

fn print_json(value: &impl serde::Serialize) -> anyhow::Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn client_line(role: Role, session: &str, line: &str) -> Vec<WireMessage> {
    let msg = |body| WireMessage::new(session, 0, body);
    match role {
        Role::User => vec![
            msg(WireBody::UserUtterance(UserUtteranceBody {
                text: line.to_string(),
                annotations: Vec::new(),
                start_ms: None,
            })),
            msg(WireBody::EndOfTurn(Empty {})),
        ],
        Role::Operator => {
            if line == "/mic" {
                return vec![msg(WireBody::ControlChange(ControlChangeBody::default()))];
            }
            if line == "/end" {
                return vec![msg(WireBody::SessionEnd(Empty {}))];
            }
            if let Some(name) = line.strip_prefix('/') {
                if let Ok(expression) = serde_json::from_value::<Expression>(name.into()) {
                    return vec![msg(WireBody::Expression(ExpressionPayload { expression }))];
                }
            }
            vec![msg(WireBody::OperatorUtterance(OperatorUtteranceBody {
                text: line.to_string(),
                expression: None,
                speech_ms: None,
                audio_ref: None,
            }))]
        }
    }
}

async fn client(url: &str, session: &str, role: Role) -> anyhow::Result<()> {
    let path = match role {
        Role::User => "user",
        Role::Operator => "operator",
    };
    let url = format!("{url}/session/{session}/{path}");
    let (ws, _) = tokio_tungstenite::connect_async(&url)
        .await
        .with_context(|| format!("connecting to {url}"))?;
    let (mut sink, mut stream) = ws.split();
    let printer = tokio::spawn(async move {
        while let Some(Ok(frame)) = stream.next().await {
            if let Message::Text(t) = frame {
                println!("{t}");
            }
        }
    });
    let mut lines = BufReader::new(tokio::io::stdin()).lines();
    while let Some(line) = lines.next_line().await? {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        for m in client_line(role, session, line) {
            sink.send(Message::Text(m.to_text().into())).await?;
        }
    }
    let _ = sink.close().await;
    let _ = printer.await;
    Ok(())
}

async fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Serve {
            config,
            port,
            host,
            log_dir,
        } => {
            let config = commands::load_config(config.as_deref())?;
            listening_server::serve(ServerOptions { config, log_dir }, SocketAddr::new(host, port))
                .await
        }
        Command::Replay { log, verify } => print_json(&commands::replay(&log, verify)?),
        Command::Simulate {
            script,
            fuzz,
            seed,
            profile,
            config,
            out,
        } => {
            let config = commands::load_config(config.as_deref())?;
            if let Some(count) = fuzz {
                let profile = match profile {
                    Some(p) => serde_json::from_str(&std::fs::read_to_string(&p)?)
                        .with_context(|| format!("parsing {}", p.display()))?,
                    None => FuzzProfile::default(),
                };
                let m = commands::fuzz_corpus(seed, count, &profile, &config, &out)?;
                eprintln!("wrote {} sessions to {}", m.sessions.len(), out.display());
                return Ok(());
            }
            let script = script.expect("clap requires --script without --fuzz");
            let log = commands::simulate(&script, &config, &out)?;
            eprintln!(
                "wrote {} events, {} prompts to {}",
                log.events.len(),
                log.prompts().len(),
                out.display()
            );
            Ok(())
        }
        Command::Analyze {
            logs,
            ratings,
            schema,
            out,
        } => {
            let report = commands::analyze(&logs, ratings.as_deref(), schema.as_deref())?;
            std::fs::write(&out, serde_json::to_string_pretty(&report)? + "\n")?;
            let s = &report.summary;
            println!(
                "sessions {}  takeovers median {} range {}..{}  mean operator speech {:.1} s",
                s.sessions,
                s.median_takeovers,
                s.min_takeovers,
                s.max_takeovers,
                s.mean_operator_speech_ms / 1000.0
            );
            if let Some(c) = &report.correlation {
                print!("{}", c.to_text());
            }
            Ok(())
        }
        Command::Client { url, session, role } => client(&url, &session, role).await,
    }
}

#[tokio::main]
async fn main() -> ExitCode {
    init_tracing();
    match run(Cli::parse()).await {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
