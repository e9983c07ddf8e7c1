//! Agent/operator control and the session event log.
//!
//! The log is JSON Lines, one [`SessionEvent`] per line with the keys
//! `seq`, `t_ms`, `actor`, `kind` and `payload`. The first line is always
//! the `session_start` event carrying the full config snapshot.

use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::Config;
use crate::detector::TakeoverCondition;
use crate::dialogue::{normalize, AgentResponse, ResponseKind, UserUtterance};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControlMode {
    #[default]
    AgentControl,
    OperatorControl,
}

impl ControlMode {
    pub fn toggled(self) -> Self {
        match self {
            ControlMode::AgentControl => ControlMode::OperatorControl,
            ControlMode::OperatorControl => ControlMode::AgentControl,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Expression {
    Happy,
    Sad,
    Anger,
    Surprise,
    Laughter,
}

impl Expression {
    pub const ALL: [Expression; 5] = [
        Expression::Happy,
        Expression::Sad,
        Expression::Anger,
        Expression::Surprise,
        Expression::Laughter,
    ];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Actor {
    User,
    Agent,
    Operator,
    System,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControlCause {
    /// Operator clicked the microphone button.
    #[default]
    Toggle,
    /// Operator connection lost past the grace period.
    OperatorTimeout,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Empty {}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SessionStartPayload {
    pub session_id: String,
    pub config: Box<Config>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PromptPayload {
    pub reasons: Vec<TakeoverCondition>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControlChangePayload {
    pub target: ControlMode,
    #[serde(default)]
    pub cause: ControlCause,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExpressionPayload {
    pub expression: Expression,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload", rename_all = "snake_case")]
pub enum EventBody {
    SessionStart(SessionStartPayload),
    Utterance(UserUtterance),
    EndOfTurn(Empty),
    Response(AgentResponse),
    Backchannel(AgentResponse),
    SilenceTick(Empty),
    TakeoverPrompt(PromptPayload),
    ControlChange(ControlChangePayload),
    Expression(ExpressionPayload),
    SessionEnd(Empty),
}

impl EventBody {
    pub fn kind_name(&self) -> &'static str {
        match self {
            EventBody::SessionStart(_) => "session_start",
            EventBody::Utterance(_) => "utterance",
            EventBody::EndOfTurn(_) => "end_of_turn",
            EventBody::Response(_) => "response",
            EventBody::Backchannel(_) => "backchannel",
            EventBody::SilenceTick(_) => "silence_tick",
            EventBody::TakeoverPrompt(_) => "takeover_prompt",
            EventBody::ControlChange(_) => "control_change",
            EventBody::Expression(_) => "expression",
            EventBody::SessionEnd(_) => "session_end",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionEvent {
    pub seq: u64,
    pub t_ms: u64,
    pub actor: Actor,
    #[serde(flatten)]
    pub body: EventBody,
}

impl SessionEvent {
    /// Agent-side output produced by the autonomous pipeline.
    pub fn is_autonomous_output(&self) -> bool {
        self.actor == Actor::Agent
            && matches!(self.body, EventBody::Response(_) | EventBody::Backchannel(_))
    }

    pub fn control_target(&self) -> Option<ControlMode> {
        match &self.body {
            EventBody::ControlChange(c) => Some(c.target),
            _ => None,
        }
    }
}

#[derive(Debug, Error)]
pub enum ControlError {
    #[error("operator is not in control")]
    NotInControl,
    #[error("{actor:?} may not change control ({cause:?})")]
    Unauthorized { actor: Actor, cause: ControlCause },
    #[error("operator utterance is empty")]
    EmptyUtterance,
    #[error("not a control change event")]
    NotAControlEvent,
}

/// Next control mode after a control-change event.
pub fn apply_control_event(
    mode: ControlMode,
    event: &SessionEvent,
) -> Result<ControlMode, ControlError> {
    let EventBody::ControlChange(change) = &event.body else {
        return Err(ControlError::NotAControlEvent);
    };
    let allowed = match (event.actor, change.cause) {
        (Actor::Operator, ControlCause::Toggle) => true,
        (Actor::System, ControlCause::OperatorTimeout) => {
            mode == ControlMode::OperatorControl
        }
        _ => false,
    };
    if !allowed {
        return Err(ControlError::Unauthorized {
            actor: event.actor,
            cause: change.cause,
        });
    }
    Ok(mode.toggled())
}

/// Builds operator speech; only legal while the operator holds control.
pub fn emit_operator_speech(
    text: &str,
    expression: Option<Expression>,
    mode: ControlMode,
    at_ms: u64,
    speech_ms: u64,
) -> Result<AgentResponse, ControlError> {
    if mode != ControlMode::OperatorControl {
        return Err(ControlError::NotInControl);
    }
    if normalize(text).is_empty() {
        return Err(ControlError::EmptyUtterance);
    }
    Ok(AgentResponse {
        session_time_ms: at_ms,
        kind: ResponseKind::OperatorSpeech,
        text: text.to_string(),
        has_sentiment: false,
        expression,
        speech_ms: Some(speech_ms),
    })
}

#[derive(Debug, Error)]
pub enum LogError {
    #[error("corrupt log at seq {seq}: {reason}")]
    Corrupt { seq: u64, reason: String },
    #[error("log line {line}: {source}")]
    Parse {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("log does not start with a session_start event")]
    MissingStart,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SessionLog {
    pub session_id: String,
    pub config: Config,
    pub events: Vec<SessionEvent>,
}

impl SessionLog {
    pub fn new(session_id: impl Into<String>, config: Config) -> Self {
        Self {
            session_id: session_id.into(),
            config,
            events: Vec::new(),
        }
    }

    /// Seq must run 1, 2, 3, ... and time must never go backwards.
    pub fn check_order(&self) -> Result<(), LogError> {
        let mut prev_t = 0;
        for (i, e) in self.events.iter().enumerate() {
            let expected = i as u64 + 1;
            if e.seq != expected {
                return Err(LogError::Corrupt {
                    seq: e.seq,
                    reason: format!("expected seq {expected}"),
                });
            }
            if e.t_ms < prev_t {
                return Err(LogError::Corrupt {
                    seq: e.seq,
                    reason: format!("time {} precedes {}", e.t_ms, prev_t),
                });
            }
            prev_t = e.t_ms;
        }
        Ok(())
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for e in &self.events {
            out.push_str(&serde_json::to_string(e).expect("event serializes"));
            out.push('\n');
        }
        out
    }

    pub fn write_jsonl(&self, mut w: impl Write) -> std::io::Result<()> {
        w.write_all(self.to_jsonl().as_bytes())
    }

    pub fn from_jsonl(text: &str) -> Result<Self, LogError> {
        Self::read_jsonl(text.as_bytes())
    }

    pub fn read_jsonl(r: impl BufRead) -> Result<Self, LogError> {
        let mut events = Vec::new();
        for (i, line) in r.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let e: SessionEvent =
                serde_json::from_str(&line).map_err(|source| LogError::Parse { line: i + 1, source })?;
            events.push(e);
        }
        let Some(SessionEvent {
            body: EventBody::SessionStart(start),
            ..
        }) = events.first()
        else {
            return Err(LogError::MissingStart);
        };
        let log = SessionLog {
            session_id: start.session_id.clone(),
            config: (*start.config).clone(),
            events,
        };
        log.check_order()?;
        Ok(log)
    }

    pub fn load(path: &Path) -> Result<Self, LogError> {
        let f = std::fs::File::open(path)?;
        Self::read_jsonl(std::io::BufReader::new(f))
    }

    pub fn save(&self, path: &Path) -> Result<(), LogError> {
        std::fs::write(path, self.to_jsonl())?;
        Ok(())
    }

    pub fn prompts(&self) -> Vec<(u64, Vec<TakeoverCondition>)> {
        self.events
            .iter()
            .filter_map(|e| match &e.body {
                EventBody::TakeoverPrompt(p) => Some((e.t_ms, p.reasons.clone())),
                _ => None,
            })
            .collect()
    }

    pub fn end_time_ms(&self) -> u64 {
        self.events.last().map_or(0, |e| e.t_ms)
    }
}
