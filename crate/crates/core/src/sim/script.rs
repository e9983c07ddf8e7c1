use std::io::BufRead;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::control::{Empty, Expression, ExpressionPayload};
use crate::dialogue::Annotation;
use crate::session::{Input, SessionError};

#[derive(Debug, Error)]
pub enum ScriptError {
    #[error("step {index}: time goes backwards")]
    NonMonotonic { index: usize },
    #[error("step {index}: operator action while the agent is in control")]
    IllegalOperatorAction { index: usize },
    #[error("step {index}: steps after the session end")]
    AfterEnd { index: usize },
    #[error("script line {line}: {source}")]
    Parse {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("script must start with a session_start line")]
    MissingHeader,
    #[error("step {index}: {source}")]
    Engine {
        index: usize,
        #[source]
        source: SessionError,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Action {
    UserSay {
        text: String,
        annotations: Vec<Annotation>,
        /// Speech length; the utterance starts this long before `at_ms`.
        duration_ms: Option<u64>,
    },
    EndOfTurn,
    OperatorToggle,
    OperatorSay {
        text: String,
        expression: Option<Expression>,
        speech_ms: Option<u64>,
    },
    OperatorExpression(Expression),
    /// Forces a silence tick at this instant.
    Wait,
}

impl Action {
    pub(crate) fn to_input(&self, at_ms: u64) -> Option<Input> {
        Some(match self {
            Action::UserSay {
                text,
                annotations,
                duration_ms,
            } => Input::UserSay {
                text: text.clone(),
                annotations: annotations.clone(),
                start_ms: duration_ms.map(|d| at_ms.saturating_sub(d)),
            },
            Action::EndOfTurn => Input::EndOfTurn,
            Action::OperatorToggle => Input::OperatorToggle,
            Action::OperatorSay {
                text,
                expression,
                speech_ms,
            } => Input::OperatorSay {
                text: text.clone(),
                expression: *expression,
                speech_ms: *speech_ms,
            },
            Action::OperatorExpression(e) => Input::OperatorExpression(*e),
            Action::Wait => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScriptStep {
    pub at_ms: u64,
    pub action: Action,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Script {
    pub session_id: String,
    pub steps: Vec<ScriptStep>,
    /// Session end; defaults to the last step.
    pub end_ms: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct HeaderPayload {
    session_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct UtterancePayload {
    text: String,
    #[serde(default)]
    annotations: Vec<Annotation>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    duration_ms: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct OperatorSpeechPayload {
    text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    expression: Option<Expression>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    speech_ms: Option<u64>,
}

/// On-disk form: the same `t_ms`/`kind`/`payload` shape as log lines.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload", rename_all = "snake_case")]
enum LineBody {
    SessionStart(HeaderPayload),
    Utterance(UtterancePayload),
    EndOfTurn(Empty),
    ControlChange(Empty),
    OperatorSpeech(OperatorSpeechPayload),
    Expression(ExpressionPayload),
    Wait(Empty),
    SessionEnd(Empty),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Line {
    t_ms: u64,
    #[serde(flatten)]
    body: LineBody,
}

impl Script {
    pub fn new(session_id: impl Into<String>) -> Self {
        Self {
            session_id: session_id.into(),
            steps: Vec::new(),
            end_ms: None,
        }
    }

    pub fn end_time_ms(&self) -> u64 {
        self.end_ms
            .unwrap_or_else(|| self.steps.last().map_or(0, |s| s.at_ms))
    }

    pub fn step(mut self, at_ms: u64, action: Action) -> Self {
        self.steps.push(ScriptStep { at_ms, action });
        self
    }

    pub fn user(self, at_ms: u64, text: &str) -> Self {
        self.user_annotated(at_ms, text, Vec::new())
    }

    pub fn user_annotated(self, at_ms: u64, text: &str, annotations: Vec<Annotation>) -> Self {
        self.step(
            at_ms,
            Action::UserSay {
                text: text.into(),
                annotations,
                duration_ms: None,
            },
        )
    }

    pub fn end_turn(self, at_ms: u64) -> Self {
        self.step(at_ms, Action::EndOfTurn)
    }

    pub fn toggle(self, at_ms: u64) -> Self {
        self.step(at_ms, Action::OperatorToggle)
    }

    pub fn operator_say(self, at_ms: u64, text: &str, speech_ms: Option<u64>) -> Self {
        self.step(
            at_ms,
            Action::OperatorSay {
                text: text.into(),
                expression: None,
                speech_ms,
            },
        )
    }

    pub fn wait(self, at_ms: u64) -> Self {
        self.step(at_ms, Action::Wait)
    }

    pub fn ending_at(mut self, end_ms: u64) -> Self {
        self.end_ms = Some(end_ms);
        self
    }

    /// Times never decrease, nothing follows the end, and operator
    /// speech or expressions only occur between an odd and the next even
    /// toggle.
    pub fn validate(&self) -> Result<(), ScriptError> {
        let mut prev = 0;
        let mut operator = false;
        let end = self.end_ms.unwrap_or(u64::MAX);
        for (index, step) in self.steps.iter().enumerate() {
            if step.at_ms < prev {
                return Err(ScriptError::NonMonotonic { index });
            }
            if step.at_ms > end {
                return Err(ScriptError::AfterEnd { index });
            }
            prev = step.at_ms;
            match step.action {
                Action::OperatorToggle => operator = !operator,
                Action::OperatorSay { .. } | Action::OperatorExpression(_) if !operator => {
                    return Err(ScriptError::IllegalOperatorAction { index })
                }
                _ => {}
            }
        }
        Ok(())
    }

    pub fn to_jsonl(&self) -> String {
        let mut lines = vec![Line {
            t_ms: 0,
            body: LineBody::SessionStart(HeaderPayload {
                session_id: self.session_id.clone(),
            }),
        }];
        for s in &self.steps {
            let body = match &s.action {
                Action::UserSay {
                    text,
                    annotations,
                    duration_ms,
                } => LineBody::Utterance(UtterancePayload {
                    text: text.clone(),
                    annotations: annotations.clone(),
                    duration_ms: *duration_ms,
                }),
                Action::EndOfTurn => LineBody::EndOfTurn(Empty {}),
                Action::OperatorToggle => LineBody::ControlChange(Empty {}),
                Action::OperatorSay {
                    text,
                    expression,
                    speech_ms,
                } => LineBody::OperatorSpeech(OperatorSpeechPayload {
                    text: text.clone(),
                    expression: *expression,
                    speech_ms: *speech_ms,
                }),
                Action::OperatorExpression(expression) => {
                    LineBody::Expression(ExpressionPayload {
                        expression: *expression,
                    })
                }
                Action::Wait => LineBody::Wait(Empty {}),
            };
            lines.push(Line { t_ms: s.at_ms, body });
        }
        if let Some(end) = self.end_ms {
            lines.push(Line {
                t_ms: end,
                body: LineBody::SessionEnd(Empty {}),
            });
        }
        lines
            .iter()
            .map(|l| serde_json::to_string(l).expect("script line serializes") + "\n")
            .collect()
    }

    pub fn from_jsonl(text: &str) -> Result<Self, ScriptError> {
        Self::read_jsonl(text.as_bytes())
    }

    pub fn read_jsonl(r: impl BufRead) -> Result<Self, ScriptError> {
        let mut script: Option<Script> = None;
        for (i, line) in r.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let parsed: Line = serde_json::from_str(&line)
                .map_err(|source| ScriptError::Parse { line: i + 1, source })?;
            let t = parsed.t_ms;
            let Some(s) = script.as_mut() else {
                match parsed.body {
                    LineBody::SessionStart(h) => {
                        script = Some(Script::new(h.session_id));
                        continue;
                    }
                    _ => return Err(ScriptError::MissingHeader),
                }
            };
            let body = parsed.body;
            let action = match body {
                LineBody::SessionStart(_) => return Err(ScriptError::MissingHeader),
                LineBody::SessionEnd(_) => {
                    s.end_ms = Some(t);
                    continue;
                }
                LineBody::Utterance(u) => Action::UserSay {
                    text: u.text,
                    annotations: u.annotations,
                    duration_ms: u.duration_ms,
                },
                LineBody::EndOfTurn(_) => Action::EndOfTurn,
                LineBody::ControlChange(_) => Action::OperatorToggle,
                LineBody::OperatorSpeech(o) => Action::OperatorSay {
                    text: o.text,
                    expression: o.expression,
                    speech_ms: o.speech_ms,
                },
                LineBody::Expression(e) => Action::OperatorExpression(e.expression),
                LineBody::Wait(_) => Action::Wait,
            };
            s.steps.push(ScriptStep { at_ms: t, action });
        }
        let script = script.ok_or(ScriptError::MissingHeader)?;
        script.validate()?;
        Ok(script)
    }

    pub fn load(path: &Path) -> Result<Self, ScriptError> {
        let f = std::fs::File::open(path)?;
        Self::read_jsonl(std::io::BufReader::new(f))
    }
}
