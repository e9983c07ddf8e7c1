//! JSON wire protocol and the transport-free session host.
//!
//! Every frame is one [`WireMessage`]:
//!
//! ```json
//! {"session_id":"s1","t_ms":4250,"type":"takeover_prompt",
//!  "body":{"reasons":[{"code":"long_silence","text":"..."}]}}
//! ```
//!
//! [`SessionHost`] turns inbound messages and clock ticks into engine
//! inputs and returns the outbound fan-out. It owns no sockets and reads
//! no clock; the caller passes the current session time. Client `t_ms`
//! values are informational only.

use serde::{Deserialize, Serialize};

use crate::config::Config;
use crate::control::{
    ControlCause, ControlError, ControlMode, Empty, EventBody, Expression,
    ExpressionPayload, SessionEvent,
};
use crate::detector::TakeoverCondition;
use crate::dialogue::{AgentResponse, Annotation, ResponseKind};
use crate::session::{Input, Session, SessionError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireMessage {
    pub session_id: String,
    pub t_ms: u64,
    #[serde(flatten)]
    pub body: WireBody,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", content = "body", rename_all = "snake_case")]
pub enum WireBody {
    UserUtterance(UserUtteranceBody),
    EndOfTurn(Empty),
    AgentResponse(ResponseBody),
    Backchannel(ResponseBody),
    SilenceUpdate(SilenceUpdateBody),
    TakeoverPrompt(TakeoverPromptBody),
    ControlChange(ControlChangeBody),
    OperatorUtterance(OperatorUtteranceBody),
    Expression(ExpressionPayload),
    SessionStart(SessionStartBody),
    SessionEnd(Empty),
    Error(ErrorBody),
}

impl WireBody {
    pub fn type_name(&self) -> &'static str {
        match self {
            WireBody::UserUtterance(_) => "user_utterance",
            WireBody::EndOfTurn(_) => "end_of_turn",
            WireBody::AgentResponse(_) => "agent_response",
            WireBody::Backchannel(_) => "backchannel",
            WireBody::SilenceUpdate(_) => "silence_update",
            WireBody::TakeoverPrompt(_) => "takeover_prompt",
            WireBody::ControlChange(_) => "control_change",
            WireBody::OperatorUtterance(_) => "operator_utterance",
            WireBody::Expression(_) => "expression",
            WireBody::SessionStart(_) => "session_start",
            WireBody::SessionEnd(_) => "session_end",
            WireBody::Error(_) => "error",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UserUtteranceBody {
    pub text: String,
    #[serde(default)]
    pub annotations: Vec<Annotation>,
    /// Speech onset in session time; defaults to arrival time.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub start_ms: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResponseBody {
    pub kind: ResponseKind,
    pub text: String,
    pub has_sentiment: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expression: Option<Expression>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub speech_ms: Option<u64>,
}

impl From<&AgentResponse> for ResponseBody {
    fn from(r: &AgentResponse) -> Self {
        Self {
            kind: r.kind,
            text: r.text.clone(),
            has_sentiment: r.has_sentiment,
            expression: r.expression,
            speech_ms: r.speech_ms,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SilenceUpdateBody {
    pub silence_ms: u64,
    pub threshold_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReasonBody {
    pub code: TakeoverCondition,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TakeoverPromptBody {
    pub reasons: Vec<ReasonBody>,
}

/// Sent by the operator as `{}` to toggle the microphone. A `target`, if
/// given, must be the mode the toggle leads to. The server always fills
/// in both fields.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControlChangeBody {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<ControlMode>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cause: Option<ControlCause>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OperatorUtteranceBody {
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expression: Option<Expression>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub speech_ms: Option<u64>,
    /// Reserved for recorded operator audio; ignored.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub audio_ref: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SessionStartBody {
    pub mode: ControlMode,
    pub threshold_ms: u64,
    pub tick_period_ms: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCode {
    InvalidMessage,
    NotInControl,
    NoSuchSession,
    Unauthorized,
    MalformedInput,
    SessionClosed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ErrorBody {
    pub code: ErrorCode,
    pub message: String,
}

impl WireMessage {
    pub fn new(session_id: impl Into<String>, t_ms: u64, body: WireBody) -> Self {
        Self {
            session_id: session_id.into(),
            t_ms,
            body,
        }
    }

    pub fn error(session_id: &str, t_ms: u64, code: ErrorCode, message: impl Into<String>) -> Self {
        Self::new(
            session_id,
            t_ms,
            WireBody::Error(ErrorBody {
                code,
                message: message.into(),
            }),
        )
    }

    pub fn parse(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn to_text(&self) -> String {
        serde_json::to_string(self).expect("wire message serializes")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ClientRole {
    User,
    Operator,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Recipient {
    User,
    Operator,
    Both,
}

impl Recipient {
    pub fn includes(self, role: ClientRole) -> bool {
        matches!(
            (self, role),
            (Recipient::Both, _)
                | (Recipient::User, ClientRole::User)
                | (Recipient::Operator, ClientRole::Operator)
        )
    }
}

impl From<ClientRole> for Recipient {
    fn from(r: ClientRole) -> Self {
        match r {
            ClientRole::User => Recipient::User,
            ClientRole::Operator => Recipient::Operator,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Outbound {
    pub to: Recipient,
    pub message: WireMessage,
}

fn error_code(e: &SessionError) -> ErrorCode {
    match e {
        SessionError::Control(ControlError::NotInControl) => ErrorCode::NotInControl,
        SessionError::Control(ControlError::Unauthorized { .. }) => ErrorCode::Unauthorized,
        SessionError::Control(_) | SessionError::Dialogue(_) => ErrorCode::MalformedInput,
        SessionError::Ended | SessionError::NotStarted => ErrorCode::SessionClosed,
        SessionError::TimeRegression { .. } | SessionError::Detector(_) => {
            ErrorCode::InvalidMessage
        }
    }
}

/// One live session behind the protocol.
#[derive(Debug)]
pub struct SessionHost {
    session: Session,
    drained: usize,
    operator_present: bool,
    grace_deadline: Option<u64>,
}

impl SessionHost {
    /// Starts the session at `start_ms`.
    pub fn new(session_id: impl Into<String>, config: Config, start_ms: u64) -> Self {
        let mut session = Session::new(session_id, config);
        session.start(start_ms).expect("fresh session starts");
        Self {
            session,
            drained: 0,
            operator_present: false,
            grace_deadline: None,
        }
    }

    pub fn session_id(&self) -> &str {
        &self.session.state().session_id
    }

    pub fn session(&self) -> &Session {
        &self.session
    }

    pub fn is_ended(&self) -> bool {
        self.session.state().ended
    }

    /// Log events appended since the previous call.
    pub fn drain_events(&mut self) -> Vec<SessionEvent> {
        let events = &self.session.log().events;
        let new = events[self.drained..].to_vec();
        self.drained = events.len();
        new
    }

    fn msg(&self, t_ms: u64, body: WireBody) -> WireMessage {
        WireMessage::new(self.session_id(), t_ms, body)
    }

    fn hello(&self) -> WireBody {
        WireBody::SessionStart(SessionStartBody {
            mode: self.session.mode(),
            threshold_ms: self.session.config().detector.silence_takeover_ms,
            tick_period_ms: self.session.config().server.tick_period_ms,
        })
    }

    /// Greeting for a freshly connected client.
    pub fn connect(&mut self, role: ClientRole, now_ms: u64) -> Vec<Outbound> {
        if role == ClientRole::Operator {
            self.operator_present = true;
            self.grace_deadline = None;
        }
        vec![Outbound {
            to: role.into(),
            message: self.msg(now_ms, self.hello()),
        }]
    }

    /// Starts the grace period if the operator leaves while in control.
    pub fn disconnect(&mut self, role: ClientRole, now_ms: u64) {
        if role == ClientRole::Operator {
            self.operator_present = false;
            if self.session.mode() == ControlMode::OperatorControl {
                self.grace_deadline =
                    Some(now_ms + self.session.config().server.operator_grace_ms);
            }
        }
    }

    fn reject(&self, to: ClientRole, now_ms: u64, code: ErrorCode, message: String) -> Vec<Outbound> {
        vec![Outbound {
            to: to.into(),
            message: WireMessage::error(self.session_id(), now_ms, code, message),
        }]
    }

    /// Parses and handles one text frame.
    pub fn handle_text(&mut self, from: ClientRole, text: &str, now_ms: u64) -> Vec<Outbound> {
        match WireMessage::parse(text) {
            Ok(msg) => self.handle_inbound(from, &msg, now_ms),
            Err(e) => self.reject(from, now_ms, ErrorCode::InvalidMessage, e.to_string()),
        }
    }

    pub fn handle_inbound(
        &mut self,
        from: ClientRole,
        msg: &WireMessage,
        now_ms: u64,
    ) -> Vec<Outbound> {
        if msg.session_id != self.session_id() {
            return self.reject(
                from,
                now_ms,
                ErrorCode::NoSuchSession,
                format!("this connection serves session {}", self.session_id()),
            );
        }
        if self.is_ended() {
            return self.reject(from, now_ms, ErrorCode::SessionClosed, "session has ended".into());
        }
        let input = match (from, &msg.body) {
            (ClientRole::User, WireBody::UserUtterance(u)) => Input::UserSay {
                text: u.text.clone(),
                annotations: u.annotations.clone(),
                start_ms: u.start_ms.map(|s| s.min(now_ms)),
            },
            (ClientRole::User, WireBody::EndOfTurn(_)) => Input::EndOfTurn,
            (ClientRole::Operator, WireBody::ControlChange(c)) => {
                let next = self.session.mode().toggled();
                if c.target.is_some_and(|t| t != next) {
                    return self.reject(
                        from,
                        now_ms,
                        ErrorCode::InvalidMessage,
                        format!("already in {:?}", self.session.mode()),
                    );
                }
                Input::OperatorToggle
            }
            (ClientRole::Operator, WireBody::OperatorUtterance(o)) => Input::OperatorSay {
                text: o.text.clone(),
                expression: o.expression,
                speech_ms: o.speech_ms,
            },
            (ClientRole::Operator, WireBody::Expression(e)) => Input::OperatorExpression(e.expression),
            (_, WireBody::SessionEnd(_)) => Input::End,
            (_, body) => {
                return self.reject(
                    from,
                    now_ms,
                    ErrorCode::Unauthorized,
                    format!("{:?} client may not send {}", from, body.type_name()),
                )
            }
        };
        match self.session.handle(now_ms, input) {
            Ok(events) => {
                if self.session.mode() == ControlMode::AgentControl {
                    self.grace_deadline = None;
                }
                self.fan_out(&events)
            }
            Err(e) => self.reject(from, now_ms, error_code(&e), e.to_string()),
        }
    }

    /// Clock tick: runs the time-based rules and reports silence to the
    /// operator. Also used for deadline wake-ups between ticks.
    pub fn tick(&mut self, now_ms: u64) -> Vec<Outbound> {
        if self.is_ended() || now_ms < self.session.state().now_ms {
            return Vec::new();
        }
        let mut out = Vec::new();
        if self.grace_deadline.is_some_and(|d| d <= now_ms) {
            self.grace_deadline = None;
            if let Ok(events) = self.session.handle(now_ms, Input::OperatorTimeout) {
                out.extend(self.fan_out(&events));
            }
        }
        if let Ok(events) = self.session.handle(now_ms, Input::Tick) {
            out.extend(self.fan_out(&events));
        }
        out.push(Outbound {
            to: Recipient::Operator,
            message: self.msg(
                now_ms,
                WireBody::SilenceUpdate(SilenceUpdateBody {
                    silence_ms: self.session.silence_ms(now_ms),
                    threshold_ms: self.session.config().detector.silence_takeover_ms,
                }),
            ),
        });
        out
    }

    /// Ends the session (server shutdown or idle close).
    pub fn close(&mut self, now_ms: u64) -> Vec<Outbound> {
        if self.is_ended() {
            return Vec::new();
        }
        let now = now_ms.max(self.session.state().now_ms);
        match self.session.handle(now, Input::End) {
            Ok(events) => self.fan_out(&events),
            Err(_) => Vec::new(),
        }
    }

    /// Earliest instant something time-based could happen.
    pub fn next_deadline(&self) -> Option<u64> {
        match (self.session.next_deadline(), self.grace_deadline) {
            (Some(a), Some(b)) => Some(a.min(b)),
            (a, b) => a.or(b),
        }
    }

    pub fn operator_present(&self) -> bool {
        self.operator_present
    }

    fn fan_out(&self, events: &[SessionEvent]) -> Vec<Outbound> {
        events
            .iter()
            .filter_map(|e| outbound_for(e, self.session_id(), self.session.config()))
            .collect()
    }
}

/// How a logged event is announced to clients, if at all.
pub fn outbound_for(e: &SessionEvent, session_id: &str, config: &Config) -> Option<Outbound> {
    let (to, body) = match &e.body {
        EventBody::SessionStart(_) => (
            Recipient::Both,
            WireBody::SessionStart(SessionStartBody {
                mode: ControlMode::AgentControl,
                threshold_ms: config.detector.silence_takeover_ms,
                tick_period_ms: config.server.tick_period_ms,
            }),
        ),
        EventBody::Utterance(u) => (
            Recipient::Operator,
            WireBody::UserUtterance(UserUtteranceBody {
                text: u.text.clone(),
                annotations: u.annotations.clone(),
                start_ms: Some(u.session_time_ms),
            }),
        ),
        EventBody::EndOfTurn(_) => (Recipient::Operator, WireBody::EndOfTurn(Empty {})),
        EventBody::Response(r) => (Recipient::Both, WireBody::AgentResponse(r.into())),
        EventBody::Backchannel(r) => (Recipient::Both, WireBody::Backchannel(r.into())),
        EventBody::SilenceTick(_) => return None,
        EventBody::TakeoverPrompt(p) => (
            Recipient::Operator,
            WireBody::TakeoverPrompt(TakeoverPromptBody {
                reasons: p
                    .reasons
                    .iter()
                    .map(|&code| ReasonBody {
                        code,
                        text: config.server.reason_text.get(code).to_string(),
                    })
                    .collect(),
            }),
        ),
        EventBody::ControlChange(c) => (
            Recipient::Both,
            WireBody::ControlChange(ControlChangeBody {
                target: Some(c.target),
                cause: Some(c.cause),
            }),
        ),
        EventBody::Expression(x) => (Recipient::Both, WireBody::Expression(*x)),
        EventBody::SessionEnd(_) => (Recipient::Both, WireBody::SessionEnd(Empty {})),
    };
    Some(Outbound {
        to,
        message: WireMessage::new(session_id, e.t_ms, body),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ReasonText;
    use crate::dialogue::Polarity;

    fn host() -> SessionHost {
        SessionHost::new("s1", Config::default(), 0)
    }

    fn send(h: &mut SessionHost, from: ClientRole, t: u64, body: WireBody) -> Vec<Outbound> {
        h.handle_inbound(from, &WireMessage::new("s1", t, body), t)
    }

    fn say(text: &str, annotations: Vec<Annotation>) -> WireBody {
        WireBody::UserUtterance(UserUtteranceBody {
            text: text.into(),
            annotations,
            start_ms: None,
        })
    }

    fn types(out: &[Outbound]) -> Vec<(&'static str, Recipient)> {
        out.iter().map(|o| (o.message.body.type_name(), o.to)).collect()
    }

    fn error_of(out: &[Outbound]) -> ErrorCode {
        match out {
            [Outbound {
                message:
                    WireMessage {
                        body: WireBody::Error(e),
                        ..
                    },
                ..
            }] => e.code,
            other => panic!("expected one error, got {other:?}"),
        }
    }

    #[test]
    fn user_turn_response_goes_to_both() {
        let mut h = host();
        let sentiment = Annotation::Sentiment {
            value: Polarity::Positive,
            confidence: 0.9,
        };
        let out = send(&mut h, ClientRole::User, 1000, say("I had a really fun trip", vec![sentiment]));
        assert_eq!(types(&out), vec![("user_utterance", Recipient::Operator)]);
        let out = send(&mut h, ClientRole::User, 1200, WireBody::EndOfTurn(Empty {}));
        assert_eq!(
            types(&out),
            vec![("end_of_turn", Recipient::Operator), ("agent_response", Recipient::Both)]
        );
        let WireBody::AgentResponse(r) = &out[1].message.body else {
            unreachable!()
        };
        assert_eq!(r.kind, ResponseKind::Assessment);
    }

    #[test]
    fn long_silence_prompt_reaches_operator_only() {
        let mut h = host();
        let mut all = Vec::new();
        for t in (250..=4250).step_by(250) {
            all.extend(h.tick(t));
        }
        assert!(all.iter().all(|o| o.to == Recipient::Operator));
        let prompt = all
            .iter()
            .find_map(|o| match &o.message.body {
                WireBody::TakeoverPrompt(p) => Some((o.message.t_ms, p.clone())),
                _ => None,
            })
            .unwrap();
        assert_eq!(prompt.0, 4250);
        assert_eq!(prompt.1.reasons.len(), 1);
        assert_eq!(prompt.1.reasons[0].code, TakeoverCondition::LongSilence);
        assert_eq!(prompt.1.reasons[0].text, ReasonText::default().long_silence);
        let last = all.last().unwrap();
        assert_eq!(
            last.message.body,
            WireBody::SilenceUpdate(SilenceUpdateBody {
                silence_ms: 4250,
                threshold_ms: 4000
            })
        );
    }

    #[test]
    fn operator_speech_after_takeover() {
        let mut h = host();
        let out = send(&mut h, ClientRole::Operator, 500, WireBody::ControlChange(ControlChangeBody::default()));
        assert_eq!(types(&out), vec![("control_change", Recipient::Both)]);
        let out = send(
            &mut h,
            ClientRole::Operator,
            900,
            WireBody::OperatorUtterance(OperatorUtteranceBody {
                text: "Tell me more about the beach".into(),
                expression: Some(Expression::Happy),
                speech_ms: None,
                audio_ref: None,
            }),
        );
        assert_eq!(
            types(&out),
            vec![("agent_response", Recipient::Both), ("expression", Recipient::Both)]
        );
        let WireBody::AgentResponse(r) = &out[0].message.body else {
            unreachable!()
        };
        assert_eq!(r.kind, ResponseKind::OperatorSpeech);
        assert_eq!(r.expression, Some(Expression::Happy));
        assert!(out.iter().all(|o| o.message.t_ms == 900));
    }

    #[test]
    fn operator_utterance_needs_control() {
        let mut h = host();
        let out = send(
            &mut h,
            ClientRole::Operator,
            10,
            WireBody::OperatorUtterance(OperatorUtteranceBody {
                text: "hello".into(),
                expression: None,
                speech_ms: None,
                audio_ref: None,
            }),
        );
        assert_eq!(error_of(&out), ErrorCode::NotInControl);
        assert_eq!(out[0].to, Recipient::Operator);
        let out = send(&mut h, ClientRole::Operator, 10, WireBody::Expression(ExpressionPayload { expression: Expression::Sad }));
        assert_eq!(error_of(&out), ErrorCode::NotInControl);
    }

    #[test]
    fn role_and_schema_errors_keep_the_session() {
        let mut h = host();
        let out = send(&mut h, ClientRole::User, 5, WireBody::ControlChange(ControlChangeBody::default()));
        assert_eq!(error_of(&out), ErrorCode::Unauthorized);
        let out = h.handle_text(ClientRole::User, r#"{"type":"user_utterance"}"#, 6);
        assert_eq!(error_of(&out), ErrorCode::InvalidMessage);
        let out = h.handle_inbound(
            ClientRole::User,
            &WireMessage::new("other", 7, WireBody::EndOfTurn(Empty {})),
            7,
        );
        assert_eq!(error_of(&out), ErrorCode::NoSuchSession);
        let out = send(&mut h, ClientRole::User, 8, say("   ", vec![]));
        assert_eq!(error_of(&out), ErrorCode::MalformedInput);
        let out = send(
            &mut h,
            ClientRole::Operator,
            9,
            WireBody::ControlChange(ControlChangeBody {
                target: Some(ControlMode::AgentControl),
                cause: None,
            }),
        );
        assert_eq!(error_of(&out), ErrorCode::InvalidMessage);
        assert_eq!(h.session().mode(), ControlMode::AgentControl);
        send(&mut h, ClientRole::User, 10, WireBody::SessionEnd(Empty {}));
        let out = send(&mut h, ClientRole::User, 11, WireBody::EndOfTurn(Empty {}));
        assert_eq!(error_of(&out), ErrorCode::SessionClosed);
    }

    #[test]
    fn dropped_operator_hands_back_after_grace() {
        let mut h = host();
        h.connect(ClientRole::Operator, 0);
        send(&mut h, ClientRole::Operator, 100, WireBody::ControlChange(ControlChangeBody::default()));
        h.disconnect(ClientRole::Operator, 1000);
        assert_eq!(h.next_deadline(), Some(6000));
        assert!(h.tick(5750).iter().all(|o| o.message.body.type_name() == "silence_update"));
        let out = h.tick(6000);
        assert_eq!(
            out[0].message.body,
            WireBody::ControlChange(ControlChangeBody {
                target: Some(ControlMode::AgentControl),
                cause: Some(ControlCause::OperatorTimeout),
            })
        );
        assert_eq!(h.session().mode(), ControlMode::AgentControl);
    }

    #[test]
    fn reconnect_within_grace_keeps_control() {
        let mut h = host();
        send(&mut h, ClientRole::Operator, 100, WireBody::ControlChange(ControlChangeBody::default()));
        h.disconnect(ClientRole::Operator, 1000);
        let hello = h.connect(ClientRole::Operator, 2000);
        assert_eq!(
            hello[0].message.body,
            WireBody::SessionStart(SessionStartBody {
                mode: ControlMode::OperatorControl,
                threshold_ms: 4000,
                tick_period_ms: 250,
            })
        );
        h.tick(10_000);
        assert_eq!(h.session().mode(), ControlMode::OperatorControl);
    }

    #[test]
    fn wire_shape() {
        let m = WireMessage::new(
            "s1",
            4250,
            WireBody::SilenceUpdate(SilenceUpdateBody {
                silence_ms: 2000,
                threshold_ms: 4000,
            }),
        );
        assert_eq!(
            m.to_text(),
            r#"{"session_id":"s1","t_ms":4250,"type":"silence_update","body":{"silence_ms":2000,"threshold_ms":4000}}"#
        );
        let toggle = r#"{"type":"control_change","session_id":"s1","t_ms":0,"body":{}}"#;
        assert_eq!(
            WireMessage::parse(toggle).unwrap().body,
            WireBody::ControlChange(ControlChangeBody::default())
        );
    }

    #[test]
    fn drained_events_cover_the_log_once() {
        let mut h = host();
        h.tick(250);
        let a = h.drain_events();
        h.tick(500);
        let b = h.drain_events();
        assert_eq!(a.len() + b.len(), h.session().log().events.len());
        assert_eq!(a[0].seq, 1);
        assert_eq!(b[0].seq, a.len() as u64 + 1);
    }
}
