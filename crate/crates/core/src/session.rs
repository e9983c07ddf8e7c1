//! Single-writer session engine.
//!
//! A [`Session`] owns the control mode, the listener state, the detector
//! and the append-only log. Every input is stamped with the session clock
//! by the caller; the engine never reads time itself. Each input appends
//! the event that records it, then any events it causes (responses,
//! backchannels, prompts).

use std::sync::Arc;

use thiserror::Error;

use crate::config::Config;
use crate::control::{
    apply_control_event, emit_operator_speech, Actor, ControlCause, ControlChangePayload,
    ControlError, ControlMode, Empty, EventBody, Expression, ExpressionPayload, LogError,
    PromptPayload, SessionEvent, SessionLog, SessionStartPayload,
};
use crate::detector::{DetectorError, DetectorState};
use crate::dialogue::{
    normalize, select_response, Annotation, BackchannelPolicy, DialogueError, DialogueState,
    PauseSentimentRule, ResponseKind, UserUtterance,
};

#[derive(Debug, Error)]
pub enum SessionError {
    #[error("input at {at_ms} ms precedes session time {now_ms} ms")]
    TimeRegression { at_ms: u64, now_ms: u64 },
    #[error(transparent)]
    Control(#[from] ControlError),
    #[error(transparent)]
    Dialogue(#[from] DialogueError),
    #[error(transparent)]
    Detector(#[from] DetectorError),
    #[error("session already ended")]
    Ended,
    #[error("session not started")]
    NotStarted,
}

/// Something that happened to the session from the outside.
#[derive(Debug, Clone, PartialEq)]
pub enum Input {
    UserSay {
        text: String,
        annotations: Vec<Annotation>,
        /// Speech onset; defaults to the input time.
        start_ms: Option<u64>,
    },
    EndOfTurn,
    OperatorToggle,
    OperatorSay {
        text: String,
        expression: Option<Expression>,
        speech_ms: Option<u64>,
    },
    OperatorExpression(Expression),
    /// Operator left and did not come back in time.
    OperatorTimeout,
    Tick,
    End,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SessionState {
    pub session_id: String,
    pub mode: ControlMode,
    pub now_ms: u64,
    pub started: bool,
    pub ended: bool,
    pub dialogue: DialogueState,
    pub detector: DetectorState,
    /// Fragments of the user turn in progress.
    pub pending_turn: Vec<UserUtterance>,
}

impl SessionState {
    pub fn initial(session_id: &str, config: &Config) -> Self {
        Self {
            session_id: session_id.to_string(),
            mode: ControlMode::AgentControl,
            now_ms: 0,
            started: false,
            ended: false,
            dialogue: DialogueState::new(&config.dialogue, 0),
            detector: DetectorState::new(0),
            pending_turn: Vec::new(),
        }
    }
}

pub struct Session {
    config: Config,
    state: SessionState,
    log: SessionLog,
    policy: Arc<dyn BackchannelPolicy>,
}

impl std::fmt::Debug for Session {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Session")
            .field("state", &self.state)
            .field("events", &self.log.events.len())
            .finish()
    }
}

fn merge_turn(fragments: &[UserUtterance]) -> UserUtterance {
    let text = fragments
        .iter()
        .map(|f| normalize(&f.text))
        .collect::<Vec<_>>()
        .join(" ");
    UserUtterance {
        session_time_ms: fragments[0].session_time_ms,
        end_time_ms: fragments[fragments.len() - 1].end_time_ms,
        text,
        annotations: fragments
            .iter()
            .flat_map(|f| f.annotations.iter().cloned())
            .collect(),
    }
}

impl Session {
    pub fn new(session_id: impl Into<String>, config: Config) -> Self {
        Self::with_policy(session_id, config, Arc::new(PauseSentimentRule))
    }

    pub fn with_policy(
        session_id: impl Into<String>,
        config: Config,
        policy: Arc<dyn BackchannelPolicy>,
    ) -> Self {
        let session_id = session_id.into();
        Self {
            state: SessionState::initial(&session_id, &config),
            log: SessionLog::new(session_id, config.clone()),
            config,
            policy,
        }
    }

    pub fn config(&self) -> &Config {
        &self.config
    }

    pub fn state(&self) -> &SessionState {
        &self.state
    }

    pub fn log(&self) -> &SessionLog {
        &self.log
    }

    pub fn into_log(self) -> SessionLog {
        self.log
    }

    pub fn mode(&self) -> ControlMode {
        self.state.mode
    }

    /// Logs the session start; must precede every other input.
    pub fn start(&mut self, at_ms: u64) -> Result<Vec<SessionEvent>, SessionError> {
        if self.state.started {
            return Ok(Vec::new());
        }
        self.state.started = true;
        self.state.now_ms = at_ms;
        self.state.dialogue = DialogueState::new(&self.config.dialogue, at_ms);
        self.state.detector = DetectorState::new(at_ms);
        let mark = self.log.events.len();
        self.push(
            at_ms,
            Actor::System,
            EventBody::SessionStart(SessionStartPayload {
                session_id: self.state.session_id.clone(),
                config: Box::new(self.config.clone()),
            }),
        )?;
        Ok(self.log.events[mark..].to_vec())
    }

    /// Applies one input at `at_ms` and returns the events it appended.
    pub fn handle(&mut self, at_ms: u64, input: Input) -> Result<Vec<SessionEvent>, SessionError> {
        if !self.state.started {
            return Err(SessionError::NotStarted);
        }
        if self.state.ended {
            return Err(SessionError::Ended);
        }
        if at_ms < self.state.now_ms {
            return Err(SessionError::TimeRegression {
                at_ms,
                now_ms: self.state.now_ms,
            });
        }
        let mark = self.log.events.len();
        self.state.now_ms = at_ms;
        let t = at_ms;
        let agent = self.state.mode == ControlMode::AgentControl;

        match input {
            Input::UserSay {
                text,
                annotations,
                start_ms,
            } => {
                let u = UserUtterance {
                    session_time_ms: start_ms.unwrap_or(t),
                    end_time_ms: t,
                    text,
                    annotations,
                };
                u.validate()?;
                self.push(t, Actor::User, EventBody::Utterance(u.clone()))?;
                if agent {
                    self.state.dialogue.note_user_speech(&u);
                } else {
                    self.state.dialogue.note_output(t);
                }
                self.state.pending_turn.push(u);
            }
            Input::EndOfTurn => {
                self.push(t, Actor::User, EventBody::EndOfTurn(Empty {}))?;
                self.state.dialogue.end_turn();
                let fragments = std::mem::take(&mut self.state.pending_turn);
                if agent && !fragments.is_empty() {
                    let turn = merge_turn(&fragments);
                    let mut r =
                        select_response(&turn, &self.config.dialogue, &mut self.state.dialogue.rng)?;
                    r.session_time_ms = t;
                    self.state.dialogue.note_output(t);
                    self.push(t, Actor::Agent, EventBody::Response(r))?;
                }
            }
            Input::OperatorToggle => {
                let target = self.state.mode.toggled();
                self.change_control(t, Actor::Operator, target, ControlCause::Toggle)?;
            }
            Input::OperatorTimeout => {
                if !agent {
                    self.change_control(
                        t,
                        Actor::System,
                        ControlMode::AgentControl,
                        ControlCause::OperatorTimeout,
                    )?;
                }
            }
            Input::OperatorSay {
                text,
                expression,
                speech_ms,
            } => {
                let speech_ms = speech_ms.unwrap_or_else(|| {
                    normalize(&text).chars().count() as u64 * self.config.server.speech_ms_per_char
                });
                let r = emit_operator_speech(&text, expression, self.state.mode, t, speech_ms)?;
                self.state.dialogue.note_output(t);
                self.push(t, Actor::Operator, EventBody::Response(r))?;
                if let Some(expression) = expression {
                    self.push(
                        t,
                        Actor::Operator,
                        EventBody::Expression(ExpressionPayload { expression }),
                    )?;
                }
            }
            Input::OperatorExpression(expression) => {
                if agent {
                    return Err(ControlError::NotInControl.into());
                }
                self.push(
                    t,
                    Actor::Operator,
                    EventBody::Expression(ExpressionPayload { expression }),
                )?;
            }
            Input::Tick => {
                self.push(t, Actor::System, EventBody::SilenceTick(Empty {}))?;
                if agent {
                    let dialogue = &self.config.dialogue;
                    if let Some(r) =
                        self.state
                            .dialogue
                            .poll_backchannel(t, self.policy.as_ref(), dialogue)
                    {
                        self.state.dialogue.note_output(t);
                        self.push(t, Actor::Agent, EventBody::Backchannel(r))?;
                    }
                    let dialogue = &self.config.dialogue;
                    if let Some(r) = self.state.dialogue.poll_silence_prompt(t, dialogue) {
                        self.state.dialogue.note_output(t);
                        self.push(t, Actor::Agent, EventBody::Response(r))?;
                    }
                }
            }
            Input::End => {
                self.push(t, Actor::System, EventBody::SessionEnd(Empty {}))?;
                self.state.ended = true;
            }
        }
        Ok(self.log.events[mark..].to_vec())
    }

    fn change_control(
        &mut self,
        t: u64,
        actor: Actor,
        target: ControlMode,
        cause: ControlCause,
    ) -> Result<(), SessionError> {
        let event = SessionEvent {
            seq: self.next_seq(),
            t_ms: t,
            actor,
            body: EventBody::ControlChange(ControlChangePayload { target, cause }),
        };
        self.state.mode = apply_control_event(self.state.mode, &event)?;
        self.state.pending_turn.clear();
        self.state.dialogue.end_turn();
        if target == ControlMode::AgentControl {
            self.state.dialogue.note_output(t);
            self.state.dialogue.silence_prompt_armed = true;
        }
        self.append(event)
    }

    fn next_seq(&self) -> u64 {
        self.log.events.len() as u64 + 1
    }

    fn push(&mut self, t: u64, actor: Actor, body: EventBody) -> Result<(), SessionError> {
        let event = SessionEvent {
            seq: self.next_seq(),
            t_ms: t,
            actor,
            body,
        };
        self.append(event)
    }

    fn append(&mut self, event: SessionEvent) -> Result<(), SessionError> {
        let prompt = self.state.detector.update(&event, &self.config.detector)?;
        self.log.events.push(event);
        if let Some(p) = prompt {
            debug_assert_eq!(self.state.mode, ControlMode::AgentControl);
            self.push(
                p.session_time_ms,
                Actor::System,
                EventBody::TakeoverPrompt(PromptPayload { reasons: p.reasons }),
            )?;
        }
        Ok(())
    }

    /// User silence as shown on the operator's progress bar.
    pub fn silence_ms(&self, now_ms: u64) -> u64 {
        self.state.detector.silence_ms(now_ms)
    }

    /// Earliest time a tick could make the autonomous side act.
    pub fn next_deadline(&self) -> Option<u64> {
        if !self.state.started || self.state.ended || self.state.mode != ControlMode::AgentControl {
            return None;
        }
        let dialogue = self
            .state
            .dialogue
            .next_due(self.policy.as_ref(), &self.config.dialogue);
        let detector = self.state.detector.next_silence_due(&self.config.detector);
        match (dialogue, detector) {
            (Some(a), Some(b)) => Some(a.min(b)),
            (a, b) => a.or(b),
        }
    }
}

#[derive(Debug, Error)]
pub enum ReplayError {
    #[error(transparent)]
    Log(#[from] LogError),
    #[error("replay failed at seq {seq}: {source}")]
    Engine {
        seq: u64,
        #[source]
        source: SessionError,
    },
    #[error("replay diverges at seq {seq}: {detail}")]
    Divergence { seq: u64, detail: String },
}

/// Recovers the input that produced a logged event. Derived events map
/// to `None`.
fn input_of(event: &SessionEvent, prev: Option<&SessionEvent>) -> Option<Input> {
    match (&event.body, event.actor) {
        (EventBody::Utterance(u), _) => Some(Input::UserSay {
            text: u.text.clone(),
            annotations: u.annotations.clone(),
            start_ms: Some(u.session_time_ms),
        }),
        (EventBody::EndOfTurn(_), _) => Some(Input::EndOfTurn),
        (EventBody::ControlChange(c), _) => Some(match c.cause {
            ControlCause::Toggle => Input::OperatorToggle,
            ControlCause::OperatorTimeout => Input::OperatorTimeout,
        }),
        (EventBody::Response(r), Actor::Operator) if r.kind == ResponseKind::OperatorSpeech => {
            Some(Input::OperatorSay {
                text: r.text.clone(),
                expression: r.expression,
                speech_ms: r.speech_ms,
            })
        }
        (EventBody::Expression(x), Actor::Operator) => {
            let paired = prev.is_some_and(|p| match &p.body {
                EventBody::Response(r) => {
                    p.actor == Actor::Operator
                        && p.t_ms == event.t_ms
                        && r.expression == Some(x.expression)
                }
                _ => false,
            });
            (!paired).then_some(Input::OperatorExpression(x.expression))
        }
        (EventBody::SilenceTick(_), _) => Some(Input::Tick),
        (EventBody::SessionEnd(_), _) => Some(Input::End),
        _ => None,
    }
}

/// Re-drives the engine from the inputs recorded in `log`.
pub fn replay(log: &SessionLog) -> Result<Session, ReplayError> {
    log.check_order()?;
    let mut session = Session::new(log.session_id.clone(), log.config.clone());
    let Some(first) = log.events.first() else {
        return Ok(session);
    };
    if !matches!(first.body, EventBody::SessionStart(_)) {
        return Err(LogError::MissingStart.into());
    }
    session.start(first.t_ms).map_err(|source| ReplayError::Engine {
        seq: first.seq,
        source,
    })?;
    for (i, event) in log.events.iter().enumerate().skip(1) {
        if let Some(input) = input_of(event, log.events.get(i - 1)) {
            session
                .handle(event.t_ms, input)
                .map_err(|source| ReplayError::Engine {
                    seq: event.seq,
                    source,
                })?;
        }
    }
    Ok(session)
}

/// Replays `log` and checks the regenerated log matches it event for event.
pub fn verify_replay(log: &SessionLog) -> Result<Session, ReplayError> {
    let session = replay(log)?;
    let regenerated = &session.log().events;
    for (a, b) in log.events.iter().zip(regenerated) {
        if a != b {
            return Err(ReplayError::Divergence {
                seq: a.seq,
                detail: format!(
                    "logged {} but replay produced {}",
                    serde_json::to_string(a).unwrap_or_default(),
                    serde_json::to_string(b).unwrap_or_default()
                ),
            });
        }
    }
    if log.events.len() != regenerated.len() {
        let seq = log.events.len().min(regenerated.len()) as u64 + 1;
        return Err(ReplayError::Divergence {
            seq,
            detail: format!(
                "logged {} events, replay produced {}",
                log.events.len(),
                regenerated.len()
            ),
        });
    }
    Ok(session)
}

/// Final state of `log` under replay.
pub fn append_and_replay(log: &SessionLog) -> Result<SessionState, ReplayError> {
    Ok(replay(log)?.state)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detector::TakeoverCondition;
    use crate::dialogue::Polarity;

    fn say(text: &str) -> Input {
        Input::UserSay {
            text: text.into(),
            annotations: vec![],
            start_ms: None,
        }
    }

    fn started() -> Session {
        let mut s = Session::new("t", Config::default());
        s.start(0).unwrap();
        s
    }

    fn kinds(events: &[SessionEvent]) -> Vec<&'static str> {
        events.iter().map(|e| e.body.kind_name()).collect()
    }

    #[test]
    fn turn_gets_one_response() {
        let mut s = started();
        s.handle(1000, say("I went for a trip")).unwrap();
        let out = s.handle(1200, Input::EndOfTurn).unwrap();
        assert_eq!(kinds(&out), ["end_of_turn", "response"]);
        assert_eq!(out[1].actor, Actor::Agent);
        assert_eq!(out[1].t_ms, 1200);
    }

    #[test]
    fn end_of_turn_without_speech_is_silent() {
        let mut s = started();
        let out = s.handle(10, Input::EndOfTurn).unwrap();
        assert_eq!(kinds(&out), ["end_of_turn"]);
    }

    #[test]
    fn fragments_merge_into_one_turn() {
        let mut s = started();
        s.handle(100, say("we went to")).unwrap();
        s.handle(
            900,
            Input::UserSay {
                text: "a great beach".into(),
                annotations: vec![Annotation::Sentiment {
                    value: Polarity::Positive,
                    confidence: 0.9,
                }],
                start_ms: Some(500),
            },
        )
        .unwrap();
        let out = s.handle(1000, Input::EndOfTurn).unwrap();
        match &out[1].body {
            EventBody::Response(r) => assert_eq!(r.kind, ResponseKind::Assessment),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn operator_control_suppresses_the_agent() {
        let mut s = started();
        s.handle(100, Input::OperatorToggle).unwrap();
        assert_eq!(s.mode(), ControlMode::OperatorControl);
        s.handle(200, say("hello there")).unwrap();
        let out = s.handle(300, Input::EndOfTurn).unwrap();
        assert_eq!(kinds(&out), ["end_of_turn"]);
        for t in (500..20_000).step_by(250) {
            let out = s.handle(t, Input::Tick).unwrap();
            assert_eq!(kinds(&out), ["silence_tick"]);
        }
        s.handle(20_000, Input::OperatorToggle).unwrap();
        assert_eq!(s.mode(), ControlMode::AgentControl);
    }

    #[test]
    fn operator_speech_is_paired_with_expression() {
        let mut s = started();
        assert!(matches!(
            s.handle(
                50,
                Input::OperatorSay {
                    text: "hi".into(),
                    expression: None,
                    speech_ms: None
                }
            ),
            Err(SessionError::Control(ControlError::NotInControl))
        ));
        assert!(matches!(
            s.handle(50, Input::OperatorExpression(Expression::Sad)),
            Err(SessionError::Control(ControlError::NotInControl))
        ));
        s.handle(100, Input::OperatorToggle).unwrap();
        let out = s
            .handle(
                200,
                Input::OperatorSay {
                    text: "Tell me more about the beach".into(),
                    expression: Some(Expression::Happy),
                    speech_ms: None,
                },
            )
            .unwrap();
        assert_eq!(kinds(&out), ["response", "expression"]);
        assert_eq!(out[0].t_ms, out[1].t_ms);
        match &out[0].body {
            EventBody::Response(r) => {
                assert_eq!(r.kind, ResponseKind::OperatorSpeech);
                assert_eq!(r.speech_ms, Some(28 * 60));
            }
            other => panic!("{other:?}"),
        }
        let out = s
            .handle(
                300,
                Input::OperatorSay {
                    text: "ok".into(),
                    expression: None,
                    speech_ms: Some(500),
                },
            )
            .unwrap();
        assert_eq!(kinds(&out), ["response"]);
    }

    #[test]
    fn silence_schedule_from_start() {
        let mut s = started();
        let mut prompts = Vec::new();
        let mut silence_prompts = Vec::new();
        for t in (250..=30_000).step_by(250) {
            for e in s.handle(t, Input::Tick).unwrap() {
                match e.body {
                    EventBody::TakeoverPrompt(p) => prompts.push((e.t_ms, p.reasons)),
                    EventBody::Response(r) if r.kind == ResponseKind::SilencePrompt => {
                        silence_prompts.push(e.t_ms)
                    }
                    _ => {}
                }
            }
        }
        let long = vec![TakeoverCondition::LongSilence];
        assert_eq!(
            prompts,
            vec![(4250, long.clone()), (14_500, long.clone()), (24_750, long)]
        );
        assert_eq!(silence_prompts, vec![5250]);
    }

    #[test]
    fn time_cannot_go_backwards() {
        let mut s = started();
        s.handle(100, Input::Tick).unwrap();
        assert!(matches!(
            s.handle(99, Input::Tick),
            Err(SessionError::TimeRegression { .. })
        ));
    }

    #[test]
    fn ended_sessions_refuse_input() {
        let mut s = started();
        s.handle(10, Input::End).unwrap();
        assert!(matches!(s.handle(20, Input::Tick), Err(SessionError::Ended)));
    }

    #[test]
    fn malformed_utterance_is_discarded() {
        let mut s = started();
        let before = s.log().events.len();
        assert!(s.handle(10, say("   ")).is_err());
        assert!(s
            .handle(
                10,
                Input::UserSay {
                    text: "hello".into(),
                    annotations: vec![],
                    start_ms: Some(20),
                }
            )
            .is_err());
        assert_eq!(s.log().events.len(), before);
    }

    #[test]
    fn replay_of_empty_log_is_initial_state() {
        let log = SessionLog::new("e", Config::default());
        let state = append_and_replay(&log).unwrap();
        assert_eq!(state, SessionState::initial("e", &Config::default()));
        assert_eq!(state.mode, ControlMode::AgentControl);
    }

    #[test]
    fn replay_reproduces_live_state() {
        let mut s = started();
        s.handle(500, say("we had ramen")).unwrap();
        s.handle(900, Input::Tick).unwrap();
        s.handle(1000, Input::EndOfTurn).unwrap();
        s.handle(1500, Input::OperatorToggle).unwrap();
        s.handle(
            1600,
            Input::OperatorSay {
                text: "Nice!".into(),
                expression: Some(Expression::Laughter),
                speech_ms: None,
            },
        )
        .unwrap();
        s.handle(1700, Input::OperatorExpression(Expression::Laughter))
            .unwrap();
        s.handle(1800, Input::OperatorToggle).unwrap();
        for t in (2000..12_000).step_by(250) {
            s.handle(t, Input::Tick).unwrap();
        }
        s.handle(12_000, Input::End).unwrap();
        let replayed = verify_replay(s.log()).unwrap();
        assert_eq!(replayed.state(), s.state());
    }

    #[test]
    fn tampered_log_diverges() {
        let mut s = started();
        s.handle(500, say("we had ramen")).unwrap();
        s.handle(1000, Input::EndOfTurn).unwrap();
        let mut log = s.log().clone();
        if let EventBody::Response(r) = &mut log.events[3].body {
            r.text = "something else".into();
        }
        assert!(matches!(
            verify_replay(&log),
            Err(ReplayError::Divergence { seq: 4, .. })
        ));
    }
}
