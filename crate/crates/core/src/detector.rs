//! Breakdown detection and operator takeover prompts.
//!
//! Four explicit conditions are watched over the live event stream:
//!
//! 1. the user has been silent for more than `silence_takeover_ms`;
//! 2. the last `short_turn_count` user turns were all shorter than
//!    `short_turn_chars`;
//! 3. the last `formulaic_run` agent turn responses were all formulaic;
//! 4. none of the last `starvation_window` agent turn responses carried
//!    sentiment or was an elaborating question.
//!
//! Only the four turn-response kinds enter the response window.
//! Backchannels and silence prompts count as activity but are otherwise
//! invisible. Conditions are evaluated after silence ticks and after agent
//! turn responses. A prompt lists at most two reasons, in the order above,
//! and prompts are spaced by `prompt_cooldown_ms`.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::control::{Actor, ControlMode, EventBody, SessionEvent};
use crate::dialogue::{normalize, ResponseKind};

/// Most reasons a single prompt displays.
pub const MAX_REASONS: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TakeoverCondition {
    LongSilence,
    ShortTurns,
    ConsecutiveFormulaic,
    NoSentimentOrQuestion,
}

impl TakeoverCondition {
    pub const ALL: [TakeoverCondition; 4] = [
        TakeoverCondition::LongSilence,
        TakeoverCondition::ShortTurns,
        TakeoverCondition::ConsecutiveFormulaic,
        TakeoverCondition::NoSentimentOrQuestion,
    ];

    pub fn code(self) -> &'static str {
        match self {
            TakeoverCondition::LongSilence => "long_silence",
            TakeoverCondition::ShortTurns => "short_turns",
            TakeoverCondition::ConsecutiveFormulaic => "consecutive_formulaic",
            TakeoverCondition::NoSentimentOrQuestion => "no_sentiment_or_question",
        }
    }
}

/// How a user turn's length is measured.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LengthUnit {
    /// Unicode scalar values of the NFKC-normalized, trimmed text.
    #[default]
    ScalarValues,
    /// Same, ignoring whitespace.
    NonWhitespace,
}

impl LengthUnit {
    pub fn measure(self, text: &str) -> usize {
        let text = normalize(text);
        match self {
            LengthUnit::ScalarValues => text.chars().count(),
            LengthUnit::NonWhitespace => text.chars().filter(|c| !c.is_whitespace()).count(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectorConfig {
    pub silence_takeover_ms: u64,
    pub short_turn_chars: usize,
    pub short_turn_count: usize,
    pub formulaic_run: usize,
    pub starvation_window: usize,
    pub prompt_cooldown_ms: u64,
    pub length_unit: LengthUnit,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            silence_takeover_ms: 4000,
            short_turn_chars: 20,
            short_turn_count: 2,
            formulaic_run: 3,
            starvation_window: 4,
            prompt_cooldown_ms: 10_000,
            length_unit: LengthUnit::ScalarValues,
        }
    }
}

impl DetectorConfig {
    fn response_capacity(&self) -> usize {
        self.formulaic_run.max(self.starvation_window)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TakeoverPrompt {
    pub session_time_ms: u64,
    pub reasons: Vec<TakeoverCondition>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TurnRecord {
    pub kind: ResponseKind,
    pub has_sentiment: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DetectorError {
    #[error("event seq {seq} at {t_ms} ms arrived after {now_ms} ms")]
    OutOfOrder { seq: u64, t_ms: u64, now_ms: u64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectorState {
    pub recent_user_turn_lengths: VecDeque<usize>,
    pub recent_turn_responses: VecDeque<TurnRecord>,
    pub last_activity_ms: u64,
    pub last_prompt_ms: Option<u64>,
    pub now_ms: u64,
    pub mode: ControlMode,
    /// Text of the user turn in progress, fragments joined by one space.
    pending_turn: Option<String>,
}

impl Default for DetectorState {
    fn default() -> Self {
        Self::new(0)
    }
}

fn push_bounded<T>(q: &mut VecDeque<T>, item: T, cap: usize) {
    q.push_back(item);
    while q.len() > cap {
        q.pop_front();
    }
}

impl DetectorState {
    pub fn new(start_ms: u64) -> Self {
        Self {
            recent_user_turn_lengths: VecDeque::new(),
            recent_turn_responses: VecDeque::new(),
            last_activity_ms: start_ms,
            last_prompt_ms: None,
            now_ms: start_ms,
            mode: ControlMode::AgentControl,
            pending_turn: None,
        }
    }

    pub fn silence_ms(&self, now_ms: u64) -> u64 {
        now_ms.saturating_sub(self.last_activity_ms)
    }

    /// Folds one event in and returns the prompt it triggers, if any.
    pub fn update(
        &mut self,
        event: &SessionEvent,
        config: &DetectorConfig,
    ) -> Result<Option<TakeoverPrompt>, DetectorError> {
        let t = event.t_ms;
        if t < self.now_ms {
            return Err(DetectorError::OutOfOrder {
                seq: event.seq,
                t_ms: t,
                now_ms: self.now_ms,
            });
        }
        self.now_ms = t;

        if let EventBody::ControlChange(change) = &event.body {
            match change.target {
                ControlMode::OperatorControl => self.reset_on_takeover(t),
                ControlMode::AgentControl => {
                    self.mode = ControlMode::AgentControl;
                    self.last_activity_ms = t;
                }
            }
            return Ok(None);
        }
        if self.mode == ControlMode::OperatorControl {
            return Ok(None);
        }

        match &event.body {
            EventBody::SessionStart(_) => {
                self.last_activity_ms = t;
                Ok(None)
            }
            EventBody::Utterance(u) => {
                let text = normalize(&u.text);
                match &mut self.pending_turn {
                    Some(p) => {
                        p.push(' ');
                        p.push_str(&text);
                    }
                    None => self.pending_turn = Some(text),
                }
                self.last_activity_ms = self.last_activity_ms.max(u.end_time_ms);
                Ok(None)
            }
            EventBody::EndOfTurn(_) => {
                if let Some(text) = self.pending_turn.take() {
                    let len = config.length_unit.measure(&text);
                    push_bounded(
                        &mut self.recent_user_turn_lengths,
                        len,
                        config.short_turn_count,
                    );
                }
                Ok(None)
            }
            EventBody::Response(r) | EventBody::Backchannel(r) => {
                self.last_activity_ms = self.last_activity_ms.max(t);
                if event.actor == Actor::Agent && r.kind.is_turn_response() {
                    push_bounded(
                        &mut self.recent_turn_responses,
                        TurnRecord {
                            kind: r.kind,
                            has_sentiment: r.has_sentiment,
                        },
                        config.response_capacity(),
                    );
                    Ok(self.evaluate(t, config))
                } else {
                    Ok(None)
                }
            }
            EventBody::SilenceTick(_) => Ok(self.evaluate(t, config)),
            EventBody::TakeoverPrompt(_)
            | EventBody::ControlChange(_)
            | EventBody::Expression(_)
            | EventBody::SessionEnd(_) => Ok(None),
        }
    }

    /// Clears both windows and suspends detection until control returns.
    pub fn reset_on_takeover(&mut self, at_ms: u64) {
        self.recent_user_turn_lengths.clear();
        self.recent_turn_responses.clear();
        self.pending_turn = None;
        self.last_activity_ms = at_ms;
        self.last_prompt_ms = None;
        self.mode = ControlMode::OperatorControl;
    }

    /// Every condition that currently holds, in display order.
    pub fn conditions(&self, now_ms: u64, config: &DetectorConfig) -> Vec<TakeoverCondition> {
        let mut held = Vec::new();
        if self.silence_ms(now_ms) > config.silence_takeover_ms {
            held.push(TakeoverCondition::LongSilence);
        }
        let turns = &self.recent_user_turn_lengths;
        if turns.len() >= config.short_turn_count
            && turns.iter().all(|&n| n < config.short_turn_chars)
        {
            held.push(TakeoverCondition::ShortTurns);
        }
        let responses = &self.recent_turn_responses;
        if responses.len() >= config.formulaic_run
            && responses
                .iter()
                .rev()
                .take(config.formulaic_run)
                .all(|r| r.kind == ResponseKind::Formulaic)
        {
            held.push(TakeoverCondition::ConsecutiveFormulaic);
        }
        if responses.len() >= config.starvation_window
            && responses
                .iter()
                .rev()
                .take(config.starvation_window)
                .all(|r| !r.has_sentiment && r.kind != ResponseKind::ElaboratingQuestion)
        {
            held.push(TakeoverCondition::NoSentimentOrQuestion);
        }
        held
    }

    fn cooled_down(&self, now_ms: u64, config: &DetectorConfig) -> bool {
        self.last_prompt_ms
            .is_none_or(|p| now_ms - p > config.prompt_cooldown_ms)
    }

    fn evaluate(&mut self, now_ms: u64, config: &DetectorConfig) -> Option<TakeoverPrompt> {
        let mut reasons = self.conditions(now_ms, config);
        if reasons.is_empty() || !self.cooled_down(now_ms, config) {
            return None;
        }
        reasons.truncate(MAX_REASONS);
        self.last_prompt_ms = Some(now_ms);
        Some(TakeoverPrompt {
            session_time_ms: now_ms,
            reasons,
        })
    }

    /// Earliest time a silence tick could raise LongSilence, if detection
    /// is active.
    pub fn next_silence_due(&self, config: &DetectorConfig) -> Option<u64> {
        if self.mode == ControlMode::OperatorControl {
            return None;
        }
        let silence = self.last_activity_ms + config.silence_takeover_ms + 1;
        let cooldown = self
            .last_prompt_ms
            .map_or(0, |p| p + config.prompt_cooldown_ms + 1);
        Some(silence.max(cooldown))
    }
}

/// Functional form of [`DetectorState::update`].
pub fn detector_update(
    state: &DetectorState,
    event: &SessionEvent,
    config: &DetectorConfig,
) -> Result<(DetectorState, Option<TakeoverPrompt>), DetectorError> {
    let mut next = state.clone();
    let prompt = next.update(event, config)?;
    Ok((next, prompt))
}

pub fn detector_reset_on_takeover(state: &DetectorState, at_ms: u64) -> DetectorState {
    let mut next = state.clone();
    next.reset_on_takeover(at_ms);
    next
}
