//! Autonomous attentive-listening policy.
//!
//! One response is chosen per user turn from four candidate kinds, tried in
//! a fixed order: assessment, elaborating question, repeated response,
//! formulaic response. The first kind that can be generated wins. Keyword
//! kinds only use focus words whose recognition confidence clears
//! [`DialogueConfig::asr_confidence_min`].
//!
//! Mid-turn backchannels go through [`BackchannelPolicy`]; the shipped
//! [`PauseSentimentRule`] is a deterministic rule on pause length and
//! sentiment. Prolonged user silence is handled by [`silence_prompt_check`].

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use unicode_normalization::UnicodeNormalization;

use crate::control::Expression;

/// Slot that templates substitute the focus word into.
pub const PLACEHOLDER: &str = "{X}";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DialogueError {
    #[error("malformed utterance: {0}")]
    MalformedUtterance(String),
}

/// NFKC-normalized, trimmed form of a text.
pub fn normalize(text: &str) -> String {
    text.nfkc().collect::<String>().trim().to_string()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Polarity {
    Positive,
    Negative,
}

/// Recognizer-side annotation attached to a user utterance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Annotation {
    FocusWord {
        value: String,
        confidence: f64,
        /// Matches question templates carrying the same category.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        category: Option<String>,
    },
    Sentiment { value: Polarity, confidence: f64 },
}

impl Annotation {
    pub fn confidence(&self) -> f64 {
        match self {
            Annotation::FocusWord { confidence, .. } | Annotation::Sentiment { confidence, .. } => {
                *confidence
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UserUtterance {
    pub session_time_ms: u64,
    pub end_time_ms: u64,
    pub text: String,
    #[serde(default)]
    pub annotations: Vec<Annotation>,
}

impl UserUtterance {
    pub fn new(session_time_ms: u64, end_time_ms: u64, text: impl Into<String>) -> Self {
        Self {
            session_time_ms,
            end_time_ms,
            text: text.into(),
            annotations: Vec::new(),
        }
    }

    pub fn with(mut self, annotation: Annotation) -> Self {
        self.annotations.push(annotation);
        self
    }

    pub fn validate(&self) -> Result<(), DialogueError> {
        let malformed = |m: String| Err(DialogueError::MalformedUtterance(m));
        if self.end_time_ms < self.session_time_ms {
            return malformed(format!(
                "end_time_ms {} precedes session_time_ms {}",
                self.end_time_ms, self.session_time_ms
            ));
        }
        let text = normalize(&self.text);
        if text.is_empty() {
            return malformed("empty text".into());
        }
        for a in &self.annotations {
            let c = a.confidence();
            if !(0.0..=1.0).contains(&c) {
                return malformed(format!("confidence {c} outside [0, 1]"));
            }
            if let Annotation::FocusWord { value, .. } = a {
                let value = normalize(value);
                if value.is_empty() {
                    return malformed("empty focus word".into());
                }
                if !text.contains(&value) {
                    return malformed(format!("focus word {value:?} not found in text"));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResponseKind {
    Assessment,
    ElaboratingQuestion,
    RepeatedResponse,
    Formulaic,
    BackchannelFormal,
    BackchannelReactive,
    SilencePrompt,
    OperatorSpeech,
}

impl ResponseKind {
    pub const TURN_KINDS: [ResponseKind; 4] = [
        ResponseKind::Assessment,
        ResponseKind::ElaboratingQuestion,
        ResponseKind::RepeatedResponse,
        ResponseKind::Formulaic,
    ];

    /// Selection priority of a turn response; lower wins. `None` for
    /// backchannels, silence prompts and operator speech.
    pub fn rank(self) -> Option<u8> {
        match self {
            ResponseKind::Assessment => Some(0),
            ResponseKind::ElaboratingQuestion => Some(1),
            ResponseKind::RepeatedResponse => Some(2),
            ResponseKind::Formulaic => Some(3),
            _ => None,
        }
    }

    pub fn is_turn_response(self) -> bool {
        self.rank().is_some()
    }

    pub fn is_backchannel(self) -> bool {
        matches!(
            self,
            ResponseKind::BackchannelFormal | ResponseKind::BackchannelReactive
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentResponse {
    pub session_time_ms: u64,
    pub kind: ResponseKind,
    pub text: String,
    pub has_sentiment: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expression: Option<Expression>,
    /// Speaking time of operator speech.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub speech_ms: Option<u64>,
}

impl AgentResponse {
    fn new(session_time_ms: u64, kind: ResponseKind, text: String, has_sentiment: bool) -> Self {
        Self {
            session_time_ms,
            kind,
            text,
            has_sentiment,
            expression: None,
            speech_ms: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuestionTemplate {
    pub template: String,
    /// Category tag; `None` marks a generic template that only matches
    /// untagged focus words.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub category: Option<String>,
}

impl QuestionTemplate {
    pub fn new(template: &str, category: Option<&str>) -> Self {
        Self {
            template: template.to_string(),
            category: category.map(str::to_string),
        }
    }

    pub fn matches(&self, focus_category: Option<&str>) -> bool {
        self.category.as_deref() == focus_category
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Pools {
    pub formulaic: Vec<String>,
    pub assessment_positive: Vec<String>,
    pub assessment_negative: Vec<String>,
    pub question_templates: Vec<QuestionTemplate>,
    pub repeated_templates: Vec<String>,
    pub exploratory_questions: Vec<String>,
    pub formal_backchannels: Vec<String>,
    pub reactive_backchannels: Vec<String>,
}

fn strings(items: &[&str]) -> Vec<String> {
    items.iter().map(|s| s.to_string()).collect()
}

impl Default for Pools {
    fn default() -> Self {
        Self {
            formulaic: strings(&["I see.", "OK.", "Yes.", "Uh-huh.", "Right."]),
            assessment_positive: strings(&["That's great!", "Wonderful!", "How nice!"]),
            assessment_negative: strings(&["That's a shame...", "That's too bad.", "Oh no..."]),
            question_templates: vec![
                QuestionTemplate::new("What type of {X} did you eat?", Some("food")),
                QuestionTemplate::new("Where did you have the {X}?", Some("food")),
                QuestionTemplate::new("What did you do in {X}?", Some("place")),
                QuestionTemplate::new("How long have you been doing {X}?", Some("activity")),
                QuestionTemplate::new("What is your {X} like?", Some("person")),
            ],
            repeated_templates: strings(&["{X}...", "{X}?"]),
            exploratory_questions: strings(&[
                "Could you tell me more about that?",
                "What happened after that?",
                "How did you feel about it?",
                "Is there anything else you would like to talk about?",
            ]),
            formal_backchannels: strings(&["un", "unun", "ununun"]),
            reactive_backchannels: strings(&["ah", "he-", "oh-"]),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DialogueConfig {
    pub asr_confidence_min: f64,
    pub silence_prompt_ms: u64,
    pub backchannel_pause_ms: u64,
    pub rng_seed: u64,
    pub pools: Pools,
}

impl Default for DialogueConfig {
    fn default() -> Self {
        Self {
            asr_confidence_min: 0.5,
            silence_prompt_ms: 5000,
            backchannel_pause_ms: 400,
            rng_seed: 0,
            pools: Pools::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Pool {
    Formulaic,
    AssessmentPositive,
    AssessmentNegative,
    Question,
    Repeated,
    Exploratory,
    FormalBackchannel,
    ReactiveBackchannel,
}

const POOL_COUNT: usize = 8;

/// Seeded generator plus the last pick of every pool, so that no pool
/// hands out the same entry twice in a row.
#[derive(Debug, Clone, PartialEq)]
pub struct RngState {
    rng: ChaCha8Rng,
    last: [Option<usize>; POOL_COUNT],
}

impl RngState {
    pub fn seeded(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
            last: [None; POOL_COUNT],
        }
    }

    /// Uniform draw over `candidates` (pool indices), skipping the
    /// previous pick of the same pool when there is an alternative.
    fn pick(&mut self, pool: Pool, candidates: &[usize]) -> usize {
        debug_assert!(!candidates.is_empty());
        let last = self.last[pool as usize];
        let allowed: Vec<usize> = match last {
            Some(l) if candidates.len() > 1 && candidates.contains(&l) => {
                candidates.iter().copied().filter(|&c| c != l).collect()
            }
            _ => candidates.to_vec(),
        };
        let choice = allowed[self.rng.gen_range(0..allowed.len())];
        self.last[pool as usize] = Some(choice);
        choice
    }

    fn pick_from<'a>(&mut self, pool: Pool, entries: &'a [String]) -> &'a str {
        let all: Vec<usize> = (0..entries.len()).collect();
        &entries[self.pick(pool, &all)]
    }
}

fn fill(template: &str, word: &str) -> String {
    template.replace(PLACEHOLDER, word)
}

fn strongest_sentiment(utterance: &UserUtterance, gate: f64) -> Option<Polarity> {
    let mut best: Option<(f64, Polarity)> = None;
    for a in &utterance.annotations {
        if let Annotation::Sentiment { value, confidence } = a {
            if *confidence >= gate && best.is_none_or(|(c, _)| *confidence > c) {
                best = Some((*confidence, *value));
            }
        }
    }
    best.map(|(_, p)| p)
}

/// Focus words at or above the gate, most confident first (stable on ties).
fn gated_focus_words(utterance: &UserUtterance, gate: f64) -> Vec<(&str, Option<&str>)> {
    let mut words: Vec<(f64, &str, Option<&str>)> = utterance
        .annotations
        .iter()
        .filter_map(|a| match a {
            Annotation::FocusWord {
                value,
                confidence,
                category,
            } if *confidence >= gate => Some((*confidence, value.as_str(), category.as_deref())),
            _ => None,
        })
        .collect();
    words.sort_by(|a, b| b.0.total_cmp(&a.0));
    words.into_iter().map(|(_, w, c)| (w, c)).collect()
}

/// Turn-response kinds that can be generated for this utterance, in
/// priority order. Always ends with [`ResponseKind::Formulaic`].
pub fn generable_kinds(utterance: &UserUtterance, config: &DialogueConfig) -> Vec<ResponseKind> {
    let gate = config.asr_confidence_min;
    let mut kinds = Vec::with_capacity(4);
    if strongest_sentiment(utterance, gate).is_some() {
        kinds.push(ResponseKind::Assessment);
    }
    let focus = gated_focus_words(utterance, gate);
    let templates = &config.pools.question_templates;
    if focus
        .iter()
        .any(|(_, cat)| templates.iter().any(|t| t.matches(*cat)))
    {
        kinds.push(ResponseKind::ElaboratingQuestion);
    }
    if !focus.is_empty() {
        kinds.push(ResponseKind::RepeatedResponse);
    }
    kinds.push(ResponseKind::Formulaic);
    kinds
}

/// Chooses the response to a finished user turn.
pub fn select_response(
    utterance: &UserUtterance,
    config: &DialogueConfig,
    rng: &mut RngState,
) -> Result<AgentResponse, DialogueError> {
    utterance.validate()?;
    let at = utterance.end_time_ms;
    let gate = config.asr_confidence_min;
    let pools = &config.pools;

    if let Some(polarity) = strongest_sentiment(utterance, gate) {
        let (pool, entries, expression) = match polarity {
            Polarity::Positive => (
                Pool::AssessmentPositive,
                &pools.assessment_positive,
                Expression::Happy,
            ),
            Polarity::Negative => (
                Pool::AssessmentNegative,
                &pools.assessment_negative,
                Expression::Sad,
            ),
        };
        let text = rng.pick_from(pool, entries).to_string();
        let mut r = AgentResponse::new(at, ResponseKind::Assessment, text, true);
        r.expression = Some(expression);
        return Ok(r);
    }

    let focus = gated_focus_words(utterance, gate);
    for (word, category) in &focus {
        let matching: Vec<usize> = pools
            .question_templates
            .iter()
            .enumerate()
            .filter(|(_, t)| t.matches(*category))
            .map(|(i, _)| i)
            .collect();
        if !matching.is_empty() {
            let i = rng.pick(Pool::Question, &matching);
            let text = fill(&pools.question_templates[i].template, word);
            return Ok(AgentResponse::new(
                at,
                ResponseKind::ElaboratingQuestion,
                text,
                false,
            ));
        }
    }

    if let Some((word, _)) = focus.first() {
        let template = rng.pick_from(Pool::Repeated, &pools.repeated_templates);
        let text = fill(template, word);
        return Ok(AgentResponse::new(
            at,
            ResponseKind::RepeatedResponse,
            text,
            false,
        ));
    }

    let text = rng.pick_from(Pool::Formulaic, &pools.formulaic).to_string();
    Ok(AgentResponse::new(at, ResponseKind::Formulaic, text, false))
}

/// Decides whether to backchannel during a pause inside the user's turn.
pub trait BackchannelPolicy: Send + Sync {
    fn decide(
        &self,
        pause_ms: u64,
        last_utterance: &UserUtterance,
        config: &DialogueConfig,
        rng: &mut RngState,
    ) -> Option<AgentResponse>;

    /// Earliest pause length at which [`decide`](Self::decide) may return
    /// something for this fragment, used to schedule wake-ups.
    fn earliest_pause_ms(&self, last_utterance: &UserUtterance, config: &DialogueConfig) -> u64;
}

/// Reactive backchannel after a confident sentiment, formal backchannel
/// once the pause reaches `backchannel_pause_ms`, nothing otherwise.
#[derive(Debug, Clone, Copy, Default)]
pub struct PauseSentimentRule;

impl BackchannelPolicy for PauseSentimentRule {
    fn decide(
        &self,
        pause_ms: u64,
        last_utterance: &UserUtterance,
        config: &DialogueConfig,
        rng: &mut RngState,
    ) -> Option<AgentResponse> {
        let at = last_utterance.end_time_ms + pause_ms;
        let pools = &config.pools;
        if strongest_sentiment(last_utterance, config.asr_confidence_min).is_some() {
            let text = rng.pick_from(Pool::ReactiveBackchannel, &pools.reactive_backchannels);
            return Some(AgentResponse::new(
                at,
                ResponseKind::BackchannelReactive,
                text.to_string(),
                true,
            ));
        }
        if pause_ms >= config.backchannel_pause_ms {
            let text = rng.pick_from(Pool::FormalBackchannel, &pools.formal_backchannels);
            return Some(AgentResponse::new(
                at,
                ResponseKind::BackchannelFormal,
                text.to_string(),
                false,
            ));
        }
        None
    }

    fn earliest_pause_ms(&self, last_utterance: &UserUtterance, config: &DialogueConfig) -> u64 {
        if strongest_sentiment(last_utterance, config.asr_confidence_min).is_some() {
            0
        } else {
            config.backchannel_pause_ms
        }
    }
}

pub fn backchannel_decision(
    pause_ms: u64,
    last_utterance: &UserUtterance,
    config: &DialogueConfig,
    rng: &mut RngState,
) -> Option<AgentResponse> {
    PauseSentimentRule.decide(pause_ms, last_utterance, config, rng)
}

/// Exploratory question once the user has been silent strictly longer
/// than `silence_prompt_ms`.
pub fn silence_prompt_check(
    silence_ms: u64,
    now_ms: u64,
    config: &DialogueConfig,
    rng: &mut RngState,
) -> Option<AgentResponse> {
    if silence_ms <= config.silence_prompt_ms {
        return None;
    }
    let text = rng.pick_from(Pool::Exploratory, &config.pools.exploratory_questions);
    Some(AgentResponse::new(
        now_ms,
        ResponseKind::SilencePrompt,
        text.to_string(),
        false,
    ))
}

/// Per-session state of the autonomous listener.
#[derive(Debug, Clone, PartialEq)]
pub struct DialogueState {
    pub rng: RngState,
    /// Later of the last user utterance end and the last agent-side output.
    pub silence_anchor_ms: u64,
    /// Cleared once an exploratory prompt fires; re-armed by user speech.
    pub silence_prompt_armed: bool,
    /// Latest mid-turn fragment still eligible for a backchannel.
    pub backchannel_candidate: Option<UserUtterance>,
}

impl DialogueState {
    pub fn new(config: &DialogueConfig, start_ms: u64) -> Self {
        Self {
            rng: RngState::seeded(config.rng_seed),
            silence_anchor_ms: start_ms,
            silence_prompt_armed: true,
            backchannel_candidate: None,
        }
    }

    pub fn silence_ms(&self, now_ms: u64) -> u64 {
        now_ms.saturating_sub(self.silence_anchor_ms)
    }

    pub fn note_user_speech(&mut self, fragment: &UserUtterance) {
        self.silence_anchor_ms = self.silence_anchor_ms.max(fragment.end_time_ms);
        self.silence_prompt_armed = true;
        self.backchannel_candidate = Some(fragment.clone());
    }

    pub fn note_output(&mut self, at_ms: u64) {
        self.silence_anchor_ms = self.silence_anchor_ms.max(at_ms);
    }

    pub fn end_turn(&mut self) {
        self.backchannel_candidate = None;
    }

    /// Backchannel for the pending fragment, at most one per fragment.
    pub fn poll_backchannel(
        &mut self,
        now_ms: u64,
        policy: &dyn BackchannelPolicy,
        config: &DialogueConfig,
    ) -> Option<AgentResponse> {
        let fragment = self.backchannel_candidate.as_ref()?;
        let pause = now_ms.saturating_sub(fragment.end_time_ms);
        let mut r = policy.decide(pause, fragment, config, &mut self.rng)?;
        r.session_time_ms = now_ms;
        self.backchannel_candidate = None;
        Some(r)
    }

    pub fn poll_silence_prompt(
        &mut self,
        now_ms: u64,
        config: &DialogueConfig,
    ) -> Option<AgentResponse> {
        if !self.silence_prompt_armed {
            return None;
        }
        let r = silence_prompt_check(self.silence_ms(now_ms), now_ms, config, &mut self.rng)?;
        self.silence_prompt_armed = false;
        Some(r)
    }

    /// Earliest time a poll could produce output, if any is pending.
    pub fn next_due(&self, policy: &dyn BackchannelPolicy, config: &DialogueConfig) -> Option<u64> {
        let silence = self
            .silence_prompt_armed
            .then(|| self.silence_anchor_ms + config.silence_prompt_ms + 1);
        let backchannel = self
            .backchannel_candidate
            .as_ref()
            .map(|f| f.end_time_ms + policy.earliest_pause_ms(f, config));
        match (silence, backchannel) {
            (Some(a), Some(b)) => Some(a.min(b)),
            (a, b) => a.or(b),
        }
    }
}
