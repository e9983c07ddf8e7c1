//! Random session scripts.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::script::{Action, Script, ScriptStep};
use crate::control::Expression;
use crate::dialogue::{Annotation, Polarity};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FuzzProfile {
    pub min_session_ms: u64,
    pub max_session_ms: u64,
    /// Silence before a user turn, uniform in this range.
    pub gap_ms: (u64, u64),
    /// Words per utterance fragment.
    pub words: (usize, usize),
    /// Chance that a turn is split into several fragments.
    pub fragment_prob: f64,
    pub focus_prob: f64,
    pub sentiment_prob: f64,
    /// Chance per turn that the operator takes over afterwards.
    pub takeover_prob: f64,
    /// Chance that a step lands exactly on a tick boundary.
    pub snap_prob: f64,
    pub tick_period_ms: u64,
}

impl Default for FuzzProfile {
    fn default() -> Self {
        Self {
            min_session_ms: 60_000,
            max_session_ms: 600_000,
            gap_ms: (100, 9000),
            words: (1, 14),
            fragment_prob: 0.2,
            focus_prob: 0.4,
            sentiment_prob: 0.25,
            takeover_prob: 0.08,
            snap_prob: 0.2,
            tick_period_ms: 250,
        }
    }
}

const FILLER: &[&str] = &[
    "so", "and", "then", "we", "I", "it", "was", "really", "the", "a", "went", "to", "there",
    "with", "my", "friend", "after", "that", "kind", "of", "just", "maybe", "yesterday",
];

const TOPICS: &[(&str, Option<&str>)] = &[
    ("ramen", Some("food")),
    ("carbonara", Some("food")),
    ("sushi", Some("food")),
    ("Kyoto", Some("place")),
    ("Philippines", Some("place")),
    ("beach", Some("place")),
    ("tennis", Some("activity")),
    ("hiking", Some("activity")),
    ("sister", Some("person")),
    ("train", None),
    ("bike", None),
    ("weather", None),
];

const OPERATOR_LINES: &[&str] = &[
    "Tell me more about the beach",
    "That sounds lovely, what happened next?",
    "ok",
    "How did your friend feel about it?",
    "Really? I didn't know that!",
];

struct Gen {
    rng: ChaCha8Rng,
    profile: FuzzProfile,
    steps: Vec<ScriptStep>,
    t: u64,
}

impl Gen {
    fn advance(&mut self, lo: u64, hi: u64) {
        let mut t = self.t + self.rng.gen_range(lo..=hi);
        let p = self.profile.tick_period_ms;
        if self.rng.gen_bool(self.profile.snap_prob) {
            t = t.div_ceil(p) * p;
        }
        self.t = t;
    }

    fn push(&mut self, action: Action) {
        self.steps.push(ScriptStep {
            at_ms: self.t,
            action,
        });
    }

    fn fragment(&mut self) -> Action {
        let (lo, hi) = self.profile.words;
        let n = self.rng.gen_range(lo..=hi);
        let mut words: Vec<&str> = (0..n)
            .map(|_| *FILLER.choose(&mut self.rng).expect("non-empty"))
            .collect();
        let mut annotations = Vec::new();
        if self.rng.gen_bool(self.profile.focus_prob) {
            let (word, category) = *TOPICS.choose(&mut self.rng).expect("non-empty");
            let at = self.rng.gen_range(0..=words.len());
            words.insert(at, word);
            annotations.push(Annotation::FocusWord {
                value: word.to_string(),
                confidence: self.rng.gen_range(0..=100) as f64 / 100.0,
                category: category.map(str::to_string),
            });
        }
        if self.rng.gen_bool(self.profile.sentiment_prob) {
            let value = if self.rng.gen_bool(0.5) {
                Polarity::Positive
            } else {
                Polarity::Negative
            };
            annotations.push(Annotation::Sentiment {
                value,
                confidence: self.rng.gen_range(0..=100) as f64 / 100.0,
            });
        }
        let duration_ms = Some(words.len() as u64 * 250);
        Action::UserSay {
            text: words.join(" "),
            annotations,
            duration_ms,
        }
    }

    fn user_turn(&mut self) {
        let (lo, hi) = self.profile.gap_ms;
        self.advance(lo, hi);
        let fragments = if self.rng.gen_bool(self.profile.fragment_prob) {
            self.rng.gen_range(2..=3)
        } else {
            1
        };
        for i in 0..fragments {
            if i > 0 {
                self.advance(100, 1500);
            }
            let f = self.fragment();
            self.push(f);
        }
        self.advance(0, 600);
        self.push(Action::EndOfTurn);
    }

    fn takeover(&mut self) {
        self.advance(0, 3000);
        self.push(Action::OperatorToggle);
        for _ in 0..self.rng.gen_range(0..=3) {
            self.advance(200, 4000);
            if self.rng.gen_bool(0.2) {
                let e = *Expression::ALL.choose(&mut self.rng).expect("non-empty");
                self.push(Action::OperatorExpression(e));
                continue;
            }
            let text = OPERATOR_LINES.choose(&mut self.rng).expect("non-empty").to_string();
            let expression = self
                .rng
                .gen_bool(0.5)
                .then(|| *Expression::ALL.choose(&mut self.rng).expect("non-empty"));
            let speech_ms = self.rng.gen_bool(0.5).then(|| self.rng.gen_range(500..=4000));
            self.push(Action::OperatorSay {
                text,
                expression,
                speech_ms,
            });
            if self.rng.gen_bool(0.5) {
                self.user_turn();
            }
        }
        self.advance(0, 5000);
        self.push(Action::OperatorToggle);
    }
}

/// Deterministic random script for `seed`.
pub fn fuzz_script(seed: u64, profile: &FuzzProfile) -> Script {
    let mut g = Gen {
        rng: ChaCha8Rng::seed_from_u64(seed),
        profile: profile.clone(),
        steps: Vec::new(),
        t: 0,
    };
    let length = g
        .rng
        .gen_range(profile.min_session_ms..=profile.max_session_ms);
    while g.t < length {
        if g.rng.gen_bool(0.05) {
            g.advance(1, 6000);
            g.push(Action::Wait);
        }
        g.user_turn();
        if g.rng.gen_bool(profile.takeover_prob) {
            g.takeover();
        }
    }
    let end = g.t.max(length);
    Script {
        session_id: format!("fuzz-{seed}"),
        steps: g.steps,
        end_ms: Some(end),
    }
}
