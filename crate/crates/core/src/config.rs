//! Engine configuration.
//!
//! One JSON document with four sections: `dialogue`, `detector`, `server`
//! and `pools`. Unknown keys are rejected at every level. Missing sections
//! or keys fall back to the shipped defaults.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::detector::{DetectorConfig, TakeoverCondition};
use crate::dialogue::{DialogueConfig, Pools, QuestionTemplate, PLACEHOLDER};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("failed to read config {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid config JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

/// Explanation strings shown next to each takeover reason on the console.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReasonText {
    pub long_silence: String,
    pub short_turns: String,
    pub consecutive_formulaic: String,
    pub no_sentiment_or_question: String,
}

impl Default for ReasonText {
    fn default() -> Self {
        Self {
            long_silence: "The user has been silent for a long time.".into(),
            short_turns: "The user's last turns were very short.".into(),
            consecutive_formulaic: "The agent keeps giving formulaic responses.".into(),
            no_sentiment_or_question: "Recent agent responses had no sentiment or questions."
                .into(),
        }
    }
}

impl ReasonText {
    pub fn get(&self, condition: TakeoverCondition) -> &str {
        match condition {
            TakeoverCondition::LongSilence => &self.long_silence,
            TakeoverCondition::ShortTurns => &self.short_turns,
            TakeoverCondition::ConsecutiveFormulaic => &self.consecutive_formulaic,
            TakeoverCondition::NoSentimentOrQuestion => &self.no_sentiment_or_question,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServerConfig {
    pub tick_period_ms: u64,
    /// How long control stays with a disconnected operator before it
    /// reverts to the agent.
    pub operator_grace_ms: u64,
    /// Speaking-time proxy for typed operator speech without a declared duration.
    pub speech_ms_per_char: u64,
    pub reason_text: ReasonText,
}

impl Default for ServerConfig {
    fn default() -> Self {
        Self {
            tick_period_ms: 250,
            operator_grace_ms: 5000,
            speech_ms_per_char: 60,
            reason_text: ReasonText::default(),
        }
    }
}

/// Scalar part of the `dialogue` section. Pools live in their own section
/// on disk but travel with [`DialogueConfig`] at runtime.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct DialogueSection {
    asr_confidence_min: f64,
    silence_prompt_ms: u64,
    backchannel_pause_ms: u64,
    rng_seed: u64,
}

impl Default for DialogueSection {
    fn default() -> Self {
        let d = DialogueConfig::default();
        Self {
            asr_confidence_min: d.asr_confidence_min,
            silence_prompt_ms: d.silence_prompt_ms,
            backchannel_pause_ms: d.backchannel_pause_ms,
            rng_seed: d.rng_seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct ConfigFile {
    dialogue: DialogueSection,
    detector: DetectorConfig,
    server: ServerConfig,
    pools: Pools,
}

impl Default for ConfigFile {
    fn default() -> Self {
        Config::default().into()
    }
}

/// Full engine configuration, as embedded in every session log.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(try_from = "ConfigFile", into = "ConfigFile")]
pub struct Config {
    pub dialogue: DialogueConfig,
    pub detector: DetectorConfig,
    pub server: ServerConfig,
}

impl From<Config> for ConfigFile {
    fn from(c: Config) -> Self {
        let DialogueConfig {
            asr_confidence_min,
            silence_prompt_ms,
            backchannel_pause_ms,
            rng_seed,
            pools,
        } = c.dialogue;
        ConfigFile {
            dialogue: DialogueSection {
                asr_confidence_min,
                silence_prompt_ms,
                backchannel_pause_ms,
                rng_seed,
            },
            detector: c.detector,
            server: c.server,
            pools,
        }
    }
}

impl TryFrom<ConfigFile> for Config {
    type Error = ConfigError;

    fn try_from(f: ConfigFile) -> Result<Self, ConfigError> {
        let config = Config {
            dialogue: DialogueConfig {
                asr_confidence_min: f.dialogue.asr_confidence_min,
                silence_prompt_ms: f.dialogue.silence_prompt_ms,
                backchannel_pause_ms: f.dialogue.backchannel_pause_ms,
                rng_seed: f.dialogue.rng_seed,
                pools: f.pools,
            },
            detector: f.detector,
            server: f.server,
        };
        config.validate()?;
        Ok(config)
    }
}

impl Config {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text)
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let d = &self.dialogue;
        let bad = |msg: &str| Err(ConfigError::Invalid(msg.to_string()));
        if !(0.0..=1.0).contains(&d.asr_confidence_min) {
            return bad("dialogue.asr_confidence_min must lie in [0, 1]");
        }
        if d.silence_prompt_ms == 0 {
            return bad("dialogue.silence_prompt_ms must be positive");
        }
        if d.backchannel_pause_ms == 0 {
            return bad("dialogue.backchannel_pause_ms must be positive");
        }
        let p = &d.pools;
        let pools: [(&str, usize); 8] = [
            ("formulaic", p.formulaic.len()),
            ("assessment_positive", p.assessment_positive.len()),
            ("assessment_negative", p.assessment_negative.len()),
            ("question_templates", p.question_templates.len()),
            ("repeated_templates", p.repeated_templates.len()),
            ("exploratory_questions", p.exploratory_questions.len()),
            ("formal_backchannels", p.formal_backchannels.len()),
            ("reactive_backchannels", p.reactive_backchannels.len()),
        ];
        for (name, len) in pools {
            if len == 0 {
                return Err(ConfigError::Invalid(format!("pools.{name} must not be empty")));
            }
        }
        let templates = p
            .question_templates
            .iter()
            .map(|QuestionTemplate { template, .. }| template)
            .chain(&p.repeated_templates);
        for t in templates {
            if !t.contains(PLACEHOLDER) {
                return Err(ConfigError::Invalid(format!(
                    "template {t:?} has no {PLACEHOLDER} placeholder"
                )));
            }
        }
        let det = &self.detector;
        if det.silence_takeover_ms == 0
            || det.short_turn_chars == 0
            || det.short_turn_count == 0
            || det.formulaic_run == 0
            || det.starvation_window == 0
        {
            return bad("detector thresholds must be positive");
        }
        if self.server.tick_period_ms == 0 {
            return bad("server.tick_period_ms must be positive");
        }
        Ok(())
    }
}
