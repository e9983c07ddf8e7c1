//! Per-session and corpus metrics derived from logs.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::control::{Actor, ControlMode, EventBody, SessionLog};
use crate::detector::TakeoverCondition;
use crate::dialogue::ResponseKind;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionMetrics {
    pub session_id: String,
    pub takeover_count: u64,
    /// Time the operator spent speaking, counted once where utterances
    /// overlap and only while the operator held control.
    pub operator_speech_ms: u64,
    pub per_condition_prompt_counts: BTreeMap<TakeoverCondition, u64>,
    /// Zero when there were no takeovers.
    pub mean_speech_ms_per_takeover: f64,
    pub session_length_ms: u64,
    /// Total time under operator control.
    pub operator_control_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusSummary {
    pub sessions: usize,
    pub median_takeovers: f64,
    pub min_takeovers: u64,
    pub max_takeovers: u64,
    pub mean_operator_speech_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MetricsError {
    #[error("cannot summarize an empty corpus")]
    EmptyInput,
}

/// Merges overlapping `[start, end)` spans and returns their total length.
fn union_length(mut spans: Vec<(u64, u64)>) -> u64 {
    spans.retain(|&(a, b)| b > a);
    spans.sort_unstable();
    let mut total = 0;
    let mut cur: Option<(u64, u64)> = None;
    for (a, b) in spans {
        match cur {
            Some((s, e)) if a <= e => cur = Some((s, e.max(b))),
            Some((s, e)) => {
                total += e - s;
                cur = Some((a, b));
            }
            None => cur = Some((a, b)),
        }
    }
    total + cur.map_or(0, |(s, e)| e - s)
}

pub fn compute_metrics(log: &SessionLog) -> SessionMetrics {
    let start = log.events.first().map_or(0, |e| e.t_ms);
    let end = log.end_time_ms();

    let mut takeover_count = 0;
    let mut per_condition: BTreeMap<TakeoverCondition, u64> =
        TakeoverCondition::ALL.iter().map(|&c| (c, 0)).collect();
    let mut control_spans = Vec::new();
    let mut opened: Option<u64> = None;
    // (control span index, speech start, speech end)
    let mut speech = Vec::new();

    for e in &log.events {
        match &e.body {
            EventBody::ControlChange(c) => match c.target {
                ControlMode::OperatorControl => {
                    takeover_count += 1;
                    opened = Some(e.t_ms);
                }
                ControlMode::AgentControl => {
                    if let Some(s) = opened.take() {
                        control_spans.push((s, e.t_ms));
                    }
                }
            },
            EventBody::TakeoverPrompt(p) => {
                for r in &p.reasons {
                    *per_condition.entry(*r).or_default() += 1;
                }
            }
            EventBody::Response(r)
                if e.actor == Actor::Operator && r.kind == ResponseKind::OperatorSpeech =>
            {
                let len = r.speech_ms.unwrap_or(0);
                speech.push((e.t_ms, e.t_ms.saturating_add(len)));
            }
            _ => {}
        }
    }
    if let Some(s) = opened {
        control_spans.push((s, end.max(s)));
    }

    let clipped: Vec<(u64, u64)> = speech
        .iter()
        .flat_map(|&(a, b)| {
            control_spans
                .iter()
                .map(move |&(s, e)| (a.max(s), b.min(e)))
        })
        .collect();
    let operator_speech_ms = union_length(clipped);
    let operator_control_ms = control_spans.iter().map(|(s, e)| e - s).sum();

    SessionMetrics {
        session_id: log.session_id.clone(),
        takeover_count,
        operator_speech_ms,
        per_condition_prompt_counts: per_condition,
        mean_speech_ms_per_takeover: if takeover_count == 0 {
            0.0
        } else {
            operator_speech_ms as f64 / takeover_count as f64
        },
        session_length_ms: end.saturating_sub(start),
        operator_control_ms,
    }
}

/// Median of integers; the mean of the middle two for even counts.
pub fn median(values: &[u64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_unstable();
    let n = v.len();
    Some(if n % 2 == 1 {
        v[n / 2] as f64
    } else {
        // Exact: the sum of two u64 fits in u128 and halving is exact in f64
        // for any count that fits in 53 bits.
        ((v[n / 2 - 1] as u128 + v[n / 2] as u128) as f64) / 2.0
    })
}

pub fn summarize(metrics: &[SessionMetrics]) -> Result<CorpusSummary, MetricsError> {
    let counts: Vec<u64> = metrics.iter().map(|m| m.takeover_count).collect();
    let median_takeovers = median(&counts).ok_or(MetricsError::EmptyInput)?;
    let speech: u128 = metrics.iter().map(|m| m.operator_speech_ms as u128).sum();
    Ok(CorpusSummary {
        sessions: metrics.len(),
        median_takeovers,
        min_takeovers: *counts.iter().min().expect("non-empty"),
        max_takeovers: *counts.iter().max().expect("non-empty"),
        mean_operator_speech_ms: speech as f64 / metrics.len() as f64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::Config;
    use crate::sim::{run_script, Script};

    fn with_count(n: u64) -> SessionMetrics {
        SessionMetrics {
            session_id: format!("s{n}"),
            takeover_count: n,
            operator_speech_ms: 0,
            per_condition_prompt_counts: BTreeMap::new(),
            mean_speech_ms_per_takeover: 0.0,
            session_length_ms: 0,
            operator_control_ms: 0,
        }
    }

    #[test]
    fn even_median_takes_middle_mean() {
        let c: Vec<_> = [7, 2, 5, 4].into_iter().map(with_count).collect();
        assert_eq!(summarize(&c).unwrap().median_takeovers, 4.5);
    }

    #[test]
    fn range_endpoints() {
        let c: Vec<_> = [0, 14].into_iter().map(with_count).collect();
        let s = summarize(&c).unwrap();
        assert_eq!((s.min_takeovers, s.max_takeovers), (0, 14));
        assert_eq!(s.median_takeovers, 7.0);
    }

    #[test]
    fn empty_corpus_is_an_error() {
        assert_eq!(summarize(&[]), Err(MetricsError::EmptyInput));
    }

    #[test]
    fn one_takeover_with_three_seconds_of_speech() {
        let script = Script::new("m")
            .toggle(1000)
            .operator_say(1500, "Tell me more about the beach", Some(3000))
            .toggle(6000)
            .ending_at(8000);
        let m = compute_metrics(&run_script(&script, &Config::default()).unwrap());
        assert_eq!(m.takeover_count, 1);
        assert_eq!(m.operator_speech_ms, 3000);
        assert_eq!(m.mean_speech_ms_per_takeover, 3000.0);
        assert_eq!(m.operator_control_ms, 5000);
        assert_eq!(m.session_length_ms, 8000);
    }

    #[test]
    fn speech_is_clipped_to_control_and_overlap_counted_once() {
        let script = Script::new("m")
            .toggle(1000)
            .operator_say(1000, "a", Some(1500))
            .operator_say(2000, "b", Some(1500))
            .toggle(3000)
            .ending_at(4000);
        let m = compute_metrics(&run_script(&script, &Config::default()).unwrap());
        // 1000..3500 merged, cut at the return of control at 3000.
        assert_eq!(m.operator_speech_ms, 2000);
    }

    #[test]
    fn default_speech_length_is_per_character() {
        let script = Script::new("m")
            .toggle(0)
            .operator_say(100, "ok", None)
            .ending_at(10_000);
        let m = compute_metrics(&run_script(&script, &Config::default()).unwrap());
        assert_eq!(m.operator_speech_ms, 120);
    }

    #[test]
    fn union_of_spans() {
        assert_eq!(union_length(vec![(0, 10), (5, 15), (20, 25), (25, 30), (3, 3)]), 25);
    }
}
