//! Offline reference for takeover detection.
//!
//! Nothing here touches the online detector. At every evaluation point
//! (a silence tick, or an agent turn response) the windows are rebuilt by
//! scanning the log backwards from that event to the most recent control
//! change.

use unicode_normalization::UnicodeNormalization;

use crate::control::{Actor, ControlMode, EventBody, LogError, SessionEvent, SessionLog};
use crate::detector::{DetectorConfig, LengthUnit, TakeoverCondition, TakeoverPrompt};
use crate::dialogue::ResponseKind;

/// Conditions holding at one evaluation point, before cooldown and capping.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleEval {
    pub index: usize,
    pub t_ms: u64,
    pub held: Vec<TakeoverCondition>,
}

fn nfkc_trim(s: &str) -> String {
    s.nfkc().collect::<String>().trim().to_string()
}

fn turn_length(fragments: &[&str], unit: LengthUnit) -> usize {
    let joined = fragments
        .iter()
        .map(|f| nfkc_trim(f))
        .collect::<Vec<_>>()
        .join(" ");
    let text = nfkc_trim(&joined);
    match unit {
        LengthUnit::ScalarValues => text.chars().count(),
        LengthUnit::NonWhitespace => text.chars().filter(|c| !c.is_whitespace()).count(),
    }
}

fn is_turn_kind(k: ResponseKind) -> bool {
    matches!(
        k,
        ResponseKind::Assessment
            | ResponseKind::ElaboratingQuestion
            | ResponseKind::RepeatedResponse
            | ResponseKind::Formulaic
    )
}

fn is_eval_point(e: &SessionEvent) -> bool {
    match &e.body {
        EventBody::SilenceTick(_) => true,
        EventBody::Response(r) => e.actor == Actor::Agent && is_turn_kind(r.kind),
        _ => false,
    }
}

fn validate(log: &SessionLog) -> Result<(), LogError> {
    log.check_order()?;
    match log.events.first() {
        Some(SessionEvent {
            body: EventBody::SessionStart(_),
            ..
        }) => {}
        _ => return Err(LogError::MissingStart),
    }
    for e in &log.events {
        if let EventBody::Utterance(u) = &e.body {
            if u.end_time_ms > e.t_ms {
                return Err(LogError::Corrupt {
                    seq: e.seq,
                    reason: "utterance logged before it ended".into(),
                });
            }
        }
    }
    Ok(())
}

/// For each event, the index of the segment boundary it falls in (the last
/// control change at or before it, or the session start) and whether
/// detection is live there.
fn segments(events: &[SessionEvent]) -> Vec<(usize, bool)> {
    let mut out = Vec::with_capacity(events.len());
    let mut boundary = 0;
    let mut live = true;
    for (i, e) in events.iter().enumerate() {
        if let EventBody::ControlChange(c) = &e.body {
            boundary = i;
            live = c.target == ControlMode::AgentControl;
        }
        out.push((boundary, live));
    }
    out
}

fn held_at(
    events: &[SessionEvent],
    boundary: usize,
    i: usize,
    config: &DetectorConfig,
) -> Vec<TakeoverCondition> {
    let now = events[i].t_ms;
    let window = &events[boundary + 1..=i];

    // Most recent activity: the boundary itself, any utterance end, any
    // response or backchannel.
    let mut activity = events[boundary].t_ms;
    for e in window.iter().rev() {
        if e.t_ms < activity {
            break;
        }
        let v = match &e.body {
            EventBody::Utterance(u) => u.end_time_ms,
            EventBody::Response(_) | EventBody::Backchannel(_) => e.t_ms,
            _ => continue,
        };
        activity = activity.max(v);
    }

    // Completed user turns, newest first.
    let mut turns: Vec<usize> = Vec::new();
    let mut k = window.len();
    while k > 0 && turns.len() < config.short_turn_count {
        k -= 1;
        if !matches!(window[k].body, EventBody::EndOfTurn(_)) {
            continue;
        }
        let mut fragments = Vec::new();
        let mut j = k;
        while j > 0 {
            match &window[j - 1].body {
                EventBody::EndOfTurn(_) => break,
                EventBody::Utterance(u) => fragments.push(u.text.as_str()),
                _ => {}
            }
            j -= 1;
        }
        if !fragments.is_empty() {
            fragments.reverse();
            turns.push(turn_length(&fragments, config.length_unit));
        }
    }

    // Agent turn responses, newest first.
    let need = config.formulaic_run.max(config.starvation_window);
    let responses: Vec<(ResponseKind, bool)> = window
        .iter()
        .rev()
        .filter_map(|e| match &e.body {
            EventBody::Response(r) if e.actor == Actor::Agent && is_turn_kind(r.kind) => {
                Some((r.kind, r.has_sentiment))
            }
            _ => None,
        })
        .take(need)
        .collect();

    let mut held = Vec::new();
    if now - activity > config.silence_takeover_ms {
        held.push(TakeoverCondition::LongSilence);
    }
    if turns.len() == config.short_turn_count
        && turns.iter().all(|&n| n < config.short_turn_chars)
    {
        held.push(TakeoverCondition::ShortTurns);
    }
    let run = &responses[..responses.len().min(config.formulaic_run)];
    if run.len() == config.formulaic_run && run.iter().all(|r| r.0 == ResponseKind::Formulaic) {
        held.push(TakeoverCondition::ConsecutiveFormulaic);
    }
    let starve = &responses[..responses.len().min(config.starvation_window)];
    if starve.len() == config.starvation_window
        && starve
            .iter()
            .all(|&(k, s)| !s && k != ResponseKind::ElaboratingQuestion)
    {
        held.push(TakeoverCondition::NoSentimentOrQuestion);
    }
    held
}

/// Every evaluation point while the agent is in control, with the
/// conditions holding there.
pub fn oracle_conditions(
    log: &SessionLog,
    config: &DetectorConfig,
) -> Result<Vec<OracleEval>, LogError> {
    validate(log)?;
    let events = &log.events;
    let seg = segments(events);
    Ok(events
        .iter()
        .enumerate()
        .filter(|&(i, e)| seg[i].1 && is_eval_point(e))
        .map(|(i, e)| OracleEval {
            index: i,
            t_ms: e.t_ms,
            held: held_at(events, seg[i].0, i, config),
        })
        .collect())
}

/// Prompts an ideal detector would have raised on `log`.
pub fn oracle_scan(
    log: &SessionLog,
    config: &DetectorConfig,
) -> Result<Vec<TakeoverPrompt>, LogError> {
    let evals = oracle_conditions(log, config)?;
    let seg = segments(&log.events);
    let mut out: Vec<TakeoverPrompt> = Vec::new();
    let mut last: Option<(usize, u64)> = None;
    for ev in evals {
        if ev.held.is_empty() {
            continue;
        }
        let boundary = seg[ev.index].0;
        let cooling = last.is_some_and(|(idx, t)| {
            // A prompt before the latest takeover no longer counts.
            let forgotten = idx < boundary
                && log.events[idx..=boundary]
                    .iter()
                    .any(|e| e.control_target() == Some(ControlMode::OperatorControl));
            !forgotten && ev.t_ms - t <= config.prompt_cooldown_ms
        });
        if cooling {
            continue;
        }
        let mut reasons = ev.held;
        reasons.sort();
        reasons.truncate(2);
        out.push(TakeoverPrompt {
            session_time_ms: ev.t_ms,
            reasons,
        });
        last = Some((ev.index, ev.t_ms));
    }
    Ok(out)
}

/// A stretch of silence and the instant LongSilence becomes reportable in
/// it, given the prompts already logged.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SilenceDue {
    /// Earliest time a prompt may report the silence.
    pub due_ms: u64,
    /// When the silence ends (activity, takeover or session end).
    pub until_ms: u64,
}

/// Every instant at which an evaluation would first find the user silent
/// for too long with the cooldown clear. Each logged prompt inside a
/// silent stretch restarts the cooldown, yielding the next due time.
pub fn silence_due_times(
    log: &SessionLog,
    config: &DetectorConfig,
) -> Result<Vec<SilenceDue>, LogError> {
    validate(log)?;
    let events = &log.events;
    let mut out = Vec::new();
    let mut live = true;
    let mut activity = events[0].t_ms;
    let mut last_prompt: Option<u64> = None;
    // Prompts logged in the current silent stretch, in order.
    let mut stretch_prompts: Vec<u64> = Vec::new();

    let close = |out: &mut Vec<SilenceDue>,
                 activity: u64,
                 last_prompt: Option<u64>,
                 prompts: &[u64],
                 until: u64| {
        let mut cooldown_from = last_prompt;
        let mut rest = prompts.iter().copied().peekable();
        loop {
            let due = (activity + config.silence_takeover_ms + 1)
                .max(cooldown_from.map_or(0, |c| c + config.prompt_cooldown_ms + 1));
            // Any prompt raised before `due` restarts the cooldown.
            if let Some(p) = rest.next_if(|&p| p < due) {
                cooldown_from = Some(p);
                continue;
            }
            if due > until {
                return;
            }
            out.push(SilenceDue {
                due_ms: due,
                until_ms: until,
            });
            match rest.next() {
                Some(p) => cooldown_from = Some(p),
                None => return,
            }
        }
    };

    for e in events.iter().skip(1) {
        let t = e.t_ms;
        let resets = match &e.body {
            EventBody::Utterance(u) => live.then_some(u.end_time_ms.max(activity)),
            EventBody::Response(_) | EventBody::Backchannel(_) => live.then_some(t),
            EventBody::ControlChange(c) => {
                if live {
                    close(&mut out, activity, last_prompt, &stretch_prompts, t);
                }
                stretch_prompts.clear();
                live = c.target == ControlMode::AgentControl;
                last_prompt = None;
                activity = t;
                continue;
            }
            EventBody::SessionEnd(_) => {
                if live {
                    close(&mut out, activity, last_prompt, &stretch_prompts, t);
                }
                live = false;
                continue;
            }
            EventBody::TakeoverPrompt(_) => {
                stretch_prompts.push(t);
                continue;
            }
            _ => None,
        };
        if let Some(a) = resets {
            if a > activity || !stretch_prompts.is_empty() {
                close(&mut out, activity, last_prompt, &stretch_prompts, t);
                if let Some(&p) = stretch_prompts.last() {
                    last_prompt = Some(p);
                }
                stretch_prompts.clear();
            }
            activity = activity.max(a);
        }
    }
    if live {
        let end = log.end_time_ms();
        close(&mut out, activity, last_prompt, &stretch_prompts, end);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::Config;
    use crate::control::{ControlCause, ControlChangePayload, Empty, SessionStartPayload};
    use crate::dialogue::{AgentResponse, UserUtterance};

    struct LogBuilder {
        log: SessionLog,
    }

    impl LogBuilder {
        fn new() -> Self {
            let config = Config::default();
            let mut log = SessionLog::new("o", config.clone());
            log.events.push(SessionEvent {
                seq: 1,
                t_ms: 0,
                actor: Actor::System,
                body: EventBody::SessionStart(SessionStartPayload {
                    session_id: "o".into(),
                    config: Box::new(config),
                }),
            });
            Self { log }
        }

        fn push(mut self, t_ms: u64, actor: Actor, body: EventBody) -> Self {
            let seq = self.log.events.len() as u64 + 1;
            self.log.events.push(SessionEvent {
                seq,
                t_ms,
                actor,
                body,
            });
            self
        }

        fn tick(self, t: u64) -> Self {
            self.push(t, Actor::System, EventBody::SilenceTick(Empty {}))
        }

        fn turn(self, t: u64, text: &str) -> Self {
            self.push(t, Actor::User, EventBody::Utterance(UserUtterance::new(t, t, text)))
                .push(t, Actor::User, EventBody::EndOfTurn(Empty {}))
        }

        fn respond(self, t: u64, kind: ResponseKind, has_sentiment: bool) -> Self {
            self.push(
                t,
                Actor::Agent,
                EventBody::Response(AgentResponse {
                    session_time_ms: t,
                    kind,
                    text: "x".into(),
                    has_sentiment,
                    expression: None,
                    speech_ms: None,
                }),
            )
        }

        fn control(self, t: u64, target: ControlMode) -> Self {
            self.push(
                t,
                Actor::Operator,
                EventBody::ControlChange(ControlChangePayload {
                    target,
                    cause: ControlCause::Toggle,
                }),
            )
        }
    }

    fn scan(b: LogBuilder) -> Vec<(u64, Vec<TakeoverCondition>)> {
        oracle_scan(&b.log, &DetectorConfig::default())
            .unwrap()
            .into_iter()
            .map(|p| (p.session_time_ms, p.reasons))
            .collect()
    }

    use TakeoverCondition::*;

    #[test]
    fn silence_only_log_gives_long_silence_prompts() {
        let mut b = LogBuilder::new();
        for t in (250..=30_000).step_by(250) {
            b = b.tick(t);
        }
        let p = scan(b);
        assert_eq!(
            p,
            vec![
                (4250, vec![LongSilence]),
                (14_500, vec![LongSilence]),
                (24_750, vec![LongSilence]),
            ]
        );
    }

    #[test]
    fn sentiment_every_third_response_never_starves() {
        let mut b = LogBuilder::new();
        for i in 0..30u64 {
            let t = 1000 + i * 1000;
            let kind = if i % 3 == 0 {
                ResponseKind::Assessment
            } else {
                ResponseKind::RepeatedResponse
            };
            b = b
                .turn(t, "a perfectly ordinary sentence here")
                .respond(t, kind, i % 3 == 0);
        }
        assert!(scan(b).iter().all(|(_, r)| !r.contains(&NoSentimentOrQuestion)));
    }

    #[test]
    fn mixed_window_is_starved_but_not_a_formulaic_run() {
        let b = LogBuilder::new()
            .respond(100, ResponseKind::RepeatedResponse, false)
            .respond(200, ResponseKind::Formulaic, false)
            .respond(300, ResponseKind::RepeatedResponse, false)
            .respond(400, ResponseKind::Formulaic, false);
        assert_eq!(scan(b), vec![(400, vec![NoSentimentOrQuestion])]);
    }

    #[test]
    fn turns_span_fragments_until_end_of_turn() {
        // "Pasta" + "carbonara." joins to 16 scalars; with "It was fine." both short.
        let b = LogBuilder::new()
            .push(100, Actor::User, EventBody::Utterance(UserUtterance::new(100, 100, "Pasta")))
            .push(200, Actor::User, EventBody::Utterance(UserUtterance::new(200, 200, " carbonara. ")))
            .push(200, Actor::User, EventBody::EndOfTurn(Empty {}))
            .turn(300, "It was fine.")
            .respond(300, ResponseKind::RepeatedResponse, false);
        assert_eq!(scan(b), vec![(300, vec![ShortTurns])]);
    }

    #[test]
    fn takeover_forgets_windows_and_cooldown() {
        let b = LogBuilder::new()
            .turn(100, "hi")
            .turn(200, "yo")
            .respond(200, ResponseKind::RepeatedResponse, false)
            .control(300, ControlMode::OperatorControl)
            .tick(5000)
            .control(6000, ControlMode::AgentControl)
            .tick(9000)
            .tick(10_001)
            .turn(10_100, "ok");
        assert_eq!(
            scan(b),
            vec![(200, vec![ShortTurns]), (10_001, vec![LongSilence])]
        );
    }

    #[test]
    fn conditions_report_every_holding_rule() {
        let mut b = LogBuilder::new().turn(10, "a").turn(20, "b");
        for t in [30, 40, 50, 60] {
            b = b.respond(t, ResponseKind::Formulaic, false);
        }
        let b = b.tick(4061);
        let evals = oracle_conditions(&b.log, &DetectorConfig::default()).unwrap();
        let last = evals.last().unwrap();
        assert_eq!(last.t_ms, 4061);
        assert_eq!(
            last.held,
            vec![LongSilence, ShortTurns, ConsecutiveFormulaic, NoSentimentOrQuestion]
        );
    }

    #[test]
    fn rejects_logs_without_start() {
        let mut b = LogBuilder::new().tick(5);
        b.log.events.remove(0);
        for (i, e) in b.log.events.iter_mut().enumerate() {
            e.seq = i as u64 + 1;
        }
        assert!(matches!(
            oracle_scan(&b.log, &DetectorConfig::default()),
            Err(LogError::MissingStart)
        ));
    }

    #[test]
    fn silence_due_times_follow_logged_prompts() {
        let script = crate::sim::Script::new("due")
            .user(200, "We went to the beach")
            .end_turn(300)
            .ending_at(30_000);
        let config = Config::default();
        let log = crate::sim::run_script(&script, &config).unwrap();
        let due: Vec<u64> = silence_due_times(&log, &config.detector)
            .unwrap()
            .iter()
            .map(|d| d.due_ms)
            .collect();
        assert_eq!(due, vec![4301, 14_501, 24_751]);
        let prompts: Vec<u64> = log.prompts().iter().map(|p| p.0).collect();
        assert_eq!(prompts, vec![4500, 14_750, 25_000]);
    }
}
