//! Scripted sessions on a virtual clock.
//!
//! [`run_script`] drives a full [`Session`] from a [`Script`]. Time jumps
//! straight to each step and to each tick boundary (multiples of
//! `server.tick_period_ms`). Steps run before the tick that shares their
//! timestamp, so an operator takeover at a tick boundary suppresses a
//! prompt due at that instant.
//!
//! [`fuzz`] generates random scripts and [`oracle`] holds the offline
//! reference detector.

pub mod fuzz;
pub mod oracle;
mod script;

pub use fuzz::{fuzz_script, FuzzProfile};
pub use oracle::{oracle_conditions, oracle_scan, silence_due_times, OracleEval, SilenceDue};
pub use script::{Action, Script, ScriptError, ScriptStep};

use crate::clock::{Clock, VirtualClock};
use crate::config::Config;
use crate::control::SessionLog;
use crate::session::{Input, Session};

pub fn run_script(script: &Script, config: &Config) -> Result<SessionLog, ScriptError> {
    run_script_with_clock(script, config, &VirtualClock::new(0))
}

/// Same as [`run_script`] on a caller-supplied clock; the clock ends at
/// the session end time.
pub fn run_script_with_clock(
    script: &Script,
    config: &Config,
    clock: &VirtualClock,
) -> Result<SessionLog, ScriptError> {
    Ok(drive(script, config, clock)?.into_log())
}

/// Runs a script and returns the finished session itself.
pub fn run_script_session(script: &Script, config: &Config) -> Result<Session, ScriptError> {
    drive(script, config, &VirtualClock::new(0))
}

fn drive(script: &Script, config: &Config, clock: &VirtualClock) -> Result<Session, ScriptError> {
    script.validate()?;
    let start = clock.now_ms();
    let period = config.server.tick_period_ms;
    let end = script.end_time_ms();
    if let Some(first) = script.steps.first() {
        if first.at_ms < start {
            return Err(ScriptError::NonMonotonic { index: 0 });
        }
    }

    let mut session = Session::new(script.session_id.clone(), config.clone());
    session
        .start(start)
        .map_err(|source| ScriptError::Engine { index: 0, source })?;

    let steps = &script.steps;
    let mut i = 0;
    let mut next_tick = (start / period + 1) * period;
    loop {
        let next_step = steps.get(i).map(|s| s.at_ms);
        let t = next_step.map_or(next_tick, |s| s.min(next_tick));
        if t > end {
            break;
        }
        clock.advance_to(t);
        let mut tick = t == next_tick;
        while let Some(step) = steps.get(i).filter(|s| s.at_ms == t) {
            if let Some(input) = step.action.to_input(t) {
                session
                    .handle(t, input)
                    .map_err(|source| ScriptError::Engine { index: i, source })?;
            } else {
                tick = true;
            }
            i += 1;
        }
        if tick {
            session
                .handle(clock.now_ms(), Input::Tick)
                .map_err(|source| ScriptError::Engine { index: i, source })?;
        }
        if t == next_tick {
            next_tick += period;
        }
    }
    clock.advance_to(end);
    session
        .handle(end, Input::End)
        .map_err(|source| ScriptError::Engine { index: steps.len(), source })?;
    Ok(session)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::control::EventBody;
    use crate::detector::TakeoverCondition;
    use crate::dialogue::ResponseKind;

    fn prompts(log: &SessionLog) -> Vec<(u64, Vec<TakeoverCondition>)> {
        log.prompts()
    }

    #[test]
    fn empty_eight_minute_session_schedule() {
        let script = Script::new("quiet").ending_at(480_000);
        let config = Config::default();
        let log = run_script(&script, &config).unwrap();

        // LongSilence first crosses at the 4250 ms tick; afterwards the
        // cooldown (strictly more than 10 s) pushes each repeat to the
        // first tick past last + 10000.
        let mut expected = vec![4250u64];
        while let Some(&last) = expected.last() {
            let next = (last + config.detector.prompt_cooldown_ms) / 250 * 250 + 250;
            if next > 480_000 {
                break;
            }
            expected.push(next);
        }
        let got: Vec<u64> = prompts(&log).iter().map(|(t, _)| *t).collect();
        assert_eq!(got, expected);
        assert!(prompts(&log)
            .iter()
            .all(|(_, r)| r == &vec![TakeoverCondition::LongSilence]));

        let silence_prompts: Vec<u64> = log
            .events
            .iter()
            .filter_map(|e| match &e.body {
                EventBody::Response(r) if r.kind == ResponseKind::SilencePrompt => Some(e.t_ms),
                _ => None,
            })
            .collect();
        assert_eq!(silence_prompts, vec![5250]);
        assert_eq!(oracle_scan(&log, &config.detector).unwrap().len(), expected.len());
    }

    #[test]
    fn short_carbonara_turns_notify() {
        let script = Script::new("carbonara")
            .user(1000, "Pasta carbonara.")
            .end_turn(1000)
            .user(3000, "It was fine.")
            .end_turn(3000)
            .ending_at(3500);
        let log = run_script(&script, &Config::default()).unwrap();
        let p = prompts(&log);
        assert_eq!(p.len(), 1);
        assert_eq!(p[0].0, 3000);
        assert_eq!(p[0].1, vec![TakeoverCondition::ShortTurns]);
    }

    #[test]
    fn takeover_at_tick_boundary_suppresses_prompt() {
        let script = Script::new("tie").toggle(4250).ending_at(4500);
        let log = run_script(&script, &Config::default()).unwrap();
        assert!(prompts(&log).is_empty());
    }

    #[test]
    fn wait_step_ticks_off_boundary() {
        let script = Script::new("w").wait(4001).ending_at(4100);
        let log = run_script(&script, &Config::default()).unwrap();
        assert_eq!(prompts(&log), vec![(4001, vec![TakeoverCondition::LongSilence])]);
    }

    #[test]
    fn reruns_are_byte_identical() {
        let script = fuzz_script(7, &FuzzProfile::default());
        let a = run_script(&script, &Config::default()).unwrap().to_jsonl();
        let b = run_script(&script, &Config::default()).unwrap().to_jsonl();
        assert_eq!(a, b);
    }

    #[test]
    fn clock_ends_at_session_end() {
        let clock = VirtualClock::new(0);
        let script = Script::new("c").user(700, "hello there").end_turn(800).ending_at(2000);
        run_script_with_clock(&script, &Config::default(), &clock).unwrap();
        assert_eq!(clock.now_ms(), 2000);
    }

    #[test]
    fn operator_speech_outside_control_is_a_script_error() {
        let script = Script::new("bad").toggle(100).toggle(200).operator_say(300, "hi", None);
        match run_script(&script, &Config::default()) {
            Err(ScriptError::IllegalOperatorAction { index }) => assert_eq!(index, 2),
            other => panic!("{other:?}"),
        }
    }
}
