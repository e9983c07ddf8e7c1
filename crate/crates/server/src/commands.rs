//! Batch verbs behind the CLI: simulate, replay and analyze.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use listening_core::analytics::{load_ratings, takeover_correlation_report, CorrelationReport, MeasureSchema};
use listening_core::metrics::{compute_metrics, summarize, CorpusSummary, SessionMetrics};
use listening_core::session::verify_replay;
use listening_core::sim::{fuzz_script, run_script, FuzzProfile, Script};
use listening_core::{Config, SessionLog};
use serde::{Deserialize, Serialize};

pub fn load_config(path: Option<&Path>) -> anyhow::Result<Config> {
    match path {
        Some(p) => Config::load(p).with_context(|| format!("loading config {}", p.display())),
        None => Ok(Config::default()),
    }
}

/// Runs one script file and writes its log.
pub fn simulate(script: &Path, config: &Config, out: &Path) -> anyhow::Result<SessionLog> {
    let script = Script::load(script).with_context(|| format!("reading {}", script.display()))?;
    let log = run_script(&script, config)?;
    log.save(out)?;
    Ok(log)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub seed: u64,
    pub session_id: String,
    pub script: String,
    pub log: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub profile: FuzzProfile,
    pub seeds: Vec<u64>,
    pub sessions: Vec<ManifestEntry>,
}

/// Generates `count` fuzzed sessions from `first_seed` under `out_dir`,
/// each as a script plus its log, and a `manifest.json` listing them.
pub fn fuzz_corpus(
    first_seed: u64,
    count: u64,
    profile: &FuzzProfile,
    config: &Config,
    out_dir: &Path,
) -> anyhow::Result<Manifest> {
    std::fs::create_dir_all(out_dir)?;
    let mut sessions = Vec::new();
    for seed in first_seed..first_seed + count {
        let script = fuzz_script(seed, profile);
        let log = run_script(&script, config)?;
        let script_name = format!("{}.script.jsonl", script.session_id);
        let log_name = format!("{}.jsonl", script.session_id);
        std::fs::write(out_dir.join(&script_name), script.to_jsonl())?;
        log.save(&out_dir.join(&log_name))?;
        sessions.push(ManifestEntry {
            seed,
            session_id: script.session_id.clone(),
            script: script_name,
            log: log_name,
        });
    }
    let manifest = Manifest {
        profile: profile.clone(),
        seeds: (first_seed..first_seed + count).collect(),
        sessions,
    };
    std::fs::write(
        out_dir.join("manifest.json"),
        serde_json::to_string_pretty(&manifest)? + "\n",
    )?;
    Ok(manifest)
}

#[derive(Debug, Clone, Serialize)]
pub struct ReplaySummary {
    pub session_id: String,
    pub events: usize,
    pub final_mode: listening_core::ControlMode,
    pub final_time_ms: u64,
    pub ended: bool,
    pub metrics: SessionMetrics,
    pub verified: bool,
}

/// Replays a log file. With `verify`, every derived event must match and
/// the file must re-serialize to identical bytes.
pub fn replay(path: &Path, verify: bool) -> anyhow::Result<ReplaySummary> {
    let bytes = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let log = SessionLog::from_jsonl(&bytes)?;
    let session = if verify {
        let s = verify_replay(&log)?;
        if log.to_jsonl() != bytes {
            bail!("{} does not re-serialize byte for byte", path.display());
        }
        s
    } else {
        listening_core::session::replay(&log)?
    };
    let state = session.state();
    Ok(ReplaySummary {
        session_id: log.session_id.clone(),
        events: log.events.len(),
        final_mode: state.mode,
        final_time_ms: state.now_ms,
        ended: state.ended,
        metrics: compute_metrics(session.log()),
        verified: verify,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub summary: CorpusSummary,
    pub sessions: Vec<SessionMetrics>,
    pub correlation: Option<CorrelationReport>,
}

/// Log files (`*.jsonl`, excluding scripts) in `dir`, sorted by name.
pub fn log_files(dir: &Path) -> anyhow::Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .with_context(|| format!("listing {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            let name = p.file_name().and_then(|n| n.to_str()).unwrap_or("");
            name.ends_with(".jsonl") && !name.ends_with(".script.jsonl")
        })
        .collect();
    files.sort();
    Ok(files)
}

pub fn analyze(
    logs_dir: &Path,
    ratings: Option<&Path>,
    schema: Option<&Path>,
) -> anyhow::Result<AnalysisReport> {
    let mut sessions = Vec::new();
    for path in log_files(logs_dir)? {
        let log = SessionLog::load(&path).with_context(|| format!("reading {}", path.display()))?;
        sessions.push(compute_metrics(&log));
    }
    let summary = summarize(&sessions).with_context(|| format!("no logs in {}", logs_dir.display()))?;
    let correlation = match ratings {
        Some(r) => {
            let schema = match schema {
                Some(s) => MeasureSchema::load(s)?,
                None => MeasureSchema::default(),
            };
            let records = load_ratings(r)?;
            Some(takeover_correlation_report(&sessions, &records, &schema)?)
        }
        None => None,
    };
    Ok(AnalysisReport {
        summary,
        sessions,
        correlation,
    })
}
