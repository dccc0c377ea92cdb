//! Run directory layout:
//!
//! ```text
//! config.echo          the experiment config, re-runnable as-is
//! rounds.ndrecords     one JSON round record per line
//! models/              initial, global and per-participant final models
//! exchange.transcript  one JSON exchange transcript per line
//! metrics.final        JSON summary: participants, noise, final metrics
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{AutoRounds, Experiment, ExperimentConfig};
use crate::engine::{FederationConfig, FinalMetrics, ParticipantSummary, RoundRecord, RunMode};
use crate::error::{Error, Result};
use crate::exchange::ExchangeTranscript;

pub const CONFIG_ECHO: &str = "config.echo";
pub const ROUNDS: &str = "rounds.ndrecords";
pub const MODELS: &str = "models";
pub const TRANSCRIPT: &str = "exchange.transcript";
pub const METRICS: &str = "metrics.final";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FinalSummary {
    pub mode: RunMode,
    pub rounds: usize,
    pub auto_rounds: Option<AutoRounds>,
    pub federation: FederationConfig,
    pub participants: Vec<ParticipantSummary>,
    /// Realized injected noise ratio per participant; `None` when clean.
    pub injected_noise: Vec<Option<f64>>,
    pub metrics: FinalMetrics,
}

pub fn summary(exp: &Experiment) -> FinalSummary {
    FinalSummary {
        mode: exp.report.mode,
        rounds: exp.report.records.len(),
        auto_rounds: exp.auto_rounds.clone(),
        federation: exp.federation.clone(),
        participants: exp.report.participants.clone(),
        injected_noise: exp
            .noise
            .iter()
            .map(|n| n.as_ref().map(|r| r.overall_ratio()))
            .collect(),
        metrics: exp.report.final_metrics.clone(),
    }
}

fn json<T: Serialize>(value: &T) -> String {
    serde_json::to_string(value).expect("run artifacts serialize")
}

pub fn records_text(records: &[RoundRecord]) -> String {
    records.iter().map(|r| json(r) + "\n").collect()
}

fn write(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

/// Writes the run directory. An existing non-empty directory is only
/// replaced with `force`, and then only the files this layout owns.
pub fn write_run(dir: &Path, exp: &Experiment, force: bool) -> Result<()> {
    let occupied = dir
        .read_dir()
        .map(|mut d| d.next().is_some())
        .unwrap_or(false);
    if occupied {
        if !force {
            return Err(Error::Exists(dir.to_path_buf()));
        }
        for name in [CONFIG_ECHO, ROUNDS, TRANSCRIPT, METRICS] {
            let p = dir.join(name);
            if p.exists() {
                fs::remove_file(&p).map_err(|e| Error::io(&p, e))?;
            }
        }
        let models = dir.join(MODELS);
        if models.exists() {
            fs::remove_dir_all(&models).map_err(|e| Error::io(&models, e))?;
        }
    }
    let models = dir.join(MODELS);
    fs::create_dir_all(&models).map_err(|e| Error::io(&models, e))?;

    write(&dir.join(CONFIG_ECHO), &exp.config.to_toml())?;
    write(&dir.join(ROUNDS), &records_text(&exp.report.records))?;
    let transcripts: String = exp.report.transcripts.iter().map(|t| json(t) + "\n").collect();
    write(&dir.join(TRANSCRIPT), &transcripts)?;
    let metrics = serde_json::to_string_pretty(&summary(exp)).expect("summary serializes");
    write(&dir.join(METRICS), &(metrics + "\n"))?;

    write(&models.join("initial.model"), &exp.report.initial_model.to_text())?;
    write(&models.join("global.model"), &exp.report.final_model.to_text())?;
    for (i, m) in exp.report.local_models.iter().enumerate() {
        write(&models.join(format!("participant-{i}.model")), &m.to_text())?;
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct LoadedRun {
    pub dir: PathBuf,
    pub config: ExperimentConfig,
    pub records: Vec<RoundRecord>,
    pub transcripts: Vec<ExchangeTranscript>,
    pub summary: FinalSummary,
}

fn read(path: &Path) -> Result<String> {
    if !path.exists() {
        return Err(Error::NotFound(path.to_path_buf()));
    }
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn json_lines<T: for<'de> Deserialize<'de>>(text: &str, what: &str) -> Result<Vec<T>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l)
                .map_err(|e| Error::Report(format!("{what} record {}: {e}", i + 1)))
        })
        .collect()
}

pub fn load_run(dir: &Path) -> Result<LoadedRun> {
    if !dir.is_dir() {
        return Err(Error::NotFound(dir.to_path_buf()));
    }
    let config = ExperimentConfig::parse(&read(&dir.join(CONFIG_ECHO))?)
        .map_err(|e| Error::Report(format!("{CONFIG_ECHO}: {e}")))?;
    let records: Vec<RoundRecord> = json_lines(&read(&dir.join(ROUNDS))?, "round")?;
    for (i, r) in records.iter().enumerate() {
        if r.round != i + 1 {
            return Err(Error::Report(format!(
                "round record {}: expected round {}, found {}",
                i + 1,
                i + 1,
                r.round
            )));
        }
    }
    let transcripts = json_lines(&read(&dir.join(TRANSCRIPT))?, "transcript")?;
    let summary = serde_json::from_str(&read(&dir.join(METRICS))?)
        .map_err(|e| Error::Report(format!("{METRICS}: {e}")))?;
    Ok(LoadedRun {
        dir: dir.to_path_buf(),
        config,
        records,
        transcripts,
        summary,
    })
}
