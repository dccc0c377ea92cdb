//! Experiment plumbing: config file → data world → run → run directory.

mod config;
pub mod report;
pub mod store;

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use config::*;

use crate::contribution::ContributionWeights;
use crate::dataset::{
    holdout_split, load_dataset, partition_non_iid, synth_gaussian, CsvSchema, Dataset,
    SynthParams,
};
use crate::engine::{run_fedavg, run_fednl, FederationConfig, RunReport, ServerData};
use crate::error::{Error, Result};
use crate::noise::{asymmetric_matrix, inject_noise, symmetric_matrix, NoiseReport, TransitionMatrix};
use crate::rounds::{
    alpha, compute_b, estimate_rounds, measure_inputs, measure_smoothness_all, AlphaMode,
    BBreakdown, MeasuredInputs, RoundEstimate, RoundParams,
};
use crate::seed;

/// Overrides the directory relative run directories resolve against.
pub const OUTPUT_ROOT_ENV: &str = "FEDNL_OUTPUT_ROOT";

const TAG_DATA: u64 = 0x4A_0001;
const TAG_SERVER_SPLIT: u64 = 0x4A_0002;
const TAG_PARTITION: u64 = 0x4A_0003;
const TAG_NOISE: u64 = 0x4A_0004;
const TAG_TEST_SPLIT: u64 = 0x4A_0005;
const TAG_MEASURE: u64 = 0x4A_0006;

pub struct World {
    pub participants: Vec<Dataset>,
    pub server: ServerData,
    pub noise: Vec<Option<NoiseReport>>,
}

pub fn load_data(config: &ExperimentConfig) -> Result<Dataset> {
    let d = &config.dataset;
    match d.kind {
        DatasetKind::Synthetic => synth_gaussian(&SynthParams {
            classes: d.classes.unwrap_or(0),
            per_class: d.per_class.unwrap_or(0),
            dim: d.dim.unwrap_or(0),
            separation: d.separation.unwrap_or(0.0),
            seed: seed::derive(config.seed, &[TAG_DATA]),
        }),
        DatasetKind::File => {
            let path = d
                .path
                .as_ref()
                .ok_or_else(|| Error::Validation(vec!["dataset.path is required".into()]))?;
            load_dataset(
                path,
                &CsvSchema {
                    delimiter: d.delimiter as u8,
                    class_count: d.classes,
                    allow_out_of_space: false,
                },
            )
        }
    }
}

/// The configured transition matrix; `beta` replaces the configured
/// noise with symmetric noise of that level.
pub fn noise_matrix(
    spec: &NoiseSpec,
    classes: usize,
    beta: Option<f64>,
) -> Result<Option<TransitionMatrix>> {
    let base = match (beta, spec.kind) {
        (Some(b), _) => Some(symmetric_matrix(classes, b)?),
        (None, NoiseKind::None) => None,
        (None, NoiseKind::Symmetric) => Some(symmetric_matrix(classes, spec.beta)?),
        (None, NoiseKind::Asymmetric) => Some(asymmetric_matrix(classes, &spec.pairs)?),
        (None, NoiseKind::Matrix) => {
            let path = spec
                .matrix_path
                .as_ref()
                .ok_or_else(|| Error::Validation(vec!["noise.matrix_path is required".into()]))?;
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            Some(TransitionMatrix::from_text(&text)?)
        }
    };
    match base {
        Some(m) if spec.out_of_space > 0.0 => Ok(Some(m.with_out_of_space(spec.out_of_space)?)),
        other => Ok(other),
    }
}

pub fn build_world(config: &ExperimentConfig) -> Result<World> {
    build_world_at(config, None)
}

/// Like [`build_world`], with symmetric noise of level `beta` on the noisy
/// participants instead of the configured noise.
pub fn build_world_at(config: &ExperimentConfig, beta: Option<f64>) -> Result<World> {
    let data = load_data(config)?;
    let (rest, server) = holdout_split(
        &data,
        config.server.fraction,
        seed::derive(config.seed, &[TAG_SERVER_SPLIT]),
    )?;
    let server = server.renamed("server");
    let (pool, test) = holdout_split(
        &server,
        config.server.test_fraction,
        seed::derive(config.seed, &[TAG_TEST_SPLIT]),
    )?;
    let clean = partition_non_iid(
        &rest,
        config.partition.participants,
        seed::derive(config.seed, &[TAG_PARTITION]),
        config.partition.strategy(),
    )?;
    let matrix = noise_matrix(&config.noise, data.class_count(), beta)?;
    let noisy_set = |i: usize| match beta {
        Some(_) => config.noise.participants.as_ref().is_none_or(|p| p.contains(&i)),
        None => config.noise.is_noisy(i),
    };
    let mut participants = Vec::with_capacity(clean.len());
    let mut noise = Vec::with_capacity(clean.len());
    for (i, p) in clean.into_iter().enumerate() {
        match &matrix {
            Some(m) if noisy_set(i) => {
                let (d, rep) = inject_noise(&p, m, seed::derive(config.seed, &[TAG_NOISE, i as u64]))?;
                participants.push(d);
                noise.push(Some(rep));
            }
            _ => {
                participants.push(p);
                noise.push(None);
            }
        }
    }
    Ok(World {
        participants,
        server: ServerData { pool, test },
        noise,
    })
}

/// `output_dir` (or `runs/<name>`), resolved against the output root.
pub fn resolve_output_dir(config: &ExperimentConfig, explicit: Option<&Path>) -> PathBuf {
    let dir = explicit
        .map(Path::to_path_buf)
        .or_else(|| config.output_dir.clone())
        .unwrap_or_else(|| Path::new("runs").join(&config.name));
    match std::env::var_os(OUTPUT_ROOT_ENV) {
        Some(root) if dir.is_relative() => PathBuf::from(root).join(dir),
        _ => dir,
    }
}

fn size_weights(participants: &[Dataset]) -> Result<ContributionWeights> {
    let sizes: Vec<f64> = participants.iter().map(|p| p.view().len() as f64).collect();
    ContributionWeights::proportional(&sizes)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AutoRounds {
    pub q_o: f64,
    pub estimate: RoundEstimate,
    pub capped_at: Option<usize>,
}

pub struct Experiment {
    pub config: ExperimentConfig,
    pub federation: FederationConfig,
    pub noise: Vec<Option<NoiseReport>>,
    pub auto_rounds: Option<AutoRounds>,
    pub report: RunReport,
}

/// Resolves the schedule and round count, then runs the configured mode.
pub fn run_experiment(config: &ExperimentConfig) -> Result<Experiment> {
    config.validate()?;
    let world = build_world(config)?;
    let spec = &config.trainer;
    let measure_seed = seed::derive(config.seed, &[TAG_MEASURE]);

    let measured_alpha = if spec.needs_measured_alpha() {
        let t = spec.resolve(None);
        let smooth = measure_smoothness_all(&world.participants, &t, measure_seed)?;
        Some(alpha(&smooth, spec.local_epochs, AlphaMode::Statement))
    } else {
        None
    };
    let trainer = spec.resolve(measured_alpha);

    let (rounds, auto_rounds) = match config.fixed_rounds() {
        Some(r) => (r, None),
        None => {
            let grid = config.rounds.as_ref().expect("validated");
            let inputs = measure_inputs(
                &world.participants,
                &size_weights(&world.participants)?,
                &trainer,
                config.federation.init_range,
                measure_seed,
            )?;
            let q_o = grid.q_o[0];
            let (_, estimate) = estimate_point(&inputs, spec.local_epochs, q_o, grid.alpha_mode)?;
            let cap = config.federation.max_auto_rounds;
            let rounds = (estimate.rounds.min(cap as u64)) as usize;
            let capped_at = (estimate.rounds > cap as u64).then_some(cap);
            (rounds, Some(AutoRounds { q_o, estimate, capped_at }))
        }
    };

    let f = &config.federation;
    let federation = FederationConfig {
        rounds,
        trainer,
        estimation_trainer: None,
        run_procedure1: f.run_procedure1,
        run_procedure2: f.run_procedure2,
        weighting: f.weighting,
        master_seed: config.seed,
        participant_seeds: None,
        contribution: f.contribution(),
        demand_cap: f.demand_cap,
        estimator: f.estimator(),
        init_range: f.init_range,
    };
    let report = match f.mode {
        Mode::Fednl => run_fednl(&federation, &world.participants, &world.server)?,
        Mode::Fedavg => run_fedavg(&federation, &world.participants, Some(&world.server.test))?,
    };
    Ok(Experiment {
        config: config.clone(),
        federation: report.config.clone(),
        noise: world.noise,
        auto_rounds,
        report,
    })
}

fn estimate_point(
    inputs: &MeasuredInputs,
    local_epochs: usize,
    q_o: f64,
    alpha_mode: AlphaMode,
) -> Result<(BBreakdown, RoundEstimate)> {
    let c = &inputs.components;
    let eps = &inputs.epsilon;
    let b = compute_b(eps, &c.sigma_sq, inputs.smooth.l, c.gamma, local_epochs, c.g_sq);
    let estimate = estimate_rounds(
        &inputs.smooth,
        &RoundParams {
            local_epochs,
            q_o,
            b: b.total,
            init_gap: inputs.init_gap,
            alpha_mode,
        },
    )?;
    Ok((b, estimate))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundsRow {
    pub local_epochs: usize,
    pub q_o: f64,
    /// Symmetric noise level, or `None` for the configured noise.
    pub noise_level: Option<f64>,
    pub l: f64,
    pub mu: f64,
    pub sigma_sq_mean: f64,
    pub g_sq: f64,
    pub gamma: f64,
    pub gamma_unweighted: f64,
    pub init_gap: f64,
    pub b: BBreakdown,
    pub estimate: RoundEstimate,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundsFailure {
    pub local_epochs: usize,
    pub q_o: f64,
    pub noise_level: Option<f64>,
    pub error: String,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RoundsTable {
    pub rows: Vec<RoundsRow>,
    pub failures: Vec<RoundsFailure>,
}

/// Measures the constants once per noise level and evaluates R over the
/// (E, q_o) grid. A failing measurement marks its grid points failed and
/// the sweep continues.
pub fn sweep_rounds(config: &ExperimentConfig) -> Result<RoundsTable> {
    config.validate()?;
    let grid = config
        .rounds
        .as_ref()
        .ok_or_else(|| Error::Validation(vec!["a [rounds] section is required".into()]))?;
    let levels: Vec<Option<f64>> = match &grid.noise_levels {
        Some(l) => l.iter().map(|&b| Some(b)).collect(),
        None => vec![None],
    };
    let trainer = config.trainer.resolve(None);
    let measured: Vec<Result<MeasuredInputs>> = levels
        .par_iter()
        .map(|&level| {
            let world = build_world_at(config, level)?;
            measure_inputs(
                &world.participants,
                &size_weights(&world.participants)?,
                &trainer,
                config.federation.init_range,
                seed::derive(config.seed, &[TAG_MEASURE]),
            )
        })
        .collect();

    let mut table = RoundsTable::default();
    for (&level, inputs) in levels.iter().zip(&measured) {
        for &e in &grid.local_epochs {
            for &q_o in &grid.q_o {
                let fail = |error: String| RoundsFailure {
                    local_epochs: e,
                    q_o,
                    noise_level: level,
                    error,
                };
                let inputs = match inputs {
                    Ok(i) => i,
                    Err(err) => {
                        table.failures.push(fail(err.to_string()));
                        continue;
                    }
                };
                match estimate_point(inputs, e, q_o, grid.alpha_mode) {
                    Ok((b, estimate)) => {
                        let c = &inputs.components;
                        table.rows.push(RoundsRow {
                            local_epochs: e,
                            q_o,
                            noise_level: level,
                            l: inputs.smooth.l,
                            mu: inputs.smooth.mu,
                            sigma_sq_mean: c.sigma_sq.iter().sum::<f64>() / c.sigma_sq.len() as f64,
                            g_sq: c.g_sq,
                            gamma: c.gamma,
                            gamma_unweighted: c.gamma_unweighted,
                            init_gap: inputs.init_gap,
                            b,
                            estimate,
                        });
                    }
                    Err(err) => table.failures.push(fail(err.to_string())),
                }
            }
        }
    }
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config(extra: &str) -> ExperimentConfig {
        let text = format!(
            r#"
            seed = 11
            [dataset]
            kind = "synthetic"
            classes = 3
            per_class = 80
            dim = 2
            separation = 6.0
            [partition]
            participants = 3
            [trainer]
            local_epochs = 2
            [federation]
            rounds = 3
            {extra}
            "#
        );
        ExperimentConfig::parse(&text).unwrap()
    }

    #[test]
    fn world_is_deterministic_and_disjoint() {
        let mut c = config("");
        c.noise = NoiseSpec {
            kind: NoiseKind::Symmetric,
            beta: 0.3,
            participants: Some(vec![1]),
            ..NoiseSpec::default()
        };
        let a = build_world(&c).unwrap();
        let b = build_world(&c).unwrap();
        assert_eq!(a.participants, b.participants);
        assert!(a.noise[0].is_none() && a.noise[1].is_some() && a.noise[2].is_none());
        let mut ids: Vec<u64> = a.participants.iter().flat_map(|p| p.ids()).collect();
        ids.extend(a.server.pool.ids());
        ids.extend(a.server.test.ids());
        let total = ids.len();
        ids.sort_unstable();
        ids.dedup();
        assert_eq!((ids.len(), total), (240, 240));
    }

    #[test]
    fn experiment_runs_with_measured_alpha() {
        let mut c = config("");
        c.trainer.lr = LrKind::Diminishing;
        let exp = run_experiment(&c).unwrap();
        assert_eq!(exp.report.records.len(), 3);
        match exp.federation.trainer.lr {
            crate::trainer::LrSchedule::Diminishing { theta, alpha } => {
                assert!((theta - 200.0).abs() < 1e-9);
                assert!(alpha >= 2.0);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn auto_rounds_are_capped() {
        let c = config("max_auto_rounds = 4\n[rounds]\nlocal_epochs = [2]\nq_o = [0.001]\n");
        let c = ExperimentConfig {
            federation: FederationSpec {
                rounds: RoundCount::Auto("auto".into()),
                ..c.federation.clone()
            },
            ..c
        };
        let exp = run_experiment(&c).unwrap();
        assert_eq!(exp.report.records.len(), 4);
        assert_eq!(exp.auto_rounds.unwrap().capped_at, Some(4));
    }

    #[test]
    fn sweep_covers_the_grid() {
        let c = config("[rounds]\nlocal_epochs = [1, 4]\nq_o = [0.1, 0.01]\nnoise_levels = [0.0, 0.2]\n");
        let table = sweep_rounds(&c).unwrap();
        assert!(table.failures.is_empty());
        assert_eq!(table.rows.len(), 8);
        for w in table.rows.chunks(2) {
            assert!(w[1].estimate.raw > w[0].estimate.raw, "smaller q_o needs more rounds");
        }
    }

    #[test]
    fn output_root_applies_to_relative_dirs() {
        let c = config("");
        assert!(resolve_output_dir(&c, None).ends_with("runs/experiment"));
        assert_eq!(
            resolve_output_dir(&c, Some(Path::new("/abs/run"))),
            PathBuf::from("/abs/run")
        );
    }
}
