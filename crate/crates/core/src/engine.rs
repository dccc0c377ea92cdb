//! Federated rounds: broadcast, local training, weighted aggregation.
//!
//! [`run_fednl`] estimates and normalizes each participant's noise once,
//! then aggregates with influence-based weights. [`run_fedavg`] is the
//! size-weighted baseline. Both share one round loop, so Fed-NL with the
//! noise steps disabled and size weighting reproduces FedAvg exactly.
//!
//! Aggregation weights for round `t` come from the influence history up to
//! round `t - 1` (uniform in round 1, where every history is zero and
//! floored). Influence at round `t` is then measured against the round-`t`
//! aggregate.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::contribution::{
    contributions, decay_factor, effective_sizes, ContributionOptions, ContributionWeights,
    InfluenceState,
};
use crate::dataset::{holdout_split, Dataset, LabeledView};
use crate::error::{Error, Result};
use crate::estimator::{estimate_noise, EstimatorOptions, NoiseEstimate};
use crate::exchange::{normalize, DemandCap, ExchangeTranscript};
use crate::metrics::{evaluate, ConfusionMatrix, LabelSource, MetricsSnapshot, Scope};
use crate::seed::{self, TAG_ESTIMATE, TAG_EXCHANGE, TAG_LOCAL_TRAIN, TAG_PARTICIPANT, TAG_SERVER_INIT};
use crate::trainer::{loss, train_local, ModelParams, TrainerConfig};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Weighting {
    #[default]
    Fednl,
    FedavgSize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RunMode {
    Fednl,
    Fedavg,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FederationConfig {
    pub rounds: usize,
    pub trainer: TrainerConfig,
    /// Trainer for noise estimation; defaults to `trainer`.
    pub estimation_trainer: Option<TrainerConfig>,
    pub run_procedure1: bool,
    pub run_procedure2: bool,
    pub weighting: Weighting,
    pub master_seed: u64,
    /// Per-participant seeds; derived from the master seed when absent.
    pub participant_seeds: Option<Vec<u64>>,
    pub contribution: ContributionOptions,
    pub demand_cap: DemandCap,
    pub estimator: EstimatorOptions,
    /// Server weights start uniform in `[-init_range, init_range]`.
    pub init_range: f64,
}

impl Default for FederationConfig {
    fn default() -> Self {
        FederationConfig {
            rounds: 20,
            trainer: TrainerConfig::default(),
            estimation_trainer: None,
            run_procedure1: true,
            run_procedure2: true,
            weighting: Weighting::Fednl,
            master_seed: 0,
            participant_seeds: None,
            contribution: ContributionOptions::default(),
            demand_cap: DemandCap::default(),
            estimator: EstimatorOptions::default(),
            init_range: 0.01,
        }
    }
}

impl FederationConfig {
    /// Baseline configuration: no noise handling, size weights.
    pub fn fedavg(rounds: usize, trainer: TrainerConfig, master_seed: u64) -> Self {
        FederationConfig {
            rounds,
            trainer,
            run_procedure1: false,
            run_procedure2: false,
            weighting: Weighting::FedavgSize,
            master_seed,
            ..FederationConfig::default()
        }
    }

    pub fn validate(&self, participants: usize) -> Result<()> {
        let mut problems = Vec::new();
        if participants < 1 {
            problems.push("need at least one participant".to_string());
        }
        if self.rounds < 1 {
            problems.push("rounds must be >= 1".to_string());
        }
        if let Err(e) = self.trainer.validate() {
            problems.push(e.to_string());
        }
        if let Some(t) = &self.estimation_trainer {
            if let Err(e) = t.validate() {
                problems.push(format!("estimation trainer: {e}"));
            }
        }
        if self.run_procedure2 && !self.run_procedure1 {
            problems.push("server exchange needs noise estimation enabled".to_string());
        }
        if let Some(seeds) = &self.participant_seeds {
            if seeds.len() != participants {
                problems.push(format!(
                    "{} participant seeds for {participants} participants",
                    seeds.len()
                ));
            }
        }
        if !(self.contribution.gamma_min > 0.0) {
            problems.push("gamma_min must be > 0".to_string());
        }
        if !(self.init_range >= 0.0 && self.init_range.is_finite()) {
            problems.push("init_range must be finite and >= 0".to_string());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(problems))
        }
    }

    pub fn participant_seed(&self, i: usize) -> u64 {
        match &self.participant_seeds {
            Some(seeds) => seeds[i],
            None => seed::derive(self.master_seed, &[TAG_PARTICIPANT, i as u64]),
        }
    }

    fn estimation_trainer(&self) -> &TrainerConfig {
        self.estimation_trainer.as_ref().unwrap_or(&self.trainer)
    }
}

/// The server's noise-free data: a pool for transfers and a disjoint test
/// split for influence and global evaluation.
#[derive(Clone, Debug, PartialEq)]
pub struct ServerData {
    pub pool: Dataset,
    pub test: Dataset,
}

impl ServerData {
    pub fn split(server: &Dataset, test_fraction: f64, seed: u64) -> Result<Self> {
        let (pool, test) = holdout_split(server, test_fraction, seed)?;
        Ok(ServerData { pool, test })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsSummary {
    pub accuracy: f64,
    pub macro_f1: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: usize,
    /// L_i^t: each participant's loss on its own training set after local
    /// training.
    pub local_losses: Vec<f64>,
    /// L^t = sum_i eps_i L_i^t.
    pub global_loss: f64,
    /// sum_i eps_i L_i(w^t), the federated objective at the aggregate.
    pub aggregate_loss: f64,
    pub epsilon: Vec<f64>,
    pub gamma: Vec<f64>,
    pub influence: Vec<f64>,
    /// Cumulative SGD steps per participant after this round.
    pub steps: Vec<u64>,
    pub global_metrics: Option<MetricsSummary>,
    pub aggregate: ModelParams,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParticipantSummary {
    pub index: usize,
    pub seed: u64,
    pub initial_size: usize,
    pub training_size: usize,
    pub estimated_ratio: Option<f64>,
    pub normalized_ratio: Option<f64>,
    pub effective_size: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FinalMetrics {
    pub global: Option<MetricsSnapshot>,
    pub global_confusion: Option<ConfusionMatrix>,
    pub local: Vec<MetricsSnapshot>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunReport {
    pub mode: RunMode,
    pub config: FederationConfig,
    pub participants: Vec<ParticipantSummary>,
    pub records: Vec<RoundRecord>,
    pub final_model: ModelParams,
    pub local_models: Vec<ModelParams>,
    /// Local models of every round, indexed `[round - 1][participant]`.
    pub local_history: Vec<Vec<ModelParams>>,
    pub initial_model: ModelParams,
    pub estimates: Vec<Option<NoiseEstimate>>,
    pub transcripts: Vec<ExchangeTranscript>,
    pub final_metrics: FinalMetrics,
}

/// `sum_i eps_i w_i`, accumulated in participant order.
pub fn aggregate(models: &[ModelParams], weights: &ContributionWeights) -> Result<ModelParams> {
    let eps = &weights.epsilon;
    if models.is_empty() || models.len() != eps.len() {
        return Err(Error::Aggregation(format!(
            "{} models for {} weights",
            models.len(),
            eps.len()
        )));
    }
    let shape = models[0].shape();
    if let Some(m) = models.iter().find(|m| m.shape() != shape) {
        return Err(Error::Aggregation(format!(
            "model shapes differ: {shape:?} vs {:?}",
            m.shape()
        )));
    }
    let sum: f64 = eps.iter().sum();
    if eps.iter().any(|e| !(*e >= 0.0)) || (sum - 1.0).abs() > 1e-9 {
        return Err(Error::Aggregation(format!("invalid weights {eps:?}")));
    }
    let mut out = ModelParams::zeros(shape.0 - 1, shape.1);
    for (m, &e) in models.iter().zip(eps) {
        out.axpy(e, m);
    }
    Ok(out)
}

struct Prepared {
    training: Vec<Dataset>,
    ratios: Vec<f64>,
    summaries: Vec<ParticipantSummary>,
    estimates: Vec<Option<NoiseEstimate>>,
    transcripts: Vec<ExchangeTranscript>,
}

fn prepare(
    config: &FederationConfig,
    participants: &[Dataset],
    server_pool: Option<&Dataset>,
) -> Result<Prepared> {
    let est_trainer = config.estimation_trainer();
    let per_participant = participants
        .par_iter()
        .enumerate()
        .map(|(i, data)| {
            let pseed = config.participant_seed(i);
            let wrap = |e: Error| e.in_participant(0, i);
            if !config.run_procedure1 {
                return Ok((data.clone(), None, None, None));
            }
            let est = estimate_noise(
                data,
                est_trainer,
                seed::derive(pseed, &[TAG_ESTIMATE]),
                config.estimator,
            )
            .map_err(wrap)?;
            match (config.run_procedure2, server_pool) {
                (true, Some(pool)) => {
                    let ex = normalize(
                        data,
                        &est,
                        pool,
                        config.demand_cap,
                        seed::derive(pseed, &[TAG_EXCHANGE]),
                        est_trainer,
                        config.estimator,
                        i,
                    )
                    .map_err(wrap)?;
                    let ratio = ex.mean_ratio();
                    Ok((ex.dataset, Some(est), Some(ratio), Some(ex.transcript)))
                }
                _ => {
                    let keep = est.noise_free_ids().into_iter().collect();
                    Ok((data.select(&keep), Some(est), None, None))
                }
            }
        })
        .collect::<Result<Vec<_>>>()?;

    let mut prepared = Prepared {
        training: Vec::new(),
        ratios: Vec::new(),
        summaries: Vec::new(),
        estimates: Vec::new(),
        transcripts: Vec::new(),
    };
    for (i, (training, est, normalized, transcript)) in per_participant.into_iter().enumerate() {
        if training.view().is_empty() {
            return Err(Error::EmptyDataset.in_participant(0, i));
        }
        let estimated = est.as_ref().map(|e| e.mean_ratio);
        let ratio = normalized.or(estimated).unwrap_or(0.0);
        prepared.summaries.push(ParticipantSummary {
            index: i,
            seed: config.participant_seed(i),
            initial_size: participants[i].len(),
            training_size: training.view().len(),
            estimated_ratio: estimated,
            normalized_ratio: normalized,
            effective_size: 0.0,
        });
        prepared.ratios.push(ratio);
        prepared.training.push(training);
        prepared.estimates.push(est);
        prepared.transcripts.extend(transcript);
    }
    Ok(prepared)
}

pub fn run_fednl(
    config: &FederationConfig,
    participants: &[Dataset],
    server: &ServerData,
) -> Result<RunReport> {
    config.validate(participants.len())?;
    if config.weighting == Weighting::Fednl && participants.len() > 1 && server.test.view().is_empty() {
        return Err(Error::Validation(vec![
            "influence weighting needs a non-empty server test split".into(),
        ]));
    }
    let prepared = prepare(config, participants, Some(&server.pool))?;
    federate(config, RunMode::Fednl, prepared, Some(&server.test))
}

/// Size-weighted FedAvg. `eval`, when given, is used for per-round and
/// final global metrics.
pub fn run_fedavg(
    config: &FederationConfig,
    participants: &[Dataset],
    eval: Option<&Dataset>,
) -> Result<RunReport> {
    let config = FederationConfig {
        run_procedure1: false,
        run_procedure2: false,
        weighting: Weighting::FedavgSize,
        ..config.clone()
    };
    config.validate(participants.len())?;
    let prepared = prepare(&config, participants, None)?;
    federate(&config, RunMode::Fedavg, prepared, eval)
}

fn summarize(model: &ModelParams, test: Option<&Dataset>) -> Result<Option<MetricsSummary>> {
    match test {
        Some(t) if !t.is_empty() && t.has_true_labels() => {
            let (snap, _) = evaluate(model, t, LabelSource::True, Scope::Global)?;
            Ok(Some(MetricsSummary {
                accuracy: snap.accuracy,
                macro_f1: snap.macro_f1,
            }))
        }
        _ => Ok(None),
    }
}

fn federate(
    config: &FederationConfig,
    mode: RunMode,
    mut prepared: Prepared,
    test: Option<&Dataset>,
) -> Result<RunReport> {
    let n = prepared.training.len();
    let views: Vec<LabeledView<'_>> = prepared.training.iter().map(Dataset::view).collect();
    let dim = views[0].dim();
    let classes = views[0].class_count();
    let trainer = &config.trainer;
    let l2 = trainer.l2_lambda;
    let seeds: Vec<u64> = (0..n).map(|i| config.participant_seed(i)).collect();

    let sizes: Vec<usize> = views.iter().map(LabeledView::len).collect();
    let effective = effective_sizes(&sizes, &prepared.ratios, config.contribution.effective_size);
    for (s, &m) in prepared.summaries.iter_mut().zip(&effective) {
        s.effective_size = m;
    }
    let size_weights =
        ContributionWeights::proportional(&sizes.iter().map(|&s| s as f64).collect::<Vec<_>>())?;
    let test_view = test.map(Dataset::view);
    let use_influence = config.weighting == Weighting::Fednl && n > 1;

    let initial_model = ModelParams::random_uniform(
        dim,
        classes,
        config.init_range,
        &mut seed::rng_for(config.master_seed, &[TAG_SERVER_INIT]),
    );
    let mut global = initial_model.clone();
    let mut state = InfluenceState::new(n, config.contribution);
    let mut frozen: Option<ContributionWeights> = None;
    let mut steps = vec![0u64; n];
    let mut records = Vec::with_capacity(config.rounds);
    let mut local_history = Vec::with_capacity(config.rounds);

    for t in 1..=config.rounds {
        let outcomes = (0..n)
            .into_par_iter()
            .map(|i| {
                let cfg = trainer.with_seed(seed::derive(seeds[i], &[TAG_LOCAL_TRAIN, t as u64]));
                train_local(&global, &views[i], &cfg, steps[i]).map_err(|e| e.in_participant(t, i))
            })
            .collect::<Result<Vec<_>>>()?;
        let models: Vec<ModelParams> = outcomes.iter().map(|o| o.model.clone()).collect();

        let weights = match config.weighting {
            Weighting::FedavgSize => size_weights.clone(),
            Weighting::Fednl if n == 1 => ContributionWeights::uniform(1),
            Weighting::Fednl => match &frozen {
                Some(w) => w.clone(),
                None => contributions(&state.gammas())?,
            },
        };
        let aggregated = aggregate(&models, &weights).map_err(|e| e.in_participant(t, 0))?;

        let mut influence = vec![0.0; n];
        if use_influence {
            let tv = test_view.as_ref().expect("validated: influence needs a test split");
            for i in 0..n {
                let decay = decay_factor(trainer.lr.at(steps[i] + 1), l2, trainer.local_epochs);
                let term = state
                    .influence(i, &models, &effective, &aggregated, tv, decay, l2)
                    .map_err(|e| e.in_participant(t, i))?;
                influence[i] = term.instant;
            }
            if config.contribution.freeze_epsilon && frozen.is_none() {
                frozen = Some(contributions(&state.gammas())?);
            }
        }

        for (s, o) in steps.iter_mut().zip(&outcomes) {
            *s += o.steps;
        }
        let local_losses: Vec<f64> = outcomes.iter().map(|o| o.final_loss).collect();
        let eps = &weights.epsilon;
        let global_loss = eps.iter().zip(&local_losses).map(|(e, l)| e * l).sum();
        let mut aggregate_loss = 0.0;
        for (e, v) in eps.iter().zip(&views) {
            aggregate_loss += e * loss(&aggregated, v, l2)?;
        }
        records.push(RoundRecord {
            round: t,
            local_losses,
            global_loss,
            aggregate_loss,
            epsilon: eps.clone(),
            gamma: if use_influence { state.gammas() } else { vec![0.0; n] },
            influence,
            steps: steps.clone(),
            global_metrics: summarize(&aggregated, test)?,
            aggregate: aggregated.clone(),
        });
        local_history.push(models);
        global = aggregated;
    }

    let local_models = local_history.last().cloned().unwrap_or_default();
    let final_metrics = match test {
        Some(t) if !t.is_empty() && t.has_true_labels() => {
            let (global_snap, confusion) = evaluate(&global, t, LabelSource::True, Scope::Global)?;
            let local = local_models
                .iter()
                .map(|m| evaluate(m, t, LabelSource::True, Scope::Local).map(|(s, _)| s))
                .collect::<Result<Vec<_>>>()?;
            FinalMetrics {
                global: Some(global_snap),
                global_confusion: Some(confusion),
                local,
            }
        }
        _ => FinalMetrics {
            global: None,
            global_confusion: None,
            local: Vec::new(),
        },
    };

    Ok(RunReport {
        mode,
        config: config.clone(),
        participants: std::mem::take(&mut prepared.summaries),
        records,
        final_model: global,
        local_models,
        local_history,
        initial_model,
        estimates: prepared.estimates,
        transcripts: prepared.transcripts,
        final_metrics,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{partition_non_iid, synth_gaussian, PartitionStrategy, SynthParams};
    use crate::trainer::LrSchedule;

    fn model(values: &[f64]) -> ModelParams {
        ModelParams::from_weights(values.len() - 1, 1, values.to_vec()).unwrap()
    }

    #[test]
    fn aggregate_examples() {
        let a = model(&[1.0, 2.0]);
        let b = model(&[3.0, -1.0]);
        let w = ContributionWeights { epsilon: vec![1.0, 0.0] };
        assert_eq!(aggregate(&[a.clone(), b.clone()], &w).unwrap(), a);
        let w = ContributionWeights { epsilon: vec![0.3, 0.7] };
        assert_eq!(aggregate(&[a.clone(), a.clone()], &w).unwrap().distance_sq(&a) < 1e-30, true);
        let w = ContributionWeights { epsilon: vec![0.25, 0.75] };
        let agg = aggregate(&[a.clone(), b.clone()], &w).unwrap();
        assert!((agg.get(0, 0) - (0.25 * 1.0 + 0.75 * 3.0)).abs() < 1e-12);
        assert!((agg.get(1, 0) - (0.25 * 2.0 + 0.75 * -1.0)).abs() < 1e-12);
    }

    #[test]
    fn aggregate_rejects_bad_input() {
        let a = model(&[1.0, 2.0]);
        let c = model(&[1.0, 2.0, 3.0]);
        let w = ContributionWeights { epsilon: vec![0.5, 0.5] };
        assert!(matches!(aggregate(&[a.clone(), c], &w), Err(Error::Aggregation(_))));
        let w = ContributionWeights { epsilon: vec![0.5, 0.6] };
        assert!(aggregate(&[a.clone(), a], &w).is_err());
    }

    fn world(seed: u64) -> (Vec<Dataset>, ServerData) {
        let all = synth_gaussian(&SynthParams {
            classes: 3,
            per_class: 100,
            dim: 2,
            separation: 8.0,
            seed,
        })
        .unwrap();
        let (server, rest) = holdout_split(&all, 0.7, seed).unwrap();
        let parts = partition_non_iid(&rest, 2, seed, PartitionStrategy::ShuffleSplit).unwrap();
        (parts, ServerData::split(&server, 0.2, seed).unwrap())
    }

    fn trainer() -> TrainerConfig {
        TrainerConfig {
            local_epochs: 2,
            batch_size: 16,
            lr: LrSchedule::Constant { eta: 0.05 },
            l2_lambda: 0.01,
            seed: 0,
        }
    }

    #[test]
    fn validation_lists_every_problem() {
        let config = FederationConfig {
            rounds: 0,
            run_procedure1: false,
            run_procedure2: true,
            participant_seeds: Some(vec![1]),
            ..FederationConfig::default()
        };
        match config.validate(2) {
            Err(Error::Validation(problems)) => assert_eq!(problems.len(), 3),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn fednl_run_shapes() {
        let (parts, server) = world(3);
        let config = FederationConfig {
            rounds: 3,
            trainer: trainer(),
            master_seed: 5,
            ..FederationConfig::default()
        };
        let report = run_fednl(&config, &parts, &server).unwrap();
        assert_eq!(report.records.len(), 3);
        assert_eq!(report.transcripts.len(), 2);
        for r in &report.records {
            assert!((r.epsilon.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            let recomputed: f64 = r.epsilon.iter().zip(&r.local_losses).map(|(e, l)| e * l).sum();
            assert!((recomputed - r.global_loss).abs() < 1e-12);
        }
        // Round 1 weights are uniform: every history starts at zero.
        assert_eq!(report.records[0].epsilon, vec![0.5, 0.5]);
        assert!(report.final_metrics.global.as_ref().unwrap().accuracy > 0.9);
    }

    #[test]
    fn single_participant_is_local_training() {
        let (parts, server) = world(4);
        let config = FederationConfig {
            rounds: 3,
            trainer: trainer(),
            master_seed: 1,
            run_procedure1: false,
            run_procedure2: false,
            ..FederationConfig::default()
        };
        let report = run_fednl(&config, &parts[..1], &server).unwrap();
        let mut model = report.initial_model.clone();
        let mut base = 0;
        let view = parts[0].view();
        for t in 1..=3u64 {
            let cfg = trainer().with_seed(seed::derive(config.participant_seed(0), &[TAG_LOCAL_TRAIN, t]));
            let out = train_local(&model, &view, &cfg, base).unwrap();
            base += out.steps;
            model = out.model;
        }
        assert_eq!(report.final_model, model);
        assert!(report.records.iter().all(|r| r.epsilon == vec![1.0]));
    }

    #[test]
    fn fedavg_weights_follow_sizes() {
        let (parts, _) = world(6);
        let small = parts[0].from_parts("small".into(), parts[0].instances()[..10].to_vec());
        let big = parts[1].from_parts("big".into(), parts[1].instances()[..30].to_vec());
        let config = FederationConfig::fedavg(2, trainer(), 3);
        let report = run_fedavg(&config, &[small, big], None).unwrap();
        for r in &report.records {
            assert_eq!(r.epsilon, vec![0.25, 0.75]);
        }
    }
}
