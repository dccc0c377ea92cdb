//! Communication-round estimate for a target precision, and the measured
//! problem constants feeding it.
//!
//! ```text
//! B     = sum_i eps_i^2 sigma_i^2 + 6 L Gamma + 8 (E - 1)^2 G^2
//! alpha = max(8 L / mu, E)
//! R     = (1/E) [ L / (2 mu^2 q) (4 B + mu^2 alpha gap) + 1 - alpha ]
//! ```
//!
//! `gap` is `E||w_1 - w*||^2`. R is reported raw and as `max(1, ceil(raw))`.

use log::warn;
use rand::seq::index;
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::contribution::ContributionWeights;
use crate::dataset::{Dataset, LabeledView, Sample};
use crate::engine::RunReport;
use crate::error::{Error, Result};
use crate::seed::{self, TAG_SERVER_INIT};
use crate::trainer::{
    loss_and_gradient, minimize_objective, smoothness_bound, ModelParams, Optimum, TrainerConfig,
};

pub const SMOOTHNESS_PAIRS: usize = 100;
pub const SMOOTHNESS_SAFETY: f64 = 1.2;
pub const VARIANCE_BATCHES: usize = 50;
pub const INIT_DRAWS: usize = 10;
pub const OPTIMUM_TOL: f64 = 1e-6;
pub const OPTIMUM_MAX_ITER: usize = 100_000;
/// Gaps at or below this are clipped before taking logs.
pub const GAP_FLOOR: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    Declared,
    Measured,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SmoothnessParams {
    pub l: f64,
    pub mu: f64,
    pub provenance: Provenance,
}

impl SmoothnessParams {
    pub fn declared(l: f64, mu: f64) -> Result<Self> {
        if !(mu > 0.0 && l >= mu && l.is_finite()) {
            return Err(Error::Validation(vec![format!(
                "need L >= mu > 0, got L = {l}, mu = {mu}"
            )]));
        }
        Ok(SmoothnessParams {
            l,
            mu,
            provenance: Provenance::Declared,
        })
    }
}

fn full_gradient(model: &ModelParams, samples: &[Sample<'_>], l2: f64) -> Result<ModelParams> {
    Ok(loss_and_gradient(model, samples, l2)?.1)
}

/// `mu` is the L2 coefficient; `L` is the largest gradient-difference ratio
/// seen over `pairs` random weight pairs, times the safety factor.
pub fn measure_smoothness(
    dataset: &Dataset,
    trainer: &TrainerConfig,
    pairs: usize,
    seed: u64,
) -> Result<SmoothnessParams> {
    let mu = trainer.l2_lambda;
    if !(mu > 0.0) {
        return Err(Error::Measurement(
            "l2_lambda must be > 0 for strong convexity".into(),
        ));
    }
    let view = dataset.view();
    if view.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let samples = view.samples();
    let mut rng = seed::rng(seed);
    let (dim, classes) = (view.dim(), view.class_count());
    let mut best = 0.0_f64;
    for _ in 0..pairs.max(1) {
        let a = ModelParams::random_uniform(dim, classes, 1.0, &mut rng);
        // Mix near and far pairs: curvature varies with the region.
        let radius = 10f64.powf(rng.random_range(-3.0..0.0));
        let delta = ModelParams::random_uniform(dim, classes, radius, &mut rng);
        let mut b = a.clone();
        b.axpy(1.0, &delta);
        let dist = delta.norm_sq().sqrt();
        if dist == 0.0 {
            continue;
        }
        let ga = full_gradient(&a, samples, mu)?;
        let gb = full_gradient(&b, samples, mu)?;
        best = best.max(ga.sub(&gb).norm_sq().sqrt() / dist);
    }
    Ok(SmoothnessParams {
        l: (best * SMOOTHNESS_SAFETY).max(mu),
        mu,
        provenance: Provenance::Measured,
    })
}

/// Smoothness of a federation: every local objective must satisfy the
/// bound, so take the largest measured `L`.
pub fn measure_smoothness_all(
    participants: &[Dataset],
    trainer: &TrainerConfig,
    seed: u64,
) -> Result<SmoothnessParams> {
    let mut out: Option<SmoothnessParams> = None;
    for (i, d) in participants.iter().enumerate() {
        let s = measure_smoothness(d, trainer, SMOOTHNESS_PAIRS, seed::derive(seed, &[i as u64]))?;
        out = Some(match out {
            Some(o) if o.l >= s.l => o,
            _ => s,
        });
    }
    out.ok_or(Error::EmptyDataset)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BComponents {
    pub sigma_sq: Vec<f64>,
    /// Max over participants of the per-participant G^2.
    pub g_sq: f64,
    pub g_sq_per_participant: Vec<f64>,
    /// `L* - sum_i eps_i L_i*`, floored at 0.
    pub gamma: f64,
    /// `L* - sum_i L_i*`, as written without weights; not floored.
    pub gamma_unweighted: f64,
    pub optimum_loss: f64,
    pub local_optimum_losses: Vec<f64>,
    pub optimum: ModelParams,
}

/// Minimizer of `sum_i eps_i F_i`.
pub fn weighted_optimum(views: &[LabeledView<'_>], epsilon: &[f64], l2: f64) -> Result<Optimum> {
    if views.is_empty() || views.len() != epsilon.len() || views.iter().any(|v| v.is_empty()) {
        return Err(Error::Measurement("weighted optimum needs non-empty participants".into()));
    }
    let bound: f64 = views
        .iter()
        .zip(epsilon)
        .map(|(v, e)| e * smoothness_bound(v, l2))
        .sum();
    minimize_objective(
        |w| {
            let mut value = 0.0;
            let mut grad = ModelParams::zeros(w.dim(), w.classes());
            for (v, &e) in views.iter().zip(epsilon) {
                if e == 0.0 {
                    continue;
                }
                let (l, g) = loss_and_gradient(w, v.samples(), l2)?;
                value += e * l;
                grad.axpy(e, &g);
            }
            Ok((value, grad))
        },
        ModelParams::zeros(views[0].dim(), views[0].class_count()),
        1.0 / bound,
        OPTIMUM_TOL,
        OPTIMUM_MAX_ITER,
    )
}

/// Sampled-batch gradient statistics at `reference` (the weighted optimum
/// when `None`), plus the heterogeneity gap.
pub fn measure_b_components(
    participants: &[Dataset],
    epsilon: &ContributionWeights,
    reference: Option<&ModelParams>,
    trainer: &TrainerConfig,
    seed: u64,
) -> Result<BComponents> {
    let l2 = trainer.l2_lambda;
    let views: Vec<LabeledView<'_>> = participants.iter().map(Dataset::view).collect();
    let eps = &epsilon.epsilon;
    let optimum = weighted_optimum(&views, eps, l2)?;
    let local = views
        .par_iter()
        .map(|v| weighted_optimum(std::slice::from_ref(v), &[1.0], l2).map(|o| o.loss))
        .collect::<Result<Vec<_>>>()?;
    let weighted_sum: f64 = eps.iter().zip(&local).map(|(e, l)| e * l).sum();
    let gamma = (optimum.loss - weighted_sum).max(0.0);
    let gamma_unweighted = optimum.loss - local.iter().sum::<f64>();

    let at = reference.unwrap_or(&optimum.model);
    let per = views
        .par_iter()
        .enumerate()
        .map(|(i, v)| batch_stats(at, v, trainer.batch_size, l2, seed::derive(seed, &[i as u64])))
        .collect::<Result<Vec<_>>>()?;
    let sigma_sq: Vec<f64> = per.iter().map(|p| p.0).collect();
    let g_sq_per_participant: Vec<f64> = per.iter().map(|p| p.1).collect();
    Ok(BComponents {
        g_sq: g_sq_per_participant.iter().cloned().fold(0.0, f64::max),
        sigma_sq,
        g_sq_per_participant,
        gamma,
        gamma_unweighted,
        optimum_loss: optimum.loss,
        local_optimum_losses: local,
        optimum: optimum.model,
    })
}

/// `(max ||g_batch - g_full||^2, max ||g_batch||^2)` over sampled batches.
fn batch_stats(
    model: &ModelParams,
    view: &LabeledView<'_>,
    batch_size: usize,
    l2: f64,
    seed: u64,
) -> Result<(f64, f64)> {
    let samples = view.samples();
    let full = full_gradient(model, samples, l2)?;
    let size = batch_size.min(samples.len());
    let mut rng = seed::rng(seed);
    let mut sigma_sq = 0.0_f64;
    let mut g_sq = 0.0_f64;
    let mut batch = Vec::with_capacity(size);
    for _ in 0..VARIANCE_BATCHES {
        let mut picks = index::sample(&mut rng, samples.len(), size).into_vec();
        picks.sort_unstable();
        batch.clear();
        batch.extend(picks.iter().map(|&i| samples[i]));
        let g = full_gradient(model, &batch, l2)?;
        sigma_sq = sigma_sq.max(g.sub(&full).norm_sq());
        g_sq = g_sq.max(g.norm_sq());
    }
    Ok((sigma_sq, g_sq))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BBreakdown {
    pub variance: f64,
    pub heterogeneity: f64,
    pub drift: f64,
    pub total: f64,
}

pub fn compute_b(
    epsilon: &[f64],
    sigma_sq: &[f64],
    l: f64,
    gamma: f64,
    local_epochs: usize,
    g_sq: f64,
) -> BBreakdown {
    let variance: f64 = epsilon.iter().zip(sigma_sq).map(|(e, s)| e * e * s).sum();
    let heterogeneity = 6.0 * l * gamma;
    let e1 = local_epochs.saturating_sub(1) as f64;
    let drift = 8.0 * e1 * e1 * g_sq;
    BBreakdown {
        variance,
        heterogeneity,
        drift,
        total: variance + heterogeneity + drift,
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AlphaMode {
    /// `max(8L/mu, E)`.
    #[default]
    Statement,
    /// `max(8L/mu, E) - 1`.
    MinusOne,
}

pub fn alpha(smooth: &SmoothnessParams, local_epochs: usize, mode: AlphaMode) -> f64 {
    let a = (8.0 * smooth.l / smooth.mu).max(local_epochs as f64);
    match mode {
        AlphaMode::Statement => a,
        AlphaMode::MinusOne => a - 1.0,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundParams {
    pub local_epochs: usize,
    pub q_o: f64,
    pub b: f64,
    pub init_gap: f64,
    pub alpha_mode: AlphaMode,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundEstimate {
    pub alpha: f64,
    pub raw: f64,
    pub rounds: u64,
    /// `T = R * E`.
    pub total_epochs: u64,
}

pub fn estimate_rounds(smooth: &SmoothnessParams, params: &RoundParams) -> Result<RoundEstimate> {
    let mut problems = Vec::new();
    if !(params.q_o > 0.0) {
        problems.push(format!("q_o must be > 0, got {}", params.q_o));
    }
    if params.local_epochs < 1 {
        problems.push("local epochs must be >= 1".into());
    }
    if !(params.b >= 0.0) {
        problems.push(format!("B must be >= 0, got {}", params.b));
    }
    if !(params.init_gap >= 0.0) {
        problems.push(format!("init gap must be >= 0, got {}", params.init_gap));
    }
    if !(smooth.mu > 0.0 && smooth.l >= smooth.mu) {
        problems.push(format!("need L >= mu > 0, got L = {}, mu = {}", smooth.l, smooth.mu));
    }
    if !problems.is_empty() {
        return Err(Error::Validation(problems));
    }
    let (l, mu, e) = (smooth.l, smooth.mu, params.local_epochs as f64);
    let a = alpha(smooth, params.local_epochs, params.alpha_mode);
    let bracket = l / (2.0 * mu * mu * params.q_o) * (4.0 * params.b + mu * mu * a * params.init_gap);
    let raw = (bracket + 1.0 - a) / e;
    let rounds = if raw.is_finite() {
        raw.ceil().max(1.0) as u64
    } else {
        u64::MAX
    };
    Ok(RoundEstimate {
        alpha: a,
        raw,
        rounds,
        total_epochs: rounds.saturating_mul(params.local_epochs as u64),
    })
}

/// Mean `||w_1 - w*||^2` over `draws` server initializations.
pub fn measure_init_gap(optimum: &ModelParams, init_range: f64, draws: usize, seed: u64) -> f64 {
    let draws = draws.max(1);
    (0..draws)
        .map(|d| {
            let mut rng = seed::rng_for(seed, &[TAG_SERVER_INIT, d as u64]);
            ModelParams::random_uniform(optimum.dim(), optimum.classes(), init_range, &mut rng)
                .distance_sq(optimum)
        })
        .sum::<f64>()
        / draws as f64
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeasuredInputs {
    pub epsilon: Vec<f64>,
    pub smooth: SmoothnessParams,
    pub components: BComponents,
    pub init_gap: f64,
}

pub fn measure_inputs(
    participants: &[Dataset],
    epsilon: &ContributionWeights,
    trainer: &TrainerConfig,
    init_range: f64,
    seed: u64,
) -> Result<MeasuredInputs> {
    let smooth = measure_smoothness_all(participants, trainer, seed::derive(seed, &[1]))?;
    let components =
        measure_b_components(participants, epsilon, None, trainer, seed::derive(seed, &[2]))?;
    let init_gap = measure_init_gap(&components.optimum, init_range, INIT_DRAWS, seed);
    Ok(MeasuredInputs {
        epsilon: epsilon.epsilon.clone(),
        smooth,
        components,
        init_gap,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub slope: f64,
    pub intercept: f64,
    pub points: usize,
    pub clipped: usize,
}

/// Least-squares slope of `ln gap` against `ln t`.
pub fn fit_loglog_slope(ts: &[f64], gaps: &[f64]) -> Result<RateFit> {
    if ts.len() != gaps.len() || ts.len() < 2 {
        return Err(Error::Measurement(format!(
            "need >= 2 matching points, got {} and {}",
            ts.len(),
            gaps.len()
        )));
    }
    let mut clipped = 0;
    let ys: Vec<f64> = gaps
        .iter()
        .map(|&g| {
            if g <= GAP_FLOOR {
                clipped += 1;
                GAP_FLOOR.ln()
            } else {
                g.ln()
            }
        })
        .collect();
    if clipped > 0 {
        warn!("{clipped} gaps at or below {GAP_FLOOR:e} were clipped");
    }
    let xs: Vec<f64> = ts.iter().map(|t| t.ln()).collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    if !(sxx > 0.0) {
        return Err(Error::Measurement("step counts do not vary".into()));
    }
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    Ok(RateFit {
        slope,
        intercept: my - slope * mx,
        points: xs.len(),
        clipped,
    })
}

/// Fits the tail half of a run: `ln(sum_i eps_i L_i(w^t) - optimum_loss)`
/// against the log of the mean cumulative step count.
pub fn verify_rate(run: &RunReport, optimum_loss: f64) -> Result<RateFit> {
    let tail = &run.records[run.records.len() / 2..];
    let ts: Vec<f64> = tail
        .iter()
        .map(|r| r.steps.iter().sum::<u64>() as f64 / r.steps.len() as f64)
        .collect();
    let gaps: Vec<f64> = tail.iter().map(|r| r.aggregate_loss - optimum_loss).collect();
    fit_loglog_slope(&ts, &gaps)
}
