//! Influence-based aggregation weights.
//!
//! The influence of participant `i` at round `t` is how much the server-test
//! loss moves when `i` is left out of the aggregate, accumulated with a
//! decayed history:
//!
//! ```text
//! s_i^t     = | loss(w^t without i) - loss(w^t) |
//! gamma_i^t = q_t * gamma_i^{t-1} + s_i^t,   q_t = (1 - eta_t * lambda)^E
//! eps_i^t   = (1 / gamma_i^t) / sum_j (1 / gamma_j^t)
//! ```
//!
//! `q_t` stands in for the product of `(I - eta H)` over local epochs: for a
//! `lambda`-strongly convex loss it is the contraction those factors share.
//! Leave-one-out aggregates weight the remaining models by their effective
//! (noise-adjusted) sizes.

use serde::{Deserialize, Serialize};

use crate::dataset::LabeledView;
use crate::error::{Error, Result};
use crate::trainer::{loss, ModelParams};

pub const GAMMA_MIN: f64 = 1e-8;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EffectiveSize {
    /// `n * (1 - beta)`: instances expected to carry clean labels.
    #[default]
    NoiseFree,
    /// `n * beta`.
    Literal,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InfluenceMeasure {
    /// Absolute change in server-test loss.
    #[default]
    LossChange,
    /// Frobenius norm of the decayed parameter displacement.
    ParameterNorm,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ContributionOptions {
    pub effective_size: EffectiveSize,
    pub measure: InfluenceMeasure,
    pub gamma_min: f64,
    /// Keep the weights computed after round 1 for the whole run.
    pub freeze_epsilon: bool,
}

impl Default for ContributionOptions {
    fn default() -> Self {
        ContributionOptions {
            effective_size: EffectiveSize::default(),
            measure: InfluenceMeasure::default(),
            gamma_min: GAMMA_MIN,
            freeze_epsilon: false,
        }
    }
}

pub fn effective_sizes(sizes: &[usize], betas: &[f64], mode: EffectiveSize) -> Vec<f64> {
    sizes
        .iter()
        .zip(betas)
        .map(|(&n, &b)| match mode {
            EffectiveSize::NoiseFree => n as f64 * (1.0 - b),
            EffectiveSize::Literal => n as f64 * b,
        })
        .collect()
}

fn check_shapes(models: &[ModelParams]) -> Result<()> {
    if let Some(first) = models.first() {
        if let Some(m) = models.iter().find(|m| m.shape() != first.shape()) {
            return Err(Error::Aggregation(format!(
                "model shapes differ: {:?} vs {:?}",
                first.shape(),
                m.shape()
            )));
        }
    }
    Ok(())
}

/// `sum_{l != i} m_l w_l / sum_{l != i} m_l`.
pub fn leave_one_out_aggregate(
    models: &[ModelParams],
    sizes: &[f64],
    excluded: usize,
) -> Result<ModelParams> {
    if models.len() < 2 {
        return Err(Error::DegenerateAggregate(format!(
            "leave-one-out needs at least 2 participants, got {}",
            models.len()
        )));
    }
    if sizes.len() != models.len() || excluded >= models.len() {
        return Err(Error::Aggregation(format!(
            "{} sizes for {} models, excluded index {excluded}",
            sizes.len(),
            models.len()
        )));
    }
    check_shapes(models)?;
    let total: f64 = sizes
        .iter()
        .enumerate()
        .filter(|&(l, _)| l != excluded)
        .map(|(_, m)| m)
        .sum();
    if !(total > 0.0) {
        return Err(Error::DegenerateAggregate(format!(
            "remaining effective sizes sum to {total} without participant {excluded}"
        )));
    }
    let (rows, cols) = models[0].shape();
    let mut out = ModelParams::zeros(rows - 1, cols);
    for (l, (model, &m)) in models.iter().zip(sizes).enumerate() {
        if l != excluded {
            out.axpy(m / total, model);
        }
    }
    Ok(out)
}

/// `(1 - eta * lambda)^E`, clipped to [0, 1].
pub fn decay_factor(eta: f64, l2: f64, local_epochs: usize) -> f64 {
    (1.0 - eta * l2).clamp(0.0, 1.0).powi(local_epochs as i32)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct InfluenceTerm {
    /// s_i^t before history and flooring.
    pub instant: f64,
    /// gamma_i^t after the floor.
    pub gamma: f64,
}

/// Running influence history for all participants. Starts at zero.
#[derive(Clone, Debug, PartialEq)]
pub struct InfluenceState {
    gamma: Vec<f64>,
    displacement: Vec<Option<ModelParams>>,
    options: ContributionOptions,
}

impl InfluenceState {
    pub fn new(participants: usize, options: ContributionOptions) -> Self {
        InfluenceState {
            gamma: vec![0.0; participants],
            displacement: vec![None; participants],
            options,
        }
    }

    /// Current gammas, floored so their inverses stay finite.
    pub fn gammas(&self) -> Vec<f64> {
        self.gamma
            .iter()
            .map(|&g| g.max(self.options.gamma_min))
            .collect()
    }

    /// Updates participant `i` against this round's aggregate.
    #[allow(clippy::too_many_arguments)]
    pub fn influence(
        &mut self,
        i: usize,
        models: &[ModelParams],
        sizes: &[f64],
        aggregated: &ModelParams,
        server_test: &LabeledView<'_>,
        decay: f64,
        l2: f64,
    ) -> Result<InfluenceTerm> {
        let without = leave_one_out_aggregate(models, sizes, i)?;
        let (instant, raw) = match self.options.measure {
            InfluenceMeasure::LossChange => {
                let s = (loss(&without, server_test, l2)? - loss(aggregated, server_test, l2)?).abs();
                (s, decay * self.gamma[i] + s)
            }
            InfluenceMeasure::ParameterNorm => {
                let step = without.sub(aggregated);
                let instant = step.norm_sq().sqrt();
                let delta = match self.displacement[i].take() {
                    Some(prev) => {
                        let mut d = prev.scaled(decay);
                        d.axpy(1.0, &step);
                        d
                    }
                    None => step,
                };
                let norm = delta.norm_sq().sqrt();
                self.displacement[i] = Some(delta);
                (instant, norm)
            }
        };
        self.gamma[i] = raw;
        Ok(InfluenceTerm {
            instant,
            gamma: raw.max(self.options.gamma_min),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContributionWeights {
    pub epsilon: Vec<f64>,
}

impl ContributionWeights {
    pub fn uniform(n: usize) -> Self {
        ContributionWeights {
            epsilon: vec![1.0 / n as f64; n],
        }
    }

    /// Weights proportional to `sizes`.
    pub fn proportional(sizes: &[f64]) -> Result<Self> {
        let total: f64 = sizes.iter().sum();
        if !(total > 0.0) || sizes.iter().any(|s| *s < 0.0) {
            return Err(Error::Aggregation(format!("cannot weight by sizes {sizes:?}")));
        }
        Ok(ContributionWeights {
            epsilon: sizes.iter().map(|s| s / total).collect(),
        })
    }
}

/// `eps_i = (1/gamma_i) / sum_j (1/gamma_j)`. Every gamma must already be
/// floored to a positive value.
pub fn contributions(gammas: &[f64]) -> Result<ContributionWeights> {
    if gammas.is_empty() {
        return Err(Error::Aggregation("no participants".into()));
    }
    if let Some(g) = gammas.iter().find(|g| !(**g > 0.0 && g.is_finite())) {
        return Err(Error::Aggregation(format!(
            "influence {g} must be positive and finite"
        )));
    }
    let inverse: Vec<f64> = gammas.iter().map(|g| 1.0 / g).collect();
    let omega: f64 = inverse.iter().sum();
    Ok(ContributionWeights {
        epsilon: inverse.iter().map(|v| v / omega).collect(),
    })
}
