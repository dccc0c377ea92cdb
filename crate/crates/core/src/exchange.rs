//! Class-wise noise-ratio normalization with noise-free server samples.
//!
//! A participant asks the server for `F_k = beta_k - z` of each class,
//! where `z` is its lowest class ratio. The server grants every demanding
//! class the same count `u`, the smallest amount it can supply across those
//! classes, so a lopsided server dataset cannot skew the participant's class
//! balance. Only `(class, count)` pairs travel to the server; no participant
//! instance leaves the participant.

use std::collections::HashSet;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::dataset::{sample_without_replacement, ClassId, Dataset, Instance};
use crate::error::{Error, Result};
use crate::estimator::{estimate_noise, EstimatorOptions, NoiseEstimate};
use crate::seed::{self, TAG_EXCHANGE};
use crate::trainer::TrainerConfig;

/// Limit on the demanded fraction.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DemandCap {
    /// `F_k <= 1 - z`; never binds since `beta_k <= 1`.
    #[default]
    OneMinusZ,
    /// `F_k <= z`.
    Z,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassDemand {
    pub class: ClassId,
    pub fraction: f64,
    pub demanded: usize,
    /// Δ¹: what the server could supply on its own, for demanding classes.
    pub provisional: Option<usize>,
    /// Δ: final allocation.
    pub granted: usize,
}

impl ClassDemand {
    pub fn is_demanding(&self) -> bool {
        self.demanded > 0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DemandPlan {
    pub classes: Vec<ClassDemand>,
    pub min_ratio: f64,
    pub min_class: ClassId,
    /// Smallest provisional allocation over demanding classes.
    pub u: Option<usize>,
    /// Some class could get nothing, so no class gets anything.
    pub starved: bool,
}

impl DemandPlan {
    pub fn demanded(&self) -> Vec<usize> {
        self.classes.iter().map(|c| c.demanded).collect()
    }

    pub fn granted(&self) -> Vec<usize> {
        self.classes.iter().map(|c| c.granted).collect()
    }
}

/// `demanded_k = floor((beta_k - z) * |D_k|)`; the least-noisy class asks
/// for nothing.
pub fn compute_demands(
    estimate: &NoiseEstimate,
    class_sizes: &[usize],
    cap: DemandCap,
) -> Result<DemandPlan> {
    if class_sizes.len() != estimate.classes.len() {
        return Err(Error::Allocation(format!(
            "{} class sizes for {} classes",
            class_sizes.len(),
            estimate.classes.len()
        )));
    }
    let z = estimate.min_ratio;
    let classes = estimate
        .classes
        .iter()
        .zip(class_sizes)
        .map(|(c, &size)| {
            let mut fraction = if c.class == estimate.min_class || c.empty {
                0.0
            } else {
                (c.beta - z).max(0.0)
            };
            fraction = match cap {
                DemandCap::OneMinusZ => fraction.min(1.0 - z),
                DemandCap::Z => fraction.min(z),
            };
            // The slack absorbs rounding in beta = |R|/|D| so exact products
            // such as 0.5 * 40 do not floor to 19.
            let demanded = (fraction * size as f64 + 1e-9).floor() as usize;
            ClassDemand {
                class: c.class,
                fraction,
                demanded,
                provisional: None,
                granted: 0,
            }
        })
        .collect();
    Ok(DemandPlan {
        classes,
        min_ratio: z,
        min_class: estimate.min_class,
        u: None,
        starved: false,
    })
}

/// Caps each demand by the server's supply, then grants every demanding
/// class the minimum `u` of those capped amounts. When `u = 0` nothing is
/// transferred at all.
pub fn fulfill_demands(plan: &DemandPlan, server_class_sizes: &[usize]) -> Result<DemandPlan> {
    if server_class_sizes.len() != plan.classes.len() {
        return Err(Error::Allocation(format!(
            "{} server class sizes for {} classes",
            server_class_sizes.len(),
            plan.classes.len()
        )));
    }
    let mut plan = plan.clone();
    for c in &mut plan.classes {
        c.provisional = c
            .is_demanding()
            .then(|| server_class_sizes[c.class].min(c.demanded));
    }
    plan.u = plan.classes.iter().filter_map(|c| c.provisional).min();
    plan.starved = plan.u == Some(0);
    let grant = plan.u.unwrap_or(0);
    for c in &mut plan.classes {
        c.granted = if c.is_demanding() { grant } else { 0 };
    }
    if plan.starved {
        warn!("server cannot supply every demanding class; no samples transferred");
    }
    Ok(plan)
}

/// A demand as sent to the server.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DemandMessage {
    pub class: ClassId,
    pub count: usize,
}

/// Audit record of one participant's exchange.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExchangeTranscript {
    pub participant: usize,
    pub demands: Vec<DemandMessage>,
    pub provisional: Vec<Option<usize>>,
    pub u: Option<usize>,
    pub granted: Vec<usize>,
    pub transferred: Vec<usize>,
    /// Granted instances dropped to keep |Ŝ_k| <= |D_k|.
    pub truncated: Vec<usize>,
    pub starved: bool,
    pub ratios_before: Vec<f64>,
    pub ratios_after: Vec<f64>,
    pub mean_ratio_before: f64,
    pub mean_ratio_after: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExchangedClass {
    pub class: ClassId,
    pub kept: usize,
    pub transferred_ids: Vec<u64>,
    pub truncated: usize,
    /// |Ŝ_k|
    pub size: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExchangeResult {
    /// Union of the Ŝ_k: noise-free survivors followed by transfers.
    pub dataset: Dataset,
    pub classes: Vec<ExchangedClass>,
    pub re_estimate: NoiseEstimate,
    pub transcript: ExchangeTranscript,
}

impl ExchangeResult {
    pub fn mean_ratio(&self) -> f64 {
        self.re_estimate.mean_ratio
    }
}

/// Builds Ŝ_k = S_k + Δ_k for every class, drops the removed instances and
/// re-estimates the noise ratios on the result.
#[allow(clippy::too_many_arguments)]
pub fn apply_exchange(
    participant: &Dataset,
    estimate: &NoiseEstimate,
    server_pool: &Dataset,
    plan: &DemandPlan,
    seed: u64,
    trainer: &TrainerConfig,
    options: EstimatorOptions,
    participant_index: usize,
) -> Result<ExchangeResult> {
    let kept_ids: HashSet<u64> = estimate.noise_free_ids().into_iter().collect();
    let own_ids: HashSet<u64> = participant.ids().into_iter().collect();
    let mut instances: Vec<Instance> = participant.select(&kept_ids).into_instances();
    let mut classes = Vec::with_capacity(plan.classes.len());
    let mut transferred = Vec::with_capacity(plan.classes.len());
    let mut truncated = Vec::with_capacity(plan.classes.len());

    for demand in &plan.classes {
        let k = demand.class;
        let noise = &estimate.classes[k];
        let pool = server_pool.class_subset(k);
        if demand.granted > pool.len() {
            return Err(Error::Allocation(format!(
                "class {k}: {} granted but the server holds {}",
                demand.granted,
                pool.len()
            )));
        }
        let room = noise.size.saturating_sub(noise.noise_free.len());
        let count = demand.granted.min(room);
        let mut rng = seed::rng_for(seed, &[TAG_EXCHANGE, k as u64]);
        let picked = sample_without_replacement(pool.instances(), count, &mut rng);
        let ids = picked.iter().map(|i| i.id).collect::<Vec<_>>();
        if let Some(id) = ids.iter().find(|id| own_ids.contains(id)) {
            return Err(Error::Allocation(format!(
                "server instance id {id} is already held by participant {participant_index}"
            )));
        }
        instances.extend(picked.into_iter().cloned());
        classes.push(ExchangedClass {
            class: k,
            kept: noise.noise_free.len(),
            transferred_ids: ids,
            truncated: demand.granted - count,
            size: noise.noise_free.len() + count,
        });
        transferred.push(count);
        truncated.push(demand.granted - count);
    }

    let dataset = participant.from_parts(participant.name().to_string(), instances);
    let re_estimate = estimate_noise(
        &dataset,
        trainer,
        seed::derive(seed, &[TAG_EXCHANGE, u64::MAX]),
        options,
    )?;
    let transcript = ExchangeTranscript {
        participant: participant_index,
        demands: plan
            .classes
            .iter()
            .filter(|c| c.is_demanding())
            .map(|c| DemandMessage {
                class: c.class,
                count: c.demanded,
            })
            .collect(),
        provisional: plan.classes.iter().map(|c| c.provisional).collect(),
        u: plan.u,
        granted: plan.granted(),
        transferred,
        truncated,
        starved: plan.starved,
        ratios_before: estimate.betas(),
        ratios_after: re_estimate.betas(),
        mean_ratio_before: estimate.mean_ratio,
        mean_ratio_after: re_estimate.mean_ratio,
    };
    Ok(ExchangeResult {
        dataset,
        classes,
        re_estimate,
        transcript,
    })
}

/// compute → fulfill → apply for one participant.
#[allow(clippy::too_many_arguments)]
pub fn normalize(
    participant: &Dataset,
    estimate: &NoiseEstimate,
    server_pool: &Dataset,
    cap: DemandCap,
    seed: u64,
    trainer: &TrainerConfig,
    options: EstimatorOptions,
    participant_index: usize,
) -> Result<ExchangeResult> {
    let plan = compute_demands(estimate, &estimate.class_sizes(), cap)?;
    let plan = fulfill_demands(&plan, &server_pool.class_sizes())?;
    apply_exchange(
        participant,
        estimate,
        server_pool,
        &plan,
        seed,
        trainer,
        options,
        participant_index,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{synth_gaussian, SynthParams};
    use crate::estimator::ClassNoise;
    use crate::trainer::LrSchedule;

    /// Estimate with the given ratios; sizes decide how many ids are removed.
    fn estimate(betas: &[f64], sizes: &[usize]) -> NoiseEstimate {
        let mut next = 0u64;
        let classes: Vec<ClassNoise> = betas
            .iter()
            .zip(sizes)
            .enumerate()
            .map(|(k, (&beta, &size))| {
                let removed_n = (beta * size as f64).round() as usize;
                let ids: Vec<u64> = (next..next + size as u64).collect();
                next += size as u64;
                ClassNoise {
                    class: k,
                    size,
                    noise_free: ids[removed_n..].to_vec(),
                    removed: ids[..removed_n].to_vec(),
                    beta,
                    empty: size == 0,
                }
            })
            .collect();
        let (min_class, min_ratio) = betas
            .iter()
            .enumerate()
            .fold((0, f64::INFINITY), |b, (k, &r)| if r < b.1 { (k, r) } else { b });
        NoiseEstimate {
            out_of_space_removed: vec![],
            min_ratio,
            min_class,
            mean_ratio: betas.iter().sum::<f64>() / betas.len() as f64,
            trainings: 3,
            classes,
        }
    }

    #[test]
    fn equal_ratios_demand_nothing() {
        let plan = compute_demands(&estimate(&[0.1, 0.1, 0.1], &[50, 50, 50]), &[50, 50, 50], DemandCap::default())
            .unwrap();
        assert_eq!(plan.demanded(), vec![0, 0, 0]);
        assert!(plan.classes.iter().all(|c| c.fraction == 0.0));
    }

    #[test]
    fn demands_follow_fraction() {
        let plan = compute_demands(&estimate(&[0.1, 0.3], &[100, 100]), &[100, 100], DemandCap::default())
            .unwrap();
        assert_eq!(plan.demanded(), vec![0, 20]);
        assert!((plan.classes[1].fraction - 0.2).abs() < 1e-15);

        let plan = compute_demands(
            &estimate(&[0.0, 0.5, 0.25], &[40, 40, 40]),
            &[40, 40, 40],
            DemandCap::default(),
        )
        .unwrap();
        assert_eq!(plan.demanded(), vec![0, 20, 10]);
    }

    #[test]
    fn z_cap_limits_fraction() {
        let plan = compute_demands(&estimate(&[0.1, 0.5], &[100, 100]), &[100, 100], DemandCap::Z).unwrap();
        assert_eq!(plan.demanded(), vec![0, 10]);
    }

    #[test]
    fn minimum_allocation_rule() {
        let plan = compute_demands(
            &estimate(&[0.0, 0.5, 0.25], &[40, 40, 40]),
            &[40, 40, 40],
            DemandCap::default(),
        )
        .unwrap();
        let plan = fulfill_demands(&plan, &[50, 50, 50]).unwrap();
        assert_eq!(
            plan.classes.iter().map(|c| c.provisional).collect::<Vec<_>>(),
            vec![None, Some(20), Some(10)]
        );
        assert_eq!(plan.u, Some(10));
        assert_eq!(plan.granted(), vec![0, 10, 10]);
    }

    #[test]
    fn starved_server_transfers_nothing() {
        let plan = compute_demands(&estimate(&[0.1, 0.3], &[100, 100]), &[100, 100], DemandCap::default())
            .unwrap();
        let plan = fulfill_demands(&plan, &[50, 0]).unwrap();
        assert_eq!(plan.u, Some(0));
        assert!(plan.starved);
        assert_eq!(plan.granted(), vec![0, 0]);

        let none = compute_demands(&estimate(&[0.2, 0.2], &[10, 10]), &[10, 10], DemandCap::default())
            .unwrap();
        let none = fulfill_demands(&none, &[5, 5]).unwrap();
        assert_eq!(none.u, None);
        assert_eq!(none.granted(), vec![0, 0]);
    }

    fn small_world() -> (Dataset, Dataset) {
        let all = synth_gaussian(&SynthParams {
            classes: 3,
            per_class: 120,
            dim: 2,
            separation: 8.0,
            seed: 2,
        })
        .unwrap();
        let (participant, server): (Vec<_>, Vec<_>) =
            all.instances().iter().cloned().partition(|i| i.id % 3 != 0);
        (
            Dataset::new("p", 3, 2, participant).unwrap(),
            Dataset::new("s", 3, 2, server).unwrap(),
        )
    }

    fn trainer() -> TrainerConfig {
        TrainerConfig {
            local_epochs: 5,
            batch_size: 16,
            lr: LrSchedule::Constant { eta: 0.1 },
            l2_lambda: 0.01,
            seed: 0,
        }
    }

    #[test]
    fn zero_grants_keep_only_noise_free() {
        let (participant, server) = small_world();
        let est = estimate_noise(&participant, &trainer(), 1, EstimatorOptions::default()).unwrap();
        let plan = compute_demands(&est, &est.class_sizes(), DemandCap::default()).unwrap();
        let mut plan = fulfill_demands(&plan, &server.class_sizes()).unwrap();
        for c in &mut plan.classes {
            c.granted = 0;
        }
        let out = apply_exchange(&participant, &est, &server, &plan, 3, &trainer(), EstimatorOptions::default(), 0)
            .unwrap();
        assert_eq!(out.dataset.ids(), est.noise_free_ids());
    }

    #[test]
    fn grants_add_server_instances() {
        let (participant, server) = small_world();
        // Fake an estimate with removals in classes 1 and 2.
        let mut est = estimate_noise(&participant, &trainer(), 1, EstimatorOptions::default()).unwrap();
        for k in 1..3 {
            let c = &mut est.classes[k];
            let moved: Vec<u64> = c.noise_free.drain(..20).collect();
            c.removed.extend(moved);
            c.removed.sort_unstable();
            c.beta = c.removed.len() as f64 / c.size as f64;
        }
        est.classes[0].beta = 0.0;
        est.classes[0].noise_free = participant.class_subset(0).ids();
        est.classes[0].removed.clear();
        est.min_class = 0;
        est.min_ratio = 0.0;

        let plan = compute_demands(&est, &est.class_sizes(), DemandCap::default()).unwrap();
        let plan = fulfill_demands(&plan, &server.class_sizes()).unwrap();
        let u = plan.u.unwrap();
        assert!(u > 0);
        let out = apply_exchange(&participant, &est, &server, &plan, 3, &trainer(), EstimatorOptions::default(), 0)
            .unwrap();
        let server_ids: HashSet<u64> = server.ids().into_iter().collect();
        let participant_ids: HashSet<u64> = participant.ids().into_iter().collect();
        for k in 1..3 {
            let c = &out.classes[k];
            assert_eq!(c.transferred_ids.len(), u);
            assert_eq!(c.size, est.classes[k].noise_free.len() + u);
            assert!(c.size <= est.classes[k].size);
            for id in &c.transferred_ids {
                assert!(server_ids.contains(id) && !participant_ids.contains(id));
            }
        }
        assert_eq!(out.transcript.transferred, vec![0, u, u]);
        assert_eq!(
            out.transcript.demands,
            plan.classes
                .iter()
                .filter(|c| c.demanded > 0)
                .map(|c| DemandMessage { class: c.class, count: c.demanded })
                .collect::<Vec<_>>()
        );
    }

    #[test]
    fn over_allocation_is_an_error() {
        let (participant, server) = small_world();
        let est = estimate_noise(&participant, &trainer(), 1, EstimatorOptions::default()).unwrap();
        let mut plan = compute_demands(&est, &est.class_sizes(), DemandCap::default()).unwrap();
        plan.classes[1].granted = server.class_subset(1).len() + 1;
        assert!(matches!(
            apply_exchange(&participant, &est, &server, &plan, 3, &trainer(), EstimatorOptions::default(), 0),
            Err(Error::Allocation(_))
        ));
    }

    #[test]
    fn grants_truncate_at_class_size() {
        let (participant, server) = small_world();
        let est = estimate_noise(&participant, &trainer(), 1, EstimatorOptions::default()).unwrap();
        let mut plan = compute_demands(&est, &est.class_sizes(), DemandCap::default()).unwrap();
        let room = est.classes[2].size - est.classes[2].noise_free.len();
        plan.classes[2].granted = room + 5;
        let out = apply_exchange(&participant, &est, &server, &plan, 3, &trainer(), EstimatorOptions::default(), 0)
            .unwrap();
        assert_eq!(out.classes[2].truncated, 5);
        assert_eq!(out.classes[2].size, est.classes[2].size);
    }
}
