//! Class-wise noise-ratio estimation by three-fold cross-prediction.
//!
//! The participant's data is split into three folds. A fresh model is
//! trained on each fold in turn and predicts the instances of the other two,
//! so every instance ends up with its existing label and two predictions
//! from models that never saw it. An instance is noise-free only when all
//! three agree; `beta_k = |R_k| / |D_k|` over the removed set `R_k`.

use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{split_three_folds, ClassId, Dataset, FoldSplit, Label};
use crate::error::{Error, Result};
use crate::seed::{self, TAG_ESTIMATE};
use crate::trainer::{predict, train_local, ModelParams, TrainerConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    NoiseFree,
    Noisy,
}

pub fn classify_instance(existing: ClassId, pred1: ClassId, pred2: ClassId) -> Verdict {
    if existing == pred1 && existing == pred2 {
        Verdict::NoiseFree
    } else {
        Verdict::Noisy
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EstimatorOptions {
    /// Re-split the data for every class (3·c trainings) instead of sharing
    /// one split across classes (3 trainings).
    pub resplit_per_class: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassNoise {
    pub class: ClassId,
    /// |D_k|
    pub size: usize,
    /// S_k, sorted ids.
    pub noise_free: Vec<u64>,
    /// R_k, sorted ids.
    pub removed: Vec<u64>,
    pub beta: f64,
    /// No instance carries this label; `beta` is recorded as 0.
    pub empty: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseEstimate {
    pub classes: Vec<ClassNoise>,
    /// Out-of-space labels can never agree with a prediction.
    pub out_of_space_removed: Vec<u64>,
    /// z: minimum ratio over non-empty classes.
    pub min_ratio: f64,
    /// b: the class attaining `min_ratio` (lowest id on ties).
    pub min_class: ClassId,
    /// Mean of the class ratios over all `c` classes.
    pub mean_ratio: f64,
    pub trainings: usize,
}

impl NoiseEstimate {
    pub fn betas(&self) -> Vec<f64> {
        self.classes.iter().map(|c| c.beta).collect()
    }

    pub fn class_sizes(&self) -> Vec<usize> {
        self.classes.iter().map(|c| c.size).collect()
    }

    /// All removed ids, out-of-space included, sorted.
    pub fn removed_ids(&self) -> Vec<u64> {
        let mut ids: Vec<u64> = self
            .classes
            .iter()
            .flat_map(|c| c.removed.iter().copied())
            .chain(self.out_of_space_removed.iter().copied())
            .collect();
        ids.sort_unstable();
        ids
    }

    pub fn noise_free_ids(&self) -> Vec<u64> {
        let mut ids: Vec<u64> = self
            .classes
            .iter()
            .flat_map(|c| c.noise_free.iter().copied())
            .collect();
        ids.sort_unstable();
        ids
    }

    /// Largest minus smallest class ratio over non-empty classes.
    pub fn spread(&self) -> f64 {
        let betas = self.classes.iter().filter(|c| !c.empty).map(|c| c.beta);
        let (lo, hi) = betas.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), b| {
            (lo.min(b), hi.max(b))
        });
        if lo.is_finite() {
            hi - lo
        } else {
            0.0
        }
    }
}

/// Two out-of-fold predictions per instance id.
#[derive(Clone, Debug, PartialEq)]
pub struct CrossPredictions {
    pub predictions: HashMap<u64, Vec<ClassId>>,
    pub trainings: usize,
}

/// Trains a fresh model on each fold and predicts the other two. The three
/// trainings are independent and run in parallel; each uses its own seed so
/// the result matches a sequential run.
pub fn cross_predict(
    split: &FoldSplit,
    config: &TrainerConfig,
    seed: u64,
) -> Result<CrossPredictions> {
    let dim = split.folds[0].dim();
    let classes = split.folds[0].class_count();
    let models = (0..3)
        .into_par_iter()
        .map(|j| {
            let view = split.folds[j].view();
            let fresh = ModelParams::zeros(dim, classes);
            if view.is_empty() {
                // Nothing to learn from: the untrained model predicts class 0.
                return Ok(fresh);
            }
            let cfg = config.with_seed(seed::derive(seed, &[j as u64]));
            train_local(&fresh, &view, &cfg, 0).map(|o| o.model)
        })
        .collect::<Result<Vec<_>>>()?;

    let mut predictions: HashMap<u64, Vec<ClassId>> = HashMap::new();
    for (j, model) in models.iter().enumerate() {
        for offset in 1..3 {
            for inst in split.folds[(j + offset) % 3].instances() {
                predictions
                    .entry(inst.id)
                    .or_default()
                    .push(predict(model, &inst.features));
            }
        }
    }
    Ok(CrossPredictions {
        predictions,
        trainings: 3,
    })
}

#[derive(Default)]
struct ClassTally {
    noise_free: Vec<u64>,
    removed: Vec<u64>,
}

fn tally_class(
    dataset: &Dataset,
    k: ClassId,
    preds: &CrossPredictions,
    tally: &mut ClassTally,
) -> Result<()> {
    for inst in dataset.instances() {
        if inst.observed != Label::Class(k) {
            continue;
        }
        let p = preds.predictions.get(&inst.id).ok_or_else(|| {
            Error::Estimation(format!("instance {} received no predictions", inst.id))
        })?;
        let [p1, p2] = p[..] else {
            return Err(Error::Estimation(format!(
                "instance {} received {} predictions, expected 2",
                inst.id,
                p.len()
            )));
        };
        match classify_instance(k, p1, p2) {
            Verdict::NoiseFree => tally.noise_free.push(inst.id),
            Verdict::Noisy => tally.removed.push(inst.id),
        }
    }
    Ok(())
}

pub fn estimate_noise(
    dataset: &Dataset,
    config: &TrainerConfig,
    seed: u64,
    options: EstimatorOptions,
) -> Result<NoiseEstimate> {
    if dataset.len() < 3 {
        return Err(Error::Estimation(format!(
            "need at least 3 instances, found {}",
            dataset.len()
        )));
    }
    config.validate()?;
    let c = dataset.class_count();
    let mut tallies: Vec<ClassTally> = (0..c).map(|_| ClassTally::default()).collect();
    let mut trainings = 0;

    if options.resplit_per_class {
        for (k, tally) in tallies.iter_mut().enumerate() {
            let tag = k as u64 + 1;
            let split = split_three_folds(dataset, seed::derive(seed, &[TAG_ESTIMATE, tag]))?;
            let preds = cross_predict(&split, config, seed::derive(seed, &[TAG_ESTIMATE, tag, 1]))?;
            trainings += preds.trainings;
            tally_class(dataset, k, &preds, tally)?;
        }
    } else {
        let split = split_three_folds(dataset, seed::derive(seed, &[TAG_ESTIMATE, 0]))?;
        let preds = cross_predict(&split, config, seed::derive(seed, &[TAG_ESTIMATE, 0, 1]))?;
        trainings += preds.trainings;
        for (k, tally) in tallies.iter_mut().enumerate() {
            tally_class(dataset, k, &preds, tally)?;
        }
    }

    let classes: Vec<ClassNoise> = tallies
        .into_iter()
        .enumerate()
        .map(|(k, mut t)| {
            t.noise_free.sort_unstable();
            t.removed.sort_unstable();
            let size = t.noise_free.len() + t.removed.len();
            let beta = if size == 0 {
                0.0
            } else {
                t.removed.len() as f64 / size as f64
            };
            ClassNoise {
                class: k,
                size,
                noise_free: t.noise_free,
                removed: t.removed,
                beta,
                empty: size == 0,
            }
        })
        .collect();

    let (min_class, min_ratio) = classes
        .iter()
        .filter(|c| !c.empty)
        .fold(None::<(ClassId, f64)>, |best, c| match best {
            Some((_, b)) if c.beta >= b => best,
            _ => Some((c.class, c.beta)),
        })
        .unwrap_or((0, 0.0));
    let mean_ratio = classes.iter().map(|c| c.beta).sum::<f64>() / c as f64;
    let out_of_space_removed = dataset.out_of_space().ids();

    Ok(NoiseEstimate {
        classes,
        out_of_space_removed,
        min_ratio,
        min_class,
        mean_ratio,
        trainings,
    })
}
