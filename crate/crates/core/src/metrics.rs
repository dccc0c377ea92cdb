//! Accuracy, F1 and confusion matrices.

use serde::{Deserialize, Serialize};

use crate::dataset::{ClassId, Dataset};
use crate::error::{Error, Result};
use crate::trainer::{predict, ModelParams};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LabelSource {
    True,
    Observed,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scope {
    Local,
    Global,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum F1Average {
    #[default]
    Macro,
    Micro,
}

/// Rows are reference labels, columns predictions.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        ConfusionMatrix {
            counts: vec![vec![0; classes]; classes],
        }
    }

    pub fn from_pairs(classes: usize, pairs: impl IntoIterator<Item = (ClassId, ClassId)>) -> Self {
        let mut m = ConfusionMatrix::new(classes);
        for (actual, predicted) in pairs {
            m.counts[actual][predicted] += 1;
        }
        m
    }

    pub fn classes(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.classes()).map(|k| self.counts[k][k]).sum()
    }

    pub fn supports(&self) -> Vec<u64> {
        self.counts.iter().map(|r| r.iter().sum()).collect()
    }

    pub fn predicted_totals(&self) -> Vec<u64> {
        (0..self.classes())
            .map(|k| self.counts.iter().map(|r| r[k]).sum())
            .collect()
    }

    pub fn accuracy(&self) -> f64 {
        match self.total() {
            0 => 0.0,
            n => self.trace() as f64 / n as f64,
        }
    }

    pub fn class_scores(&self) -> Vec<ClassScores> {
        let supports = self.supports();
        let predicted = self.predicted_totals();
        (0..self.classes())
            .map(|k| {
                let tp = self.counts[k][k] as f64;
                let precision = if predicted[k] == 0 { 0.0 } else { tp / predicted[k] as f64 };
                let recall = if supports[k] == 0 { 0.0 } else { tp / supports[k] as f64 };
                let f1 = if precision + recall == 0.0 {
                    0.0
                } else {
                    2.0 * precision * recall / (precision + recall)
                };
                ClassScores {
                    class: k,
                    precision,
                    recall,
                    f1,
                    support: supports[k],
                    zero_support: supports[k] == 0,
                }
            })
            .collect()
    }

    pub fn render(&self) -> String {
        let width = self
            .counts
            .iter()
            .flatten()
            .map(|v| v.to_string().len())
            .max()
            .unwrap_or(1)
            .max(4);
        let mut out = format!("{:>6}", "t\\p");
        for k in 0..self.classes() {
            out.push_str(&format!(" {k:>width$}"));
        }
        out.push('\n');
        for (k, row) in self.counts.iter().enumerate() {
            out.push_str(&format!("{k:>6}"));
            for v in row {
                out.push_str(&format!(" {v:>width$}"));
            }
            out.push('\n');
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassScores {
    pub class: ClassId,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
    /// No reference instance of this class; its F1 counts as 0.
    pub zero_support: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsSnapshot {
    pub scope: Scope,
    pub accuracy: f64,
    pub macro_f1: f64,
    pub micro_f1: f64,
    pub per_class: Vec<ClassScores>,
    pub evaluated: usize,
    /// Skipped because the reference label was out of space.
    pub excluded: usize,
}

impl MetricsSnapshot {
    pub fn from_confusion(confusion: &ConfusionMatrix, scope: Scope, excluded: usize) -> Self {
        let per_class = confusion.class_scores();
        let macro_f1 = if per_class.is_empty() {
            0.0
        } else {
            per_class.iter().map(|c| c.f1).sum::<f64>() / per_class.len() as f64
        };
        let accuracy = confusion.accuracy();
        MetricsSnapshot {
            scope,
            accuracy,
            macro_f1,
            // Single-label multi-class: micro precision = micro recall = accuracy.
            micro_f1: accuracy,
            per_class,
            evaluated: confusion.total() as usize,
            excluded,
        }
    }

    pub fn f1(&self, average: F1Average) -> f64 {
        match average {
            F1Average::Macro => self.macro_f1,
            F1Average::Micro => self.micro_f1,
        }
    }
}

pub fn evaluate(
    model: &ModelParams,
    dataset: &Dataset,
    label_source: LabelSource,
    scope: Scope,
) -> Result<(MetricsSnapshot, ConfusionMatrix)> {
    if dataset.is_empty() {
        return Err(Error::Metric("cannot evaluate on an empty dataset".into()));
    }
    let mut pairs = Vec::with_capacity(dataset.len());
    let mut excluded = 0;
    for inst in dataset.instances() {
        let reference = match label_source {
            LabelSource::True => Some(inst.true_label().ok_or_else(|| {
                Error::Metric(format!("instance {} has no true label", inst.id))
            })?),
            LabelSource::Observed => inst.observed.class(),
        };
        match reference {
            Some(k) => pairs.push((k, predict(model, &inst.features))),
            None => excluded += 1,
        }
    }
    let confusion = ConfusionMatrix::from_pairs(dataset.class_count(), pairs);
    Ok((
        MetricsSnapshot::from_confusion(&confusion, scope, excluded),
        confusion,
    ))
}

/// Weighted contribution at some noise level relative to the clean one.
pub fn contribution_ratio(eps_noisy: f64, eps_clean: f64) -> Result<f64> {
    if !(eps_clean > 0.0) {
        return Err(Error::Metric(format!(
            "clean contribution must be positive, got {eps_clean}"
        )));
    }
    Ok(eps_noisy / eps_clean)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{Instance, Label};

    fn two_class(n: usize) -> Dataset {
        let instances = (0..n)
            .map(|i| {
                let k = i % 2;
                let x = if k == 0 { -1.0 } else { 1.0 };
                Instance::new(i as u64, vec![x], Label::Class(k), Some(k))
            })
            .collect();
        Dataset::new("two", 2, 1, instances).unwrap()
    }

    #[test]
    fn perfect_predictor() {
        let m = ModelParams::from_weights(1, 2, vec![-1.0, 1.0, 0.0, 0.0]).unwrap();
        let (snap, cm) = evaluate(&m, &two_class(10), LabelSource::True, Scope::Global).unwrap();
        assert_eq!(snap.accuracy, 1.0);
        assert_eq!(snap.macro_f1, 1.0);
        assert_eq!(cm.counts, vec![vec![5, 0], vec![0, 5]]);
    }

    #[test]
    fn constant_predictor() {
        let m = ModelParams::zeros(1, 2);
        let (snap, cm) = evaluate(&m, &two_class(10), LabelSource::True, Scope::Local).unwrap();
        assert_eq!(snap.accuracy, 0.5);
        assert!((snap.macro_f1 - 1.0 / 3.0).abs() < 1e-15);
        assert!((snap.per_class[0].f1 - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(cm.supports(), vec![5, 5]);
        assert_eq!(cm.trace() as f64 / cm.total() as f64, snap.accuracy);
    }

    #[test]
    fn zero_support_class_is_flagged() {
        let cm = ConfusionMatrix::from_pairs(3, [(0, 0), (1, 1), (1, 0)]);
        let snap = MetricsSnapshot::from_confusion(&cm, Scope::Global, 0);
        assert!(snap.per_class[2].zero_support);
        assert_eq!(snap.per_class[2].f1, 0.0);
        assert!(snap.macro_f1 < 1.0);
    }

    #[test]
    fn missing_true_labels() {
        let instances = vec![Instance::new(0, vec![0.0], Label::Class(0), None)];
        let d = Dataset::new("x", 2, 1, instances).unwrap();
        let m = ModelParams::zeros(1, 2);
        assert!(matches!(
            evaluate(&m, &d, LabelSource::True, Scope::Global),
            Err(Error::Metric(_))
        ));
        let (snap, _) = evaluate(&m, &d, LabelSource::Observed, Scope::Global).unwrap();
        assert_eq!(snap.accuracy, 1.0);
    }

    #[test]
    fn observed_source_skips_out_of_space() {
        let instances = vec![
            Instance::new(0, vec![0.0], Label::Class(0), Some(0)),
            Instance::new(1, vec![0.0], Label::OutOfSpace, Some(1)),
        ];
        let d = Dataset::new("x", 2, 1, instances).unwrap();
        let (snap, _) = evaluate(&ModelParams::zeros(1, 2), &d, LabelSource::Observed, Scope::Global)
            .unwrap();
        assert_eq!((snap.evaluated, snap.excluded), (1, 1));
    }

    #[test]
    fn ratios() {
        assert_eq!(contribution_ratio(0.25, 0.25).unwrap(), 1.0);
        assert_eq!(contribution_ratio(0.05, 0.10).unwrap(), 0.5);
        assert!(contribution_ratio(0.1, 0.0).is_err());
    }
}
