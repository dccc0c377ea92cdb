//! Local model training: an L2-regularized multinomial logistic (softmax)
//! classifier trained with mini-batch SGD.
//!
//! The weight parameter matrix has shape `(d + 1) x c`; the last row is the
//! bias, applied through an implicit constant-1 feature. The objective for a
//! set of samples `S` is
//!
//! ```text
//! loss(W) = (1/|S|) * sum_{(x, y) in S} -log softmax(x~^T W)_y + (lambda/2) * ||W||_F^2
//! ```
//!
//! which is `lambda`-strongly convex and smooth, so the convergence bounds
//! used by the round estimator apply to it.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::dataset::{ClassId, LabeledView, Sample};
use crate::error::{Error, Result};
use crate::seed;

pub const DEFAULT_L2: f64 = 0.01;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    rows: usize,
    cols: usize,
    weights: Vec<f64>,
}

impl ModelParams {
    pub fn zeros(dim: usize, classes: usize) -> Self {
        ModelParams {
            rows: dim + 1,
            cols: classes,
            weights: vec![0.0; (dim + 1) * classes],
        }
    }

    /// Row-major `(dim + 1) x classes` weights, bias row last.
    pub fn from_weights(dim: usize, classes: usize, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != (dim + 1) * classes {
            return Err(Error::ModelFormat(format!(
                "{} weights for a {}x{classes} matrix",
                weights.len(),
                dim + 1
            )));
        }
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::ModelFormat("non-finite weight".into()));
        }
        Ok(ModelParams {
            rows: dim + 1,
            cols: classes,
            weights,
        })
    }

    /// Entries drawn uniformly from `[-range, range]`.
    pub fn random_uniform(dim: usize, classes: usize, range: f64, rng: &mut seed::Rng) -> Self {
        use rand::Rng as _;
        let weights = (0..(dim + 1) * classes)
            .map(|_| rng.random_range(-range..=range))
            .collect();
        ModelParams {
            rows: dim + 1,
            cols: classes,
            weights,
        }
    }

    pub fn dim(&self) -> usize {
        self.rows - 1
    }

    pub fn classes(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn get(&self, row: usize, class: ClassId) -> f64 {
        self.weights[row * self.cols + class]
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().all(|w| w.is_finite())
    }

    pub fn norm_sq(&self) -> f64 {
        self.weights.iter().map(|w| w * w).sum()
    }

    pub fn dot(&self, other: &ModelParams) -> f64 {
        self.weights.iter().zip(&other.weights).map(|(a, b)| a * b).sum()
    }

    pub fn distance_sq(&self, other: &ModelParams) -> f64 {
        self.weights
            .iter()
            .zip(&other.weights)
            .map(|(a, b)| (a - b) * (a - b))
            .sum()
    }

    /// `self += scale * other`.
    pub fn axpy(&mut self, scale: f64, other: &ModelParams) {
        for (a, b) in self.weights.iter_mut().zip(&other.weights) {
            *a += scale * b;
        }
    }

    pub fn scaled(&self, scale: f64) -> ModelParams {
        ModelParams {
            weights: self.weights.iter().map(|w| w * scale).collect(),
            ..*self
        }
    }

    pub fn sub(&self, other: &ModelParams) -> ModelParams {
        ModelParams {
            weights: self
                .weights
                .iter()
                .zip(&other.weights)
                .map(|(a, b)| a - b)
                .collect(),
            ..*self
        }
    }

    /// Class scores `x~^T W` for a raw feature vector.
    pub fn scores(&self, features: &[f64]) -> Vec<f64> {
        let mut scores = self.weights[self.rows * self.cols - self.cols..].to_vec();
        for (j, x) in features.iter().enumerate() {
            let row = &self.weights[j * self.cols..(j + 1) * self.cols];
            for (s, w) in scores.iter_mut().zip(row) {
                *s += x * w;
            }
        }
        scores
    }

    /// Text form: version line, `shape rows cols`, one line per row.
    pub fn to_text(&self) -> String {
        let mut out = String::from("fednl-model v1\n");
        let _ = writeln!(out, "shape {} {}", self.rows, self.cols);
        for r in 0..self.rows {
            let row: Vec<String> = self.weights[r * self.cols..(r + 1) * self.cols]
                .iter()
                .map(|w| w.to_string())
                .collect();
            let _ = writeln!(out, "{}", row.join(" "));
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let bad = |m: String| Error::ModelFormat(m);
        let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty());
        if lines.next() != Some("fednl-model v1") {
            return Err(bad("missing `fednl-model v1` header".into()));
        }
        let shape: Vec<usize> = lines
            .next()
            .and_then(|l| l.strip_prefix("shape "))
            .map(|s| s.split_whitespace().filter_map(|v| v.parse().ok()).collect())
            .unwrap_or_default();
        let [rows, cols] = shape[..] else {
            return Err(bad("missing or malformed `shape` line".into()));
        };
        if rows < 1 {
            return Err(bad("shape needs at least the bias row".into()));
        }
        let mut weights = Vec::with_capacity(rows * cols);
        for (r, line) in lines.enumerate() {
            let before = weights.len();
            for v in line.split_whitespace() {
                weights.push(v.parse::<f64>().map_err(|_| bad(format!("bad weight `{v}` in row {r}")))?);
            }
            if weights.len() - before != cols {
                return Err(bad(format!("row {r} has {} entries, expected {cols}", weights.len() - before)));
            }
        }
        ModelParams::from_weights(rows - 1, cols, weights)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum LrSchedule {
    Constant { eta: f64 },
    /// `eta_t = theta / (t + alpha)`.
    Diminishing { theta: f64, alpha: f64 },
}

impl LrSchedule {
    /// Step size at global SGD step `t >= 1`.
    pub fn at(&self, t: u64) -> f64 {
        match *self {
            LrSchedule::Constant { eta } => eta,
            LrSchedule::Diminishing { theta, alpha } => theta / (t as f64 + alpha),
        }
    }
}

pub fn lr_at(schedule: &LrSchedule, t: u64) -> f64 {
    schedule.at(t)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainerConfig {
    pub local_epochs: usize,
    pub batch_size: usize,
    pub lr: LrSchedule,
    pub l2_lambda: f64,
    pub seed: u64,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        TrainerConfig {
            local_epochs: 5,
            batch_size: 16,
            lr: LrSchedule::Constant { eta: 0.05 },
            l2_lambda: DEFAULT_L2,
            seed: 0,
        }
    }
}

impl TrainerConfig {
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.local_epochs < 1 {
            problems.push("local_epochs must be >= 1".to_string());
        }
        if self.batch_size < 1 {
            problems.push("batch_size must be >= 1".to_string());
        }
        if !(self.l2_lambda >= 0.0 && self.l2_lambda.is_finite()) {
            problems.push(format!("l2_lambda must be finite and >= 0, got {}", self.l2_lambda));
        }
        match self.lr {
            LrSchedule::Constant { eta } if !(eta > 0.0 && eta.is_finite()) => {
                problems.push(format!("constant learning rate must be > 0, got {eta}"))
            }
            LrSchedule::Diminishing { theta, alpha } if !(theta > 0.0 && alpha > 0.0) => problems
                .push(format!(
                    "diminishing schedule needs theta > 0 and alpha > 0, got ({theta}, {alpha})"
                )),
            _ => {}
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::TrainerConfig(problems.join("; ")))
        }
    }

    pub fn with_seed(&self, seed: u64) -> TrainerConfig {
        TrainerConfig {
            seed,
            ..self.clone()
        }
    }
}

fn log_sum_exp(scores: &[f64]) -> f64 {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + scores.iter().map(|s| (s - max).exp()).sum::<f64>().ln()
}

/// Sum of per-sample cross-entropy and, when `grad` is given, the sum of
/// per-sample gradients added into it.
fn accumulate<'s, 'a: 's>(
    model: &ModelParams,
    samples: impl Iterator<Item = &'s Sample<'a>>,
    mut grad: Option<&mut ModelParams>,
) -> f64 {
    let cols = model.cols;
    let bias = (model.rows - 1) * cols;
    let mut total = 0.0;
    let mut probs = vec![0.0; cols];
    for s in samples {
        let scores = model.scores(s.features);
        let lse = log_sum_exp(&scores);
        total += lse - scores[s.label];
        if let Some(g) = grad.as_deref_mut() {
            for (p, sc) in probs.iter_mut().zip(&scores) {
                *p = (sc - lse).exp();
            }
            probs[s.label] -= 1.0;
            for (j, x) in s.features.iter().enumerate() {
                let row = &mut g.weights[j * cols..(j + 1) * cols];
                for (gw, p) in row.iter_mut().zip(&probs) {
                    *gw += x * p;
                }
            }
            for (gw, p) in g.weights[bias..].iter_mut().zip(&probs) {
                *gw += p;
            }
        }
    }
    total
}

fn check_shape(model: &ModelParams, dim: usize, classes: usize) -> Result<()> {
    if model.shape() != (dim + 1, classes) {
        return Err(Error::Aggregation(format!(
            "model shape {:?} does not match data (d={dim}, c={classes})",
            model.shape()
        )));
    }
    Ok(())
}

/// Mean cross-entropy plus `(l2/2) * ||W||^2`.
pub fn loss(model: &ModelParams, view: &LabeledView<'_>, l2: f64) -> Result<f64> {
    if view.is_empty() {
        return Err(Error::EmptyDataset);
    }
    check_shape(model, view.dim(), view.class_count())?;
    let data = accumulate(model, view.samples().iter(), None) / view.len() as f64;
    Ok(data + 0.5 * l2 * model.norm_sq())
}

/// Batch-mean loss and its exact gradient.
pub fn loss_and_gradient(
    model: &ModelParams,
    batch: &[Sample<'_>],
    l2: f64,
) -> Result<(f64, ModelParams)> {
    if batch.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut grad = ModelParams {
        weights: vec![0.0; model.weights.len()],
        ..*model
    };
    let total = accumulate(model, batch.iter(), Some(&mut grad));
    let n = batch.len() as f64;
    for (g, w) in grad.weights.iter_mut().zip(&model.weights) {
        *g = *g / n + l2 * w;
    }
    Ok((total / n + 0.5 * l2 * model.norm_sq(), grad))
}

pub fn gradient(model: &ModelParams, batch: &[Sample<'_>], l2: f64) -> Result<ModelParams> {
    loss_and_gradient(model, batch, l2).map(|(_, g)| g)
}

/// Upper bound on the gradient's Lipschitz constant:
/// `max ||x~||^2 / 2 + l2`, since the softmax Hessian has norm at most 1/2.
pub fn smoothness_bound(view: &LabeledView<'_>, l2: f64) -> f64 {
    let max_sq = view
        .samples()
        .iter()
        .map(|s| 1.0 + s.features.iter().map(|x| x * x).sum::<f64>())
        .fold(0.0, f64::max);
    0.5 * max_sq + l2
}

/// Argmax of the class scores, ties to the lowest class id.
pub fn predict(model: &ModelParams, features: &[f64]) -> ClassId {
    let scores = model.scores(features);
    let mut best = 0;
    for (k, &s) in scores.iter().enumerate().skip(1) {
        if s > scores[best] {
            best = k;
        }
    }
    best
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOutcome {
    pub model: ModelParams,
    pub final_loss: f64,
    /// SGD steps taken; the next call's `global_step_base` is the old base
    /// plus this.
    pub steps: u64,
}

/// `E` epochs of mini-batch SGD. Each epoch draws a permutation from the
/// seeded stream and walks it in contiguous batches. Step `s` of this call
/// uses the learning rate at global step `global_step_base + s` (1-based).
pub fn train_local(
    model: &ModelParams,
    view: &LabeledView<'_>,
    config: &TrainerConfig,
    global_step_base: u64,
) -> Result<TrainOutcome> {
    config.validate()?;
    if view.is_empty() {
        return Err(Error::EmptyDataset);
    }
    check_shape(model, view.dim(), view.class_count())?;
    let samples = view.samples();
    let mut rng = seed::rng(config.seed);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut model = model.clone();
    let mut step = global_step_base;
    let mut batch = Vec::with_capacity(config.batch_size);
    for _ in 0..config.local_epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(config.batch_size) {
            step += 1;
            batch.clear();
            batch.extend(chunk.iter().map(|&i| samples[i]));
            let (batch_loss, grad) = loss_and_gradient(&model, &batch, config.l2_lambda)?;
            if !batch_loss.is_finite() {
                return Err(Error::Divergence { step, loss: batch_loss });
            }
            model.axpy(-config.lr.at(step), &grad);
            if !model.is_finite() {
                return Err(Error::Divergence { step, loss: f64::NAN });
            }
        }
    }
    let final_loss = loss(&model, view, config.l2_lambda)?;
    if !final_loss.is_finite() {
        return Err(Error::Divergence { step, loss: final_loss });
    }
    Ok(TrainOutcome {
        model,
        final_loss,
        steps: step - global_step_base,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct Optimum {
    pub model: ModelParams,
    pub loss: f64,
    pub grad_norm: f64,
    pub iterations: usize,
}

/// Full-batch minimizer (accelerated gradient with adaptive restart, step
/// `1 / smoothness_bound`). Stops once the gradient norm is <= `tol`; fails
/// with a measurement error if `max_iter` runs out first.
pub fn minimize(
    view: &LabeledView<'_>,
    l2: f64,
    tol: f64,
    max_iter: usize,
) -> Result<Optimum> {
    if view.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let samples = view.samples();
    minimize_objective(
        |w| loss_and_gradient(w, samples, l2),
        ModelParams::zeros(view.dim(), view.class_count()),
        1.0 / smoothness_bound(view, l2),
        tol,
        max_iter,
    )
}

/// Accelerated gradient descent on an arbitrary smooth objective returning
/// `(value, gradient)`.
pub(crate) fn minimize_objective<F>(
    objective: F,
    start: ModelParams,
    step: f64,
    tol: f64,
    max_iter: usize,
) -> Result<Optimum>
where
    F: Fn(&ModelParams) -> Result<(f64, ModelParams)>,
{
    let mut x = start;
    let mut y = x.clone();
    let mut momentum = 1.0_f64;
    let mut last_loss = f64::INFINITY;
    for iteration in 0..max_iter {
        let (loss_y, grad_y) = objective(&y)?;
        let grad_norm = grad_y.norm_sq().sqrt();
        if grad_norm <= tol {
            return Ok(Optimum {
                loss: loss_y,
                model: y,
                grad_norm,
                iterations: iteration,
            });
        }
        let mut next = y.clone();
        next.axpy(-step, &grad_y);
        if loss_y > last_loss {
            // Restart: drop the momentum and take a plain step from x.
            momentum = 1.0;
            y = x.clone();
            last_loss = f64::INFINITY;
            continue;
        }
        last_loss = loss_y;
        let next_momentum = 0.5 * (1.0 + (1.0 + 4.0 * momentum * momentum).sqrt());
        let beta = (momentum - 1.0) / next_momentum;
        let mut extrapolated = next.clone();
        extrapolated.axpy(beta, &next.sub(&x));
        x = next;
        y = extrapolated;
        momentum = next_momentum;
    }
    let (loss_x, grad_x) = objective(&x)?;
    Err(Error::Measurement(format!(
        "optimizer did not converge in {max_iter} iterations (grad norm {:.3e}, loss {loss_x})",
        grad_x.norm_sq().sqrt()
    )))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{synth_gaussian, Dataset, Instance, Label, SynthParams};

    fn blobs(seed: u64) -> Dataset {
        synth_gaussian(&SynthParams {
            classes: 3,
            per_class: 200,
            dim: 2,
            separation: 8.0,
            seed,
        })
        .unwrap()
    }

    fn accuracy(model: &ModelParams, d: &Dataset) -> f64 {
        let hits = d
            .view()
            .samples()
            .iter()
            .filter(|s| predict(model, s.features) == s.label)
            .count();
        hits as f64 / d.len() as f64
    }

    #[test]
    fn lr_schedules() {
        let mu: f64 = 1.0;
        let sched = LrSchedule::Diminishing { theta: 2.0 / mu, alpha: 9.0 };
        assert!((lr_at(&sched, 1) - 0.2).abs() < 1e-15);
        assert_eq!(lr_at(&LrSchedule::Constant { eta: 0.05 }, 77), 0.05);
    }

    #[test]
    fn diminishing_rate_halves_at_most_over_e_steps() {
        // theta/(t+alpha) <= 2*theta/(t+E+alpha) iff E <= t + alpha, which
        // holds for t >= 1 whenever E <= alpha + 1.
        for alpha in [1.0, 4.0, 9.0, 80.0] {
            let sched = LrSchedule::Diminishing { theta: 3.0, alpha };
            let max_e = (alpha + 1.0) as u64;
            for e in 1..=max_e {
                for t in 1..200 {
                    assert!(sched.at(t) <= 2.0 * sched.at(t + e) + 1e-15);
                }
            }
        }
    }

    #[test]
    fn zero_weights_give_uniform_loss() {
        let instances = (0..8)
            .map(|i| Instance::new(i, vec![i as f64, -1.0], Label::Class(i as usize % 4), None))
            .collect();
        let d = Dataset::new("t", 4, 2, instances).unwrap();
        let l = loss(&ModelParams::zeros(2, 4), &d.view(), 0.0).unwrap();
        assert!((l - 4f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn duplicated_data_has_same_loss() {
        let d = blobs(1);
        let doubled = d.concat(&d).unwrap();
        let mut rng = seed::rng(3);
        let m = ModelParams::random_uniform(2, 3, 0.5, &mut rng);
        let a = loss(&m, &d.view(), 0.01).unwrap();
        let b = loss(&m, &doubled.view(), 0.01).unwrap();
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn empty_dataset_loss_errors() {
        let d = Dataset::empty("e", 3, 2);
        assert!(matches!(loss(&ModelParams::zeros(2, 3), &d.view(), 0.0), Err(Error::EmptyDataset)));
    }

    #[test]
    fn full_batch_step_descends() {
        let d = blobs(2);
        let view = d.view();
        let m = ModelParams::zeros(2, 3);
        let (l0, g) = loss_and_gradient(&m, view.samples(), 0.01).unwrap();
        let mut next = m.clone();
        next.axpy(-0.01, &g);
        assert!(loss(&next, &view, 0.01).unwrap() < l0);
    }

    #[test]
    fn batch_gradient_is_mean_of_instance_gradients() {
        let d = blobs(4);
        let view = d.view();
        let batch = &view.samples()[..7];
        let mut rng = seed::rng(8);
        let m = ModelParams::random_uniform(2, 3, 1.0, &mut rng);
        let whole = gradient(&m, batch, 0.1).unwrap();
        let mut mean = ModelParams::zeros(2, 3);
        for s in batch {
            mean.axpy(1.0 / 7.0, &gradient(&m, std::slice::from_ref(s), 0.1).unwrap());
        }
        assert!(whole.distance_sq(&mean).sqrt() < 1e-12);
    }

    #[test]
    fn tiny_step_moves_along_negative_gradient() {
        let d = blobs(5);
        let view = d.view();
        let m = ModelParams::zeros(2, 3);
        let eta = 1e-9;
        let config = TrainerConfig {
            local_epochs: 1,
            batch_size: view.len(),
            lr: LrSchedule::Constant { eta },
            l2_lambda: 0.01,
            seed: 0,
        };
        let out = train_local(&m, &view, &config, 0).unwrap();
        assert_eq!(out.steps, 1);
        let g = gradient(&m, view.samples(), 0.01).unwrap();
        let moved = out.model.sub(&m).scaled(1.0 / eta);
        assert!(moved.distance_sq(&g.scaled(-1.0)).sqrt() < 1e-6 * (1.0 + g.norm_sq().sqrt()));
    }

    #[test]
    fn training_is_deterministic_and_accurate() {
        let d = blobs(7);
        let view = d.view();
        let config = TrainerConfig {
            local_epochs: 20,
            batch_size: 16,
            lr: LrSchedule::Constant { eta: 0.1 },
            l2_lambda: 0.01,
            seed: 42,
        };
        let a = train_local(&ModelParams::zeros(2, 3), &view, &config, 0).unwrap();
        let b = train_local(&ModelParams::zeros(2, 3), &view, &config, 0).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.steps, 20 * 38);
        assert!(accuracy(&a.model, &d) >= 0.98, "{}", accuracy(&a.model, &d));
    }

    #[test]
    fn rejects_zero_epochs() {
        let config = TrainerConfig {
            local_epochs: 0,
            ..TrainerConfig::default()
        };
        assert!(matches!(config.validate(), Err(Error::TrainerConfig(_))));
        let config = TrainerConfig {
            lr: LrSchedule::Diminishing { theta: 1.0, alpha: 0.0 },
            ..TrainerConfig::default()
        };
        assert!(config.validate().is_err());
    }

    #[test]
    fn divergence_is_reported_with_step() {
        let instances = (0..4)
            .map(|i| Instance::new(i, vec![1e150 * i as f64], Label::Class(i as usize % 2), None))
            .collect();
        let d = Dataset::new("huge", 2, 1, instances).unwrap();
        let config = TrainerConfig {
            local_epochs: 3,
            batch_size: 4,
            lr: LrSchedule::Constant { eta: 1e10 },
            l2_lambda: 0.0,
            seed: 0,
        };
        match train_local(&ModelParams::zeros(1, 2), &d.view(), &config, 10) {
            Err(Error::Divergence { step, .. }) => assert!(step > 10),
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn predict_ties_and_dominant_column() {
        assert_eq!(predict(&ModelParams::zeros(3, 4), &[1.0, -2.0, 0.5]), 0);
        let mut w = vec![0.0; 3 * 3];
        for r in 0..2 {
            w[r * 3 + 2] = 5.0;
        }
        let m = ModelParams::from_weights(2, 3, w).unwrap();
        assert_eq!(predict(&m, &[0.1, 3.0]), 2);
        assert_eq!(predict(&m, &[7.0, 0.2]), 2);
    }

    #[test]
    fn predict_matches_score_argmax() {
        let mut rng = seed::rng(17);
        let m = ModelParams::random_uniform(4, 5, 2.0, &mut rng);
        for _ in 0..100 {
            let x = ModelParams::random_uniform(3, 1, 3.0, &mut rng).weights().to_vec();
            let scores = m.scores(&x);
            let oracle = (0..5)
                .fold(0, |best, k| if scores[k] > scores[best] { k } else { best });
            assert_eq!(predict(&m, &x), oracle);
        }
    }

    #[test]
    fn minimizer_reaches_stationarity() {
        let d = blobs(3);
        let opt = minimize(&d.view(), 0.01, 1e-7, 100_000).unwrap();
        assert!(opt.grad_norm <= 1e-7);
        let g = gradient(&opt.model, d.view().samples(), 0.01).unwrap();
        assert!(g.norm_sq().sqrt() <= 1e-7);
    }

    #[test]
    fn unregularized_optimum_on_overlapping_data() {
        // Overlapping classes keep the unregularized optimum finite.
        let d = synth_gaussian(&SynthParams {
            classes: 2,
            per_class: 100,
            dim: 2,
            separation: 1.0,
            seed: 9,
        })
        .unwrap();
        let opt = minimize(&d.view(), 0.0, 1e-6, 200_000).unwrap();
        let g = gradient(&opt.model, d.view().samples(), 0.0).unwrap();
        assert!(g.norm_sq().sqrt() <= 1e-6);
    }

    #[test]
    fn model_text_round_trip() {
        let mut rng = seed::rng(1);
        let m = ModelParams::random_uniform(3, 4, 1.0, &mut rng);
        assert_eq!(ModelParams::from_text(&m.to_text()).unwrap(), m);
        assert!(ModelParams::from_text("fednl-model v1\nshape 2 2\n1 2\n3\n").is_err());
    }
}
