//! Experiment configuration file (TOML). Unknown keys are rejected;
//! semantic checks report every problem at once, each naming its field.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::contribution::{ContributionOptions, EffectiveSize, InfluenceMeasure, GAMMA_MIN};
use crate::dataset::PartitionStrategy;
use crate::error::{Error, Result};
use crate::estimator::EstimatorOptions;
use crate::exchange::DemandCap;
use crate::noise::FlipPair;
use crate::rounds::AlphaMode;
use crate::trainer::{LrSchedule, TrainerConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_name")]
    pub name: String,
    pub seed: u64,
    /// Run directory; relative paths resolve against the output root.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    pub dataset: DatasetSpec,
    #[serde(default)]
    pub server: ServerSpec,
    #[serde(default)]
    pub partition: PartitionSpec,
    #[serde(default)]
    pub noise: NoiseSpec,
    #[serde(default)]
    pub trainer: TrainerSpec,
    #[serde(default)]
    pub federation: FederationSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rounds: Option<RoundsSpec>,
}

fn default_name() -> String {
    "experiment".into()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DatasetKind {
    Synthetic,
    File,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    pub kind: DatasetKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub classes: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub per_class: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dim: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub separation: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    #[serde(default = "default_delimiter")]
    pub delimiter: char,
}

fn default_delimiter() -> char {
    ','
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ServerSpec {
    /// Share of the dataset held by the server (noise-free).
    pub fraction: f64,
    /// Share of the server data reserved for testing.
    pub test_fraction: f64,
}

impl Default for ServerSpec {
    fn default() -> Self {
        ServerSpec {
            fraction: 0.3,
            test_fraction: 0.2,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PartitionKind {
    ShuffleSplit,
    LabelSkew,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PartitionSpec {
    pub participants: usize,
    pub strategy: PartitionKind,
    pub k_major: usize,
    pub skew: f64,
}

impl Default for PartitionSpec {
    fn default() -> Self {
        PartitionSpec {
            participants: 4,
            strategy: PartitionKind::ShuffleSplit,
            k_major: 1,
            skew: 0.8,
        }
    }
}

impl PartitionSpec {
    pub fn strategy(&self) -> PartitionStrategy {
        match self.strategy {
            PartitionKind::ShuffleSplit => PartitionStrategy::ShuffleSplit,
            PartitionKind::LabelSkew => PartitionStrategy::LabelSkew {
                k_major: self.k_major,
                skew: self.skew,
            },
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseKind {
    #[default]
    None,
    Symmetric,
    Asymmetric,
    Matrix,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseSpec {
    pub kind: NoiseKind,
    pub beta: f64,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub pairs: Vec<FlipPair>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub matrix_path: Option<PathBuf>,
    pub out_of_space: f64,
    /// Noisy participants; all of them when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub participants: Option<Vec<usize>>,
}

impl NoiseSpec {
    pub fn is_noisy(&self, participant: usize) -> bool {
        self.kind != NoiseKind::None
            && self
                .participants
                .as_ref()
                .is_none_or(|p| p.contains(&participant))
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LrKind {
    #[default]
    Constant,
    Diminishing,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainerSpec {
    pub local_epochs: usize,
    pub batch_size: usize,
    pub l2_lambda: f64,
    pub lr: LrKind,
    pub eta: f64,
    /// Diminishing schedule; defaults to `2 / l2_lambda`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub theta: Option<f64>,
    /// Diminishing schedule; measured as `max(8L/mu, E)` when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
}

impl Default for TrainerSpec {
    fn default() -> Self {
        let t = TrainerConfig::default();
        TrainerSpec {
            local_epochs: t.local_epochs,
            batch_size: t.batch_size,
            l2_lambda: t.l2_lambda,
            lr: LrKind::Constant,
            eta: 0.05,
            theta: None,
            alpha: None,
        }
    }
}

impl TrainerSpec {
    /// The trainer with a resolved schedule; `alpha` is used when the file
    /// leaves it open.
    pub fn resolve(&self, alpha: Option<f64>) -> TrainerConfig {
        let lr = match self.lr {
            LrKind::Constant => LrSchedule::Constant { eta: self.eta },
            LrKind::Diminishing => LrSchedule::Diminishing {
                theta: self.theta.unwrap_or(2.0 / self.l2_lambda),
                alpha: self.alpha.or(alpha).unwrap_or(self.local_epochs as f64),
            },
        };
        TrainerConfig {
            local_epochs: self.local_epochs,
            batch_size: self.batch_size,
            lr,
            l2_lambda: self.l2_lambda,
            seed: 0,
        }
    }

    pub fn needs_measured_alpha(&self) -> bool {
        self.lr == LrKind::Diminishing && self.alpha.is_none()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    #[default]
    Fednl,
    Fedavg,
}

/// A round count or `"auto"` (estimated from measured constants).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RoundCount {
    Fixed(usize),
    Auto(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FederationSpec {
    pub mode: Mode,
    pub rounds: RoundCount,
    /// Upper bound when `rounds = "auto"`.
    pub max_auto_rounds: usize,
    pub run_procedure1: bool,
    pub run_procedure2: bool,
    pub weighting: crate::engine::Weighting,
    pub init_range: f64,
    pub demand_cap: DemandCap,
    pub effective_size: EffectiveSize,
    pub influence: InfluenceMeasure,
    pub freeze_epsilon: bool,
    pub resplit_per_class: bool,
}

impl Default for FederationSpec {
    fn default() -> Self {
        FederationSpec {
            mode: Mode::Fednl,
            rounds: RoundCount::Fixed(20),
            max_auto_rounds: 500,
            run_procedure1: true,
            run_procedure2: true,
            weighting: crate::engine::Weighting::Fednl,
            init_range: 0.01,
            demand_cap: DemandCap::OneMinusZ,
            effective_size: EffectiveSize::NoiseFree,
            influence: InfluenceMeasure::LossChange,
            freeze_epsilon: false,
            resplit_per_class: false,
        }
    }
}

impl FederationSpec {
    pub fn contribution(&self) -> ContributionOptions {
        ContributionOptions {
            effective_size: self.effective_size,
            measure: self.influence,
            gamma_min: GAMMA_MIN,
            freeze_epsilon: self.freeze_epsilon,
        }
    }

    pub fn estimator(&self) -> EstimatorOptions {
        EstimatorOptions {
            resplit_per_class: self.resplit_per_class,
        }
    }
}

/// Grid for the round estimate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoundsSpec {
    pub local_epochs: Vec<usize>,
    pub q_o: Vec<f64>,
    /// Symmetric noise levels applied to the noisy participants; the
    /// configured noise when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise_levels: Option<Vec<f64>>,
    #[serde(default)]
    pub alpha_mode: AlphaMode,
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let config: ExperimentConfig =
            toml::from_str(text).map_err(|e| Error::Validation(vec![e.to_string()]))?;
        Ok(config)
    }

    /// Reads and validates; relative data paths resolve against the
    /// config file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut config = ExperimentConfig::parse(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [&mut config.dataset.path, &mut config.noise.matrix_path]
            .into_iter()
            .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        config.validate()?;
        Ok(config)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let mut p = Vec::new();
        let d = &self.dataset;
        match d.kind {
            DatasetKind::Synthetic => {
                for (field, v) in [("classes", d.classes), ("per_class", d.per_class), ("dim", d.dim)] {
                    match v {
                        None => p.push(format!("dataset.{field} is required for synthetic data")),
                        Some(0) => p.push(format!("dataset.{field} must be >= 1")),
                        _ => {}
                    }
                }
                if d.classes == Some(1) {
                    p.push("dataset.classes must be >= 2".into());
                }
                match d.separation {
                    None => p.push("dataset.separation is required for synthetic data".into()),
                    Some(s) if !(s >= 0.0 && s.is_finite()) => {
                        p.push(format!("dataset.separation must be finite and >= 0, got {s}"))
                    }
                    _ => {}
                }
                if d.path.is_some() {
                    p.push("dataset.path is only valid for file data".into());
                }
            }
            DatasetKind::File => match &d.path {
                None => p.push("dataset.path is required for file data".into()),
                Some(path) if !path.is_file() => {
                    p.push(format!("dataset.path {} does not exist", path.display()))
                }
                _ => {}
            },
        }
        if !d.delimiter.is_ascii() {
            p.push("dataset.delimiter must be an ASCII character".into());
        }

        let s = &self.server;
        if !(s.fraction > 0.0 && s.fraction < 1.0) {
            p.push(format!("server.fraction must be in (0, 1), got {}", s.fraction));
        }
        if !(s.test_fraction > 0.0 && s.test_fraction < 1.0) {
            p.push(format!("server.test_fraction must be in (0, 1), got {}", s.test_fraction));
        }

        let part = &self.partition;
        if part.participants < 1 {
            p.push("partition.participants must be >= 1".into());
        }
        if part.strategy == PartitionKind::LabelSkew {
            if part.k_major < 1 {
                p.push("partition.k_major must be >= 1".into());
            }
            if !(0.0..=1.0).contains(&part.skew) {
                p.push(format!("partition.skew must be in [0, 1], got {}", part.skew));
            }
        }

        let n = &self.noise;
        match n.kind {
            NoiseKind::None => {}
            NoiseKind::Symmetric => {
                if !(0.0..1.0).contains(&n.beta) {
                    p.push(format!("noise.beta must be in [0, 1), got {}", n.beta));
                }
            }
            NoiseKind::Asymmetric => {
                if n.pairs.is_empty() {
                    p.push("noise.pairs must list at least one flip for asymmetric noise".into());
                }
                for (i, pair) in n.pairs.iter().enumerate() {
                    if !(0.0..0.5).contains(&pair.mass) {
                        p.push(format!("noise.pairs[{i}].mass must be in [0, 0.5), got {}", pair.mass));
                    }
                    if let Some(c) = d.classes {
                        if pair.src >= c || pair.dst >= c {
                            p.push(format!("noise.pairs[{i}] refers to a class >= {c}"));
                        }
                    }
                }
            }
            NoiseKind::Matrix => match &n.matrix_path {
                None => p.push("noise.matrix_path is required for matrix noise".into()),
                Some(path) if !path.is_file() => {
                    p.push(format!("noise.matrix_path {} does not exist", path.display()))
                }
                _ => {}
            },
        }
        if !(0.0..1.0).contains(&n.out_of_space) {
            p.push(format!("noise.out_of_space must be in [0, 1), got {}", n.out_of_space));
        }
        if let Some(list) = &n.participants {
            for &i in list {
                if i >= part.participants {
                    p.push(format!(
                        "noise.participants names participant {i} but there are {}",
                        part.participants
                    ));
                }
            }
        }

        let t = &self.trainer;
        if t.local_epochs < 1 {
            p.push("trainer.local_epochs must be >= 1".into());
        }
        if t.batch_size < 1 {
            p.push("trainer.batch_size must be >= 1".into());
        }
        if !(t.l2_lambda >= 0.0 && t.l2_lambda.is_finite()) {
            p.push(format!("trainer.l2_lambda must be finite and >= 0, got {}", t.l2_lambda));
        }
        match t.lr {
            LrKind::Constant => {
                if !(t.eta > 0.0 && t.eta.is_finite()) {
                    p.push(format!("trainer.eta must be > 0, got {}", t.eta));
                }
            }
            LrKind::Diminishing => {
                if t.theta.is_none() && !(t.l2_lambda > 0.0) {
                    p.push("trainer.theta defaults to 2 / l2_lambda, which needs l2_lambda > 0".into());
                }
                if t.theta.is_some_and(|v| !(v > 0.0)) {
                    p.push("trainer.theta must be > 0".into());
                }
                if t.alpha.is_some_and(|v| !(v > 0.0)) {
                    p.push("trainer.alpha must be > 0".into());
                }
            }
        }

        let f = &self.federation;
        match &f.rounds {
            RoundCount::Fixed(0) => p.push("federation.rounds must be >= 1".into()),
            RoundCount::Fixed(_) => {}
            RoundCount::Auto(s) if s == "auto" => {
                if self.rounds.is_none() {
                    p.push("federation.rounds = \"auto\" needs a [rounds] section with q_o".into());
                }
                if f.max_auto_rounds < 1 {
                    p.push("federation.max_auto_rounds must be >= 1".into());
                }
            }
            RoundCount::Auto(s) => {
                p.push(format!("federation.rounds must be a positive integer or \"auto\", got {s:?}"))
            }
        }
        if f.mode == Mode::Fednl && f.run_procedure2 && !f.run_procedure1 {
            p.push("federation.run_procedure2 needs run_procedure1".into());
        }
        if !(f.init_range >= 0.0 && f.init_range.is_finite()) {
            p.push("federation.init_range must be finite and >= 0".into());
        }

        if let Some(r) = &self.rounds {
            if r.local_epochs.is_empty() || r.q_o.is_empty() {
                p.push("rounds.local_epochs and rounds.q_o must be non-empty".into());
            }
            if r.local_epochs.contains(&0) {
                p.push("rounds.local_epochs entries must be >= 1".into());
            }
            if r.q_o.iter().any(|q| !(*q > 0.0)) {
                p.push("rounds.q_o entries must be > 0".into());
            }
            if let Some(levels) = &r.noise_levels {
                if levels.is_empty() {
                    p.push("rounds.noise_levels must be non-empty when given".into());
                }
                if levels.iter().any(|b| !(0.0..1.0).contains(b)) {
                    p.push("rounds.noise_levels entries must be in [0, 1)".into());
                }
            }
        }

        if p.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(p))
        }
    }

    pub fn fixed_rounds(&self) -> Option<usize> {
        match self.federation.rounds {
            RoundCount::Fixed(r) => Some(r),
            RoundCount::Auto(_) => None,
        }
    }
}
