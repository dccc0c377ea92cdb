//! Labeled datasets, class-wise views, non-iid partitioning and the
//! three-fold split used by noise estimation.
//!
//! Every instance carries a stable integer id. Set algebra (noise-free and
//! removed sets, transfers, partitions) works on ids, never on feature
//! values, so duplicate feature vectors stay distinct.
//!
//! The true label is kept for evaluation only. Training and estimation code
//! goes through [`LabeledView`], which exposes features and observed labels
//! and nothing else.

use std::collections::HashSet;
use std::fs::File;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

pub type ClassId = usize;

/// Label written to files for instances whose observed label lies outside
/// the class space.
pub const OUT_OF_SPACE_CODE: i64 = -1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Label {
    Class(ClassId),
    OutOfSpace,
}

impl Label {
    pub fn class(self) -> Option<ClassId> {
        match self {
            Label::Class(k) => Some(k),
            Label::OutOfSpace => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Instance {
    pub id: u64,
    pub features: Vec<f64>,
    pub observed: Label,
    true_label: Option<ClassId>,
}

impl Instance {
    pub fn new(id: u64, features: Vec<f64>, observed: Label, true_label: Option<ClassId>) -> Self {
        Instance {
            id,
            features,
            observed,
            true_label,
        }
    }

    /// Ground-truth label. Only evaluation code should read this.
    pub fn true_label(&self) -> Option<ClassId> {
        self.true_label
    }

    pub(crate) fn set_true_label(&mut self, label: ClassId) {
        self.true_label = Some(label);
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    name: String,
    class_count: usize,
    dim: usize,
    instances: Vec<Instance>,
}

impl Dataset {
    pub fn new(
        name: impl Into<String>,
        class_count: usize,
        dim: usize,
        instances: Vec<Instance>,
    ) -> Result<Self> {
        for (row, inst) in instances.iter().enumerate() {
            if inst.features.len() != dim {
                return Err(Error::Schema {
                    row,
                    message: format!("expected {dim} features, found {}", inst.features.len()),
                });
            }
            if let Label::Class(k) = inst.observed {
                if k >= class_count {
                    return Err(Error::Schema {
                        row,
                        message: format!("observed label {k} outside [0, {class_count})"),
                    });
                }
            }
            if let Some(k) = inst.true_label {
                if k >= class_count {
                    return Err(Error::Schema {
                        row,
                        message: format!("true label {k} outside [0, {class_count})"),
                    });
                }
            }
        }
        Ok(Dataset {
            name: name.into(),
            class_count,
            dim,
            instances,
        })
    }

    pub fn empty(name: impl Into<String>, class_count: usize, dim: usize) -> Self {
        Dataset {
            name: name.into(),
            class_count,
            dim,
            instances: Vec::new(),
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    pub fn instances(&self) -> &[Instance] {
        &self.instances
    }

    pub fn ids(&self) -> Vec<u64> {
        self.instances.iter().map(|i| i.id).collect()
    }

    pub fn renamed(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    pub fn has_true_labels(&self) -> bool {
        self.instances.iter().all(|i| i.true_label.is_some())
    }

    /// Instance counts per observed class.
    pub fn class_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.class_count];
        for inst in &self.instances {
            if let Label::Class(k) = inst.observed {
                sizes[k] += 1;
            }
        }
        sizes
    }

    /// D_k: all instances whose observed label is `k`, in order.
    pub fn class_subset(&self, k: ClassId) -> Dataset {
        self.filtered(format!("{}[k={k}]", self.name), |i| {
            i.observed == Label::Class(k)
        })
    }

    /// Instances labeled outside the class space.
    pub fn out_of_space(&self) -> Dataset {
        self.filtered(format!("{}[oos]", self.name), |i| {
            i.observed == Label::OutOfSpace
        })
    }

    /// Keeps the instances whose id is in `ids`, preserving order.
    pub fn select(&self, ids: &HashSet<u64>) -> Dataset {
        self.filtered(self.name.clone(), |i| ids.contains(&i.id))
    }

    fn filtered(&self, name: String, keep: impl Fn(&Instance) -> bool) -> Dataset {
        Dataset {
            name,
            class_count: self.class_count,
            dim: self.dim,
            instances: self.instances.iter().filter(|i| keep(i)).cloned().collect(),
        }
    }

    pub(crate) fn from_parts(&self, name: String, instances: Vec<Instance>) -> Dataset {
        Dataset {
            name,
            class_count: self.class_count,
            dim: self.dim,
            instances,
        }
    }

    /// Concatenation; both datasets must share the class space and dimension.
    pub fn concat(&self, other: &Dataset) -> Result<Dataset> {
        if self.class_count != other.class_count || self.dim != other.dim {
            return Err(Error::Schema {
                row: 0,
                message: format!(
                    "cannot join datasets of shape (c={}, d={}) and (c={}, d={})",
                    self.class_count, self.dim, other.class_count, other.dim
                ),
            });
        }
        let mut instances = self.instances.clone();
        instances.extend(other.instances.iter().cloned());
        Ok(self.from_parts(self.name.clone(), instances))
    }

    /// Training view over the in-space instances. Carries no true labels.
    pub fn view(&self) -> LabeledView<'_> {
        LabeledView {
            class_count: self.class_count,
            dim: self.dim,
            samples: self
                .instances
                .iter()
                .filter_map(|inst| {
                    inst.observed.class().map(|label| Sample {
                        id: inst.id,
                        features: &inst.features,
                        label,
                    })
                })
                .collect(),
        }
    }

    pub(crate) fn into_instances(self) -> Vec<Instance> {
        self.instances
    }
}

/// One training example: features and observed label, nothing else.
#[derive(Clone, Copy, Debug)]
pub struct Sample<'a> {
    pub id: u64,
    pub features: &'a [f64],
    pub label: ClassId,
}

#[derive(Clone, Debug)]
pub struct LabeledView<'a> {
    class_count: usize,
    dim: usize,
    samples: Vec<Sample<'a>>,
}

impl<'a> LabeledView<'a> {
    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn samples(&self) -> &[Sample<'a>] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

// ---------------------------------------------------------------------------
// File I/O

#[derive(Clone, Debug)]
pub struct CsvSchema {
    pub delimiter: u8,
    /// Declared class count; inferred from the labels when absent.
    pub class_count: Option<usize>,
    /// Map labels outside the class space to [`Label::OutOfSpace`] instead of
    /// rejecting them.
    pub allow_out_of_space: bool,
}

impl Default for CsvSchema {
    fn default() -> Self {
        CsvSchema {
            delimiter: b',',
            class_count: None,
            allow_out_of_space: false,
        }
    }
}

/// Reads `f0..f{d-1},label[,true_label]`. Ids follow row order. Rows are
/// numbered from 1 (the first data row) in errors.
pub fn load_dataset(path: &Path, schema: &CsvSchema) -> Result<Dataset> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(schema.delimiter)
        .has_headers(true)
        .flexible(true)
        .from_reader(file);
    let headers = reader
        .headers()
        .map_err(|e| Error::Parse {
            row: 0,
            message: e.to_string(),
        })?
        .clone();

    let names: Vec<&str> = headers.iter().map(str::trim).collect();
    let dim = names.iter().take_while(|h| h.starts_with('f')).count();
    for (j, h) in names.iter().take(dim).enumerate() {
        if *h != format!("f{j}") {
            return Err(Error::Parse {
                row: 0,
                message: format!("header column {j} is `{h}`, expected `f{j}`"),
            });
        }
    }
    if names.get(dim) != Some(&"label") {
        return Err(Error::Parse {
            row: 0,
            message: "header must contain `label` after the feature columns".into(),
        });
    }
    let has_true = match names.get(dim + 1) {
        None => false,
        Some(&"true_label") if names.len() == dim + 2 => true,
        Some(other) => {
            return Err(Error::Parse {
                row: 0,
                message: format!("unexpected header column `{other}`"),
            })
        }
    };
    let arity = dim + 1 + usize::from(has_true);

    let mut raw: Vec<(Vec<f64>, i64, Option<i64>)> = Vec::new();
    for (idx, record) in reader.records().enumerate() {
        let row = idx + 1;
        let record = record.map_err(|e| Error::Parse {
            row,
            message: e.to_string(),
        })?;
        if record.len() != arity {
            return Err(Error::Parse {
                row,
                message: format!("expected {arity} fields, found {}", record.len()),
            });
        }
        let mut features = Vec::with_capacity(dim);
        for j in 0..dim {
            let field = record[j].trim();
            let v: f64 = field.parse().map_err(|_| Error::Parse {
                row,
                message: format!("feature f{j} is not numeric: `{field}`"),
            })?;
            features.push(v);
        }
        let parse_label = |field: &str, col: &str| -> Result<i64> {
            field.trim().parse().map_err(|_| Error::Parse {
                row,
                message: format!("{col} is not an integer: `{field}`"),
            })
        };
        let label = parse_label(&record[dim], "label")?;
        let true_label = if has_true {
            Some(parse_label(&record[dim + 1], "true_label")?)
        } else {
            None
        };
        raw.push((features, label, true_label));
    }

    let class_count = match schema.class_count {
        Some(c) => c,
        None => raw
            .iter()
            .flat_map(|(_, l, t)| std::iter::once(*l).chain(*t))
            .filter(|&l| l >= 0)
            .max()
            .map_or(0, |m| m as usize + 1),
    };

    let mut instances = Vec::with_capacity(raw.len());
    for (idx, (features, label, true_label)) in raw.into_iter().enumerate() {
        let row = idx + 1;
        let observed = if label >= 0 && (label as usize) < class_count {
            Label::Class(label as usize)
        } else if schema.allow_out_of_space {
            Label::OutOfSpace
        } else {
            return Err(Error::Schema {
                row,
                message: format!("label {label} outside [0, {class_count})"),
            });
        };
        let true_label = match true_label {
            None => None,
            Some(t) if t >= 0 && (t as usize) < class_count => Some(t as usize),
            Some(t) => {
                return Err(Error::Schema {
                    row,
                    message: format!("true_label {t} outside [0, {class_count})"),
                })
            }
        };
        instances.push(Instance::new(idx as u64, features, observed, true_label));
    }

    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    Dataset::new(name, class_count, dim, instances)
}

/// Writes the dataset in the format read by [`load_dataset`]. A
/// `true_label` column is written when every instance carries one.
pub fn write_dataset(path: &Path, dataset: &Dataset, delimiter: u8) -> Result<()> {
    let mut out = String::new();
    let sep = delimiter as char;
    let with_true = dataset.has_true_labels() && !dataset.is_empty();
    let mut header: Vec<String> = (0..dataset.dim()).map(|j| format!("f{j}")).collect();
    header.push("label".into());
    if with_true {
        header.push("true_label".into());
    }
    out.push_str(&header.join(&sep.to_string()));
    out.push('\n');
    for inst in dataset.instances() {
        let mut fields: Vec<String> = inst.features.iter().map(|v| v.to_string()).collect();
        fields.push(match inst.observed {
            Label::Class(k) => k.to_string(),
            Label::OutOfSpace => OUT_OF_SPACE_CODE.to_string(),
        });
        if with_true {
            fields.push(inst.true_label.unwrap_or_default().to_string());
        }
        out.push_str(&fields.join(&sep.to_string()));
        out.push('\n');
    }
    let mut file = File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(out.as_bytes())
        .map_err(|e| Error::io(path, e))
}

// ---------------------------------------------------------------------------
// Synthesis

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthParams {
    pub classes: usize,
    pub per_class: usize,
    pub dim: usize,
    pub separation: f64,
    pub seed: u64,
}

/// Class centres at pairwise distance >= `separation`.
pub(crate) fn blob_means(classes: usize, dim: usize, separation: f64) -> Vec<Vec<f64>> {
    (0..classes)
        .map(|k| {
            let mut mean = vec![0.0; dim];
            if dim >= classes {
                mean[k] = separation / std::f64::consts::SQRT_2;
            } else if dim >= 2 {
                // Regular polygon: adjacent chord equals the separation.
                let radius = separation / (2.0 * (std::f64::consts::PI / classes as f64).sin());
                let angle = 2.0 * std::f64::consts::PI * k as f64 / classes as f64;
                mean[0] = radius * angle.cos();
                mean[1] = radius * angle.sin();
            } else {
                mean[0] = separation * k as f64;
            }
            mean
        })
        .collect()
}

/// Isotropic unit-variance Gaussian blobs, one per class, written class by
/// class with ids `0..classes*per_class`.
pub fn synth_gaussian(params: &SynthParams) -> Result<Dataset> {
    let SynthParams {
        classes,
        per_class,
        dim,
        separation,
        seed,
    } = *params;
    if classes < 2 || per_class < 1 || dim < 1 || !(separation > 0.0) {
        return Err(Error::Schema {
            row: 0,
            message: format!(
                "synthetic blobs need classes >= 2, per_class >= 1, dim >= 1, separation > 0 \
                 (got {classes}, {per_class}, {dim}, {separation})"
            ),
        });
    }
    let means = blob_means(classes, dim, separation);
    let mut rng = seed::rng(seed);
    let mut instances = Vec::with_capacity(classes * per_class);
    for (k, mean) in means.iter().enumerate() {
        for _ in 0..per_class {
            let features = mean
                .iter()
                .map(|m| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    m + z
                })
                .collect::<Vec<f64>>();
            let id = instances.len() as u64;
            instances.push(Instance::new(id, features, Label::Class(k), Some(k)));
        }
    }
    Dataset::new(format!("blobs-s{seed}"), classes, dim, instances)
}

// ---------------------------------------------------------------------------
// Splitting

/// Near-equal sizes; the remainder goes to the lowest indices.
pub fn near_equal_sizes(total: usize, parts: usize) -> Vec<usize> {
    let base = total / parts;
    let extra = total % parts;
    (0..parts).map(|p| base + usize::from(p < extra)).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum PartitionStrategy {
    ShuffleSplit,
    /// Each participant draws `skew` of its share from `k_major` classes
    /// assigned round-robin, the rest from the remaining classes.
    LabelSkew { k_major: usize, skew: f64 },
}

pub fn partition_non_iid(
    dataset: &Dataset,
    n_participants: usize,
    seed: u64,
    strategy: PartitionStrategy,
) -> Result<Vec<Dataset>> {
    if n_participants == 0 {
        return Err(Error::Partition("need at least one participant".into()));
    }
    if dataset.is_empty() {
        return Err(Error::Partition("cannot partition an empty dataset".into()));
    }
    if n_participants > dataset.len() {
        return Err(Error::Partition(format!(
            "{n_participants} participants for {} instances",
            dataset.len()
        )));
    }
    let mut rng = seed::rng(seed);
    let sizes = near_equal_sizes(dataset.len(), n_participants);
    let groups: Vec<Vec<Instance>> = match strategy {
        PartitionStrategy::ShuffleSplit => {
            let mut shuffled = dataset.instances.clone();
            shuffled.shuffle(&mut rng);
            let mut rest = shuffled.into_iter();
            sizes
                .iter()
                .map(|&s| rest.by_ref().take(s).collect())
                .collect()
        }
        PartitionStrategy::LabelSkew { k_major, skew } => {
            label_skew(dataset, &sizes, k_major, skew, &mut rng)?
        }
    };
    Ok(groups
        .into_iter()
        .enumerate()
        .map(|(p, inst)| dataset.from_parts(format!("{}/p{p}", dataset.name), inst))
        .collect())
}

fn label_skew(
    dataset: &Dataset,
    sizes: &[usize],
    k_major: usize,
    skew: f64,
    rng: &mut seed::Rng,
) -> Result<Vec<Vec<Instance>>> {
    let c = dataset.class_count;
    if k_major == 0 || k_major > c {
        return Err(Error::Partition(format!("k_major must be in [1, {c}]")));
    }
    if !(0.0..=1.0).contains(&skew) {
        return Err(Error::Partition(format!("skew {skew} outside [0, 1]")));
    }
    // One shuffled pool per observed class, plus one for out-of-space rows.
    let mut pools: Vec<Vec<Instance>> = vec![Vec::new(); c + 1];
    for inst in &dataset.instances {
        let slot = inst.observed.class().unwrap_or(c);
        pools[slot].push(inst.clone());
    }
    for pool in &mut pools {
        pool.shuffle(rng);
    }

    let mut draw_round_robin = |classes: &[usize], want: usize, out: &mut Vec<Instance>| {
        let mut taken = 0;
        while taken < want {
            let mut progressed = false;
            for &k in classes {
                if taken == want {
                    break;
                }
                if let Some(inst) = pools[k].pop() {
                    out.push(inst);
                    taken += 1;
                    progressed = true;
                }
            }
            if !progressed {
                break;
            }
        }
        taken
    };

    let all: Vec<usize> = (0..=c).collect();
    let mut groups = Vec::with_capacity(sizes.len());
    for (p, &size) in sizes.iter().enumerate() {
        let major: Vec<usize> = (0..k_major).map(|j| (p * k_major + j) % c).collect();
        let minor: Vec<usize> = all.iter().copied().filter(|k| !major.contains(k)).collect();
        let want_major = ((skew * size as f64).round() as usize).min(size);
        let mut group = Vec::with_capacity(size);
        let got_major = draw_round_robin(&major, want_major, &mut group);
        let got_minor = draw_round_robin(&minor, size - got_major, &mut group);
        // Pools ran dry on one side; fill from anything left.
        draw_round_robin(&all, size - got_major - got_minor, &mut group);
        groups.push(group);
    }
    Ok(groups)
}

#[derive(Clone, Debug, PartialEq)]
pub struct FoldSplit {
    pub folds: [Dataset; 3],
}

/// Random split into three disjoint folds of near-equal size.
pub fn split_three_folds(dataset: &Dataset, seed: u64) -> Result<FoldSplit> {
    if dataset.len() < 3 {
        return Err(Error::Split(format!(
            "three folds need at least 3 instances, found {}",
            dataset.len()
        )));
    }
    let mut shuffled = dataset.instances.clone();
    shuffled.shuffle(&mut seed::rng(seed));
    let sizes = near_equal_sizes(shuffled.len(), 3);
    let mut rest = shuffled.into_iter();
    let mut fold = |j: usize| {
        dataset.from_parts(
            format!("{}/fold{}", dataset.name, j + 1),
            rest.by_ref().take(sizes[j]).collect(),
        )
    };
    let folds = [fold(0), fold(1), fold(2)];
    Ok(FoldSplit { folds })
}

/// Random split into (`1 - fraction`, `fraction`) parts, e.g. a server's
/// transfer pool and its held-out test split.
pub fn holdout_split(dataset: &Dataset, fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(0.0..1.0).contains(&fraction) {
        return Err(Error::Split(format!("holdout fraction {fraction} outside [0, 1)")));
    }
    let mut shuffled = dataset.instances.clone();
    shuffled.shuffle(&mut seed::rng(seed));
    let held = (fraction * shuffled.len() as f64).round() as usize;
    let kept = shuffled.split_off(held);
    Ok((
        dataset.from_parts(format!("{}/pool", dataset.name), kept),
        dataset.from_parts(format!("{}/test", dataset.name), shuffled),
    ))
}

/// Uniform sample of `count` distinct instances.
pub(crate) fn sample_without_replacement<'a>(
    instances: &'a [Instance],
    count: usize,
    rng: &mut seed::Rng,
) -> Vec<&'a Instance> {
    let mut idx = rand::seq::index::sample(rng, instances.len(), count).into_vec();
    idx.sort_unstable();
    idx.into_iter().map(|i| &instances[i]).collect()
}

/// Uniform draw in [0, 1).
pub(crate) fn unit(rng: &mut seed::Rng) -> f64 {
    rng.random::<f64>()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn labeled(labels: &[usize], c: usize) -> Dataset {
        let instances = labels
            .iter()
            .enumerate()
            .map(|(i, &l)| Instance::new(i as u64, vec![i as f64], Label::Class(l), Some(l)))
            .collect();
        Dataset::new("t", c, 1, instances).unwrap()
    }

    fn write(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    #[test]
    fn loads_three_rows() {
        let f = write("f0,f1,label\n0.5,1.0,0\n1.5,2.0,1\n-1,3,2\n");
        let d = load_dataset(f.path(), &CsvSchema::default()).unwrap();
        assert_eq!((d.len(), d.dim(), d.class_count()), (3, 2, 3));
        assert_eq!(d.instances()[2].features, vec![-1.0, 3.0]);
        assert_eq!(d.ids(), vec![0, 1, 2]);
    }

    #[test]
    fn loads_empty_file_with_header() {
        let f = write("f0,f1,label\n");
        let d = load_dataset(f.path(), &CsvSchema::default()).unwrap();
        assert_eq!(d.len(), 0);
        assert_eq!(d.dim(), 2);
    }

    #[test]
    fn label_outside_declared_space_is_schema_error() {
        let f = write("f0,label\n0.1,7\n0.2,1\n");
        let schema = CsvSchema {
            class_count: Some(3),
            ..CsvSchema::default()
        };
        match load_dataset(f.path(), &schema) {
            Err(Error::Schema { row, .. }) => assert_eq!(row, 1),
            other => panic!("expected schema error, got {other:?}"),
        }
        let lenient = CsvSchema {
            allow_out_of_space: true,
            ..schema
        };
        let d = load_dataset(f.path(), &lenient).unwrap();
        assert_eq!(d.instances()[0].observed, Label::OutOfSpace);
    }

    #[test]
    fn malformed_rows_report_row_index() {
        let f = write("f0,f1,label\n1,2,0\n1,x,0\n");
        assert!(matches!(
            load_dataset(f.path(), &CsvSchema::default()),
            Err(Error::Parse { row: 2, .. })
        ));
        let f = write("f0,f1,label\n1,2\n");
        assert!(matches!(
            load_dataset(f.path(), &CsvSchema::default()),
            Err(Error::Parse { row: 1, .. })
        ));
    }

    #[test]
    fn write_then_load_preserves_rows() {
        let d = synth_gaussian(&SynthParams {
            classes: 3,
            per_class: 4,
            dim: 2,
            separation: 5.0,
            seed: 3,
        })
        .unwrap();
        let f = tempfile::NamedTempFile::new().unwrap();
        write_dataset(f.path(), &d, b';').unwrap();
        let schema = CsvSchema {
            delimiter: b';',
            ..CsvSchema::default()
        };
        let back = load_dataset(f.path(), &schema).unwrap();
        assert_eq!(back.instances(), d.instances());
    }

    #[test]
    fn synth_counts_and_determinism() {
        let p = SynthParams {
            classes: 2,
            per_class: 5,
            dim: 2,
            separation: 10.0,
            seed: 1,
        };
        let a = synth_gaussian(&p).unwrap();
        assert_eq!(a.len(), 10);
        assert_eq!(a.class_sizes(), vec![5, 5]);
        assert_eq!(a, synth_gaussian(&p).unwrap());
    }

    #[test]
    fn blob_means_respect_separation() {
        for (c, d) in [(2, 1), (3, 2), (5, 2), (4, 4), (6, 3)] {
            let means = blob_means(c, d, 8.0);
            for a in 0..c {
                for b in a + 1..c {
                    let dist: f64 = means[a]
                        .iter()
                        .zip(&means[b])
                        .map(|(x, y)| (x - y).powi(2))
                        .sum::<f64>()
                        .sqrt();
                    assert!(dist >= 8.0 - 1e-9, "c={c} d={d}: {dist}");
                }
            }
        }
    }

    #[test]
    fn shuffle_split_sizes() {
        let d = labeled(&[0; 100], 2);
        let parts = partition_non_iid(&d, 4, 1, PartitionStrategy::ShuffleSplit).unwrap();
        assert_eq!(parts.iter().map(Dataset::len).collect::<Vec<_>>(), vec![25; 4]);
        let d = labeled(&[0; 10], 2);
        let parts = partition_non_iid(&d, 3, 1, PartitionStrategy::ShuffleSplit).unwrap();
        assert_eq!(parts.iter().map(Dataset::len).collect::<Vec<_>>(), vec![4, 3, 3]);
    }

    #[test]
    fn too_many_participants() {
        let d = labeled(&[0, 1], 2);
        assert!(matches!(
            partition_non_iid(&d, 3, 0, PartitionStrategy::ShuffleSplit),
            Err(Error::Partition(_))
        ));
    }

    #[test]
    fn label_skew_concentrates_major_class() {
        let labels: Vec<usize> = (0..1000).map(|i| i % 2).collect();
        let d = labeled(&labels, 2);
        let strategy = PartitionStrategy::LabelSkew {
            k_major: 1,
            skew: 0.8,
        };
        for participants in [2, 4, 10] {
            let parts = partition_non_iid(&d, participants, 11, strategy).unwrap();
            for (p, part) in parts.iter().enumerate() {
                let major = p % 2;
                let frac = part.class_sizes()[major] as f64 / part.len() as f64;
                assert!(frac >= 0.78, "participant {p}/{participants}: {frac}");
            }
            let mut ids: Vec<u64> = parts.iter().flat_map(Dataset::ids).collect();
            ids.sort_unstable();
            assert_eq!(ids, (0..1000).collect::<Vec<_>>());
        }
    }

    #[test]
    fn three_fold_sizes() {
        let sizes = |n: usize| {
            let d = labeled(&vec![0; n], 1);
            split_three_folds(&d, 5)
                .unwrap()
                .folds
                .iter()
                .map(Dataset::len)
                .collect::<Vec<_>>()
        };
        assert_eq!(sizes(9), vec![3, 3, 3]);
        assert_eq!(sizes(10), vec![4, 3, 3]);
        let d = labeled(&[0, 0], 1);
        assert!(matches!(split_three_folds(&d, 5), Err(Error::Split(_))));
    }

    #[test]
    fn class_subsets() {
        let d = labeled(&[0, 1, 0], 3);
        assert_eq!(d.class_subset(0).len(), 2);
        assert_eq!(d.class_subset(0).ids(), vec![0, 2]);
        assert!(d.class_subset(2).is_empty());
    }

    #[test]
    fn class_subsets_and_oos_partition_dataset() {
        let mut instances: Vec<Instance> = (0..6)
            .map(|i| Instance::new(i, vec![0.0], Label::Class(i as usize % 2), None))
            .collect();
        instances.push(Instance::new(6, vec![0.0], Label::OutOfSpace, Some(1)));
        let d = Dataset::new("t", 2, 1, instances).unwrap();
        let mut ids: Vec<u64> = (0..2).flat_map(|k| d.class_subset(k).ids()).collect();
        ids.extend(d.out_of_space().ids());
        ids.sort_unstable();
        assert_eq!(ids, d.ids());
        assert_eq!(d.view().len(), 6);
    }

    #[test]
    fn rejects_inconsistent_instances() {
        let bad = vec![Instance::new(0, vec![1.0, 2.0], Label::Class(0), None)];
        assert!(Dataset::new("t", 2, 1, bad).is_err());
        let bad = vec![Instance::new(0, vec![1.0], Label::Class(0), Some(4))];
        assert!(Dataset::new("t", 2, 1, bad).is_err());
    }
}
