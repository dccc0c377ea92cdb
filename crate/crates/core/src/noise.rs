//! Label-corruption transition matrices and noisy-label injection.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::dataset::{unit, ClassId, Dataset, Label};
use crate::error::{Error, Result};
use crate::seed;

const ROW_SUM_TOL: f64 = 1e-12;

/// Row-stochastic corruption law: row `k` is the distribution of the
/// observed label given clean label `k`. An optional trailing column holds
/// the probability of an out-of-space label.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransitionMatrix {
    classes: usize,
    rows: Vec<Vec<f64>>,
    out_of_space: bool,
}

impl TransitionMatrix {
    pub fn from_rows(rows: Vec<Vec<f64>>, out_of_space: bool) -> Result<Self> {
        let classes = rows.len();
        if classes < 2 {
            return Err(Error::Noise(format!("need at least 2 classes, got {classes}")));
        }
        let width = classes + usize::from(out_of_space);
        for (k, row) in rows.iter().enumerate() {
            if row.len() != width {
                return Err(Error::Noise(format!(
                    "row {k} has {} entries, expected {width}",
                    row.len()
                )));
            }
            if row.iter().any(|p| !p.is_finite() || *p < 0.0) {
                return Err(Error::Noise(format!("row {k} has a negative or non-finite entry")));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > ROW_SUM_TOL {
                return Err(Error::Noise(format!("row {k} sums to {sum}, not 1")));
            }
        }
        Ok(TransitionMatrix {
            classes,
            rows,
            out_of_space,
        })
    }

    pub fn identity(classes: usize) -> Result<Self> {
        symmetric_matrix(classes, 0.0)
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn has_out_of_space(&self) -> bool {
        self.out_of_space
    }

    pub fn entry(&self, from: ClassId, to: ClassId) -> f64 {
        self.rows[from][to]
    }

    /// Moves `mass` of every row's diagonal into a new out-of-space column.
    pub fn with_out_of_space(&self, mass: f64) -> Result<Self> {
        if self.out_of_space {
            return Err(Error::Noise("matrix already has an out-of-space column".into()));
        }
        let rows = self
            .rows
            .iter()
            .enumerate()
            .map(|(k, row)| {
                if !(0.0..=row[k]).contains(&mass) {
                    return Err(Error::Noise(format!(
                        "out-of-space mass {mass} exceeds diagonal {} of row {k}",
                        row[k]
                    )));
                }
                let mut row = row.clone();
                row[k] -= mass;
                row.push(mass);
                Ok(row)
            })
            .collect::<Result<Vec<_>>>()?;
        TransitionMatrix::from_rows(rows, true)
    }

    /// `P_kk > P_kl` for every `l != k`.
    pub fn is_diagonally_dominant(&self) -> bool {
        self.rows.iter().enumerate().all(|(k, row)| {
            row.iter()
                .enumerate()
                .all(|(l, &p)| l == k || row[k] > p)
        })
    }

    fn draw(&self, from: ClassId, u: f64) -> Label {
        let row = &self.rows[from];
        let mut acc = 0.0;
        for (l, &p) in row.iter().enumerate() {
            acc += p;
            if u < acc {
                return self.label_at(l);
            }
        }
        // u landed in the rounding slack at the top of the row.
        let last = row.iter().rposition(|&p| p > 0.0).unwrap_or(from);
        self.label_at(last)
    }

    fn label_at(&self, column: usize) -> Label {
        if column == self.classes {
            Label::OutOfSpace
        } else {
            Label::Class(column)
        }
    }

    /// Text form: a version line, the class count, the out-of-space flag and
    /// one line of entries per row.
    pub fn to_text(&self) -> String {
        let mut out = String::from("transition-matrix v1\n");
        let _ = writeln!(out, "classes {}", self.classes);
        let _ = writeln!(out, "out_of_space {}", self.out_of_space);
        for row in &self.rows {
            let line: Vec<String> = row.iter().map(|p| p.to_string()).collect();
            let _ = writeln!(out, "{}", line.join(" "));
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty());
        let bad = |m: &str| Error::Noise(format!("malformed matrix file: {m}"));
        if lines.next() != Some("transition-matrix v1") {
            return Err(bad("missing `transition-matrix v1` header"));
        }
        let classes: usize = lines
            .next()
            .and_then(|l| l.strip_prefix("classes "))
            .and_then(|v| v.trim().parse().ok())
            .ok_or_else(|| bad("missing `classes` line"))?;
        let out_of_space: bool = lines
            .next()
            .and_then(|l| l.strip_prefix("out_of_space "))
            .and_then(|v| v.trim().parse().ok())
            .ok_or_else(|| bad("missing `out_of_space` line"))?;
        let rows = lines
            .map(|l| {
                l.split_whitespace()
                    .map(|v| v.parse::<f64>().map_err(|_| bad(&format!("bad entry `{v}`"))))
                    .collect::<Result<Vec<f64>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        if rows.len() != classes {
            return Err(bad(&format!("expected {classes} rows, found {}", rows.len())));
        }
        TransitionMatrix::from_rows(rows, out_of_space)
    }
}

/// Every wrong class equally likely: `P_kk = 1 - beta`,
/// `P_kl = beta / (c - 1)`.
pub fn symmetric_matrix(classes: usize, beta: f64) -> Result<TransitionMatrix> {
    if classes < 2 {
        return Err(Error::Noise(format!("need at least 2 classes, got {classes}")));
    }
    if !(0.0..1.0).contains(&beta) {
        return Err(Error::Noise(format!("noise ratio {beta} outside [0, 1)")));
    }
    let off = beta / (classes - 1) as f64;
    let rows = (0..classes)
        .map(|k| {
            let mut row = vec![off; classes];
            // Diagonal is the complement of the off-diagonal mass so rows sum
            // to 1 up to a single rounding.
            row[k] = 1.0 - off * (classes - 1) as f64;
            row
        })
        .collect();
    TransitionMatrix::from_rows(rows, false)
}

/// A structured flip: clean class `src` is observed as `dst` with
/// probability `mass`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlipPair {
    pub src: ClassId,
    pub dst: ClassId,
    pub mass: f64,
}

pub fn asymmetric_matrix(classes: usize, pairs: &[FlipPair]) -> Result<TransitionMatrix> {
    if classes < 2 {
        return Err(Error::Noise(format!("need at least 2 classes, got {classes}")));
    }
    let mut rows = vec![vec![0.0; classes]; classes];
    let mut outgoing = vec![0.0; classes];
    for (n, p) in pairs.iter().enumerate() {
        if p.src >= classes || p.dst >= classes || p.src == p.dst {
            return Err(Error::Noise(format!(
                "pair {n} ({} -> {}) is not a flip between distinct classes in [0, {classes})",
                p.src, p.dst
            )));
        }
        if !(p.mass >= 0.0 && p.mass.is_finite()) {
            return Err(Error::Noise(format!("pair {n} has invalid mass {}", p.mass)));
        }
        if pairs[..n].iter().any(|q| q.src == p.src && q.dst == p.dst) {
            return Err(Error::Noise(format!(
                "duplicate pair ({} -> {})",
                p.src, p.dst
            )));
        }
        rows[p.src][p.dst] = p.mass;
        outgoing[p.src] += p.mass;
    }
    for (k, &out) in outgoing.iter().enumerate() {
        if out >= 0.5 {
            return Err(Error::Noise(format!(
                "class {k} sends mass {out} >= 0.5; the diagonal would not dominate"
            )));
        }
        rows[k][k] = 1.0 - out;
    }
    TransitionMatrix::from_rows(rows, false)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseReport {
    /// Flipped labels per clean class.
    pub injected_count: Vec<usize>,
    /// Instances per clean class.
    pub class_count: Vec<usize>,
    pub realized_ratio: Vec<f64>,
    /// Ids whose observed label differs from the true label after injection.
    pub flipped_ids: Vec<u64>,
    pub seed: u64,
}

impl NoiseReport {
    pub fn overall_ratio(&self) -> f64 {
        let total: usize = self.class_count.iter().sum();
        if total == 0 {
            0.0
        } else {
            self.injected_count.iter().sum::<usize>() as f64 / total as f64
        }
    }
}

/// Resamples every observed label from its row of `matrix`, one uniform
/// draw per instance in dataset order. The pre-injection label becomes the
/// true label when none is recorded.
pub fn inject_noise(
    dataset: &Dataset,
    matrix: &TransitionMatrix,
    seed: u64,
) -> Result<(Dataset, NoiseReport)> {
    let c = dataset.class_count();
    if matrix.classes() != c {
        return Err(Error::Noise(format!(
            "matrix has {} classes, dataset has {c}",
            matrix.classes()
        )));
    }
    let mut rng = seed::rng(seed);
    let mut injected_count = vec![0; c];
    let mut class_count = vec![0; c];
    let mut flipped_ids = Vec::new();
    let mut instances = Vec::with_capacity(dataset.len());
    for (row, inst) in dataset.instances().iter().enumerate() {
        let clean = inst.observed.class().ok_or_else(|| Error::Schema {
            row,
            message: "noise injection needs in-space labels".into(),
        })?;
        let mut inst = inst.clone();
        if inst.true_label().is_none() {
            inst.set_true_label(clean);
        }
        inst.observed = matrix.draw(clean, unit(&mut rng));
        class_count[clean] += 1;
        if inst.observed != Label::Class(clean) {
            injected_count[clean] += 1;
            flipped_ids.push(inst.id);
        }
        instances.push(inst);
    }
    let realized_ratio = injected_count
        .iter()
        .zip(&class_count)
        .map(|(&f, &n)| if n == 0 { 0.0 } else { f as f64 / n as f64 })
        .collect();
    let noisy = dataset.from_parts(dataset.name().to_string(), instances);
    Ok((
        noisy,
        NoiseReport {
            injected_count,
            class_count,
            realized_ratio,
            flipped_ids,
            seed,
        },
    ))
}
