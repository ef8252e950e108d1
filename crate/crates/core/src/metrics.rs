//! Confusion matrices, per-class recall / precision / F1, and Levenshtein
//! based text scores.

use alloc::vec;
use alloc::vec::Vec;

use crate::labels::{KeyClass, NUM_CLASSES};
use crate::{Error, Result};

/// Rows are true classes, columns predicted classes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    pub counts: [[u64; NUM_CLASSES]; NUM_CLASSES],
}

impl Default for ConfusionMatrix {
    fn default() -> Self {
        Self {
            counts: [[0; NUM_CLASSES]; NUM_CLASSES],
        }
    }
}

impl ConfusionMatrix {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_pairs(truth: &[KeyClass], predicted: &[KeyClass]) -> Result<Self> {
        let mut cm = Self::new();
        cm.record_all(truth, predicted)?;
        Ok(cm)
    }

    pub fn record(&mut self, truth: KeyClass, predicted: KeyClass) {
        self.counts[truth.code()][predicted.code()] += 1;
    }

    pub fn record_all(&mut self, truth: &[KeyClass], predicted: &[KeyClass]) -> Result<()> {
        if truth.len() != predicted.len() {
            return Err(Error::ShapeMismatch {
                op: "ConfusionMatrix::record_all",
                expected: vec![truth.len()],
                actual: vec![predicted.len()],
            });
        }
        for (&t, &p) in truth.iter().zip(predicted) {
            self.record(t, p);
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) {
        for (r, o) in self.counts.iter_mut().zip(&other.counts) {
            for (a, b) in r.iter_mut().zip(o) {
                *a += b;
            }
        }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn row_sum(&self, class: usize) -> u64 {
        self.counts[class].iter().sum()
    }

    pub fn col_sum(&self, class: usize) -> u64 {
        self.counts.iter().map(|r| r[class]).sum()
    }

    /// Fraction of frames on the diagonal.
    pub fn accuracy(&self) -> Option<f64> {
        let total = self.total();
        (total > 0).then(|| (0..NUM_CLASSES).map(|i| self.counts[i][i]).sum::<u64>() as f64 / total as f64)
    }
}

/// Per-class scores; `None` where the denominator is zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassMetrics {
    pub support: u64,
    pub recall: Option<f64>,
    pub precision: Option<f64>,
    pub f1: Option<f64>,
}

/// A class left out of one or more macro averages.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MetricsWarning {
    pub class: KeyClass,
    /// No true frames of this class: recall undefined.
    pub empty_row: bool,
    /// Never predicted: precision undefined.
    pub empty_col: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub per_class: [ClassMetrics; NUM_CLASSES],
    pub macro_recall: f64,
    pub macro_precision: f64,
    pub macro_f1: f64,
    pub warnings: Vec<MetricsWarning>,
}

fn mean_defined(values: impl Iterator<Item = Option<f64>>) -> f64 {
    let (sum, n) = values.flatten().fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// Recall, precision and F1 per class, and their macro averages over the
/// classes where each is defined.
pub fn per_class_metrics(cm: &ConfusionMatrix) -> Result<MetricsReport> {
    if cm.total() == 0 {
        return Err(Error::EmptyMatrix);
    }
    let mut warnings = Vec::new();
    let per_class: [ClassMetrics; NUM_CLASSES] = core::array::from_fn(|i| {
        let tp = cm.counts[i][i] as f64;
        let (row, col) = (cm.row_sum(i), cm.col_sum(i));
        let recall = (row > 0).then(|| tp / row as f64);
        let precision = (col > 0).then(|| tp / col as f64);
        let f1 = match (recall, precision) {
            (Some(r), Some(p)) if r + p > 0.0 => Some(2.0 * r * p / (r + p)),
            (Some(_), Some(_)) => Some(0.0),
            _ => None,
        };
        if row == 0 || col == 0 {
            warnings.push(MetricsWarning {
                class: KeyClass::new(i).expect("class index"),
                empty_row: row == 0,
                empty_col: col == 0,
            });
        }
        ClassMetrics {
            support: row,
            recall,
            precision,
            f1,
        }
    });
    Ok(MetricsReport {
        macro_recall: mean_defined(per_class.iter().map(|m| m.recall)),
        macro_precision: mean_defined(per_class.iter().map(|m| m.precision)),
        macro_f1: mean_defined(per_class.iter().map(|m| m.f1)),
        per_class,
        warnings,
    })
}

/// Edit distance (insertions, deletions, substitutions) over chars.
pub fn levenshtein(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, ca) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, cb) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(ca != cb);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        core::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// `1 - levenshtein(reference, identified) / len(reference)`; not clamped.
pub fn nld(reference: &str, identified: &str) -> Result<f64> {
    let len = reference.chars().count();
    if len == 0 {
        return Err(Error::EmptyReference);
    }
    Ok(1.0 - levenshtein(reference, identified) as f64 / len as f64)
}
