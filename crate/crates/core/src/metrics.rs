//! Confusion-matrix based accuracy measures.

use serde::{Deserialize, Serialize};

use crate::error::{config_err, shape_err, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    /// Rows are true classes, columns predicted classes.
    pub confusion: Vec<Vec<u64>>,
    /// `None` for classes without test samples.
    pub per_class_accuracy: Vec<Option<f64>>,
    pub oa: f64,
    /// Mean over classes that have test samples.
    pub aa: f64,
    pub kappa: f64,
}

/// Counts `(truth, prediction)` pairs of 1-based class ids.
pub fn confusion_matrix(truth: &[usize], pred: &[usize], classes: usize) -> Result<Vec<Vec<u64>>> {
    if truth.len() != pred.len() {
        return Err(shape_err!(
            "{} labels but {} predictions",
            truth.len(),
            pred.len()
        ));
    }
    let mut m = vec![vec![0u64; classes]; classes];
    for (&t, &p) in truth.iter().zip(pred) {
        if t == 0 || t > classes || p == 0 || p > classes {
            return Err(config_err!("class pair ({t}, {p}) outside 1..={classes}"));
        }
        m[t - 1][p - 1] += 1;
    }
    Ok(m)
}

/// Cohen's kappa of a square confusion matrix.
pub fn kappa(confusion: &[Vec<u64>]) -> Result<f64> {
    let total: u64 = confusion.iter().flatten().sum();
    if total == 0 {
        return Err(config_err!("kappa of an empty confusion matrix"));
    }
    let n = total as f64;
    let c = confusion.len();
    let trace: u64 = (0..c).map(|i| confusion[i][i]).sum();
    let po = trace as f64 / n;
    let pe = (0..c)
        .map(|i| {
            let row: u64 = confusion[i].iter().sum();
            let col: u64 = confusion.iter().map(|r| r[i]).sum();
            row as f64 * col as f64
        })
        .sum::<f64>()
        / (n * n);
    if pe == 1.0 {
        return if po == 1.0 {
            Ok(1.0)
        } else {
            Err(config_err!("kappa undefined: chance agreement is 1"))
        };
    }
    Ok((po - pe) / (1.0 - pe))
}

impl MetricsReport {
    pub fn from_confusion(confusion: Vec<Vec<u64>>) -> Result<Self> {
        let c = confusion.len();
        if confusion.iter().any(|r| r.len() != c) {
            return Err(shape_err!("confusion matrix must be square"));
        }
        let total: u64 = confusion.iter().flatten().sum();
        if total == 0 {
            return Err(config_err!("no samples to evaluate"));
        }
        let per_class_accuracy: Vec<Option<f64>> = confusion
            .iter()
            .enumerate()
            .map(|(i, row)| {
                let s: u64 = row.iter().sum();
                (s > 0).then(|| row[i] as f64 / s as f64)
            })
            .collect();
        let present: Vec<f64> = per_class_accuracy.iter().flatten().copied().collect();
        let aa = present.iter().sum::<f64>() / present.len() as f64;
        let trace: u64 = (0..c).map(|i| confusion[i][i]).sum();
        let kappa = kappa(&confusion)?;
        Ok(Self {
            oa: trace as f64 / total as f64,
            aa,
            kappa,
            per_class_accuracy,
            confusion,
        })
    }

    pub fn from_pairs(truth: &[usize], pred: &[usize], classes: usize) -> Result<Self> {
        Self::from_confusion(confusion_matrix(truth, pred, classes)?)
    }

    pub fn total(&self) -> u64 {
        self.confusion.iter().flatten().sum()
    }
}
