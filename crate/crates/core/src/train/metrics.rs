//! Classification metrics computed from a confusion matrix.
//!
//! Rows index the true class, columns the predicted class. Per-class scores
//! use single-division forms (`F1 = 2·tp / (2·tp + fp + fn)`) so they agree
//! exactly with rational arithmetic on integer counts; every zero
//! denominator yields 0 rather than an error, and classes with no support
//! are reported in `zero_support_classes`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How the single reported F1 is averaged across classes.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum F1Average {
    /// Unweighted mean of per-class F1 scores.
    #[default]
    Macro,
    /// F1 of globally pooled counts (equals accuracy for single-label
    /// classification).
    Micro,
    /// F1 of class 1 on two-class problems.
    Binary,
}

/// Evaluation summary; per-class vectors are indexed by class.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub precision: Vec<f64>,
    pub recall: Vec<f64>,
    pub f1: Vec<f64>,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    /// Which averaging produced `averaged_f1`.
    pub f1_average: F1Average,
    pub averaged_f1: f64,
    /// Counts with rows = true class, columns = predicted class.
    pub confusion: Vec<Vec<usize>>,
    /// Classes that appear in no true row (their scores defaulted to 0).
    pub zero_support_classes: Vec<usize>,
}

/// Builds [`Metrics`] from a square confusion matrix of counts.
pub fn metrics_from_confusion(confusion: &[Vec<usize>], average: F1Average) -> Result<Metrics> {
    let k = confusion.len();
    if k < 2 {
        return Err(Error::Data(format!(
            "confusion matrix needs at least two classes, got {k}"
        )));
    }
    if let Some(row) = confusion.iter().find(|row| row.len() != k) {
        return Err(Error::Shape(format!(
            "confusion matrix must be square, found a row of length {} in a {k}-class matrix",
            row.len()
        )));
    }
    let total: usize = confusion.iter().flatten().sum();
    if total == 0 {
        return Err(Error::Data("confusion matrix is empty".into()));
    }
    let trace: usize = (0..k).map(|c| confusion[c][c]).sum();
    let accuracy = trace as f64 / total as f64;

    let mut precision = Vec::with_capacity(k);
    let mut recall = Vec::with_capacity(k);
    let mut f1 = Vec::with_capacity(k);
    let mut zero_support = Vec::new();
    for c in 0..k {
        let tp = confusion[c][c];
        let support: usize = confusion[c].iter().sum();
        let predicted: usize = confusion.iter().map(|row| row[c]).sum();
        let fn_ = support - tp;
        let fp = predicted - tp;
        if support == 0 {
            zero_support.push(c);
        }
        precision.push(ratio(tp, tp + fp));
        recall.push(ratio(tp, tp + fn_));
        f1.push(ratio(2 * tp, 2 * tp + fp + fn_));
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / k as f64;
    let macro_precision = mean(&precision);
    let macro_recall = mean(&recall);
    let macro_f1 = mean(&f1);
    let averaged_f1 = match average {
        F1Average::Macro => macro_f1,
        F1Average::Micro => {
            // Single-label counts: every error is one fp and one fn, so the
            // pooled F1 collapses to trace/total.
            let errors = total - trace;
            ratio(2 * trace, 2 * trace + 2 * errors)
        }
        F1Average::Binary => {
            if k != 2 {
                return Err(Error::Config(format!(
                    "binary F1 needs exactly two classes, got {k}"
                )));
            }
            f1[1]
        }
    };
    Ok(Metrics {
        accuracy,
        precision,
        recall,
        f1,
        macro_precision,
        macro_recall,
        macro_f1,
        f1_average: average,
        averaged_f1,
        confusion: confusion.to_vec(),
        zero_support_classes: zero_support,
    })
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}
