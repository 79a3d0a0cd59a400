use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{score_dataset, Scorer};
use crate::corpus::LabelledMessage;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MetricError {
    #[error("{0} is undefined: its denominator is zero")]
    Undefined(&'static str),
    #[error("evaluation dataset must be non-empty and contain both classes")]
    DegenerateDataset,
}

/// Binary confusion matrix; the positive class is "sensitive" (label 1).
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    #[serde(rename = "tp")]
    pub true_pos: u64,
    #[serde(rename = "fn")]
    pub false_neg: u64,
    #[serde(rename = "tn")]
    pub true_neg: u64,
    #[serde(rename = "fp")]
    pub false_pos: u64,
}

impl ConfusionMatrix {
    pub fn new(true_pos: u64, false_neg: u64, true_neg: u64, false_pos: u64) -> Self {
        Self {
            true_pos,
            false_neg,
            true_neg,
            false_pos,
        }
    }

    pub fn record(&mut self, label: u8, predicted_sensitive: bool) {
        match (label == 1, predicted_sensitive) {
            (true, true) => self.true_pos += 1,
            (true, false) => self.false_neg += 1,
            (false, false) => self.true_neg += 1,
            (false, true) => self.false_pos += 1,
        }
    }

    pub fn total(&self) -> u64 {
        self.true_pos + self.false_neg + self.true_neg + self.false_pos
    }
}

/// Exact non-negative fraction in lowest terms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ratio {
    pub num: u64,
    pub den: u64,
}

impl Ratio {
    fn new(num: u64, den: u64, name: &'static str) -> Result<Self, MetricError> {
        if den == 0 {
            return Err(MetricError::Undefined(name));
        }
        let g = gcd(num, den);
        Ok(Self {
            num: num / g,
            den: den / g,
        })
    }

    pub fn value(&self) -> f64 {
        self.num as f64 / self.den as f64
    }
}

impl fmt::Display for Ratio {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.5} ({}/{})", self.value(), self.num, self.den)
    }
}

fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a.max(1)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub matrix: ConfusionMatrix,
    pub tpr: Ratio,
    pub tnr: Ratio,
    pub accuracy: Ratio,
    /// Items the scorer failed on; counted as predicted-sensitive.
    #[serde(default)]
    pub scorer_failures: u64,
}

/// TPR, TNR and accuracy as exact fractions.
pub fn metrics(matrix: ConfusionMatrix) -> Result<EvalReport, MetricError> {
    let m = matrix;
    Ok(EvalReport {
        matrix,
        tpr: Ratio::new(m.true_pos, m.true_pos + m.false_neg, "tpr")?,
        tnr: Ratio::new(m.true_neg, m.true_neg + m.false_pos, "tnr")?,
        accuracy: Ratio::new(m.true_pos + m.true_neg, m.total(), "accuracy")?,
        scorer_failures: 0,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoredSample {
    /// `None` when the scorer failed.
    pub score: Option<f64>,
    pub label: u8,
}

impl ScoredSample {
    fn predicted(&self, threshold: f64) -> bool {
        self.score.is_none_or(|s| super::is_sensitive(s, threshold))
    }
}

pub fn evaluate_scores(samples: &[ScoredSample], threshold: f64) -> Result<EvalReport, MetricError> {
    let has = |l: u8| samples.iter().any(|s| s.label == l);
    if !(has(0) && has(1)) {
        return Err(MetricError::DegenerateDataset);
    }
    let mut matrix = ConfusionMatrix::default();
    for s in samples {
        matrix.record(s.label, s.predicted(threshold));
    }
    let mut report = metrics(matrix)?;
    report.scorer_failures = samples.iter().filter(|s| s.score.is_none()).count() as u64;
    Ok(report)
}

/// Scores every item and reports metrics at `threshold`.
pub fn evaluate<S: Scorer + ?Sized>(
    dataset: &[LabelledMessage],
    scorer: &mut S,
    threshold: f64,
) -> Result<EvalReport, MetricError> {
    let has = |l: u8| dataset.iter().any(|m| m.label == l);
    if !(has(0) && has(1)) {
        return Err(MetricError::DegenerateDataset);
    }
    evaluate_scores(&score_dataset(dataset, scorer), threshold)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub threshold: f64,
    pub matrix: ConfusionMatrix,
    pub tpr: Option<f64>,
    pub tnr: Option<f64>,
    pub accuracy: Option<f64>,
}

/// Operating points at thresholds 0.0, 0.1, ..., 1.0.
pub fn threshold_sweep(samples: &[ScoredSample]) -> Vec<SweepPoint> {
    (0..=10)
        .map(|i| {
            let threshold = f64::from(i) / 10.0;
            let mut matrix = ConfusionMatrix::default();
            for s in samples {
                matrix.record(s.label, s.predicted(threshold));
            }
            let m = matrix;
            let frac = |n: u64, d: u64| (d > 0).then(|| n as f64 / d as f64);
            SweepPoint {
                threshold,
                matrix,
                tpr: frac(m.true_pos, m.true_pos + m.false_neg),
                tnr: frac(m.true_neg, m.true_neg + m.false_pos),
                accuracy: frac(m.true_pos + m.true_neg, m.total()),
            }
        })
        .collect()
}
