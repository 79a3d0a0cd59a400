//! Contextual sensitivity scoring.
//!
//! A [`Scorer`] maps a line of text to a score in `[0, 1]`. Two scorers are
//! provided: the in-process [`ReferenceModel`] and [`PluginScorer`], which
//! talks to any external model over newline-delimited JSON on a child
//! process's stdin/stdout.
//!
//! Scoring failures are fail-closed: the message is treated as sensitive
//! and the verdict is flagged `unverified`.

mod metrics;
mod plugin;
mod reference;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::LabelledMessage;
use crate::retrieval::CandidateMessage;

pub use metrics::{
    evaluate, evaluate_scores, metrics, threshold_sweep, ConfusionMatrix, EvalReport, MetricError,
    Ratio, ScoredSample, SweepPoint,
};
pub use plugin::{PluginScorer, DEFAULT_PLUGIN_TIMEOUT};
pub use reference::{tokenize, ReferenceModel, TrainError, MODEL_VERSION};

pub const DEFAULT_THRESHOLD: f64 = 0.5;

#[derive(Debug, Error)]
pub enum ScorerError {
    #[error("scorer timed out after {0:?}")]
    Timeout(std::time::Duration),
    #[error("scorer process exited")]
    Exited,
    #[error("scorer i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("scorer protocol error: {0}")]
    Protocol(String),
    #[error("scorer returned out-of-range score {0}")]
    OutOfRange(f64),
}

pub trait Scorer {
    /// Stable identifier recorded in verdicts and audit logs.
    fn id(&self) -> &str;

    fn score(&mut self, text: &str) -> Result<f64, ScorerError>;
}

impl<S: Scorer + ?Sized> Scorer for Box<S> {
    fn id(&self) -> &str {
        (**self).id()
    }

    fn score(&mut self, text: &str) -> Result<f64, ScorerError> {
        (**self).score(text)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityVerdict {
    pub message: CandidateMessage,
    /// In `[0, 1]`. Scorer failures carry 1.0.
    pub score: f64,
    pub sensitive: bool,
    /// Set when the scorer failed and the verdict is fail-closed.
    pub unverified: bool,
    pub scorer_id: String,
}

/// Sensitive iff `score > threshold`; a score equal to the threshold is
/// benign.
pub fn is_sensitive(score: f64, threshold: f64) -> bool {
    score > threshold
}

/// Scores one candidate. Never fails: scorer errors and out-of-range scores
/// yield a sensitive, unverified verdict.
pub fn score<S: Scorer + ?Sized>(
    message: CandidateMessage,
    scorer: &mut S,
    threshold: f64,
) -> SensitivityVerdict {
    let result = scorer.score(&message.text).and_then(check_range);
    let scorer_id = scorer.id().to_string();
    match result {
        Ok(s) => SensitivityVerdict {
            message,
            score: s,
            sensitive: is_sensitive(s, threshold),
            unverified: false,
            scorer_id,
        },
        Err(e) => {
            log::warn!("scorer {scorer_id} failed, treating message as sensitive: {e}");
            SensitivityVerdict {
                message,
                score: 1.0,
                sensitive: true,
                unverified: true,
                scorer_id,
            }
        }
    }
}

pub fn score_all<S: Scorer + ?Sized>(
    messages: Vec<CandidateMessage>,
    scorer: &mut S,
    threshold: f64,
) -> Vec<SensitivityVerdict> {
    messages
        .into_iter()
        .map(|m| score(m, scorer, threshold))
        .collect()
}

pub(crate) fn check_range(s: f64) -> Result<f64, ScorerError> {
    if (0.0..=1.0).contains(&s) {
        Ok(s)
    } else {
        Err(ScorerError::OutOfRange(s))
    }
}

/// Labelled message with its score, for evaluation.
pub fn score_dataset<S: Scorer + ?Sized>(
    dataset: &[LabelledMessage],
    scorer: &mut S,
) -> Vec<ScoredSample> {
    dataset
        .iter()
        .map(|m| match scorer.score(&m.text).and_then(check_range) {
            Ok(s) => ScoredSample {
                score: Some(s),
                label: m.label,
            },
            Err(e) => {
                log::warn!("scorer {} failed during evaluation: {e}", scorer.id());
                ScoredSample {
                    score: None,
                    label: m.label,
                }
            }
        })
        .collect()
}
