//! Lightweight context scorer.
//!
//! Features are lowercased token unigrams plus co-occurrence pairs of tokens
//! that appear within a small window of each other. Each feature carries an
//! additive-smoothed log-odds weight learned from document frequencies in the
//! two classes; a message's score is the logistic of the prior log-odds plus
//! the weights of the features it contains. Features never seen in training
//! contribute nothing, so text unlike anything in the training set scores
//! near the prior.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{Scorer, ScorerError};
use crate::acquisition::sha256_hex;
use crate::corpus::LabelledMessage;

pub const MODEL_VERSION: u32 = 1;
const DEFAULT_WINDOW: usize = 3;
const DEFAULT_ALPHA: f64 = 1.0;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("training data must contain both sensitive and benign messages")]
    DegenerateDataset,
    #[error("cannot read model {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid model document: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReferenceModel {
    pub version: u32,
    /// Sorted feature names; `weights[i]` belongs to `vocabulary[i]`.
    pub vocabulary: Vec<String>,
    pub weights: Vec<f64>,
    pub bias: f64,
    /// Seed of the corpus the model was trained on, when known.
    pub seed: u64,
    pub window: usize,
    pub alpha: f64,
    #[serde(skip)]
    index: HashMap<String, f64>,
    #[serde(skip)]
    id: String,
}

/// Lowercased alphanumeric tokens; all-digit tokens collapse to `<num>`.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(|t| {
            if t.chars().all(|c| c.is_ascii_digit()) {
                "<num>".to_string()
            } else {
                t.to_lowercase()
            }
        })
        .collect()
}

fn features(text: &str, window: usize) -> BTreeSet<String> {
    let tokens = tokenize(text);
    let mut out = BTreeSet::new();
    for (i, t) in tokens.iter().enumerate() {
        out.insert(format!("u:{t}"));
        for u in tokens.iter().skip(i + 1).take(window) {
            out.insert(format!("p:{t}|{u}"));
        }
    }
    out
}

impl ReferenceModel {
    pub fn train(dataset: &[LabelledMessage], seed: u64) -> Result<Self, TrainError> {
        let window = DEFAULT_WINDOW;
        let alpha = DEFAULT_ALPHA;
        let n_pos = dataset.iter().filter(|m| m.label == 1).count();
        let n_neg = dataset.len() - n_pos;
        if n_pos == 0 || n_neg == 0 {
            return Err(TrainError::DegenerateDataset);
        }

        // feature -> (sensitive doc count, benign doc count)
        let mut counts: BTreeMap<String, (u32, u32)> = BTreeMap::new();
        for m in dataset {
            for f in features(&m.text, window) {
                let e = counts.entry(f).or_default();
                if m.label == 1 {
                    e.0 += 1;
                } else {
                    e.1 += 1;
                }
            }
        }

        let (np, nn) = (n_pos as f64, n_neg as f64);
        let mut vocabulary = Vec::with_capacity(counts.len());
        let mut weights = Vec::with_capacity(counts.len());
        for (f, (cp, cn)) in counts {
            let p = (f64::from(cp) + alpha) / (np + 2.0 * alpha);
            let q = (f64::from(cn) + alpha) / (nn + 2.0 * alpha);
            vocabulary.push(f);
            weights.push(p.ln() - q.ln());
        }
        let bias = (np / nn).ln();
        Self::assemble(ReferenceModel {
            version: MODEL_VERSION,
            vocabulary,
            weights,
            bias,
            seed,
            window,
            alpha,
            index: HashMap::new(),
            id: String::new(),
        })
    }

    fn assemble(mut self) -> Result<Self, TrainError> {
        if self.version != MODEL_VERSION {
            return Err(TrainError::Invalid(format!(
                "unsupported version {}",
                self.version
            )));
        }
        if self.vocabulary.len() != self.weights.len() {
            return Err(TrainError::Invalid(
                "vocabulary and weights differ in length".into(),
            ));
        }
        if !self.bias.is_finite() || self.weights.iter().any(|w| !w.is_finite()) {
            return Err(TrainError::Invalid("non-finite weight".into()));
        }
        self.index = self
            .vocabulary
            .iter()
            .cloned()
            .zip(self.weights.iter().copied())
            .collect();
        self.id = format!("reference-v{}:{}", self.version, &self.digest()[..12]);
        Ok(self)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("model serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, TrainError> {
        let model: ReferenceModel =
            serde_json::from_str(text).map_err(|e| TrainError::Invalid(e.to_string()))?;
        model.assemble()
    }

    pub fn load(path: &Path) -> Result<Self, TrainError> {
        let text = fs::read_to_string(path).map_err(|source| TrainError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text)
    }

    pub fn save(&self, path: &Path) -> std::io::Result<()> {
        fs::write(path, self.to_json())
    }

    /// SHA-256 of the serialized model.
    pub fn digest(&self) -> String {
        sha256_hex(self.to_json().as_bytes())
    }

    pub fn logit(&self, text: &str) -> f64 {
        self.bias
            + features(text, self.window)
                .iter()
                .filter_map(|f| self.index.get(f))
                .sum::<f64>()
    }

    pub fn score_text(&self, text: &str) -> f64 {
        1.0 / (1.0 + (-self.logit(text)).exp())
    }
}

impl Scorer for ReferenceModel {
    fn id(&self) -> &str {
        &self.id
    }

    fn score(&mut self, text: &str) -> Result<f64, ScorerError> {
        Ok(self.score_text(text))
    }
}
