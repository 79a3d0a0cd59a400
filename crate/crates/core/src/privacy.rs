//! Release barrier between classification and every output stage.
//!
//! Only verdicts above the policy threshold (and, if allowed, fail-closed
//! unverified verdicts) pass. Everything else is reduced to a count, or to a
//! salted digest under `digest-only` retention, and its text is zeroed
//! before the verdict is dropped.

use std::fmt;
use std::str::FromStr;

use rand::RngCore;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use zeroize::Zeroize;

use crate::classify::{SensitivityVerdict, DEFAULT_THRESHOLD};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Retention {
    /// Only an aggregate count of suppressed messages.
    #[default]
    None,
    /// A salted SHA-256 per suppressed message.
    DigestOnly,
}

impl FromStr for Retention {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "none" => Ok(Self::None),
            "digest-only" => Ok(Self::DigestOnly),
            other => Err(format!("unknown retention {other:?} (expected none or digest-only)")),
        }
    }
}

impl fmt::Display for Retention {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::None => "none",
            Self::DigestOnly => "digest-only",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrivacyPolicy {
    pub threshold: f64,
    pub allow_unverified: bool,
    pub retention: Retention,
}

impl Default for PrivacyPolicy {
    fn default() -> Self {
        Self {
            threshold: DEFAULT_THRESHOLD,
            allow_unverified: true,
            retention: Retention::None,
        }
    }
}

impl PrivacyPolicy {
    pub fn validate(&self) -> Result<(), String> {
        if self.threshold > 0.0 && self.threshold < 1.0 {
            Ok(())
        } else {
            Err(format!("threshold must be in (0, 1), got {}", self.threshold))
        }
    }

    pub fn releases(&self, v: &SensitivityVerdict) -> bool {
        if v.unverified {
            self.allow_unverified
        } else {
            v.score > self.threshold
        }
    }
}

/// Per-scan random salt for suppressed-message digests.
#[derive(Clone)]
pub struct ScanSalt([u8; 16]);

impl ScanSalt {
    pub fn random() -> Self {
        let mut salt = [0u8; 16];
        rand::thread_rng().fill_bytes(&mut salt);
        Self(salt)
    }

    pub fn from_bytes(bytes: [u8; 16]) -> Self {
        Self(bytes)
    }

    fn digest(&self, text: &str) -> String {
        let mut h = Sha256::new();
        h.update(self.0);
        h.update(text.as_bytes());
        hex::encode(h.finalize())
    }
}

impl Drop for ScanSalt {
    fn drop(&mut self) {
        self.0.zeroize();
    }
}

#[derive(Debug, Default)]
pub struct FilterOutcome {
    pub released: Vec<SensitivityVerdict>,
    pub suppressed_count: usize,
    /// Filled only under [`Retention::DigestOnly`].
    pub suppressed_digests: Vec<String>,
}

pub fn filter_verdicts(
    verdicts: Vec<SensitivityVerdict>,
    policy: &PrivacyPolicy,
    salt: &ScanSalt,
) -> FilterOutcome {
    let mut out = FilterOutcome::default();
    for mut v in verdicts {
        if policy.releases(&v) {
            out.released.push(v);
            continue;
        }
        out.suppressed_count += 1;
        if policy.retention == Retention::DigestOnly {
            out.suppressed_digests.push(salt.digest(&v.message.text));
        }
        wipe(&mut v);
    }
    out
}

fn wipe(v: &mut SensitivityVerdict) {
    v.message.text.zeroize();
    for k in &mut v.message.matched_keywords {
        k.zeroize();
    }
}
