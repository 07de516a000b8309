use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    /// Classifier plus adversarial domain discriminator.
    Lad,
    /// Classifier only, no adaptation.
    Baseline,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Lad => "lad",
            Method::Baseline => "baseline",
        })
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lad" => Ok(Method::Lad),
            "baseline" => Ok(Method::Baseline),
            _ => Err(Error::InvalidArgument(format!(
                "unknown mode `{s}`, expected `lad` or `baseline`"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    F32,
    #[default]
    F64,
}

impl fmt::Display for Precision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Precision::F32 => "f32",
            Precision::F64 => "f64",
        })
    }
}

impl FromStr for Precision {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "f32" => Ok(Precision::F32),
            "f64" => Ok(Precision::F64),
            _ => Err(Error::InvalidArgument(format!(
                "unknown precision `{s}`, expected `f32` or `f64`"
            ))),
        }
    }
}

/// Hyperparameters of one training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub n_epochs: usize,
    pub hidden_width: usize,
    pub dropout_rate: f64,
    pub use_class_weights: bool,
    pub seed: u64,
    /// Epochs between history snapshots; the final epoch is always recorded.
    pub record_every: usize,
    pub precision: Precision,
    /// When false the discriminator gradient is not propagated into the
    /// classifier (detached reversal layer).
    pub reverse_gradient: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.001,
            momentum: 0.9,
            batch_size: 32,
            n_epochs: 1000,
            hidden_width: 1024,
            dropout_rate: 0.5,
            use_class_weights: true,
            seed: 0,
            record_every: 10,
            precision: Precision::F64,
            reverse_gradient: true,
        }
    }
}

/// Default number of epochs for the classifier-only baseline.
pub const BASELINE_EPOCHS: usize = 100;

impl TrainConfig {
    /// Defaults for `method`: 1000 epochs for LAD, 100 for the baseline.
    pub fn for_method(method: Method) -> Self {
        match method {
            Method::Lad => Self::default(),
            Method::Baseline => Self {
                n_epochs: BASELINE_EPOCHS,
                ..Self::default()
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, msg: String| Err(Error::InvalidArgument(format!("{field}: {msg}")));
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return bad("learning_rate", format!("must be positive, got {}", self.learning_rate));
        }
        if !(self.momentum.is_finite() && (0.0..1.0).contains(&self.momentum)) {
            return bad("momentum", format!("must be in [0, 1), got {}", self.momentum));
        }
        if self.batch_size == 0 {
            return bad("batch_size", "must be at least 1".into());
        }
        if self.n_epochs == 0 {
            return bad("n_epochs", "must be at least 1".into());
        }
        if self.hidden_width == 0 {
            return bad("hidden_width", "must be at least 1".into());
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return bad("dropout_rate", format!("must be in [0, 1), got {}", self.dropout_rate));
        }
        if self.record_every == 0 {
            return bad("record_every", "must be at least 1".into());
        }
        Ok(())
    }

    /// Canonical description plus hash of everything that affects a run
    /// except the seed, which reports carry separately.
    pub fn digest(&self, method: Method) -> ConfigDigest {
        let summary = format!(
            "mode={method};lr={};momentum={};batch_size={};epochs={};hidden={};dropout={};\
             class_weights={};record_every={};precision={};reverse_gradient={}",
            self.learning_rate,
            self.momentum,
            self.batch_size,
            self.n_epochs,
            self.hidden_width,
            self.dropout_rate,
            if self.use_class_weights { "on" } else { "off" },
            self.record_every,
            self.precision,
            self.reverse_gradient,
        );
        let sha256 = hex::encode(Sha256::digest(summary.as_bytes()));
        ConfigDigest { summary, sha256 }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfigDigest {
    pub summary: String,
    pub sha256: String,
}
