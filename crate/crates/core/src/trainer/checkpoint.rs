//! Versioned JSON checkpoints.
//!
//! A checkpoint holds every piece of mutable training state: parameters,
//! all three velocity sets, the RNG positions of the dropout stream and both
//! batch streams, current target weights, predictions, history and the epoch
//! counter. Floats are written in shortest round-trip form and parsed exactly,
//! so a resumed run is bit-identical to an uninterrupted one.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::history::TrainHistory;
use super::run::{check_domains, Trainer, TrainedNets};
use super::{Method, TrainConfig};
use crate::data::BatchStreamState;
use crate::data::{BatchStream, FeatureDataset};
use crate::error::{Error, Result};
use crate::rng::{Rng, RngState};
use crate::tensor::Scalar;

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "F: Scalar")]
pub struct Checkpoint<F: Scalar> {
    pub format_version: u32,
    pub scalar: String,
    pub method: Method,
    pub config: TrainConfig,
    pub num_classes: usize,
    pub feature_dim: usize,
    pub n_source: usize,
    pub n_target: usize,
    pub epoch: usize,
    pub nets: TrainedNets<F>,
    pub source_stream: BatchStreamState,
    pub target_stream: BatchStreamState,
    pub dropout_rng: RngState,
    pub target_weights: Vec<f64>,
    pub predictions: Vec<usize>,
    pub history: TrainHistory,
    pub elapsed_seconds: f64,
}

impl<F: Scalar> Trainer<F> {
    pub fn checkpoint(&self) -> Checkpoint<F> {
        Checkpoint {
            format_version: CHECKPOINT_VERSION,
            scalar: F::NAME.to_string(),
            method: self.method,
            config: self.config.clone(),
            num_classes: self.num_classes,
            feature_dim: self.nets.classifier().input_width(),
            n_source: self.source_weights().len(),
            n_target: self.target_weights.len(),
            epoch: self.epoch,
            nets: self.nets.clone(),
            source_stream: self.source_stream.state(),
            target_stream: self.target_stream.state(),
            dropout_rng: self.dropout_rng.state(),
            target_weights: self.target_weights.clone(),
            predictions: self.predictions.clone(),
            history: self.history.clone(),
            elapsed_seconds: self.elapsed(),
        }
    }

    /// Continues a run from `checkpoint` on the same datasets.
    pub fn resume(
        checkpoint: Checkpoint<F>,
        source: &FeatureDataset,
        target: &FeatureDataset,
    ) -> Result<Self> {
        if checkpoint.scalar != F::NAME {
            return Err(Error::InvalidArgument(format!(
                "checkpoint stores {} parameters, trainer uses {}",
                checkpoint.scalar,
                F::NAME
            )));
        }
        let k = check_domains(source, target)?;
        if k != checkpoint.num_classes
            || source.dim() != checkpoint.feature_dim
            || source.len() != checkpoint.n_source
            || target.len() != checkpoint.n_target
        {
            return Err(Error::InvalidArgument(format!(
                "checkpoint was taken on {} source / {} target rows of dim {} with {} classes",
                checkpoint.n_source, checkpoint.n_target, checkpoint.feature_dim, checkpoint.num_classes
            )));
        }
        let config = checkpoint.config.clone();
        Trainer::with_state(checkpoint.method, source, target, &config, move |t| {
            t.nets = checkpoint.nets;
            t.source_stream = BatchStream::from_state(checkpoint.source_stream)?;
            t.target_stream = BatchStream::from_state(checkpoint.target_stream)?;
            t.dropout_rng = Rng::from_state(checkpoint.dropout_rng);
            t.target_weights = checkpoint.target_weights;
            t.predictions = checkpoint.predictions;
            t.history = checkpoint.history;
            t.epoch = checkpoint.epoch;
            t.elapsed_offset = checkpoint.elapsed_seconds;
            Ok(())
        })
    }
}

impl<F: Scalar> Checkpoint<F> {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string(self).map_err(|e| Error::Json {
            path: path.to_path_buf(),
            source: e,
        })?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let value: serde_json::Value = serde_json::from_str(&text).map_err(|e| Error::Json {
            path: path.to_path_buf(),
            source: e,
        })?;
        let found = value
            .get("format_version")
            .and_then(serde_json::Value::as_u64)
            .unwrap_or(0) as u32;
        if found != CHECKPOINT_VERSION {
            return Err(Error::SchemaVersion {
                path: path.to_path_buf(),
                expected: CHECKPOINT_VERSION,
                found,
            });
        }
        serde_json::from_str(&text).map_err(|e| Error::Json {
            path: path.to_path_buf(),
            source: e,
        })
    }
}
