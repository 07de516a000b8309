//! The training loop.
//!
//! One epoch is one pass over the shuffled source set. For every source batch
//! a target batch is drawn from a cycling stream, then:
//!
//! 1. the classifier takes one SGD step on the weighted label loss;
//! 2. source and target rows are concatenated (source first) and the
//!    discriminator takes one SGD step on the weighted domain loss, while the
//!    classifier takes one step on the reversed gradient of the same loss.
//!
//! Target weights are 1 during the first epoch. At the end of every epoch the
//! full target set is labeled in Eval mode and the weights are recomputed from
//! the pseudo-label frequencies. Training always runs the configured number
//! of epochs and returns the final epoch's predictions.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::history::{EpochRecord, TrainHistory};
use super::model::{domain_accuracy_from_probs, label_step, target_weights_from_probs, LadModel};
use super::{build_classifier, discriminator_accuracy, Method, Precision, TrainConfig};
use crate::data::{BatchStream, FeatureDataset};
use crate::error::{Error, Result};
use crate::nn::{Mlp, Mode, OptimizerState};
use crate::objective::{cross_entropy, pseudo_labels, source_class_weights, DomainBatch, LabeledBatch};
use crate::rng::{purpose, Rng};
use crate::tensor::{Scalar, Tensor2};

/// Networks being trained.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "F: Scalar")]
pub enum TrainedNets<F: Scalar> {
    Lad(LadModel<F>),
    Baseline {
        classifier: Mlp<F>,
        opt: OptimizerState<F>,
    },
}

impl<F: Scalar> TrainedNets<F> {
    pub fn classifier(&self) -> &Mlp<F> {
        match self {
            TrainedNets::Lad(m) => &m.classifier,
            TrainedNets::Baseline { classifier, .. } => classifier,
        }
    }

    fn set_mode(&mut self, mode: Mode) {
        match self {
            TrainedNets::Lad(m) => m.set_mode(mode),
            TrainedNets::Baseline { classifier, .. } => classifier.set_mode(mode),
        }
    }
}

/// Resumable training state for one run.
pub struct Trainer<F: Scalar> {
    pub(super) method: Method,
    pub(super) config: TrainConfig,
    pub(super) num_classes: usize,
    pub(super) nets: TrainedNets<F>,
    source_x: Tensor2<F>,
    source_labels: Vec<usize>,
    source_weights: Vec<f64>,
    target_x: Tensor2<F>,
    target_labels: Option<Vec<usize>>,
    pub(super) target_weights: Vec<f64>,
    pub(super) source_stream: BatchStream,
    pub(super) target_stream: BatchStream,
    pub(super) dropout_rng: Rng,
    pub(super) epoch: usize,
    pub(super) history: TrainHistory,
    pub(super) predictions: Vec<usize>,
    pub(super) elapsed_offset: f64,
    clock: Instant,
}

/// Checks that the datasets can be trained on together and returns the class
/// count.
pub fn check_domains(source: &FeatureDataset, target: &FeatureDataset) -> Result<usize> {
    let Some(labels) = &source.labels else {
        return Err(Error::Data(format!("source `{}` has no labels", source.name)));
    };
    if source.is_empty() {
        return Err(Error::Data(format!("source `{}` is empty", source.name)));
    }
    if target.is_empty() {
        return Err(Error::Data(format!("target `{}` is empty", target.name)));
    }
    if source.dim() != target.dim() {
        return Err(Error::Data(format!(
            "feature dimensions differ: source {} vs target {}",
            source.dim(),
            target.dim()
        )));
    }
    let k = source.num_classes;
    if k == 0 || labels.iter().any(|&y| y >= k) {
        return Err(Error::Data(format!(
            "source `{}` declares {k} classes, inconsistent with its labels",
            source.name
        )));
    }
    if target.num_classes != 0 && target.num_classes != k {
        return Err(Error::Data(format!(
            "class count differs: source {k} vs target {}",
            target.num_classes
        )));
    }
    Ok(k)
}

impl<F: Scalar> Trainer<F> {
    /// Target labels, when present, are used for diagnostics only.
    pub fn new(
        method: Method,
        source: &FeatureDataset,
        target: &FeatureDataset,
        config: &TrainConfig,
    ) -> Result<Self> {
        config.validate()?;
        let k = check_domains(source, target)?;
        let seed = config.seed;
        let mut init_c = Rng::derive(seed, purpose::INIT_CLASSIFIER);
        let nets = match method {
            Method::Lad => {
                let mut init_d = Rng::derive(seed, purpose::INIT_DISCRIMINATOR);
                TrainedNets::Lad(LadModel::new(source.dim(), k, config, &mut init_c, &mut init_d)?)
            }
            Method::Baseline => {
                let classifier = build_classifier(source.dim(), k, config, &mut init_c)?;
                let opt = OptimizerState::new(&classifier, config.learning_rate, config.momentum);
                TrainedNets::Baseline { classifier, opt }
            }
        };
        let source_labels = source.labels.clone().expect("checked above");
        let source_weights = if config.use_class_weights {
            source_class_weights(&source_labels, k)?.per_instance(&source_labels)
        } else {
            vec![1.0; source.len()]
        };
        Ok(Self {
            method,
            config: config.clone(),
            num_classes: k,
            nets,
            source_x: source.features.cast(),
            source_labels,
            source_weights,
            target_x: target.features.cast(),
            target_labels: target.labels.clone(),
            target_weights: vec![1.0; target.len()],
            source_stream: BatchStream::for_dataset(
                source,
                config.batch_size,
                Rng::derive(seed, purpose::SHUFFLE_SOURCE),
                false,
            )?,
            target_stream: BatchStream::for_dataset(
                target,
                config.batch_size,
                Rng::derive(seed, purpose::SHUFFLE_TARGET),
                true,
            )?,
            dropout_rng: Rng::derive(seed, purpose::DROPOUT),
            epoch: 0,
            history: TrainHistory::default(),
            predictions: Vec::new(),
            elapsed_offset: 0.0,
            clock: Instant::now(),
        })
    }

    /// Rebuilds a trainer from saved state. The datasets must be the ones the
    /// checkpoint was taken with.
    pub(super) fn with_state(
        method: Method,
        source: &FeatureDataset,
        target: &FeatureDataset,
        config: &TrainConfig,
        restore: impl FnOnce(&mut Self) -> Result<()>,
    ) -> Result<Self> {
        let mut t = Self::new(method, source, target, config)?;
        restore(&mut t)?;
        t.clock = Instant::now();
        Ok(t)
    }

    pub fn method(&self) -> Method {
        self.method
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    /// Completed epochs.
    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn nets(&self) -> &TrainedNets<F> {
        &self.nets
    }

    pub fn history(&self) -> &TrainHistory {
        &self.history
    }

    /// Predicted target labels after the last completed epoch.
    pub fn predictions(&self) -> &[usize] {
        &self.predictions
    }

    /// Current per-instance target weights.
    pub fn target_weights(&self) -> &[f64] {
        &self.target_weights
    }

    pub fn source_weights(&self) -> &[f64] {
        &self.source_weights
    }

    pub(super) fn elapsed(&self) -> f64 {
        self.elapsed_offset + self.clock.elapsed().as_secs_f64()
    }

    /// Number of optimizer steps per epoch: `ceil(|S| / batch_size)`.
    pub fn steps_per_epoch(&self) -> usize {
        self.source_stream.batches_per_pass()
    }

    pub fn run_epoch(&mut self) -> Result<()> {
        if self.epoch > 0 {
            self.source_stream.restart();
            self.target_stream.restart();
        }
        self.nets.set_mode(Mode::Train);
        while let Some(idx) = self.source_stream.next_batch() {
            let batch = LabeledBatch::new(
                self.source_x.gather_rows(&idx),
                idx.iter().map(|&i| self.source_labels[i]).collect(),
                idx.iter().map(|&i| self.source_weights[i]).collect(),
            )?;
            match &mut self.nets {
                TrainedNets::Baseline { classifier, opt } => {
                    label_step(classifier, opt, &batch, &mut self.dropout_rng)?;
                }
                TrainedNets::Lad(model) => {
                    model.label_step(&batch, &mut self.dropout_rng)?;
                    let tidx = self
                        .target_stream
                        .next_batch()
                        .ok_or_else(|| Error::Invariant("target stream is empty".into()))?;
                    let tw: Vec<f64> = tidx.iter().map(|&i| self.target_weights[i]).collect();
                    let domain = DomainBatch::concat(
                        &batch.features,
                        &batch.instance_weights,
                        &self.target_x.gather_rows(&tidx),
                        &tw,
                    )?;
                    model.domain_step(&domain, &mut self.dropout_rng, self.config.reverse_gradient)?;
                }
            }
        }
        self.epoch += 1;
        self.end_of_epoch()
    }

    fn end_of_epoch(&mut self) -> Result<()> {
        self.nets.set_mode(Mode::Eval);
        let target_probs = self.nets.classifier().predict(&self.target_x)?;
        if !target_probs.is_finite() {
            return Err(Error::Invariant(format!(
                "non-finite classifier output after epoch {}",
                self.epoch
            )));
        }
        if matches!(self.nets, TrainedNets::Lad(_)) && self.config.use_class_weights {
            let tw = target_weights_from_probs(&target_probs, self.num_classes)?;
            self.predictions = tw.pseudo_labels;
            self.target_weights = tw.per_instance;
        } else {
            self.predictions = pseudo_labels(&target_probs);
        }
        if self.epoch.is_multiple_of(self.config.record_every) || self.epoch == self.config.n_epochs {
            self.record(&target_probs)?;
        }
        Ok(())
    }

    fn record(&mut self, target_probs: &Tensor2<F>) -> Result<()> {
        let source_probs = self.nets.classifier().predict(&self.source_x)?;
        let ones = vec![1.0; self.source_labels.len()];
        let source_class_loss = cross_entropy(&source_probs, &self.source_labels, &ones)?;
        let (target_class_loss, target_accuracy) = match &self.target_labels {
            Some(labels) => {
                let ones = vec![1.0; labels.len()];
                let loss = cross_entropy(target_probs, labels, &ones)?;
                let correct = labels
                    .iter()
                    .zip(&self.predictions)
                    .filter(|(a, b)| a == b)
                    .count();
                (Some(loss), Some(correct as f64 / labels.len() as f64))
            }
            None => (None, None),
        };
        let discriminator_accuracy = match &self.nets {
            TrainedNets::Lad(m) => Some(domain_accuracy_from_probs(
                &m.discriminator,
                &source_probs,
                target_probs,
            )?),
            TrainedNets::Baseline { .. } => None,
        };
        let record = EpochRecord {
            epoch: self.epoch,
            source_class_loss,
            target_class_loss,
            target_accuracy,
            discriminator_accuracy,
            wallclock_seconds: self.elapsed(),
        };
        log::debug!("{record:?}");
        self.history.push(record)
    }

    /// Runs the remaining epochs.
    pub fn run_to_end(&mut self) -> Result<()> {
        while self.epoch < self.config.n_epochs {
            self.run_epoch()?;
        }
        Ok(())
    }

    /// Eval-mode discriminator accuracy on the full domains (LAD only).
    pub fn discriminator_accuracy(&self) -> Result<Option<f64>> {
        match &self.nets {
            TrainedNets::Lad(m) => {
                let mut m = m.clone();
                m.set_mode(Mode::Eval);
                discriminator_accuracy(&m, &self.source_x, &self.target_x).map(Some)
            }
            TrainedNets::Baseline { .. } => Ok(None),
        }
    }

    pub fn into_parts(self) -> (TrainedNets<F>, TrainHistory, Vec<usize>) {
        (self.nets, self.history, self.predictions)
    }
}

/// Trains LAD for `config.n_epochs` epochs; returns the model, its history
/// and the final predicted target labels.
pub fn lad_train<F: Scalar>(
    source: &FeatureDataset,
    target: &FeatureDataset,
    config: &TrainConfig,
) -> Result<(LadModel<F>, TrainHistory, Vec<usize>)> {
    let mut t = Trainer::<F>::new(Method::Lad, source, target, config)?;
    t.run_to_end()?;
    match t.into_parts() {
        (TrainedNets::Lad(model), history, predictions) => Ok((model, history, predictions)),
        _ => unreachable!("LAD trainer holds LAD networks"),
    }
}

/// Trains the classifier alone on the weighted source loss.
pub fn baseline_train<F: Scalar>(
    source: &FeatureDataset,
    target: &FeatureDataset,
    config: &TrainConfig,
) -> Result<(Mlp<F>, TrainHistory, Vec<usize>)> {
    let mut t = Trainer::<F>::new(Method::Baseline, source, target, config)?;
    t.run_to_end()?;
    match t.into_parts() {
        (TrainedNets::Baseline { classifier, .. }, history, predictions) => {
            Ok((classifier, history, predictions))
        }
        _ => unreachable!("baseline trainer holds a classifier"),
    }
}

/// Precision-independent outcome of a run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub predictions: Vec<usize>,
    pub history: TrainHistory,
    pub discriminator_accuracy: Option<f64>,
    pub runtime_seconds: f64,
}

fn run_typed<F: Scalar>(
    method: Method,
    source: &FeatureDataset,
    target: &FeatureDataset,
    config: &TrainConfig,
) -> Result<RunOutput> {
    let start = Instant::now();
    let mut t = Trainer::<F>::new(method, source, target, config)?;
    t.run_to_end()?;
    let discriminator_accuracy = t.discriminator_accuracy()?;
    let (_, history, predictions) = t.into_parts();
    Ok(RunOutput {
        predictions,
        history,
        discriminator_accuracy,
        runtime_seconds: start.elapsed().as_secs_f64(),
    })
}

/// Trains with the float width selected by `config.precision`.
pub fn run_method(
    method: Method,
    source: &FeatureDataset,
    target: &FeatureDataset,
    config: &TrainConfig,
) -> Result<RunOutput> {
    match config.precision {
        Precision::F64 => run_typed::<f64>(method, source, target, config),
        Precision::F32 => run_typed::<f32>(method, source, target, config),
    }
}
