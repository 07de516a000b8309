//! The label classifier, the domain discriminator and their update steps.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{
    backward_with, forward, grl_backward, grl_forward, Activation, GradientAt, Gradients, Mlp,
    Mode, OptimizerState,
};
use crate::objective::{
    pseudo_labels, target_class_weights, weighted_domain_loss, weighted_domain_loss_grad,
    weighted_label_loss, weighted_label_loss_grad, ClassWeightTable, DomainBatch, LabeledBatch,
    SOURCE_DOMAIN, TARGET_DOMAIN,
};
use crate::rng::Rng;
use crate::tensor::{Scalar, Tensor2};
use crate::trainer::TrainConfig;

/// `feat_dim → hidden → hidden → classes`, ReLU and dropout on both hidden
/// layers, softmax output.
pub fn build_classifier<F: Scalar>(
    feat_dim: usize,
    num_classes: usize,
    config: &TrainConfig,
    rng: &mut Rng,
) -> Result<Mlp<F>> {
    let h = config.hidden_width;
    Mlp::with_widths(
        &[feat_dim, h, h, num_classes],
        config.dropout_rate,
        Activation::Softmax,
        rng,
    )
}

/// `classes → hidden → hidden → 2`, ReLU, no dropout, softmax over
/// {target, source}.
pub fn build_discriminator<F: Scalar>(
    num_classes: usize,
    config: &TrainConfig,
    rng: &mut Rng,
) -> Result<Mlp<F>> {
    let h = config.hidden_width;
    Mlp::with_widths(&[num_classes, h, h, 2], 0.0, Activation::Softmax, rng)
}

/// Label-loss value and classifier gradients for one source batch.
pub fn label_gradients<F: Scalar>(
    classifier: &Mlp<F>,
    batch: &LabeledBatch<F>,
    rng: &mut Rng,
) -> Result<(f64, Gradients<F>)> {
    let trace = forward(classifier, &batch.features, rng)?;
    let loss = weighted_label_loss(&trace.output, batch)?;
    let g = weighted_label_loss_grad(&trace.output, batch)?;
    let grads = backward_with(classifier, &trace, &g, GradientAt::Logits, false)?;
    Ok((loss, grads))
}

/// One SGD step of the classifier on the weighted label loss.
pub fn label_step<F: Scalar>(
    classifier: &mut Mlp<F>,
    opt: &mut OptimizerState<F>,
    batch: &LabeledBatch<F>,
    rng: &mut Rng,
) -> Result<f64> {
    let (loss, grads) = label_gradients(classifier, batch, rng)?;
    opt.step(classifier, &grads)?;
    Ok(loss)
}

/// Gradients of one adversarial step.
#[derive(Debug, Clone)]
pub struct DomainGradients<F> {
    pub loss: f64,
    /// Gradients for the classifier after the reversal layer, i.e. the
    /// negated gradient of the domain loss.
    pub classifier: Gradients<F>,
    pub discriminator: Gradients<F>,
}

/// Classifier and discriminator with one velocity set per update type.
///
/// The classifier's label-loss updates and its reversed domain-loss updates
/// keep separate momentum buffers, as two compiled models sharing the
/// classifier weights would.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "F: Scalar")]
pub struct LadModel<F = f64> {
    pub classifier: Mlp<F>,
    pub discriminator: Mlp<F>,
    pub classifier_opt: OptimizerState<F>,
    pub adversarial_opt: OptimizerState<F>,
    pub discriminator_opt: OptimizerState<F>,
}

impl<F: Scalar> LadModel<F> {
    pub fn new(
        feat_dim: usize,
        num_classes: usize,
        config: &TrainConfig,
        classifier_rng: &mut Rng,
        discriminator_rng: &mut Rng,
    ) -> Result<Self> {
        let classifier = build_classifier(feat_dim, num_classes, config, classifier_rng)?;
        let discriminator = build_discriminator(num_classes, config, discriminator_rng)?;
        Self::from_parts(classifier, discriminator, config.learning_rate, config.momentum)
    }

    pub fn from_parts(
        classifier: Mlp<F>,
        discriminator: Mlp<F>,
        learning_rate: f64,
        momentum: f64,
    ) -> Result<Self> {
        if discriminator.input_width() != classifier.output_width() {
            return Err(Error::shape(
                "discriminator",
                format!(
                    "input width {} does not match classifier output {}",
                    discriminator.input_width(),
                    classifier.output_width()
                ),
            ));
        }
        if discriminator.output_width() != 2 {
            return Err(Error::shape(
                "discriminator",
                format!("needs 2 outputs, has {}", discriminator.output_width()),
            ));
        }
        if discriminator.layers().iter().any(|l| l.dropout_rate != 0.0) {
            return Err(Error::InvalidArgument("the discriminator has no dropout".into()));
        }
        Ok(Self {
            classifier_opt: OptimizerState::new(&classifier, learning_rate, momentum),
            adversarial_opt: OptimizerState::new(&classifier, learning_rate, momentum),
            discriminator_opt: OptimizerState::new(&discriminator, learning_rate, momentum),
            classifier,
            discriminator,
        })
    }

    pub fn set_mode(&mut self, mode: Mode) {
        self.classifier.set_mode(mode);
        self.discriminator.set_mode(mode);
    }

    pub fn label_step(&mut self, batch: &LabeledBatch<F>, rng: &mut Rng) -> Result<f64> {
        label_step(&mut self.classifier, &mut self.classifier_opt, batch, rng)
    }

    /// Domain loss and gradients on `batch`, in the networks' current modes.
    /// The classifier gradient is only computed when `reverse` is set.
    pub fn domain_gradients(
        &self,
        batch: &DomainBatch<F>,
        rng: &mut Rng,
        reverse: bool,
    ) -> Result<DomainGradients<F>> {
        let c_trace = forward(&self.classifier, &batch.features, rng)?;
        let d_trace = forward(&self.discriminator, &grl_forward(&c_trace.output), rng)?;
        let loss = weighted_domain_loss(&d_trace.output, batch)?;
        let g = weighted_domain_loss_grad(&d_trace.output, batch)?;
        let discriminator = backward_with(&self.discriminator, &d_trace, &g, GradientAt::Logits, reverse)?;
        let classifier = match &discriminator.input {
            Some(g_probs) => {
                let reversed = grl_backward(g_probs);
                backward_with(&self.classifier, &c_trace, &reversed, GradientAt::Output, false)?
            }
            None => Gradients::zeros_like(&self.classifier),
        };
        Ok(DomainGradients {
            loss,
            classifier,
            discriminator,
        })
    }

    /// One adversarial step: the discriminator descends the domain loss and,
    /// when `reverse` is set, the classifier descends its negation.
    pub fn domain_step(&mut self, batch: &DomainBatch<F>, rng: &mut Rng, reverse: bool) -> Result<f64> {
        let grads = self.domain_gradients(batch, rng, reverse)?;
        if reverse {
            self.adversarial_opt.step(&mut self.classifier, &grads.classifier)?;
        }
        self.discriminator_opt.step(&mut self.discriminator, &grads.discriminator)?;
        Ok(grads.loss)
    }

    /// Eval-mode class probabilities.
    pub fn predict(&self, x: &Tensor2<F>) -> Result<Tensor2<F>> {
        self.classifier.predict(x)
    }
}

/// Fraction of rows whose domain the discriminator gets right, given the
/// classifier outputs of both domains. Ties count as "target".
pub fn domain_accuracy_from_probs<F: Scalar>(
    discriminator: &Mlp<F>,
    source_probs: &Tensor2<F>,
    target_probs: &Tensor2<F>,
) -> Result<f64> {
    let total = source_probs.rows() + target_probs.rows();
    if total == 0 {
        return Ok(0.0);
    }
    let mut correct = 0;
    for (probs, domain) in [(source_probs, SOURCE_DOMAIN), (target_probs, TARGET_DOMAIN)] {
        if probs.rows() == 0 {
            continue;
        }
        let d = discriminator.predict(probs)?;
        correct += pseudo_labels(&d)
            .iter()
            .filter(|&&p| p == domain as usize)
            .count();
    }
    Ok(correct as f64 / total as f64)
}

/// Eval-mode accuracy of `D(C(x))` at telling source rows from target rows.
pub fn discriminator_accuracy<F: Scalar>(
    model: &LadModel<F>,
    source: &Tensor2<F>,
    target: &Tensor2<F>,
) -> Result<f64> {
    let ps = model.classifier.predict(source)?;
    let pt = model.classifier.predict(target)?;
    domain_accuracy_from_probs(&model.discriminator, &ps, &pt)
}

/// Target weights refreshed from the current classifier.
#[derive(Debug, Clone)]
pub struct TargetWeights {
    pub per_instance: Vec<f64>,
    pub pseudo_labels: Vec<usize>,
    pub table: ClassWeightTable,
}

/// Eval-mode sweep over the full target set, pseudo-labels, and the class
/// weights they imply, mapped back to each instance.
pub fn recompute_target_weights<F: Scalar>(
    classifier: &Mlp<F>,
    target: &Tensor2<F>,
) -> Result<TargetWeights> {
    let probs = classifier.predict(target)?;
    target_weights_from_probs(&probs, classifier.output_width())
}

pub(crate) fn target_weights_from_probs<F: Scalar>(
    probs: &Tensor2<F>,
    num_classes: usize,
) -> Result<TargetWeights> {
    let pseudo = pseudo_labels(probs);
    let table = target_class_weights(&pseudo, num_classes)?;
    Ok(TargetWeights {
        per_instance: table.per_instance(&pseudo),
        pseudo_labels: pseudo,
        table,
    })
}
