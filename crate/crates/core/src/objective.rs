//! Losses and class-frequency weights.
//!
//! Source instances are weighted by `max_y' c(y') / c(y)` where `c` are the
//! source class frequencies; target instances use the same rule over the
//! frequencies of their pseudo-labels (argmax of the classifier output).
//! After weighting every class carries the same total weight in each domain,
//! so the discriminator cannot separate domains by label proportions alone.
//!
//! Loss normalizers are per batch: the label loss divides by the batch size,
//! the domain loss averages the source rows and the target rows separately
//! and sums the two averages.

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor2};

/// Smallest probability fed to `ln`.
pub const LOG_CLAMP: f64 = 1e-12;

/// Domain id of a source row; also the discriminator output column for "source".
pub const SOURCE_DOMAIN: u8 = 1;
/// Domain id of a target row.
pub const TARGET_DOMAIN: u8 = 0;

#[inline]
fn neg_log<F: Scalar>(p: F) -> f64 {
    -p.as_f64().max(LOG_CLAMP).ln()
}

/// `(1/B) Σ_i w_i · (−ln probs[i, y_i])`, with probabilities clamped at [`LOG_CLAMP`].
pub fn cross_entropy<F: Scalar>(
    probs: &Tensor2<F>,
    labels: &[usize],
    instance_weights: &[f64],
) -> Result<f64> {
    let b = probs.rows();
    if b == 0 {
        return Err(Error::InvalidArgument("cross-entropy of an empty batch".into()));
    }
    if labels.len() != b || instance_weights.len() != b {
        return Err(Error::InvalidArgument(format!(
            "cross-entropy: {b} rows, {} labels, {} weights",
            labels.len(),
            instance_weights.len()
        )));
    }
    let mut total = 0.0;
    for (i, (&y, &w)) in labels.iter().zip(instance_weights).enumerate() {
        check_label(y, probs.cols())?;
        total += w * neg_log(probs.get(i, y));
    }
    Ok(total / b as f64)
}

fn check_label(y: usize, k: usize) -> Result<()> {
    if y >= k {
        return Err(Error::InvalidArgument(format!(
            "label {y} out of range for {k} classes"
        )));
    }
    Ok(())
}

/// Per-class weights `max_y' count(y') / count(y)`.
///
/// Classes that never occur get weight 0 and are listed in `empty_classes`.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassWeightTable {
    pub weights: Vec<f64>,
    pub counts: Vec<usize>,
    pub empty_classes: Vec<usize>,
}

impl ClassWeightTable {
    pub fn num_classes(&self) -> usize {
        self.weights.len()
    }

    pub fn weight(&self, class: usize) -> f64 {
        self.weights[class]
    }

    /// Looks up the weight of every label.
    pub fn per_instance(&self, labels: &[usize]) -> Vec<f64> {
        labels.iter().map(|&y| self.weights[y]).collect()
    }

    fn from_labels(labels: &[usize], k: usize, what: &str) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::InvalidArgument(format!(
                "cannot compute {what} class weights from an empty label set"
            )));
        }
        let mut counts = vec![0usize; k];
        for &y in labels {
            check_label(y, k)?;
            counts[y] += 1;
        }
        let max = *counts.iter().max().expect("labels nonempty implies k > 0");
        let weights = counts
            .iter()
            .map(|&c| if c == 0 { 0.0 } else { max as f64 / c as f64 })
            .collect();
        let empty_classes: Vec<usize> = (0..k).filter(|&y| counts[y] == 0).collect();
        if !empty_classes.is_empty() {
            log::warn!("{what} class weights: classes {empty_classes:?} have no instances, weight set to 0");
        }
        Ok(Self {
            weights,
            counts,
            empty_classes,
        })
    }

    /// Every class weighted 1.
    pub fn uniform(k: usize) -> Self {
        Self {
            weights: vec![1.0; k],
            counts: Vec::new(),
            empty_classes: Vec::new(),
        }
    }
}

/// Source weights from the true source labels.
pub fn source_class_weights(labels: &[usize], k: usize) -> Result<ClassWeightTable> {
    ClassWeightTable::from_labels(labels, k, "source")
}

/// Target weights from pseudo-label counts.
pub fn target_class_weights(pseudo: &[usize], k: usize) -> Result<ClassWeightTable> {
    ClassWeightTable::from_labels(pseudo, k, "target")
}

/// Row-wise argmax; ties go to the lowest class index.
pub fn pseudo_labels<F: Scalar>(probs: &Tensor2<F>) -> Vec<usize> {
    probs
        .iter_rows()
        .map(|row| {
            let mut best = 0;
            for (j, v) in row.iter().enumerate().skip(1) {
                if *v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

/// Labeled source rows with their class weights.
#[derive(Debug, Clone)]
pub struct LabeledBatch<F = f64> {
    pub features: Tensor2<F>,
    pub labels: Vec<usize>,
    pub instance_weights: Vec<f64>,
}

impl<F: Scalar> LabeledBatch<F> {
    pub fn new(features: Tensor2<F>, labels: Vec<usize>, instance_weights: Vec<f64>) -> Result<Self> {
        let n = features.rows();
        if labels.len() != n || instance_weights.len() != n {
            return Err(Error::InvalidArgument(format!(
                "labeled batch: {n} rows, {} labels, {} weights",
                labels.len(),
                instance_weights.len()
            )));
        }
        if let Some(w) = instance_weights.iter().find(|w| !(**w > 0.0 && w.is_finite())) {
            return Err(Error::InvalidArgument(format!(
                "instance weights must be positive and finite, got {w}"
            )));
        }
        Ok(Self {
            features,
            labels,
            instance_weights,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Rows from both domains with their domain ids and instance weights.
#[derive(Debug, Clone)]
pub struct DomainBatch<F = f64> {
    pub features: Tensor2<F>,
    pub domain_ids: Vec<u8>,
    pub instance_weights: Vec<f64>,
}

impl<F: Scalar> DomainBatch<F> {
    pub fn new(features: Tensor2<F>, domain_ids: Vec<u8>, instance_weights: Vec<f64>) -> Result<Self> {
        let n = features.rows();
        if domain_ids.len() != n || instance_weights.len() != n {
            return Err(Error::InvalidArgument(format!(
                "domain batch: {n} rows, {} domain ids, {} weights",
                domain_ids.len(),
                instance_weights.len()
            )));
        }
        if let Some(d) = domain_ids.iter().find(|d| **d > 1) {
            return Err(Error::InvalidArgument(format!("domain id {d} is not 0 or 1")));
        }
        Ok(Self {
            features,
            domain_ids,
            instance_weights,
        })
    }

    /// Source rows followed by target rows.
    pub fn concat(
        source: &Tensor2<F>,
        source_weights: &[f64],
        target: &Tensor2<F>,
        target_weights: &[f64],
    ) -> Result<Self> {
        let features = source.vstack(target)?;
        let mut ids = vec![SOURCE_DOMAIN; source.rows()];
        ids.resize(source.rows() + target.rows(), TARGET_DOMAIN);
        let weights = source_weights.iter().chain(target_weights).copied().collect();
        Self::new(features, ids, weights)
    }

    fn domain_counts(&self) -> Result<(usize, usize)> {
        let n_source = self.domain_ids.iter().filter(|d| **d == SOURCE_DOMAIN).count();
        let n_target = self.domain_ids.len() - n_source;
        if n_source == 0 || n_target == 0 {
            return Err(Error::InvalidArgument(format!(
                "domain batch needs rows from both domains, got {n_source} source and {n_target} target"
            )));
        }
        Ok((n_source, n_target))
    }
}

/// Batch estimate of the weighted source label loss.
pub fn weighted_label_loss<F: Scalar>(probs: &Tensor2<F>, batch: &LabeledBatch<F>) -> Result<f64> {
    cross_entropy(probs, &batch.labels, &batch.instance_weights)
}

/// `∂ weighted_label_loss / ∂ logits = w_i (p_i − onehot(y_i)) / B`.
pub fn weighted_label_loss_grad<F: Scalar>(
    probs: &Tensor2<F>,
    batch: &LabeledBatch<F>,
) -> Result<Tensor2<F>> {
    let b = probs.rows();
    if b != batch.len() || b == 0 {
        return Err(Error::InvalidArgument(format!(
            "label loss gradient: {b} probability rows for a batch of {}",
            batch.len()
        )));
    }
    onehot_residual(probs, &batch.labels, |i| batch.instance_weights[i] / b as f64)
}

/// Weighted domain loss: mean of `w·ℓ(D(C(x)), 1)` over source rows plus mean
/// of `w·ℓ(D(C(x)), 0)` over target rows.
pub fn weighted_domain_loss<F: Scalar>(probs: &Tensor2<F>, batch: &DomainBatch<F>) -> Result<f64> {
    check_domain_probs(probs, batch)?;
    let (n_source, n_target) = batch.domain_counts()?;
    let (mut source, mut target) = (0.0, 0.0);
    for (i, (&d, &w)) in batch.domain_ids.iter().zip(&batch.instance_weights).enumerate() {
        let l = w * neg_log(probs.get(i, d as usize));
        if d == SOURCE_DOMAIN {
            source += l;
        } else {
            target += l;
        }
    }
    Ok(source / n_source as f64 + target / n_target as f64)
}

/// `∂ weighted_domain_loss / ∂ logits = w_i (p_i − onehot(d_i)) / n_{d_i}`.
pub fn weighted_domain_loss_grad<F: Scalar>(
    probs: &Tensor2<F>,
    batch: &DomainBatch<F>,
) -> Result<Tensor2<F>> {
    check_domain_probs(probs, batch)?;
    let (n_source, n_target) = batch.domain_counts()?;
    let ids: Vec<usize> = batch.domain_ids.iter().map(|d| *d as usize).collect();
    onehot_residual(probs, &ids, |i| {
        let n = if batch.domain_ids[i] == SOURCE_DOMAIN {
            n_source
        } else {
            n_target
        };
        batch.instance_weights[i] / n as f64
    })
}

fn check_domain_probs<F: Scalar>(probs: &Tensor2<F>, batch: &DomainBatch<F>) -> Result<()> {
    if probs.cols() != 2 || probs.rows() != batch.domain_ids.len() {
        return Err(Error::InvalidArgument(format!(
            "domain loss expects {}x2 probabilities, got {:?}",
            batch.domain_ids.len(),
            probs.shape()
        )));
    }
    Ok(())
}

fn onehot_residual<F: Scalar>(
    probs: &Tensor2<F>,
    targets: &[usize],
    scale: impl Fn(usize) -> f64,
) -> Result<Tensor2<F>> {
    let mut g = probs.clone();
    for (i, &y) in targets.iter().enumerate() {
        check_label(y, probs.cols())?;
        let s = F::from_f64_lossy(scale(i));
        let row = g.row_mut(i);
        row[y] = row[y] - F::one();
        for v in row.iter_mut() {
            *v = *v * s;
        }
    }
    Ok(g)
}
