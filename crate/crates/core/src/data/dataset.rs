use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::tensor::Tensor2;

/// Feature vectors with optional class labels and row ids.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureDataset {
    pub name: String,
    pub features: Tensor2<f64>,
    pub labels: Option<Vec<usize>>,
    /// Number of classes; 0 when unknown (unlabeled data without metadata).
    pub num_classes: usize,
    pub ids: Option<Vec<String>>,
}

impl FeatureDataset {
    /// Validates labels against `num_classes` and rejects non-finite features.
    pub fn new(
        name: impl Into<String>,
        features: Tensor2<f64>,
        labels: Option<Vec<usize>>,
        num_classes: usize,
        ids: Option<Vec<String>>,
    ) -> Result<Self> {
        let ds = Self {
            name: name.into(),
            features,
            labels,
            num_classes,
            ids,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.len();
        if let Some(labels) = &self.labels {
            if labels.len() != n {
                return Err(Error::Data(format!(
                    "{}: {} labels for {n} rows",
                    self.name,
                    labels.len()
                )));
            }
            if let Some(&bad) = labels.iter().find(|&&y| y >= self.num_classes) {
                return Err(Error::Data(format!(
                    "{}: label {bad} out of range for {} classes",
                    self.name, self.num_classes
                )));
            }
        }
        if let Some(ids) = &self.ids {
            if ids.len() != n {
                return Err(Error::Data(format!("{}: {} ids for {n} rows", self.name, ids.len())));
            }
        }
        if let Some(pos) = self.features.data().iter().position(|v| !v.is_finite()) {
            let d = self.dim().max(1);
            return Err(Error::Data(format!(
                "{}: non-finite feature at row {}, column {}",
                self.name,
                pos / d,
                pos % d
            )));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.features.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    pub fn is_labeled(&self) -> bool {
        self.labels.is_some()
    }

    /// Same rows with labels hidden.
    pub fn without_labels(&self) -> Self {
        Self {
            labels: None,
            ..self.clone()
        }
    }

    /// Attaches labels given as `(id, label)` pairs; every row must be covered.
    pub fn with_labels_from(&self, pairs: &[(String, usize)]) -> Result<Self> {
        let by_id: HashMap<&str, usize> = pairs.iter().map(|(id, y)| (id.as_str(), *y)).collect();
        let labels = (0..self.len())
            .map(|r| {
                let id = self.id(r);
                by_id
                    .get(id.as_str())
                    .copied()
                    .ok_or_else(|| Error::Data(format!("{}: no label for row id `{id}`", self.name)))
            })
            .collect::<Result<Vec<_>>>()?;
        let k = labels.iter().max().map_or(0, |m| m + 1).max(self.num_classes);
        Self::new(self.name.clone(), self.features.clone(), Some(labels), k, self.ids.clone())
    }

    /// Row id, falling back to the row index.
    pub fn id(&self, row: usize) -> String {
        match &self.ids {
            Some(ids) => ids[row].clone(),
            None => row.to_string(),
        }
    }

    /// Per-class instance counts (requires labels).
    pub fn class_counts(&self) -> Option<Vec<usize>> {
        let labels = self.labels.as_ref()?;
        let mut counts = vec![0; self.num_classes];
        for &y in labels {
            counts[y] += 1;
        }
        Some(counts)
    }
}
