use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Metrics of one recorded epoch. Target metrics need held-out target labels;
/// the discriminator accuracy only exists for adversarial runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub source_class_loss: f64,
    pub target_class_loss: Option<f64>,
    pub target_accuracy: Option<f64>,
    pub discriminator_accuracy: Option<f64>,
    pub wallclock_seconds: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub records: Vec<EpochRecord>,
}

impl TrainHistory {
    pub fn push(&mut self, record: EpochRecord) -> Result<()> {
        if let Some(last) = self.records.last() {
            if record.epoch <= last.epoch {
                return Err(Error::Invariant(format!(
                    "history epoch {} recorded after epoch {}",
                    record.epoch, last.epoch
                )));
            }
        }
        self.records.push(record);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn last(&self) -> Option<&EpochRecord> {
        self.records.last()
    }

    /// Compares every metric except wall-clock time.
    pub fn same_metrics(&self, other: &Self) -> bool {
        self.records.len() == other.records.len()
            && self.records.iter().zip(&other.records).all(|(a, b)| {
                a.epoch == b.epoch
                    && a.source_class_loss.to_bits() == b.source_class_loss.to_bits()
                    && a.target_class_loss.map(f64::to_bits) == b.target_class_loss.map(f64::to_bits)
                    && a.target_accuracy.map(f64::to_bits) == b.target_accuracy.map(f64::to_bits)
                    && a.discriminator_accuracy.map(f64::to_bits)
                        == b.discriminator_accuracy.map(f64::to_bits)
            })
    }
}
