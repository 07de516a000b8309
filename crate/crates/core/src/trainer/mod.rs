//! Alternating classifier/discriminator training with per-epoch target
//! weight refresh, and the classifier-only baseline.

mod checkpoint;
mod config;
mod history;
mod model;
mod run;

pub use checkpoint::{Checkpoint, CHECKPOINT_VERSION};
pub use config::{ConfigDigest, Method, Precision, TrainConfig, BASELINE_EPOCHS};
pub use history::{EpochRecord, TrainHistory};
pub use model::{
    build_classifier, build_discriminator, discriminator_accuracy, domain_accuracy_from_probs,
    label_gradients, label_step, recompute_target_weights, DomainGradients, LadModel,
    TargetWeights,
};
pub use run::{baseline_train, check_domains, lad_train, run_method, RunOutput, Trainer, TrainedNets};
