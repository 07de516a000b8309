//! Label alignment for unsupervised domain adaptation on pre-extracted
//! deep features.
//!
//! A label classifier is trained on labeled source features while a domain
//! discriminator, fed the classifier's softmax output through a gradient
//! reversal layer, tries to tell source from target. Class-frequency weights
//! (pseudo-label based on the target side) keep label-proportion differences
//! from leaking into the discriminator.

pub mod data;
pub mod error;
pub mod nn;
pub mod objective;
pub mod report;
pub mod rng;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
pub use rng::Rng;
pub use tensor::{Scalar, Tensor2};
