//! Feature datasets, CSV ingestion, synthetic domain shifts and batching.

mod batches;
mod csv_io;
mod dataset;
mod synth;

pub use batches::{BatchStream, BatchStreamState};
pub use csv_io::{load_features, load_labels, save_features, save_labels};
pub use dataset::FeatureDataset;
pub use synth::{synth_gaussian_shift, SyntheticSpec};
