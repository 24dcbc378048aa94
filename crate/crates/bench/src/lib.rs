//! Fixtures shared by the benchmarks.

use unlearn_core::data::{gen_train_test, BlobSpec};
use unlearn_core::{LabeledDataset, Model, ModelKind, RngStream};

/// Blob dataset of `classes * per_class` rows in `dim` dimensions.
pub fn blobs(classes: usize, per_class: usize, dim: usize, seed: u64) -> LabeledDataset {
    let spec = BlobSpec {
        classes,
        per_class,
        dim,
        ..BlobSpec::default()
    };
    gen_train_test(&spec, 1, seed).expect("valid blob spec").0
}

pub fn model(kind: ModelKind, dim: usize, classes: usize, seed: u64) -> Model {
    Model::init(kind, dim, classes, 1e-3, &mut RngStream::new(seed, 0).rng()).expect("valid model")
}
