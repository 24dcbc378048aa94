#![allow(dead_code)]

use unlearn_core::data::{self, BlobSpec, ForgetSplit, LabeledDataset, Paradigm};
use unlearn_core::metrics::{self, EvalSets};
use unlearn_core::models::{self, Model, ModelKind, TrainConfig};
use unlearn_core::numcore::{streams, Matrix, RngStream};

pub struct Toy {
    pub train: LabeledDataset,
    pub split: ForgetSplit,
    pub original: Model,
    pub train_cfg: TrainConfig,
    pub sets: EvalSets,
}

impl Toy {
    pub fn retain(&self) -> &LabeledDataset {
        &self.sets.retain
    }

    pub fn forget(&self) -> &LabeledDataset {
        &self.sets.forget
    }
}

pub fn toy_spec() -> BlobSpec {
    BlobSpec {
        classes: 3,
        per_class: 100,
        dim: 10,
        center_offset: 8.0,
        ..BlobSpec::default()
    }
}

/// Three classes in two dimensions with visible overlap.
pub fn overlap_spec() -> BlobSpec {
    BlobSpec {
        classes: 3,
        per_class: 100,
        dim: 2,
        spread: 2.0,
        ..BlobSpec::default()
    }
}

/// Trained logistic model on 3-class blobs plus the chosen split.
pub fn toy(seed: u64, paradigm: Paradigm) -> Toy {
    toy_with(&toy_spec(), seed, paradigm)
}

pub fn toy_with(spec: &BlobSpec, seed: u64, paradigm: Paradigm) -> Toy {
    let (train, test) = data::gen_train_test(spec, 100, seed).unwrap();
    let train_cfg = TrainConfig {
        seed,
        ..TrainConfig::default()
    };
    let init = Model::init(ModelKind::Logistic, spec.dim, spec.classes, 1e-2, &mut RngStream::new(seed, streams::TRAIN).rng()).unwrap();
    let (original, _) = models::sgd_train(&init, &train, &train_cfg).unwrap();
    let (split, test) = data::apply_paradigm(&train, &test, &paradigm, &mut RngStream::new(seed, streams::SPLIT).rng()).unwrap();
    let retain = split.retain_set(&train);
    let member_idx = metrics::member_sample(retain.len(), &mut RngStream::new(seed, streams::MEMBER_SAMPLE).rng());
    let sets = EvalSets {
        forget: split.forget_set(&train),
        member_sample: retain.subset(&member_idx),
        retain,
        test,
    };
    Toy {
        train,
        split,
        original,
        train_cfg,
        sets,
    }
}

/// Two well-separated clusters at (-3, -3) and (3, 3).
pub fn separable(per_class: usize, seed: u64) -> LabeledDataset {
    use rand::Rng;
    let mut rng = RngStream::new(seed, 0).rng();
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for class in 0..2 {
        let c = if class == 0 { -3.0 } else { 3.0 };
        for _ in 0..per_class {
            rows.push([c + rng.random_range(-1.0..1.0), c + rng.random_range(-1.0..1.0)]);
            labels.push(class);
        }
    }
    LabeledDataset::new(Matrix::from_rows(&rows).unwrap(), labels, None, 2).unwrap()
}
