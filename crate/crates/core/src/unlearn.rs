//! Unlearning methods behind one entry point.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{ForgetSplit, LabeledDataset};
use crate::error::{Error, Result};
use crate::influence;
use crate::models::{self, Model, TrainConfig};
use crate::numcore::{self, streams, Matrix, RngStream};
use crate::smoothing::{self, SmoothedBatch, SmoothingPolicy};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "retrain")]
    Retrain,
    #[serde(rename = "ft")]
    FineTune,
    #[serde(rename = "ga")]
    GradientAscent,
    #[serde(rename = "rl")]
    RandomLabel,
    #[serde(rename = "iu")]
    Influence,
    #[serde(rename = "ugradsl")]
    UGradSL,
    #[serde(rename = "ugradsl+")]
    UGradSLPlus,
}

impl Method {
    pub const ALL: [Method; 7] = [
        Method::Retrain,
        Method::FineTune,
        Method::GradientAscent,
        Method::RandomLabel,
        Method::Influence,
        Method::UGradSL,
        Method::UGradSLPlus,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Method::Retrain => "retrain",
            Method::FineTune => "ft",
            Method::GradientAscent => "ga",
            Method::RandomLabel => "rl",
            Method::Influence => "iu",
            Method::UGradSL => "ugradsl",
            Method::UGradSLPlus => "ugradsl+",
        }
    }

    /// Human-readable label used in tables.
    pub fn label(&self) -> &'static str {
        match self {
            Method::Retrain => "Retrain",
            Method::FineTune => "FT",
            Method::GradientAscent => "GA",
            Method::RandomLabel => "RL",
            Method::Influence => "IU",
            Method::UGradSL => "UGradSL",
            Method::UGradSLPlus => "UGradSL+",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.trim().to_ascii_lowercase();
        Method::ALL
            .into_iter()
            .find(|m| m.name() == lower || m.label().to_ascii_lowercase() == lower)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown method '{s}'")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UnlearnConfig {
    pub method: Method,
    pub epochs: usize,
    pub lr: f64,
    /// Weight of the retain term in the mixed loss.
    pub p: f64,
    pub smoothing: SmoothingPolicy,
    pub batch_size: usize,
    pub seed: u64,
    /// Ridge added to the Hessian by influence unlearning.
    pub damping: f64,
}

impl UnlearnConfig {
    pub fn new(method: Method) -> Self {
        Self {
            method,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::InvalidParameter("batch_size must be >= 1".into()));
        }
        if self.lr < 0.0 || !self.lr.is_finite() {
            return Err(Error::InvalidParameter(format!("invalid learning rate {}", self.lr)));
        }
        if !(0.0..=1.0).contains(&self.p) {
            return Err(Error::InvalidParameter(format!("p must lie in [0, 1], got {}", self.p)));
        }
        if self.damping < 0.0 || !self.damping.is_finite() {
            return Err(Error::InvalidParameter(format!("damping must be >= 0, got {}", self.damping)));
        }
        self.smoothing.validate()
    }
}

impl Default for UnlearnConfig {
    fn default() -> Self {
        Self {
            method: Method::UGradSL,
            epochs: 10,
            lr: 0.01,
            p: 0.5,
            smoothing: SmoothingPolicy::Fixed { alpha: -1.0 },
            batch_size: 32,
            seed: 0,
            damping: 1e-3,
        }
    }
}

#[derive(Debug, Clone)]
pub struct UnlearnResult {
    pub model: Model,
    pub rte_seconds: f64,
    /// Mean step objective per epoch.
    pub history: Vec<f64>,
    /// Parameter updates performed; a deterministic cost measure.
    pub steps: usize,
}

/// Runs `cfg.method` against a trained model.
///
/// `retrain_cfg` is used only by [`Method::Retrain`].
pub fn unlearn(
    model: &Model,
    train: &LabeledDataset,
    split: &ForgetSplit,
    cfg: &UnlearnConfig,
    retrain_cfg: &TrainConfig,
) -> Result<UnlearnResult> {
    cfg.validate()?;
    split.require_both_sides()?;
    let retain = split.retain_set(train);
    if cfg.method == Method::Retrain {
        return retrain(model, &retain, retrain_cfg);
    }
    let forget = split.forget_set(train);
    match cfg.method {
        Method::Retrain => unreachable!(),
        Method::FineTune => finetune(model, &retain, cfg),
        Method::GradientAscent => gradient_ascent(model, &forget, cfg),
        Method::RandomLabel => random_label(model, &retain, &forget, cfg),
        Method::Influence => influence_unlearn(model, &retain, &forget, cfg.damping),
        Method::UGradSL => ugradsl(model, &retain, &forget, cfg),
        Method::UGradSLPlus => ugradsl_plus(model, &retain, &forget, cfg),
    }
}

fn timed<F>(f: F) -> Result<UnlearnResult>
where
    F: FnOnce() -> Result<(Model, Vec<f64>, usize)>,
{
    let start = Instant::now();
    let (model, history, steps) = f()?;
    Ok(UnlearnResult {
        model,
        rte_seconds: start.elapsed().as_secs_f64(),
        history,
        steps,
    })
}

fn require(ds: &LabeledDataset, what: &str) -> Result<()> {
    if ds.is_empty() {
        return Err(match what {
            "retain" => Error::EmptyRetain("retain set is empty".into()),
            _ => Error::EmptyForget("forget set is empty".into()),
        });
    }
    Ok(())
}

/// Fresh initialization trained on the retain set only.
pub fn retrain(template: &Model, retain: &LabeledDataset, cfg: &TrainConfig) -> Result<UnlearnResult> {
    require(retain, "retain")?;
    timed(|| {
        let mut rng = RngStream::new(cfg.seed, streams::RETRAIN).rng();
        let fresh = template.reinit(&mut rng)?;
        let (model, history) = models::sgd_train(&fresh, retain, cfg)?;
        let steps = cfg.epochs * retain.len().div_ceil(cfg.batch_size);
        Ok((model, history, steps))
    })
}

/// Shuffled mini-batch descent (or ascent) over one dataset.
fn epochs_over(
    model: &Model,
    ds: &LabeledDataset,
    targets: &Matrix,
    cfg: &UnlearnConfig,
    ascent: bool,
) -> Result<(Model, Vec<f64>, usize)> {
    let mut rng = RngStream::new(cfg.seed, streams::UNLEARN).rng();
    let mut current = model.clone();
    let mut order: Vec<usize> = (0..ds.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut steps = 0;
    let sign = if ascent { -1.0 } else { 1.0 };
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut batches = 0;
        for batch in order.chunks(cfg.batch_size) {
            let xb = ds.features().select_rows(batch);
            let yb = targets.select_rows(batch);
            total += sign * models::data_loss(&current, &xb, &yb)?.value + models::reg_loss(&current);
            let mut g: Vec<f64> = current.theta().iter().map(|t| current.l2() * t).collect();
            numcore::axpy(sign, &models::data_grad(&current, &xb, &yb)?, &mut g);
            models::sgd_step(&mut current, &g, cfg.lr)?;
            batches += 1;
            steps += 1;
        }
        history.push(total / batches as f64);
    }
    Ok((current, history, steps))
}

/// Continued descent on the retain set.
pub fn finetune(model: &Model, retain: &LabeledDataset, cfg: &UnlearnConfig) -> Result<UnlearnResult> {
    cfg.validate()?;
    require(retain, "retain")?;
    let targets = models::one_hot(retain.labels(), model.num_classes());
    timed(|| epochs_over(model, retain, &targets, cfg, false))
}

/// Ascent on the forget-set cross-entropy; the L2 term is still descended.
pub fn gradient_ascent(model: &Model, forget: &LabeledDataset, cfg: &UnlearnConfig) -> Result<UnlearnResult> {
    cfg.validate()?;
    require(forget, "forget")?;
    let targets = models::one_hot(forget.labels(), model.num_classes());
    timed(|| epochs_over(model, forget, &targets, cfg, true))
}

/// Uniformly drawn wrong label for every forget row.
pub fn random_relabel<R: Rng + ?Sized>(labels: &[usize], num_classes: usize, rng: &mut R) -> Result<Vec<usize>> {
    if num_classes < 2 {
        return Err(Error::InvalidParameter("relabeling needs at least 2 classes".into()));
    }
    Ok(labels
        .iter()
        .map(|&y| {
            let r = rng.random_range(0..num_classes - 1);
            if r >= y {
                r + 1
            } else {
                r
            }
        })
        .collect())
}

/// Descent on the retain set plus the forget set under random wrong labels.
pub fn random_label(
    model: &Model,
    retain: &LabeledDataset,
    forget: &LabeledDataset,
    cfg: &UnlearnConfig,
) -> Result<UnlearnResult> {
    cfg.validate()?;
    require(forget, "forget")?;
    let k = model.num_classes();
    timed(|| {
        let mut rng = RngStream::new(cfg.seed, streams::RELABEL).rng();
        let relabeled = random_relabel(forget.labels(), k, &mut rng)?;
        let mut rows: Vec<&[f64]> = retain.features().row_iter().collect();
        rows.extend(forget.features().row_iter());
        let x = Matrix::from_rows(&rows)?;
        let mut labels = retain.labels().to_vec();
        labels.extend(relabeled);
        let merged = LabeledDataset::new(x, labels, None, k)?;
        let targets = models::one_hot(merged.labels(), k);
        epochs_over(model, &merged, &targets, cfg, false)
    })
}

/// One closed-form Newton step that removes the forget set.
pub fn influence_unlearn(
    model: &Model,
    retain: &LabeledDataset,
    forget: &LabeledDataset,
    damping: f64,
) -> Result<UnlearnResult> {
    require(forget, "forget")?;
    require(retain, "retain")?;
    timed(|| {
        let lambda = model.l2() * (retain.len() + forget.len()) as f64;
        let delta = influence::delta_f(model, retain, forget, lambda, damping)?;
        let theta = numcore::add(model.theta(), &delta);
        Ok((model.with_theta(theta)?, Vec::new(), 1))
    })
}

/// Which set sets the pace of an epoch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Driver {
    Forget,
    Retain,
}

fn mixed_epochs(
    model: &Model,
    retain: &LabeledDataset,
    forget: &LabeledDataset,
    cfg: &UnlearnConfig,
    driver: Driver,
) -> Result<UnlearnResult> {
    cfg.validate()?;
    require(retain, "retain")?;
    require(forget, "forget")?;
    let k = model.num_classes();
    let retain_targets = models::one_hot(retain.labels(), k);
    timed(|| {
        let mut rng = RngStream::new(cfg.seed, streams::UNLEARN).rng();
        let mut current = model.clone();
        let (lead, other) = match driver {
            Driver::Forget => (forget, retain),
            Driver::Retain => (retain, forget),
        };
        let mut order: Vec<usize> = (0..lead.len()).collect();
        let mut history = Vec::with_capacity(cfg.epochs);
        let mut steps = 0;
        for _ in 0..cfg.epochs {
            order.shuffle(&mut rng);
            let mut total = 0.0;
            let mut batches = 0;
            for chunk in order.chunks(cfg.batch_size) {
                let paired: Vec<usize> = (0..chunk.len()).map(|_| rng.random_range(0..other.len())).collect();
                let (r_idx, f_idx) = match driver {
                    Driver::Forget => (paired.as_slice(), chunk),
                    Driver::Retain => (chunk, paired.as_slice()),
                };
                let rx = retain.features().select_rows(r_idx);
                let ry = retain_targets.select_rows(r_idx);
                let fx = forget.features().select_rows(f_idx);
                let fy: Vec<usize> = f_idx.iter().map(|&i| forget.labels()[i]).collect();
                let alphas = cfg.smoothing.rates(&rx, &fx)?;
                let batch = SmoothedBatch::new(fx, fy, alphas, k)?;
                total += smoothing::mixed_loss(&current, &rx, &ry, &batch, cfg.p)?;
                let g = smoothing::mixed_grad(&current, &rx, &ry, &batch, cfg.p)?;
                models::sgd_step(&mut current, &g, cfg.lr)?;
                batches += 1;
                steps += 1;
            }
            history.push(total / batches as f64);
        }
        Ok((current, history, steps))
    })
}

/// Mixed descent/ascent with the forget set driving each epoch.
pub fn ugradsl(
    model: &Model,
    retain: &LabeledDataset,
    forget: &LabeledDataset,
    cfg: &UnlearnConfig,
) -> Result<UnlearnResult> {
    mixed_epochs(model, retain, forget, cfg, Driver::Forget)
}

/// Mixed descent/ascent with the retain set driving each epoch.
pub fn ugradsl_plus(
    model: &Model,
    retain: &LabeledDataset,
    forget: &LabeledDataset,
    cfg: &UnlearnConfig,
) -> Result<UnlearnResult> {
    mixed_epochs(model, retain, forget, cfg, Driver::Retain)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn method_names_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.name().parse::<Method>().unwrap(), m);
            assert_eq!(m.label().parse::<Method>().unwrap(), m);
        }
        assert!("scrub".parse::<Method>().is_err());
    }

    #[test]
    fn binary_relabel_flips() {
        let mut rng = RngStream::new(3, 0).rng();
        let labels = vec![0, 1, 1, 0, 1];
        let out = random_relabel(&labels, 2, &mut rng).unwrap();
        assert_eq!(out, vec![1, 0, 0, 1, 0]);
    }

    #[test]
    fn relabel_never_keeps_label() {
        let mut rng = RngStream::new(9, 0).rng();
        let labels: Vec<usize> = (0..500).map(|i| i % 5).collect();
        let out = random_relabel(&labels, 5, &mut rng).unwrap();
        assert!(labels.iter().zip(&out).all(|(a, b)| a != b && *b < 5));
        let mut rng2 = RngStream::new(9, 0).rng();
        assert_eq!(random_relabel(&labels, 5, &mut rng2).unwrap(), out);
    }

    #[test]
    fn config_validation() {
        let mut c = UnlearnConfig::default();
        assert!(c.validate().is_ok());
        c.p = 1.5;
        assert!(c.validate().is_err());
        c = UnlearnConfig {
            batch_size: 0,
            ..Default::default()
        };
        assert!(c.validate().is_err());
        c = UnlearnConfig {
            damping: -1.0,
            ..Default::default()
        };
        assert!(c.validate().is_err());
    }
}
