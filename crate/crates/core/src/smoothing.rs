//! Generalized label smoothing (GLS) and the gradient-mixed unlearning loss.
//!
//! A GLS label with rate `alpha` is `(1 - alpha) * onehot(y) + alpha / K`.
//! Positive rates give ordinary (positive) smoothing, negative rates give
//! negative label smoothing whose off-target entries are below zero.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{self, Model};
use crate::numcore::{self, Matrix, Vector};

/// How forget-batch smoothing rates are chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum SmoothingPolicy {
    /// Same signed rate for every forget row; `alpha <= 1`.
    Fixed { alpha: f64 },
    /// Per-row rate from retain neighbours closer than `beta`.
    Adaptive { beta: f64 },
}

impl SmoothingPolicy {
    pub fn validate(&self) -> Result<()> {
        match *self {
            SmoothingPolicy::Fixed { alpha } if alpha > 1.0 || !alpha.is_finite() => Err(
                Error::InvalidParameter(format!("smoothing rate must be <= 1, got {alpha}")),
            ),
            SmoothingPolicy::Adaptive { beta } if !(0.0..=1.0).contains(&beta) => Err(
                Error::InvalidParameter(format!("distance threshold must lie in [0, 1], got {beta}")),
            ),
            _ => Ok(()),
        }
    }

    /// Smoothing rates for a forget batch paired with a retain batch.
    pub fn rates(&self, retain_x: &Matrix, forget_x: &Matrix) -> Result<Vec<f64>> {
        match *self {
            SmoothingPolicy::Fixed { alpha } => Ok(vec![alpha; forget_x.rows()]),
            SmoothingPolicy::Adaptive { beta } => adaptive_rates(retain_x, forget_x, beta),
        }
    }
}

impl std::fmt::Display for SmoothingPolicy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SmoothingPolicy::Fixed { alpha } => write!(f, "fixed:{alpha}"),
            SmoothingPolicy::Adaptive { beta } => write!(f, "adaptive:{beta}"),
        }
    }
}

/// `(1 - alpha) onehot(y) + alpha / K`.
pub fn gls_label(y: usize, num_classes: usize, alpha: f64) -> Vec<f64> {
    let off = alpha / num_classes as f64;
    let mut row = vec![off; num_classes];
    row[y] = 1.0 + (1.0 - num_classes as f64) * alpha / num_classes as f64;
    row
}

/// GLS loss of one example, assembled from per-label cross-entropies:
/// `(1 + (1-K) alpha / K) l(x, y) + (alpha / K) sum_{y' != y} l(x, y')`.
pub fn gls_loss(model: &Model, x: &[f64], y: usize, alpha: f64) -> Result<f64> {
    let k = model.num_classes();
    if y >= k {
        return Err(Error::InvalidParameter(format!("label {y} out of range for {k} classes")));
    }
    let row = Matrix::from_rows(&[x])?;
    let per_label = |label: usize| models::ce_loss(model, &row, &models::one_hot(&[label], k));
    let target_weight = 1.0 + (1.0 - k as f64) * alpha / k as f64;
    let mut total = target_weight * per_label(y)?;
    for other in (0..k).filter(|&c| c != y) {
        total += alpha / k as f64 * per_label(other)?;
    }
    Ok(total)
}

/// Forget rows with their smoothed targets.
#[derive(Debug, Clone, PartialEq)]
pub struct SmoothedBatch {
    pub features: Matrix,
    pub labels: Vec<usize>,
    pub alphas: Vec<f64>,
    pub soft_labels: Matrix,
}

impl SmoothedBatch {
    pub fn new(features: Matrix, labels: Vec<usize>, alphas: Vec<f64>, num_classes: usize) -> Result<Self> {
        if labels.len() != features.rows() || alphas.len() != features.rows() {
            return Err(Error::Dimension(format!(
                "{} rows, {} labels, {} rates",
                features.rows(),
                labels.len(),
                alphas.len()
            )));
        }
        let mut soft_labels = Matrix::zeros(labels.len(), num_classes);
        for (i, (&y, &a)) in labels.iter().zip(&alphas).enumerate() {
            if y >= num_classes {
                return Err(Error::InvalidParameter(format!("label {y} out of range")));
            }
            if a > 1.0 || !a.is_finite() {
                return Err(Error::InvalidParameter(format!("smoothing rate {a} must be <= 1")));
            }
            soft_labels.row_mut(i).copy_from_slice(&gls_label(y, num_classes, a));
        }
        Ok(Self {
            features,
            labels,
            alphas,
            soft_labels,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Scaled cosine distance `(1 - cos) / 2` between every retain and forget row.
///
/// Entry `(r, f)` compares retain row `r` with forget row `f`. Pairs that
/// involve a zero vector are assigned 0.5.
pub fn pairwise_distance(retain_x: &Matrix, forget_x: &Matrix) -> Result<Matrix> {
    if retain_x.cols() != forget_x.cols() {
        return Err(Error::Dimension(format!(
            "retain rows have {} features, forget rows {}",
            retain_x.cols(),
            forget_x.cols()
        )));
    }
    let r_norms: Vec<f64> = retain_x.row_iter().map(numcore::norm).collect();
    let f_norms: Vec<f64> = forget_x.row_iter().map(numcore::norm).collect();
    let mut d = Matrix::zeros(retain_x.rows(), forget_x.rows());
    for (r, rrow) in retain_x.row_iter().enumerate() {
        for (f, frow) in forget_x.row_iter().enumerate() {
            let denom = r_norms[r] * f_norms[f];
            d[(r, f)] = if denom == 0.0 {
                0.5
            } else {
                ((1.0 - numcore::dot(rrow, frow) / denom) / 2.0).clamp(0.0, 1.0)
            };
        }
    }
    Ok(d)
}

/// `alpha_i = count_i / batch`, the normalization used by the adaptive rule.
pub fn rates_from_counts(counts: &[usize], forget_batch: usize) -> Vec<f64> {
    counts
        .iter()
        .map(|&c| c as f64 / forget_batch as f64)
        .collect()
}

/// Adaptive per-row smoothing rates.
///
/// For forget row `i`, counts retain rows at distance strictly below `beta`
/// and divides by the forget batch size. Batches must have equal size.
pub fn adaptive_rates(retain_x: &Matrix, forget_x: &Matrix, beta: f64) -> Result<Vec<f64>> {
    if retain_x.rows() == 0 || forget_x.rows() == 0 {
        return Err(Error::EmptyDataset("adaptive rates need nonempty batches".into()));
    }
    if retain_x.rows() != forget_x.rows() {
        return Err(Error::Dimension(format!(
            "paired batches must have equal size, got {} retain and {} forget",
            retain_x.rows(),
            forget_x.rows()
        )));
    }
    let d = pairwise_distance(retain_x, forget_x)?;
    let counts: Vec<usize> = (0..forget_x.rows())
        .map(|f| (0..retain_x.rows()).filter(|&r| d[(r, f)] < beta).count())
        .collect();
    Ok(rates_from_counts(&counts, forget_x.rows()))
}

/// `p * L_data(retain) - (1 - p) * L_data(forget, smoothed) + l2/2 |theta|^2`.
///
/// The retain and forget terms are batch means of cross-entropy; the L2
/// penalty is always descended, so `p = 1` reproduces the fine-tune loss.
pub fn mixed_loss(
    model: &Model,
    retain_x: &Matrix,
    retain_targets: &Matrix,
    forget: &SmoothedBatch,
    p: f64,
) -> Result<f64> {
    check_p(p)?;
    let mut total = models::reg_loss(model);
    if p != 0.0 {
        total += p * models::data_loss(model, retain_x, retain_targets)?.value;
    }
    if p != 1.0 {
        total -= (1.0 - p) * models::data_loss(model, &forget.features, &forget.soft_labels)?.value;
    }
    Ok(total)
}

/// Gradient of [`mixed_loss`].
pub fn mixed_grad(
    model: &Model,
    retain_x: &Matrix,
    retain_targets: &Matrix,
    forget: &SmoothedBatch,
    p: f64,
) -> Result<Vector> {
    check_p(p)?;
    let mut g: Vector = model.theta().iter().map(|t| model.l2() * t).collect();
    if p != 0.0 {
        numcore::axpy(p, &models::data_grad(model, retain_x, retain_targets)?, &mut g);
    }
    if p != 1.0 {
        numcore::axpy(
            -(1.0 - p),
            &models::data_grad(model, &forget.features, &forget.soft_labels)?,
            &mut g,
        );
    }
    Ok(g)
}

fn check_p(p: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::InvalidParameter(format!("mixing ratio p must lie in [0, 1], got {p}")));
    }
    Ok(())
}
