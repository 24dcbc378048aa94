//! Small differentiable classifiers with analytic derivatives.
//!
//! Two model families share one flat parameter vector:
//!
//! * `Logistic`: multinomial logistic regression, `z = W x + b`. Parameters
//!   are laid out as `W` (K x d, row-major) followed by `b` (K). Its exact
//!   Hessian is available through [`hessian`].
//! * `Mlp { hidden }`: one tanh hidden layer, laid out as `W1` (h x d), `b1`
//!   (h), `W2` (K x h), `b2` (K).
//!
//! Every loss here is a mean over rows of soft-label cross-entropy plus
//! `l2/2 * |theta|^2`. The `data_*` variants drop the regularizer.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::numcore::{self, log_sum_exp, norm, solve_damped, Matrix, RngStream, Vector};

/// Largest per-term negative log-likelihood; corresponds to `p = 1e-300`.
pub const NLL_CLAMP: f64 = 690.775_527_898_213_7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Logistic,
    Mlp { hidden: usize },
}

impl ModelKind {
    pub fn param_count(&self, input_dim: usize, classes: usize) -> usize {
        match *self {
            ModelKind::Logistic => classes * input_dim + classes,
            ModelKind::Mlp { hidden } => hidden * input_dim + hidden + classes * hidden + classes,
        }
    }
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ModelKind::Logistic => write!(f, "logistic"),
            ModelKind::Mlp { hidden } => write!(f, "mlp({hidden})"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Model {
    kind: ModelKind,
    theta: Vector,
    input_dim: usize,
    num_classes: usize,
    l2: f64,
}

impl Model {
    /// Model with all parameters zero.
    pub fn zeros(kind: ModelKind, input_dim: usize, num_classes: usize, l2: f64) -> Result<Self> {
        let n = kind.param_count(input_dim, num_classes);
        Self::from_parts(kind, input_dim, num_classes, l2, vec![0.0; n])
    }

    /// Fresh parameters. The convex logistic model starts at zero; MLP weights
    /// are N(0, 1/fan_in) with zero biases.
    pub fn init<R: Rng + ?Sized>(
        kind: ModelKind,
        input_dim: usize,
        num_classes: usize,
        l2: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let mut model = Self::zeros(kind, input_dim, num_classes, l2)?;
        let fill = |slice: &mut [f64], fan_in: usize, rng: &mut R| {
            let normal = Normal::new(0.0, 1.0 / (fan_in.max(1) as f64).sqrt()).expect("valid std");
            slice.iter_mut().for_each(|v| *v = normal.sample(rng));
        };
        let (d, k) = (input_dim, num_classes);
        match kind {
            ModelKind::Logistic => {}
            ModelKind::Mlp { hidden: h } => {
                fill(&mut model.theta[..h * d], d, rng);
                let w2 = h * d + h;
                fill(&mut model.theta[w2..w2 + k * h], h, rng);
            }
        }
        Ok(model)
    }

    pub fn from_parts(
        kind: ModelKind,
        input_dim: usize,
        num_classes: usize,
        l2: f64,
        theta: Vector,
    ) -> Result<Self> {
        if num_classes < 2 {
            return Err(Error::InvalidParameter(format!(
                "a classifier needs at least 2 classes, got {num_classes}"
            )));
        }
        if input_dim == 0 {
            return Err(Error::InvalidParameter("input dimension must be >= 1".into()));
        }
        if let ModelKind::Mlp { hidden: 0 } = kind {
            return Err(Error::InvalidParameter("hidden width must be >= 1".into()));
        }
        if l2 < 0.0 || !l2.is_finite() {
            return Err(Error::InvalidParameter(format!("l2 must be >= 0, got {l2}")));
        }
        let expected = kind.param_count(input_dim, num_classes);
        if theta.len() != expected {
            return Err(Error::Dimension(format!(
                "{kind} model with d={input_dim}, K={num_classes} needs {expected} parameters, got {}",
                theta.len()
            )));
        }
        if theta.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("model parameters".into()));
        }
        Ok(Self {
            kind,
            theta,
            input_dim,
            num_classes,
            l2,
        })
    }

    pub fn kind(&self) -> ModelKind {
        self.kind
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn l2(&self) -> f64 {
        self.l2
    }

    pub fn with_theta(&self, theta: Vector) -> Result<Self> {
        Self::from_parts(self.kind, self.input_dim, self.num_classes, self.l2, theta)
    }

    pub fn with_l2(&self, l2: f64) -> Result<Self> {
        Self::from_parts(self.kind, self.input_dim, self.num_classes, l2, self.theta.clone())
    }

    /// Fresh random parameters with the same architecture.
    pub fn reinit<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Self> {
        Self::init(self.kind, self.input_dim, self.num_classes, self.l2, rng)
    }

    fn check_input(&self, x: &Matrix) -> Result<()> {
        if x.cols() != self.input_dim {
            return Err(Error::Dimension(format!(
                "model expects {} features, input has {}",
                self.input_dim,
                x.cols()
            )));
        }
        Ok(())
    }

    pub fn logits(&self, x: &Matrix) -> Result<Matrix> {
        self.check_input(x)?;
        Ok(match self.kind {
            ModelKind::Logistic => self.logistic_logits(x),
            ModelKind::Mlp { .. } => self.mlp_forward(x).1,
        })
    }

    /// Class probabilities, one row per input row.
    pub fn forward(&self, x: &Matrix) -> Result<Matrix> {
        Ok(numcore::softmax_rows(&self.logits(x)?))
    }

    /// Arg-max class per row; ties go to the lowest class index.
    pub fn predict(&self, x: &Matrix) -> Result<Vec<usize>> {
        let logits = self.logits(x)?;
        Ok(logits.row_iter().map(argmax).collect())
    }

    fn logistic_logits(&self, x: &Matrix) -> Matrix {
        let (d, k) = (self.input_dim, self.num_classes);
        let (w, b) = self.theta.split_at(k * d);
        let mut z = Matrix::zeros(x.rows(), k);
        for (i, row) in x.row_iter().enumerate() {
            for c in 0..k {
                z[(i, c)] = b[c] + numcore::dot(&w[c * d..(c + 1) * d], row);
            }
        }
        z
    }

    /// Returns (hidden activations, logits).
    fn mlp_forward(&self, x: &Matrix) -> (Matrix, Matrix) {
        let ModelKind::Mlp { hidden: h } = self.kind else {
            unreachable!("mlp_forward on non-mlp model")
        };
        let (d, k) = (self.input_dim, self.num_classes);
        let (w1, rest) = self.theta.split_at(h * d);
        let (b1, rest) = rest.split_at(h);
        let (w2, b2) = rest.split_at(k * h);
        let mut act = Matrix::zeros(x.rows(), h);
        let mut z = Matrix::zeros(x.rows(), k);
        for (i, row) in x.row_iter().enumerate() {
            for u in 0..h {
                act[(i, u)] = (b1[u] + numcore::dot(&w1[u * d..(u + 1) * d], row)).tanh();
            }
            for c in 0..k {
                z[(i, c)] = b2[c] + numcore::dot(&w2[c * h..(c + 1) * h], act.row(i));
            }
        }
        (act, z)
    }
}

pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (j, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = j;
        }
    }
    best
}

/// One-hot label matrix.
pub fn one_hot(labels: &[usize], num_classes: usize) -> Matrix {
    let mut m = Matrix::zeros(labels.len(), num_classes);
    for (i, &y) in labels.iter().enumerate() {
        m[(i, y)] = 1.0;
    }
    m
}

/// Loss value plus the number of terms whose probability hit the 1e-300 floor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossEval {
    pub value: f64,
    pub clamped: usize,
}

fn check_soft_labels(model: &Model, x: &Matrix, soft: &Matrix) -> Result<()> {
    if soft.rows() != x.rows() || soft.cols() != model.num_classes {
        return Err(Error::Dimension(format!(
            "soft labels are {}x{}, expected {}x{}",
            soft.rows(),
            soft.cols(),
            x.rows(),
            model.num_classes
        )));
    }
    for (i, row) in soft.row_iter().enumerate() {
        let total: f64 = row.iter().sum();
        let all_zero = row.iter().all(|&v| v == 0.0);
        if !all_zero && (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidParameter(format!(
                "soft label row {i} sums to {total}, expected 1"
            )));
        }
        if row.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("soft label row {i}")));
        }
    }
    Ok(())
}

/// Per-row loss pieces shared by value, gradient and Hessian.
struct RowTerms {
    /// Negative log-likelihood contribution of the row.
    loss: f64,
    /// Softmax probabilities.
    probs: Vec<f64>,
    /// Total label weight over unclamped terms.
    weight: f64,
    /// d loss / d logits.
    dz: Vec<f64>,
    clamped: usize,
}

fn row_terms(logits: &[f64], soft: &[f64]) -> RowTerms {
    let lse = log_sum_exp(logits);
    let mut probs = logits.to_vec();
    numcore::softmax_in_place(&mut probs);
    let mut loss = 0.0;
    let mut weight = 0.0;
    let mut clamped = 0;
    let mut active = vec![0.0; soft.len()];
    for (j, (&s, &z)) in soft.iter().zip(logits).enumerate() {
        if s == 0.0 {
            continue;
        }
        let nll = lse - z;
        if nll > NLL_CLAMP {
            loss += s * NLL_CLAMP;
            clamped += 1;
        } else {
            loss += s * nll;
            weight += s;
            active[j] = s;
        }
    }
    let dz = probs
        .iter()
        .zip(&active)
        .map(|(p, s)| weight * p - s)
        .collect();
    RowTerms {
        loss,
        probs,
        weight,
        dz,
        clamped,
    }
}

/// Mean soft-label cross-entropy without the regularizer.
pub fn data_loss(model: &Model, x: &Matrix, soft: &Matrix) -> Result<LossEval> {
    model.check_input(x)?;
    check_soft_labels(model, x, soft)?;
    if x.rows() == 0 {
        return Err(Error::EmptyDataset("loss over zero rows".into()));
    }
    let logits = model.logits(x)?;
    let mut value = 0.0;
    let mut clamped = 0;
    for i in 0..x.rows() {
        let t = row_terms(logits.row(i), soft.row(i));
        value += t.loss;
        clamped += t.clamped;
    }
    Ok(LossEval {
        value: value / x.rows() as f64,
        clamped,
    })
}

pub fn reg_loss(model: &Model) -> f64 {
    0.5 * model.l2 * numcore::dot(&model.theta, &model.theta)
}

/// Mean soft-label cross-entropy plus `l2/2 |theta|^2`, with clamp diagnostics.
pub fn ce_loss_eval(model: &Model, x: &Matrix, soft: &Matrix) -> Result<LossEval> {
    let mut eval = data_loss(model, x, soft)?;
    if eval.clamped > 0 {
        log::debug!("{} loss terms clamped at p = 1e-300", eval.clamped);
    }
    eval.value += reg_loss(model);
    Ok(eval)
}

/// Mean soft-label cross-entropy plus `l2/2 |theta|^2`.
///
/// Soft-label rows must sum to one (entries may be negative) or be all zero.
pub fn ce_loss(model: &Model, x: &Matrix, soft: &Matrix) -> Result<f64> {
    Ok(ce_loss_eval(model, x, soft)?.value)
}

/// Plain cross-entropy of each row against its hard label, no regularizer.
pub fn per_example_losses(model: &Model, x: &Matrix, labels: &[usize]) -> Result<Vec<f64>> {
    if labels.len() != x.rows() {
        return Err(Error::Dimension("one label per row required".into()));
    }
    let logits = model.logits(x)?;
    Ok(labels
        .iter()
        .enumerate()
        .map(|(i, &y)| {
            let row = logits.row(i);
            (log_sum_exp(row) - row[y]).min(NLL_CLAMP)
        })
        .collect())
}

/// Gradient of [`data_loss`].
pub fn data_grad(model: &Model, x: &Matrix, soft: &Matrix) -> Result<Vector> {
    model.check_input(x)?;
    check_soft_labels(model, x, soft)?;
    let n = x.rows();
    if n == 0 {
        return Err(Error::EmptyDataset("gradient over zero rows".into()));
    }
    let inv_n = 1.0 / n as f64;
    let (d, k) = (model.input_dim, model.num_classes);
    let mut g = vec![0.0; model.theta.len()];
    match model.kind {
        ModelKind::Logistic => {
            let logits = model.logistic_logits(x);
            let (gw, gb) = g.split_at_mut(k * d);
            for (i, row) in x.row_iter().enumerate() {
                let t = row_terms(logits.row(i), soft.row(i));
                for c in 0..k {
                    let dz = t.dz[c] * inv_n;
                    if dz == 0.0 {
                        continue;
                    }
                    gb[c] += dz;
                    numcore::axpy(dz, row, &mut gw[c * d..(c + 1) * d]);
                }
            }
        }
        ModelKind::Mlp { hidden: h } => {
            let (act, logits) = model.mlp_forward(x);
            let w2 = &model.theta[h * d + h..h * d + h + k * h];
            let (gw1, rest) = g.split_at_mut(h * d);
            let (gb1, rest) = rest.split_at_mut(h);
            let (gw2, gb2) = rest.split_at_mut(k * h);
            let mut dh = vec![0.0; h];
            for (i, row) in x.row_iter().enumerate() {
                let t = row_terms(logits.row(i), soft.row(i));
                let a = act.row(i);
                dh.iter_mut().for_each(|v| *v = 0.0);
                for c in 0..k {
                    let dz = t.dz[c] * inv_n;
                    if dz == 0.0 {
                        continue;
                    }
                    gb2[c] += dz;
                    numcore::axpy(dz, a, &mut gw2[c * h..(c + 1) * h]);
                    numcore::axpy(dz, &w2[c * h..(c + 1) * h], &mut dh);
                }
                for u in 0..h {
                    let da = dh[u] * (1.0 - a[u] * a[u]);
                    if da == 0.0 {
                        continue;
                    }
                    gb1[u] += da;
                    numcore::axpy(da, row, &mut gw1[u * d..(u + 1) * d]);
                }
            }
        }
    }
    Ok(g)
}

/// Analytic gradient of [`ce_loss`] with respect to theta.
pub fn grad(model: &Model, x: &Matrix, soft: &Matrix) -> Result<Vector> {
    let mut g = data_grad(model, x, soft)?;
    numcore::axpy(model.l2, &model.theta, &mut g);
    Ok(g)
}

/// Exact Hessian of [`data_loss`] for the logistic model.
pub fn data_hessian(model: &Model, x: &Matrix, soft: &Matrix) -> Result<Matrix> {
    if model.kind != ModelKind::Logistic {
        return Err(Error::UnsupportedModel(format!(
            "exact Hessian is only available for the convex logistic model, got {}",
            model.kind
        )));
    }
    model.check_input(x)?;
    check_soft_labels(model, x, soft)?;
    let n = x.rows();
    if n == 0 {
        return Err(Error::EmptyDataset("Hessian over zero rows".into()));
    }
    let (d, k) = (model.input_dim, model.num_classes);
    let p = k * d + k;
    // Parameter index of (class, feature); feature == d is the bias.
    let idx = |c: usize, j: usize| if j == d { k * d + c } else { c * d + j };
    let logits = model.logistic_logits(x);
    let mut h = Matrix::zeros(p, p);
    let inv_n = 1.0 / n as f64;
    let mut aug = vec![1.0; d + 1];
    for (i, row) in x.row_iter().enumerate() {
        let t = row_terms(logits.row(i), soft.row(i));
        if t.weight == 0.0 {
            continue;
        }
        aug[..d].copy_from_slice(row);
        for a in 0..k {
            for b in 0..k {
                let delta = if a == b { t.probs[a] } else { 0.0 };
                let hz = t.weight * (delta - t.probs[a] * t.probs[b]) * inv_n;
                if hz == 0.0 {
                    continue;
                }
                for (j1, &x1) in aug.iter().enumerate() {
                    let r = idx(a, j1);
                    for (j2, &x2) in aug.iter().enumerate() {
                        h[(r, idx(b, j2))] += hz * x1 * x2;
                    }
                }
            }
        }
    }
    // Symmetrize away round-off so downstream solvers see an exact H = H^T.
    for r in 0..p {
        for c in (r + 1)..p {
            let v = 0.5 * (h[(r, c)] + h[(c, r)]);
            h[(r, c)] = v;
            h[(c, r)] = v;
        }
    }
    Ok(h)
}

/// Exact Hessian of [`ce_loss`]: data Hessian plus `l2 I`. Logistic only.
pub fn hessian(model: &Model, x: &Matrix, soft: &Matrix) -> Result<Matrix> {
    let mut h = data_hessian(model, x, soft)?;
    for i in 0..h.rows() {
        h[(i, i)] += model.l2;
    }
    Ok(h)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            batch_size: 32,
            lr: 0.1,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::InvalidParameter(
                "training needs epochs >= 1 and batch_size >= 1".into(),
            ));
        }
        if self.lr < 0.0 || !self.lr.is_finite() {
            return Err(Error::InvalidParameter(format!("invalid learning rate {}", self.lr)));
        }
        Ok(())
    }
}

/// Plain SGD over shuffled mini-batches with one-hot targets.
///
/// Returns the trained model and the full-dataset loss after every epoch.
pub fn sgd_train(model: &Model, ds: &LabeledDataset, cfg: &TrainConfig) -> Result<(Model, Vec<f64>)> {
    cfg.validate()?;
    if ds.is_empty() {
        return Err(Error::EmptyDataset("cannot train on an empty dataset".into()));
    }
    let mut rng = RngStream::new(cfg.seed, numcore::streams::TRAIN).rng();
    let targets = one_hot(ds.labels(), model.num_classes);
    let mut current = model.clone();
    let mut order: Vec<usize> = (0..ds.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size) {
            let xb = ds.features().select_rows(batch);
            let yb = targets.select_rows(batch);
            let g = grad(&current, &xb, &yb)?;
            sgd_step(&mut current, &g, cfg.lr)?;
        }
        history.push(ce_loss(&current, ds.features(), &targets)?);
    }
    Ok((current, history))
}

/// `theta -= lr * g`, rejecting non-finite results.
pub fn sgd_step(model: &mut Model, g: &[f64], lr: f64) -> Result<()> {
    if g.len() != model.theta.len() {
        return Err(Error::Dimension("gradient length differs from theta".into()));
    }
    numcore::axpy(-lr, g, &mut model.theta);
    if model.theta.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("parameters diverged during SGD".into()));
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct FitOutcome {
    pub model: Model,
    pub grad_norm: f64,
    pub iterations: usize,
}

/// Full-batch minimization of [`ce_loss`] to `|grad| <= tol`.
///
/// Logistic models use damped Newton steps on the exact Hessian; MLPs use
/// gradient descent with Armijo backtracking. Either way every step is a
/// full-batch descent step, so the result is a stationary point up to `tol`.
pub fn fit_stationary(
    model: &Model,
    x: &Matrix,
    soft: &Matrix,
    tol: f64,
    max_iter: usize,
) -> Result<FitOutcome> {
    let mut current = model.clone();
    let mut loss = ce_loss(&current, x, soft)?;
    let mut step_hint = 1.0;
    for it in 0..max_iter {
        let g = grad(&current, x, soft)?;
        let gn = norm(&g);
        if gn <= tol {
            return Ok(FitOutcome {
                model: current,
                grad_norm: gn,
                iterations: it,
            });
        }
        let direction: Vector = match current.kind {
            ModelKind::Logistic => {
                let h = hessian(&current, x, soft)?;
                let damping = if current.l2 > 0.0 { 0.0 } else { 1e-10 };
                solve_damped(&h, &g, damping)?.into_iter().map(|v| -v).collect()
            }
            ModelKind::Mlp { .. } => g.iter().map(|v| -v).collect(),
        };
        let slope = numcore::dot(&g, &direction);
        let mut step = match current.kind {
            ModelKind::Logistic => 1.0,
            ModelKind::Mlp { .. } => (step_hint * 2.0_f64).min(1e3),
        };
        let mut accepted = false;
        for _ in 0..60 {
            let mut trial = current.theta.clone();
            numcore::axpy(step, &direction, &mut trial);
            let candidate = current.with_theta(trial);
            if let Ok(candidate) = candidate {
                let l = ce_loss(&candidate, x, soft)?;
                if l <= loss + 1e-4 * step * slope {
                    current = candidate;
                    loss = l;
                    accepted = true;
                    break;
                }
            }
            step *= 0.5;
        }
        if !accepted {
            // Round-off floor: the loss can no longer resolve a decrease.
            let g = grad(&current, x, soft)?;
            return Ok(FitOutcome {
                grad_norm: norm(&g),
                model: current,
                iterations: it,
            });
        }
        step_hint = step;
    }
    let g = grad(&current, x, soft)?;
    Ok(FitOutcome {
        grad_norm: norm(&g),
        model: current,
        iterations: max_iter,
    })
}
