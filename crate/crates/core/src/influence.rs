//! Influence functions on the convex logistic model and numerical checks of
//! the GA and label-smoothing parameter-distance results.
//!
//! Everything here uses the summed objective
//! `R_D(theta) = sum_{z in D} l(theta, z) + lambda/2 |theta|^2` with one
//! `lambda = n_tr * l2` shared by the full-training and retain objectives.

use serde::{Deserialize, Serialize};

use crate::data::{self, BlobSpec, ForgetSplit, LabeledDataset, Paradigm};
use crate::error::{Error, Result};
use crate::models::{self, Model, ModelKind};
use crate::numcore::{self, streams, Matrix, RngStream, Vector};

pub const DEFAULT_DAMPING: f64 = 1e-3;
/// Objective gradient norm above which a theory check carries a warning.
pub const STATIONARITY_LIMIT: f64 = 1e-3;

fn require_logistic(model: &Model) -> Result<()> {
    if model.kind() != ModelKind::Logistic {
        return Err(Error::UnsupportedModel(format!(
            "influence computations need the logistic model, got {}",
            model.kind()
        )));
    }
    Ok(())
}

/// `sum_{z in ds} grad l(theta, z)`, regularizer excluded.
pub fn sum_grad(model: &Model, ds: &LabeledDataset) -> Result<Vector> {
    let soft = models::one_hot(ds.labels(), model.num_classes());
    let mut g = models::data_grad(model, ds.features(), &soft)?;
    g.iter_mut().for_each(|v| *v *= ds.len() as f64);
    Ok(g)
}

/// `sum_{z in ds} hess l(theta, z)`, regularizer excluded.
pub fn sum_hessian(model: &Model, ds: &LabeledDataset) -> Result<Matrix> {
    let soft = models::one_hot(ds.labels(), model.num_classes());
    let mut h = models::data_hessian(model, ds.features(), &soft)?;
    h.scale(ds.len() as f64);
    Ok(h)
}

/// `sum_{z in ds} sum_{y' != y} grad l(theta, (x, y'))`.
pub fn sum_non_target_grad(model: &Model, ds: &LabeledDataset) -> Result<Vector> {
    let k = model.num_classes();
    let mut soft = Matrix::zeros(ds.len(), k);
    for (i, &y) in ds.labels().iter().enumerate() {
        for (j, v) in soft.row_mut(i).iter_mut().enumerate() {
            if j != y {
                *v = 1.0 / (k - 1) as f64;
            }
        }
    }
    let mut g = models::data_grad(model, ds.features(), &soft)?;
    let scale = ds.len() as f64 * (k - 1) as f64;
    g.iter_mut().for_each(|v| *v *= scale);
    Ok(g)
}

fn add_diag(mut h: Matrix, v: f64) -> Matrix {
    for i in 0..h.rows() {
        h[(i, i)] += v;
    }
    h
}

/// `I(z) = -(H + damping I)^{-1} grad l(theta, z)` with `H` the Hessian of the
/// model's mean objective on `dataset`.
pub fn influence_of(model: &Model, x: &[f64], y: usize, dataset: &LabeledDataset, damping: f64) -> Result<Vector> {
    require_logistic(model)?;
    let soft = models::one_hot(dataset.labels(), model.num_classes());
    let stationarity = numcore::norm(&models::grad(model, dataset.features(), &soft)?);
    if stationarity > 1e-4 {
        log::warn!("influence evaluated away from a stationary point (|grad| = {stationarity:.3e})");
    }
    let h = models::hessian(model, dataset.features(), &soft)?;
    let row = Matrix::from_rows(&[x])?;
    let g = models::data_grad(model, &row, &models::one_hot(&[y], model.num_classes()))?;
    let sol = numcore::solve_damped(&h, &g, damping)?;
    Ok(sol.into_iter().map(|v| -v).collect())
}

/// `(sum_tr hess l(theta_r) + lambda I)^{-1} grad R_tr(theta_r)`, so that
/// `theta_tr + delta_r` approximates `theta_r`.
pub fn delta_r(model_r: &Model, train: &LabeledDataset, lambda: f64, damping: f64) -> Result<Vector> {
    require_logistic(model_r)?;
    let h = add_diag(sum_hessian(model_r, train)?, lambda);
    let mut rhs = sum_grad(model_r, train)?;
    numcore::axpy(lambda, model_r.theta(), &mut rhs);
    numcore::solve_damped(&h, &rhs, damping)
}

/// `(sum_r hess l(theta_tr) + lambda I)^{-1} sum_f grad l(theta_tr)`.
pub fn delta_f(
    model_tr: &Model,
    retain: &LabeledDataset,
    forget: &LabeledDataset,
    lambda: f64,
    damping: f64,
) -> Result<Vector> {
    require_logistic(model_tr)?;
    let h = add_diag(sum_hessian(model_tr, retain)?, lambda);
    numcore::solve_damped(&h, &sum_grad(model_tr, forget)?, damping)
}

/// `(1/(K-1)) (sum_r hess l(theta_tr) + lambda I)^{-1} sum_f sum_{y' != y} grad l(theta_tr, (x, y'))`.
pub fn delta_n(
    model_tr: &Model,
    retain: &LabeledDataset,
    forget: &LabeledDataset,
    lambda: f64,
    damping: f64,
) -> Result<Vector> {
    require_logistic(model_tr)?;
    let k = model_tr.num_classes();
    let h = add_diag(sum_hessian(model_tr, retain)?, lambda);
    let mut rhs = sum_non_target_grad(model_tr, forget)?;
    rhs.iter_mut().for_each(|v| *v /= (k - 1) as f64);
    numcore::solve_damped(&h, &rhs, damping)
}

/// Optimal parameters for the full-training and retain objectives.
#[derive(Debug, Clone)]
pub struct TheoryInputs {
    pub model_tr: Model,
    pub model_r: Model,
    pub train: LabeledDataset,
    pub split: ForgetSplit,
    pub lambda: f64,
}

impl TheoryInputs {
    /// Fits both optima to `|grad| <= tol`; `template.l2` is the mean-form
    /// penalty of the full-training objective.
    pub fn fit(template: &Model, train: &LabeledDataset, split: ForgetSplit, tol: f64) -> Result<Self> {
        require_logistic(template)?;
        split.require_both_sides()?;
        let k = template.num_classes();
        let n_tr = train.len() as f64;
        let retain = split.retain_set(train);
        let start = template.with_theta(vec![0.0; template.theta().len()])?;
        let tr = models::fit_stationary(
            &start,
            train.features(),
            &models::one_hot(train.labels(), k),
            tol,
            500,
        )?;
        // Same lambda in sum form means a larger mean-form penalty on the smaller set.
        let r_start = start.with_l2(template.l2() * n_tr / retain.len() as f64)?;
        let r = models::fit_stationary(
            &r_start,
            retain.features(),
            &models::one_hot(retain.labels(), k),
            tol,
            500,
        )?;
        Ok(Self {
            model_tr: tr.model,
            model_r: r.model.with_l2(template.l2())?,
            train: train.clone(),
            split,
            lambda: template.l2() * n_tr,
        })
    }

    pub fn retain(&self) -> LabeledDataset {
        self.split.retain_set(&self.train)
    }

    pub fn forget(&self) -> LabeledDataset {
        self.split.forget_set(&self.train)
    }

    /// `|grad R_tr(theta_tr)|` and `|grad R_r(theta_r)|`.
    pub fn grad_norms(&self) -> Result<(f64, f64)> {
        let mut g_tr = sum_grad(&self.model_tr, &self.train)?;
        numcore::axpy(self.lambda, self.model_tr.theta(), &mut g_tr);
        let mut g_r = sum_grad(&self.model_r, &self.retain())?;
        numcore::axpy(self.lambda, self.model_r.theta(), &mut g_r);
        Ok((numcore::norm(&g_tr), numcore::norm(&g_r)))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TheoryReport {
    pub delta_r: Vector,
    pub delta_f: Vector,
    pub delta_n: Vector,
    /// `|delta_r - delta_f|`, the approximate distance from GA's optimum to retrain.
    pub dist_ga: f64,
    /// `|delta_r|`, the approximate distance from the original model to retrain.
    pub dist_noop: f64,
    /// `<delta_r - delta_f, delta_n - delta_f>`.
    pub inner: f64,
    pub ga_cannot_help: bool,
    /// Norm of `sum_f grad l(theta_r) + H(theta_r, theta_tr) sum_f grad l(theta_tr)`.
    pub condition_residual: f64,
    /// Norm of `H_tr(theta_r) (delta_r - delta_f)`; zero exactly when `dist_ga` is.
    pub exactness_residual: f64,
    pub condition_met: bool,
    pub best_alpha: Option<f64>,
    pub dist_gls_at_best_alpha: Option<f64>,
    pub closed_form_alpha: Option<f64>,
    pub improves_on_ga: Option<bool>,
    pub grad_norm_tr: f64,
    pub grad_norm_r: f64,
    pub damping: f64,
    pub warnings: Vec<String>,
}

impl TheoryReport {
    /// `|delta_r - delta_f + ((1 - K)/K) alpha (delta_n - delta_f)|`.
    pub fn gls_distance(&self, alpha: f64, classes: usize) -> f64 {
        let c = (1.0 - classes as f64) / classes as f64 * alpha;
        let mut v = numcore::sub(&self.delta_r, &self.delta_f);
        numcore::axpy(c, &numcore::sub(&self.delta_n, &self.delta_f), &mut v);
        numcore::norm(&v)
    }
}

/// Deltas, distances and both residual forms of the exactness condition.
pub fn check_theorem1(inputs: &TheoryInputs, damping: f64) -> Result<TheoryReport> {
    let retain = inputs.retain();
    let forget = inputs.forget();
    let lambda = inputs.lambda;
    let (grad_norm_tr, grad_norm_r) = inputs.grad_norms()?;
    let mut warnings = Vec::new();
    for (name, g) in [("theta_tr", grad_norm_tr), ("theta_r", grad_norm_r)] {
        if g > STATIONARITY_LIMIT {
            warnings.push(format!("{name} is not stationary: |grad| = {g:.3e}"));
        }
    }

    let d_r = delta_r(&inputs.model_r, &inputs.train, lambda, damping)?;
    let d_f = delta_f(&inputs.model_tr, &retain, &forget, lambda, damping)?;
    let d_n = delta_n(&inputs.model_tr, &retain, &forget, lambda, damping)?;
    let u = numcore::sub(&d_r, &d_f);
    let v = numcore::sub(&d_n, &d_f);
    let dist_ga = numcore::norm(&u);
    let dist_noop = numcore::norm(&d_r);

    let h_tr_at_r = add_diag(sum_hessian(&inputs.model_r, &inputs.train)?, lambda + damping);
    let g_f_at_r = sum_grad(&inputs.model_r, &forget)?;
    let g_f_at_tr = sum_grad(&inputs.model_tr, &forget)?;
    let h_r_at_tr = add_diag(sum_hessian(&inputs.model_tr, &retain)?, lambda);
    let mapped = h_tr_at_r.matvec(&numcore::solve_damped(&h_r_at_tr, &g_f_at_tr, damping)?)?;
    let condition_residual = numcore::norm(&numcore::add(&g_f_at_r, &mapped));
    let exactness_residual = numcore::norm(&h_tr_at_r.matvec(&u)?);

    let inner = numcore::dot(&u, &v);
    Ok(TheoryReport {
        delta_r: d_r,
        delta_f: d_f,
        delta_n: d_n,
        dist_ga,
        dist_noop,
        inner,
        ga_cannot_help: dist_ga > dist_noop,
        condition_residual,
        exactness_residual,
        condition_met: inner <= 0.0,
        best_alpha: None,
        dist_gls_at_best_alpha: None,
        closed_form_alpha: None,
        improves_on_ga: None,
        grad_norm_tr,
        grad_norm_r,
        damping,
        warnings,
    })
}

/// `-10^e` for `e` evenly spaced in `[-6, 4]`, 2001 points, ascending.
pub fn default_alpha_grid() -> Vec<f64> {
    let n = 2001;
    let mut grid: Vec<f64> = (0..n)
        .map(|i| -(10f64).powf(-6.0 + 10.0 * i as f64 / (n - 1) as f64))
        .collect();
    grid.reverse();
    grid
}

/// Unconstrained minimizer over alpha of the GLS distance, if it is negative.
pub fn closed_form_alpha(report: &TheoryReport, classes: usize) -> Option<f64> {
    let v = numcore::sub(&report.delta_n, &report.delta_f);
    let vv = numcore::dot(&v, &v);
    if vv == 0.0 || report.inner >= 0.0 {
        return None;
    }
    let c = -report.inner / vv;
    let k = classes as f64;
    Some(c * k / (1.0 - k))
}

/// Whether `value` lies between the grid neighbours of `best` (inclusive).
///
/// `grid` must be sorted and contain `best`.
pub fn within_one_grid_step(grid: &[f64], best: f64, value: f64) -> bool {
    let Some(i) = grid.iter().position(|&g| g == best) else {
        return false;
    };
    let lo = grid[i.saturating_sub(1)];
    let hi = grid[(i + 1).min(grid.len() - 1)];
    let (lo, hi) = if lo <= hi { (lo, hi) } else { (hi, lo) };
    (lo..=hi).contains(&value)
}

/// Adds the label-smoothing analysis: grid search over negative rates when the
/// inner-product condition holds.
pub fn check_theorem2(inputs: &TheoryInputs, grid: &[f64], damping: f64) -> Result<TheoryReport> {
    if grid.is_empty() {
        return Err(Error::InvalidParameter("alpha grid is empty".into()));
    }
    if let Some(bad) = grid.iter().find(|a| a.is_nan() || **a >= 0.0) {
        return Err(Error::InvalidParameter(format!("alpha grid must be negative, found {bad}")));
    }
    let k = inputs.train.num_classes();
    let mut report = check_theorem1(inputs, damping)?;
    if !report.condition_met {
        return Ok(report);
    }
    let (best_alpha, best) = grid
        .iter()
        .map(|&a| (a, report.gls_distance(a, k)))
        .fold((grid[0], f64::INFINITY), |acc, cur| if cur.1 < acc.1 { cur } else { acc });
    report.best_alpha = Some(best_alpha);
    report.dist_gls_at_best_alpha = Some(best);
    report.closed_form_alpha = closed_form_alpha(&report, k);
    report.improves_on_ga = Some(best < report.dist_ga);
    Ok(report)
}

/// Blob instance recipe for theory checks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceSpec {
    pub blobs: BlobSpec,
    pub l2: f64,
    pub paradigm: Paradigm,
    pub tol: f64,
}

impl Default for InstanceSpec {
    fn default() -> Self {
        Self {
            blobs: BlobSpec {
                classes: 3,
                per_class: 30,
                dim: 2,
                spread: 1.5,
                subgroups_per_class: 2,
                center_scale: 2.0,
                subgroup_offset: 1.0,
                center_offset: 0.0,
            },
            l2: 1e-2,
            paradigm: Paradigm::Classwise { class: 0 },
            tol: 1e-8,
        }
    }
}

/// Seeded data, split and both optima.
pub fn generate_instance(spec: &InstanceSpec, seed: u64) -> Result<TheoryInputs> {
    let (train, test) = data::gen_train_test(&spec.blobs, 1, seed)?;
    let mut rng = RngStream::new(seed, streams::SPLIT).rng();
    let (split, _) = data::apply_paradigm(&train, &test, &spec.paradigm, &mut rng)?;
    let template = Model::zeros(ModelKind::Logistic, spec.blobs.dim, spec.blobs.classes, spec.l2)?;
    TheoryInputs::fit(&template, &train, split, spec.tol)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurveyReport {
    pub inner: Vec<f64>,
    pub fraction_nonpositive: f64,
}

/// Inner products `<delta_r - delta_f, delta_n - delta_f>` over instances.
pub fn inner_product_survey(instances: &[TheoryInputs], damping: f64) -> Result<SurveyReport> {
    if instances.is_empty() {
        return Err(Error::InvalidParameter("survey needs at least one instance".into()));
    }
    let inner = instances
        .iter()
        .map(|inst| check_theorem1(inst, damping).map(|r| r.inner))
        .collect::<Result<Vec<_>>>()?;
    let fraction_nonpositive = inner.iter().filter(|&&v| v <= 0.0).count() as f64 / inner.len() as f64;
    Ok(SurveyReport {
        inner,
        fraction_nonpositive,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_instance(seed: u64) -> TheoryInputs {
        generate_instance(&InstanceSpec::default(), seed).unwrap()
    }

    #[test]
    fn optima_are_stationary() {
        let inst = small_instance(1);
        let (a, b) = inst.grad_norms().unwrap();
        assert!(a <= 1e-6 && b <= 1e-6, "{a} {b}");
    }

    #[test]
    fn gls_distance_is_quadratic_in_alpha() {
        let inst = small_instance(2);
        let r = check_theorem1(&inst, DEFAULT_DAMPING).unwrap();
        let f = |a: f64| r.gls_distance(a, 3).powi(2);
        // Second differences of a quadratic are constant.
        let d1 = f(-2.0) - 2.0 * f(-1.0) + f(0.0);
        let d2 = f(-3.0) - 2.0 * f(-2.0) + f(-1.0);
        assert!((d1 - d2).abs() <= 1e-10 * (1.0 + d1.abs()));
        assert!((r.gls_distance(0.0, 3) - r.dist_ga).abs() < 1e-12);
    }

    #[test]
    fn mlp_is_rejected() {
        let inst = small_instance(3);
        let mlp = Model::zeros(ModelKind::Mlp { hidden: 3 }, 2, 3, 0.1).unwrap();
        let err = delta_f(&mlp, &inst.retain(), &inst.forget(), 1.0, 0.0).unwrap_err();
        assert!(matches!(err, Error::UnsupportedModel(_)));
    }

    #[test]
    fn grid_step_window() {
        let grid = [-3.0, -2.0, -1.0];
        assert!(within_one_grid_step(&grid, -2.0, -2.9));
        assert!(within_one_grid_step(&grid, -2.0, -1.0));
        assert!(!within_one_grid_step(&grid, -2.0, -0.5));
        assert!(within_one_grid_step(&grid, -1.0, -1.5));
        assert!(!within_one_grid_step(&grid, -1.0, -0.9));
        assert!(!within_one_grid_step(&grid, -1.5, -1.5));
    }

    #[test]
    fn grid_is_negative_and_sorted() {
        let g = default_alpha_grid();
        assert!(g.iter().all(|&a| a < 0.0));
        assert!(g.windows(2).all(|w| w[0] < w[1]));
        let inst = small_instance(4);
        assert!(check_theorem2(&inst, &[], DEFAULT_DAMPING).is_err());
        assert!(check_theorem2(&inst, &[0.5], DEFAULT_DAMPING).is_err());
    }
}
