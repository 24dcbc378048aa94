//! Label-LDP calculator for negative label smoothing.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LdpParams {
    pub classes: usize,
    pub alpha: f64,
    pub gamma1: f64,
    pub gamma2: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LdpReport {
    pub epsilon: f64,
    pub p_target: f64,
    pub p_other: f64,
    pub empirical_max_log_ratio: f64,
}

impl LdpParams {
    pub fn new(classes: usize, alpha: f64, gamma1: f64, gamma2: f64) -> Result<Self> {
        let p = Self {
            classes,
            alpha,
            gamma1,
            gamma2,
        };
        p.validate()?;
        Ok(p)
    }

    /// `gamma1 - gamma2 * (1 + (1 - K) alpha / K)`, the weight on the target label.
    pub fn target_weight(&self) -> f64 {
        let k = self.classes as f64;
        self.gamma1 - self.gamma2 * (1.0 + (1.0 - k) * self.alpha / k)
    }

    /// Weight on each non-target label, `-alpha * gamma2 / K`.
    pub fn other_weight(&self) -> f64 {
        -self.alpha * self.gamma2 / self.classes as f64
    }

    /// Lower end of the admissible alpha interval, `K (1 - gamma1/gamma2) / (K - 1)`.
    pub fn alpha_lower_bound(&self) -> f64 {
        let k = self.classes as f64;
        k * (1.0 - self.gamma1 / self.gamma2) / (k - 1.0)
    }

    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 {
            return Err(Error::InvalidParameter(format!("need at least 2 classes, got {}", self.classes)));
        }
        for (name, v) in [("alpha", self.alpha), ("gamma1", self.gamma1), ("gamma2", self.gamma2)] {
            if !v.is_finite() {
                return Err(Error::InvalidParameter(format!("{name} must be finite")));
            }
        }
        if self.alpha >= 0.0 {
            return Err(Error::InvalidParameter(format!("alpha must be negative, got {}", self.alpha)));
        }
        if self.gamma1 <= 0.0 || self.gamma2 <= 0.0 {
            return Err(Error::InvalidParameter("gamma1 and gamma2 must be positive".into()));
        }
        let a = self.target_weight();
        if a <= 0.0 {
            return Err(Error::InvalidParameter(format!(
                "precondition gamma1 - gamma2*(1 + (1-K)*alpha/K) > 0 fails: {a}"
            )));
        }
        Ok(())
    }
}

/// `|ln((K/alpha)(1 - gamma1/gamma2) + 1 - K)|`.
pub fn label_ldp_epsilon(params: &LdpParams) -> Result<f64> {
    params.validate()?;
    let k = params.classes as f64;
    let arg = (k / params.alpha) * (1.0 - params.gamma1 / params.gamma2) + 1.0 - k;
    if arg <= 0.0 || !arg.is_finite() {
        return Err(Error::Domain(format!("log argument is not positive: {arg}")));
    }
    Ok(arg.ln().abs())
}

/// Minimizer of `A(-ln p_y) + (-alpha gamma2 / K) sum_{y' != y} (-ln p_y')` on the simplex.
pub fn optimal_prediction_distribution(params: &LdpParams) -> Result<(f64, f64)> {
    params.validate()?;
    let a = params.target_weight();
    let b = params.other_weight();
    let denom = a + (params.classes as f64 - 1.0) * b;
    Ok((a / denom, b / denom))
}

/// Enumerates every `(y, y', y_pred)` triple under the optimal mechanism.
pub fn verify_ratio_bound(params: &LdpParams) -> Result<LdpReport> {
    let epsilon = label_ldp_epsilon(params)?;
    let (p_target, p_other) = optimal_prediction_distribution(params)?;
    let k = params.classes;
    let prob = |y: usize, pred: usize| if y == pred { p_target } else { p_other };
    let mut worst = f64::NEG_INFINITY;
    for y in 0..k {
        for y2 in 0..k {
            for pred in 0..k {
                worst = worst.max((prob(y, pred) / prob(y2, pred)).ln());
            }
        }
    }
    if worst > epsilon + 1e-9 {
        return Err(Error::Domain(format!("log ratio {worst} exceeds epsilon {epsilon}")));
    }
    Ok(LdpReport {
        epsilon,
        p_target,
        p_other,
        empirical_max_log_ratio: worst,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn best_endpoint_is_zero() {
        let p = LdpParams::new(10, -1.0, 2.0, 1.0).unwrap();
        assert!(label_ldp_epsilon(&p).unwrap().abs() < 1e-12);
        let (t, o) = optimal_prediction_distribution(&p).unwrap();
        assert!((p.target_weight() - 0.1).abs() < 1e-12);
        assert!((t - 0.1).abs() < 1e-12 && (o - 0.1).abs() < 1e-12);
        let r = verify_ratio_bound(&p).unwrap();
        assert!(r.empirical_max_log_ratio.abs() < 1e-12);
    }

    #[test]
    fn binary_log_three() {
        let p = LdpParams::new(2, -1.0, 3.0, 1.0).unwrap();
        assert!((p.target_weight() - 1.5).abs() < 1e-12);
        let eps = label_ldp_epsilon(&p).unwrap();
        assert!((eps - 3f64.ln()).abs() < 1e-12);
        let r = verify_ratio_bound(&p).unwrap();
        assert!((r.p_target - 0.75).abs() < 1e-12 && (r.p_other - 0.25).abs() < 1e-12);
        assert!((r.empirical_max_log_ratio - eps).abs() < 1e-12);
    }

    #[test]
    fn precondition_failure_is_parameter_error() {
        let err = LdpParams::new(2, -1.0, 1.0, 1.0).unwrap_err();
        assert!(matches!(err, Error::InvalidParameter(_)));
        assert!(LdpParams::new(3, 0.5, 1.0, 1.0).is_err());
        assert!(LdpParams::new(1, -0.5, 1.0, 1.0).is_err());
    }

    #[test]
    fn vanishing_smoothing_concentrates_on_target() {
        let p = LdpParams::new(5, -1e-9, 2.0, 1.0).unwrap();
        let (t, o) = optimal_prediction_distribution(&p).unwrap();
        assert!(t > 1.0 - 1e-8 && o < 1e-8);
    }
}
