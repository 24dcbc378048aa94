//! Evaluation suite: UA, MIA score, RA, TA, RTE, Avg. Gap, Sum, the
//! additional seen/unseen MIA accuracy and the Streisand-effect comparison.
//!
//! All percentages are on a 0..100 scale.

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::models::{self, Model};

fn require_nonempty(ds: &LabeledDataset, what: &str) -> Result<()> {
    if ds.is_empty() {
        return Err(Error::EmptyDataset(format!("{what} is empty")));
    }
    Ok(())
}

/// Percentage of rows whose arg-max prediction equals the label.
pub fn accuracy(model: &Model, ds: &LabeledDataset) -> Result<f64> {
    require_nonempty(ds, "evaluation set")?;
    let pred = model.predict(ds.features())?;
    let correct = pred.iter().zip(ds.labels()).filter(|(p, y)| p == y).count();
    Ok(100.0 * correct as f64 / ds.len() as f64)
}

/// Unlearning accuracy: error rate on the forget set.
pub fn ua(model: &Model, forget: &LabeledDataset) -> Result<f64> {
    Ok(100.0 - accuracy(model, forget)?)
}

/// Loss-threshold attack.
///
/// With `low_is_member` a loss `<= threshold` is called a member; otherwise a
/// loss `> threshold` is. `threshold = -inf` is allowed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossStump {
    pub threshold: f64,
    pub low_is_member: bool,
}

impl LossStump {
    pub fn is_member(&self, loss: f64) -> bool {
        (loss <= self.threshold) == self.low_is_member
    }
}

/// How member/non-member correctness is weighted when fitting a stump.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StumpObjective {
    /// `(TP + TN) / (m + n)`.
    Accuracy,
    /// `(TPR + TNR) / 2`.
    Balanced,
}

/// Exhaustive sweep over `-inf` and every observed loss value.
///
/// `both_directions` also tries "high loss is member". Ties prefer the
/// low-loss direction, then the smallest threshold.
pub fn fit_loss_stump(
    members: &[f64],
    nonmembers: &[f64],
    objective: StumpObjective,
    both_directions: bool,
) -> LossStump {
    let (m, n) = (members.len() as u128, nonmembers.len() as u128);
    // Integer scores avoid floating ties: balanced accuracy is scaled by 2mn.
    let (wm, wn) = match objective {
        StumpObjective::Accuracy => (1u128, 1u128),
        StumpObjective::Balanced => (n.max(1), m.max(1)),
    };
    let mut pooled: Vec<(f64, bool)> = members
        .iter()
        .map(|&v| (v, true))
        .chain(nonmembers.iter().map(|&v| (v, false)))
        .collect();
    pooled.sort_by(|a, b| a.0.total_cmp(&b.0));

    // m_le / n_le count members / non-members with loss <= threshold.
    let score = |m_le: u128, n_le: u128, low: bool| {
        if low {
            wm * m_le + wn * (n - n_le)
        } else {
            wm * (m - m_le) + wn * n_le
        }
    };
    let mut low_best = (f64::NEG_INFINITY, score(0, 0, true));
    let mut high_best = (f64::NEG_INFINITY, score(0, 0, false));
    let (mut m_le, mut n_le) = (0u128, 0u128);
    let mut i = 0;
    while i < pooled.len() {
        let v = pooled[i].0;
        while i < pooled.len() && pooled[i].0 == v {
            if pooled[i].1 {
                m_le += 1;
            } else {
                n_le += 1;
            }
            i += 1;
        }
        let low = score(m_le, n_le, true);
        if low > low_best.1 {
            low_best = (v, low);
        }
        let high = score(m_le, n_le, false);
        if high > high_best.1 {
            high_best = (v, high);
        }
    }
    if both_directions && high_best.1 > low_best.1 {
        LossStump {
            threshold: high_best.0,
            low_is_member: false,
        }
    } else {
        LossStump {
            threshold: low_best.0,
            low_is_member: true,
        }
    }
}

/// Seeded half of the retain indices used as the attack's member sample.
pub fn member_sample<R: Rng + ?Sized>(retain_len: usize, rng: &mut R) -> Vec<usize> {
    let take = (retain_len / 2).max(1).min(retain_len);
    let mut idx = index::sample(rng, retain_len, take).into_vec();
    idx.sort_unstable();
    idx
}

/// MIA score: share of forget rows that a loss-threshold attack calls non-members.
///
/// Rows with loss above the threshold are non-members. The threshold is fit to separate `member_sample` (members) from `test`
/// (non-members) and then applied to the forget set.
pub fn mia_score(
    model: &Model,
    forget: &LabeledDataset,
    member_sample: &LabeledDataset,
    test: &LabeledDataset,
) -> Result<f64> {
    require_nonempty(forget, "forget set")?;
    require_nonempty(member_sample, "member sample")?;
    require_nonempty(test, "test set")?;
    let member = models::per_example_losses(model, member_sample.features(), member_sample.labels())?;
    let non = models::per_example_losses(model, test.features(), test.labels())?;
    let forget_losses = models::per_example_losses(model, forget.features(), forget.labels())?;
    Ok(mia_score_from_losses(&forget_losses, &member, &non))
}

pub fn mia_score_from_losses(forget: &[f64], members: &[f64], nonmembers: &[f64]) -> f64 {
    let stump = fit_loss_stump(members, nonmembers, StumpObjective::Accuracy, false);
    let rejected = forget.iter().filter(|&&l| !stump.is_member(l)).count();
    100.0 * rejected as f64 / forget.len() as f64
}

/// Seen (forget) vs unseen (test) attack accuracy, class-balanced.
///
/// The attack may call either low or high losses "seen".
pub fn mia_accuracy_additional(model: &Model, forget: &LabeledDataset, test: &LabeledDataset) -> Result<f64> {
    require_nonempty(forget, "forget set")?;
    require_nonempty(test, "test set")?;
    let seen = models::per_example_losses(model, forget.features(), forget.labels())?;
    let unseen = models::per_example_losses(model, test.features(), test.labels())?;
    Ok(mia_accuracy_from_losses(&seen, &unseen))
}

pub fn mia_accuracy_from_losses(seen: &[f64], unseen: &[f64]) -> f64 {
    let stump = fit_loss_stump(seen, unseen, StumpObjective::Balanced, true);
    let tpr = seen.iter().filter(|&&l| stump.is_member(l)).count() as f64 / seen.len() as f64;
    let tnr = unseen.iter().filter(|&&l| !stump.is_member(l)).count() as f64 / unseen.len() as f64;
    100.0 * (tpr + tnr) / 2.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub ua: f64,
    /// One-sided MIA score (attack TNR on the forget set).
    pub mia: f64,
    pub ra: f64,
    pub ta: f64,
    /// Wall-clock seconds of the unlearning call, when measured.
    pub rte_seconds: Option<f64>,
    /// Mean absolute gap to the retrain reference, when one was supplied.
    pub avg_gap: Option<f64>,
    pub sum: f64,
    /// Seen/unseen attack accuracy between forget and test sets.
    pub mia_additional: f64,
}

impl MetricsReport {
    pub fn new(ua: f64, mia: f64, ra: f64, ta: f64) -> Self {
        Self {
            ua,
            mia,
            ra,
            ta,
            rte_seconds: None,
            avg_gap: None,
            sum: ua + mia + ra + ta,
            mia_additional: 0.0,
        }
    }

    /// Records the gap against a retrain reference.
    pub fn with_gap(mut self, retrain: &MetricsReport) -> Self {
        self.avg_gap = Some(avg_gap(&self, retrain));
        self
    }
}

/// `ua + mia + ra + ta`.
pub fn sum_metric(r: &MetricsReport) -> f64 {
    r.ua + r.mia + r.ra + r.ta
}

/// Mean of `|dUA|, |dMIA|, |dRA|, |dTA|`.
pub fn avg_gap(report: &MetricsReport, retrain: &MetricsReport) -> f64 {
    ((report.ua - retrain.ua).abs()
        + (report.mia - retrain.mia).abs()
        + (report.ra - retrain.ra).abs()
        + (report.ta - retrain.ta).abs())
        / 4.0
}

/// The sets one unlearning run is scored on.
#[derive(Debug, Clone)]
pub struct EvalSets {
    pub forget: LabeledDataset,
    pub retain: LabeledDataset,
    /// Test set; for class-wise forgetting the forgotten class is already removed.
    pub test: LabeledDataset,
    pub member_sample: LabeledDataset,
}

/// Full metric bundle for one model.
pub fn evaluate(model: &Model, sets: &EvalSets) -> Result<MetricsReport> {
    let mut report = MetricsReport::new(
        ua(model, &sets.forget)?,
        mia_score(model, &sets.forget, &sets.member_sample, &sets.test)?,
        accuracy(model, &sets.retain)?,
        accuracy(model, &sets.test)?,
    );
    report.mia_additional = mia_accuracy_additional(model, &sets.forget, &sets.test)?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreisandReport {
    pub forget_hist: Vec<f64>,
    pub test_hist: Vec<f64>,
    /// Total-variation distance between the two histograms, in [0, 1].
    pub tv: f64,
}

/// Compares predicted-class distributions on the forget and test sets.
pub fn streisand(model: &Model, forget: &LabeledDataset, test: &LabeledDataset) -> Result<StreisandReport> {
    require_nonempty(forget, "forget set")?;
    require_nonempty(test, "test set")?;
    let hist = |ds: &LabeledDataset| -> Result<Vec<f64>> {
        let mut h = vec![0.0; model.num_classes()];
        for p in model.predict(ds.features())? {
            h[p] += 1.0;
        }
        let n = ds.len() as f64;
        h.iter_mut().for_each(|v| *v /= n);
        Ok(h)
    };
    let forget_hist = hist(forget)?;
    let test_hist = hist(test)?;
    let tv = 0.5 * forget_hist.iter().zip(&test_hist).map(|(a, b)| (a - b).abs()).sum::<f64>();
    Ok(StreisandReport {
        forget_hist,
        test_hist,
        tv: tv.clamp(0.0, 1.0),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::ModelKind;
    use crate::numcore::Matrix;

    /// Two-class model that predicts class 1 iff the single feature is positive.
    fn sign_model() -> Model {
        Model::from_parts(ModelKind::Logistic, 1, 2, 0.0, vec![-1.0, 1.0, 0.0, 0.0]).unwrap()
    }

    fn ds(xs: &[f64], ys: &[usize]) -> LabeledDataset {
        let rows: Vec<[f64; 1]> = xs.iter().map(|&v| [v]).collect();
        LabeledDataset::new(Matrix::from_rows(&rows).unwrap(), ys.to_vec(), None, 2).unwrap()
    }

    #[test]
    fn accuracy_counts() {
        let m = sign_model();
        let xs = [-3.0, -2.0, -1.0, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0];
        let perfect = ds(&xs, &[0, 0, 0, 1, 1, 1, 1, 1, 1, 1]);
        assert_eq!(accuracy(&m, &perfect).unwrap(), 100.0);
        let flipped = ds(&xs, &[1, 1, 1, 0, 0, 0, 0, 0, 0, 0]);
        assert_eq!(accuracy(&m, &flipped).unwrap(), 0.0);
        let seven = ds(&xs, &[0, 0, 0, 1, 1, 1, 1, 0, 0, 0]);
        assert!((accuracy(&m, &seven).unwrap() - 70.0).abs() < 1e-12);
        assert!((ua(&m, &seven).unwrap() - 30.0).abs() < 1e-12);
        assert_eq!(ua(&m, &perfect).unwrap(), 0.0);
        assert!(accuracy(&m, &ds(&[], &[])).is_err());
    }

    #[test]
    fn ties_go_to_lowest_class() {
        let m = Model::zeros(ModelKind::Logistic, 1, 3, 0.0).unwrap();
        assert_eq!(m.predict(&Matrix::from_rows(&[[1.0]]).unwrap()).unwrap(), vec![0]);
    }

    #[test]
    fn mia_extremes() {
        let members = [0.1, 0.2, 0.3];
        let non = [1.0, 1.1, 1.2];
        assert_eq!(mia_score_from_losses(&[5.0, 6.0], &members, &non), 100.0);
        assert_eq!(mia_score_from_losses(&members, &members, &non), 0.0);
    }

    #[test]
    fn additional_mia_on_identical_distributions() {
        let vals: Vec<f64> = (0..50).map(|i| i as f64 * 0.1).collect();
        let acc = mia_accuracy_from_losses(&vals, &vals);
        assert!((acc - 50.0).abs() <= 1.0, "{acc}");
    }

    #[test]
    fn gap_and_sum() {
        let retrain = MetricsReport::new(100.0, 100.0, 98.19, 94.50);
        assert!((sum_metric(&retrain) - 392.69).abs() < 1e-9);
        assert_eq!(avg_gap(&retrain, &retrain), 0.0);
        let other = MetricsReport::new(100.0, 96.0, 98.19, 94.50);
        assert!((avg_gap(&other, &retrain) - 1.0).abs() < 1e-12);
        assert_eq!(avg_gap(&other, &retrain), avg_gap(&retrain, &other));
        assert_eq!(sum_metric(&MetricsReport::new(25.0, 25.0, 25.0, 25.0)), 100.0);
        assert_eq!(sum_metric(&MetricsReport::new(0.0, 0.0, 0.0, 0.0)), 0.0);
    }

    #[test]
    fn streisand_extremes() {
        let m = sign_model();
        let a = ds(&[-1.0, 2.0, 3.0], &[0, 1, 1]);
        assert_eq!(streisand(&m, &a, &a).unwrap().tv, 0.0);
        let neg = ds(&[-1.0, -2.0], &[0, 0]);
        let pos = ds(&[1.0, 2.0], &[1, 1]);
        assert_eq!(streisand(&m, &neg, &pos).unwrap().tv, 1.0);
    }

    #[test]
    fn member_sample_is_half_and_sorted() {
        let mut rng = crate::numcore::RngStream::new(1, 2).rng();
        let s = member_sample(11, &mut rng);
        assert_eq!(s.len(), 5);
        assert!(s.windows(2).all(|w| w[0] < w[1]));
    }
}
