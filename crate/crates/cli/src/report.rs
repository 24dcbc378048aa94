//! Run reports: a JSON document for scripts and an aligned table for people.

use std::fmt::Write as _;

use serde::Serialize;
use unlearn_core::{LdpReport, Method};

use crate::config::RunConfig;
use crate::run::{Cell, TheoryInstance};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Stat {
    pub mean: f64,
    /// Sample standard deviation; absent with fewer than two seeds.
    pub std: Option<f64>,
}

impl Stat {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = (values.len() >= 2).then(|| {
            let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
            var.sqrt()
        });
        Self { mean, std }
    }

    fn cell(&self) -> String {
        match self.std {
            Some(s) => format!("{:.2}±{:.2}", self.mean, s),
            None => format!("{:.2}", self.mean),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MethodSummary {
    pub method: Method,
    pub label: String,
    pub seeds: usize,
    pub ua: Stat,
    pub mia: Stat,
    pub ra: Stat,
    pub ta: Stat,
    pub mia_additional: Stat,
    pub avg_gap: Option<Stat>,
    pub sum: Stat,
    pub steps: Stat,
    pub streisand_tv: Stat,
    pub rte_seconds: Option<Stat>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunReport {
    pub tool: String,
    pub version: String,
    /// Canonical configuration; feeding it back reproduces the run.
    pub config: String,
    pub seeds: Vec<u64>,
    pub mia_score: &'static str,
    pub damping: f64,
    pub cells: Vec<Cell>,
    pub summary: Vec<MethodSummary>,
    pub theory: Option<TheorySummary>,
}

impl RunReport {
    /// `cells` may arrive in any order; the report orders them by (method, seed).
    pub fn new(cfg: &RunConfig, methods: &[Method], mut cells: Vec<Cell>, theory: Option<TheorySummary>) -> Self {
        let rank = |m: Method| methods.iter().position(|&x| x == m).unwrap_or(usize::MAX);
        cells.sort_by_key(|c| (rank(c.method), c.seed));
        let summary = methods
            .iter()
            .filter_map(|&m| {
                let mine: Vec<&Cell> = cells.iter().filter(|c| c.method == m).collect();
                if mine.is_empty() {
                    return None;
                }
                let stat = |f: &dyn Fn(&Cell) -> f64| Stat::of(&mine.iter().map(|c| f(c)).collect::<Vec<_>>());
                let optional = |f: &dyn Fn(&Cell) -> Option<f64>| {
                    let v: Option<Vec<f64>> = mine.iter().map(|c| f(c)).collect();
                    v.map(|v| Stat::of(&v))
                };
                Some(MethodSummary {
                    method: m,
                    label: m.label().to_string(),
                    seeds: mine.len(),
                    ua: stat(&|c| c.metrics.ua),
                    mia: stat(&|c| c.metrics.mia),
                    ra: stat(&|c| c.metrics.ra),
                    ta: stat(&|c| c.metrics.ta),
                    mia_additional: stat(&|c| c.metrics.mia_additional),
                    avg_gap: optional(&|c| c.metrics.avg_gap),
                    sum: stat(&|c| c.metrics.sum),
                    steps: stat(&|c| c.steps as f64),
                    streisand_tv: stat(&|c| c.streisand_tv),
                    rte_seconds: optional(&|c| c.metrics.rte_seconds),
                })
            })
            .collect();
        Self {
            tool: env!("CARGO_PKG_NAME").into(),
            version: env!("CARGO_PKG_VERSION").into(),
            config: cfg.to_text(),
            seeds: cfg.seeds.clone(),
            mia_score: "one-sided loss-threshold attack, TNR on the forget set",
            damping: cfg.unlearn.damping,
            cells,
            summary,
            theory,
        }
    }

    pub fn summary_for(&self, method: Method) -> Option<&MethodSummary> {
        self.summary.iter().find(|s| s.method == method)
    }

    pub fn to_table(&self) -> String {
        let with_rte = self.summary.iter().any(|s| s.rte_seconds.is_some());
        let mut header = vec!["Method", "UA", "MIA-Score", "RA", "TA", "Add. MIA", "Avg. Gap", "Sum", "Steps"];
        if with_rte {
            header.push("RTE (s)");
        }
        let rows: Vec<Vec<String>> = self
            .summary
            .iter()
            .map(|s| {
                let mut row = vec![
                    s.label.clone(),
                    s.ua.cell(),
                    s.mia.cell(),
                    s.ra.cell(),
                    s.ta.cell(),
                    s.mia_additional.cell(),
                    s.avg_gap.map(|g| g.cell()).unwrap_or_else(|| "-".into()),
                    s.sum.cell(),
                    format!("{:.0}", s.steps.mean),
                ];
                if with_rte {
                    row.push(s.rte_seconds.map(|r| format!("{:.4}", r.mean)).unwrap_or_else(|| "-".into()));
                }
                row
            })
            .collect();
        let seeds: Vec<String> = self.seeds.iter().map(u64::to_string).collect();
        let mut out = render_table(&header, &rows);
        let _ = writeln!(out, "seeds: {} | MIA-Score: {}", seeds.join(","), self.mia_score);
        out
    }
}

fn render_table(header: &[&str], rows: &[Vec<String>]) -> String {
    let widths: Vec<usize> = (0..header.len())
        .map(|j| {
            rows.iter()
                .map(|r| r[j].chars().count())
                .chain(std::iter::once(header[j].chars().count()))
                .max()
                .unwrap_or(0)
        })
        .collect();
    let mut out = String::new();
    let line = |cells: Vec<&str>, out: &mut String| {
        let padded: Vec<String> = cells
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(j, (c, w))| {
                let pad = w - c.chars().count();
                if j == 0 {
                    format!("{c}{}", " ".repeat(pad))
                } else {
                    format!("{}{c}", " ".repeat(pad))
                }
            })
            .collect();
        let _ = writeln!(out, "{}", padded.join("  ").trim_end());
    };
    line(header.to_vec(), &mut out);
    let rule: Vec<String> = widths.iter().map(|w| "-".repeat(*w)).collect();
    let _ = writeln!(out, "{}", rule.join("  "));
    for r in rows {
        line(r.iter().map(String::as_str).collect(), &mut out);
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TheorySummary {
    pub instances: usize,
    pub ga_cannot_help: usize,
    pub ga_can_help: usize,
    pub condition_met: usize,
    /// Instances whose inner product is below -1e-8.
    pub strictly_negative_inner: usize,
    pub improves_on_ga: usize,
    pub closed_form_within_one_step: usize,
    pub fraction_nonpositive: f64,
    pub warnings: usize,
}

impl TheorySummary {
    pub fn from_instances(instances: &[TheoryInstance]) -> Self {
        let count = |f: &dyn Fn(&TheoryInstance) -> bool| instances.iter().filter(|i| f(i)).count();
        let n = instances.len();
        Self {
            instances: n,
            ga_cannot_help: count(&|i| i.report.ga_cannot_help),
            ga_can_help: count(&|i| i.report.dist_ga < i.report.dist_noop),
            condition_met: count(&|i| i.report.condition_met),
            strictly_negative_inner: count(&|i| i.report.inner < -1e-8),
            improves_on_ga: count(&|i| i.report.improves_on_ga == Some(true)),
            closed_form_within_one_step: count(&|i| i.closed_form_within_one_step == Some(true)),
            fraction_nonpositive: count(&|i| i.report.inner <= 0.0) as f64 / n.max(1) as f64,
            warnings: instances.iter().map(|i| i.report.warnings.len()).sum(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TheoryRun {
    pub tool: String,
    pub version: String,
    pub config: String,
    pub damping: f64,
    pub summary: TheorySummary,
    pub instances: Vec<TheoryInstance>,
}

impl TheoryRun {
    pub fn to_table(&self) -> String {
        let header = ["Seed", "dist_GA", "dist_noop", "inner", "GA helps", "best alpha", "closed form", "GLS < GA"];
        let opt = |v: Option<f64>| v.map(|a| format!("{a:.4e}")).unwrap_or_else(|| "-".into());
        let rows: Vec<Vec<String>> = self
            .instances
            .iter()
            .map(|i| {
                let r = &i.report;
                vec![
                    i.seed.to_string(),
                    format!("{:.4e}", r.dist_ga),
                    format!("{:.4e}", r.dist_noop),
                    format!("{:.3e}", r.inner),
                    if r.ga_cannot_help { "no" } else { "yes" }.to_string(),
                    opt(r.best_alpha),
                    opt(r.closed_form_alpha),
                    r.improves_on_ga.map(|b| if b { "yes" } else { "no" }).unwrap_or("-").to_string(),
                ]
            })
            .collect();
        let s = &self.summary;
        let mut out = render_table(&header, &rows);
        let _ = writeln!(
            out,
            "instances {} | GA cannot help {} | GA can help {} | inner < -1e-8: {} | GLS beats GA {} | closed form within one grid step {} | damping {}",
            s.instances,
            s.ga_cannot_help,
            s.ga_can_help,
            s.strictly_negative_inner,
            s.improves_on_ga,
            s.closed_form_within_one_step,
            self.damping
        );
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LdpOutput {
    pub classes: usize,
    pub alpha: f64,
    pub gamma1: f64,
    pub gamma2: f64,
    #[serde(flatten)]
    pub report: LdpReport,
}

impl LdpOutput {
    pub fn to_table(&self) -> String {
        format!(
            "K = {}  alpha = {}  gamma1 = {}  gamma2 = {}\nepsilon = {:.6}\np_target = {:.6}  p_other = {:.6}\nmax log ratio = {:.6}\n",
            self.classes,
            self.alpha,
            self.gamma1,
            self.gamma2,
            self.report.epsilon,
            self.report.p_target,
            self.report.p_other,
            self.report.empirical_max_log_ratio
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stat_needs_two_values_for_spread() {
        assert_eq!(Stat::of(&[3.0]).std, None);
        let s = Stat::of(&[1.0, 3.0]);
        assert_eq!(s.mean, 2.0);
        assert!((s.std.unwrap() - 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn table_columns_align() {
        let t = render_table(&["A", "Value"], &[vec!["long name".into(), "1".into()]]);
        let lines: Vec<&str> = t.lines().collect();
        assert_eq!(lines[0].len(), lines[2].len());
        assert!(lines[2].ends_with(" 1"));
    }
}
