//! Acceptance criteria, one PASS/FAIL line each. Exits non-zero if any fails.

use std::process::Command;
use std::time::{Duration, Instant};

use rand::seq::index::sample;
use rand::Rng;
use unlearn_core::data::{self, BlobSpec};
use unlearn_core::influence::{self, InstanceSpec};
use unlearn_core::metrics::{self, MetricsReport};
use unlearn_core::models::{self, Model, ModelKind};
use unlearn_core::numcore::{dot, finite_diff_grad, norm, sub, Matrix, RngStream};
use unlearn_core::privacy::{self, LdpParams};
use unlearn_core::smoothing::{self, gls_label, gls_loss, SmoothedBatch};
use unlearn_core::Method;
use unlearn_forge::run;
use unlearn_forge::RunConfig;

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    norm(&sub(a, b)) / norm(a).max(norm(b)).max(1e-12)
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    dot(a, b) / (norm(a) * norm(b))
}

fn random_matrix(rows: usize, cols: usize, rng: &mut impl Rng) -> Matrix {
    Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.random_range(-2.0..2.0)).collect()).unwrap()
}

fn gradient_fidelity() -> Outcome {
    let mut worst: f64 = 0.0;
    for case in 0..50u64 {
        let mut rng = RngStream::new(case, 100).rng();
        let kind = if case % 2 == 0 { ModelKind::Logistic } else { ModelKind::Mlp { hidden: 4 } };
        let (d, k, n) = (rng.random_range(2..6), rng.random_range(2..5), rng.random_range(3..9));
        let theta = (0..kind.param_count(d, k)).map(|_| rng.random_range(-1.0..1.0)).collect();
        let model = Model::from_parts(kind, d, k, 0.05, theta).unwrap();
        let rx = random_matrix(n, d, &mut rng);
        let ry: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
        let rt = models::one_hot(&ry, k);
        let fx = random_matrix(n, d, &mut rng);
        let fy: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
        for p in [0.0, 0.5, 1.0] {
            for alpha in [-1.0, 0.0, 0.5] {
                let batch = SmoothedBatch::new(fx.clone(), fy.clone(), vec![alpha; n], k).unwrap();
                let g = smoothing::mixed_grad(&model, &rx, &rt, &batch, p).unwrap();
                let loss = |t: &[f64]| smoothing::mixed_loss(&model.with_theta(t.to_vec()).unwrap(), &rx, &rt, &batch, p).unwrap();
                let fd = finite_diff_grad(loss, model.theta(), 1e-5).unwrap();
                worst = worst.max(rel_err(&g, &fd));
            }
        }
    }
    check(worst <= 1e-5, format!("450 evaluations, worst relative error {worst:.2e}"))
}

fn gls_decomposition() -> Outcome {
    let mut rng = RngStream::new(2, 100).rng();
    let mut worst: f64 = 0.0;
    for case in 0..1000 {
        let kind = if case % 2 == 0 { ModelKind::Logistic } else { ModelKind::Mlp { hidden: 3 } };
        let (d, k) = (rng.random_range(1..5), rng.random_range(2..8));
        let theta = (0..kind.param_count(d, k)).map(|_| rng.random_range(-1.0..1.0)).collect();
        let model = Model::from_parts(kind, d, k, 0.0, theta).unwrap();
        let x: Vec<f64> = (0..d).map(|_| rng.random_range(-2.0..2.0)).collect();
        let y = rng.random_range(0..k);
        let alpha = rng.random_range(-3.0..1.0);
        let soft = Matrix::from_rows(&[gls_label(y, k, alpha)]).unwrap();
        let direct = models::ce_loss(&model, &Matrix::from_rows(&[x.as_slice()]).unwrap(), &soft).unwrap();
        worst = worst.max((gls_loss(&model, &x, y, alpha).unwrap() - direct).abs());
    }
    check(worst <= 1e-10, format!("1000 cases, worst gap {worst:.2e}"))
}

fn influence_loo() -> Outcome {
    let spec = BlobSpec {
        classes: 2,
        per_class: 100,
        dim: 5,
        spread: 1.5,
        ..BlobSpec::default()
    };
    let (train, _) = data::gen_train_test(&spec, 1, 3).unwrap();
    let n = train.len();
    let targets = models::one_hot(train.labels(), 2);
    let start = Model::zeros(ModelKind::Logistic, 5, 2, 0.1).unwrap();
    let full = models::fit_stationary(&start, train.features(), &targets, 1e-11, 200).unwrap().model;
    let picks = sample(&mut RngStream::new(3, 101).rng(), n, 50).into_vec();
    let mut good = 0;
    let mut worst_cos: f64 = 1.0;
    for &i in &picks {
        let mut loo = targets.clone();
        loo.row_mut(i).iter_mut().for_each(|v| *v = 0.0);
        let refit = models::fit_stationary(&full, train.features(), &loo, 1e-11, 200).unwrap().model;
        let actual = sub(refit.theta(), full.theta());
        let infl = influence::influence_of(&full, train.features().row(i), train.labels()[i], &train, 0.0).unwrap();
        let predicted: Vec<f64> = infl.iter().map(|v| -v / n as f64).collect();
        let cos = cosine(&predicted, &actual);
        let rel = norm(&sub(&predicted, &actual)) / norm(&actual);
        worst_cos = worst_cos.min(cos);
        if cos >= 0.95 && rel <= 0.25 {
            good += 1;
        }
    }
    check(good >= 45, format!("{good}/50 points within tolerance, lowest cosine {worst_cos:.4}"))
}

fn theory_instances() -> Vec<unlearn_core::TheoryReport> {
    let grid = influence::default_alpha_grid();
    (0..100)
        .map(|seed| {
            let inputs = influence::generate_instance(&InstanceSpec::default(), seed).unwrap();
            influence::check_theorem2(&inputs, &grid, influence::DEFAULT_DAMPING).unwrap()
        })
        .collect()
}

fn ga_regimes(reports: &[unlearn_core::TheoryReport]) -> Outcome {
    let worse = reports.iter().filter(|r| r.dist_ga > r.dist_noop).count();
    let better = reports.iter().filter(|r| r.dist_ga < r.dist_noop).count();
    check(worse >= 1 && better >= 1, format!("GA farther than no-op on {worse}, closer on {better}"))
}

/// `|(d_r - d_f) + c (d_n - d_f)|` with `c = (1 - K) alpha / K`, written out from the deltas.
fn smoothed_distance(r: &unlearn_core::TheoryReport, alpha: f64, k: f64) -> f64 {
    let c = (1.0 - k) * alpha / k;
    let v: Vec<f64> = (0..r.delta_r.len())
        .map(|i| r.delta_r[i] - r.delta_f[i] + c * (r.delta_n[i] - r.delta_f[i]))
        .collect();
    norm(&v)
}

fn gls_beats_ga(reports: &[unlearn_core::TheoryReport]) -> Outcome {
    let grid = influence::default_alpha_grid();
    let k = 3.0;
    let mut eligible = 0;
    let mut failures = Vec::new();
    for (seed, r) in reports.iter().enumerate() {
        if r.inner >= -1e-8 {
            continue;
        }
        eligible += 1;
        let (best, best_d) = grid
            .iter()
            .map(|&a| (a, smoothed_distance(r, a, k)))
            .fold((0.0, f64::INFINITY), |acc, cur| if cur.1 < acc.1 { cur } else { acc });
        // Minimizer of the quadratic in c, mapped back to alpha.
        let u = sub(&r.delta_r, &r.delta_f);
        let v = sub(&r.delta_n, &r.delta_f);
        let closed = -dot(&u, &v) / dot(&v, &v) * k / (1.0 - k);
        let ok = best < 0.0
            && best_d < norm(&u)
            && r.best_alpha == Some(best)
            && influence::within_one_grid_step(&grid, best, closed);
        if !ok {
            failures.push(seed);
        }
    }
    check(
        eligible > 0 && failures.is_empty(),
        format!("{eligible} instances with inner < -1e-8, failures at seeds {failures:?}"),
    )
}

fn project_simplex(v: &[f64]) -> Vec<f64> {
    let mut u = v.to_vec();
    u.sort_by(|a, b| b.total_cmp(a));
    let (mut cum, mut theta) = (0.0, 0.0);
    for (i, &ui) in u.iter().enumerate() {
        cum += ui;
        let t = (cum - 1.0) / (i + 1) as f64;
        if ui - t > 0.0 {
            theta = t;
        }
    }
    v.iter().map(|x| (x - theta).max(0.0)).collect()
}

/// Projected gradient descent with Armijo backtracking.
fn simplex_oracle(a: f64, b: f64, k: usize) -> Vec<f64> {
    let w: Vec<f64> = (0..k).map(|j| if j == 0 { a } else { b }).collect();
    let f = |p: &[f64]| -> f64 {
        if p.iter().any(|&v| v <= 0.0) {
            return f64::INFINITY;
        }
        w.iter().zip(p).map(|(wj, pj)| -wj * pj.ln()).sum()
    };
    let mut p = vec![1.0 / k as f64; k];
    let mut fp = f(&p);
    for _ in 0..20_000 {
        let g: Vec<f64> = w.iter().zip(&p).map(|(wj, pj)| -wj / pj).collect();
        let mut step = 1.0;
        let mut moved = false;
        while step > 1e-20 {
            let trial = project_simplex(&p.iter().zip(&g).map(|(pj, gj)| pj - step * gj).collect::<Vec<_>>());
            let ft = f(&trial);
            let decrease: f64 = g.iter().zip(p.iter().zip(&trial)).map(|(gj, (pj, tj))| gj * (pj - tj)).sum();
            if ft.is_finite() && ft <= fp - 1e-4 * decrease {
                moved = p.iter().zip(&trial).any(|(x, y)| (x - y).abs() > 1e-15);
                p = trial;
                fp = ft;
                break;
            }
            step *= 0.5;
        }
        if !moved {
            break;
        }
    }
    p
}

fn ldp_bounds() -> Outcome {
    let mut rng = RngStream::new(6, 100).rng();
    let (mut ratio_gap, mut endpoint, mut oracle_gap): (f64, f64, f64) = (0.0, 0.0, 0.0);
    for _ in 0..200 {
        let k = rng.random_range(2..=10);
        let g2 = rng.random_range(0.5..2.0);
        let g1 = g2 * (1.0 + rng.random_range(0.05..3.0));
        let low = k as f64 * (1.0 - g1 / g2) / (k as f64 - 1.0);
        let p = LdpParams::new(k, rng.random_range(0.1..0.9) * low, g1, g2).unwrap();
        let eps = privacy::label_ldp_epsilon(&p).unwrap();
        let report = privacy::verify_ratio_bound(&p).unwrap();
        ratio_gap = ratio_gap.max((eps - report.empirical_max_log_ratio).abs());
        let (t, o) = privacy::optimal_prediction_distribution(&p).unwrap();
        let q = simplex_oracle(p.target_weight(), p.other_weight(), k);
        oracle_gap = oracle_gap.max((q[0] - t).abs());
        oracle_gap = q[1..].iter().fold(oracle_gap, |m, v| m.max((v - o).abs()));
        let at_end = LdpParams::new(k, 1.0 - g1 / g2, g1, g2).unwrap();
        endpoint = endpoint.max(privacy::label_ldp_epsilon(&at_end).unwrap());
    }
    check(
        ratio_gap <= 1e-6 && endpoint <= 1e-9 && oracle_gap <= 1e-6,
        format!("(a) gap {ratio_gap:.1e} (b) endpoint eps {endpoint:.1e} (c) oracle gap {oracle_gap:.1e}"),
    )
}

fn table_arithmetic() -> Outcome {
    let row = MetricsReport::new(100.0, 100.0, 98.19, 94.50);
    let retrain = MetricsReport::new(100.0, 100.0, 99.26, 94.71);
    let sum = metrics::sum_metric(&row);
    let gap = metrics::avg_gap(&row, &retrain);
    check(
        (sum - 392.69).abs() <= 1e-9 && (gap - 0.32).abs() <= 1e-9,
        format!("Sum {sum:.2}, Avg. Gap {gap:.2}"),
    )
}

fn toy_config() -> RunConfig {
    let mut cfg = RunConfig::default();
    for o in [
        "unlearn.methods = ga,ugradsl",
        "unlearn.epochs = 10",
        "unlearn.lr = 0.01",
        "method.ugradsl.p = 0.9",
        "unlearn.alpha = -1",
        "seeds = 0..5",
    ] {
        cfg.apply_override(o).unwrap();
    }
    cfg
}

fn toy_unlearning() -> Outcome {
    let cfg = toy_config();
    let report = run::benchmark(&cfg, 4).unwrap();
    let ra_orig: Vec<f64> = cfg
        .seeds
        .iter()
        .map(|&s| {
            let sc = run::prepare(&cfg, s, None).unwrap();
            metrics::accuracy(&sc.original, &sc.sets.retain).unwrap()
        })
        .collect();
    let ra_orig = ra_orig.iter().sum::<f64>() / ra_orig.len() as f64;
    let retrain = report.summary_for(Method::Retrain).unwrap();
    let ga = report.summary_for(Method::GradientAscent).unwrap();
    let ours = report.summary_for(Method::UGradSL).unwrap();
    let retrain_exact = report
        .cells
        .iter()
        .filter(|c| c.method == Method::Retrain)
        .all(|c| c.metrics.ua == 100.0);
    check(
        retrain_exact && ours.ua.mean >= 90.0 && ours.ra.mean >= ra_orig - 5.0 && ours.ua.mean > ga.ua.mean,
        format!(
            "retrain UA {:.2}, UGradSL UA {:.2} RA {:.2} (original RA {:.2}), GA UA {:.2}",
            retrain.ua.mean, ours.ua.mean, ours.ra.mean, ra_orig, ga.ua.mean
        ),
    )
}

fn additional_mia() -> Outcome {
    let mut base = RunConfig::default();
    for o in ["data.per_class = 400", "data.test_per_class = 200", "unlearn.methods = retrain", "seeds = 0..3"] {
        base.apply_override(o).unwrap();
    }
    let mut random = base.clone();
    random.apply_override("paradigm.kind = random").unwrap();
    random.apply_override("paradigm.fraction = 0.1").unwrap();
    let scores = |cfg: &RunConfig| -> Vec<f64> {
        run::benchmark(cfg, 4)
            .unwrap()
            .cells
            .iter()
            .map(|c| c.metrics.mia_additional)
            .collect()
    };
    let (cw, rnd) = (scores(&base), scores(&random));
    check(
        cw.iter().all(|&v| v >= 90.0) && rnd.iter().all(|&v| (40.0..=60.0).contains(&v)),
        format!("class-wise {cw:.1?}, random {rnd:.1?}"),
    )
}

fn reproducible_benchmark() -> Outcome {
    let bin = env!("CARGO_BIN_EXE_unlearn-forge");
    let runs: Vec<Vec<u8>> = ["1", "4"]
        .iter()
        .map(|jobs| {
            let out = Command::new(bin)
                .args(["benchmark", "--seeds", "0..3", "--format", "machine", "--jobs", jobs])
                .output()
                .expect("binary runs");
            assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
            out.stdout
        })
        .collect();
    check(runs[0] == runs[1] && !runs[0].is_empty(), format!("two reports of {} bytes", runs[0].len()))
}

fn main() {
    let mut failed = 0;
    let mut report = |id: u32, name: &str, limit: Duration, f: &dyn Fn() -> Outcome| {
        let start = Instant::now();
        let result = f();
        let took = start.elapsed();
        let (ok, detail) = match result {
            Ok(d) => (took <= limit, d),
            Err(d) => (false, d),
        };
        if !ok {
            failed += 1;
        }
        println!(
            "{} {id:>2} {name}: {detail} [{:.2}s of {}s]",
            if ok { "PASS" } else { "FAIL" },
            took.as_secs_f64(),
            limit.as_secs()
        );
    };
    let secs = Duration::from_secs;
    report(1, "gradient fidelity", secs(10), &gradient_fidelity);
    report(2, "GLS decomposition", secs(1), &gls_decomposition);
    report(3, "influence vs leave-one-out", secs(60), &influence_loo);
    // Criterion 4 pays for fitting the instances; 5 reuses them.
    let reports = std::cell::OnceCell::new();
    report(4, "GA can and cannot help", secs(60), &|| ga_regimes(reports.get_or_init(theory_instances)));
    report(5, "negative smoothing beats GA", secs(60), &|| gls_beats_ga(reports.get_or_init(theory_instances)));
    report(6, "label-LDP bounds", secs(30), &ldp_bounds);
    report(7, "toy unlearning", secs(60), &toy_unlearning);
    report(8, "table arithmetic", secs(1), &table_arithmetic);
    report(9, "additional MIA", secs(60), &additional_mia);
    report(10, "byte-identical benchmark", secs(120), &reproducible_benchmark);
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
