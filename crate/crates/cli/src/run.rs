//! Seeded experiment cells: data, original model, split, unlearning, metrics.

use rayon::prelude::*;
use serde::Serialize;
use unlearn_core::data::{self, ForgetSplit, LabeledDataset};
use unlearn_core::influence::{self, TheoryReport};
use unlearn_core::metrics::{self, EvalSets, MetricsReport};
use unlearn_core::numcore::streams;
use unlearn_core::{unlearn, Error, Method, Model, Result, RngStream, TrainConfig};

use crate::config::RunConfig;
use crate::report::{RunReport, TheoryRun, TheorySummary};

/// Everything one seed needs before any unlearning method runs.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub seed: u64,
    pub train: LabeledDataset,
    pub split: ForgetSplit,
    pub original: Model,
    pub train_cfg: TrainConfig,
    pub sets: EvalSets,
}

pub fn generate_data(cfg: &RunConfig, seed: u64) -> Result<(LabeledDataset, LabeledDataset)> {
    data::gen_train_test(&cfg.data.blobs, cfg.data.test_per_class, seed)
}

/// Fresh model trained on `train`; initialization uses the training stream of `seed`.
pub fn train_original(cfg: &RunConfig, train: &LabeledDataset, seed: u64) -> Result<Model> {
    let mut rng = RngStream::new(seed, streams::TRAIN).rng();
    let init = Model::init(cfg.model.kind, train.dim(), train.num_classes(), cfg.model.l2, &mut rng)?;
    Ok(unlearn_core::models::sgd_train(&init, train, &cfg.train_config(seed))?.0)
}

/// Builds the scenario for `seed`; `original` replaces the freshly trained model.
pub fn prepare(cfg: &RunConfig, seed: u64, original: Option<Model>) -> Result<Scenario> {
    let (train, test) = generate_data(cfg, seed)?;
    let original = match original {
        Some(m) => {
            if m.input_dim() != train.dim() || m.num_classes() != train.num_classes() {
                return Err(Error::Dimension(format!(
                    "model expects d={}, K={} but the data has d={}, K={}",
                    m.input_dim(),
                    m.num_classes(),
                    train.dim(),
                    train.num_classes()
                )));
            }
            m
        }
        None => train_original(cfg, &train, seed)?,
    };
    let mut split_rng = RngStream::new(seed, streams::SPLIT).rng();
    let (split, test) = data::apply_paradigm(&train, &test, &cfg.paradigm, &mut split_rng)?;
    split.require_both_sides()?;
    let retain = split.retain_set(&train);
    let member_idx = metrics::member_sample(retain.len(), &mut RngStream::new(seed, streams::MEMBER_SAMPLE).rng());
    let sets = EvalSets {
        forget: split.forget_set(&train),
        member_sample: retain.subset(&member_idx),
        retain,
        test,
    };
    Ok(Scenario {
        seed,
        train,
        split,
        original,
        train_cfg: cfg.train_config(seed),
        sets,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Cell {
    pub method: Method,
    pub seed: u64,
    #[serde(flatten)]
    pub metrics: MetricsReport,
    /// Parameter updates performed by the method.
    pub steps: usize,
    /// Total variation between forget and test prediction histograms.
    pub streisand_tv: f64,
}

pub fn run_cell(cfg: &RunConfig, scenario: &Scenario, method: Method) -> Result<(Cell, Model)> {
    let ucfg = cfg.unlearn_config(method, scenario.seed);
    let result = unlearn::unlearn(&scenario.original, &scenario.train, &scenario.split, &ucfg, &scenario.train_cfg)?;
    let mut report = metrics::evaluate(&result.model, &scenario.sets)?;
    if cfg.wall_clock {
        report.rte_seconds = Some(result.rte_seconds);
    }
    let tv = metrics::streisand(&result.model, &scenario.sets.forget, &scenario.sets.test)?.tv;
    log::debug!("seed {} {}: UA {:.2} RA {:.2}", scenario.seed, method, report.ua, report.ra);
    Ok((
        Cell {
            method,
            seed: scenario.seed,
            metrics: report,
            steps: result.steps,
            streisand_tv: tv,
        },
        result.model,
    ))
}

fn pool(jobs: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::InvalidParameter(format!("cannot start worker pool: {e}")))
}

/// Methods in report order, with retrain first so gaps can be measured.
pub fn benchmark_methods(cfg: &RunConfig) -> Vec<Method> {
    let mut methods = vec![Method::Retrain];
    for &m in &cfg.methods {
        if !methods.contains(&m) {
            methods.push(m);
        }
    }
    methods
}

/// Every configured method on every seed, plus the retrain reference.
pub fn benchmark(cfg: &RunConfig, jobs: usize) -> Result<RunReport> {
    cfg.validate()?;
    let methods = benchmark_methods(cfg);
    let pool = pool(jobs)?;
    let mut cells: Vec<Cell> = pool.install(|| -> Result<Vec<Cell>> {
        let scenarios = cfg
            .seeds
            .par_iter()
            .map(|&s| prepare(cfg, s, None))
            .collect::<Result<Vec<_>>>()?;
        let grid: Vec<(Method, &Scenario)> = methods
            .iter()
            .flat_map(|&m| scenarios.iter().map(move |s| (m, s)))
            .collect();
        grid.par_iter()
            .map(|(m, s)| run_cell(cfg, s, *m).map(|(c, _)| c))
            .collect()
    })?;
    for i in 0..cells.len() {
        let seed = cells[i].seed;
        let reference = cells
            .iter()
            .find(|c| c.method == Method::Retrain && c.seed == seed)
            .map(|c| c.metrics.clone())
            .expect("retrain runs on every seed");
        let gap = metrics::avg_gap(&cells[i].metrics, &reference);
        cells[i].metrics.avg_gap = Some(gap);
    }
    let theory = if cfg.with_theory {
        Some(verify_theory(cfg, jobs)?.summary)
    } else {
        None
    };
    Ok(RunReport::new(cfg, &methods, cells, theory))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TheoryInstance {
    pub seed: u64,
    pub closed_form_within_one_step: Option<bool>,
    #[serde(flatten)]
    pub report: TheoryReport,
}

/// Exactness and label-smoothing checks on `theory.instances` convex instances.
pub fn verify_theory(cfg: &RunConfig, jobs: usize) -> Result<TheoryRun> {
    cfg.validate()?;
    if cfg.theory.instances == 0 {
        return Err(Error::InvalidParameter("theory.instances must be >= 1".into()));
    }
    let spec = cfg.instance_spec();
    let grid = influence::default_alpha_grid();
    let seeds: Vec<u64> = (0..cfg.theory.instances as u64).collect();
    let instances = pool(jobs)?.install(|| {
        seeds
            .par_iter()
            .map(|&seed| -> Result<TheoryInstance> {
                let inputs = influence::generate_instance(&spec, seed)?;
                let report = influence::check_theorem2(&inputs, &grid, cfg.theory.damping)?;
                let within = match (report.best_alpha, report.closed_form_alpha) {
                    (Some(b), Some(c)) => Some(influence::within_one_grid_step(&grid, b, c)),
                    _ => None,
                };
                Ok(TheoryInstance {
                    seed,
                    closed_form_within_one_step: within,
                    report,
                })
            })
            .collect::<Result<Vec<_>>>()
    })?;
    let summary = TheorySummary::from_instances(&instances);
    Ok(TheoryRun {
        tool: env!("CARGO_PKG_NAME").into(),
        version: env!("CARGO_PKG_VERSION").into(),
        config: cfg.to_text(),
        damping: cfg.theory.damping,
        summary,
        instances,
    })
}
