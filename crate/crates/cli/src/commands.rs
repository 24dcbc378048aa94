//! Subcommand bodies, callable without going through the binary.

use std::path::{Path, PathBuf};

use serde::Serialize;
use unlearn_core::data::{self, LabeledDataset};
use unlearn_core::metrics;
use unlearn_core::privacy::{self, LdpParams};
use unlearn_core::{Error, Method, Result};

use crate::config::RunConfig;
use crate::modelio;
use crate::report::{LdpOutput, RunReport};
use crate::run;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Table,
    Machine,
}

impl std::str::FromStr for Format {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "table" => Ok(Format::Table),
            "machine" | "json" => Ok(Format::Machine),
            _ => Err(format!("unknown format {s:?} (table, machine)")),
        }
    }
}

pub fn json<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value).map_err(std::io::Error::other)?;
    s.push('\n');
    Ok(s)
}

/// Writes to `out`, or returns the text for stdout.
pub fn emit(text: String, out: Option<&Path>) -> Result<Option<String>> {
    match out {
        Some(p) => {
            std::fs::write(p, text)?;
            Ok(None)
        }
        None => Ok(Some(text)),
    }
}

/// Writes the training set to `out` and, optionally, the test set to `test_out`.
pub fn gen_data(cfg: &RunConfig, seed: u64, out: &Path, test_out: Option<&Path>) -> Result<(LabeledDataset, LabeledDataset)> {
    cfg.validate()?;
    let (train, test) = run::generate_data(cfg, seed)?;
    data::save_csv(&train, out)?;
    if let Some(p) = test_out {
        data::save_csv(&test, p)?;
    }
    Ok((train, test))
}

/// Trains on `data` (a CSV) or on the configured generator, and saves the model.
pub fn train(cfg: &RunConfig, seed: u64, data_path: Option<&Path>, out: &Path) -> Result<f64> {
    cfg.validate()?;
    let train = match data_path {
        Some(p) => data::load_csv(p, None)?,
        None => run::generate_data(cfg, seed)?.0,
    };
    let model = run::train_original(cfg, &train, seed)?;
    modelio::save(&model, out)?;
    metrics::accuracy(&model, &train)
}

#[derive(Debug, Clone)]
pub struct UnlearnArgs {
    pub method: Method,
    pub seed: u64,
    pub model: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

/// One method on one seed; returns the report fragment.
pub fn unlearn(cfg: &RunConfig, args: &UnlearnArgs) -> Result<RunReport> {
    cfg.validate()?;
    let original = args.model.as_deref().map(modelio::load).transpose()?;
    let scenario = run::prepare(cfg, args.seed, original)?;
    let (cell, model) = run::run_cell(cfg, &scenario, args.method)?;
    if let Some(p) = &args.out {
        modelio::save(&model, p)?;
    }
    let mut echo = cfg.clone();
    echo.seeds = vec![args.seed];
    echo.methods = vec![args.method];
    Ok(RunReport::new(&echo, &[args.method], vec![cell], None))
}

pub fn ldp(classes: usize, alpha: f64, gamma1: f64, gamma2: f64) -> Result<LdpOutput> {
    let params = LdpParams::new(classes, alpha, gamma1, gamma2)?;
    let report = privacy::verify_ratio_bound(&params)?;
    Ok(LdpOutput {
        classes,
        alpha,
        gamma1,
        gamma2,
        report,
    })
}

pub fn load_config(path: Option<&Path>, overrides: &[String]) -> Result<RunConfig> {
    let mut cfg = match path {
        Some(p) => RunConfig::from_text(&std::fs::read_to_string(p)?)?,
        None => RunConfig::default(),
    };
    for o in overrides {
        cfg.apply_override(o)?;
    }
    Ok(cfg)
}

pub fn require_out(out: Option<&Path>, what: &str) -> Result<PathBuf> {
    out.map(Path::to_path_buf).ok_or_else(|| Error::Parse {
        line: 0,
        message: format!("{what} needs --out PATH"),
    })
}
