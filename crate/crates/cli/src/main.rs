use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use unlearn_core::{Method, Result};
use unlearn_forge::commands::{self, Format, UnlearnArgs};
use unlearn_forge::{error_line, exit_code};

#[derive(Parser)]
#[command(name = "unlearn-forge", version, about = "Machine unlearning experiments on synthetic data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Configuration file of `key = value` lines.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Single seed; overrides the configured seed list.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Seed range `N..M`, `N..=M` or a comma list.
    #[arg(long, global = true)]
    seeds: Option<String>,
    /// Worker threads for independent cells.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, default_value = "table")]
    format: Format,
    /// Extra `key=value` configuration, applied after the file.
    #[arg(long = "set", global = true)]
    set: Vec<String>,
    /// Record wall-clock run time (reports stop being byte-reproducible).
    #[arg(long, global = true)]
    wall_clock: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Write a generated training set (and optionally its test set) as CSV.
    GenData {
        #[arg(long)]
        test_out: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Train the original model and save it.
    Train {
        /// Train on this CSV instead of generated data.
        #[arg(long)]
        data: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Run one unlearning method on one seed.
    Unlearn {
        #[arg(long, default_value = "ugradsl")]
        method: Method,
        /// Original model file; trained from the config when absent.
        #[arg(long)]
        model: Option<PathBuf>,
        /// Where to write the report; the unlearned model goes to --out.
        #[arg(long)]
        report: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// All configured methods over all seeds, with the retrain reference.
    Benchmark {
        #[command(flatten)]
        common: Common,
    },
    /// Influence-function checks on seeded convex instances.
    VerifyTheory {
        #[command(flatten)]
        common: Common,
    },
    /// Label-LDP epsilon of negative label smoothing.
    Ldp {
        #[arg(long)]
        classes: usize,
        #[arg(long, allow_negative_numbers = true)]
        alpha: f64,
        #[arg(long, allow_negative_numbers = true)]
        gamma1: f64,
        #[arg(long, allow_negative_numbers = true)]
        gamma2: f64,
        #[command(flatten)]
        common: Common,
    },
}

impl Common {
    fn config(&self) -> Result<unlearn_forge::RunConfig> {
        let mut cfg = commands::load_config(self.config.as_deref(), &self.set)?;
        if let Some(s) = &self.seeds {
            cfg.apply_override(&format!("seeds={s}"))?;
        }
        if let Some(s) = self.seed {
            cfg.seeds = vec![s];
        }
        cfg.wall_clock |= self.wall_clock;
        Ok(cfg)
    }

    fn jobs(&self) -> usize {
        self.jobs
            .unwrap_or_else(|| std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1))
    }

    fn render<T: serde::Serialize>(&self, value: &T, table: impl FnOnce() -> String) -> Result<Option<String>> {
        let text = match self.format {
            Format::Table => table(),
            Format::Machine => commands::json(value)?,
        };
        commands::emit(text, self.out.as_deref())
    }
}

fn execute(command: Command) -> Result<Option<String>> {
    match command {
        Command::GenData { test_out, common } => {
            let cfg = common.config()?;
            let out = commands::require_out(common.out.as_deref(), "gen-data")?;
            let (train, test) = commands::gen_data(&cfg, cfg.seeds[0], &out, test_out.as_deref())?;
            log::info!("wrote {} training rows ({} test rows generated)", train.len(), test.len());
            Ok(None)
        }
        Command::Train { data, common } => {
            let cfg = common.config()?;
            let out = commands::require_out(common.out.as_deref(), "train")?;
            let acc = commands::train(&cfg, cfg.seeds[0], data.as_deref(), &out)?;
            Ok(Some(format!("training accuracy {acc:.2}\n")))
        }
        Command::Unlearn {
            method,
            model,
            report,
            common,
        } => {
            let cfg = common.config()?;
            let args = UnlearnArgs {
                method,
                seed: cfg.seeds[0],
                model,
                out: common.out.clone(),
            };
            let r = commands::unlearn(&cfg, &args)?;
            let text = match common.format {
                Format::Table => r.to_table(),
                Format::Machine => commands::json(&r)?,
            };
            commands::emit(text, report.as_deref())
        }
        Command::Benchmark { common } => {
            let cfg = common.config()?;
            let r = unlearn_forge::run::benchmark(&cfg, common.jobs())?;
            common.render(&r, || r.to_table())
        }
        Command::VerifyTheory { common } => {
            let cfg = common.config()?;
            let r = unlearn_forge::run::verify_theory(&cfg, common.jobs())?;
            common.render(&r, || r.to_table())
        }
        Command::Ldp {
            classes,
            alpha,
            gamma1,
            gamma2,
            common,
        } => {
            let r = commands::ldp(classes, alpha, gamma1, gamma2)?;
            common.render(&r, || r.to_table())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("UNLEARN_FORGE_LOG", "warn")).init();
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(Some(text)) => {
            print!("{text}");
            ExitCode::SUCCESS
        }
        Ok(None) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", error_line(&e));
            ExitCode::from(exit_code(e.kind()) as u8)
        }
    }
}
