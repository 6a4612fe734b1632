//! `dualsparse`: train networks, turn them into sparse GP posteriors, update
//! them with new data, run continual-learning sequences and evaluate.
//!
//! Exit codes: 0 success, 2 configuration or I/O problem, 3 numerical failure.
//! Errors are printed to stderr as `{"error": {"kind": ..., "message": ...}}`.

mod commands;
mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use dualsparse::{Error, ErrorClass, Result};

use crate::commands::{default_report, EvalArgs, EvalModel, RetrainArm};
use crate::config::RunConfig;

#[derive(Parser)]
#[command(name = "dualsparse", version, about = "Sparse GP posteriors from trained MLPs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a network and write its weights checkpoint plus a test report.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        /// Report path (default `<out>.report.json`).
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Build a posterior from a weights checkpoint and training data.
    Fit {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Baseline method to fit instead of the configured one.
        #[arg(long)]
        baseline: Option<String>,
        /// Posterior mean: zero_mean, nn_mean or pseudo_targets.
        #[arg(long)]
        mode: Option<String>,
        /// Rows of `--data` to use: train, val, test or all.
        #[arg(long, default_value = "train")]
        split: String,
    },
    /// Write per-row latent moments and class probabilities as CSV.
    Predict {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        posterior: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Posterior mean: zero_mean, nn_mean or pseudo_targets.
        #[arg(long)]
        mode: Option<String>,
    },
    /// Add new data to a posterior without retraining.
    Update {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        posterior: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Also time retraining from scratch on old plus new data.
        #[arg(long, requires_all = ["config", "train_data"])]
        retrain: bool,
        /// Original training CSV, for `--retrain`.
        #[arg(long)]
        train_data: Option<PathBuf>,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Train a sequence of class-split tasks with the function-space regularizer.
    Cl {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        /// Where to save the final memory buffer.
        #[arg(long)]
        buffer_out: Option<PathBuf>,
    },
    /// Evaluate a posterior or a plain network on labeled data.
    Eval {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, conflicts_with = "checkpoint", required_unless_present = "checkpoint")]
        posterior: Option<PathBuf>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Posterior mean: zero_mean, nn_mean or pseudo_targets.
        #[arg(long)]
        mode: Option<String>,
        #[arg(long, default_value = "all")]
        split: String,
        /// Unlabeled out-of-distribution inputs; adds an entropy AUROC.
        #[arg(long)]
        ood: Option<PathBuf>,
    },
    /// Predict with the dense GP over all training points.
    OracleGp {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Inputs to predict at.
        #[arg(long)]
        test: PathBuf,
        /// Posterior mean: zero_mean, nn_mean or pseudo_targets.
        #[arg(long)]
        mode: Option<String>,
        #[arg(long, default_value = "train")]
        split: String,
    },
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
}

fn load_config(path: &Path, seed: Option<u64>) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(path)?;
    cfg.override_seed(seed);
    Ok(cfg)
}

fn load_optional(path: Option<&Path>, seed: Option<u64>) -> Result<Option<RunConfig>> {
    path.map(|p| load_config(p, seed)).transpose()
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Train { common, data, report } => {
            let cfg = load_config(&common.config, common.seed)?;
            let report = report.unwrap_or_else(|| default_report(&common.out));
            commands::train(&cfg, &data, &common.out, &report)
        }
        Command::Fit {
            common,
            checkpoint,
            data,
            baseline,
            mode,
            split,
        } => {
            let cfg = load_config(&common.config, common.seed)?;
            commands::fit(
                &cfg,
                &checkpoint,
                &data,
                &common.out,
                mode.as_deref(),
                baseline.as_deref(),
                &split,
            )
        }
        Command::Predict {
            config,
            posterior,
            data,
            out,
            seed,
            mode,
        } => {
            let cfg = load_optional(config.as_deref(), seed)?;
            commands::predict(cfg.as_ref(), &posterior, &data, &out, mode.as_deref(), seed)
        }
        Command::Update {
            config,
            posterior,
            data,
            out,
            seed,
            retrain,
            train_data,
            report,
        } => {
            let cfg = load_optional(config.as_deref(), seed)?;
            let target = cfg.as_ref().map_or("y", |c| c.data.target.as_str()).to_string();
            let report = report.unwrap_or_else(|| default_report(&out));
            let arm = match (retrain, cfg.as_ref(), train_data.as_deref()) {
                (true, Some(cfg), Some(train_data)) => Some(RetrainArm { cfg, train_data }),
                (true, _, _) => {
                    return Err(Error::InvalidConfig("--retrain needs --config and --train-data".into()));
                }
                _ => None,
            };
            commands::update(&target, &posterior, &data, &out, &report, arm)
        }
        Command::Cl {
            common,
            data,
            buffer_out,
        } => {
            let cfg = load_config(&common.config, common.seed)?;
            commands::cl(&cfg, &data, &common.out, buffer_out.as_deref())
        }
        Command::Eval {
            config,
            posterior,
            checkpoint,
            data,
            out,
            seed,
            mode,
            split,
            ood,
        } => {
            let cfg = load_optional(config.as_deref(), seed)?;
            let model = match (&posterior, &checkpoint) {
                (Some(p), _) => EvalModel::Posterior(p),
                (None, Some(c)) => EvalModel::Network(c),
                (None, None) => return Err(Error::InvalidConfig("pass --posterior or --checkpoint".into())),
            };
            commands::eval(EvalArgs {
                cfg: cfg.as_ref(),
                model,
                data: &data,
                out: &out,
                split: &split,
                ood: ood.as_deref(),
                mode: mode.as_deref(),
                seed,
            })
        }
        Command::OracleGp {
            common,
            checkpoint,
            data,
            test,
            mode,
            split,
        } => {
            let cfg = load_config(&common.config, common.seed)?;
            commands::oracle_gp(&cfg, &checkpoint, &data, &test, &common.out, mode.as_deref(), &split)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let body = serde_json::json!({ "error": { "kind": e.kind(), "message": e.to_string() } });
            eprintln!("{body}");
            match e.class() {
                ErrorClass::Input => ExitCode::from(2),
                ErrorClass::Numeric => ExitCode::from(3),
            }
        }
    }
}
