//! `nndiff`: config-driven experiments on non-Gaussian diffusion processes.

mod commands;
mod config;
mod error;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::config::ExperimentConfig;
use crate::error::CliError;
use crate::output::RunDir;

#[derive(Debug, Parser)]
#[command(
    name = "nndiff",
    version,
    about = "Experiments on diffusion processes with non-Gaussian increments"
)]
struct Cli {
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// JSON experiment config; the built-in defaults are used without one.
    #[arg(long)]
    config: Option<PathBuf>,

    /// Dotted-path override, e.g. `--set process.T=128`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,

    /// Output directory (overrides `output`).
    #[arg(long)]
    out: Option<PathBuf>,

    /// Master seed (overrides `seed`).
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Tabulate ᾱ_k and γ̄_k, plus the DDPM or VDM chain for those schedules.
    Moments(Common),
    /// Closed-form vs quadrature KL for every pairing over a grid.
    KlTable(Common),
    /// Forward ensemble with per-step moment checks.
    Simulate(Common),
    /// Convergence sweep of one increment kind towards the Gaussian walk.
    VerifyInvariance {
        #[command(flatten)]
        common: Common,
        /// Increment kind to sweep (overrides `q_kind`).
        #[arg(long)]
        kind: Option<String>,
        /// Comma-separated grid sizes (overrides `sweep.T`).
        #[arg(long = "T", value_delimiter = ',')]
        steps: Option<Vec<usize>>,
    },
    /// Train the MLP noise predictor on the configured data.
    Train(Common),
    /// Reverse sampling with every increment kind.
    Sample {
        #[command(flatten)]
        common: Common,
        /// Use a trained checkpoint instead of the analytic score.
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// ELBO decomposition on data draws.
    Elbo {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: Option<PathBuf>,
        /// Evaluate all four (q, p) pairings instead of the configured one.
        #[arg(long)]
        all_pairings: bool,
    },
    /// Probability-flow log-likelihood of data draws.
    Likelihood {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: Option<PathBuf>,
    },
}

fn json_string(s: &str) -> String {
    serde_json::Value::String(s.to_string()).to_string()
}

fn load(common: &Common, mut extra: Vec<String>) -> Result<ExperimentConfig, CliError> {
    let mut overrides = common.overrides.clone();
    if let Some(out) = &common.out {
        overrides.push(format!("output={}", json_string(&out.to_string_lossy())));
    }
    if let Some(seed) = common.seed {
        overrides.push(format!("seed={seed}"));
    }
    overrides.append(&mut extra);
    ExperimentConfig::load(common.config.as_deref(), &overrides)
}

fn model_override(model: &Option<PathBuf>) -> Vec<String> {
    model
        .iter()
        .map(|p| {
            format!(
                "score={{\"kind\":\"mlp\",\"path\":{}}}",
                json_string(&p.to_string_lossy())
            )
        })
        .collect()
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Config(format!("thread pool: {e}")))?;
    }
    let (name, cfg) = match &cli.command {
        Command::Moments(c) => ("moments", load(c, vec![])?),
        Command::KlTable(c) => ("kl-table", load(c, vec![])?),
        Command::Simulate(c) => ("simulate", load(c, vec![])?),
        Command::Train(c) => ("train", load(c, vec![])?),
        Command::VerifyInvariance {
            common,
            kind,
            steps,
        } => {
            let mut extra = Vec::new();
            if let Some(k) = kind {
                extra.push(format!("q_kind={k}"));
            }
            if let Some(s) = steps {
                extra.push(format!(
                    "sweep.T={}",
                    serde_json::to_string(s).expect("list serializes")
                ));
            }
            ("verify-invariance", load(common, extra)?)
        }
        Command::Sample { common, model } => ("sample", load(common, model_override(model))?),
        Command::Elbo { common, model, .. } => ("elbo", load(common, model_override(model))?),
        Command::Likelihood { common, model } => {
            ("likelihood", load(common, model_override(model))?)
        }
    };
    let mut out = RunDir::create(&cfg.output)?;
    let verdict = match &cli.command {
        Command::Moments(_) => commands::moments(&cfg, &mut out)?,
        Command::KlTable(_) => commands::kl_table(&cfg, &mut out)?,
        Command::Simulate(_) => commands::simulate(&cfg, &mut out)?,
        Command::VerifyInvariance { .. } => commands::verify_invariance(&cfg, &mut out)?,
        Command::Train(_) => commands::train_model(&cfg, &mut out)?,
        Command::Sample { .. } => commands::sample_all(&cfg, &mut out)?,
        Command::Elbo { all_pairings, .. } => commands::elbo_terms(&cfg, *all_pairings, &mut out)?,
        Command::Likelihood { .. } => commands::likelihood(&cfg, &mut out)?,
    };
    out.finish(name, &cfg, verdict)?;
    log::info!("wrote {}", cfg.output.display());
    match verdict {
        Some(false) => Err(CliError::Check(format!(
            "{name}: see {} for details",
            cfg.output.display()
        ))),
        _ => Ok(()),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
