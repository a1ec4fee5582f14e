// `!(x > 0.0)` is how NaN gets rejected along with the bad values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use physio_jde::sampler::Variant;

use commands::Failure;
use config::RunConfig;

#[derive(Parser)]
#[command(name = "physio-jde", version, about = "Physiologically informed joint detection-estimation for ASL fMRI")]
struct Cli {
    /// TOML run configuration; every key has a default.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configuration seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (defaults to `paths.out`, or `paths.data` for `generate`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Impulse responses of the balloon model, plus one-parameter sweeps.
    SimulateBalloon,
    /// Writes the BRF-to-PRF operator as `omega.csv`.
    BuildOperator,
    /// Synthetic ASL dataset with its ground truth.
    Generate,
    /// Fits one method to `paths.data`.
    Fit {
        #[arg(long, default_value = "physio-2step")]
        method: Variant,
        /// Overrides `paths.data`.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Hemodynamic pass and its residual series.
    Residuals {
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Noise-variance sweep, `sweep.csv`.
    Sweep,
    /// Fits several methods against the dataset's truth, `report.json`.
    Compare {
        #[arg(long, value_delimiter = ',', default_value = "basic,physio-1step,physio-2step")]
        methods: Vec<Variant>,
        #[arg(long)]
        data: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> Result<(), Failure> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p).map_err(Failure::Config)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    let out = cli.out.clone().unwrap_or_else(|| cfg.paths.out.clone());
    match cli.command {
        Command::SimulateBalloon => commands::simulate_balloon(&cfg, &out),
        Command::BuildOperator => commands::build_operator(&cfg, &out),
        Command::Generate => {
            let out = cli.out.unwrap_or_else(|| cfg.paths.data.clone());
            commands::generate(&cfg, &out)
        }
        Command::Fit { method, data } => {
            if let Some(d) = data {
                cfg.paths.data = d;
            }
            commands::fit_cmd(&cfg, method, &out)
        }
        Command::Residuals { data } => {
            if let Some(d) = data {
                cfg.paths.data = d;
            }
            commands::residuals(&cfg, &out)
        }
        Command::Sweep => commands::sweep(&cfg, &out),
        Command::Compare { methods, data } => {
            if let Some(d) = data {
                cfg.paths.data = d;
            }
            commands::compare(&cfg, &methods, &out)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(msg)) => {
            eprintln!("configuration error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}
