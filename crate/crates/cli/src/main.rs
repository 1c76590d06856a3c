mod error;
mod manifest;
mod stages;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use metrocast::simulate::SimConfig;

use error::{CliError, Result};
use manifest::Inputs;
use stages::{EvalOptions, FeatureOptions, FitOptions, IngestOptions, PredictOptions, RunConfig, FORMAT_VERSION};

/// Post-disruption travel time forecasting for a metro line.
#[derive(Debug, Parser)]
#[command(name = "metrocast", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate a line and write block and disruption logs.
    Simulate {
        /// Simulation settings as JSON; defaults apply to missing fields.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        days: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Log directory.
        #[arg(long)]
        out: PathBuf,
        /// Ground-truth directory, kept apart from the logs.
        #[arg(long)]
        truth_dir: PathBuf,
    },
    /// Rebuild train trajectories and resolve disruption windows.
    Ingest {
        /// Directory with events.csv, disruptions.csv and topology.json.
        #[arg(long)]
        logs: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        options: IngestOptions,
    },
    /// Build post-disruption observations and split them by disruption.
    Features {
        /// Output directory of `ingest`.
        #[arg(long)]
        ingest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        options: FeatureOptions,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Sample the posterior on the training observations.
    Fit {
        /// Output directory of `features`.
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        options: FitOptions,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Worker threads; defaults to the available cores.
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Posterior predictive draws, intervals and scores per observation.
    Predict {
        /// Output directory of `fit`.
        #[arg(long)]
        fit: PathBuf,
        /// Observations CSV to predict.
        #[arg(long)]
        observations: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        options: PredictOptions,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Accuracy metrics by distance and calibration tables.
    Eval {
        /// Output directory of `fit`.
        #[arg(long)]
        fit: PathBuf,
        /// Output directory of `predict`.
        #[arg(long)]
        predictions: PathBuf,
        /// Observations CSV the predictions were made for.
        #[arg(long)]
        observations: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        options: EvalOptions,
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Every stage in turn, driven by one JSON config.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        truth_dir: PathBuf,
        /// Overrides the config's seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides the config's thread count.
        #[arg(long)]
        threads: Option<usize>,
    },
}

fn load_sim_config(path: Option<&Path>, inputs: &mut Inputs) -> Result<SimConfig> {
    match path {
        Some(p) => {
            let bytes = inputs.read(p, FORMAT_VERSION)?;
            serde_json::from_slice(&bytes).map_err(|e| error::at(p)(e.into()))
        }
        None => Ok(SimConfig::default()),
    }
}

fn dispatch(command: Command) -> Result<()> {
    let threads = |t: Option<usize>| t.unwrap_or_else(stages::default_threads);
    match command {
        Command::Simulate { config, days, seed, out, truth_dir } => {
            let mut inputs = Inputs::default();
            let mut cfg = load_sim_config(config.as_deref(), &mut inputs)?;
            if let Some(d) = days {
                cfg.days = d;
            }
            if let Some(s) = seed {
                cfg.seed = s;
            }
            stages::simulate(&cfg, &out, &truth_dir, inputs)
        }
        Command::Ingest { logs, out, options } => stages::ingest(&logs, &out, &options),
        Command::Features { ingest, out, options, seed } => stages::features(&ingest, &out, &options, seed),
        Command::Fit { features, out, options, seed, threads: t } => {
            stages::fit_stage(&features, &out, &options, seed, threads(t))
        }
        Command::Predict { fit, observations, out, options, seed, threads: t } => {
            stages::predict(&fit, &observations, &out, &options, seed, threads(t))
        }
        Command::Eval { fit, predictions, observations, out, options, threads: t } => {
            stages::eval(&fit, &predictions, &observations, &out, &options, threads(t))
        }
        Command::Run { config, out, truth_dir, seed, threads: t } => {
            let mut cfg: RunConfig = stages::read_json_file(&config)?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if t.is_some() {
                cfg.threads = t;
            }
            stages::run(&cfg, &config, &out, &truth_dir)
        }
    }
}

/// Parses `args` (program name first) and runs the command. `Ok(false)`
/// means clap printed help or version text instead.
fn execute<I, T>(args: I) -> Result<bool>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return Ok(false);
        }
        Err(e) => return Err(CliError::Usage(e.render().to_string().trim().to_string())),
    };
    dispatch(cli.command)?;
    Ok(true)
}

fn main() -> ExitCode {
    match execute(std::env::args_os()) {
        Ok(_) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

#[cfg(test)]
mod tests;
