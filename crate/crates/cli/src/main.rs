use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use ferrycache::exec::Execution;
use ferrycache::experiment::{
    bounds_to_csv, load_config, run_experiment, ExperimentSpec, Preset, Scenario,
};
use ferrycache::sim::availability_bounds;

#[derive(Debug, Parser)]
#[command(name = "ferrycache", version, about = "UAV ferry caching simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, clap::Args)]
struct ConfigArgs {
    /// Flat `key = value` configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one key, e.g. `--set n_anchor=2`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Start from a named preset instead of the full-scale defaults.
    #[arg(long)]
    preset: Option<Preset>,
}

impl ConfigArgs {
    fn load(&self) -> Result<ferrycache::sim::SimConfig> {
        let cfg = load_config(self.config.as_deref(), self.preset, &self.set)?;
        Ok(cfg)
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run a scenario and write its CSV files.
    Run {
        #[command(flatten)]
        config: ConfigArgs,
        /// Seed or comma-separated list of seeds.
        #[arg(long, value_delimiter = ',', required = true)]
        seed: Vec<u64>,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        /// custom, policy_evolution, latency_sweep, preference_shift,
        /// access_delay, cdo_convergence or bound_only.
        #[arg(long, default_value = "custom")]
        scenario: Scenario,
        /// Run replications one after another.
        #[arg(long)]
        sequential: bool,
    },
    /// Print the analytical availability bound per community as CSV.
    Bound {
        #[command(flatten)]
        config: ConfigArgs,
    },
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run {
            config,
            seed,
            out,
            scenario,
            sequential,
        } => {
            let spec = ExperimentSpec {
                scenario,
                base: config.load()?,
                seeds: seed,
                output_dir: out,
                execution: if sequential {
                    Execution::Sequential
                } else {
                    Execution::default()
                },
            };
            let report = run_experiment(&spec)
                .with_context(|| format!("scenario {scenario} failed"))?;
            for f in &report.files {
                println!("{}", f.display());
            }
        }
        Command::Bound { config } => {
            let bounds = availability_bounds(&config.load()?)?;
            print!("{}", bounds_to_csv(&bounds));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
