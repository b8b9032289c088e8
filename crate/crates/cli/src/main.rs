//! `wsr-sim`: runs a drop sweep and writes results and CDF tables.

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::Parser;
use wsr_core::experiment::{run_experiment, write_outputs, Algorithm, ExperimentConfig};
use wsr_core::scenario::CsiCase;

#[derive(Debug, Parser)]
#[command(
    name = "wsr-sim",
    version,
    about = "Long-term weighted sum-rate experiments for cell-free and cellular uplinks"
)]
struct Args {
    /// TOML experiment config; defaults are used for anything it omits.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Number of user drops.
    #[arg(long)]
    drops: Option<usize>,
    /// Channel realizations per drop (fitting plus evaluation).
    #[arg(long)]
    samples: Option<usize>,
    /// Comma-separated: long-term-wmmse, power-only, lsfd, short-term-wmmse.
    #[arg(long, value_delimiter = ',')]
    algorithms: Option<Vec<String>>,
    /// Comma-separated: centralized, distributed, small-cells.
    #[arg(long, value_delimiter = ',')]
    cases: Option<Vec<String>>,
    /// Output directory.
    #[arg(long)]
    output: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long)]
    threads: Option<usize>,
}

fn build_config(args: &Args) -> anyhow::Result<ExperimentConfig> {
    let mut config = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading {}", path.display()))?;
            ExperimentConfig::parse_toml(&text)
                .with_context(|| format!("parsing {}", path.display()))?
        }
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = args.seed {
        config.scenario.seed = seed;
    }
    if let Some(drops) = args.drops {
        config.num_drops = drops;
    }
    if let Some(samples) = args.samples {
        config.samples_per_drop = samples;
    }
    if let Some(names) = &args.algorithms {
        config.algorithms = names
            .iter()
            .map(|n| Algorithm::parse(n.trim()).with_context(|| format!("unknown algorithm {n:?}")))
            .collect::<anyhow::Result<_>>()?;
    }
    if let Some(names) = &args.cases {
        config.cases = names
            .iter()
            .map(|n| CsiCase::parse(n.trim()).with_context(|| format!("unknown case {n:?}")))
            .collect::<anyhow::Result<_>>()?;
    }
    if let Some(out) = &args.output {
        config.output_path = out.clone();
    }
    config.validate()?;
    Ok(config)
}

fn run(args: Args) -> anyhow::Result<()> {
    let config = build_config(&args)?;
    if let Some(threads) = args.threads {
        if threads == 0 {
            bail!("--threads must be at least 1");
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .context("configuring the worker pool")?;
    }
    log::info!(
        "{} drops x {} jobs, {} samples per drop, seed {}",
        config.num_drops,
        config.jobs().len(),
        config.samples_per_drop,
        config.scenario.seed
    );
    let result = run_experiment(&config)?;
    write_outputs(&result, &config.output_path)
        .with_context(|| format!("writing to {}", config.output_path.display()))?;
    log::info!(
        "wrote {} rows to {}",
        result.rows.len(),
        config.output_path.display()
    );
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Args::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e:#}");
            ExitCode::FAILURE
        }
    }
}
