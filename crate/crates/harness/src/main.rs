use std::path::PathBuf;

use anyhow::Result;
use blanket_harness::report::cmd_report;
use blanket_harness::{cmd_discover, cmd_evaluate, cmd_generate, MaskSource, RunConfig};
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "blanket", version, about = "Markov-boundary prediction benchmark")]
struct Cli {
    /// JSON run configuration; built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory; overrides `output_dir` from the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Overrides `master_seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; overrides `parallelism`.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate task bundles and the manifest.
    Generate,
    /// Run boundary discovery on every task.
    Discover,
    /// Evaluate regressors on mask sources.
    Evaluate {
        /// Comma-separated: all, oracle, estimated, layered, proximity, perturbed.
        #[arg(long, value_delimiter = ',', default_value = "all,oracle")]
        masks: Vec<MaskSource>,
    },
    /// Aggregate records into report tables and map exports.
    Report,
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(out) = cli.out {
        cfg.output_dir = out;
    }
    if let Some(seed) = cli.seed {
        cfg.master_seed = seed;
    }
    if let Some(jobs) = cli.jobs {
        cfg.parallelism = jobs;
    }
    cfg.validate()?;
    let out = cfg.output_dir.clone();
    match cli.command {
        Command::Generate => {
            let s = cmd_generate(&cfg, &out)?;
            log::info!("generated {}, skipped {}, failed {}", s.generated, s.skipped, s.failed);
        }
        Command::Discover => {
            let rows = cmd_discover(&cfg, &out)?;
            for r in rows {
                log::info!("F={} {}: f1 {:.3} completion {:.3} time {:.3}s", r.f, r.method, r.f1, r.completion, r.time_s);
            }
        }
        Command::Evaluate { masks } => {
            for source in masks {
                let n = cmd_evaluate(&cfg, &out, source)?;
                log::info!("{source}: {n} records");
            }
        }
        Command::Report => {
            let report = cmd_report(&out, cfg.grid_step)?;
            log::info!(
                "wrote {} gap rows, {} table rows, {} cost rows, {} gain maps",
                report.gaps.len(),
                report.table2.len(),
                report.costs.len(),
                report.rewards.len()
            );
        }
    }
    Ok(())
}
