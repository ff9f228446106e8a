//! `cbae` — command-line front end for community-autoencoder experiments.
//!
//! Every subcommand prints one machine-readable JSON line to stdout on
//! success; failures print a single JSON line `{"error": "..."}` to stderr
//! and exit nonzero. Human-oriented detail lives in the files each run
//! writes, not in the terminal output.

use std::error::Error;
use std::path::PathBuf;
use std::process::ExitCode;

use cbae_core::data::{gen_synthetic, write_idx, SyntheticSpec};
use cbae_core::exp::{
    export_plot_data, probe_checkpoint, run_ensemble_baseline, run_experiment, ExperimentConfig,
};
use clap::{Args, Parser, Subcommand};

/// Default output root when neither `--out` nor the config names one.
const OUT_ROOT_ENV: &str = "CBAE_OUT_ROOT";

#[derive(Parser)]
#[command(
    name = "cbae",
    version,
    about = "Train communities of autoencoders and probe what they learn",
    after_help = "Environment:\n  CBAE_OUT_ROOT  default output root when neither --out nor the \
                  config's output_dir is set"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the full sweep (community sizes × entropy weights × seeds) of a config.
    Train(RunArgs),
    /// Train the matched control: independent single autoencoders, one per seed.
    Baseline(BaselineArgs),
    /// Re-probe saved checkpoints: encoder identifiability, concept decoding, RSA.
    Probe(ProbeArgs),
    /// Flatten a metrics log into a plot-ready CSV (x, y, K, seed).
    Export(ExportArgs),
    /// Write a synthetic concept dataset to disk as IDX images/labels plus a norms CSV.
    GenData(GenDataArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Experiment config (TOML).
    #[arg(long, value_name = "PATH")]
    config: PathBuf,
    /// Output root; overrides the config's output_dir and CBAE_OUT_ROOT.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Sweep cells trained in parallel. Training within a run stays sequential.
    #[arg(long, value_name = "N", default_value_t = 1)]
    workers: usize,
    /// Added to every sweep seed — rerun the same sweep on fresh seeds
    /// without editing the config.
    #[arg(long, value_name = "N", default_value_t = 0)]
    seed_offset: u64,
}

#[derive(Args)]
struct BaselineArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Ensemble size; defaults to the largest community size in the config,
    /// the capacity-matched control for the biggest community.
    #[arg(long, value_name = "N")]
    size: Option<usize>,
}

#[derive(Args)]
struct ProbeArgs {
    /// Experiment config (TOML) naming the dataset the checkpoints trained on.
    #[arg(long, value_name = "PATH")]
    config: PathBuf,
    /// Checkpoint files to probe.
    #[arg(value_name = "CHECKPOINT", num_args = 1.., required = true)]
    checkpoints: Vec<PathBuf>,
}

#[derive(Args)]
struct ExportArgs {
    /// Metrics log (JSON lines) produced by `train` or `baseline`.
    #[arg(long, value_name = "PATH")]
    log: PathBuf,
    /// Metric for the x column.
    #[arg(long, value_name = "METRIC", default_value = "recon_loss")]
    x: String,
    /// Metric for the y column.
    #[arg(long, value_name = "METRIC", default_value = "concept_accuracy")]
    y: String,
    /// CSV file to write.
    #[arg(long, value_name = "PATH")]
    out: PathBuf,
}

#[derive(Args)]
struct GenDataArgs {
    #[arg(long, default_value_t = 16)]
    concepts: usize,
    /// Attribute count; images are attributes × attributes pixels.
    #[arg(long, default_value_t = 8)]
    attributes: usize,
    #[arg(long, default_value_t = 200)]
    per_concept: usize,
    /// Gaussian pixel-noise standard deviation.
    #[arg(long, default_value_t = 0.15)]
    noise: f64,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// Directory for images-idx3-ubyte, labels-idx1-ubyte, and norms.csv.
    ///
    /// Note: the bundled IDX loader follows the 10-class digit convention, so
    /// exports with more than 10 concepts are readable only by external tools.
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if e.use_stderr() => {
            // Argument mistakes get the same single-line JSON contract as
            // runtime failures; JSON escaping keeps clap's usage text on one line.
            eprintln!("{}", serde_json::json!({ "error": e.to_string() }));
            return ExitCode::FAILURE;
        }
        Err(e) => {
            // --help / --version
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
    };
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", serde_json::json!({ "error": e.to_string() }));
            ExitCode::FAILURE
        }
    }
}

fn dispatch(command: Command) -> Result<(), Box<dyn Error>> {
    match command {
        Command::Train(args) => {
            let config = load_run_config(&args)?;
            let summary = run_experiment(&config, args.workers)?;
            let dir = config.run_dir()?;
            println!(
                "{}",
                serde_json::json!({
                    "experiment_id": config.experiment_id,
                    "run_dir": dir.display().to_string(),
                    "metrics_log": dir.join("metrics.jsonl").display().to_string(),
                    "summary": dir.join("summary.json").display().to_string(),
                    "cells": summary.cells.len(),
                })
            );
            Ok(())
        }
        Command::Baseline(args) => {
            let config = load_run_config(&args.run)?;
            let size = args.size.unwrap_or_else(|| {
                config
                    .sweep
                    .community_sizes
                    .iter()
                    .copied()
                    .max()
                    .unwrap_or(1)
            });
            let summary = run_ensemble_baseline(&config, size, args.run.workers)?;
            let id = format!("{}_baseline", config.experiment_id);
            let dir = config.run_dir()?.with_file_name(&id);
            println!(
                "{}",
                serde_json::json!({
                    "experiment_id": id,
                    "ensemble_size": size,
                    "run_dir": dir.display().to_string(),
                    "metrics_log": dir.join("metrics.jsonl").display().to_string(),
                    "cells": summary.cells.len(),
                })
            );
            Ok(())
        }
        Command::Probe(args) => {
            let config = ExperimentConfig::load(&args.config)?;
            for path in &args.checkpoints {
                let snapshot = probe_checkpoint(&config, path)?;
                println!("{}", serde_json::to_string(&snapshot)?);
            }
            Ok(())
        }
        Command::Export(args) => {
            let rows = export_plot_data(&args.log, &args.x, &args.y, &args.out)?;
            println!(
                "{}",
                serde_json::json!({
                    "out": args.out.display().to_string(),
                    "rows": rows,
                    "columns": [args.x, args.y, "K", "seed"],
                })
            );
            Ok(())
        }
        Command::GenData(args) => {
            let dataset = gen_synthetic(&SyntheticSpec {
                concepts: args.concepts,
                attributes: args.attributes,
                per_concept: args.per_concept,
                noise: args.noise,
                seed: args.seed,
            })?;
            std::fs::create_dir_all(&args.out)
                .map_err(|e| format!("cannot create {}: {e}", args.out.display()))?;
            let images = args.out.join("images-idx3-ubyte");
            let labels = args.out.join("labels-idx1-ubyte");
            let norms = args.out.join("norms.csv");
            write_idx(&dataset, &images, &labels)?;
            dataset
                .attributes()
                .expect("synthetic datasets carry norms")
                .save_csv(&norms)?;
            println!(
                "{}",
                serde_json::json!({
                    "images": images.display().to_string(),
                    "labels": labels.display().to_string(),
                    "norms": norms.display().to_string(),
                    "count": dataset.len(),
                    "dim": dataset.dim(),
                    "concepts": args.concepts,
                })
            );
            Ok(())
        }
    }
}

/// Loads the config and settles the output root and seed plan from flags.
fn load_run_config(args: &RunArgs) -> Result<ExperimentConfig, Box<dyn Error>> {
    let mut config = ExperimentConfig::load(&args.config)?;
    if let Some(out) = &args.out {
        config.output_dir = Some(out.display().to_string());
    }
    if config.output_dir.is_none() {
        config.output_dir = std::env::var(OUT_ROOT_ENV).ok().filter(|v| !v.is_empty());
    }
    if config.output_dir.is_none() {
        return Err(format!(
            "no output root: pass --out, set output_dir in {}, or set {OUT_ROOT_ENV}",
            args.config.display()
        )
        .into());
    }
    if args.seed_offset != 0 {
        for seed in &mut config.sweep.seeds {
            *seed = seed.wrapping_add(args.seed_offset);
        }
    }
    Ok(config)
}
