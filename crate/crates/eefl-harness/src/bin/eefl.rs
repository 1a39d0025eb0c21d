//! Command-line front end for the early-exit federated learning simulator.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use eefl_core::checkpoint;
use eefl_harness::config::ExperimentConfig;
use eefl_harness::experiment::{prepare_initial_params, run_experiment, synth_spec};
use eefl_harness::metrics::{read_metrics_csv, write_metrics_csv, write_xi_csv};
use eefl_harness::report::{render_comparison, render_summary, write_plots};
use eefl_harness::synth::generate;

#[derive(Parser)]
#[command(
    name = "eefl",
    about = "Federated training of early-exit models on synthetic tasks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check a config file and everything it references.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Run the federated experiment described by a config file.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Override the config seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory for metrics.csv, xi.csv and final.eefl1.
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Client worker threads (1 = strictly sequential).
        #[arg(long, default_value_t = 1)]
        parallel: usize,
    },
    /// Pre-train centrally on the source-domain corpus and save a checkpoint.
    Pretrain {
        #[arg(long)]
        config: PathBuf,
        /// Checkpoint file to write.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Summarize a metrics CSV; optionally compare against another run and
    /// emit SVG plots.
    Report {
        metrics: PathBuf,
        #[arg(long)]
        compare: Option<PathBuf>,
        #[arg(long)]
        plots: Option<PathBuf>,
        /// Loss threshold for the rounds-to-threshold column.
        #[arg(long)]
        threshold: Option<f64>,
    },
}

fn load_config(path: &Path, seed: Option<u64>) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::from_path(path)?;
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Validate { config } => {
            ExperimentConfig::from_path(&config)?;
            println!("{}: OK", config.display());
        }
        Command::Run {
            config,
            seed,
            out,
            parallel,
        } => {
            let cfg = load_config(&config, seed)?;
            std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
            let output = run_experiment(&cfg, parallel)?;

            write_metrics_csv(&out.join("metrics.csv"), &output.metrics)?;
            write_xi_csv(&out.join("xi.csv"), &output.xi_log)?;
            checkpoint::save(
                &out.join("final.eefl1"),
                &output.final_params,
                cfg.model_config().fingerprint(),
            )?;
            if !output.skipped.is_empty() {
                println!("skipped {} divergent client updates", output.skipped.len());
            }
            println!("wrote {}", out.join("metrics.csv").display());
            print!("{}", render_summary(&output.metrics, None));
        }
        Command::Pretrain { config, out, seed } => {
            let cfg = load_config(&config, seed)?;
            let corpora = generate(&synth_spec(&cfg), cfg.seed);
            let (params, log) = prepare_initial_params(&cfg, &corpora)?;
            checkpoint::save(&out, &params, cfg.model_config().fingerprint())?;
            if let Some(last) = log.last() {
                let losses: Vec<String> = last.per_exit.iter().map(|l| format!("{l:.6}")).collect();
                println!(
                    "pre-trained {} epochs; final per-exit training loss: {}",
                    log.len(),
                    losses.join(" ")
                );
            }
            println!("wrote {}", out.display());
        }
        Command::Report {
            metrics,
            compare,
            plots,
            threshold,
        } => {
            let main = read_metrics_csv(&metrics)?;
            print!("{}", render_summary(&main, threshold));
            if let Some(other) = compare {
                let other_metrics = read_metrics_csv(&other)?;
                println!(
                    "\ncomparison ({} -> {}):",
                    metrics.display(),
                    other.display()
                );
                print!("{}", render_comparison(&main, &other_metrics));
            }
            if let Some(dir) = plots {
                write_plots(&dir, &main)?;
                println!("plots written to {}", dir.display());
            }
        }
    }
    Ok(())
}
