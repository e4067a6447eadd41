use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use fire_core::metrics::{plasticity_report, ReportOptions, DEFAULT_DELTA, DEFAULT_TAU};
use fire_core::orthogonalize::fire_network;
use fire_core::verify::{run_suite, SuiteConfig};
use fire_core::NsCoefficients;
use fire_harness::ablation::{run_ablation_iters, TRAJECTORY_FILE};
use fire_harness::checkpoint::{load_checkpoint, save_checkpoint};
use fire_harness::config::{ExperimentConfig, OUTPUT_ROOT_ENV};
use fire_harness::report::{report, summarize_methods, summarize_runs, summary_table};
use fire_harness::runner::{run_experiment_with, RunOptions};

#[derive(Parser)]
#[command(name = "fire", version, about = "FIRE reinitialization experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Coeffs {
    Cubic,
    Quintic,
    Muon,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Text,
}

#[derive(clap::Args)]
struct Overrides {
    /// Run this single seed instead of the config's list.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (overrides the config and the output-root variable).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Apply FIRE to a checkpoint in place.
    Orthogonalize {
        checkpoint: PathBuf,
        /// Newton–Schulz iterations; defaults to 10 (cubic) or 5 (quintics).
        #[arg(long)]
        iters: Option<usize>,
        #[arg(long, value_enum, default_value = "cubic")]
        coeffs: Coeffs,
        /// Comma-separated per-layer flags, e.g. 1,1,0. All layers by default.
        #[arg(long, value_delimiter = ',')]
        mask: Option<Vec<u8>>,
    },
    /// Weight-based plasticity report of a checkpoint.
    Metrics {
        checkpoint: PathBuf,
        #[arg(long, value_enum, default_value = "text")]
        format: Format,
        #[arg(long, default_value_t = DEFAULT_DELTA)]
        delta: f64,
        #[arg(long, default_value_t = DEFAULT_TAU)]
        tau: f64,
    },
    /// Run every bound verifier; exits nonzero if any bound is violated.
    Verify {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Run an experiment config over its seeds.
    Run {
        config: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
        /// Continue interrupted runs from their latest boundary checkpoint.
        #[arg(long)]
        resume: bool,
    },
    /// FIRE runs across Newton–Schulz iteration counts.
    Ablate {
        config: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "1,5,10,30")]
        iters: Vec<usize>,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Summarize the run CSVs in a directory.
    Report { dir: PathBuf },
}

fn load_config(path: &Path, o: &Overrides) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(seed) = o.seed {
        cfg.seeds = vec![seed];
    }
    if let Some(out) = &o.out {
        cfg.output_dir = if out.is_relative() {
            std::env::current_dir()?.join(out)
        } else {
            out.clone()
        };
    }
    cfg.validate()?;
    Ok(cfg)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Orthogonalize {
            checkpoint,
            iters,
            coeffs,
            mask,
        } => {
            let mut ckpt = load_checkpoint(&checkpoint)?;
            let coeffs = match coeffs {
                Coeffs::Cubic => NsCoefficients::PAPER_CUBIC,
                Coeffs::Quintic => NsCoefficients::APPENDIX_QUINTIC,
                Coeffs::Muon => NsCoefficients::MUON_QUINTIC,
            };
            let iters = iters.unwrap_or(coeffs.default_iters());
            let n = ckpt.params.num_layers();
            let mask: Vec<bool> = match mask {
                Some(m) => m.iter().map(|&v| v != 0).collect(),
                None => vec![true; n],
            };
            ckpt.params = fire_network(&ckpt.params, iters, &coeffs, &mask)?;
            save_checkpoint(&checkpoint, &ckpt)?;
            println!(
                "orthogonalized {} layers of {} ({coeffs}, {iters} iterations)",
                mask.iter().filter(|m| **m).count(),
                checkpoint.display()
            );
        }
        Command::Metrics {
            checkpoint,
            format,
            delta,
            tau,
        } => {
            let ckpt = load_checkpoint(&checkpoint)?;
            let r = plasticity_report(&ckpt.params, None, None, ReportOptions { delta, tau })?;
            match format {
                Format::Csv => {
                    println!("layer,dfi,srank,dormant,min_activity");
                    for i in 0..r.dfi.len() {
                        let min = r.activity_scores[i].iter().cloned().fold(f64::INFINITY, f64::min);
                        println!("{i},{},{},{},{min}", r.dfi[i], r.srank[i], r.dormant[i]);
                    }
                }
                Format::Text => {
                    println!(
                        "{:<6} {:>14} {:>7} {:>8} {:>13}",
                        "layer", "dfi", "srank", "dormant", "min activity"
                    );
                    for i in 0..r.dfi.len() {
                        let min = r.activity_scores[i].iter().cloned().fold(f64::INFINITY, f64::min);
                        println!(
                            "{i:<6} {:>14.6e} {:>7} {:>8} {min:>13.4}",
                            r.dfi[i], r.srank[i], r.dormant[i]
                        );
                    }
                    println!("mean dfi {:.6e}, dormant units {}", r.mean_dfi(), r.total_dormant());
                }
            }
        }
        Command::Verify { seed } => {
            let report = run_suite(&SuiteConfig {
                seed,
                ..SuiteConfig::default()
            });
            for e in &report.entries {
                println!(
                    "{:<20} {} cases={} violations={} skipped={}",
                    e.name,
                    if e.passed() { "PASS" } else { "FAIL" },
                    e.cases,
                    e.violations,
                    e.skipped
                );
                if let Some(t) = &e.tightest {
                    println!("    tightest: {t}");
                }
                for f in &e.failures {
                    println!("    {f}");
                }
            }
            return Ok(if report.all_hold() {
                ExitCode::SUCCESS
            } else {
                ExitCode::FAILURE
            });
        }
        Command::Run {
            config,
            overrides,
            resume,
        } => {
            let cfg = load_config(&config, &overrides)?;
            let records = run_experiment_with(
                &cfg,
                RunOptions {
                    resume,
                    halt_after_chunk: None,
                },
            )?;
            print!("{}", summary_table(&summarize_methods(&summarize_runs(&records))));
            println!("records written to {}", cfg.resolved_output_dir().display());
        }
        Command::Ablate {
            config,
            iters,
            overrides,
        } => {
            if iters.is_empty() {
                bail!("--iters needs at least one value");
            }
            let cfg = load_config(&config, &overrides)?;
            let result = run_ablation_iters(&cfg, &iters)?;
            print!(
                "{}",
                summary_table(&summarize_methods(&summarize_runs(&result.records)))
            );
            let out = cfg.resolved_output_dir();
            println!("trajectory written to {}", out.join(TRAJECTORY_FILE).display());
        }
        Command::Report { dir } => {
            let dir = if dir.is_relative() && !dir.exists() {
                match std::env::var_os(OUTPUT_ROOT_ENV) {
                    Some(root) => PathBuf::from(root).join(&dir),
                    None => dir,
                }
            } else {
                dir
            };
            let rows = report(&dir).with_context(|| format!("summarizing {}", dir.display()))?;
            print!("{}", summary_table(&rows));
        }
    }
    Ok(ExitCode::SUCCESS)
}
