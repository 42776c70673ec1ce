//! Experiment runner behind the `lora-flow` binary.
//!
//! `lora-flow run --config cfg.json` writes `<out>/<experiment>.csv` and
//! `<out>/summary.json`. Exit status is 0 when every built-in check passes,
//! 1 when a check fails, 2 for config errors and 3 for numerical failures.

pub mod config;
pub mod experiments;
pub mod output;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};
use serde::Serialize;

use crate::error::{Error, Result};
pub use config::{ExperimentConfig, Overrides, W0Source};
use experiments::Inputs;
use output::{ExperimentOutput, RunSummary};

pub const THREADS_ENV: &str = "LORA_FLOW_THREADS";

/// Experiment names with one-line descriptions, in listing order.
pub const EXPERIMENTS: [(&str, &str); 6] = [
    (
        "gd-convergence",
        "affine interpolation of LoRA gradient descent vs the RK4 flow across step sizes",
    ),
    (
        "trace-flow",
        "closed-form trace-squared trajectory, its limit, and an RK4 cross-check",
    ),
    (
        "fullrank-flow",
        "full-rank trace-squared flow and the rank-r vs full-rank relative error",
    ),
    (
        "approx-error",
        "Monte Carlo expected squared relative error vs (n^2+n-2)/(nr+2)",
    ),
    (
        "moments",
        "uniform-sphere and chi-squared moment identities in dimension nr",
    ),
    (
        "lowrank-eym",
        "spectral-init Frobenius flow vs the truncated SVD",
    ),
];

#[derive(Debug, Parser)]
#[command(name = "lora-flow", version, about = "LoRA gradient-flow experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run one experiment from a JSON config.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        experiment: Option<String>,
    },
    /// List available experiments.
    List {
        #[arg(long)]
        json: bool,
    },
}

#[derive(Serialize)]
struct Listing<'a> {
    name: &'a str,
    description: &'a str,
}

pub fn list_experiments(json: bool) -> String {
    if json {
        let items: Vec<Listing> = EXPERIMENTS
            .iter()
            .map(|&(name, description)| Listing { name, description })
            .collect();
        return serde_json::to_string(&items).expect("static strings serialize");
    }
    EXPERIMENTS
        .iter()
        .map(|(n, d)| format!("{n:<16}{d}\n"))
        .collect()
}

/// Result of a completed run.
#[derive(Debug)]
pub struct RunOutcome {
    pub output: ExperimentOutput,
    pub csv_path: PathBuf,
    pub summary_path: PathBuf,
}

pub fn threads_from_env() -> Result<usize> {
    match std::env::var(THREADS_ENV) {
        Ok(v) if !v.trim().is_empty() => v.trim().parse().map_err(|_| {
            Error::Config(format!(
                "{THREADS_ENV} must be a non-negative integer, got `{v}`"
            ))
        }),
        _ => Ok(0),
    }
}

/// Loads, validates and runs a config; `base` resolves relative `w0` paths.
pub fn run_config(cfg: &ExperimentConfig, base: &Path, threads: usize) -> Result<RunOutcome> {
    cfg.validate()?;
    let started = Instant::now();
    let square = cfg.experiment != "lowrank-eym";
    let inputs = Inputs {
        cfg,
        w0: cfg.resolve_w0(base, square)?,
        threads,
    };
    let output = match cfg.experiment.as_str() {
        "gd-convergence" => experiments::gd_convergence(&inputs)?,
        "trace-flow" => experiments::trace_flow(&inputs)?,
        "fullrank-flow" => experiments::fullrank_flow(&inputs)?,
        "approx-error" => experiments::approx_error(&inputs)?,
        "moments" => experiments::moments(&inputs)?,
        "lowrank-eym" => experiments::lowrank_eym(&inputs)?,
        other => unreachable!("validated experiment name {other}"),
    };

    let out_dir = cfg.out.clone().unwrap_or_else(|| PathBuf::from("out"));
    std::fs::create_dir_all(&out_dir)?;
    let csv_path = out_dir.join(format!("{}.csv", cfg.experiment));
    output.table.write_csv(&csv_path)?;
    let summary_path = out_dir.join("summary.json");
    RunSummary {
        experiment: &cfg.experiment,
        config: cfg,
        metrics: &output.metrics,
        checks: &output.checks,
        passed: output.passed(),
        wall_time_s: started.elapsed().as_secs_f64(),
    }
    .write(&summary_path)?;
    Ok(RunOutcome {
        output,
        csv_path,
        summary_path,
    })
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) => 2,
        _ => 3,
    }
}

pub fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::List { json } => {
            let text = list_experiments(json);
            if json {
                println!("{text}");
            } else {
                print!("{text}");
            }
            ExitCode::SUCCESS
        }
        Command::Run {
            config,
            seed,
            out,
            experiment,
        } => {
            let result = (|| {
                let mut cfg = ExperimentConfig::load(&config)?;
                cfg.apply(&Overrides {
                    seed,
                    out,
                    experiment,
                });
                let base = config.parent().map(Path::to_path_buf).unwrap_or_default();
                run_config(&cfg, &base, threads_from_env()?)
            })();
            match result {
                Ok(outcome) => {
                    for c in &outcome.output.checks {
                        println!(
                            "{} {} = {:e}",
                            if c.passed { "PASS" } else { "FAIL" },
                            c.name,
                            c.value
                        );
                    }
                    println!(
                        "wrote {} and {}",
                        outcome.csv_path.display(),
                        outcome.summary_path.display()
                    );
                    if outcome.output.passed() {
                        ExitCode::SUCCESS
                    } else {
                        ExitCode::from(1)
                    }
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    ExitCode::from(exit_code(&e))
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn listing_is_stable() {
        let text = list_experiments(false);
        let names: Vec<&str> = text
            .lines()
            .map(|l| l.split_whitespace().next().unwrap())
            .collect();
        assert_eq!(
            names,
            [
                "gd-convergence",
                "trace-flow",
                "fullrank-flow",
                "approx-error",
                "moments",
                "lowrank-eym"
            ]
        );
        let json: serde_json::Value = serde_json::from_str(&list_experiments(true)).unwrap();
        assert_eq!(json.as_array().unwrap().len(), 6);
        assert_eq!(json[5]["name"], "lowrank-eym");
    }

    #[test]
    fn error_codes() {
        assert_eq!(exit_code(&Error::Config("x".into())), 2);
        assert_eq!(
            exit_code(&Error::FlowDiverged {
                last_finite_time: 0.0
            }),
            3
        );
    }
}
