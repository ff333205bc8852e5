use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};
use normforge_cli::config::{parse_config, parse_list, resolve_seed, RunConfig, SEED_ENV};
use normforge_cli::sweep::{render, report, run_sweep};
use normforge_cli::train::{run_training, Status};
use normforge_cli::verify::{render_report, run_verify, VerifyOptions};

#[derive(Parser)]
#[command(name = "normforge", version, about = "Steepest-descent optimizer experiments on small networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train once and write log.csv and summary.json.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Output directory; defaults to run.out_dir.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train every config at every learning-rate multiplier and seed.
    Sweep {
        /// Repeat to compare several variants on one grid.
        #[arg(long, required = true)]
        config: Vec<PathBuf>,
        /// Comma-separated multipliers; defaults to sweep.rho of the first config.
        #[arg(long)]
        rho: Option<String>,
        /// Comma-separated seeds; defaults to sweep.seeds of the first config.
        #[arg(long)]
        seeds: Option<String>,
        #[arg(long, default_value_t = 1)]
        workers: usize,
        /// Output directory; defaults to run.out_dir of the first config.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the acceptance checks and report one record per criterion.
    Verify {
        /// Multiplies every upper-bound tolerance.
        #[arg(long, default_value_t = 1.0)]
        tol_scale: f64,
        /// Print the report as JSON.
        #[arg(long)]
        json: bool,
        /// Only run these criteria, e.g. `--only 1,5,7`.
        #[arg(long)]
        only: Option<String>,
    },
    /// Re-aggregate an existing sweep directory.
    Report {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, default_value_t = 0.1)]
        tau_rob: f64,
    },
}

fn load(path: &PathBuf) -> anyhow::Result<RunConfig> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    parse_config(&text).with_context(|| format!("in {}", path.display()))
}

fn env_seed() -> Option<String> {
    std::env::var(SEED_ENV).ok()
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<ExitCode> {
    match cli.command {
        Command::Run { config, out, seed } => {
            let mut cfg = load(&config)?;
            cfg.seed = resolve_seed(cfg.seed, seed, env_seed().as_deref())?;
            let out = out.unwrap_or_else(|| cfg.out_dir.clone());
            let summary = run_training(&cfg, &out)?;
            println!("{}", serde_json::to_string_pretty(&summary)?);
            Ok(if summary.status == Status::Ok { ExitCode::SUCCESS } else { ExitCode::FAILURE })
        }
        Command::Sweep { config, rho, seeds, workers, out } => {
            let mut bases = config.iter().map(load).collect::<anyhow::Result<Vec<_>>>()?;
            let env = env_seed();
            for cfg in &mut bases {
                cfg.seed = resolve_seed(cfg.seed, None, env.as_deref())?;
            }
            let first = &bases[0];
            let rho = match rho {
                Some(s) => parse_list::<f64>(&s).map_err(|e| anyhow::anyhow!("--rho: {e}"))?,
                None => first.sweep.rho.clone(),
            };
            if rho.iter().any(|r| !(r.is_finite() && *r > 0.0)) {
                anyhow::bail!("--rho entries must be positive");
            }
            let seeds = match seeds {
                Some(s) => parse_list::<u64>(&s).map_err(|e| anyhow::anyhow!("--seeds: {e}"))?,
                None => first.sweep.seeds.clone(),
            };
            let out = out.unwrap_or_else(|| first.out_dir.clone());
            let (result, _) = run_sweep(&bases, &rho, &seeds, first.sweep.tau_rob, workers, Some(&out))?;
            print!("{}", render(&result));
            Ok(ExitCode::SUCCESS)
        }
        Command::Verify { tol_scale, json, only } => {
            let only = match only {
                Some(s) => Some(parse_list::<usize>(&s).map_err(|e| anyhow::anyhow!("--only: {e}"))?),
                None => None,
            };
            let opts = VerifyOptions { tol_scale, only, ..VerifyOptions::default() };
            let records = run_verify(&opts)?;
            if json {
                println!("{}", serde_json::to_string_pretty(&records)?);
            } else {
                print!("{}", render_report(&records));
            }
            Ok(if records.iter().all(|r| r.pass) { ExitCode::SUCCESS } else { ExitCode::FAILURE })
        }
        Command::Report { input, tau_rob } => {
            let result = report(&input, tau_rob)?;
            print!("{}", render(&result));
            Ok(ExitCode::SUCCESS)
        }
    }
}
