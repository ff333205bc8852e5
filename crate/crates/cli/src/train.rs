//! Single training runs: the step loop, `log.csv` and `summary.json`.

use std::fs;
use std::path::Path;
use std::time::Instant;

use anyhow::Context;
use normforge_core::data::make_dataset;
use normforge_core::models::Mlp;
use normforge_core::presets::{build_variant, lr_schedule};
use normforge_core::Error;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;

/// Training losses above this multiple of `max(initial loss, 1)` count as diverged.
pub const DIVERGENCE_FACTOR: f64 = 1e6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub step: usize,
    pub train_loss: f64,
    pub lr_mult: f64,
    pub eff_step_matrix: f64,
    pub eff_step_base: f64,
    pub dual_total: f64,
    pub model_estimate: f64,
    pub clamp_active: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Ok,
    Diverged,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub status: Status,
    /// Full-dataset loss after the last step; `None` when diverged.
    pub final_loss: Option<f64>,
    /// Mean minibatch loss over the last tenth of the steps.
    pub mean_last_10pct: Option<f64>,
    pub initial_loss: f64,
    pub wall_time_s: f64,
    pub clamp_rate: f64,
    pub steps_completed: usize,
    pub variant: String,
    pub seed: u64,
    pub eta_m: f64,
    pub eta_b: f64,
    pub config_echo: String,
    pub version_hash: String,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub summary: Summary,
    /// Every completed step, regardless of `run.log_every`.
    pub rows: Vec<LogRow>,
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Git-style blob hash of the package name and version.
pub fn version_hash() -> String {
    let version = concat!(env!("CARGO_PKG_NAME"), " ", env!("CARGO_PKG_VERSION"));
    let mut h = Sha256::new();
    h.update(format!("blob {}\0{version}", version.len()).as_bytes());
    hex(&h.finalize())
}

fn is_divergence(e: &Error) -> bool {
    matches!(e, Error::NonFinite(_) | Error::NumericInstability { .. })
}

/// Runs the configured training loop in memory.
pub fn train(cfg: &RunConfig) -> anyhow::Result<TrainOutcome> {
    cfg.validate()?;
    let start = Instant::now();
    let mut model_spec = cfg.model.clone();
    model_spec.seed = model_spec.seed.wrapping_add(cfg.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    let model = Mlp::new(model_spec)?;
    let data = make_dataset(&cfg.data)?;
    let full = data.full_batch();
    let mut w = model.init_params();
    let initial_loss = model.forward_loss(&w, &full)?;
    let limit = DIVERGENCE_FACTOR * initial_loss.max(1.0);

    let mut opt = build_variant(&cfg.variant, &cfg.polar)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5EED_BA7C);
    let mut queue = Vec::new();
    let mut rows = Vec::with_capacity(cfg.steps);
    let mut diverged = false;

    for k in 0..cfg.steps {
        if queue.is_empty() {
            queue = data.epoch(cfg.batch_size, &mut rng);
            queue.reverse();
        }
        let batch = queue.pop().expect("epoch is nonempty");
        let (loss, grads) = model.backward(&w, &batch)?;
        if !loss.is_finite() || loss > limit || !grads.is_finite() {
            diverged = true;
            break;
        }
        let lr_mult = lr_schedule(k + 1, &cfg.schedule, 1.0)?;
        let report = match opt.step(&mut w, loss, &grads, lr_mult) {
            Ok(r) => r,
            Err(e) if is_divergence(&e) => {
                diverged = true;
                break;
            }
            Err(e) => return Err(e.into()),
        };
        rows.push(LogRow {
            step: k,
            train_loss: loss,
            lr_mult,
            eff_step_matrix: report.effective_step_matrix,
            eff_step_base: report.effective_step_base,
            dual_total: report.dual_total,
            model_estimate: report.model_estimate,
            clamp_active: report.clamp_active,
        });
        if !w.is_finite() {
            diverged = true;
            break;
        }
    }

    let final_loss = if diverged {
        None
    } else {
        match model.forward_loss(&w, &full) {
            Ok(l) if l.is_finite() && l <= limit => Some(l),
            Ok(_) => None,
            Err(e) if is_divergence(&e) => None,
            Err(e) => return Err(e.into()),
        }
    };
    let status = if final_loss.is_some() { Status::Ok } else { Status::Diverged };
    let mean_last_10pct = match (status, rows.len()) {
        (Status::Ok, n) if n > 0 => {
            let tail = n.div_ceil(10);
            Some(rows[n - tail..].iter().map(|r| r.train_loss).sum::<f64>() / tail as f64)
        }
        _ => None,
    };
    let clamps = rows.iter().filter(|r| r.clamp_active).count();
    let summary = Summary {
        status,
        final_loss,
        mean_last_10pct,
        initial_loss,
        wall_time_s: start.elapsed().as_secs_f64(),
        clamp_rate: if rows.is_empty() { 0.0 } else { clamps as f64 / rows.len() as f64 },
        steps_completed: rows.len(),
        variant: cfg.variant.name(),
        seed: cfg.seed,
        eta_m: cfg.variant.eta_m,
        eta_b: cfg.variant.eta_b,
        config_echo: cfg.echo(),
        version_hash: version_hash(),
    };
    Ok(TrainOutcome { summary, rows })
}

pub fn write_log(path: &Path, rows: &[LogRow], log_every: usize) -> anyhow::Result<()> {
    let mut out = csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    let last = rows.len().saturating_sub(1);
    for (i, row) in rows.iter().enumerate() {
        if i % log_every.max(1) == 0 || i == last {
            out.serialize(row)?;
        }
    }
    out.flush()?;
    Ok(())
}

pub fn write_summary(path: &Path, summary: &Summary) -> anyhow::Result<()> {
    let text = serde_json::to_string_pretty(summary)?;
    fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

/// Trains and writes `log.csv` and `summary.json` into `out_dir`.
pub fn run_training(cfg: &RunConfig, out_dir: &Path) -> anyhow::Result<Summary> {
    fs::create_dir_all(out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
    let outcome = train(cfg)?;
    write_log(&out_dir.join("log.csv"), &outcome.rows, cfg.log_every)?;
    write_summary(&out_dir.join("summary.json"), &outcome.summary)?;
    Ok(outcome.summary)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::parse_config;

    fn cfg(extra: &str) -> RunConfig {
        let sd = if extra.contains("sd_type") { "" } else { "sd_type = constrained\n" };
        let text = format!(
            "[variant]\n{sd}product_norm = inf\nbackup_norm = ada_inf\n{extra}\n\
             [model]\nlayer_dims = [4, 8, 2]\n[data]\nkind = teacher_net\nsize = 64\n[run]\nsteps = 40\nbatch_size = 16\n"
        );
        parse_config(&text).unwrap()
    }

    #[test]
    fn zero_steps_reports_initial_loss() {
        let mut c = cfg("");
        c.steps = 0;
        c.schedule.total_steps = 0;
        let out = train(&c).unwrap();
        assert!(out.rows.is_empty());
        assert_eq!(out.summary.status, Status::Ok);
        assert_eq!(out.summary.final_loss, Some(out.summary.initial_loss));
        assert_eq!(out.summary.mean_last_10pct, None);
    }

    #[test]
    fn training_is_deterministic_and_reduces_loss() {
        let c = cfg("eta_m = 0.05\neta_b = 0.01");
        let a = train(&c).unwrap();
        let b = train(&c).unwrap();
        assert_eq!(a.rows, b.rows);
        assert_eq!(a.summary.final_loss, b.summary.final_loss);
        assert!(a.summary.final_loss.unwrap() < a.summary.initial_loss);
        assert_eq!(a.rows.len(), 40);
    }

    #[test]
    fn huge_learning_rate_diverges() {
        let c = cfg("sd_type = regularized\neta_m = 1000\neta_b = 1000");
        let out = train(&c).unwrap();
        assert_eq!(out.summary.status, Status::Diverged);
        assert_eq!(out.summary.final_loss, None);
    }

    #[test]
    fn version_hash_is_stable_hex() {
        let h = version_hash();
        assert_eq!(h.len(), 64);
        assert_eq!(h, version_hash());
    }
}
