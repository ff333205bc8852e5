//! Learning-rate sweeps: a `ρ × seed` grid per variant, run on a sized thread
//! pool, plus aggregation and the robustness fraction.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use anyhow::Context;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::train::{train, write_log, write_summary, Status, TrainOutcome};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRecord {
    pub variant: String,
    pub rho: f64,
    pub seed: u64,
    pub status: Status,
    pub final_loss: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub variant: String,
    pub rho: f64,
    pub runs: usize,
    pub diverged: usize,
    /// Mean final loss over the runs that did not diverge.
    pub mean_loss: Option<f64>,
    pub std_loss: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustnessRow {
    pub variant: String,
    pub best_loss: Option<f64>,
    pub fraction: f64,
}

#[derive(Debug, Clone)]
pub struct SweepResult {
    pub records: Vec<SweepRecord>,
    pub aggregates: Vec<AggregateRow>,
    pub robustness: Vec<RobustnessRow>,
}

/// One grid point: which config, which multiplier, which seed.
#[derive(Debug, Clone, Copy)]
struct Job {
    base: usize,
    rho: f64,
    seed: u64,
}

fn run_dir_name(variant: &str, rho: f64, seed: u64) -> String {
    format!("{variant}_rho{rho}_seed{seed}")
}

/// Runs every base config at every `rho` and seed. With `out_dir`, each run
/// writes `runs/<variant>_rho<ρ>_seed<s>/{log.csv,summary.json}` and the
/// sweep writes `sweep.csv`, `sweep_agg.csv` and `robustness.csv`.
pub fn run_sweep(
    bases: &[RunConfig],
    rho: &[f64],
    seeds: &[u64],
    tau_rob: f64,
    workers: usize,
    out_dir: Option<&Path>,
) -> anyhow::Result<(SweepResult, Vec<TrainOutcome>)> {
    let jobs: Vec<Job> = (0..bases.len())
        .flat_map(|base| rho.iter().flat_map(move |&r| seeds.iter().map(move |&seed| Job { base, rho: r, seed })))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new().num_threads(workers.max(1)).build()?;
    let outcomes: Vec<TrainOutcome> = pool.install(|| {
        jobs.par_iter()
            .map(|job| {
                let mut cfg = bases[job.base].with_rho(job.rho);
                cfg.seed = job.seed;
                let outcome = train(&cfg)?;
                if let Some(dir) = out_dir {
                    let run_dir = dir.join("runs").join(run_dir_name(&cfg.variant.name(), job.rho, job.seed));
                    fs::create_dir_all(&run_dir).with_context(|| format!("creating {}", run_dir.display()))?;
                    write_log(&run_dir.join("log.csv"), &outcome.rows, cfg.log_every)?;
                    write_summary(&run_dir.join("summary.json"), &outcome.summary)?;
                }
                Ok(outcome)
            })
            .collect::<anyhow::Result<_>>()
    })?;
    let records: Vec<SweepRecord> = jobs
        .iter()
        .zip(&outcomes)
        .map(|(job, o)| SweepRecord {
            variant: o.summary.variant.clone(),
            rho: job.rho,
            seed: job.seed,
            status: o.summary.status,
            final_loss: o.summary.final_loss,
        })
        .collect();
    let result = summarize(records, tau_rob);
    if let Some(dir) = out_dir {
        write_result(dir, &result)?;
    }
    Ok((result, outcomes))
}

/// Groups records by variant and `ρ`, keeping first-seen order.
pub fn aggregate(records: &[SweepRecord]) -> Vec<AggregateRow> {
    let mut order: Vec<(String, u64)> = Vec::new();
    let mut groups: BTreeMap<(String, u64), Vec<&SweepRecord>> = BTreeMap::new();
    for r in records {
        let key = (r.variant.clone(), r.rho.to_bits());
        if !groups.contains_key(&key) {
            order.push(key.clone());
        }
        groups.entry(key).or_default().push(r);
    }
    order
        .into_iter()
        .map(|key| {
            let rs = &groups[&key];
            let losses: Vec<f64> = rs.iter().filter_map(|r| r.final_loss).collect();
            let (mean, std) = if losses.is_empty() {
                (None, None)
            } else {
                let n = losses.len() as f64;
                let mean = losses.iter().sum::<f64>() / n;
                let var = losses.iter().map(|l| (l - mean).powi(2)).sum::<f64>() / n;
                (Some(mean), Some(var.sqrt()))
            };
            AggregateRow {
                variant: key.0,
                rho: f64::from_bits(key.1),
                runs: rs.len(),
                diverged: rs.iter().filter(|r| r.status == Status::Diverged).count(),
                mean_loss: mean,
                std_loss: std,
            }
        })
        .collect()
}

/// Fraction of `ρ` values whose mean loss is within `τ·|best|` of the best
/// one. A `ρ` with any diverged seed never counts.
pub fn robustness(aggregates: &[AggregateRow], tau_rob: f64) -> Vec<RobustnessRow> {
    let mut variants: Vec<&str> = Vec::new();
    for a in aggregates {
        if !variants.contains(&a.variant.as_str()) {
            variants.push(&a.variant);
        }
    }
    variants
        .into_iter()
        .map(|v| {
            let rows: Vec<&AggregateRow> = aggregates.iter().filter(|a| a.variant == v).collect();
            let usable = |a: &&AggregateRow| if a.diverged == 0 { a.mean_loss } else { None };
            let best = rows.iter().filter_map(usable).fold(None, |acc: Option<f64>, l| Some(acc.map_or(l, |b| b.min(l))));
            let fraction = match best {
                Some(b) => {
                    let cutoff = b + tau_rob * b.abs();
                    rows.iter().filter(|a| usable(a).is_some_and(|l| l <= cutoff)).count() as f64 / rows.len() as f64
                }
                None => 0.0,
            };
            RobustnessRow { variant: v.to_string(), best_loss: best, fraction }
        })
        .collect()
}

pub fn summarize(records: Vec<SweepRecord>, tau_rob: f64) -> SweepResult {
    let aggregates = aggregate(&records);
    let robustness = robustness(&aggregates, tau_rob);
    SweepResult { records, aggregates, robustness }
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> anyhow::Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_result(dir: &Path, result: &SweepResult) -> anyhow::Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    write_csv(&dir.join("sweep.csv"), &result.records)?;
    write_csv(&dir.join("sweep_agg.csv"), &result.aggregates)?;
    write_csv(&dir.join("robustness.csv"), &result.robustness)
}

pub fn read_records(path: &Path) -> anyhow::Result<Vec<SweepRecord>> {
    let mut r = csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
    r.deserialize().map(|row| row.map_err(anyhow::Error::from)).collect()
}

/// Re-aggregates `dir/sweep.csv` and rewrites the derived tables.
pub fn report(dir: &Path, tau_rob: f64) -> anyhow::Result<SweepResult> {
    let records = read_records(&dir.join("sweep.csv"))?;
    let result = summarize(records, tau_rob);
    write_csv(&dir.join("sweep_agg.csv"), &result.aggregates)?;
    write_csv(&dir.join("robustness.csv"), &result.robustness)?;
    Ok(result)
}

pub fn render(result: &SweepResult) -> String {
    let mut out = String::from("variant                      rho      runs  diverged  mean_loss     std\n");
    for a in &result.aggregates {
        let fmt = |x: Option<f64>| x.map_or("-".to_string(), |v| format!("{v:.6}"));
        out += &format!(
            "{:<28} {:<8} {:<5} {:<9} {:<13} {}\n",
            a.variant,
            a.rho,
            a.runs,
            a.diverged,
            fmt(a.mean_loss),
            fmt(a.std_loss)
        );
    }
    out += "\nrobustness\n";
    for r in &result.robustness {
        out += &format!("{:<28} {:.3}\n", r.variant, r.fraction);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(variant: &str, rho: f64, seed: u64, loss: Option<f64>) -> SweepRecord {
        let status = if loss.is_some() { Status::Ok } else { Status::Diverged };
        SweepRecord { variant: variant.into(), rho, seed, status, final_loss: loss }
    }

    #[test]
    fn aggregates_mean_and_std() {
        let rs = vec![rec("A", 1.0, 0, Some(1.0)), rec("A", 1.0, 1, Some(3.0)), rec("A", 2.0, 0, None)];
        let agg = aggregate(&rs);
        assert_eq!(agg.len(), 2);
        assert_eq!(agg[0].mean_loss, Some(2.0));
        assert_eq!(agg[0].std_loss, Some(1.0));
        assert_eq!(agg[1].diverged, 1);
        assert_eq!(agg[1].mean_loss, None);
    }

    #[test]
    fn robustness_counts_rates_near_the_best() {
        let rs = vec![
            rec("A", 0.1, 0, Some(1.0)),
            rec("A", 1.0, 0, Some(1.05)),
            rec("A", 10.0, 0, Some(1.2)),
            rec("A", 100.0, 0, None),
            rec("B", 1.0, 0, None),
        ];
        let rob = robustness(&aggregate(&rs), 0.1);
        assert_eq!(rob[0].fraction, 0.5);
        assert_eq!(rob[1].fraction, 0.0);
        assert_eq!(rob[1].best_loss, None);
    }

    #[test]
    fn a_partly_diverged_rate_does_not_count() {
        let rs = vec![rec("A", 1.0, 0, Some(1.0)), rec("A", 2.0, 0, Some(1.0)), rec("A", 2.0, 1, None)];
        assert_eq!(robustness(&aggregate(&rs), 0.1)[0].fraction, 0.5);
    }
}
