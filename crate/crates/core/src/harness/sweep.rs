//! Multi-seed runs and per-time aggregation.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::domain::{EpisodeLog, EpisodeOutcome};
use crate::error::{DbarError, Result};
use crate::harness::config::ExperimentConfig;
use crate::harness::episode::{simulate, EpisodeInputs};
use crate::harness::metrics::{episode_metrics, stability_report, MetricSeries, StabilityReport};
use crate::harness::oracle::{oracle_trajectory, Oracle};

/// Normal quantile used for the 95% band.
pub const Z95: f64 = 1.96;

/// Per-time mean, standard error and 95% band across seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub n: usize,
    pub mean: Vec<f64>,
    pub se: Vec<f64>,
    pub lo95: Vec<f64>,
    pub hi95: Vec<f64>,
}

/// Aggregates equal-length series. The standard error uses the `n - 1`
/// sample deviation and is zero for a single series.
pub fn aggregate(series: &[&[f64]]) -> Result<Aggregate> {
    let first = series
        .first()
        .ok_or_else(|| DbarError::Config("nothing to aggregate: every seed was excluded".into()))?;
    let len = first.len();
    if let Some(bad) = series.iter().find(|s| s.len() != len) {
        return Err(DbarError::HorizonMismatch {
            left: len,
            right: bad.len(),
        });
    }
    let n = series.len();
    let nf = n as f64;
    let mut agg = Aggregate {
        n,
        mean: Vec::with_capacity(len),
        se: Vec::with_capacity(len),
        lo95: Vec::with_capacity(len),
        hi95: Vec::with_capacity(len),
    };
    for t in 0..len {
        let mean = series.iter().map(|s| s[t]).sum::<f64>() / nf;
        let se = if n > 1 {
            let var = series.iter().map(|s| (s[t] - mean).powi(2)).sum::<f64>() / (nf - 1.0);
            (var / nf).sqrt()
        } else {
            0.0
        };
        agg.mean.push(mean);
        agg.se.push(se);
        agg.lo95.push(mean - Z95 * se);
        agg.hi95.push(mean + Z95 * se);
    }
    Ok(agg)
}

#[derive(Debug, Clone)]
pub struct SeedRun {
    pub seed: u64,
    pub log: EpisodeLog,
    pub report: StabilityReport,
    /// `None` for episodes that exploded or emptied the pool.
    pub metrics: Option<MetricSeries>,
}

#[derive(Debug, Clone)]
pub struct ArmResult {
    pub config: ExperimentConfig,
    pub runs: Vec<SeedRun>,
    /// Seeds left out of the aggregates, with the reason.
    pub excluded: Vec<(u64, EpisodeOutcome)>,
    /// `None` when every seed was excluded.
    pub running_average: Option<Aggregate>,
    /// Over the kept seeds that have an oracle; `None` when none has.
    pub regret: Option<Aggregate>,
}

impl ArmResult {
    pub fn final_running_averages(&self) -> Vec<f64> {
        self.runs.iter().map(|r| r.report.final_running_average).collect()
    }

    pub fn final_regrets(&self) -> Vec<Option<f64>> {
        self.runs
            .iter()
            .map(|r| {
                r.metrics
                    .as_ref()
                    .and_then(|m| m.regret.as_ref())
                    .and_then(|g| g.last().copied())
            })
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct SweepResult {
    pub seeds: Vec<u64>,
    /// `None` for seeds whose noise path leaves no controller eligible.
    pub oracles: Vec<Option<Oracle>>,
    pub arms: Vec<ArmResult>,
}

/// Runs every arm on every seed of `arms[0].seeds`. Arms must differ only in
/// policy flags so that each seed's disturbance path and oracle are shared.
/// Results are in seed order regardless of `jobs`.
pub fn seed_sweep(arms: &[ExperimentConfig], jobs: Option<usize>) -> Result<SweepResult> {
    let base = arms
        .first()
        .ok_or_else(|| DbarError::Config("no configurations to run".into()))?;
    for a in arms {
        a.validate()?;
        if a.plant != base.plant
            || a.pool != base.pool
            || a.noise != base.noise
            || a.horizon != base.horizon
            || a.x0 != base.x0
            || a.seeds != base.seeds
        {
            return Err(DbarError::Config(
                "arms of one sweep must share plant, pool, noise, horizon, x0 and seeds".into(),
            ));
        }
    }
    let seeds = base.seeds.clone();
    let work = |seed: u64| -> Result<(Option<Oracle>, Vec<SeedRun>)> {
        let inputs = EpisodeInputs::prepare(base, seed)?;
        let oracle = match oracle_trajectory(base, &inputs) {
            Ok(o) => Some(o),
            Err(DbarError::OracleUndefined) => None,
            Err(e) => return Err(e),
        };
        let mut runs = Vec::with_capacity(arms.len());
        for cfg in arms {
            let log = simulate(cfg, &inputs)?;
            log.check_consistency()?;
            let report = stability_report(&log, cfg)?;
            let metrics = if log.outcome == EpisodeOutcome::Completed {
                Some(episode_metrics(&log, oracle.as_ref(), cfg)?)
            } else {
                None
            };
            runs.push(SeedRun {
                seed,
                log,
                report,
                metrics,
            });
        }
        Ok((oracle, runs))
    };
    let per_seed: Vec<Result<(Option<Oracle>, Vec<SeedRun>)>> = match jobs {
        Some(j) => rayon::ThreadPoolBuilder::new()
            .num_threads(j.max(1))
            .build()
            .map_err(|e| DbarError::Config(format!("thread pool: {e}")))?
            .install(|| seeds.par_iter().map(|&s| work(s)).collect()),
        None => seeds.par_iter().map(|&s| work(s)).collect(),
    };

    let mut oracles = Vec::with_capacity(seeds.len());
    let mut by_arm: Vec<Vec<SeedRun>> = vec![Vec::with_capacity(seeds.len()); arms.len()];
    for r in per_seed {
        let (oracle, runs) = r?;
        oracles.push(oracle);
        for (i, run) in runs.into_iter().enumerate() {
            by_arm[i].push(run);
        }
    }
    let mut results = Vec::with_capacity(arms.len());
    for (cfg, runs) in arms.iter().zip(by_arm) {
        let excluded: Vec<(u64, EpisodeOutcome)> = runs
            .iter()
            .filter(|r| r.metrics.is_none())
            .map(|r| (r.seed, r.log.outcome.clone()))
            .collect();
        let kept: Vec<&MetricSeries> = runs.iter().filter_map(|r| r.metrics.as_ref()).collect();
        let ra: Vec<&[f64]> = kept.iter().map(|m| m.running_average.as_slice()).collect();
        let rg: Vec<&[f64]> = kept.iter().filter_map(|m| m.regret.as_deref()).collect();
        results.push(ArmResult {
            config: cfg.clone(),
            running_average: if ra.is_empty() { None } else { Some(aggregate(&ra)?) },
            regret: if rg.is_empty() { None } else { Some(aggregate(&rg)?) },
            runs,
            excluded,
        });
    }
    Ok(SweepResult {
        seeds,
        oracles,
        arms: results,
    })
}
