//! Per-episode metrics: running average, regret, and the stability report.

use serde::{Deserialize, Serialize};

use crate::bandit::{Mode, RateMode};
use crate::domain::{EpisodeLog, EpisodeOutcome};
use crate::error::{DbarError, Result};
use crate::harness::config::ExperimentConfig;
use crate::harness::oracle::Oracle;

/// `(1 / (t + 1)) sum_{i <= t} ||x_i||` for each `t` in the log.
pub fn running_average(norms: &[f64]) -> Vec<f64> {
    let mut sum = 0.0;
    norms
        .iter()
        .enumerate()
        .map(|(t, n)| {
            sum += n;
            sum / (t + 1) as f64
        })
        .collect()
}

/// Cumulative cost gap to the oracle, `R_t = sum_{i <= t} (c_i - c*_i)`,
/// plus `d` times the switches made up to `t` when `switches` is given.
pub fn regret_series(
    algorithm_costs: &[f64],
    oracle_costs: &[f64],
    switches: Option<(&[usize], f64)>,
) -> Result<Vec<f64>> {
    if algorithm_costs.len() != oracle_costs.len() {
        return Err(DbarError::HorizonMismatch {
            left: algorithm_costs.len(),
            right: oracle_costs.len(),
        });
    }
    if let Some((s, _)) = switches {
        if s.len() != algorithm_costs.len() {
            return Err(DbarError::HorizonMismatch {
                left: algorithm_costs.len(),
                right: s.len(),
            });
        }
    }
    let mut acc = 0.0;
    Ok(algorithm_costs
        .iter()
        .zip(oracle_costs)
        .enumerate()
        .map(|(t, (c, o))| {
            acc += c - o;
            match switches {
                Some((s, d)) => acc + d * s[t] as f64,
                None => acc,
            }
        })
        .collect())
}

/// Number of controller switches made at or before each step.
pub fn cumulative_switches(log: &EpisodeLog) -> Vec<usize> {
    let mut out = Vec::with_capacity(log.steps.len());
    let mut count = 0;
    let mut prev: Option<usize> = None;
    let mut batch = usize::MAX;
    for s in &log.steps {
        if s.batch != batch {
            batch = s.batch;
            if prev.is_some_and(|p| p != s.controller) {
                count += 1;
            }
            prev = Some(s.controller);
        }
        out.push(count);
    }
    out
}

/// Counts of the bucket-change and nonzero-bucket events, with their
/// bounds in terms of the number of Breaks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BucketCounts {
    pub breaks: usize,
    /// Batches whose successor has a different bucket. The final batch has
    /// no successor inside the horizon and is not counted.
    pub bucket_changes: usize,
    /// `2 U`
    pub bucket_change_bound: usize,
    /// Batches that ran with `s_b != 0`.
    pub nonzero_buckets: usize,
    /// `2 U ceil(ln(alpha_max + delta / ||x_0||) / (-ln beta(tau_0)))`;
    /// `None` when `beta(tau_0) >= 1` leaves it unbounded.
    pub nonzero_bound: Option<usize>,
}

impl BucketCounts {
    pub fn holds(&self) -> bool {
        self.bucket_changes <= self.bucket_change_bound
            && self.nonzero_bound.is_none_or(|b| self.nonzero_buckets <= b)
    }
}

pub fn bucket_counts(log: &EpisodeLog, delta: f64, x0_norm: f64, beta_tau0: f64) -> BucketCounts {
    let breaks = log.batches.iter().filter(|b| b.break_fired).count();
    let n = log.batches.len();
    let bucket_changes = log
        .batches
        .iter()
        .take(n.saturating_sub(1))
        .filter(|b| b.s_next != b.s)
        .count();
    let nonzero_buckets = log.batches.iter().filter(|b| b.s != 0).count();
    let alpha_max = log
        .batches
        .iter()
        .flat_map(|b| [b.alpha, b.alpha_next])
        .fold(0.0, f64::max);
    let nonzero_bound = (beta_tau0 < 1.0).then(|| {
        let per = ((alpha_max + delta / x0_norm).ln() / -beta_tau0.ln()).ceil().max(0.0) as usize;
        2 * breaks * per
    });
    BucketCounts {
        breaks,
        bucket_changes,
        bucket_change_bound: 2 * breaks,
        nonzero_buckets,
        nonzero_bound,
    }
}

/// Violations of the per-transition properties of the bucket and rate
/// updates found in a log.
pub fn transition_violations(log: &EpisodeLog, eta0: f64, mode: Mode, rate: RateMode) -> Vec<String> {
    let mut out = Vec::new();
    for b in &log.batches {
        if b.s_next > b.s + 1 {
            out.push(format!("batch {}: bucket jumped from {} to {}", b.batch, b.s, b.s_next));
        }
        if b.alpha_next < b.alpha {
            out.push(format!("batch {}: alpha decreased", b.batch));
        }
        if b.s_next == b.s + 1 && b.alpha_next > b.alpha && !(b.alpha_next > 1.0) {
            out.push(format!("batch {}: enlarged alpha {} is not above 1", b.batch, b.alpha_next));
        }
        if rate == RateMode::Fixed && b.eta_next != eta0 {
            out.push(format!("batch {}: fixed rate changed to {}", b.batch, b.eta_next));
        }
        if rate == RateMode::Adaptive && mode != Mode::Alg2 {
            if b.eta_next > eta0 * (1.0 + 1e-12) {
                out.push(format!("batch {}: rate {} exceeds eta0", b.batch, b.eta_next));
            }
            if b.s_next == 0 && b.eta_next != eta0 {
                out.push(format!("batch {}: rate {} in bucket 0", b.batch, b.eta_next));
            }
        }
        if b.weight_reset && b.s_next == b.s {
            out.push(format!("batch {}: weights reset without a bucket change", b.batch));
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    pub outcome: EpisodeOutcome,
    pub final_running_average: f64,
    /// `gamma w_max`
    pub bound: f64,
    pub below_bound: bool,
    /// First `t` from which the running average stays at or below the bound.
    pub settling_time: Option<usize>,
    pub max_norm: f64,
    pub buckets: BucketCounts,
    pub violations: Vec<String>,
}

pub fn stability_report(log: &EpisodeLog, config: &ExperimentConfig) -> Result<StabilityReport> {
    let norms: Vec<f64> = log.steps.iter().map(|s| s.state_norm).collect();
    let ra = running_average(&norms);
    let bound = config.gamma * config.w_max;
    let completed = log.outcome == EpisodeOutcome::Completed;
    let final_running_average = if completed {
        ra.last().copied().unwrap_or(f64::NAN)
    } else {
        f64::INFINITY
    };
    let settling_time = if completed {
        let tail_above = ra.iter().rposition(|&v| v > bound);
        match tail_above {
            None => Some(0),
            Some(i) if i + 1 < ra.len() => Some(i + 1),
            Some(_) => None,
        }
    } else {
        None
    };
    let delta = config.resolved_delta()?;
    let beta_tau0 = config.beta.eval(config.effective_schedule().tau(0));
    Ok(StabilityReport {
        outcome: log.outcome.clone(),
        final_running_average,
        bound,
        below_bound: final_running_average <= bound,
        settling_time,
        max_norm: norms.iter().copied().fold(0.0, f64::max),
        buckets: bucket_counts(log, delta, config.x0_norm(), beta_tau0),
        violations: transition_violations(log, config.eta0, config.mode, config.rate),
    })
}

/// Time series of one finished episode.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricSeries {
    pub running_average: Vec<f64>,
    /// `None` when no controller is oracle-eligible on this noise path.
    pub regret: Option<Vec<f64>>,
    pub switches: Vec<usize>,
}

/// Running average and regret against `oracle`. Switching costs enter the
/// regret only in lazy-switching mode.
pub fn episode_metrics(log: &EpisodeLog, oracle: Option<&Oracle>, config: &ExperimentConfig) -> Result<MetricSeries> {
    let norms: Vec<f64> = log.steps.iter().map(|s| s.state_norm).collect();
    let costs: Vec<f64> = log.steps.iter().map(|s| s.cost).collect();
    let switches = cumulative_switches(log);
    let switch_term = (config.mode == Mode::Alg3).then_some((switches.as_slice(), config.switch_cost));
    Ok(MetricSeries {
        running_average: running_average(&norms),
        regret: oracle
            .map(|o| regret_series(&costs, &o.costs, switch_term))
            .transpose()?,
        switches,
    })
}
