//! Batch-length schedules `tau_b`, the stability envelope `beta(t)`, and the
//! checks that tie them together.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{DbarError, Result};

/// Default number of batches over which the growth conditions are checked.
pub const DEFAULT_ASSUMPTION_HORIZON: usize = 100_000;

/// Sequence of batch lengths.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum BatchSchedule {
    Fixed { tau: usize },
    /// `tau_0 = floor(z1 z2^z3)`, `tau_b = ceil(z1 (nu b + z2)^z3)` for `b >= 1`.
    Polynomial { z1: f64, z2: f64, z3: f64, nu: f64 },
    /// `tau_0` given, `tau_b = ceil(tau_0 ((b + offset) / scale)^exponent)` for `b >= 1`.
    ///
    /// Same sequence as the polynomial form with `z1 = tau_0 / scale^exponent`,
    /// `z2 = offset`, `z3 = exponent`, `nu = 1`, but evaluated without the
    /// rescaling so exact integer lengths are not pushed over a ceiling.
    Anchored {
        tau0: usize,
        offset: f64,
        scale: f64,
        exponent: f64,
    },
}

impl BatchSchedule {
    pub fn fixed(tau: usize) -> Result<Self> {
        if tau == 0 {
            return Err(DbarError::InvalidSchedule("fixed batch length must be positive".into()));
        }
        Ok(BatchSchedule::Fixed { tau })
    }

    pub fn polynomial(z1: f64, z2: f64, z3: f64, nu: f64) -> Result<Self> {
        for (name, v) in [("z1", z1), ("z2", z2), ("z3", z3), ("nu", nu)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(DbarError::InvalidSchedule(format!("{name} must be positive, got {v}")));
            }
        }
        let s = BatchSchedule::Polynomial { z1, z2, z3, nu };
        if s.tau(0) == 0 {
            return Err(DbarError::InvalidSchedule(format!(
                "tau_0 = floor({z1} * {z2}^{z3}) is zero"
            )));
        }
        Ok(s)
    }

    pub fn anchored(tau0: usize, offset: f64, scale: f64, exponent: f64) -> Result<Self> {
        if tau0 == 0 {
            return Err(DbarError::InvalidSchedule("tau_0 must be positive".into()));
        }
        for (name, v) in [("offset", offset), ("scale", scale), ("exponent", exponent)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(DbarError::InvalidSchedule(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(BatchSchedule::Anchored {
            tau0,
            offset,
            scale,
            exponent,
        })
    }

    /// `tau_b = ceil(tau_0 ((b + 10) / 10)^0.5)` with `tau_0 = 11`.
    pub fn linear_experiment() -> Self {
        BatchSchedule::Anchored {
            tau0: 11,
            offset: 10.0,
            scale: 10.0,
            exponent: 0.5,
        }
    }

    /// `tau_b = ceil(tau_0 ((b + 41) / 40)^0.5)` with `tau_0 = 9`.
    pub fn ballbeam_experiment() -> Self {
        BatchSchedule::Anchored {
            tau0: 9,
            offset: 41.0,
            scale: 40.0,
            exponent: 0.5,
        }
    }

    pub fn tau(&self, b: usize) -> usize {
        match *self {
            BatchSchedule::Fixed { tau } => tau,
            BatchSchedule::Polynomial { z1, z2, z3, nu } => {
                if b == 0 {
                    (z1 * z2.powf(z3)).floor() as usize
                } else {
                    (z1 * (nu * b as f64 + z2).powf(z3)).ceil() as usize
                }
            }
            BatchSchedule::Anchored {
                tau0,
                offset,
                scale,
                exponent,
            } => {
                if b == 0 {
                    tau0
                } else {
                    (tau0 as f64 * ((b as f64 + offset) / scale).powf(exponent)).ceil() as usize
                }
            }
        }
    }

    /// Polynomial parameters `(z1, z2, z3, nu)` describing the same sequence
    /// for `b >= 1`. `None` for fixed schedules.
    pub fn polynomial_params(&self) -> Option<(f64, f64, f64, f64)> {
        match *self {
            BatchSchedule::Fixed { .. } => None,
            BatchSchedule::Polynomial { z1, z2, z3, nu } => Some((z1, z2, z3, nu)),
            BatchSchedule::Anchored {
                tau0,
                offset,
                scale,
                exponent,
            } => Some((tau0 as f64 / scale.powf(exponent), offset, exponent, 1.0)),
        }
    }

    /// Checks non-decrease, the ratio bound `tau_{b+1}/tau_b <= tau_1/tau_0`
    /// and convergence of the ratio to one over `horizon` batches.
    pub fn check_growth(&self, horizon: usize) -> GrowthReport {
        let first_ratio = self.tau(1) as f64 / self.tau(0) as f64;
        let mut report = GrowthReport {
            horizon,
            non_decreasing: true,
            first_ratio,
            max_ratio: first_ratio,
            max_ratio_batch: 0,
            last_ratio: first_ratio,
            unbounded: !matches!(self, BatchSchedule::Fixed { .. }),
        };
        let mut prev = self.tau(0);
        for b in 1..=horizon {
            let cur = self.tau(b);
            if cur < prev {
                report.non_decreasing = false;
            }
            let ratio = cur as f64 / prev as f64;
            if ratio > report.max_ratio {
                report.max_ratio = ratio;
                report.max_ratio_batch = b - 1;
            }
            report.last_ratio = ratio;
            prev = cur;
        }
        report
    }
}

impl fmt::Display for BatchSchedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BatchSchedule::Fixed { tau } => write!(f, "fixed:{tau}"),
            BatchSchedule::Polynomial { z1, z2, z3, nu } => write!(f, "poly:{z1},{z2},{z3},{nu}"),
            BatchSchedule::Anchored {
                tau0,
                offset,
                scale,
                exponent,
            } => write!(f, "anchored:{tau0},{offset},{scale},{exponent}"),
        }
    }
}

impl FromStr for BatchSchedule {
    type Err = DbarError;

    fn from_str(s: &str) -> Result<Self> {
        let (kind, args) = s
            .split_once(':')
            .ok_or_else(|| DbarError::InvalidSchedule(format!("expected `kind:args`, got `{s}`")))?;
        let nums = parse_list(args).map_err(|e| DbarError::InvalidSchedule(format!("`{s}`: {e}")))?;
        let want = |n: usize| -> Result<()> {
            if nums.len() == n {
                Ok(())
            } else {
                Err(DbarError::InvalidSchedule(format!(
                    "`{kind}` takes {n} values, got {}",
                    nums.len()
                )))
            }
        };
        match kind {
            "fixed" => {
                want(1)?;
                BatchSchedule::fixed(as_count(nums[0])?)
            }
            "poly" => {
                want(4)?;
                BatchSchedule::polynomial(nums[0], nums[1], nums[2], nums[3])
            }
            "anchored" => {
                want(4)?;
                BatchSchedule::anchored(as_count(nums[0])?, nums[1], nums[2], nums[3])
            }
            other => Err(DbarError::InvalidSchedule(format!("unknown schedule kind `{other}`"))),
        }
    }
}

fn as_count(v: f64) -> Result<usize> {
    if v >= 0.0 && v.fract() == 0.0 && v.is_finite() {
        Ok(v as usize)
    } else {
        Err(DbarError::InvalidSchedule(format!("expected a non-negative integer, got {v}")))
    }
}

pub(crate) fn parse_list(s: &str) -> std::result::Result<Vec<f64>, String> {
    s.split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|e| format!("`{}`: {e}", p.trim())))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrowthReport {
    pub horizon: usize,
    pub non_decreasing: bool,
    pub first_ratio: f64,
    pub max_ratio: f64,
    pub max_ratio_batch: usize,
    pub last_ratio: f64,
    pub unbounded: bool,
}

impl GrowthReport {
    /// Every condition on polynomial batches, with the ratio required to
    /// be within `tol` of one at the end of the horizon.
    pub fn satisfied(&self, tol: f64) -> bool {
        self.unbounded
            && self.non_decreasing
            && self.max_ratio <= self.first_ratio
            && (self.last_ratio - 1.0).abs() <= tol
    }
}

/// Decay envelope `beta(t)` with `beta(0) = 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum BetaEnvelope {
    /// `rate^t`
    Exponential { rate: f64 },
    /// `min(c / t^q, 1)`
    Polynomial { c: f64, q: f64 },
}

impl BetaEnvelope {
    pub fn exponential(rate: f64) -> Result<Self> {
        if !(rate > 0.0 && rate < 1.0) {
            return Err(DbarError::Parameter {
                name: "beta rate",
                reason: format!("must lie in (0, 1), got {rate}"),
            });
        }
        Ok(BetaEnvelope::Exponential { rate })
    }

    pub fn polynomial(c: f64, q: f64) -> Result<Self> {
        if !(c > 0.0 && q > 0.0 && c.is_finite() && q.is_finite()) {
            return Err(DbarError::Parameter {
                name: "beta",
                reason: format!("c and q must be positive, got c={c}, q={q}"),
            });
        }
        Ok(BetaEnvelope::Polynomial { c, q })
    }

    pub fn eval(&self, t: usize) -> f64 {
        match *self {
            BetaEnvelope::Exponential { rate } => rate.powi(t.min(i32::MAX as usize) as i32),
            BetaEnvelope::Polynomial { c, q } => {
                if t == 0 {
                    1.0
                } else {
                    (c / (t as f64).powf(q)).min(1.0)
                }
            }
        }
    }
}

impl fmt::Display for BetaEnvelope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BetaEnvelope::Exponential { rate } => write!(f, "exp:{rate}"),
            BetaEnvelope::Polynomial { c, q } => write!(f, "poly:{c},{q}"),
        }
    }
}

impl FromStr for BetaEnvelope {
    type Err = DbarError;

    fn from_str(s: &str) -> Result<Self> {
        let bad = |m: String| DbarError::Config(format!("beta `{s}`: {m}"));
        let (kind, args) = s.split_once(':').ok_or_else(|| bad("expected `kind:args`".into()))?;
        let nums = parse_list(args).map_err(bad)?;
        match (kind, nums.as_slice()) {
            ("exp", [rate]) => BetaEnvelope::exponential(*rate),
            ("poly", [c, q]) => BetaEnvelope::polynomial(*c, *q),
            _ => Err(bad("expected `exp:rate` or `poly:c,q`".into())),
        }
    }
}

/// `H(t) = sum_{i < t} beta(i)`.
pub fn h_partial(beta: &BetaEnvelope, t: usize) -> f64 {
    (0..t).map(|i| beta.eval(i)).sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreconditionReport {
    pub tau0: usize,
    pub tau1: usize,
    pub beta_tau0: f64,
    /// `(tau_1 / tau_0) beta(tau_0)`, required `< 1` for the stability bound.
    pub stability_value: f64,
    pub stability_pass: bool,
    /// `(tau_1 / tau_0) beta(tau_0)^2`, required `< 1/(2 sqrt 2)` for the regret bound.
    pub regret_value: f64,
    pub regret_threshold: f64,
    pub regret_pass: bool,
}

pub fn validate_stability_precondition(schedule: &BatchSchedule, beta: &BetaEnvelope) -> PreconditionReport {
    let tau0 = schedule.tau(0);
    let tau1 = schedule.tau(1);
    let ratio = tau1 as f64 / tau0 as f64;
    let b0 = beta.eval(tau0);
    let stability_value = ratio * b0;
    let regret_value = ratio * b0 * b0;
    let regret_threshold = 1.0 / (2.0 * 2f64.sqrt());
    PreconditionReport {
        tau0,
        tau1,
        beta_tau0: b0,
        stability_value,
        stability_pass: stability_value < 1.0,
        regret_value,
        regret_threshold,
        regret_pass: regret_value < regret_threshold,
    }
}

impl fmt::Display for PreconditionReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let verdict = |ok: bool| if ok { "pass" } else { "FAIL" };
        writeln!(
            f,
            "tau_0 = {}, tau_1 = {}, beta(tau_0) = {:.6}",
            self.tau0, self.tau1, self.beta_tau0
        )?;
        writeln!(
            f,
            "stability: (tau_1/tau_0) beta(tau_0) = {:.6} < 1 ... {}",
            self.stability_value,
            verdict(self.stability_pass)
        )?;
        write!(
            f,
            "regret:    (tau_1/tau_0) beta(tau_0)^2 = {:.6} < {:.6} ... {}",
            self.regret_value,
            self.regret_threshold,
            verdict(self.regret_pass)
        )
    }
}

/// Batch schedule with `tau_0 = floor((z / (N (|U|+1)))^{1/2})` and
/// `tau_b = ceil(((nu b + z) / (N (|U|+1)))^{1/2})`. Passing
/// `u_plus_1 = 1` gives the variant used when `|U|` is unknown.
pub fn recipe_schedule(n: usize, u_plus_1: usize, z: f64, nu: f64) -> Result<BatchSchedule> {
    if n == 0 || u_plus_1 == 0 {
        return Err(DbarError::InvalidSchedule("N and |U|+1 must be positive".into()));
    }
    let z1 = ((n * u_plus_1) as f64).powf(-0.5);
    BatchSchedule::polynomial(z1, z, 0.5, nu)
}

/// Smallest admissible state offset `delta = gamma w_max / (1 - beta(tau_0))`.
pub fn delta_default(gamma: f64, w_max: f64, beta: &BetaEnvelope, tau0: usize) -> Result<f64> {
    let b = beta.eval(tau0);
    if b >= 1.0 {
        return Err(DbarError::Config(format!(
            "beta(tau_0) = beta({tau0}) = {b} is not below 1; no finite delta satisfies delta >= gamma w_max / (1 - beta(tau_0))"
        )));
    }
    Ok(gamma * w_max / (1.0 - b))
}

/// `gamma w_max / (1 - beta(tau_b))` at the first batch whose scheduled
/// length lies where the envelope has started to contract. Used when
/// `beta(tau_0) = 1`, for envelopes that stay flat over a short prefix.
pub fn delta_first_contracting(
    gamma: f64,
    w_max: f64,
    beta: &BetaEnvelope,
    schedule: &BatchSchedule,
    max_batches: usize,
) -> Result<f64> {
    (0..=max_batches)
        .map(|b| schedule.tau(b))
        .find(|&t| beta.eval(t) < 1.0)
        .map(|t| gamma * w_max / (1.0 - beta.eval(t)))
        .ok_or_else(|| {
            DbarError::Config(format!(
                "beta(tau_b) stays at 1 for the first {max_batches} batches"
            ))
        })
}
