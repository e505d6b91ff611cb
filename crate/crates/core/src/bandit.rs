//! Batched exponential-weights controller selection with falsification,
//! norm-bucket tracking and an adaptive learning rate.
//!
//! One call to [`run_batch`] executes a whole batch:
//!
//! 1. draw `K_b` from `p_b` (or keep `K_{b-1}` in lazy-switching mode),
//! 2. run `pi_{K_b}` for up to `tau_b` steps, falsifying it and cutting the
//!    batch short the first time `||x_{t+1}|| > beta(t+1-t_b) ||x_{t_b}|| + gamma w_max`,
//! 3. place the batch-end norm in a bucket `(alpha, s)` relative to `||x_0||`,
//! 4. add the importance-weighted batch cost to `W`, or reset `W` when the
//!    bucket index changes,
//! 5. set `eta_{b+1} = eta_0 / alpha^{2 s}` and recompute the softmax.
//!
//! [`BanditState`] exposes the selection and the update halves separately so
//! that synthetic loss sequences can drive it without a plant.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::domain::{controller_action, cost_eval, BatchRecord, CostKind, EpisodeLog, StateVector, StepRecord};
use crate::error::{DbarError, Result};
use crate::noise::NoisePath;
use crate::schedule::{BatchSchedule, BetaEnvelope};
use crate::systems::{ControllerPool, Plant};

/// Which variant of the selection rule runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Mode {
    /// Known `|U|`: `eta_b = eta_0 / alpha_b^{2 s_b}`.
    Alg1,
    /// Unknown `|U|`: the rate also grows as `(mu_b + 1)^y` with the number
    /// of falsifications `mu_b`.
    Alg2,
    /// Lazy switching: keep the previous controller with the ratio of its
    /// unnormalized weights whenever the bucket and the pool are unchanged.
    Alg3,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Alg1 => "alg1",
            Mode::Alg2 => "alg2",
            Mode::Alg3 => "alg3",
        })
    }
}

impl FromStr for Mode {
    type Err = DbarError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "alg1" => Ok(Mode::Alg1),
            "alg2" => Ok(Mode::Alg2),
            "alg3" => Ok(Mode::Alg3),
            other => Err(DbarError::Config(format!("unknown mode `{other}` (alg1|alg2|alg3)"))),
        }
    }
}

/// Learning-rate ablation switch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RateMode {
    Adaptive,
    /// `eta_b = eta_0` throughout and no weight reset.
    Fixed,
}

impl fmt::Display for RateMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RateMode::Adaptive => "adaptive",
            RateMode::Fixed => "fixed",
        })
    }
}

impl FromStr for RateMode {
    type Err = DbarError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "adaptive" => Ok(RateMode::Adaptive),
            "fixed" => Ok(RateMode::Fixed),
            other => Err(DbarError::Config(format!("unknown rate `{other}` (fixed|adaptive)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BanditParams {
    pub eta0: f64,
    pub alpha0: f64,
    pub delta: f64,
    pub x0_norm: f64,
    /// Exponent of `(mu + 1)` in [`Mode::Alg2`].
    pub y: f64,
    pub mode: Mode,
    pub rate: RateMode,
}

impl BanditParams {
    fn validate(&self) -> Result<()> {
        let positive = [
            ("eta0", self.eta0),
            ("delta", self.delta),
            ("x0 norm", self.x0_norm),
            ("y", self.y),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(DbarError::Parameter {
                    name,
                    reason: format!("must be positive and finite, got {v}"),
                });
            }
        }
        if !(self.alpha0 > 1.0 && self.alpha0.is_finite()) {
            return Err(DbarError::Parameter {
                name: "alpha0",
                reason: format!("must exceed beta(0) = 1, got {}", self.alpha0),
            });
        }
        Ok(())
    }
}

/// Result of one executed batch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BatchOutcome {
    pub controller: usize,
    pub steps: usize,
    /// `w_b(K_b)`, the summed cost over the executed steps.
    pub cost: f64,
    pub break_fired: bool,
    /// `||x_{t_{b+1}}||`
    pub end_norm: f64,
}

/// What [`BanditState::finish_batch`] changed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub s: u32,
    pub alpha: f64,
    pub eta: f64,
    pub s_next: u32,
    pub alpha_next: f64,
    pub eta_next: f64,
    pub weight_reset: bool,
    pub pool_size: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Previous {
    controller: usize,
    eta: f64,
    weight: f64,
    s: u32,
}

/// Mutable per-episode state of the selection policy.
#[derive(Debug, Clone)]
pub struct BanditState {
    params: BanditParams,
    pool: Vec<usize>,
    weights: Vec<f64>,
    probs: Vec<f64>,
    eta: f64,
    alpha: f64,
    s: u32,
    mu: u32,
    batch: usize,
    current: Option<usize>,
    /// Snapshot of batch `b - 1`, kept only while the pool is unchanged.
    previous: Option<Previous>,
    falsified: Vec<usize>,
}

impl BanditState {
    /// Starts with uniform probabilities over `pool` (controller indices).
    pub fn new(pool: Vec<usize>, params: BanditParams) -> Result<Self> {
        params.validate()?;
        if pool.is_empty() {
            return Err(DbarError::EmptyPool { batch: 0 });
        }
        let n = pool.len();
        Ok(Self {
            params,
            weights: vec![0.0; n],
            probs: vec![1.0 / n as f64; n],
            pool,
            eta: params.eta0,
            alpha: params.alpha0,
            s: 0,
            mu: 0,
            batch: 0,
            current: None,
            previous: None,
            falsified: Vec::new(),
        })
    }

    pub fn params(&self) -> &BanditParams {
        &self.params
    }

    pub fn pool(&self) -> &[usize] {
        &self.pool
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn probabilities(&self) -> &[f64] {
        &self.probs
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn s(&self) -> u32 {
        self.s
    }

    pub fn mu(&self) -> u32 {
        self.mu
    }

    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn current(&self) -> Option<usize> {
        self.current
    }

    /// Controllers removed so far, in removal order.
    pub fn falsified(&self) -> &[usize] {
        &self.falsified
    }

    fn position(&self, controller: usize) -> Option<usize> {
        self.pool.iter().position(|&k| k == controller)
    }

    /// Probability of keeping `K_{b-1}` in lazy-switching mode, or `None`
    /// when the gate (`b > 0`, same bucket, same pool) is closed.
    pub fn stay_probability(&self) -> Option<f64> {
        if self.params.mode != Mode::Alg3 || self.batch == 0 {
            return None;
        }
        let prev = self.previous?;
        if prev.s != self.s {
            return None;
        }
        let pos = self.position(prev.controller)?;
        let log_ratio = -(self.eta * self.weights[pos]) + prev.eta * prev.weight;
        Some(log_ratio.exp().min(1.0))
    }

    /// Draws `K_b`.
    pub fn sample_controller<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<usize> {
        if self.pool.is_empty() {
            return Err(DbarError::EmptyPool { batch: self.batch });
        }
        if let Some(stay) = self.stay_probability() {
            let prev = self.previous.expect("gate open implies a previous batch").controller;
            if rng.random::<f64>() < stay {
                self.current = Some(prev);
                return Ok(prev);
            }
        }
        let pos = draw_index(&self.probs, rng.random::<f64>());
        let k = self.pool[pos];
        self.current = Some(k);
        Ok(k)
    }

    /// Phase 2 after a batch: falsification, bucket, weights, rate and the
    /// next distribution.
    pub fn finish_batch(&mut self, outcome: &BatchOutcome) -> Result<Transition> {
        let k = outcome.controller;
        let pos = self.position(k).ok_or_else(|| {
            DbarError::Invariant(format!("controller {k} is not in the pool at batch {}", self.batch))
        })?;
        if !outcome.end_norm.is_finite() || !outcome.cost.is_finite() {
            return Err(DbarError::Invariant(format!(
                "non-finite batch outcome at batch {}: {outcome:?}",
                self.batch
            )));
        }
        let (alpha_next, s_next) = bucket_update(
            outcome.end_norm,
            self.alpha,
            self.s,
            self.params.delta,
            self.params.x0_norm,
        );

        let adaptive = self.params.rate == RateMode::Adaptive;
        let reset = adaptive && s_next != self.s;
        let mut weights = weight_update(&self.weights, &self.probs, pos, outcome.cost, reset)?;

        if outcome.break_fired {
            self.mu += 1;
        }
        let eta_next = match self.params.rate {
            RateMode::Fixed => self.params.eta0,
            RateMode::Adaptive => rate_update(
                self.params.eta0,
                alpha_next,
                s_next,
                self.mu,
                self.params.y,
                self.params.mode,
            ),
        };

        let transition = Transition {
            s: self.s,
            alpha: self.alpha,
            eta: self.eta,
            s_next,
            alpha_next,
            eta_next,
            weight_reset: reset,
            pool_size: self.pool.len() - usize::from(outcome.break_fired),
        };

        self.previous = Some(Previous {
            controller: k,
            eta: self.eta,
            weight: self.weights[pos],
            s: self.s,
        });
        if outcome.break_fired {
            self.pool.remove(pos);
            weights.remove(pos);
            self.falsified.push(k);
            // P_{b+1} != P_b closes the lazy-switching gate.
            self.previous = None;
        }
        self.weights = weights;
        self.alpha = alpha_next;
        self.s = s_next;
        self.eta = eta_next;
        self.probs = if self.pool.is_empty() {
            Vec::new()
        } else {
            softmax_distribution(&self.weights, self.eta)?
        };
        self.batch += 1;
        Ok(transition)
    }
}

/// Inverse-CDF draw over `probs` in index order.
fn draw_index(probs: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    // rounding left the total slightly under one
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(probs.len() - 1)
}

/// `p(k) = exp(-eta W(k)) / sum_i exp(-eta W(i))`, shifted by `min(eta W)`
/// before exponentiating.
pub fn softmax_distribution(weights: &[f64], eta: f64) -> Result<Vec<f64>> {
    if weights.is_empty() {
        return Err(DbarError::Invariant("softmax over an empty pool".into()));
    }
    if let Some(w) = weights.iter().find(|w| !w.is_finite()) {
        return Err(DbarError::Invariant(format!("non-finite weight {w}")));
    }
    let scaled: Vec<f64> = weights.iter().map(|w| eta * w).collect();
    let min = scaled.iter().copied().fold(f64::INFINITY, f64::min);
    let unnorm: Vec<f64> = scaled.iter().map(|v| (-(v - min)).exp()).collect();
    let total: f64 = unnorm.iter().sum();
    Ok(unnorm.into_iter().map(|v| v / total).collect())
}

/// Line-5 test: `||x_{t+1}|| > beta(offset) ||x_{t_b}|| + gamma w_max` with
/// `offset = t + 1 - t_b`.
pub fn iss_violation(
    next_norm: f64,
    batch_start_norm: f64,
    offset: usize,
    beta: &BetaEnvelope,
    gamma: f64,
    w_max: f64,
) -> bool {
    next_norm > beta.eval(offset) * batch_start_norm + gamma * w_max
}

/// Places `||x_{t_{b+1}}||` into a bucket relative to `||x_0||`.
///
/// Returns `(alpha_{b+1}, s_{b+1})`. Below `alpha_b ||x_0|| + delta` the
/// bucket is zero. Otherwise, with `R = (||x|| - delta) / ||x_0||`, `s` is
/// the integer with `alpha_b^s <= R < alpha_b^{s+1}`. A jump of more than one
/// bucket is absorbed by enlarging `alpha` to the geometric midpoint of
/// `(R^{1/(s_b+2)}, R^{1/(s_b+1)}]` and moving up by exactly one.
pub fn bucket_update(next_norm: f64, alpha: f64, s: u32, delta: f64, x0_norm: f64) -> (f64, u32) {
    if next_norm < alpha * x0_norm + delta {
        return (alpha, 0);
    }
    let r = (next_norm - delta) / x0_norm;
    let mut level = ((r.ln() / alpha.ln()).floor().max(1.0)).min(u32::MAX as f64 - 1.0) as u32;
    while level > 1 && alpha_pow(alpha, level) > r {
        level -= 1;
    }
    while alpha_pow(alpha, level + 1) <= r {
        level += 1;
    }
    if level > s + 1 {
        let sb = f64::from(s);
        let exponent = (2.0 * sb + 3.0) / (2.0 * (sb + 1.0) * (sb + 2.0));
        (r.powf(exponent), s + 1)
    } else {
        (alpha, level)
    }
}

fn alpha_pow(alpha: f64, n: u32) -> f64 {
    if n <= i32::MAX as u32 {
        alpha.powi(n as i32)
    } else {
        alpha.powf(f64::from(n))
    }
}

/// Adds `w_b(K_b) / p_b(K_b)` to the selected controller's weight, or zeroes
/// every weight when `reset` is set.
pub fn weight_update(weights: &[f64], probs: &[f64], selected: usize, cost: f64, reset: bool) -> Result<Vec<f64>> {
    if weights.len() != probs.len() || selected >= weights.len() {
        return Err(DbarError::Invariant(format!(
            "weight update with {} weights, {} probabilities, selected {selected}",
            weights.len(),
            probs.len()
        )));
    }
    if reset {
        return Ok(vec![0.0; weights.len()]);
    }
    let p = probs[selected];
    if !(p > 0.0) {
        return Err(DbarError::Invariant(format!(
            "selected controller has probability {p}"
        )));
    }
    let mut out = weights.to_vec();
    out[selected] += cost / p;
    Ok(out)
}

/// `eta_{b+1} = eta_0 / alpha^{2 s}`, times `(mu + 1)^y` in [`Mode::Alg2`].
pub fn rate_update(eta0: f64, alpha_next: f64, s_next: u32, mu_next: u32, y: f64, mode: Mode) -> f64 {
    let damp = if s_next == 0 {
        1.0
    } else {
        alpha_next.powf(2.0 * f64::from(s_next))
    };
    match mode {
        Mode::Alg1 | Mode::Alg3 => eta0 / damp,
        Mode::Alg2 => eta0 * (f64::from(mu_next) + 1.0).powf(y) / damp,
    }
}

/// Fixed inputs of a batch run.
#[derive(Debug, Clone, Copy)]
pub struct BatchContext<'a> {
    pub plant: &'a Plant,
    pub pool: &'a ControllerPool,
    pub noise: &'a NoisePath,
    pub cost: CostKind,
    pub schedule: &'a BatchSchedule,
    pub beta: &'a BetaEnvelope,
    pub gamma: f64,
    pub w_max: f64,
    /// Last time index `T`; steps run for `t = 0..=T`.
    pub horizon: usize,
}

/// State carried between batches.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchEnd {
    pub outcome: BatchOutcome,
    pub transition: Transition,
    pub state: StateVector,
    pub next_time: usize,
}

/// Runs batch `b` from time `t_b = start` and state `x`, appending step and
/// batch records to `log`.
pub fn run_batch<R: Rng + ?Sized>(
    bandit: &mut BanditState,
    ctx: &BatchContext<'_>,
    rng: &mut R,
    start: usize,
    x: StateVector,
    log: &mut EpisodeLog,
) -> Result<BatchEnd> {
    if start > ctx.horizon {
        return Err(DbarError::Invariant(format!(
            "batch starts at {start}, past the horizon {}",
            ctx.horizon
        )));
    }
    let b = bandit.batch();
    let previous = bandit.current();
    let k = bandit.sample_controller(rng)?;
    let spec = ctx
        .pool
        .get(k)
        .ok_or_else(|| DbarError::Invariant(format!("controller {k} outside the pool")))?;
    let family = ctx.plant.family();
    let scheduled = ctx.schedule.tau(b);
    let last = (start + scheduled - 1).min(ctx.horizon);

    let start_norm = x.norm();
    let mut x = x;
    let mut cost = 0.0;
    let mut break_fired = false;
    let mut t = start;
    loop {
        let u = controller_action(spec, family, &x)?;
        let c = cost_eval(&x, &u, ctx.cost);
        log.steps.push(StepRecord {
            t,
            batch: b,
            controller: k,
            state_norm: x.norm(),
            cost: c,
        });
        cost += c;
        x = ctx
            .plant
            .step(&x, &u, ctx.noise.at(t))
            .map_err(|e| match e {
                DbarError::Explosion { .. } => DbarError::Explosion { step: t },
                other => other,
            })?;
        if !x.norm().is_finite() || !cost.is_finite() {
            return Err(DbarError::Explosion { step: t });
        }
        if iss_violation(x.norm(), start_norm, t + 1 - start, ctx.beta, ctx.gamma, ctx.w_max) {
            break_fired = true;
            break;
        }
        if t == last {
            break;
        }
        t += 1;
    }
    let steps = t + 1 - start;
    let outcome = BatchOutcome {
        controller: k,
        steps,
        cost,
        break_fired,
        end_norm: x.norm(),
    };
    let transition = bandit.finish_batch(&outcome)?;
    if break_fired {
        log.falsified.push(k);
    }
    log.batches.push(BatchRecord {
        batch: b,
        start,
        scheduled_len: scheduled,
        effective_len: steps,
        controller: k,
        break_fired,
        truncated: !break_fired && steps < scheduled,
        cost,
        end_norm: outcome.end_norm,
        s: transition.s,
        alpha: transition.alpha,
        eta: transition.eta,
        s_next: transition.s_next,
        alpha_next: transition.alpha_next,
        eta_next: transition.eta_next,
        weight_reset: transition.weight_reset,
        pool_size: transition.pool_size,
        switched: previous.is_some_and(|p| p != k),
    });
    Ok(BatchEnd {
        outcome,
        transition,
        state: x,
        next_time: t + 1,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::ControllerKind;
    use crate::noise::{NoiseConfig, NoiseKind};
    use crate::systems::LinearPlant;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn params(mode: Mode) -> BanditParams {
        BanditParams {
            eta0: 0.025,
            alpha0: 1.01,
            delta: 5.0,
            x0_norm: 10.0,
            y: 0.5,
            mode,
            rate: RateMode::Adaptive,
        }
    }

    #[test]
    fn softmax_examples() {
        let p = softmax_distribution(&[0.0, 0.0, 0.0], 1.0).unwrap();
        for v in &p {
            assert_relative_eq!(*v, 1.0 / 3.0, max_relative = 1e-15);
        }
        let p = softmax_distribution(&[0.0, 2f64.ln()], 1.0).unwrap();
        assert_relative_eq!(p[0], 2.0 / 3.0, max_relative = 1e-15);
        assert_relative_eq!(p[1], 1.0 / 3.0, max_relative = 1e-15);
        let p = softmax_distribution(&[0.0, 1e6], 1.0).unwrap();
        assert_eq!(p[0], 1.0);
        assert_eq!(p[1], 0.0);
        let p = softmax_distribution(&[1e300, 1e300 + 1e285], 1.0).unwrap();
        assert!(p.iter().all(|v| v.is_finite()));
        assert!(softmax_distribution(&[0.0, f64::NAN], 1.0).is_err());
        assert!(softmax_distribution(&[], 1.0).is_err());
    }

    #[test]
    fn iss_violation_examples() {
        let beta = BetaEnvelope::exponential(0.99).unwrap();
        assert!(!iss_violation(101.5, 100.0, 1, &beta, 2.5, 1.0));
        assert!(iss_violation(101.6, 100.0, 1, &beta, 2.5, 1.0));
        assert!(!iss_violation(0.0, 100.0, 1, &beta, 2.5, 1.0));
        assert!(!iss_violation(0.0, 0.0, 7, &beta, 0.1, 0.1));
    }

    #[test]
    fn bucket_jump_is_capped_at_one() {
        // R = (45 - 5)/10 = 4, s = 2 with alpha 2; alpha becomes 4^{3/4}
        let (alpha, s) = bucket_update(45.0, 2.0, 0, 5.0, 10.0);
        assert_eq!(s, 1);
        assert_relative_eq!(alpha, 4f64.powf(0.75), max_relative = 1e-15);
        assert_relative_eq!(alpha, 2.828, epsilon = 1e-3);
        assert!(alpha > 2.0 && alpha <= 4.0);
    }

    #[test]
    fn bucket_single_step() {
        assert_eq!(bucket_update(45.0, 2.0, 1, 5.0, 10.0), (2.0, 2));
    }

    #[test]
    fn bucket_below_threshold() {
        // threshold alpha ||x0|| + delta = 25
        assert_eq!(bucket_update(24.9, 2.0, 3, 5.0, 10.0), (2.0, 0));
        // exact threshold is in the nontrivial branch: R = 2 = alpha^1
        assert_eq!(bucket_update(25.0, 2.0, 0, 5.0, 10.0), (2.0, 1));
    }

    #[test]
    fn bucket_at_exact_powers() {
        // R = 8 = 2^3: floor(ln 8 / ln 2) may round either way
        assert_eq!(bucket_update(85.0, 2.0, 2, 5.0, 10.0), (2.0, 3));
        // R just under 2^3 stays in bucket 2
        assert_eq!(bucket_update(84.999_999, 2.0, 2, 5.0, 10.0), (2.0, 2));
    }

    #[test]
    fn weight_update_examples() {
        let w = weight_update(&[0.0, 0.0], &[0.5, 0.5], 0, 10.0, false).unwrap();
        assert_eq!(w, vec![20.0, 0.0]);
        let w = weight_update(&[3.0, 7.0], &[0.5, 0.5], 1, 10.0, true).unwrap();
        assert_eq!(w, vec![0.0, 0.0]);
        let w = weight_update(&[3.0, 7.0], &[0.4, 0.6], 1, 0.0, false).unwrap();
        assert_eq!(w, vec![3.0, 7.0]);
        assert!(weight_update(&[0.0, 0.0], &[1.0, 0.0], 1, 1.0, false).is_err());
    }

    #[test]
    fn rate_update_examples() {
        assert_eq!(rate_update(0.025, 7.3, 0, 0, 0.5, Mode::Alg1), 0.025);
        assert_relative_eq!(rate_update(0.025, 2.0, 1, 0, 0.5, Mode::Alg1), 0.00625, max_relative = 1e-15);
        assert_relative_eq!(rate_update(0.025, 2.0, 0, 1, 0.5, Mode::Alg2), 0.025 * 2f64.sqrt(), max_relative = 1e-15);
        assert_relative_eq!(rate_update(0.025, 2.0, 0, 1, 0.5, Mode::Alg2), 0.035355, epsilon = 1e-6);
        assert_eq!(rate_update(0.025, 2.0, 1, 5, 0.5, Mode::Alg3), 0.00625);
    }

    #[test]
    fn uniform_first_draw() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut counts = [0usize; 3];
        let n = 60_000;
        for _ in 0..n {
            let mut st = BanditState::new(vec![0, 1, 2], params(Mode::Alg1)).unwrap();
            counts[st.sample_controller(&mut rng).unwrap()] += 1;
        }
        // chi-square with 2 dof, 1% critical value 9.21
        let e = n as f64 / 3.0;
        let chi2: f64 = counts.iter().map(|&c| (c as f64 - e).powi(2) / e).sum();
        assert!(chi2 < 9.21, "{counts:?}");
    }

    #[test]
    fn lazy_switching_keeps_controller_when_weights_frozen() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut st = BanditState::new(vec![0, 1, 2], params(Mode::Alg3)).unwrap();
        let first = st.sample_controller(&mut rng).unwrap();
        for _ in 0..50 {
            let k = st.current().unwrap();
            st.finish_batch(&BatchOutcome {
                controller: k,
                steps: 5,
                cost: 0.0,
                break_fired: false,
                end_norm: 1.0,
            })
            .unwrap();
            assert_eq!(st.stay_probability(), Some(1.0));
            assert_eq!(st.sample_controller(&mut rng).unwrap(), first);
        }
    }

    #[test]
    fn lazy_gate_closes_after_break_and_bucket_change() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut st = BanditState::new(vec![0, 1, 2], params(Mode::Alg3)).unwrap();
        assert_eq!(st.stay_probability(), None);
        let k = st.sample_controller(&mut rng).unwrap();
        st.finish_batch(&BatchOutcome { controller: k, steps: 1, cost: 1.0, break_fired: true, end_norm: 1.0 })
            .unwrap();
        assert_eq!(st.stay_probability(), None);
        let k = st.sample_controller(&mut rng).unwrap();
        // ||x|| = 1000 moves the bucket off zero
        st.finish_batch(&BatchOutcome { controller: k, steps: 1, cost: 1.0, break_fired: false, end_norm: 1000.0 })
            .unwrap();
        assert_ne!(st.s(), 0);
        assert_eq!(st.stay_probability(), None);
    }

    #[test]
    fn empty_pool_terminates() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut st = BanditState::new(vec![4], params(Mode::Alg1)).unwrap();
        let k = st.sample_controller(&mut rng).unwrap();
        assert_eq!(k, 4);
        st.finish_batch(&BatchOutcome { controller: 4, steps: 1, cost: 1.0, break_fired: true, end_norm: 1.0 })
            .unwrap();
        assert!(st.pool().is_empty());
        assert_eq!(st.falsified(), &[4]);
        assert!(matches!(st.sample_controller(&mut rng), Err(DbarError::EmptyPool { batch: 1 })));
    }

    #[test]
    fn alg2_counts_falsifications() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut st = BanditState::new(vec![0, 1, 2], params(Mode::Alg2)).unwrap();
        let k = st.sample_controller(&mut rng).unwrap();
        let tr = st
            .finish_batch(&BatchOutcome { controller: k, steps: 1, cost: 0.0, break_fired: true, end_norm: 1.0 })
            .unwrap();
        assert_eq!(st.mu(), 1);
        assert_relative_eq!(tr.eta_next, 0.025 * 2f64.sqrt(), max_relative = 1e-15);
    }

    #[test]
    fn invalid_params_rejected() {
        let mut p = params(Mode::Alg1);
        p.alpha0 = 1.0;
        assert!(BanditState::new(vec![0], p).is_err());
        let mut p = params(Mode::Alg1);
        p.eta0 = -1.0;
        assert!(BanditState::new(vec![0], p).is_err());
        assert!(BanditState::new(vec![], params(Mode::Alg1)).is_err());
    }

    fn linear_ctx_parts(gain: [[f64; 2]; 2], horizon: usize) -> (Plant, ControllerPool, NoisePath) {
        let plant = Plant::Linear(LinearPlant::default());
        let pool = ControllerPool::new(vec![ControllerKind::LinearGain { gain }]).unwrap();
        let noise = NoisePath::generate(&NoiseConfig {
            kind: NoiseKind::Zero,
            dim: 2,
            horizon: Some(horizon),
            seed: 0,
        })
        .unwrap();
        (plant, pool, noise)
    }

    /// Gain making `A + B K = diag(0.5, 0.5)`.
    fn contracting_gain() -> [[f64; 2]; 2] {
        let p = LinearPlant::default();
        let b = p.b;
        let det = b[0][0] * b[1][1] - b[0][1] * b[1][0];
        let binv = [[b[1][1] / det, -b[0][1] / det], [-b[1][0] / det, b[0][0] / det]];
        let target = [[0.5, 0.0], [0.0, 0.5]];
        let mut k = [[0.0; 2]; 2];
        for i in 0..2 {
            for j in 0..2 {
                k[i][j] = (0..2).map(|m| binv[i][m] * (target[m][j] - p.a[m][j])).sum();
            }
        }
        k
    }

    #[test]
    fn stable_single_arm_runs_full_batch() {
        let (plant, pool, noise) = linear_ctx_parts(contracting_gain(), 100);
        let schedule = BatchSchedule::fixed(10).unwrap();
        let beta = BetaEnvelope::exponential(0.99).unwrap();
        let ctx = BatchContext {
            plant: &plant,
            pool: &pool,
            noise: &noise,
            cost: CostKind::StateNormSquared,
            schedule: &schedule,
            beta: &beta,
            gamma: 2.5,
            w_max: 1.0,
            horizon: 100,
        };
        let x0 = StateVector::new(vec![1.0, 1.0]).unwrap();
        let mut st = BanditState::new(vec![0], BanditParams { x0_norm: x0.norm(), ..params(Mode::Alg1) }).unwrap();
        let mut log = EpisodeLog::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let end = run_batch(&mut st, &ctx, &mut rng, 0, x0, &mut log).unwrap();
        assert_eq!(end.outcome.steps, 10);
        assert!(!end.outcome.break_fired);
        assert_eq!(end.next_time, 10);
        assert_eq!(end.transition.s_next, 0);
        assert_eq!(st.eta(), 0.025);
        assert_relative_eq!(end.state.as_slice()[0], 0.5f64.powi(10), max_relative = 1e-9);
        // cost = sum_{t<10} ||x_t||^2 = 2 sum 0.25^t
        let expected: f64 = (0..10).map(|t| 2.0 * 0.25f64.powi(t)).sum();
        assert_relative_eq!(end.outcome.cost, expected, max_relative = 1e-12);
        log.check_consistency().unwrap();
    }

    #[test]
    fn destabilizing_arm_is_falsified_at_first_violation() {
        // K = 0: x_{t+1} = A x_t. Hand oracle rolls the open loop forward.
        let (plant, pool, noise) = linear_ctx_parts([[0.0; 2]; 2], 100);
        let schedule = BatchSchedule::fixed(11).unwrap();
        let beta = BetaEnvelope::exponential(0.99).unwrap();
        let ctx = BatchContext {
            plant: &plant,
            pool: &pool,
            noise: &noise,
            cost: CostKind::StateNormSquared,
            schedule: &schedule,
            beta: &beta,
            gamma: 2.5,
            w_max: 1.0,
            horizon: 100,
        };
        let x0: [f64; 2] = [100.0, 200.0];
        let start_norm = (x0[0] * x0[0] + x0[1] * x0[1]).sqrt();
        let a = LinearPlant::default().a;
        let mut xs = x0;
        let mut first_violation = None;
        for t in 0..11 {
            xs = [a[0][0] * xs[0] + a[0][1] * xs[1], a[1][0] * xs[0] + a[1][1] * xs[1]];
            let n = (xs[0] * xs[0] + xs[1] * xs[1]).sqrt();
            if n > 0.99f64.powi(t + 1) * start_norm + 2.5 {
                first_violation = Some(t as usize);
                break;
            }
        }
        let first_violation = first_violation.unwrap();

        let mut st = BanditState::new(vec![0], BanditParams { x0_norm: start_norm, ..params(Mode::Alg1) }).unwrap();
        let mut log = EpisodeLog::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let end = run_batch(&mut st, &ctx, &mut rng, 0, StateVector::new(x0.to_vec()).unwrap(), &mut log).unwrap();
        assert!(end.outcome.break_fired);
        assert_eq!(end.outcome.steps, first_violation + 1);
        assert!(st.pool().is_empty());
        assert_eq!(log.falsified, vec![0]);
        assert!(matches!(
            run_batch(&mut st, &ctx, &mut rng, end.next_time, end.state, &mut log),
            Err(DbarError::EmptyPool { .. })
        ));
    }

    #[test]
    fn horizon_clips_first_batch() {
        let plant = Plant::Linear(LinearPlant::default());
        let k = contracting_gain();
        let pool = ControllerPool::new(vec![
            ControllerKind::LinearGain { gain: k },
            ControllerKind::LinearGain { gain: k },
        ])
        .unwrap();
        let horizon = 5;
        let noise = NoisePath::generate(&NoiseConfig {
            kind: NoiseKind::Sinusoidal2d,
            dim: 2,
            horizon: Some(horizon),
            seed: 0,
        })
        .unwrap();
        let schedule = BatchSchedule::linear_experiment();
        let beta = BetaEnvelope::exponential(0.99).unwrap();
        let ctx = BatchContext {
            plant: &plant,
            pool: &pool,
            noise: &noise,
            cost: CostKind::StateNormSquared,
            schedule: &schedule,
            beta: &beta,
            gamma: 2.5,
            w_max: 1.0,
            horizon,
        };
        let x0 = StateVector::new(vec![1.0, 2.0]).unwrap();
        let mut st = BanditState::new(vec![0, 1], BanditParams { x0_norm: x0.norm(), ..params(Mode::Alg1) }).unwrap();
        let mut log = EpisodeLog::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let end = run_batch(&mut st, &ctx, &mut rng, 0, x0, &mut log).unwrap();
        assert_eq!(end.outcome.steps, horizon + 1);
        assert_eq!(end.next_time, horizon + 1);
        assert!(log.batches[0].truncated);
        assert_eq!(log.steps.len(), horizon + 1);
    }
}
