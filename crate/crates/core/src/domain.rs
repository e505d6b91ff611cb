//! Shared domain types: states, disturbances, controllers, costs and the
//! per-episode log.
//!
//! Everything here is immutable once built and every operation is a pure
//! function of its arguments.

use serde::{Deserialize, Serialize};

use crate::error::{DbarError, Result};
use crate::systems::{PlantFamily, Plant};

/// Plant state `x_t`.
///
/// A state with a non-finite entry cannot be constructed through
/// [`StateVector::new`]; plants report such steps as [`DbarError::Explosion`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateVector(Vec<f64>);

impl StateVector {
    pub fn new(entries: Vec<f64>) -> Result<Self> {
        if entries.iter().any(|v| !v.is_finite()) {
            return Err(DbarError::Parameter {
                name: "state",
                reason: format!("non-finite entry in {entries:?}"),
            });
        }
        Ok(Self(entries))
    }

    pub fn zeros(dim: usize) -> Self {
        Self(vec![0.0; dim])
    }

    /// Wraps plant output, mapping a non-finite entry to an explosion event.
    pub(crate) fn from_step(entries: Vec<f64>) -> Result<Self> {
        if entries.iter().all(|v| v.is_finite()) {
            Ok(Self(entries))
        } else {
            // The caller knows the time index and rewrites the step.
            Err(DbarError::Explosion { step: 0 })
        }
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn norm(&self) -> f64 {
        euclidean_norm(&self.0)
    }
}

impl AsRef<[f64]> for StateVector {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

/// Disturbance `w_t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSample(Vec<f64>);

impl NoiseSample {
    pub fn new(entries: Vec<f64>) -> Self {
        Self(entries)
    }

    pub fn zeros(dim: usize) -> Self {
        Self(vec![0.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn norm(&self) -> f64 {
        euclidean_norm(&self.0)
    }

    pub fn max_abs(&self) -> f64 {
        self.0.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

pub fn euclidean_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Parameters of one pool member.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ControllerKind {
    /// `u = K x` with `K = [[k1, k2], [k3, k4]]`.
    LinearGain { gain: [[f64; 2]; 2] },
    /// Nested saturation on the ball-beam state.
    NestedSaturating { p: f64, k1: f64, k2: f64 },
}

impl ControllerKind {
    pub fn family(&self) -> PlantFamily {
        match self {
            ControllerKind::LinearGain { .. } => PlantFamily::Linear,
            ControllerKind::NestedSaturating { .. } => PlantFamily::BallBeam,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControllerSpec {
    pub index: usize,
    pub kind: ControllerKind,
}

impl ControllerSpec {
    pub fn new(index: usize, kind: ControllerKind) -> Result<Self> {
        if let ControllerKind::NestedSaturating { p, k1, k2 } = kind {
            for (name, v) in [("p", p), ("k1", k1), ("k2", k2)] {
                if !(v > 0.0 && v.is_finite()) {
                    return Err(DbarError::Parameter {
                        name,
                        reason: format!("must be positive and finite, got {v}"),
                    });
                }
            }
        }
        Ok(Self { index, kind })
    }
}

/// Clips `z` to `[-p, p]`.
pub fn saturate(p: f64, z: f64) -> Result<f64> {
    if !(p > 0.0) {
        return Err(DbarError::Parameter {
            name: "p",
            reason: format!("saturation level must be positive, got {p}"),
        });
    }
    Ok(clip(p, z))
}

#[inline]
pub(crate) fn clip(p: f64, z: f64) -> f64 {
    if z > p {
        p
    } else if z < -p {
        -p
    } else {
        z
    }
}

/// Output `v'` of the nested saturating law, before the sign flip that
/// turns it into the applied beam acceleration.
///
/// ```text
/// eps = 1/sqrt(1 + y1^2 + y2^2),  p_i = p / eps^(i-1)
/// z1 = y1 + k1 y2 + k1 y3 + y4,  z2 = y2 + k2 y3 + y4,  z3 = y3 + y4,  z4 = y4
/// v' = sat_p4(z4 + sat_p3(z3 + sat_p2(z2 + sat_p1(z1))))
/// ```
pub fn nested_saturation(p: f64, k1: f64, k2: f64, y: &[f64]) -> f64 {
    let eps = 1.0 / (1.0 + y[0] * y[0] + y[1] * y[1]).sqrt();
    let p1 = p;
    let p2 = p / eps;
    let p3 = p / (eps * eps);
    let p4 = p / (eps * eps * eps);
    let z1 = y[0] + k1 * y[1] + k1 * y[2] + y[3];
    let z2 = y[1] + k2 * y[2] + y[3];
    let z3 = y[2] + y[3];
    let z4 = y[3];
    clip(p4, z4 + clip(p3, z3 + clip(p2, z2 + clip(p1, z1))))
}

/// `u = pi_i(x)`.
///
/// Linear gains return `K x`; nested-saturating controllers return the
/// applied beam input `v = -v'`.
pub fn controller_action(
    spec: &ControllerSpec,
    family: PlantFamily,
    state: &StateVector,
) -> Result<Vec<f64>> {
    if spec.kind.family() != family {
        return Err(DbarError::Config(format!(
            "controller {} is a {:?} controller but the plant is {:?}",
            spec.index,
            spec.kind.family(),
            family
        )));
    }
    let x = state.as_slice();
    match spec.kind {
        ControllerKind::LinearGain { gain } => {
            check_dim("linear controller state", 2, x.len())?;
            Ok(vec![
                gain[0][0] * x[0] + gain[0][1] * x[1],
                gain[1][0] * x[0] + gain[1][1] * x[1],
            ])
        }
        ControllerKind::NestedSaturating { p, k1, k2 } => {
            check_dim("ball-beam controller state", 4, x.len())?;
            Ok(vec![-nested_saturation(p, k1, k2, x)])
        }
    }
}

/// One transition `x_{t+1} = f(x_t, u_t, w_t)` of the given plant.
pub fn plant_step(
    plant: &Plant,
    state: &StateVector,
    action: &[f64],
    noise: &NoiseSample,
) -> Result<StateVector> {
    plant.step(state, action, noise)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CostKind {
    /// `||x||^2`
    StateNormSquared,
    /// `||x||^2 + ||u||^2`
    StatePlusActionNormSquared,
}

impl CostKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            CostKind::StateNormSquared => "state-norm-squared",
            CostKind::StatePlusActionNormSquared => "state-plus-action-norm-squared",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "state-norm-squared" => Ok(CostKind::StateNormSquared),
            "state-plus-action-norm-squared" => Ok(CostKind::StatePlusActionNormSquared),
            other => Err(DbarError::Config(format!("unknown cost kind `{other}`"))),
        }
    }
}

pub fn cost_eval(state: &StateVector, action: &[f64], kind: CostKind) -> f64 {
    let xs: f64 = state.as_slice().iter().map(|v| v * v).sum();
    match kind {
        CostKind::StateNormSquared => xs,
        CostKind::StatePlusActionNormSquared => xs + action.iter().map(|v| v * v).sum::<f64>(),
    }
}

pub(crate) fn check_dim(context: &'static str, expected: usize, actual: usize) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(DbarError::DimensionMismatch {
            context,
            expected,
            actual,
        })
    }
}

/// One executed time step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub t: usize,
    pub batch: usize,
    pub controller: usize,
    pub state_norm: f64,
    pub cost: f64,
}

/// Bookkeeping for one batch, written after its Phase 2 update.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchRecord {
    pub batch: usize,
    pub start: usize,
    pub scheduled_len: usize,
    pub effective_len: usize,
    pub controller: usize,
    pub break_fired: bool,
    /// True when the horizon cut the batch short.
    pub truncated: bool,
    pub cost: f64,
    pub end_norm: f64,
    /// `s_b` and `alpha_b` in effect during the batch.
    pub s: u32,
    pub alpha: f64,
    pub eta: f64,
    /// Values chosen for the next batch.
    pub s_next: u32,
    pub alpha_next: f64,
    pub eta_next: f64,
    pub weight_reset: bool,
    pub pool_size: usize,
    pub switched: bool,
}

/// How an episode ended.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum EpisodeOutcome {
    Completed,
    /// The pool emptied before the horizon.
    Terminated { batch: usize, t: usize },
    Exploded { t: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeLog {
    pub steps: Vec<StepRecord>,
    pub batches: Vec<BatchRecord>,
    pub outcome: EpisodeOutcome,
    pub falsified: Vec<usize>,
}

impl EpisodeLog {
    pub fn new() -> Self {
        Self {
            steps: Vec::new(),
            batches: Vec::new(),
            outcome: EpisodeOutcome::Completed,
            falsified: Vec::new(),
        }
    }

    /// Checks the structural invariants of the log: strictly increasing time,
    /// contiguous batches, and effective length equal to the schedule unless
    /// a Break or the horizon cut the batch.
    pub fn check_consistency(&self) -> Result<()> {
        for w in self.steps.windows(2) {
            if w[1].t != w[0].t + 1 {
                return Err(DbarError::Invariant(format!(
                    "time index jumps from {} to {}",
                    w[0].t, w[1].t
                )));
            }
        }
        let mut expected_start = 0;
        for b in &self.batches {
            if b.start != expected_start {
                return Err(DbarError::Invariant(format!(
                    "batch {} starts at {} but previous batch ended at {}",
                    b.batch, b.start, expected_start
                )));
            }
            // A Break on the last scheduled step still runs the full length.
            let ok = b.effective_len >= 1
                && b.effective_len <= b.scheduled_len
                && (b.break_fired || b.truncated || b.effective_len == b.scheduled_len)
                && (!b.truncated || b.effective_len < b.scheduled_len);
            if !ok {
                return Err(DbarError::Invariant(format!(
                    "batch {} ran {} of {} scheduled steps (break={}, truncated={})",
                    b.batch, b.effective_len, b.scheduled_len, b.break_fired, b.truncated
                )));
            }
            expected_start = b.start + b.effective_len;
        }
        Ok(())
    }
}

impl Default for EpisodeLog {
    fn default() -> Self {
        Self::new()
    }
}
