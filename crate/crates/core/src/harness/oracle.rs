//! Best single controller in hindsight.
//!
//! Every controller in the pool is rolled out alone from `x_0` under the
//! episode's disturbance path. A controller is eligible when its trajectory
//! stays inside `beta(t) ||x_0|| + gamma w_max` for every `t`; the oracle is
//! the eligible controller with the smallest total cost.

use crate::domain::{controller_action, cost_eval, ControllerSpec, StateVector};
use crate::error::{DbarError, Result};
use crate::harness::config::ExperimentConfig;
use crate::harness::episode::EpisodeInputs;

#[derive(Debug, Clone, PartialEq)]
pub struct Oracle {
    pub controller: usize,
    /// `c_t(x*_t, u*_t)` for `t = 0..=T`.
    pub costs: Vec<f64>,
    /// `||x*_t||` for `t = 0..=T`.
    pub norms: Vec<f64>,
    /// Eligible controllers with their total cost, in pool order.
    pub eligible: Vec<(usize, f64)>,
}

impl Oracle {
    pub fn total_cost(&self) -> f64 {
        self.costs.iter().sum()
    }
}

/// Rollout of one controller. `None` when the trajectory leaves the envelope
/// or diverges numerically.
pub fn rollout(
    config: &ExperimentConfig,
    inputs: &EpisodeInputs,
    spec: &ControllerSpec,
) -> Result<Option<(Vec<f64>, Vec<f64>)>> {
    let family = config.plant.family();
    let x0_norm = config.x0_norm();
    let slack = config.gamma * config.w_max;
    let mut x = StateVector::new(config.x0.clone())?;
    let mut costs = Vec::with_capacity(config.horizon + 1);
    let mut norms = Vec::with_capacity(config.horizon + 1);
    for t in 0..=config.horizon {
        let norm = x.norm();
        if norm > config.beta.eval(t) * x0_norm + slack {
            return Ok(None);
        }
        let u = controller_action(spec, family, &x)?;
        costs.push(cost_eval(&x, &u, config.cost));
        norms.push(norm);
        if t == config.horizon {
            break;
        }
        x = match config.plant.step(&x, &u, inputs.noise.at(t)) {
            Ok(next) => next,
            Err(DbarError::Explosion { .. }) => return Ok(None),
            Err(e) => return Err(e),
        };
    }
    Ok(Some((costs, norms)))
}

/// Computes the oracle for one disturbance path; ties go to the lower index.
pub fn oracle_trajectory(config: &ExperimentConfig, inputs: &EpisodeInputs) -> Result<Oracle> {
    let mut best: Option<(usize, f64, Vec<f64>, Vec<f64>)> = None;
    let mut eligible = Vec::new();
    for spec in inputs.pool.specs() {
        let Some((costs, norms)) = rollout(config, inputs, spec)? else {
            continue;
        };
        let total: f64 = costs.iter().sum();
        eligible.push((spec.index, total));
        if best.as_ref().is_none_or(|b| total < b.1) {
            best = Some((spec.index, total, costs, norms));
        }
    }
    let (controller, _, costs, norms) = best.ok_or(DbarError::OracleUndefined)?;
    Ok(Oracle {
        controller,
        costs,
        norms,
        eligible,
    })
}
