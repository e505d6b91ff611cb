//! Experiment configuration, the shipped presets, and the flat
//! `key = value` text format used by config files and CSV headers.
//!
//! ```text
//! # comment
//! preset = example1-sinusoidal
//! eta0 = 0.05
//! seeds = 1..10
//! ```
//!
//! Keys absent from a file keep the value of the named preset. Schema:
//!
//! | key | value |
//! |-----|-------|
//! | `preset` | preset name, applied first |
//! | `plant` | `linear` or `ballbeam` |
//! | `plant.a`, `plant.b` | four comma-separated entries, row major (linear) |
//! | `plant.b_const`, `plant.dt`, `plant.noise_gain` | reals (ball-beam) |
//! | `pool.k1` .. `pool.k4` | comma-separated grid (linear) |
//! | `pool.p`, `pool.k1`, `pool.k2` | comma-separated grid (ball-beam) |
//! | `noise` | `sinusoidal-2d`, `sinusoidal-1d`, `truncated-gaussian`, `uniform-random-walk`, `zero` |
//! | `cost` | `state-norm-squared` or `state-plus-action-norm-squared` |
//! | `mode` | `alg1`, `alg2`, `alg3` |
//! | `batch` | `dynamic` or `fixed` (fixed uses `tau_0` throughout) |
//! | `rate` | `adaptive` or `fixed` |
//! | `horizon` | last time index `T` |
//! | `eta0`, `gamma`, `w_max`, `alpha0`, `y`, `switch_cost` | reals |
//! | `schedule` | `fixed:tau`, `poly:z1,z2,z3,nu`, `anchored:tau0,offset,scale,exponent` |
//! | `beta` | `exp:rate` or `poly:c,q` |
//! | `delta` | `auto` or a real |
//! | `x0` | comma-separated initial state |
//! | `seeds` | ranges and lists, e.g. `1..10,15` |
//! | `assumption_horizon` | batches checked for the schedule growth conditions |

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::bandit::{Mode, RateMode};
use crate::domain::CostKind;
use crate::error::{DbarError, Result};
use crate::noise::NoiseKind;
use crate::schedule::{
    delta_default, delta_first_contracting, parse_list, validate_stability_precondition, BatchSchedule,
    BetaEnvelope, PreconditionReport, DEFAULT_ASSUMPTION_HORIZON,
};
use crate::systems::{BallBeamPlant, LinearPlant, Plant, PlantFamily, PoolGrid};

pub const PRESETS: &[&str] = &[
    "example1-sinusoidal",
    "example1-gaussian",
    "example1-walk",
    "example2-beta1",
    "example2-beta2",
    "example2-beta3",
    "example2-beta4",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BatchMode {
    Dynamic,
    /// Every batch has length `tau_0` of the configured schedule.
    Fixed,
}

impl fmt::Display for BatchMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BatchMode::Dynamic => "dynamic",
            BatchMode::Fixed => "fixed",
        })
    }
}

impl FromStr for BatchMode {
    type Err = DbarError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dynamic" => Ok(BatchMode::Dynamic),
            "fixed" => Ok(BatchMode::Fixed),
            other => Err(DbarError::Config(format!("unknown batch mode `{other}` (fixed|dynamic)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum DeltaSetting {
    /// `gamma w_max / (1 - beta(tau_0))`
    Auto,
    Value(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub preset: Option<String>,
    pub plant: Plant,
    pub pool: PoolGrid,
    pub noise: NoiseKind,
    pub cost: CostKind,
    pub mode: Mode,
    pub batch: BatchMode,
    pub rate: RateMode,
    pub horizon: usize,
    pub eta0: f64,
    pub gamma: f64,
    pub w_max: f64,
    pub alpha0: f64,
    pub y: f64,
    pub schedule: BatchSchedule,
    pub beta: BetaEnvelope,
    pub delta: DeltaSetting,
    pub x0: Vec<f64>,
    pub seeds: Vec<u64>,
    pub switch_cost: f64,
    pub assumption_horizon: usize,
}

impl ExperimentConfig {
    pub fn preset(name: &str) -> Result<Self> {
        let linear = |noise: NoiseKind| ExperimentConfig {
            preset: Some(name.to_string()),
            plant: Plant::Linear(LinearPlant::default()),
            pool: PoolGrid::default_linear(),
            noise,
            cost: CostKind::StateNormSquared,
            mode: Mode::Alg1,
            batch: BatchMode::Dynamic,
            rate: RateMode::Adaptive,
            horizon: 3000,
            eta0: 0.025,
            gamma: 2.5,
            w_max: 1.0,
            alpha0: 1.01,
            y: 0.5,
            schedule: BatchSchedule::linear_experiment(),
            beta: BetaEnvelope::Exponential { rate: 0.99 },
            delta: DeltaSetting::Auto,
            x0: vec![100.0, 200.0],
            seeds: (1..=10).collect(),
            switch_cost: 1.0,
            assumption_horizon: DEFAULT_ASSUMPTION_HORIZON,
        };
        let ballbeam = |q: f64| -> Result<ExperimentConfig> {
            let beta = BetaEnvelope::polynomial(10.0, q)?;
            let schedule = BatchSchedule::ballbeam_experiment();
            let gamma = 1.5;
            let w_max = 1.0;
            let delta = match delta_default(gamma, w_max, &beta, schedule.tau(0)) {
                Ok(d) => d,
                Err(_) => delta_first_contracting(gamma, w_max, &beta, &schedule, DEFAULT_ASSUMPTION_HORIZON)?,
            };
            Ok(ExperimentConfig {
                preset: Some(name.to_string()),
                plant: Plant::BallBeam(BallBeamPlant::default()),
                pool: PoolGrid::default_ballbeam(),
                noise: NoiseKind::Sinusoidal1d,
                cost: CostKind::StatePlusActionNormSquared,
                mode: Mode::Alg1,
                batch: BatchMode::Dynamic,
                rate: RateMode::Adaptive,
                horizon: 5000,
                eta0: 0.025,
                gamma,
                w_max,
                alpha0: 1.01,
                y: 0.5,
                schedule,
                beta,
                delta: DeltaSetting::Value(delta),
                x0: vec![-32.0, 24.0, 5.6, 24.0],
                seeds: (1..=10).collect(),
                switch_cost: 1.0,
                assumption_horizon: DEFAULT_ASSUMPTION_HORIZON,
            })
        };
        match name {
            "example1-sinusoidal" => Ok(linear(NoiseKind::Sinusoidal2d)),
            "example1-gaussian" => Ok(linear(NoiseKind::TruncatedGaussian)),
            "example1-walk" => Ok(linear(NoiseKind::UniformRandomWalk)),
            "example2-beta1" => ballbeam(1.0),
            "example2-beta2" => ballbeam(1.02),
            "example2-beta3" => ballbeam(1.05),
            "example2-beta4" => ballbeam(1.08),
            other => Err(DbarError::Config(format!(
                "unknown preset `{other}`; available: {}",
                PRESETS.join(", ")
            ))),
        }
    }

    /// Schedule actually run: the configured one, or `tau_0` throughout for
    /// the fixed-batch ablation.
    pub fn effective_schedule(&self) -> BatchSchedule {
        match self.batch {
            BatchMode::Dynamic => self.schedule,
            BatchMode::Fixed => BatchSchedule::Fixed {
                tau: self.schedule.tau(0),
            },
        }
    }

    pub fn x0_norm(&self) -> f64 {
        crate::domain::euclidean_norm(&self.x0)
    }

    /// Minimal admissible delta, when finite.
    pub fn minimal_delta(&self) -> Option<f64> {
        delta_default(self.gamma, self.w_max, &self.beta, self.schedule.tau(0)).ok()
    }

    pub fn resolved_delta(&self) -> Result<f64> {
        match self.delta {
            DeltaSetting::Value(v) => Ok(v),
            DeltaSetting::Auto => delta_default(self.gamma, self.w_max, &self.beta, self.schedule.tau(0)),
        }
    }

    pub fn precondition_report(&self) -> PreconditionReport {
        validate_stability_precondition(&self.schedule, &self.beta)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("eta0", self.eta0),
            ("gamma", self.gamma),
            ("w_max", self.w_max),
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
        if !(self.switch_cost >= 0.0 && self.switch_cost.is_finite()) {
            return Err(DbarError::Parameter {
                name: "switch_cost",
                reason: format!("must be non-negative, got {}", self.switch_cost),
            });
        }
        if self.x0.len() != self.plant.state_dim() {
            return Err(DbarError::Parameter {
                name: "x0",
                reason: format!("plant state has dimension {}, x0 has {}", self.plant.state_dim(), self.x0.len()),
            });
        }
        if self.x0.iter().any(|v| !v.is_finite()) || self.x0_norm() == 0.0 {
            return Err(DbarError::Parameter {
                name: "x0",
                reason: "must be finite and non-zero".into(),
            });
        }
        if self.pool.family() != self.plant.family() {
            return Err(DbarError::Config("pool and plant belong to different families".into()));
        }
        match (self.noise, self.plant.family()) {
            (NoiseKind::Sinusoidal2d, PlantFamily::BallBeam) | (NoiseKind::Sinusoidal1d, PlantFamily::Linear) => {
                return Err(DbarError::Config(format!(
                    "noise `{}` does not match the plant's disturbance dimension {}",
                    self.noise,
                    self.plant.noise_dim()
                )))
            }
            _ => {}
        }
        self.pool.build()?;
        let delta = self.resolved_delta()?;
        if !(delta > 0.0 && delta.is_finite()) {
            return Err(DbarError::Parameter {
                name: "delta",
                reason: format!("must be positive and finite, got {delta}"),
            });
        }
        if let Some(min) = self.minimal_delta() {
            // small slack for values printed and re-read in decimal
            if delta < min * (1.0 - 1e-12) {
                return Err(DbarError::Parameter {
                    name: "delta",
                    reason: format!("must be at least gamma w_max / (1 - beta(tau_0)) = {min}, got {delta}"),
                });
            }
        }
        if self.seeds.is_empty() {
            return Err(DbarError::Parameter {
                name: "seeds",
                reason: "at least one seed is required".into(),
            });
        }
        Ok(())
    }

    /// Applies one `key = value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        let bad = |reason: String| DbarError::Config(format!("`{key}`: {reason}"));
        let real = || -> Result<f64> { value.parse::<f64>().map_err(|e| bad(format!("`{value}`: {e}"))) };
        let list = || -> Result<Vec<f64>> { parse_list(value).map_err(bad) };
        match key {
            "preset" => {
                let seeds = self.seeds.clone();
                *self = ExperimentConfig::preset(value)?;
                self.seeds = seeds;
            }
            "plant" => {
                self.plant = match value {
                    "linear" => Plant::Linear(LinearPlant::default()),
                    "ballbeam" => Plant::BallBeam(BallBeamPlant::default()),
                    other => return Err(bad(format!("unknown plant `{other}` (linear|ballbeam)"))),
                }
            }
            "plant.a" | "plant.b" => {
                let Plant::Linear(ref mut p) = self.plant else {
                    return Err(bad("only valid for the linear plant".into()));
                };
                let v = list()?;
                if v.len() != 4 {
                    return Err(bad(format!("expected 4 entries, got {}", v.len())));
                }
                let m = [[v[0], v[1]], [v[2], v[3]]];
                if key == "plant.a" {
                    p.a = m;
                } else {
                    p.b = m;
                }
            }
            "plant.b_const" | "plant.dt" | "plant.noise_gain" => {
                let Plant::BallBeam(ref mut p) = self.plant else {
                    return Err(bad("only valid for the ball-beam plant".into()));
                };
                let v = real()?;
                match key {
                    "plant.b_const" => p.b_const = v,
                    "plant.dt" => p.dt = v,
                    _ => p.noise_gain = v,
                }
            }
            "pool.k1" | "pool.k2" | "pool.k3" | "pool.k4" | "pool.p" => {
                let v = list()?;
                if v.is_empty() {
                    return Err(bad("empty grid".into()));
                }
                let want_linear = self.plant.family() == PlantFamily::Linear;
                if want_linear && !matches!(self.pool, PoolGrid::Linear { .. }) {
                    self.pool = PoolGrid::default_linear();
                }
                if !want_linear && !matches!(self.pool, PoolGrid::NestedSaturating { .. }) {
                    self.pool = PoolGrid::default_ballbeam();
                }
                match (&mut self.pool, key) {
                    (PoolGrid::Linear { k1, .. }, "pool.k1") => *k1 = v,
                    (PoolGrid::Linear { k2, .. }, "pool.k2") => *k2 = v,
                    (PoolGrid::Linear { k3, .. }, "pool.k3") => *k3 = v,
                    (PoolGrid::Linear { k4, .. }, "pool.k4") => *k4 = v,
                    (PoolGrid::NestedSaturating { p, .. }, "pool.p") => *p = v,
                    (PoolGrid::NestedSaturating { k1, .. }, "pool.k1") => *k1 = v,
                    (PoolGrid::NestedSaturating { k2, .. }, "pool.k2") => *k2 = v,
                    _ => return Err(bad("not a parameter of this plant's pool".into())),
                }
            }
            "noise" => self.noise = value.parse()?,
            "cost" => self.cost = CostKind::parse(value)?,
            "mode" => self.mode = value.parse()?,
            "batch" => self.batch = value.parse()?,
            "rate" => self.rate = value.parse()?,
            "horizon" => self.horizon = value.parse().map_err(|e| bad(format!("`{value}`: {e}")))?,
            "eta0" => self.eta0 = real()?,
            "gamma" => self.gamma = real()?,
            "w_max" => self.w_max = real()?,
            "alpha0" => self.alpha0 = real()?,
            "y" => self.y = real()?,
            "switch_cost" => self.switch_cost = real()?,
            "schedule" => self.schedule = value.parse()?,
            "beta" => self.beta = value.parse()?,
            "delta" => {
                self.delta = if value == "auto" {
                    DeltaSetting::Auto
                } else {
                    DeltaSetting::Value(real()?)
                }
            }
            "x0" => self.x0 = list()?,
            "seeds" => self.seeds = parse_seeds(value)?,
            "assumption_horizon" => {
                self.assumption_horizon = value.parse().map_err(|e| bad(format!("`{value}`: {e}")))?
            }
            other => return Err(DbarError::Config(format!("unknown key `{other}`"))),
        }
        Ok(())
    }

    /// Every field as `(key, value)` pairs; [`ExperimentConfig::from_pairs`]
    /// inverts it exactly.
    pub fn to_pairs(&self) -> Vec<(String, String)> {
        let mut out: Vec<(String, String)> = Vec::new();
        let mut push = |k: &str, v: String| out.push((k.to_string(), v));
        push("preset", self.preset.clone().unwrap_or_else(|| "none".into()));
        match self.plant {
            Plant::Linear(p) => {
                push("plant", "linear".into());
                push("plant.a", join(&[p.a[0][0], p.a[0][1], p.a[1][0], p.a[1][1]]));
                push("plant.b", join(&[p.b[0][0], p.b[0][1], p.b[1][0], p.b[1][1]]));
            }
            Plant::BallBeam(p) => {
                push("plant", "ballbeam".into());
                push("plant.b_const", p.b_const.to_string());
                push("plant.dt", p.dt.to_string());
                push("plant.noise_gain", p.noise_gain.to_string());
            }
        }
        match &self.pool {
            PoolGrid::Linear { k1, k2, k3, k4 } => {
                push("pool.k1", join(k1));
                push("pool.k2", join(k2));
                push("pool.k3", join(k3));
                push("pool.k4", join(k4));
            }
            PoolGrid::NestedSaturating { p, k1, k2 } => {
                push("pool.p", join(p));
                push("pool.k1", join(k1));
                push("pool.k2", join(k2));
            }
        }
        push("noise", self.noise.to_string());
        push("cost", self.cost.as_str().into());
        push("mode", self.mode.to_string());
        push("batch", self.batch.to_string());
        push("rate", self.rate.to_string());
        push("horizon", self.horizon.to_string());
        push("eta0", self.eta0.to_string());
        push("gamma", self.gamma.to_string());
        push("w_max", self.w_max.to_string());
        push("alpha0", self.alpha0.to_string());
        push("y", self.y.to_string());
        push("switch_cost", self.switch_cost.to_string());
        push("schedule", self.schedule.to_string());
        push("beta", self.beta.to_string());
        push(
            "delta",
            match self.delta {
                DeltaSetting::Auto => "auto".into(),
                DeltaSetting::Value(v) => v.to_string(),
            },
        );
        push("x0", join(&self.x0));
        push("seeds", format_seeds(&self.seeds));
        push("assumption_horizon", self.assumption_horizon.to_string());
        out
    }

    /// Builds a configuration from pairs, starting from the preset named by
    /// a `preset` pair (or the first preset when there is none).
    pub fn from_pairs<'a, I>(pairs: I) -> Result<Self>
    where
        I: IntoIterator<Item = (&'a str, &'a str)>,
    {
        let pairs: Vec<(&str, &str)> = pairs.into_iter().collect();
        let preset = pairs.iter().find(|(k, _)| *k == "preset").map(|(_, v)| *v);
        let mut cfg = match preset {
            Some("none") | None => {
                let mut c = ExperimentConfig::preset(PRESETS[0])?;
                c.preset = None;
                c
            }
            Some(name) => ExperimentConfig::preset(name)?,
        };
        // plant before pool keys so grids land in the right family
        for (k, v) in pairs.iter().filter(|(k, _)| *k == "plant") {
            cfg.set(k, v)?;
        }
        for (k, v) in pairs.iter().filter(|(k, _)| *k != "preset" && *k != "plant") {
            cfg.set(k, v)?;
        }
        Ok(cfg)
    }

    /// Parses the flat text format.
    pub fn parse_text(text: &str) -> Result<Self> {
        let mut pairs = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                DbarError::Config(format!("line {}: expected `key = value`, got `{line}`", lineno + 1))
            })?;
            pairs.push((k.trim(), v.trim()));
        }
        Self::from_pairs(pairs)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (k, v) in self.to_pairs() {
            s.push_str(&k);
            s.push_str(" = ");
            s.push_str(&v);
            s.push('\n');
        }
        s
    }

    pub fn to_map(&self) -> BTreeMap<String, String> {
        self.to_pairs().into_iter().collect()
    }

    /// Short label for the ablation arm this configuration runs.
    pub fn arm_label(&self) -> String {
        let b = match self.batch {
            BatchMode::Fixed => "fixed-tau",
            BatchMode::Dynamic => "dynamic-tau",
        };
        let r = match self.rate {
            RateMode::Fixed => "fixed-eta",
            RateMode::Adaptive => "adaptive-eta",
        };
        format!("{}_{b}_{r}", self.mode)
    }
}

fn join(v: &[f64]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

/// Parses `1..10` (inclusive), `3`, and comma-separated mixtures.
pub fn parse_seeds(s: &str) -> Result<Vec<u64>> {
    let bad = |m: String| DbarError::Config(format!("seeds `{s}`: {m}"));
    let mut out = Vec::new();
    for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        if let Some((a, b)) = part.split_once("..") {
            let a: u64 = a.trim().parse().map_err(|e| bad(format!("{e}")))?;
            let b: u64 = b.trim().parse().map_err(|e| bad(format!("{e}")))?;
            if b < a {
                return Err(bad(format!("empty range {a}..{b}")));
            }
            out.extend(a..=b);
        } else {
            out.push(part.parse().map_err(|e| bad(format!("{e}")))?);
        }
    }
    if out.is_empty() {
        return Err(bad("no seeds".into()));
    }
    Ok(out)
}

/// Inverse of [`parse_seeds`], collapsing consecutive runs.
pub fn format_seeds(seeds: &[u64]) -> String {
    let mut parts = Vec::new();
    let mut i = 0;
    while i < seeds.len() {
        let mut j = i;
        while j + 1 < seeds.len() && seeds[j + 1] == seeds[j] + 1 {
            j += 1;
        }
        if j > i {
            parts.push(format!("{}..{}", seeds[i], seeds[j]));
        } else {
            parts.push(seeds[i].to_string());
        }
        i = j + 1;
    }
    parts.join(",")
}
