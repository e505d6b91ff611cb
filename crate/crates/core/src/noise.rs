//! Disturbance generators.
//!
//! Stochastic kinds draw their whole path from a dedicated ChaCha stream
//! keyed by the seed, so every run sharing a seed sees the same path no
//! matter which policy consumes it.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::domain::NoiseSample;
use crate::error::{DbarError, Result};

/// ChaCha stream reserved for disturbances; policies draw from stream 0.
pub const NOISE_STREAM: u64 = 1;

pub const GAUSSIAN_MEAN: f64 = 0.3;
pub const GAUSSIAN_SD: f64 = 0.1;
pub const GAUSSIAN_LOW: f64 = -0.4;
pub const GAUSSIAN_HIGH: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NoiseKind {
    /// `[sin(t / 5 pi), sin(t / 11 pi)]`
    Sinusoidal2d,
    /// `sin(t / 7 pi)`
    Sinusoidal1d,
    /// Each coordinate `N(0.3, 0.1^2)` truncated to `[-0.4, 1]`.
    TruncatedGaussian,
    /// `w_0 ~ U[1/3 - 2/(3T), 1/3 + 2/(3T)]^d`, increments `U[-2/(3T), 2/(3T)]^d`.
    UniformRandomWalk,
    /// All-zero disturbance.
    Zero,
}

impl NoiseKind {
    pub fn is_stochastic(&self) -> bool {
        matches!(self, NoiseKind::TruncatedGaussian | NoiseKind::UniformRandomWalk)
    }
}

impl fmt::Display for NoiseKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            NoiseKind::Sinusoidal2d => "sinusoidal-2d",
            NoiseKind::Sinusoidal1d => "sinusoidal-1d",
            NoiseKind::TruncatedGaussian => "truncated-gaussian",
            NoiseKind::UniformRandomWalk => "uniform-random-walk",
            NoiseKind::Zero => "zero",
        })
    }
}

impl FromStr for NoiseKind {
    type Err = DbarError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sinusoidal-2d" => Ok(NoiseKind::Sinusoidal2d),
            "sinusoidal-1d" => Ok(NoiseKind::Sinusoidal1d),
            "truncated-gaussian" => Ok(NoiseKind::TruncatedGaussian),
            "uniform-random-walk" => Ok(NoiseKind::UniformRandomWalk),
            "zero" => Ok(NoiseKind::Zero),
            other => Err(DbarError::Config(format!("unknown noise kind `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseConfig {
    pub kind: NoiseKind,
    /// Disturbance dimension (2 for the linear plant, 1 for the ball-beam).
    pub dim: usize,
    pub horizon: Option<usize>,
    pub seed: u64,
}

/// Disturbance path `w_0, ..., w_T`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoisePath {
    samples: Vec<NoiseSample>,
}

impl NoisePath {
    /// Generates the full path for `t = 0..=T` and checks the per-kind bound.
    pub fn generate(config: &NoiseConfig) -> Result<Self> {
        let horizon = config
            .horizon
            .ok_or_else(|| DbarError::Config("noise horizon T is not set".into()))?;
        let dim = config.dim;
        match config.kind {
            NoiseKind::Sinusoidal2d if dim != 2 => {
                return Err(DbarError::DimensionMismatch {
                    context: "sinusoidal-2d noise",
                    expected: 2,
                    actual: dim,
                })
            }
            NoiseKind::Sinusoidal1d if dim != 1 => {
                return Err(DbarError::DimensionMismatch {
                    context: "sinusoidal-1d noise",
                    expected: 1,
                    actual: dim,
                })
            }
            _ => {}
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(NOISE_STREAM);

        let samples: Vec<NoiseSample> = match config.kind {
            NoiseKind::Sinusoidal2d | NoiseKind::Sinusoidal1d | NoiseKind::Zero => {
                (0..=horizon).map(|t| deterministic_sample(config.kind, dim, t)).collect()
            }
            NoiseKind::TruncatedGaussian => {
                let normal = Normal::new(GAUSSIAN_MEAN, GAUSSIAN_SD).expect("valid normal parameters");
                (0..=horizon)
                    .map(|_| {
                        NoiseSample::new(
                            (0..dim)
                                .map(|_| truncated_normal_draw(&normal, &mut rng))
                                .collect(),
                        )
                    })
                    .collect()
            }
            NoiseKind::UniformRandomWalk => {
                if horizon == 0 {
                    return Err(DbarError::Config("uniform random walk needs T >= 1".into()));
                }
                let half = 2.0 / (3.0 * horizon as f64);
                let mut w: Vec<f64> = (0..dim)
                    .map(|_| rng.random_range(1.0 / 3.0 - half..=1.0 / 3.0 + half))
                    .collect();
                let mut out = Vec::with_capacity(horizon + 1);
                out.push(NoiseSample::new(w.clone()));
                for _ in 1..=horizon {
                    for wi in w.iter_mut() {
                        *wi += rng.random_range(-half..=half);
                    }
                    out.push(NoiseSample::new(w.clone()));
                }
                out
            }
        };
        let path = Self { samples };
        path.check_bound(config.kind)?;
        Ok(path)
    }

    fn check_bound(&self, kind: NoiseKind) -> Result<()> {
        for (t, w) in self.samples.iter().enumerate() {
            let ok = match kind {
                NoiseKind::TruncatedGaussian => w
                    .as_slice()
                    .iter()
                    .all(|v| (GAUSSIAN_LOW..=GAUSSIAN_HIGH).contains(v)),
                _ => w.max_abs() <= 1.0,
            };
            if !ok {
                return Err(DbarError::Invariant(format!(
                    "{kind} sample at t={t} is out of bounds: {:?}",
                    w.as_slice()
                )));
            }
        }
        Ok(())
    }

    pub fn at(&self, t: usize) -> &NoiseSample {
        &self.samples[t]
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn samples(&self) -> &[NoiseSample] {
        &self.samples
    }
}

fn deterministic_sample(kind: NoiseKind, dim: usize, t: usize) -> NoiseSample {
    let t = t as f64;
    match kind {
        NoiseKind::Sinusoidal2d => NoiseSample::new(vec![(t / (5.0 * PI)).sin(), (t / (11.0 * PI)).sin()]),
        NoiseKind::Sinusoidal1d => NoiseSample::new(vec![(t / (7.0 * PI)).sin()]),
        _ => NoiseSample::zeros(dim),
    }
}

fn truncated_normal_draw<R: Rng>(normal: &Normal<f64>, rng: &mut R) -> f64 {
    loop {
        let v = normal.sample(rng);
        if (GAUSSIAN_LOW..=GAUSSIAN_HIGH).contains(&v) {
            return v;
        }
    }
}

/// `w_t` for the given configuration. Stochastic kinds replay their stream
/// from `t = 0`; use [`NoisePath::generate`] when the whole path is needed.
pub fn noise_at(config: &NoiseConfig, t: usize) -> Result<NoiseSample> {
    if !config.kind.is_stochastic() {
        return Ok(deterministic_sample(config.kind, config.dim, t));
    }
    let horizon = config
        .horizon
        .ok_or_else(|| DbarError::Config("noise horizon T is not set".into()))?;
    if t > horizon {
        return Err(DbarError::Config(format!("t = {t} is past the horizon T = {horizon}")));
    }
    Ok(NoisePath::generate(config)?.at(t).clone())
}
