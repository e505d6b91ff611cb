//! The two experimental plants and their candidate controller pools.

use serde::{Deserialize, Serialize};

use crate::domain::{check_dim, ControllerKind, ControllerSpec, NoiseSample, StateVector};
use crate::error::{DbarError, Result};

const GRAVITY: f64 = 9.81;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PlantFamily {
    Linear,
    BallBeam,
}

/// `x_{t+1} = A x_t + B u_t + w_t` on R^2.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearPlant {
    pub a: [[f64; 2]; 2],
    pub b: [[f64; 2]; 2],
}

impl Default for LinearPlant {
    fn default() -> Self {
        Self {
            a: [[2.0, 1.2], [1.1, 2.5]],
            b: [[1.0, 0.3], [0.4, 0.9]],
        }
    }
}

impl LinearPlant {
    /// `A + B K`.
    pub fn closed_loop(&self, gain: &[[f64; 2]; 2]) -> [[f64; 2]; 2] {
        let mut m = self.a;
        for (i, row) in m.iter_mut().enumerate() {
            for (j, entry) in row.iter_mut().enumerate() {
                *entry += self.b[i][0] * gain[0][j] + self.b[i][1] * gain[1][j];
            }
        }
        m
    }
}

pub fn linear_step(plant: &LinearPlant, x: &[f64], u: &[f64], w: &[f64]) -> Result<Vec<f64>> {
    check_dim("linear plant state", 2, x.len())?;
    check_dim("linear plant action", 2, u.len())?;
    check_dim("linear plant noise", 2, w.len())?;
    let (a, b) = (&plant.a, &plant.b);
    Ok(vec![
        a[0][0] * x[0] + a[0][1] * x[1] + b[0][0] * u[0] + b[0][1] * u[1] + w[0],
        a[1][0] * x[0] + a[1][1] * x[1] + b[1][0] * u[0] + b[1][1] * u[1] + w[1],
    ])
}

/// Forward-Euler ball-and-beam with states
/// `(y1, y2, y3, y4) = (x, x', -9.81 B theta, -9.81 B theta')` and input `v`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BallBeamPlant {
    pub b_const: f64,
    pub dt: f64,
    pub noise_gain: f64,
}

impl Default for BallBeamPlant {
    fn default() -> Self {
        Self {
            b_const: 0.7143,
            dt: 0.01,
            noise_gain: 3.0,
        }
    }
}

impl BallBeamPlant {
    /// Continuous-time vector field at `(y, v, w)`.
    pub fn derivative(&self, y: &[f64], v: f64, w: f64) -> [f64; 4] {
        let gb = GRAVITY * self.b_const;
        [
            y[1],
            gb * (y[2] / gb).sin() + y[0] * y[3] * y[3] / (self.b_const * GRAVITY * GRAVITY) + self.noise_gain * w,
            y[3],
            v,
        ]
    }
}

pub fn ballbeam_step(plant: &BallBeamPlant, y: &[f64], v: f64, w: f64) -> Result<Vec<f64>> {
    check_dim("ball-beam state", 4, y.len())?;
    let d = plant.derivative(y, v, w);
    Ok(y.iter().zip(d).map(|(yi, di)| yi + plant.dt * di).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Plant {
    Linear(LinearPlant),
    BallBeam(BallBeamPlant),
}

impl Plant {
    pub fn family(&self) -> PlantFamily {
        match self {
            Plant::Linear(_) => PlantFamily::Linear,
            Plant::BallBeam(_) => PlantFamily::BallBeam,
        }
    }

    pub fn state_dim(&self) -> usize {
        match self {
            Plant::Linear(_) => 2,
            Plant::BallBeam(_) => 4,
        }
    }

    pub fn noise_dim(&self) -> usize {
        match self {
            Plant::Linear(_) => 2,
            Plant::BallBeam(_) => 1,
        }
    }

    pub fn step(&self, state: &StateVector, action: &[f64], noise: &NoiseSample) -> Result<StateVector> {
        let next = match self {
            Plant::Linear(p) => linear_step(p, state.as_slice(), action, noise.as_slice())?,
            Plant::BallBeam(p) => {
                check_dim("ball-beam action", 1, action.len())?;
                check_dim("ball-beam noise", 1, noise.dim())?;
                ballbeam_step(p, state.as_slice(), action[0], noise.as_slice()[0])?
            }
        };
        StateVector::from_step(next)
    }
}

/// Parameter grid a pool is built from. Controllers are enumerated with the
/// last listed parameter varying fastest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum PoolGrid {
    Linear {
        k1: Vec<f64>,
        k2: Vec<f64>,
        k3: Vec<f64>,
        k4: Vec<f64>,
    },
    NestedSaturating {
        p: Vec<f64>,
        k1: Vec<f64>,
        k2: Vec<f64>,
    },
}

impl PoolGrid {
    pub fn default_linear() -> Self {
        PoolGrid::Linear {
            k1: vec![-3.0, -2.0, -1.0],
            k2: vec![-1.0, 0.0, 1.0],
            k3: vec![-3.0, -2.0, -1.0],
            k4: vec![-3.0, -2.0, -1.0],
        }
    }

    pub fn default_ballbeam() -> Self {
        PoolGrid::NestedSaturating {
            p: vec![2.0, 16.0, 30.0, 44.0, 58.0, 72.0, 86.0, 100.0],
            k1: (0..10).map(|i| 2.0 + 0.5 * i as f64).collect(),
            k2: (0..10).map(|i| 1.0 + 0.5 * i as f64).collect(),
        }
    }

    pub fn family(&self) -> PlantFamily {
        match self {
            PoolGrid::Linear { .. } => PlantFamily::Linear,
            PoolGrid::NestedSaturating { .. } => PlantFamily::BallBeam,
        }
    }

    pub fn build(&self) -> Result<ControllerPool> {
        let mut kinds = Vec::new();
        match self {
            PoolGrid::Linear { k1, k2, k3, k4 } => {
                for &a in k1 {
                    for &b in k2 {
                        for &c in k3 {
                            for &d in k4 {
                                kinds.push(ControllerKind::LinearGain { gain: [[a, b], [c, d]] });
                            }
                        }
                    }
                }
            }
            PoolGrid::NestedSaturating { p, k1, k2 } => {
                for &pp in p {
                    for &a in k1 {
                        for &b in k2 {
                            kinds.push(ControllerKind::NestedSaturating { p: pp, k1: a, k2: b });
                        }
                    }
                }
            }
        }
        ControllerPool::new(kinds)
    }
}

/// Ordered candidate set; the position of a controller is its pool index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControllerPool {
    specs: Vec<ControllerSpec>,
}

impl ControllerPool {
    pub fn new(kinds: Vec<ControllerKind>) -> Result<Self> {
        if kinds.is_empty() {
            return Err(DbarError::Config("controller pool is empty".into()));
        }
        let family = kinds[0].family();
        if kinds.iter().any(|k| k.family() != family) {
            return Err(DbarError::Config("controller pool mixes plant families".into()));
        }
        let specs = kinds
            .into_iter()
            .enumerate()
            .map(|(i, k)| ControllerSpec::new(i, k))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { specs })
    }

    pub fn len(&self) -> usize {
        self.specs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.specs.is_empty()
    }

    pub fn family(&self) -> PlantFamily {
        self.specs[0].kind.family()
    }

    pub fn get(&self, index: usize) -> Option<&ControllerSpec> {
        self.specs.get(index)
    }

    pub fn specs(&self) -> &[ControllerSpec] {
        &self.specs
    }
}

/// Largest eigenvalue magnitude of a 2x2 matrix, from its characteristic
/// polynomial `l^2 - tr l + det`.
pub fn spectral_radius_2x2(m: &[[f64; 2]; 2]) -> f64 {
    let tr = m[0][0] + m[1][1];
    let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
    let half = tr / 2.0;
    let disc = half * half - det;
    if disc >= 0.0 {
        let r = disc.sqrt();
        (half + r).abs().max((half - r).abs())
    } else {
        // complex pair, |l|^2 = det
        det.sqrt()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PoolPartition {
    pub stabilizing: Vec<usize>,
    pub destabilizing: Vec<usize>,
}

/// Splits a linear-gain pool by the closed-loop spectral radius:
/// destabilizing iff `rho(A + B K) >= 1`.
pub fn classify_linear_pool(plant: &LinearPlant, pool: &ControllerPool) -> Result<PoolPartition> {
    let mut part = PoolPartition {
        stabilizing: Vec::new(),
        destabilizing: Vec::new(),
    };
    for spec in pool.specs() {
        let ControllerKind::LinearGain { gain } = spec.kind else {
            return Err(DbarError::Config(format!(
                "controller {} is not a linear gain",
                spec.index
            )));
        };
        if spectral_radius_2x2(&plant.closed_loop(&gain)) < 1.0 {
            part.stabilizing.push(spec.index);
        } else {
            part.destabilizing.push(spec.index);
        }
    }
    Ok(part)
}
