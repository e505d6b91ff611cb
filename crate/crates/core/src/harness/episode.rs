//! Runs one episode of the selection policy against a plant.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::bandit::{run_batch, BanditParams, BanditState, BatchContext};
use crate::domain::{EpisodeLog, EpisodeOutcome, StateVector};
use crate::error::{DbarError, Result};
use crate::harness::config::ExperimentConfig;
use crate::noise::{NoiseConfig, NoisePath};
use crate::systems::ControllerPool;

/// ChaCha stream used for controller draws; noise uses
/// [`crate::noise::NOISE_STREAM`], so arms sharing a seed see the same
/// disturbance path.
pub const POLICY_STREAM: u64 = 0;

/// Everything an episode needs that does not depend on the policy flags.
#[derive(Debug, Clone)]
pub struct EpisodeInputs {
    pub pool: ControllerPool,
    pub noise: NoisePath,
    pub seed: u64,
}

impl EpisodeInputs {
    pub fn prepare(config: &ExperimentConfig, seed: u64) -> Result<Self> {
        let pool = config.pool.build()?;
        let noise = NoisePath::generate(&NoiseConfig {
            kind: config.noise,
            dim: config.plant.noise_dim(),
            horizon: Some(config.horizon),
            seed,
        })?;
        Ok(Self { pool, noise, seed })
    }
}

pub fn policy_rng(seed: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(POLICY_STREAM);
    rng
}

/// Runs the policy for `t = 0..=T`. An emptied pool or a diverging state
/// ends the episode early and is recorded in [`EpisodeLog::outcome`].
pub fn simulate(config: &ExperimentConfig, inputs: &EpisodeInputs) -> Result<EpisodeLog> {
    let params = BanditParams {
        eta0: config.eta0,
        alpha0: config.alpha0,
        delta: config.resolved_delta()?,
        x0_norm: config.x0_norm(),
        y: config.y,
        mode: config.mode,
        rate: config.rate,
    };
    let schedule = config.effective_schedule();
    let ctx = BatchContext {
        plant: &config.plant,
        pool: &inputs.pool,
        noise: &inputs.noise,
        cost: config.cost,
        schedule: &schedule,
        beta: &config.beta,
        gamma: config.gamma,
        w_max: config.w_max,
        horizon: config.horizon,
    };
    let mut bandit = BanditState::new((0..inputs.pool.len()).collect(), params)?;
    let mut rng = policy_rng(inputs.seed);
    let mut log = EpisodeLog::new();
    let mut x = StateVector::new(config.x0.clone())?;
    let mut t = 0;
    while t <= config.horizon {
        if bandit.pool().is_empty() {
            log.outcome = EpisodeOutcome::Terminated {
                batch: bandit.batch(),
                t,
            };
            break;
        }
        match run_batch(&mut bandit, &ctx, &mut rng, t, x.clone(), &mut log) {
            Ok(end) => {
                x = end.state;
                t = end.next_time;
            }
            Err(DbarError::Explosion { step }) => {
                log.outcome = EpisodeOutcome::Exploded { t: step };
                break;
            }
            Err(e) => return Err(e),
        }
    }
    Ok(log)
}

pub fn run_episode(config: &ExperimentConfig, seed: u64) -> Result<EpisodeLog> {
    let inputs = EpisodeInputs::prepare(config, seed)?;
    simulate(config, &inputs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bandit::Mode;

    fn short(preset: &str, horizon: usize) -> ExperimentConfig {
        let mut c = ExperimentConfig::preset(preset).unwrap();
        c.horizon = horizon;
        c
    }

    #[test]
    fn horizon_zero_gives_single_step() {
        let c = short("example1-sinusoidal", 0);
        let log = run_episode(&c, 1).unwrap();
        assert_eq!(log.steps.len(), 1);
        assert_eq!(log.batches.len(), 1);
        assert_eq!(log.outcome, EpisodeOutcome::Completed);
        log.check_consistency().unwrap();
    }

    #[test]
    fn episodes_cover_every_time_step() {
        for p in ["example1-gaussian", "example2-beta2"] {
            let c = short(p, 400);
            let log = run_episode(&c, 3).unwrap();
            log.check_consistency().unwrap();
            if log.outcome == EpisodeOutcome::Completed {
                assert_eq!(log.steps.len(), 401);
                assert_eq!(log.steps.last().unwrap().t, 400);
            }
        }
    }

    #[test]
    fn same_seed_same_log() {
        let mut c = short("example1-walk", 300);
        c.mode = Mode::Alg3;
        assert_eq!(run_episode(&c, 7).unwrap(), run_episode(&c, 7).unwrap());
        assert_ne!(run_episode(&c, 7).unwrap(), run_episode(&c, 8).unwrap());
    }

    #[test]
    fn all_destabilizing_pool_terminates() {
        let mut c = short("example1-sinusoidal", 3000);
        c.set("pool.k1", "0").unwrap();
        c.set("pool.k2", "0").unwrap();
        c.set("pool.k3", "0").unwrap();
        c.set("pool.k4", "0,0.5").unwrap();
        let log = run_episode(&c, 1).unwrap();
        assert!(matches!(log.outcome, EpisodeOutcome::Terminated { .. }), "{:?}", log.outcome);
        assert_eq!(log.falsified.len(), 2);
        log.check_consistency().unwrap();
    }
}
