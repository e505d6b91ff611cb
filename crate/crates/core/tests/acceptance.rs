//! Acceptance criteria. Each test prints one `PASS` or `FAIL` line (visible
//! with `--nocapture`) and then asserts.

use std::sync::OnceLock;
use std::time::Instant;

use proptest::prelude::*;
use proptest::test_runner::{Config as ProptestConfig, TestRunner};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};

use dbar::bandit::{
    bucket_update, rate_update, softmax_distribution, weight_update, BanditParams, BanditState, BatchOutcome, Mode,
    RateMode,
};
use dbar::commands::{ablation_arms, cmd_ablation, RunOptions};
use dbar::domain::EpisodeOutcome;
use dbar::harness::config::ExperimentConfig;
use dbar::harness::sweep::{seed_sweep, SweepResult};
use dbar::systems::{classify_linear_pool, LinearPlant, PoolGrid};

fn report(name: &str, pass: bool, detail: &str) {
    println!("{} {name}: {detail}", if pass { "PASS" } else { "FAIL" });
}

fn ablation(preset: &str) -> SweepResult {
    let mut cfg = ExperimentConfig::preset(preset).unwrap();
    cfg.seeds = (1..=10).collect();
    seed_sweep(&ablation_arms(&cfg), None).unwrap()
}

fn linear_sinusoidal() -> &'static SweepResult {
    static CELL: OnceLock<SweepResult> = OnceLock::new();
    CELL.get_or_init(|| ablation("example1-sinusoidal"))
}

fn ballbeam_beta1() -> &'static SweepResult {
    static CELL: OnceLock<SweepResult> = OnceLock::new();
    CELL.get_or_init(|| ablation("example2-beta1"))
}

#[test]
fn pool_classification() {
    let start = Instant::now();
    let pool = PoolGrid::default_linear().build().unwrap();
    let part = classify_linear_pool(&LinearPlant::default(), &pool).unwrap();
    let elapsed = start.elapsed().as_secs_f64();
    let pass = part.destabilizing.len() == 53 && pool.len() == 81 && elapsed < 1.0;
    report(
        "pool classification",
        pass,
        &format!("{} of {} destabilizing in {elapsed:.4} s", part.destabilizing.len(), pool.len()),
    );
    assert!(pass);
}

#[test]
fn linear_stability_bound() {
    let sweep = linear_sinusoidal();
    let dbar = &sweep.arms[0];
    let base = &sweep.arms[3];
    assert_eq!(dbar.config.arm_label(), "alg1_dynamic-tau_adaptive-eta");
    assert_eq!(base.config.arm_label(), "alg1_fixed-tau_fixed-eta");
    let d = dbar.final_running_averages();
    let f = base.final_running_averages();
    let bound = dbar.config.gamma * dbar.config.w_max;
    let within = d.iter().filter(|v| **v <= bound).count();
    let lower = d.iter().zip(&f).filter(|(a, b)| a < b).count();
    let pass = within == d.len() && lower >= 9;
    report(
        "linear stability bound",
        pass,
        &format!(
            "DBAR <= {bound} in {within}/{} seeds, below fixed/fixed in {lower}/{}; DBAR {d:.3?}; fixed/fixed {f:.3?}",
            d.len(),
            d.len()
        ),
    );
    assert!(pass);
}

#[test]
fn linear_regret_ordering() {
    let sweep = linear_sinusoidal();
    let d = sweep.arms[0].final_regrets();
    let f = sweep.arms[3].final_regrets();
    let pairs: Vec<(f64, f64)> = d
        .iter()
        .zip(&f)
        .map(|(a, b)| (a.expect("DBAR regret"), b.expect("fixed/fixed regret")))
        .collect();
    let n = pairs.len() as f64;
    let mean_d = pairs.iter().map(|p| p.0).sum::<f64>() / n;
    let mean_f = pairs.iter().map(|p| p.1).sum::<f64>() / n;
    let diffs: Vec<f64> = pairs.iter().map(|p| p.1 - p.0).collect();
    let mean_gap = diffs.iter().sum::<f64>() / n;
    let sd = (diffs.iter().map(|x| (x - mean_gap).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    let se = sd / n.sqrt();
    let pass = mean_d < mean_f && mean_gap > 2.0 * se;
    report(
        "linear regret ordering",
        pass,
        &format!("mean regret DBAR {mean_d:.4e}, fixed/fixed {mean_f:.4e}, paired gap {mean_gap:.4e}, 2 SE {:.4e}", 2.0 * se),
    );
    assert!(pass);
}

#[test]
fn ballbeam_stabilization() {
    let sweep = ballbeam_beta1();
    let dbar = &sweep.arms[0];
    let exploded: Vec<u64> = dbar
        .runs
        .iter()
        .filter(|r| matches!(r.log.outcome, EpisodeOutcome::Exploded { .. }))
        .map(|r| r.seed)
        .collect();
    let bound = dbar.config.gamma * dbar.config.w_max;
    let d = dbar.final_running_averages();
    let below = d.iter().filter(|v| **v < bound).count();
    let pass = exploded.is_empty() && below >= 8;
    report(
        "ball-beam stabilization",
        pass,
        &format!(
            "exploded seeds {exploded:?}; running average < {bound} in {below}/{}; values {d:.3?}",
            d.len()
        ),
    );
    assert!(pass);
}

#[test]
fn bucket_event_bounds() {
    let mut episodes = 0;
    let mut violations = Vec::new();
    for sweep in [linear_sinusoidal(), ballbeam_beta1()] {
        for arm in &sweep.arms {
            for run in &arm.runs {
                episodes += 1;
                let c = run.report.buckets;
                if !c.holds() {
                    violations.push(format!("{} seed {}: {c:?}", arm.config.arm_label(), run.seed));
                }
            }
        }
    }
    let pass = violations.is_empty();
    report(
        "bucket event bounds",
        pass,
        &format!("{episodes} episodes, {} violations {violations:?}", violations.len()),
    );
    assert!(pass);
}

/// Per-batch controller counts over `trials` runs on a frozen loss table.
fn batch_frequencies(mode: Mode, table: &[[f64; 3]], trials: usize, seed: u64) -> Vec<[u64; 3]> {
    let params = BanditParams {
        eta0: 0.3,
        alpha0: 1.01,
        delta: 5.0,
        x0_norm: 10.0,
        y: 0.5,
        mode,
        rate: RateMode::Adaptive,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut counts = vec![[0u64; 3]; table.len()];
    for _ in 0..trials {
        let mut state = BanditState::new(vec![0, 1, 2], params).unwrap();
        for (b, losses) in table.iter().enumerate() {
            let k = state.sample_controller(&mut rng).unwrap();
            counts[b][k] += 1;
            state
                .finish_batch(&BatchOutcome {
                    controller: k,
                    steps: 1,
                    cost: losses[k],
                    break_fired: false,
                    end_norm: 1.0,
                })
                .unwrap();
        }
    }
    counts
}

#[test]
fn lazy_switching_matches_alg1_marginals() {
    let table = [
        [1.0, 3.0, 2.0],
        [2.0, 0.5, 3.0],
        [4.0, 1.0, 0.0],
        [0.5, 2.5, 1.5],
        [3.0, 0.0, 2.0],
    ];
    let trials = 100_000;
    let a = batch_frequencies(Mode::Alg1, &table, trials, 20_240_601);
    let c = batch_frequencies(Mode::Alg3, &table, trials, 20_240_602);
    let critical = ChiSquared::new(2.0).unwrap().inverse_cdf(0.99);
    let mut stats = Vec::new();
    for b in 0..table.len() {
        // two-sample homogeneity test with equal sample sizes
        let mut chi = 0.0;
        for k in 0..3 {
            let e = (a[b][k] + c[b][k]) as f64 / 2.0;
            if e > 0.0 {
                chi += (a[b][k] as f64 - e).powi(2) / e + (c[b][k] as f64 - e).powi(2) / e;
            }
        }
        stats.push(chi);
    }
    let pass = stats.iter().all(|s| *s < critical);
    report(
        "lazy switching marginals",
        pass,
        &format!("chi-square per batch {stats:.3?} vs critical {critical:.3} (df 2, 1%)"),
    );
    assert!(pass);
}

#[test]
fn bucket_update_properties() {
    let mut runner = TestRunner::new_with_rng(
        ProptestConfig {
            cases: 10_000,
            failure_persistence: None,
            ..ProptestConfig::default()
        },
        proptest::test_runner::TestRng::deterministic_rng(proptest::test_runner::RngAlgorithm::ChaCha),
    );
    let strategy = (1.0001f64..3.0, 0u32..40, 0.0f64..100.0, 0.1f64..500.0, 0.0f64..1e6);
    let result = runner.run(&strategy, |(alpha, s, delta, x0, next)| {
        let (alpha_next, s_next) = bucket_update(next, alpha, s, delta, x0);
        prop_assert!(s_next <= s + 1, "s jumped from {} to {}", s, s_next);
        prop_assert!(alpha_next >= alpha);
        if s_next == 0 {
            prop_assert!(next < alpha * x0 + delta);
        } else {
            let excess = next - delta;
            prop_assert!(alpha_next.powi(s_next as i32) * x0 <= excess, "lower side");
            prop_assert!(excess < alpha_next.powi(s_next as i32 + 1) * x0, "upper side");
        }
        Ok(())
    });
    let pass = result.is_ok();
    report("bucket update properties", pass, &format!("10000 tuples: {result:?}"));
    assert!(pass);
}

#[test]
fn softmax_and_weight_properties() {
    let mut runner = TestRunner::new_with_rng(
        ProptestConfig {
            cases: 2_000,
            failure_persistence: None,
            ..ProptestConfig::default()
        },
        proptest::test_runner::TestRng::deterministic_rng(proptest::test_runner::RngAlgorithm::ChaCha),
    );
    let strategy = (proptest::collection::vec(0.0f64..1e6, 1..100), 1e-6f64..10.0);
    let sums = runner.run(&strategy, |(w, eta)| {
        let p = softmax_distribution(&w, eta).unwrap();
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        prop_assert!(p.iter().all(|v| (0.0..=1.0).contains(v)));
        let reset = weight_update(&w, &p, 0, 7.0, true).unwrap();
        prop_assert!(reset.iter().all(|v| *v == 0.0));
        Ok(())
    });

    // eta stays at eta0 in bucket zero for every mode without Breaks
    let mut rate_ok = true;
    for alpha in [1.01, 1.5, 3.0] {
        for mode in [Mode::Alg1, Mode::Alg3] {
            rate_ok &= rate_update(0.025, alpha, 0, 0, 0.5, mode) == 0.025;
        }
    }
    // a bucket change inside a run resets every weight
    let params = BanditParams {
        eta0: 0.1,
        alpha0: 1.01,
        delta: 5.0,
        x0_norm: 10.0,
        y: 0.5,
        mode: Mode::Alg1,
        rate: RateMode::Adaptive,
    };
    let mut state = BanditState::new(vec![0, 1, 2], params).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let k = state.sample_controller(&mut rng).unwrap();
    state
        .finish_batch(&BatchOutcome {
            controller: k,
            steps: 3,
            cost: 9.0,
            break_fired: false,
            end_norm: 1.0,
        })
        .unwrap();
    let k = state.sample_controller(&mut rng).unwrap();
    let t = state
        .finish_batch(&BatchOutcome {
            controller: k,
            steps: 3,
            cost: 9.0,
            break_fired: false,
            end_norm: 40.0,
        })
        .unwrap();
    let reset_ok = t.s_next != t.s && t.weight_reset && state.weights().iter().all(|w| *w == 0.0);
    rate_ok &= t.eta == 0.1;

    // E_{k ~ p}[w'(j)] = w(j) by enumeration over the draw
    let p = [0.3, 0.7];
    let w = [2.0, 5.0];
    let mut unbiased = true;
    for j in 0..2 {
        let mut expectation = 0.0;
        for (k, pk) in p.iter().enumerate() {
            let est = weight_update(&[0.0, 0.0], &p, k, w[k], false).unwrap();
            expectation += pk * est[j];
        }
        unbiased &= (expectation - w[j]).abs() <= 1e-12 * w[j];
    }

    let pass = sums.is_ok() && rate_ok && reset_ok && unbiased;
    report(
        "softmax and weight properties",
        pass,
        &format!("sums {sums:?}; eta at bucket 0 {rate_ok}; reset {reset_ok}; unbiased {unbiased}"),
    );
    assert!(pass);
}

#[test]
fn deterministic_outputs() {
    let mut mismatches = Vec::new();
    let mut files = 0;
    for preset in ["example1-sinusoidal", "example2-beta1"] {
        let mut cfg = ExperimentConfig::preset(preset).unwrap();
        cfg.seeds = (1..=10).collect();
        let run = |jobs| {
            let dir = tempfile::tempdir().unwrap();
            let opts = RunOptions {
                outdir: dir.path().to_path_buf(),
                jobs: Some(jobs),
                raw: true,
            };
            let (_, manifest) = cmd_ablation(&cfg, &opts).unwrap();
            let bytes: Vec<(String, Vec<u8>)> = manifest
                .files
                .iter()
                .map(|f| (f.path.clone(), std::fs::read(dir.path().join(&f.path)).unwrap()))
                .collect();
            (manifest.files, bytes)
        };
        let (ha, ba) = run(1);
        let (hb, bb) = run(4);
        files += ba.len();
        if ha != hb || ba != bb {
            mismatches.push(preset);
        }
    }
    let pass = mismatches.is_empty() && files > 0;
    report(
        "deterministic outputs",
        pass,
        &format!("{files} files compared across two invocations; mismatches {mismatches:?}"),
    );
    assert!(pass);
}
