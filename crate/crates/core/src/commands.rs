//! `run`, `sweep` and `ablation`: run arms over seeds, write CSVs and a
//! manifest with content hashes.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bandit::{Mode, RateMode};
use crate::domain::EpisodeOutcome;
use crate::error::{DbarError, Result};
use crate::harness::config::{format_seeds, BatchMode, ExperimentConfig};
use crate::harness::output::{aggregate_csv, raw_csv, write_file};
use crate::harness::sweep::{seed_sweep, ArmResult, SweepResult};
use crate::noise::NoiseKind;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Command {
    Run,
    Sweep,
    Ablation,
}

impl Command {
    pub fn as_str(&self) -> &'static str {
        match self {
            Command::Run => "run",
            Command::Sweep => "sweep",
            Command::Ablation => "ablation",
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub outdir: PathBuf,
    pub jobs: Option<usize>,
    /// Also write one CSV per seed and arm.
    pub raw: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    /// Relative to the output directory.
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub config: Vec<(String, String)>,
    pub arms: Vec<String>,
    pub excluded: Vec<String>,
    pub files: Vec<ManifestEntry>,
}

/// The 2x2 grid over batch length and learning rate, DBAR first.
pub fn ablation_arms(config: &ExperimentConfig) -> Vec<ExperimentConfig> {
    [
        (BatchMode::Dynamic, RateMode::Adaptive),
        (BatchMode::Fixed, RateMode::Adaptive),
        (BatchMode::Dynamic, RateMode::Fixed),
        (BatchMode::Fixed, RateMode::Fixed),
    ]
    .into_iter()
    .map(|(batch, rate)| {
        let mut c = config.clone();
        c.batch = batch;
        c.rate = rate;
        c
    })
    .collect()
}

/// Notes attached to every CSV describing modelling conventions of the run.
pub fn fidelity_notes(config: &ExperimentConfig) -> Vec<(String, String)> {
    let mut notes = Vec::new();
    if config.noise == NoiseKind::Sinusoidal2d {
        notes.push((
            "note.w_max".to_string(),
            "the envelope uses the configured w_max although the 2-d sinusoid reaches norm sqrt(2)".to_string(),
        ));
    }
    if config.mode == Mode::Alg3 {
        notes.push((
            "note.switching_baseline".to_string(),
            "regret adds d times the algorithm's switches; the baseline is a single controller with no switches"
                .to_string(),
        ));
    }
    notes
}

fn metadata(arm: &ExperimentConfig, metric: &str, result: &ArmResult) -> Vec<(String, String)> {
    let mut m = vec![
        ("version".to_string(), env!("CARGO_PKG_VERSION").to_string()),
        ("arm".to_string(), arm.arm_label()),
        ("metric".to_string(), metric.to_string()),
        (
            "seeds_aggregated".to_string(),
            result.running_average.as_ref().map_or(0, |a| a.n).to_string(),
        ),
        (
            "seeds_excluded".to_string(),
            if result.excluded.is_empty() {
                "none".to_string()
            } else {
                format_seeds(&result.excluded.iter().map(|e| e.0).collect::<Vec<_>>())
            },
        ),
    ];
    m.extend(fidelity_notes(arm));
    m.extend(arm.to_pairs().into_iter().map(|(k, v)| (format!("config.{k}"), v)));
    m
}

/// Recovers the configuration from CSV metadata.
pub fn config_from_metadata(metadata: &[(String, String)]) -> Result<ExperimentConfig> {
    let pairs: Vec<(&str, &str)> = metadata
        .iter()
        .filter_map(|(k, v)| k.strip_prefix("config.").map(|k| (k, v.as_str())))
        .collect();
    if pairs.is_empty() {
        return Err(DbarError::Config("CSV metadata has no configuration".into()));
    }
    ExperimentConfig::from_pairs(pairs)
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn outcome_text(o: &EpisodeOutcome) -> String {
    match o {
        EpisodeOutcome::Completed => "completed".into(),
        EpisodeOutcome::Terminated { batch, t } => format!("pool emptied at batch {batch}, t = {t}"),
        EpisodeOutcome::Exploded { t } => format!("state diverged at t = {t}"),
    }
}

/// Writes CSVs, per-seed stability reports and the manifest.
pub fn emit(command: Command, sweep: &SweepResult, opts: &RunOptions) -> Result<RunManifest> {
    let mut files = Vec::new();
    let mut excluded = Vec::new();
    let mut put = |rel: String, contents: String| -> Result<()> {
        write_file(&opts.outdir.join(&rel), &contents)?;
        files.push(ManifestEntry {
            sha256: sha256_hex(contents.as_bytes()),
            path: rel,
        });
        Ok(())
    };
    for arm in &sweep.arms {
        let label = arm.config.arm_label();
        if let Some(ra) = &arm.running_average {
            put(
                format!("{label}/running_average.csv"),
                aggregate_csv(&metadata(&arm.config, "running_average", arm), ra),
            )?;
        }
        match &arm.regret {
            Some(regret) => put(
                format!("{label}/regret.csv"),
                aggregate_csv(&metadata(&arm.config, "regret", arm), regret),
            )?,
            None => excluded.push(format!("{label}: no oracle-eligible controller on any seed, regret not written")),
        }
        let reports: Vec<_> = arm.runs.iter().map(|r| (r.seed, &r.report)).collect();
        let json = serde_json::to_string_pretty(&reports)
            .map_err(|e| DbarError::Config(format!("serializing stability reports: {e}")))?;
        put(format!("{label}/stability.json"), json + "\n")?;
        if opts.raw {
            for run in &arm.runs {
                let mut meta = metadata(&arm.config, "raw", arm);
                meta.insert(0, ("seed".to_string(), run.seed.to_string()));
                put(
                    format!("{label}/seed-{}.csv", run.seed),
                    raw_csv(&meta, &run.log, run.metrics.as_ref()),
                )?;
            }
        }
        for (seed, outcome) in &arm.excluded {
            excluded.push(format!("{label} seed {seed}: {}", outcome_text(outcome)));
        }
    }
    let base = &sweep.arms[0].config;
    let mut manifest = RunManifest {
        command: command.as_str().to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        config: base.to_pairs(),
        arms: sweep.arms.iter().map(|a| a.config.arm_label()).collect(),
        excluded,
        files: Vec::new(),
    };
    manifest.files = files;
    let json = serde_json::to_string_pretty(&manifest)
        .map_err(|e| DbarError::Config(format!("serializing manifest: {e}")))?;
    write_file(&opts.outdir.join(MANIFEST_FILE), &(json + "\n"))?;
    Ok(manifest)
}

pub fn read_manifest(path: &Path) -> Result<RunManifest> {
    let text = std::fs::read_to_string(path).map_err(|e| DbarError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| DbarError::Config(format!("{}: {e}", path.display())))
}

fn execute(command: Command, arms: Vec<ExperimentConfig>, opts: &RunOptions) -> Result<(SweepResult, RunManifest)> {
    let sweep = seed_sweep(&arms, opts.jobs)?;
    let manifest = emit(command, &sweep, opts)?;
    Ok((sweep, manifest))
}

/// One arm (the configuration as given), aggregated over its seeds.
pub fn cmd_run(config: &ExperimentConfig, opts: &RunOptions) -> Result<(SweepResult, RunManifest)> {
    execute(Command::Run, vec![config.clone()], opts)
}

/// Like [`cmd_run`], always writing the per-seed CSVs.
pub fn cmd_sweep(config: &ExperimentConfig, opts: &RunOptions) -> Result<(SweepResult, RunManifest)> {
    let opts = RunOptions {
        raw: true,
        ..opts.clone()
    };
    execute(Command::Sweep, vec![config.clone()], &opts)
}

/// The four arms of [`ablation_arms`] on shared seeds.
pub fn cmd_ablation(config: &ExperimentConfig, opts: &RunOptions) -> Result<(SweepResult, RunManifest)> {
    execute(Command::Ablation, ablation_arms(config), opts)
}

/// Text table with one row per arm: final running average and regret
/// (mean and standard error), bound passes, Breaks, excluded seeds and
/// bucket-count bound violations.
pub fn summary_table(sweep: &SweepResult) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:<34} {:>12} {:>10} {:>14} {:>12} {:>9} {:>8} {:>8} {:>7}",
        "arm", "avg|x| @T", "se", "regret @T", "se", "<=bound", "breaks", "excluded", "buckets"
    );
    for arm in &sweep.arms {
        let n = arm.runs.len();
        let below = arm.runs.iter().filter(|r| r.report.below_bound).count();
        let breaks: usize = arm.runs.iter().map(|r| r.report.buckets.breaks).sum();
        let bucket_fail = arm.runs.iter().filter(|r| !r.report.buckets.holds()).count();
        let _ = writeln!(
            s,
            "{:<34} {:>12.4} {:>10.4} {:>14.4e} {:>12.4e} {:>9} {:>8.1} {:>8} {:>7}",
            arm.config.arm_label(),
            arm.running_average.as_ref().and_then(|r| r.mean.last().copied()).unwrap_or(f64::NAN),
            arm.running_average.as_ref().and_then(|r| r.se.last().copied()).unwrap_or(f64::NAN),
            arm.regret.as_ref().and_then(|r| r.mean.last().copied()).unwrap_or(f64::NAN),
            arm.regret.as_ref().and_then(|r| r.se.last().copied()).unwrap_or(f64::NAN),
            format!("{below}/{n}"),
            breaks as f64 / n as f64,
            arm.excluded.len(),
            if bucket_fail == 0 { "ok".to_string() } else { format!("{bucket_fail} bad") },
        );
    }
    let _ = writeln!(s, "bound gamma*w_max = {}", sweep.arms[0].config.gamma * sweep.arms[0].config.w_max);
    s
}
