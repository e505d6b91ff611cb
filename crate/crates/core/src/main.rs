use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use dbar::bandit::{Mode, RateMode};
use dbar::commands::{cmd_ablation, cmd_run, cmd_sweep, summary_table, RunOptions};
use dbar::harness::config::{parse_seeds, BatchMode, ExperimentConfig, PRESETS};
use dbar::{DbarError, Result};

#[derive(Parser, Debug)]
#[command(name = "dbar", version, about = "Online stabilizing-controller selection experiments")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Run one arm over the given seeds and write aggregated CSVs.
    Run(Common),
    /// Like `run`, also writing one CSV per seed.
    Sweep(Common),
    /// Run the 2x2 grid of fixed/dynamic batch length and fixed/adaptive rate.
    Ablation(Common),
    /// Print a preset (or a config file after overrides) in config-file form.
    Show(Common),
    /// List the shipped presets.
    Presets,
}

#[derive(Args, Debug)]
struct Common {
    /// Named preset; fields not set elsewhere come from it.
    #[arg(long)]
    preset: Option<String>,
    /// Config file in `key = value` form.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Seeds, e.g. `1..10` or `1,4,9`.
    #[arg(long)]
    seeds: Option<String>,
    /// Maximum worker threads.
    #[arg(long)]
    jobs: Option<usize>,
    #[arg(long, env = "DBAR_OUTDIR", default_value = "dbar-out")]
    outdir: PathBuf,
    #[arg(long)]
    mode: Option<Mode>,
    #[arg(long)]
    batch: Option<BatchMode>,
    #[arg(long)]
    rate: Option<RateMode>,
    #[arg(long = "switch-cost", allow_negative_numbers = true)]
    switch_cost: Option<f64>,
    #[arg(long)]
    horizon: Option<usize>,
    #[arg(long, allow_negative_numbers = true)]
    eta0: Option<f64>,
    /// Extra `key=value` overrides, applied last.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Write per-seed CSVs (always on for `sweep`).
    #[arg(long)]
    raw: bool,
}

fn resolve(c: &Common) -> Result<ExperimentConfig> {
    let mut cfg = match (&c.config, &c.preset) {
        (Some(path), preset) => {
            let mut text = std::fs::read_to_string(path).map_err(|e| DbarError::io(path, e))?;
            let names_preset = text.lines().any(|l| l.split('=').next().map(str::trim) == Some("preset"));
            if let (Some(p), false) = (preset, names_preset) {
                text = format!("preset = {p}\n{text}");
            }
            ExperimentConfig::parse_text(&text)?
        }
        (None, Some(p)) => ExperimentConfig::preset(p)?,
        (None, None) => {
            return Err(DbarError::Config(format!(
                "give --preset or --config; presets: {}",
                PRESETS.join(", ")
            )))
        }
    };
    if let Some(s) = &c.seeds {
        cfg.seeds = parse_seeds(s)?;
    }
    if let Some(m) = c.mode {
        cfg.mode = m;
    }
    if let Some(b) = c.batch {
        cfg.batch = b;
    }
    if let Some(r) = c.rate {
        cfg.rate = r;
    }
    if let Some(d) = c.switch_cost {
        cfg.switch_cost = d;
    }
    if let Some(h) = c.horizon {
        cfg.horizon = h;
    }
    if let Some(e) = c.eta0 {
        cfg.eta0 = e;
    }
    for kv in &c.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| DbarError::Config(format!("--set expects KEY=VALUE, got `{kv}`")))?;
        cfg.set(k.trim(), v)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                DbarError::Config(_) | DbarError::Parameter { .. } | DbarError::InvalidSchedule(_) => ExitCode::from(2),
                _ => ExitCode::FAILURE,
            }
        }
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    let (common, run): (&Common, fn(&ExperimentConfig, &RunOptions) -> _) = match &cli.command {
        Cmd::Presets => {
            for p in PRESETS {
                println!("{p}");
            }
            return Ok(());
        }
        Cmd::Show(c) => {
            print!("{}", resolve(c)?.to_text());
            return Ok(());
        }
        Cmd::Run(c) => (c, cmd_run),
        Cmd::Sweep(c) => (c, cmd_sweep),
        Cmd::Ablation(c) => (c, cmd_ablation),
    };
    let cfg = resolve(common)?;
    println!("{}", cfg.precondition_report());
    let opts = RunOptions {
        outdir: common.outdir.clone(),
        jobs: common.jobs,
        raw: common.raw,
    };
    let (sweep, manifest) = run(&cfg, &opts)?;
    print!("{}", summary_table(&sweep));
    for e in &manifest.excluded {
        println!("excluded: {e}");
    }
    println!("wrote {} files to {}", manifest.files.len() + 1, opts.outdir.display());
    Ok(())
}
