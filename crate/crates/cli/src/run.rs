//! Run directories: `<run root>/<name>-<config hash>/` holding
//!
//! - `manifest.json`: config snapshot, seed, code version, input digests;
//! - `metrics.jsonl`: one [`IterationMetrics`] row per iteration;
//! - `checkpoints/latest.bin`, `best.bin`, `final.bin` with `.json` sidecars.
//!
//! The hash covers the config (minus `workers`) and digests of the task files
//! and base parameters, so changing any input lands in a new directory.

use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::Args;
use leaveout::trainer::{train_with, Algorithm, IterationMetrics, TrainConfig, TrainState};
use leaveout::rollout::Granularity;
use serde::{Deserialize, Serialize};

use crate::config::{self, sha256_hex};
use crate::{load_params, load_splits, save_params, TaskSource, UsageError, SPLIT_FILES};

pub const RUN_ROOT_ENV: &str = "LEAVEOUT_RUN_ROOT";

#[derive(Args)]
pub struct TrainArgs {
    #[command(flatten)]
    source: TaskSource,
    /// Base policy parameters (the KL reference and starting point).
    #[arg(long)]
    base: PathBuf,
    /// TOML file with training settings.
    #[arg(long)]
    config: Option<PathBuf>,
    /// `key=value` override, dotted keys reach nested fields.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long)]
    algorithm: Option<String>,
    #[arg(long)]
    granularity: Option<String>,
    #[arg(long)]
    n_epoch: Option<usize>,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Rollout worker threads.
    #[arg(long)]
    workers: Option<usize>,
    /// Run name; defaults to `<algorithm>-<granularity>`.
    #[arg(long)]
    name: Option<String>,
    /// Parent directory of run directories [env: LEAVEOUT_RUN_ROOT, default: runs].
    #[arg(long)]
    run_root: Option<PathBuf>,
    /// Validate inputs and configuration, print the run directory, and stop.
    #[arg(long)]
    dry_run: bool,
    /// Continue an interrupted run from its latest checkpoint.
    #[arg(long)]
    resume: bool,
    /// End this session after iteration N (a multiple of eval_every), leaving
    /// the run resumable.
    #[arg(long, value_name = "N")]
    stop_after: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_name: String,
    pub config_hash: String,
    pub code_version: String,
    pub seed: u64,
    pub config: TrainConfig,
    pub tasks_dir: String,
    pub tasks_sha256: String,
    pub base: String,
    pub base_sha256: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CheckpointInfo {
    iteration: usize,
    dev_tgc: f64,
    dev_sgc: f64,
}

fn resolve_config(a: &TrainArgs) -> Result<TrainConfig> {
    let mut overrides = a.overrides.clone();
    let flags: [(&str, Option<String>); 6] = [
        ("algorithm", a.algorithm.clone().map(|s| format!("\"{s}\""))),
        ("granularity", a.granularity.clone().map(|s| format!("\"{s}\""))),
        ("n_epoch", a.n_epoch.map(|v| v.to_string())),
        ("iterations", a.iterations.map(|v| v.to_string())),
        ("seed", a.seed.map(|v| v.to_string())),
        ("workers", a.workers.map(|v| v.to_string())),
    ];
    for (key, value) in flags {
        if let Some(v) = value {
            overrides.push(format!("{key}={v}"));
        }
    }
    let config: TrainConfig = config::load(&TrainConfig::default(), a.config.as_deref(), &overrides)?;
    config.validate()?;
    if a.resume && config.algorithm == Algorithm::PpoCritic {
        bail!(UsageError("--resume is not supported for ppo-critic (the value head is not checkpointed)".into()));
    }
    Ok(config)
}

fn tasks_digest(dir: &Path) -> Result<String> {
    let mut all = Vec::new();
    for (_, name) in SPLIT_FILES {
        let path = dir.join(name);
        all.extend(fs::read(&path).with_context(|| format!("reading task file {}", path.display()))?);
    }
    Ok(sha256_hex(&all))
}

fn config_hash(config: &TrainConfig, tasks_sha: &str, base_sha: &str) -> Result<String> {
    let keyed = TrainConfig { workers: 1, ..config.clone() };
    let blob = serde_json::to_string(&(keyed, tasks_sha, base_sha))?;
    Ok(sha256_hex(blob.as_bytes())[..12].to_string())
}

fn run_root(a: &TrainArgs) -> PathBuf {
    a.run_root
        .clone()
        .or_else(|| std::env::var_os(RUN_ROOT_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("runs"))
}

fn default_name(config: &TrainConfig) -> String {
    let g = match config.granularity {
        Granularity::Token => "token",
        Granularity::Turn => "turn",
        Granularity::Trajectory => "trajectory",
    };
    format!("{}-{g}", config.algorithm.name())
}

pub fn read_manifest(dir: &Path) -> Result<RunManifest> {
    let path = dir.join("manifest.json");
    let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("malformed manifest {}", path.display()))
}

pub fn read_metrics(dir: &Path) -> Result<Vec<IterationMetrics>> {
    let path = dir.join("metrics.jsonl");
    let file = File::open(&path).with_context(|| format!("reading {}", path.display()))?;
    let mut rows = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        rows.push(serde_json::from_str(&line).with_context(|| format!("{} line {}", path.display(), i + 1))?);
    }
    Ok(rows)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)? + "\n").with_context(|| format!("writing {}", path.display()))
}

fn read_info(path: &Path) -> Option<CheckpointInfo> {
    fs::read_to_string(path).ok().and_then(|t| serde_json::from_str(&t).ok())
}

pub fn train(a: TrainArgs) -> Result<()> {
    let config = resolve_config(&a)?;
    let splits = load_splits(&a.source.tasks)?;
    let base = load_params(&a.base)?;
    let base_sha = sha256_hex(&fs::read(&a.base)?);
    let tasks_sha = tasks_digest(&a.source.tasks)?;
    let hash = config_hash(&config, &tasks_sha, &base_sha)?;
    let run_name = a.name.clone().unwrap_or_else(|| default_name(&config));
    let dir = run_root(&a).join(format!("{run_name}-{hash}"));

    let session = match a.stop_after {
        Some(n) if n < config.iterations => {
            if n == 0 || n % config.eval_every.max(1) != 0 {
                bail!(UsageError(format!("--stop-after must be a positive multiple of eval_every ({})", config.eval_every)));
            }
            TrainConfig { iterations: n, ..config.clone() }
        }
        _ => config.clone(),
    };

    if a.dry_run {
        println!("configuration valid; run directory {}", dir.display());
        print!("{}", toml::to_string(&config)?);
        return Ok(());
    }

    let ckpt_dir = dir.join("checkpoints");
    let metrics_path = dir.join("metrics.jsonl");
    let resume = if a.resume {
        let info = read_info(&ckpt_dir.join("latest.json"))
            .ok_or_else(|| UsageError(format!("nothing to resume in {}", dir.display())))?;
        let manifest = read_manifest(&dir)?;
        if manifest.config_hash != hash {
            bail!(UsageError(format!("{} belongs to a different configuration", dir.display())));
        }
        if info.iteration >= config.iterations {
            println!("run already complete at iteration {} ({})", info.iteration, dir.display());
            return Ok(());
        }
        // Rows past the checkpoint are recomputed identically on resume.
        let kept: Vec<IterationMetrics> =
            read_metrics(&dir)?.into_iter().filter(|r| r.iteration <= info.iteration).collect();
        let mut text = String::new();
        for r in &kept {
            text.push_str(&serde_json::to_string(r)?);
            text.push('\n');
        }
        fs::write(&metrics_path, text)?;
        let params = load_params(&ckpt_dir.join("latest.bin"))?;
        Some(TrainState { params, value_fn: None, next_iteration: info.iteration + 1 })
    } else {
        if metrics_path.exists() && fs::metadata(&metrics_path)?.len() > 0 {
            bail!(UsageError(format!("{} already holds a run; pass --resume to continue it", dir.display())));
        }
        fs::create_dir_all(&ckpt_dir).with_context(|| format!("creating {}", ckpt_dir.display()))?;
        let manifest = RunManifest {
            run_name: run_name.clone(),
            config_hash: hash.clone(),
            code_version: env!("CARGO_PKG_VERSION").to_string(),
            seed: config.seed,
            config: config.clone(),
            tasks_dir: a.source.tasks.display().to_string(),
            tasks_sha256: tasks_sha,
            base: a.base.display().to_string(),
            base_sha256: base_sha,
        };
        write_json(&dir.join("manifest.json"), &manifest)?;
        File::create(&metrics_path)?;
        None
    };

    let mut log = OpenOptions::new().append(true).open(&metrics_path)?;
    let mut best_tgc = read_info(&ckpt_dir.join("best.json")).map(|i| i.dev_tgc);
    let mut io_error: Option<anyhow::Error> = None;
    let mut observer = |row: &IterationMetrics, checkpoint: Option<&leaveout::trainer::Checkpoint>| {
        let mut step = || -> Result<()> {
            writeln!(log, "{}", serde_json::to_string(row)?)?;
            log.flush()?;
            if let Some(c) = checkpoint {
                let info = CheckpointInfo { iteration: c.iteration, dev_tgc: c.dev_tgc, dev_sgc: c.dev_sgc };
                save_params(&c.params, &ckpt_dir.join("latest.bin"))?;
                write_json(&ckpt_dir.join("latest.json"), &info)?;
                if best_tgc.map_or(true, |b| c.dev_tgc > b) {
                    best_tgc = Some(c.dev_tgc);
                    save_params(&c.params, &ckpt_dir.join("best.bin"))?;
                    write_json(&ckpt_dir.join("best.json"), &info)?;
                }
                eprintln!(
                    "iter {:>4}  return {:.3}  buffer {:>4}  clip {:.3}  dev TGC {:.3}  SGC {:.3}",
                    row.iteration, row.mean_return, row.buffer_size, row.clip_fraction, c.dev_tgc, c.dev_sgc
                );
            }
            Ok(())
        };
        if io_error.is_none() {
            io_error = step().err();
        }
    };
    let report = train_with(&session, &splits, &base, resume, &mut observer);
    if let Some(e) = io_error {
        return Err(e);
    }
    let report = report?;
    if session.iterations < config.iterations {
        println!("stopped after iteration {}; continue with --resume ({})", session.iterations, dir.display());
        return Ok(());
    }
    save_params(&report.final_params, &ckpt_dir.join("final.bin"))?;
    let best = read_info(&ckpt_dir.join("best.json"));
    println!(
        "run {} finished: best dev TGC {:.3} at iteration {}",
        dir.display(),
        best.as_ref().map_or(0.0, |b| b.dev_tgc),
        best.as_ref().map_or(0, |b| b.iteration)
    );
    Ok(())
}
