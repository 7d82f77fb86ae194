//! `leaveout`: generate tasks, pretrain, train, evaluate, analyze and plot.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 runtime error,
//! 3 training aborted on divergence.

mod config;
mod plot;
mod run;

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use leaveout::metrics::{behavior_report, compare};
use leaveout::miniworld::{by_split, generate_tasks, read_tasks, vocab, write_tasks, Family, Split, Task};
use leaveout::policy::{read_params, write_params, PolicyParams};
use leaveout::rollout::{read_trajectories, write_trajectories};
use leaveout::trainer::{evaluate_with_rollouts, pretrain_in_band, PretrainConfig, TaskSplits, TrainConfig};
use serde::Serialize;

/// A mistake in the invocation or configuration (exit code 1).
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

#[derive(Parser)]
#[command(name = "leaveout", version, about = "Leave-one-out PPO on the MiniWorld environment")]
struct Cli {
    /// Log progress (repeat for more detail).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate task files split into train.jsonl, dev.jsonl and test.jsonl.
    GenTasks(GenTasks),
    /// Clone a noisy demonstrator into a base policy.
    Pretrain(Pretrain),
    /// Train a policy from a base checkpoint.
    Train(run::TrainArgs),
    /// Score a checkpoint on a task split.
    Eval(Eval),
    /// Compare behaviour metrics of two rollout files.
    Analyze(Analyze),
    /// Write training curves of one or more runs as CSV and SVG.
    Plot(Plot),
}

#[derive(Args)]
struct GenTasks {
    /// Comma-separated families: relay, aggregate, note.
    #[arg(long, default_value = "relay,aggregate,note", value_delimiter = ',')]
    families: Vec<String>,
    /// Scenarios per family (three tasks each).
    #[arg(long, default_value_t = 30)]
    count: usize,
    #[arg(long, default_value_t = 11)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Overwrite a non-empty output directory.
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
pub struct TaskSource {
    /// Directory written by `gen-tasks`.
    #[arg(long)]
    pub tasks: PathBuf,
}

#[derive(Args)]
struct Pretrain {
    #[command(flatten)]
    source: TaskSource,
    /// TOML file with pretraining settings.
    #[arg(long)]
    config: Option<PathBuf>,
    /// `key=value` override, dotted keys reach nested fields.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Highest task difficulty used for demos and the band check.
    #[arg(long, default_value_t = 2)]
    max_difficulty: u8,
    /// Output parameter file; a JSON summary is written next to it.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct Eval {
    #[arg(long)]
    checkpoint: PathBuf,
    #[command(flatten)]
    source: TaskSource,
    #[arg(long, default_value = "dev")]
    split: String,
    /// Repeated evaluations with distinct seeds.
    #[arg(long, default_value_t = 1)]
    attempts: usize,
    #[arg(long, default_value_t = 0.0)]
    temperature: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Only score tasks up to this difficulty.
    #[arg(long)]
    max_difficulty: Option<u8>,
    #[arg(long, default_value_t = leaveout::miniworld::generate::MAX_TURNS_EVAL)]
    turn_limit: usize,
    /// Write every evaluation rollout to this JSONL file.
    #[arg(long)]
    dump_rollouts: Option<PathBuf>,
    /// Print the report as JSON.
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct Analyze {
    /// Rollouts of the base policy (JSONL).
    base: PathBuf,
    /// Rollouts of the trained policy (JSONL).
    trained: PathBuf,
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct Plot {
    /// Run directories.
    #[arg(required = true)]
    runs: Vec<PathBuf>,
    /// Output directory for curves.csv and curves.svg.
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &anyhow::Error) -> u8 {
    if e.downcast_ref::<UsageError>().is_some() {
        return 1;
    }
    match e.downcast_ref::<leaveout::Error>() {
        Some(leaveout::Error::Divergence { .. }) => 3,
        Some(leaveout::Error::Config(_)) | Some(leaveout::Error::UnknownFamily(_)) => 1,
        _ => 2,
    }
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::GenTasks(a) => gen_tasks(a),
        Command::Pretrain(a) => pretrain(a),
        Command::Train(a) => run::train(a),
        Command::Eval(a) => eval(a),
        Command::Analyze(a) => analyze(a),
        Command::Plot(a) => plot_runs(a),
    }
}

pub const SPLIT_FILES: [(Split, &str); 3] = [(Split::Train, "train.jsonl"), (Split::Dev, "dev.jsonl"), (Split::Test, "test.jsonl")];

fn gen_tasks(a: GenTasks) -> Result<()> {
    let families: Vec<Family> = a
        .families
        .iter()
        .map(|f| match f.trim() {
            "relay" => Ok(Family::Relay),
            "aggregate" => Ok(Family::Aggregate),
            "note" => Ok(Family::Note),
            other => Err(UsageError(format!("unknown family `{other}` (expected relay, aggregate or note)"))),
        })
        .collect::<std::result::Result<_, _>>()?;
    if a.count == 0 {
        bail!(UsageError("--count must be at least 1".into()));
    }
    if a.out.exists() && fs::read_dir(&a.out)?.next().is_some() && !a.force {
        bail!(UsageError(format!("{} is not empty; pass --force to overwrite", a.out.display())));
    }
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let mut tasks = Vec::new();
    for family in families {
        tasks.extend(generate_tasks(family, a.count, a.seed)?);
    }
    let mut by = by_split(tasks);
    for (split, name) in SPLIT_FILES {
        let path = a.out.join(name);
        let part = by.remove(&split).unwrap_or_default();
        let file = File::create(&path).with_context(|| format!("writing {}", path.display()))?;
        let mut out = BufWriter::new(file);
        write_tasks(&part, &mut out)?;
        out.flush()?;
        println!("{}: {} tasks", path.display(), part.len());
    }
    Ok(())
}

pub fn load_split(dir: &Path, split: &str) -> Result<Vec<Task>> {
    let name = match split {
        "train" => "train.jsonl",
        "dev" => "dev.jsonl",
        "test" => "test.jsonl",
        other => bail!(UsageError(format!("unknown split `{other}` (expected train, dev or test)"))),
    };
    let path = dir.join(name);
    let file = File::open(&path).with_context(|| format!("opening task file {}", path.display()))?;
    read_tasks(BufReader::new(file)).with_context(|| format!("reading {}", path.display()))
}

pub fn load_splits(dir: &Path) -> Result<TaskSplits> {
    Ok(TaskSplits { train: load_split(dir, "train")?, dev: load_split(dir, "dev")? })
}

pub fn load_params(path: &Path) -> Result<PolicyParams> {
    let file = File::open(path).with_context(|| format!("opening checkpoint {}", path.display()))?;
    read_params(BufReader::new(file), vocab::vocab()).with_context(|| format!("reading checkpoint {}", path.display()))
}

pub fn save_params(params: &PolicyParams, path: &Path) -> Result<()> {
    let tmp = path.with_extension("tmp");
    {
        let mut out = BufWriter::new(File::create(&tmp).with_context(|| format!("writing {}", tmp.display()))?);
        write_params(params, &mut out)?;
        out.flush()?;
    }
    fs::rename(&tmp, path).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

#[derive(Serialize)]
struct PretrainSummary {
    config: PretrainConfig,
    noise: leaveout::trainer::DemoNoise,
    dev_tgc: f64,
    attempts: Vec<(f64, f64)>,
}

fn pretrain(a: Pretrain) -> Result<()> {
    let mut cfg: PretrainConfig = config::load(&PretrainConfig::default(), a.config.as_deref(), &a.overrides)?;
    if let Some(seed) = a.seed {
        cfg.seed = seed;
    }
    let easy = |tasks: Vec<Task>| -> Vec<Task> { tasks.into_iter().filter(|t| t.difficulty <= a.max_difficulty).collect() };
    let train = easy(load_split(&a.source.tasks, "train")?);
    let dev = easy(load_split(&a.source.tasks, "dev")?);
    let limits = TrainConfig::default();
    let outcome = pretrain_in_band(&cfg, &train, &dev, limits.turn_limit_train, limits.turn_limit_eval)?;
    if let Some(dir) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    save_params(&outcome.params, &a.out)?;
    let summary = PretrainSummary { config: cfg, noise: outcome.noise, dev_tgc: outcome.dev_tgc, attempts: outcome.attempts };
    fs::write(a.out.with_extension("json"), serde_json::to_string_pretty(&summary)?)?;
    println!("base policy dev TGC {:.3} written to {}", summary.dev_tgc, a.out.display());
    Ok(())
}

/// Mean and population standard deviation.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len().max(1) as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

#[derive(Serialize)]
struct EvalSummary {
    checkpoint: String,
    split: String,
    tasks: usize,
    attempts: usize,
    temperature: f64,
    tgc: Vec<f64>,
    sgc: Vec<f64>,
    tgc_mean: f64,
    tgc_std: f64,
    sgc_mean: f64,
    sgc_std: f64,
}

fn eval(a: Eval) -> Result<()> {
    if a.attempts == 0 {
        bail!(UsageError("--attempts must be at least 1".into()));
    }
    let params = load_params(&a.checkpoint)?;
    let mut tasks = load_split(&a.source.tasks, &a.split)?;
    if let Some(d) = a.max_difficulty {
        tasks.retain(|t| t.difficulty <= d);
    }
    if tasks.is_empty() {
        bail!(UsageError(format!("no {} tasks to evaluate", a.split)));
    }
    let mut dump = match &a.dump_rollouts {
        Some(p) => Some(BufWriter::new(File::create(p).with_context(|| format!("writing {}", p.display()))?)),
        None => None,
    };
    let (mut tgc, mut sgc) = (Vec::new(), Vec::new());
    for attempt in 0..a.attempts {
        let (report, trajs) = evaluate_with_rollouts(&params, &tasks, a.temperature, a.turn_limit, a.seed + attempt as u64)?;
        tgc.push(report.tgc);
        sgc.push(report.sgc);
        if let Some(out) = dump.as_mut() {
            write_trajectories(&trajs, &vocab::vocab(), &mut *out)?;
        }
    }
    if let Some(mut out) = dump {
        out.flush()?;
    }
    let (tgc_mean, tgc_std) = mean_std(&tgc);
    let (sgc_mean, sgc_std) = mean_std(&sgc);
    let summary = EvalSummary {
        checkpoint: a.checkpoint.display().to_string(),
        split: a.split,
        tasks: tasks.len(),
        attempts: a.attempts,
        temperature: a.temperature,
        tgc,
        sgc,
        tgc_mean,
        tgc_std,
        sgc_mean,
        sgc_std,
    };
    if a.json {
        println!("{}", serde_json::to_string_pretty(&summary)?);
    } else {
        println!(
            "{} tasks, {} attempt(s): TGC {:.3} ± {:.3}, SGC {:.3} ± {:.3}",
            summary.tasks, summary.attempts, tgc_mean, tgc_std, sgc_mean, sgc_std
        );
    }
    Ok(())
}

fn read_rollouts(path: &Path) -> Result<Vec<leaveout::rollout::Trajectory>> {
    let file = File::open(path).with_context(|| format!("opening rollouts {}", path.display()))?;
    read_trajectories(BufReader::new(file), &vocab::vocab()).with_context(|| format!("reading rollouts {}", path.display()))
}

fn analyze(a: Analyze) -> Result<()> {
    let base = behavior_report(&read_rollouts(&a.base)?);
    let trained = behavior_report(&read_rollouts(&a.trained)?);
    let changes = compare(&base, &trained)?;
    if a.json {
        println!("{}", serde_json::to_string_pretty(&changes)?);
        return Ok(());
    }
    println!("{:<28} {:>10} {:>10} {:>8}", "metric", "base", "trained", "ratio");
    for c in changes {
        let ratio = c.ratio.map_or("n/a".to_string(), |r| format!("{r:.3}"));
        println!("{:<28} {:>10.4} {:>10.4} {:>8}", c.metric, c.base, c.trained, ratio);
    }
    Ok(())
}

fn plot_runs(a: Plot) -> Result<()> {
    let mut series = Vec::new();
    for dir in &a.runs {
        let manifest = run::read_manifest(dir)?;
        let rows = run::read_metrics(dir)?;
        // The directory name carries the config hash, so labels stay distinct.
        let name = dir.file_name().map_or(manifest.run_name, |n| n.to_string_lossy().into_owned());
        series.push(plot::Series { name, rows });
    }
    fs::create_dir_all(&a.out)?;
    let csv_path = a.out.join("curves.csv");
    let svg_path = a.out.join("curves.svg");
    fs::write(&csv_path, plot::csv(&series)).with_context(|| format!("writing {}", csv_path.display()))?;
    fs::write(&svg_path, plot::svg(&series)).with_context(|| format!("writing {}", svg_path.display()))?;
    println!("wrote {} and {}", csv_path.display(), svg_path.display());
    Ok(())
}
