//! Desk-scale experiment: clone a base policy into the 0.2–0.5 dev TGC band,
//! then train it with LOOP and report TGC per difficulty level.
//!
//! ```text
//! cargo run --release -p leaveout --example desk -- [iterations] [seed]
//! ```
//!
//! Environment overrides:
//!
//! - `ALG`: algorithm name (`loop`, `rloo`, `grpo`, ...), default `loop`;
//! - `GRAN`: `token`, `turn` or `trajectory`, default `token`;
//! - `WINDOW`: feature window of the cloned policy, default 20;
//! - `SHOW`: if set, print a few failed training rollouts of the final policy.

use std::time::Instant;

use leaveout::miniworld::{by_split, generate_tasks, vocab, Family, Split, Task};
use leaveout::policy::PolicyParams;
use leaveout::trainer::{
    evaluate_policy, evaluate_with_rollouts, pretrain_in_band, train_with, PretrainConfig, TaskSplits, TrainConfig,
};

fn env<T: std::str::FromStr>(name: &str) -> Option<T> {
    std::env::var(name).ok().and_then(|v| v.parse().ok())
}

fn by_level(params: &PolicyParams, tasks: &[Task], turn_limit: usize) -> leaveout::Result<String> {
    let report = evaluate_policy(params, tasks, 0.0, turn_limit, 0)?;
    let levels: Vec<String> = (1..=3)
        .map(|d| {
            let at: Vec<_> = report.records.iter().zip(tasks).filter(|(_, t)| t.difficulty == d).collect();
            format!("L{d} {}/{}", at.iter().filter(|(r, _)| r.success()).count(), at.len())
        })
        .collect();
    Ok(format!("TGC {:.3} ({})", report.tgc, levels.join(", ")))
}

fn main() -> leaveout::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let iterations = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(200);
    let seed = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(0);

    let mut tasks = Vec::new();
    for family in [Family::Relay, Family::Aggregate] {
        tasks.extend(generate_tasks(family, 30, 11)?);
    }
    let mut splits = by_split(tasks);
    let splits = TaskSplits {
        train: splits.remove(&Split::Train).unwrap_or_default(),
        dev: splits.remove(&Split::Dev).unwrap_or_default(),
    };

    let mut config = TrainConfig { iterations, seed, ..TrainConfig::default() };
    if let Some(a) = env("ALG") {
        config.algorithm = a;
    }
    if let Some(g) = env("GRAN") {
        config.granularity = g;
    }
    let pre = PretrainConfig { seed, window: env("WINDOW").unwrap_or(20), ..PretrainConfig::default() };
    let easy = |ts: &[Task], max: u8| -> Vec<Task> { ts.iter().filter(|t| t.difficulty <= max).cloned().collect() };
    let dev_eval = easy(&splits.dev, config.max_eval_difficulty);
    let base = pretrain_in_band(
        &pre,
        &easy(&splits.train, config.max_train_difficulty),
        &dev_eval,
        config.turn_limit_train,
        config.turn_limit_eval,
    )?;
    println!("base dev TGC {:.3} after noise attempts {:?}", base.dev_tgc, base.attempts);

    let start = Instant::now();
    let report = train_with(&config, &splits, &base.params, None, &mut |row, checkpoint| {
        if let Some(c) = checkpoint {
            println!(
                "iter {:4}  return {:.3}  buffer {:3}  clip {:.3}  dev TGC {:.3}  SGC {:.3}  ({:.0?})",
                row.iteration,
                row.mean_return,
                row.buffer_size,
                row.clip_fraction,
                c.dev_tgc,
                c.dev_sgc,
                start.elapsed()
            );
        }
    })?;
    if let Some(best) = report.best() {
        println!("best iteration {} dev TGC {:.3}", best.iteration, best.dev_tgc);
    }
    for (name, params) in [("base", &base.params), ("final", &report.final_params)] {
        for (split, tasks) in [("train", &splits.train), ("dev", &splits.dev)] {
            println!("{name} {split}: {}", by_level(params, tasks, config.turn_limit_eval)?);
        }
    }
    if std::env::var_os("SHOW").is_some() {
        let (_, trajs) = evaluate_with_rollouts(&report.final_params, &splits.train, 0.0, config.turn_limit_eval, 0)?;
        let v = vocab::vocab();
        for (t, task) in trajs.iter().zip(&splits.train).filter(|(t, _)| t.ret < 1.0).take(3) {
            println!("--- {} (return {:.2})\n{}", task.task_id, t.ret, v.render(&t.tokens));
        }
    }
    Ok(())
}
