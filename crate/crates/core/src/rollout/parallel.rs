//! Parallel collection with a straggler cut-off.
//!
//! Jobs are issued replicate-major. Collection stops once every task has at
//! least `min_per_task` completed rollouts and the total reaches
//! `⌈frac_total · K · n⌉`. Jobs still running at that point are cancelled or
//! discarded on arrival. The returned buffer is ordered by
//! `(task, replicate)` regardless of completion order.

use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::mpsc;

use crate::error::{Error, Result};
use crate::miniworld::Task;
use crate::policy::PolicyParams;
use crate::seed;

use super::{collect_rollout, RolloutBuffer, RolloutConfig, Trajectory};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CollectConfig {
    /// Rollouts per task.
    pub k: usize,
    pub workers: usize,
    pub min_per_task: usize,
    pub frac_total: f64,
    pub seed: u64,
    pub rollout: RolloutConfig,
}

impl Default for CollectConfig {
    fn default() -> Self {
        Self { k: 6, workers: 1, min_per_task: 4, frac_total: 0.9, seed: 0, rollout: RolloutConfig::default() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Job {
    pub task_index: usize,
    pub replicate: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct CollectReport {
    pub buffer: RolloutBuffer,
    /// Rollouts that finished after the cut-off.
    pub discarded: usize,
    /// Rollouts that returned an error.
    pub failed: usize,
    /// Jobs never started or cancelled in flight.
    pub skipped: usize,
}

/// `⌈frac · K · n⌉`, robust to floating-point noise in `frac`.
pub fn stop_threshold(frac: f64, k: usize, n: usize) -> usize {
    let exact = frac * (k * n) as f64;
    (exact - 1e-9).ceil().max(0.0) as usize
}

fn jobs(tasks: &[Task], config: &CollectConfig) -> Vec<Job> {
    let mut out = Vec::with_capacity(tasks.len() * config.k);
    for replicate in 0..config.k {
        for (task_index, task) in tasks.iter().enumerate() {
            let seed = seed::rollout_seed(config.seed, &task.task_id, replicate);
            out.push(Job { task_index, replicate, seed });
        }
    }
    out
}

struct Progress {
    per_task: Vec<usize>,
    total: usize,
    min_per_task: usize,
    threshold: usize,
}

impl Progress {
    fn satisfied(&self) -> bool {
        self.total >= self.threshold && self.per_task.iter().all(|&c| c >= self.min_per_task)
    }
}

/// Collects `K` rollouts per task with `params`.
pub fn collect_parallel(params: &PolicyParams, tasks: &[Task], config: &CollectConfig) -> Result<CollectReport> {
    let rollout = config.rollout;
    collect_parallel_with(tasks, config, |job, _cancel| {
        collect_rollout(params, &tasks[job.task_index], &rollout, job.seed).map(Some)
    })
}

/// Like [`collect_parallel`] with a caller-supplied executor.
///
/// The executor may poll `cancel` and return `Ok(None)` to abandon a job.
pub fn collect_parallel_with<F>(tasks: &[Task], config: &CollectConfig, run: F) -> Result<CollectReport>
where
    F: Fn(&Job, &AtomicBool) -> Result<Option<Trajectory>> + Sync,
{
    if config.k == 0 || config.workers == 0 {
        return Err(Error::Config("k and workers must be positive".into()));
    }
    if !(0.0..=1.0).contains(&config.frac_total) {
        return Err(Error::Config("frac_total must lie in [0, 1]".into()));
    }
    let jobs = jobs(tasks, config);
    let mut progress = Progress {
        per_task: vec![0; tasks.len()],
        total: 0,
        min_per_task: config.min_per_task.min(config.k),
        threshold: stop_threshold(config.frac_total, config.k, tasks.len()),
    };
    let mut accepted: Vec<(usize, usize, Trajectory)> = Vec::new();
    let mut report = CollectReport::default();
    let cancel = AtomicBool::new(false);

    let mut on_result = |job: Job, result: Result<Option<Trajectory>>, report: &mut CollectReport| -> bool {
        let stopped = cancel.load(Ordering::SeqCst);
        match result {
            Ok(Some(traj)) if !stopped => {
                progress.per_task[job.task_index] += 1;
                progress.total += 1;
                accepted.push((job.task_index, job.replicate, traj));
            }
            Ok(Some(_)) => {
                log::debug!("discarding late rollout {}/{}", tasks[job.task_index].task_id, job.replicate);
                report.discarded += 1;
            }
            Ok(None) => report.skipped += 1,
            Err(e) => {
                log::warn!("rollout {}/{} failed: {e}", tasks[job.task_index].task_id, job.replicate);
                report.failed += 1;
            }
        }
        if !stopped && progress.satisfied() {
            cancel.store(true, Ordering::SeqCst);
        }
        cancel.load(Ordering::SeqCst)
    };

    if config.workers == 1 {
        let mut started = 0;
        for job in &jobs {
            started += 1;
            let r = run(job, &cancel);
            if on_result(*job, r, &mut report) {
                break;
            }
        }
        report.skipped += jobs.len() - started;
    } else {
        let next = AtomicUsize::new(0);
        let (tx, rx) = mpsc::channel();
        std::thread::scope(|scope| {
            for _ in 0..config.workers.min(jobs.len().max(1)) {
                let tx = tx.clone();
                let (jobs, next, cancel, run) = (&jobs, &next, &cancel, &run);
                scope.spawn(move || loop {
                    if cancel.load(Ordering::SeqCst) {
                        break;
                    }
                    let i = next.fetch_add(1, Ordering::SeqCst);
                    let Some(job) = jobs.get(i) else { break };
                    let r = std::panic::catch_unwind(std::panic::AssertUnwindSafe(|| run(job, cancel)))
                        .unwrap_or_else(|_| Err(Error::Contract("rollout worker panicked".into())));
                    if tx.send((*job, r)).is_err() {
                        break;
                    }
                });
            }
            drop(tx);
            for (job, r) in rx {
                on_result(job, r, &mut report);
            }
        });
        let started = next.load(Ordering::SeqCst).min(jobs.len());
        report.skipped += jobs.len() - started;
    }

    accepted.sort_by_key(|&(t, r, _)| (t, r));
    report.buffer = RolloutBuffer::new(0, accepted.into_iter().map(|(_, _, t)| t).collect());
    if report.discarded > 0 || report.failed > 0 {
        log::info!(
            "collection kept {} rollouts ({} late, {} failed, {} skipped)",
            report.buffer.len(),
            report.discarded,
            report.failed,
            report.skipped
        );
    }
    Ok(report)
}
