use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::miniworld::Task;
use crate::policy::PolicyParams;
use crate::rollout::{collect_rollout, RolloutConfig, Trajectory};
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskRecord {
    pub task_id: String,
    pub scenario_id: String,
    pub ret: f64,
    pub turns: usize,
}

impl TaskRecord {
    pub fn success(&self) -> bool {
        self.ret == 1.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub tgc: f64,
    pub sgc: f64,
    pub records: Vec<TaskRecord>,
}

/// Task and scenario goal completion. A task succeeds when every unit test
/// passes; a scenario succeeds when all of its tasks do.
pub fn goal_completion(records: &[TaskRecord]) -> (f64, f64) {
    if records.is_empty() {
        return (0.0, 0.0);
    }
    let tgc = records.iter().filter(|r| r.success()).count() as f64 / records.len() as f64;
    let mut scenarios: BTreeMap<&str, bool> = BTreeMap::new();
    for r in records {
        *scenarios.entry(&r.scenario_id).or_insert(true) &= r.success();
    }
    let sgc = scenarios.values().filter(|&&ok| ok).count() as f64 / scenarios.len() as f64;
    (tgc, sgc)
}

/// Runs one episode per task and scores it. Temperature 0 is greedy.
pub fn evaluate_policy(params: &PolicyParams, tasks: &[Task], temperature: f64, turn_limit: usize, seed_value: u64) -> Result<EvalReport> {
    Ok(evaluate_with_rollouts(params, tasks, temperature, turn_limit, seed_value)?.0)
}

/// Like [`evaluate_policy`], also returning the trajectories.
pub fn evaluate_with_rollouts(
    params: &PolicyParams,
    tasks: &[Task],
    temperature: f64,
    turn_limit: usize,
    seed_value: u64,
) -> Result<(EvalReport, Vec<Trajectory>)> {
    let config = RolloutConfig { temperature, turn_limit, ..RolloutConfig::default() };
    let mut records = Vec::with_capacity(tasks.len());
    let mut trajs = Vec::with_capacity(tasks.len());
    for task in tasks {
        let t = collect_rollout(params, task, &config, seed::rollout_seed(seed_value, &task.task_id, 0))?;
        records.push(TaskRecord {
            task_id: task.task_id.clone(),
            scenario_id: task.scenario_id.clone(),
            ret: t.ret,
            turns: t.turns.len(),
        });
        trajs.push(t);
    }
    let (tgc, sgc) = goal_completion(&records);
    Ok((EvalReport { tgc, sgc, records }, trajs))
}
