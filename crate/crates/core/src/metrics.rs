//! Behaviour analytics over collected rollouts.
//!
//! Per-turn rates are normalized by the total number of turns across all
//! rollouts, per-rollout counts by the number of rollouts.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rollout::{Trajectory, TurnRecord};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BehaviorReport {
    pub rollouts: usize,
    pub turns: usize,
    pub turns_per_rollout: f64,
    pub commands_per_rollout: f64,
    pub multi_command_turn_rate: f64,
    pub execution_errors_per_turn: f64,
    pub give_up_rate: f64,
    pub docs_calls_per_rollout: f64,
}

impl BehaviorReport {
    /// `(name, value)` pairs in a fixed order.
    pub fn metrics(&self) -> [(&'static str, f64); 6] {
        [
            ("turns_per_rollout", self.turns_per_rollout),
            ("commands_per_rollout", self.commands_per_rollout),
            ("multi_command_turn_rate", self.multi_command_turn_rate),
            ("execution_errors_per_turn", self.execution_errors_per_turn),
            ("give_up_rate", self.give_up_rate),
            ("docs_calls_per_rollout", self.docs_calls_per_rollout),
        ]
    }
}

/// Failed/recovered endpoint counts over a set of rollouts.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct GiveUpCounts {
    pub failed: usize,
    pub recovered: usize,
}

/// Per rollout, endpoints attempted in an erroring turn enter a pending set
/// (new entries count as failed); endpoints attempted in a clean turn leave
/// it (removals count as recovered).
pub fn give_up_counts<'a>(rollouts: impl IntoIterator<Item = &'a [TurnRecord]>) -> GiveUpCounts {
    let mut total = GiveUpCounts::default();
    for turns in rollouts {
        let mut pending: BTreeSet<&str> = BTreeSet::new();
        for turn in turns {
            if turn.execution_error {
                for e in &turn.endpoints_attempted {
                    if pending.insert(e) {
                        total.failed += 1;
                    }
                }
            } else {
                for e in &turn.endpoints_attempted {
                    if pending.remove(e.as_str()) {
                        total.recovered += 1;
                    }
                }
            }
        }
    }
    total
}

/// `(failed − recovered) / failed`, or 0 when nothing failed.
pub fn give_up_rate(rollouts: &[Trajectory]) -> f64 {
    let c = give_up_counts(rollouts.iter().map(|t| t.turns.as_slice()));
    if c.failed == 0 {
        0.0
    } else {
        (c.failed - c.recovered) as f64 / c.failed as f64
    }
}

pub fn behavior_report(rollouts: &[Trajectory]) -> BehaviorReport {
    let n = rollouts.len();
    if n == 0 {
        return BehaviorReport::default();
    }
    let turns: Vec<&TurnRecord> = rollouts.iter().flat_map(|t| &t.turns).collect();
    let per_turn = |count: usize| if turns.is_empty() { 0.0 } else { count as f64 / turns.len() as f64 };
    BehaviorReport {
        rollouts: n,
        turns: turns.len(),
        turns_per_rollout: turns.len() as f64 / n as f64,
        commands_per_rollout: turns.iter().map(|t| t.command_count).sum::<usize>() as f64 / n as f64,
        multi_command_turn_rate: per_turn(turns.iter().filter(|t| t.command_count > 1).count()),
        execution_errors_per_turn: per_turn(turns.iter().filter(|t| t.execution_error).count()),
        give_up_rate: give_up_rate(rollouts),
        docs_calls_per_rollout: turns.iter().map(|t| t.docs_calls).sum::<usize>() as f64 / n as f64,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricChange {
    pub metric: String,
    pub base: f64,
    pub trained: f64,
    /// `trained / base`; `None` when the base value is 0 and the trained
    /// value is not.
    pub ratio: Option<f64>,
}

/// Relative change of every metric from `base` to `trained`. Equal values
/// give a ratio of 1, including 0 → 0.
pub fn compare(base: &BehaviorReport, trained: &BehaviorReport) -> Result<Vec<MetricChange>> {
    if base.rollouts == 0 || trained.rollouts == 0 {
        return Err(Error::EmptyDataset("cannot compare against an empty rollout set".into()));
    }
    Ok(base
        .metrics()
        .iter()
        .zip(trained.metrics())
        .map(|(&(name, b), (_, t))| MetricChange {
            metric: name.to_string(),
            base: b,
            trained: t,
            ratio: if b == t {
                Some(1.0)
            } else if b == 0.0 {
                None
            } else {
                Some(t / b)
            },
        })
        .collect())
}
