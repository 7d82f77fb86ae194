//! Trajectories and their collection.
//!
//! A trajectory interleaves agent tokens (action mask `true`) with
//! environment response tokens (mask `false`). Only agent tokens carry
//! sampling log-probabilities and only they contribute to the policy's
//! likelihood.

mod collect;
mod io;
mod parallel;
mod ratios;

pub use collect::{collect_rollout, run_scripted, RolloutConfig, CONTEXT_CAP, TOKEN_CAP};
pub use io::{read_trajectories, write_trajectories, TrajectoryRecord};
pub use parallel::{collect_parallel, collect_parallel_with, stop_threshold, CollectConfig, CollectReport, Job};
pub use ratios::{importance_ratios, traj_logprob, Granularity, Ratios, LOG_RATIO_CLAMP};

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::miniworld::ErrorCode;
use crate::policy::Token;

/// Per-turn execution summary kept for behaviour metrics.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TurnRecord {
    pub endpoints_attempted: Vec<String>,
    pub execution_error: bool,
    pub error_code: Option<ErrorCode>,
    pub command_count: usize,
    pub docs_calls: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub task_id: String,
    pub seed: u64,
    pub context: Vec<Token>,
    pub tokens: Vec<Token>,
    pub action_mask: Vec<bool>,
    /// Half-open ranges into `tokens` covering each turn's agent tokens.
    pub turn_spans: Vec<(usize, usize)>,
    /// `log p_ψ` of each agent token, in order.
    pub sampling_logprobs: Vec<f64>,
    pub ret: f64,
    /// The episode ended without `ANSWER`/`DONE`.
    pub truncated: bool,
    pub turns: Vec<TurnRecord>,
}

impl Trajectory {
    pub fn agent_token_count(&self) -> usize {
        self.action_mask.iter().filter(|&&m| m).count()
    }

    /// Context followed by all trajectory tokens.
    pub fn sequence(&self) -> Vec<Token> {
        let mut s = Vec::with_capacity(self.context.len() + self.tokens.len());
        s.extend_from_slice(&self.context);
        s.extend_from_slice(&self.tokens);
        s
    }

    /// Calls `f(k, history, token)` for the `k`-th agent token, where
    /// `history` is everything that precedes it.
    pub fn for_each_agent_step<E>(&self, mut f: impl FnMut(usize, &[Token], Token) -> Result<(), E>) -> Result<(), E> {
        let seq = self.sequence();
        let offset = self.context.len();
        let mut k = 0;
        for (i, (&tok, &agent)) in self.tokens.iter().zip(&self.action_mask).enumerate() {
            if agent {
                f(k, &seq[..offset + i], tok)?;
                k += 1;
            }
        }
        Ok(())
    }

    /// Ranges of agent-token indices (not token indices) per turn.
    pub fn turn_agent_ranges(&self) -> Vec<Range<usize>> {
        let mut before = 0;
        let mut cursor = 0;
        let mut out = Vec::with_capacity(self.turn_spans.len());
        for &(s, e) in &self.turn_spans {
            before += self.action_mask[cursor..s].iter().filter(|&&m| m).count();
            let n = self.action_mask[s..e].iter().filter(|&&m| m).count();
            out.push(before..before + n);
            before += n;
            cursor = e;
        }
        out
    }

    /// Checks the structural invariants.
    pub fn validate(&self) -> Result<(), String> {
        if self.tokens.len() != self.action_mask.len() {
            return Err("mask length differs from token count".into());
        }
        if self.sampling_logprobs.len() != self.agent_token_count() {
            return Err("sampling log-probabilities must cover exactly the agent tokens".into());
        }
        if !(0.0..=1.0).contains(&self.ret) {
            return Err(format!("return {} outside [0, 1]", self.ret));
        }
        let mut covered = 0;
        let mut last_end = 0;
        for &(s, e) in &self.turn_spans {
            if s < last_end || e < s || e > self.tokens.len() {
                return Err("turn spans overlap or are out of order".into());
            }
            if !self.action_mask[s..e].iter().all(|&m| m) {
                return Err("turn span covers an environment token".into());
            }
            covered += e - s;
            last_end = e;
        }
        if covered != self.agent_token_count() {
            return Err("turn spans do not partition the agent tokens".into());
        }
        Ok(())
    }
}

/// Advantage attached to a buffered trajectory.
#[derive(Debug, Clone, PartialEq)]
pub enum Advantage {
    Unset,
    Scalar(f64),
    /// One value per agent token (learned-critic estimates).
    PerToken(Vec<f64>),
}

impl Advantage {
    pub fn scalar(&self) -> Option<f64> {
        match self {
            Advantage::Scalar(a) => Some(*a),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BufferEntry {
    pub trajectory: Trajectory,
    pub advantage: Advantage,
}

/// Trajectories collected in one training iteration.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RolloutBuffer {
    pub iteration: usize,
    pub entries: Vec<BufferEntry>,
}

impl RolloutBuffer {
    pub fn new(iteration: usize, trajectories: Vec<Trajectory>) -> Self {
        Self {
            iteration,
            entries: trajectories
                .into_iter()
                .map(|trajectory| BufferEntry { trajectory, advantage: Advantage::Unset })
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn trajectories(&self) -> impl Iterator<Item = &Trajectory> {
        self.entries.iter().map(|e| &e.trajectory)
    }

    pub fn mean_return(&self) -> f64 {
        if self.entries.is_empty() {
            return 0.0;
        }
        self.trajectories().map(|t| t.ret).sum::<f64>() / self.len() as f64
    }
}
