use serde::{Deserialize, Serialize};

use crate::advantage::CoefSchedule;
use crate::error::{Error, Result};
use crate::rollout::Granularity;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Algorithm {
    Loop,
    Rloo,
    Grpo,
    GrpoNoKl,
    LoopRwnorm,
    PpoCritic,
    Rft,
    Ei,
}

impl Algorithm {
    pub const ALL: [Algorithm; 8] = [
        Algorithm::Loop,
        Algorithm::Rloo,
        Algorithm::Grpo,
        Algorithm::GrpoNoKl,
        Algorithm::LoopRwnorm,
        Algorithm::PpoCritic,
        Algorithm::Rft,
        Algorithm::Ei,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Loop => "loop",
            Algorithm::Rloo => "rloo",
            Algorithm::Grpo => "grpo",
            Algorithm::GrpoNoKl => "grpo-no-kl",
            Algorithm::LoopRwnorm => "loop-rwnorm",
            Algorithm::PpoCritic => "ppo-critic",
            Algorithm::Rft => "rft",
            Algorithm::Ei => "ei",
        }
    }

    /// One full-batch update per collection phase.
    pub fn strictly_on_policy(self) -> bool {
        matches!(self, Algorithm::Rloo | Algorithm::Grpo | Algorithm::GrpoNoKl)
    }

    pub fn standardizes_returns(self) -> bool {
        matches!(self, Algorithm::Grpo | Algorithm::GrpoNoKl | Algorithm::LoopRwnorm)
    }

    pub fn uses_kl(self) -> bool {
        self == Algorithm::Grpo
    }

    pub fn supervised(self) -> bool {
        matches!(self, Algorithm::Rft | Algorithm::Ei)
    }
}

impl std::fmt::Display for Algorithm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Algorithm::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown algorithm `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub algorithm: Algorithm,
    pub granularity: Granularity,
    /// Rollouts per task.
    pub k: usize,
    pub tasks_per_iter: usize,
    pub n_epoch: usize,
    /// Trajectories per minibatch.
    pub minibatch: usize,
    pub epsilon: f64,
    pub lr: f64,
    pub max_grad_norm: f64,
    pub adv_filter_threshold: f64,
    pub temperature: f64,
    pub seed: u64,
    pub iterations: usize,
    pub eval_every: usize,
    pub min_per_task: usize,
    pub frac_total: f64,
    pub workers: usize,
    pub kl_coef: f64,
    /// Training tasks above this difficulty are never sampled.
    pub max_train_difficulty: u8,
    pub turn_limit_train: usize,
    pub turn_limit_eval: usize,
    pub gae_gamma: f64,
    pub gae_lambda: f64,
    pub value_lr: f64,
    pub value_coef: CoefSchedule,
    /// Value-head gradient steps per iteration.
    pub value_steps: usize,
    /// Dev tasks above this difficulty are left out of evaluation.
    pub max_eval_difficulty: u8,
    /// Mean `|ρ − 1|` over a minibatch above which the update is skipped.
    pub divergence_threshold: f64,
    pub halt_on_divergence: bool,
    /// Cross-entropy epochs and step size for the supervised baselines.
    pub sft_epochs: usize,
    pub sft_lr: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            algorithm: Algorithm::Loop,
            granularity: Granularity::Token,
            k: 6,
            tasks_per_iter: 40,
            n_epoch: 2,
            minibatch: 16,
            epsilon: 0.2,
            lr: 1.0,
            max_grad_norm: 1.0,
            adv_filter_threshold: 0.01,
            temperature: 1.0,
            seed: 0,
            iterations: 200,
            eval_every: 10,
            min_per_task: 4,
            frac_total: 0.9,
            workers: 1,
            kl_coef: crate::losses::DEFAULT_KL_COEF,
            max_train_difficulty: 2,
            turn_limit_train: crate::miniworld::generate::MAX_TURNS_TRAIN,
            turn_limit_eval: crate::miniworld::generate::MAX_TURNS_EVAL,
            gae_gamma: 1.0,
            gae_lambda: 1.0,
            value_lr: 0.5,
            value_coef: CoefSchedule::default(),
            value_steps: 10,
            max_eval_difficulty: 2,
            divergence_threshold: 10.0,
            halt_on_divergence: false,
            sft_epochs: 20,
            sft_lr: 0.1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(m.to_string()));
        if self.k < 2 {
            return fail("k must be at least 2");
        }
        if self.min_per_task > self.k {
            return fail("min_per_task cannot exceed k");
        }
        if !(self.frac_total > 0.0 && self.frac_total <= 1.0) {
            return fail("frac_total must lie in (0, 1]");
        }
        if !(self.epsilon > 0.0) {
            return fail("epsilon must be positive");
        }
        if self.tasks_per_iter == 0 || self.minibatch == 0 || self.n_epoch == 0 || self.workers == 0 {
            return fail("tasks_per_iter, minibatch, n_epoch and workers must be positive");
        }
        if !(self.temperature >= 0.0) || !self.lr.is_finite() || !(self.max_grad_norm > 0.0) {
            return fail("temperature, lr and max_grad_norm must be valid");
        }
        if self.algorithm == Algorithm::PpoCritic && self.granularity != Granularity::Token {
            return fail("ppo-critic uses per-token advantages and needs token granularity");
        }
        if !(self.gae_gamma > 0.0 && self.gae_gamma <= 1.0 && self.gae_lambda > 0.0 && self.gae_lambda <= 1.0) {
            return fail("GAE gamma and lambda must lie in (0, 1]");
        }
        Ok(())
    }

    /// `(epochs, minibatch)` after the strict on-policy override. A minibatch
    /// of `None` means the whole buffer.
    pub fn update_schedule(&self) -> (usize, Option<usize>) {
        if self.algorithm.strictly_on_policy() {
            (1, None)
        } else {
            (self.n_epoch, Some(self.minibatch))
        }
    }

    pub fn effective_kl_coef(&self) -> f64 {
        if self.algorithm.uses_kl() {
            self.kl_coef
        } else {
            0.0
        }
    }
}
