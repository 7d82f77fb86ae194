//! The outer training loop: collect, estimate advantages, filter, then
//! several epochs of shuffled minibatch updates.

use ndarray::Array2;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::advantage::{assign_group_advantages, filter_low_advantage, fit_value, gae_advantages, value_loss, Estimator, ValueFunction};
use crate::error::{Error, Result};
use crate::losses::{apply_update, clip_grad_norm, kl_penalty_into, ppo_objective_into, reinforce_objective_into, ClipConfig, SurrogateStats};
use crate::miniworld::Task;
use crate::policy::PolicyParams;
use crate::rollout::{collect_parallel, Advantage, CollectConfig, RolloutBuffer, RolloutConfig};
use crate::seed;

use super::config::{Algorithm, TrainConfig};
use super::eval::evaluate_policy;
use super::pretrain::TokenDataset;

/// Training and dev task pools.
#[derive(Debug, Clone, Default)]
pub struct TaskSplits {
    pub train: Vec<Task>,
    pub dev: Vec<Task>,
}

/// One row of the metric log.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct IterationMetrics {
    pub iteration: usize,
    pub mean_return: f64,
    pub collected: usize,
    pub discarded: usize,
    pub buffer_size: usize,
    pub updates: usize,
    pub skipped_updates: usize,
    /// Mean gradient norm before clipping.
    pub grad_norm: f64,
    pub clip_fraction: f64,
    pub ratio_deviation: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kl: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub value_loss: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub retained: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dev_tgc: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dev_sgc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub iteration: usize,
    pub params: PolicyParams,
    pub dev_tgc: f64,
    pub dev_sgc: f64,
    pub metrics: IterationMetrics,
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub history: Vec<IterationMetrics>,
    pub checkpoints: Vec<Checkpoint>,
    pub final_params: PolicyParams,
}

impl TrainReport {
    pub fn best(&self) -> Option<&Checkpoint> {
        select_best(&self.checkpoints)
    }
}

/// Where a run picks up: the current policy, the critic (if any) and the
/// first iteration still to run.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub params: PolicyParams,
    pub value_fn: Option<ValueFunction>,
    pub next_iteration: usize,
}

/// The checkpoint with the highest dev TGC; the earliest wins ties.
pub fn select_best(checkpoints: &[Checkpoint]) -> Option<&Checkpoint> {
    let mut best: Option<&Checkpoint> = None;
    for c in checkpoints {
        if best.map_or(true, |b| c.dev_tgc > b.dev_tgc) {
            best = Some(c);
        }
    }
    best
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct UpdateStats {
    pub updates: usize,
    pub skipped: usize,
    pub grad_norm_sum: f64,
    pub surrogate: SurrogateStats,
    pub kl: f64,
}

/// Sets advantages on a freshly collected buffer and applies the
/// low-advantage filter.
pub fn prepare_buffer(
    config: &TrainConfig,
    mut buffer: RolloutBuffer,
    params: &PolicyParams,
    value_fn: Option<&ValueFunction>,
) -> Result<RolloutBuffer> {
    match config.algorithm {
        Algorithm::PpoCritic => {
            let v = value_fn.ok_or_else(|| Error::Contract("ppo-critic needs a value function".into()))?;
            for e in &mut buffer.entries {
                let a = gae_advantages(&e.trajectory, v, params, config.gae_gamma, config.gae_lambda)?;
                e.advantage = Advantage::PerToken(a);
            }
        }
        a if a.standardizes_returns() => assign_group_advantages(&mut buffer, Estimator::Standardized)?,
        _ => assign_group_advantages(&mut buffer, Estimator::LeaveOneOut)?,
    }
    filter_low_advantage(buffer, config.adv_filter_threshold)
}

/// The policy-update phase on a prepared buffer.
pub fn update_phase(
    config: &TrainConfig,
    params: &mut PolicyParams,
    reference: &PolicyParams,
    buffer: &RolloutBuffer,
    iteration: usize,
) -> Result<UpdateStats> {
    let mut stats = UpdateStats::default();
    if buffer.is_empty() {
        return Ok(stats);
    }
    let (epochs, minibatch) = config.update_schedule();
    let minibatch = minibatch.unwrap_or(buffer.len()).max(1);
    let clip = ClipConfig { epsilon: config.epsilon, granularity: config.granularity };
    let beta = config.effective_kl_coef();
    let mut order: Vec<usize> = (0..buffer.len()).collect();
    let mut grad = Array2::zeros(params.weights.dim());

    for epoch in 0..epochs {
        let mut rng = seed::rng(seed::derive(config.seed, &[iteration as u64, epoch as u64, 0x5EED]));
        order.shuffle(&mut rng);
        for batch in order.chunks(minibatch) {
            grad.fill(0.0);
            let scale = 1.0 / batch.len() as f64;
            let mut mb = SurrogateStats::default();
            for &i in batch {
                let e = &buffer.entries[i];
                if config.algorithm == Algorithm::Rloo {
                    reinforce_objective_into(&e.trajectory, &e.advantage, params, &mut grad, scale)?;
                } else {
                    let (_, s) = ppo_objective_into(&e.trajectory, &e.advantage, params, &clip, &mut grad, scale)?;
                    mb.merge(&s);
                }
                if beta > 0.0 {
                    stats.kl += scale * kl_penalty_into(params, reference, &e.trajectory, beta, &mut grad, -scale)?;
                }
            }
            let deviation = if mb.units > 0 { mb.ratio_deviation / mb.units as f64 } else { 0.0 };
            stats.surrogate.merge(&mb);
            if deviation > config.divergence_threshold {
                log::warn!("iteration {iteration}: mean |ratio - 1| = {deviation:.3e}, skipping update");
                stats.skipped += 1;
                if config.halt_on_divergence {
                    return Err(Error::Divergence { iteration, mean_deviation: deviation });
                }
                continue;
            }
            stats.grad_norm_sum += clip_grad_norm(&mut grad, config.max_grad_norm)?;
            apply_update(params, &grad, config.lr)?;
            stats.updates += 1;
        }
    }
    Ok(stats)
}

fn sample_tasks<'a>(config: &TrainConfig, pool: &'a [Task], iteration: usize) -> Vec<Task> {
    let mut rng = seed::rng(seed::derive(config.seed, &[iteration as u64, 0x7A5C]));
    let n = config.tasks_per_iter.min(pool.len());
    let mut idx = rand::seq::index::sample(&mut rng, pool.len(), n).into_vec();
    idx.sort_unstable();
    idx.into_iter().map(|i| pool[i].clone()).collect()
}

fn training_pool(config: &TrainConfig, splits: &TaskSplits) -> Result<Vec<Task>> {
    let pool: Vec<Task> = splits
        .train
        .iter()
        .filter(|t| t.difficulty <= config.max_train_difficulty)
        .cloned()
        .collect();
    if pool.is_empty() {
        return Err(Error::EmptyDataset("no training tasks at the configured difficulty".into()));
    }
    Ok(pool)
}

fn dev_pool(config: &TrainConfig, splits: &TaskSplits) -> Vec<Task> {
    splits.dev.iter().filter(|t| t.difficulty <= config.max_eval_difficulty).cloned().collect()
}

fn collect_config(config: &TrainConfig, iteration: usize) -> CollectConfig {
    CollectConfig {
        k: config.k,
        workers: config.workers,
        min_per_task: config.min_per_task,
        frac_total: config.frac_total,
        seed: seed::derive(config.seed, &[iteration as u64]),
        rollout: RolloutConfig { temperature: config.temperature, turn_limit: config.turn_limit_train, ..RolloutConfig::default() },
    }
}

struct Run<'a> {
    config: &'a TrainConfig,
    dev: Vec<Task>,
    history: Vec<IterationMetrics>,
    checkpoints: Vec<Checkpoint>,
    observer: &'a mut dyn FnMut(&IterationMetrics, Option<&Checkpoint>),
}

impl Run<'_> {
    fn record(&mut self, mut row: IterationMetrics, params: &PolicyParams, force_eval: bool) -> Result<()> {
        let every = self.config.eval_every.max(1);
        let checkpoint = if !self.dev.is_empty() && (force_eval || row.iteration % every == 0) {
            let report = evaluate_policy(params, &self.dev, 0.0, self.config.turn_limit_eval, self.config.seed)?;
            row.dev_tgc = Some(report.tgc);
            row.dev_sgc = Some(report.sgc);
            Some(Checkpoint {
                iteration: row.iteration,
                params: params.clone(),
                dev_tgc: report.tgc,
                dev_sgc: report.sgc,
                metrics: row.clone(),
            })
        } else {
            None
        };
        (self.observer)(&row, checkpoint.as_ref());
        self.history.push(row);
        if let Some(c) = checkpoint {
            self.checkpoints.push(c);
        }
        Ok(())
    }
}

/// Trains from `base` with the configured algorithm.
pub fn train(config: &TrainConfig, splits: &TaskSplits, base: &PolicyParams) -> Result<TrainReport> {
    train_with(config, splits, base, None, &mut |_, _| {})
}

/// [`train`] with an optional resume point and a per-iteration observer.
///
/// Iteration 0 is the evaluation of the starting policy; updates run for
/// iterations `1..=config.iterations`. `base` is the KL reference.
pub fn train_with(
    config: &TrainConfig,
    splits: &TaskSplits,
    base: &PolicyParams,
    resume: Option<TrainState>,
    observer: &mut dyn FnMut(&IterationMetrics, Option<&Checkpoint>),
) -> Result<TrainReport> {
    config.validate()?;
    if config.algorithm.supervised() {
        return expert_iteration(config, splits, base, resume, observer, config.algorithm == Algorithm::Rft);
    }
    let pool = training_pool(config, splits)?;
    let mut run = Run { config, dev: dev_pool(config, splits), history: Vec::new(), checkpoints: Vec::new(), observer };
    let (mut params, mut value_fn, start) = match resume {
        Some(s) => (s.params, s.value_fn, s.next_iteration),
        None => (base.clone(), None, 1),
    };
    if config.algorithm == Algorithm::PpoCritic && value_fn.is_none() {
        value_fn = Some(ValueFunction::zeros(params.dim()));
    }
    if start <= 1 {
        run.record(IterationMetrics::default(), &params, true)?;
    }

    for iteration in start.max(1)..=config.iterations {
        let tasks = sample_tasks(config, &pool, iteration);
        let collected = collect_parallel(&params, &tasks, &collect_config(config, iteration))?;
        let mut buffer = collected.buffer;
        buffer.iteration = iteration;
        let mut row = IterationMetrics {
            iteration,
            mean_return: buffer.mean_return(),
            collected: buffer.len(),
            discarded: collected.discarded,
            ..Default::default()
        };
        let prepared = prepare_buffer(config, buffer.clone(), &params, value_fn.as_ref())?;
        row.buffer_size = prepared.len();
        let stats = update_phase(config, &mut params, base, &prepared, iteration)?;
        if let Some(v) = value_fn.as_mut() {
            let coef = config.value_coef.at(iteration - 1);
            if !buffer.is_empty() {
                for _ in 0..config.value_steps {
                    *v = fit_value(v, &buffer, &params, coef, config.value_lr)?;
                }
                row.value_loss = Some(value_loss(v, &buffer, &params));
            }
        }
        row.updates = stats.updates;
        row.skipped_updates = stats.skipped;
        row.grad_norm = if stats.updates > 0 { stats.grad_norm_sum / stats.updates as f64 } else { 0.0 };
        let units = stats.surrogate.units.max(1) as f64;
        row.clip_fraction = stats.surrogate.clipped_units as f64 / units;
        row.ratio_deviation = stats.surrogate.ratio_deviation / units;
        if config.effective_kl_coef() > 0.0 {
            row.kl = Some(stats.kl);
        }
        log::info!(
            "iter {iteration}: return {:.3}, buffer {}, clip {:.3}",
            row.mean_return,
            row.buffer_size,
            row.clip_fraction
        );
        run.record(row, &params, iteration == config.iterations)?;
    }
    Ok(TrainReport { history: run.history, checkpoints: run.checkpoints, final_params: params })
}

/// Rejection-sampling fine-tuning: one round of collection with the base
/// policy, then cross-entropy on the successful rollouts.
pub fn rft_train(config: &TrainConfig, splits: &TaskSplits, base: &PolicyParams) -> Result<TrainReport> {
    let config = TrainConfig { algorithm: Algorithm::Rft, ..config.clone() };
    train_with(&config, splits, base, None, &mut |_, _| {})
}

/// Expert iteration: repeated rounds of rejection-sampling fine-tuning with
/// the current policy.
pub fn ei_train(config: &TrainConfig, splits: &TaskSplits, base: &PolicyParams) -> Result<TrainReport> {
    let config = TrainConfig { algorithm: Algorithm::Ei, ..config.clone() };
    train_with(&config, splits, base, None, &mut |_, _| {})
}

fn expert_iteration(
    config: &TrainConfig,
    splits: &TaskSplits,
    base: &PolicyParams,
    resume: Option<TrainState>,
    observer: &mut dyn FnMut(&IterationMetrics, Option<&Checkpoint>),
    single_round: bool,
) -> Result<TrainReport> {
    let pool = training_pool(config, splits)?;
    let mut run = Run { config, dev: dev_pool(config, splits), history: Vec::new(), checkpoints: Vec::new(), observer };
    let (mut params, start) = match resume {
        Some(s) => (s.params, s.next_iteration),
        None => (base.clone(), 1),
    };
    if start <= 1 {
        run.record(IterationMetrics::default(), &params, true)?;
    }
    let last = if single_round { 1 } else { config.iterations };
    for iteration in start.max(1)..=last {
        let tasks = sample_tasks(config, &pool, iteration);
        let collected = collect_parallel(&params, &tasks, &collect_config(config, iteration))?;
        let buffer = collected.buffer;
        let successes: Vec<_> = buffer.trajectories().filter(|t| t.ret == 1.0).cloned().collect();
        let mut row = IterationMetrics {
            iteration,
            mean_return: buffer.mean_return(),
            collected: buffer.len(),
            discarded: collected.discarded,
            buffer_size: successes.len(),
            retained: Some(successes.len()),
            ..Default::default()
        };
        if successes.is_empty() {
            if single_round {
                return Err(Error::EmptyDataset("no rollout reached return 1.0".into()));
            }
            log::info!("iteration {iteration}: no successful rollouts, skipping update");
        } else {
            let data = TokenDataset::new(&successes, &params.features, params.vocab_size());
            data.fit(&mut params, config.sft_epochs, config.sft_lr)?;
            row.updates = config.sft_epochs;
        }
        log::info!("iter {iteration}: return {:.3}, retained {}", row.mean_return, successes.len());
        run.record(row, &params, iteration == last)?;
    }
    Ok(TrainReport { history: run.history, checkpoints: run.checkpoints, final_params: params })
}
