//! Advantage estimators.

use ndarray::Array1;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::policy::PolicyParams;
use crate::rollout::{Advantage, RolloutBuffer, Trajectory};

/// Floor on the standard deviation used by [`grpo_advantages`].
pub const STD_EPS: f64 = 1e-8;
pub const DEFAULT_FILTER_THRESHOLD: f64 = 0.01;

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn check_group(returns: &[f64]) -> Result<()> {
    if returns.len() < 2 {
        return Err(Error::Contract(format!("a group needs at least 2 returns, got {}", returns.len())));
    }
    if returns.iter().any(|r| !r.is_finite()) {
        return Err(Error::Numerical("non-finite return in group".into()));
    }
    Ok(())
}

/// Leave-one-out advantages `K/(K−1) · (R_k − mean R)`.
pub fn loo_advantages(returns: &[f64]) -> Result<Vec<f64>> {
    check_group(returns)?;
    let k = returns.len() as f64;
    let m = mean(returns);
    Ok(returns.iter().map(|r| k / (k - 1.0) * (r - m)).collect())
}

/// Group-standardized advantages with population standard deviation.
/// Zero-variance groups get all-zero advantages.
pub fn grpo_advantages(returns: &[f64]) -> Result<Vec<f64>> {
    check_group(returns)?;
    let m = mean(returns);
    if returns.iter().all(|&r| r == returns[0]) {
        return Ok(vec![0.0; returns.len()]);
    }
    let var = returns.iter().map(|r| (r - m).powi(2)).sum::<f64>() / returns.len() as f64;
    let sd = var.sqrt().max(STD_EPS);
    Ok(returns.iter().map(|r| (r - m) / sd).collect())
}

/// Scalar group estimator used when assigning buffer advantages.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Estimator {
    LeaveOneOut,
    Standardized,
}

/// Groups buffer entries by task and sets scalar advantages in place.
///
/// Tasks with a single completed rollout get advantage 0; they carry no
/// baseline information.
pub fn assign_group_advantages(buffer: &mut RolloutBuffer, estimator: Estimator) -> Result<()> {
    let mut groups: std::collections::BTreeMap<&str, Vec<usize>> = Default::default();
    for (i, e) in buffer.entries.iter().enumerate() {
        groups.entry(e.trajectory.task_id.as_str()).or_default().push(i);
    }
    let mut assigned = vec![0.0; buffer.entries.len()];
    for idx in groups.values() {
        if idx.len() < 2 {
            continue;
        }
        let returns: Vec<f64> = idx.iter().map(|&i| buffer.entries[i].trajectory.ret).collect();
        let adv = match estimator {
            Estimator::LeaveOneOut => loo_advantages(&returns)?,
            Estimator::Standardized => grpo_advantages(&returns)?,
        };
        for (&i, a) in idx.iter().zip(adv) {
            assigned[i] = a;
        }
    }
    for (e, a) in buffer.entries.iter_mut().zip(assigned) {
        e.advantage = Advantage::Scalar(a);
    }
    Ok(())
}

/// Linear value head over the policy's features.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueFunction {
    pub v: Array1<f64>,
}

impl ValueFunction {
    pub fn zeros(dim: usize) -> Self {
        Self { v: Array1::zeros(dim) }
    }

    /// Unclamped prediction.
    pub fn raw(&self, active: &[usize]) -> f64 {
        active.iter().map(|&i| self.v[i]).sum()
    }

    /// Prediction clamped to `[0, 1]`.
    pub fn predict(&self, active: &[usize]) -> f64 {
        self.raw(active).clamp(0.0, 1.0)
    }
}

/// Clamped value estimates at each agent token.
pub fn agent_values(traj: &Trajectory, value_fn: &ValueFunction, params: &PolicyParams) -> Vec<f64> {
    let mut out = Vec::with_capacity(traj.sampling_logprobs.len());
    let _ = traj.for_each_agent_step(|_, history, _| {
        out.push(value_fn.predict(&params.active(history)));
        Ok::<_, ()>(())
    });
    out
}

/// GAE over agent-token steps with a single terminal reward `R`.
///
/// `values[t]` are the (clamped) estimates at each agent token; the value
/// after the last token is 0.
pub fn gae_from_values(ret: f64, values: &[f64], gamma: f64, lambda: f64) -> Vec<f64> {
    let n = values.len();
    let mut adv = vec![0.0; n];
    let mut running = 0.0;
    for t in (0..n).rev() {
        let (reward, next) = if t + 1 == n { (ret, 0.0) } else { (0.0, values[t + 1]) };
        let delta = reward + gamma * next - values[t];
        running = delta + gamma * lambda * running;
        adv[t] = running;
    }
    adv
}

pub fn gae_advantages(
    traj: &Trajectory,
    value_fn: &ValueFunction,
    params: &PolicyParams,
    gamma: f64,
    lambda: f64,
) -> Result<Vec<f64>> {
    if !(gamma > 0.0 && gamma <= 1.0 && lambda > 0.0 && lambda <= 1.0) {
        return Err(Error::Config("GAE γ and λ must lie in (0, 1]".into()));
    }
    Ok(gae_from_values(traj.ret, &agent_values(traj, value_fn, params), gamma, lambda))
}

/// Linear decay of the value-loss coefficient from `start` to `end` over
/// `span` iterations, constant afterwards.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoefSchedule {
    pub start: f64,
    pub end: f64,
    pub span: usize,
}

impl Default for CoefSchedule {
    fn default() -> Self {
        Self { start: 0.1, end: 0.001, span: 200 }
    }
}

impl CoefSchedule {
    pub fn at(&self, iteration: usize) -> f64 {
        if self.span == 0 {
            return self.end;
        }
        let f = (iteration.min(self.span)) as f64 / self.span as f64;
        self.start + (self.end - self.start) * f
    }
}

/// Mean squared error of the unclamped value head against returns over every
/// agent token in the buffer.
pub fn value_loss(value_fn: &ValueFunction, buffer: &RolloutBuffer, params: &PolicyParams) -> f64 {
    let (mut total, mut n) = (0.0, 0usize);
    for t in buffer.trajectories() {
        let _ = t.for_each_agent_step(|_, history, _| {
            total += (value_fn.raw(&params.active(history)) - t.ret).powi(2);
            n += 1;
            Ok::<_, ()>(())
        });
    }
    if n == 0 { 0.0 } else { total / n as f64 }
}

/// One gradient step of `coef · MSE` with step size `lr`. The policy
/// parameters are read for features only.
pub fn fit_value(
    value_fn: &ValueFunction,
    buffer: &RolloutBuffer,
    params: &PolicyParams,
    coef: f64,
    lr: f64,
) -> Result<ValueFunction> {
    if buffer.is_empty() {
        return Err(Error::EmptyDataset("value fit needs at least one trajectory".into()));
    }
    let mut grad = Array1::<f64>::zeros(value_fn.v.len());
    let mut n = 0usize;
    for t in buffer.trajectories() {
        t.for_each_agent_step(|_, history, _| {
            let active = params.active(history);
            let err = value_fn.raw(&active) - t.ret;
            for &i in &active {
                grad[i] += 2.0 * err;
            }
            n += 1;
            Ok::<_, Error>(())
        })?;
    }
    if n == 0 {
        return Ok(value_fn.clone());
    }
    let mut next = value_fn.clone();
    next.v.scaled_add(-lr * coef / n as f64, &grad);
    if next.v.iter().any(|x| !x.is_finite()) {
        return Err(Error::Numerical("value head diverged".into()));
    }
    Ok(next)
}

/// Drops entries whose scalar advantage magnitude is below `threshold`.
/// Per-token advantages are kept if any token clears the threshold.
pub fn filter_low_advantage(buffer: RolloutBuffer, threshold: f64) -> Result<RolloutBuffer> {
    let mut entries = Vec::with_capacity(buffer.entries.len());
    for e in buffer.entries {
        let keep = match &e.advantage {
            Advantage::Unset => return Err(Error::Contract("advantages must be set before filtering".into())),
            Advantage::Scalar(a) => a.abs() >= threshold,
            Advantage::PerToken(a) => a.iter().any(|x| x.abs() >= threshold),
        };
        if keep {
            entries.push(e);
        }
    }
    Ok(RolloutBuffer { iteration: buffer.iteration, entries })
}
