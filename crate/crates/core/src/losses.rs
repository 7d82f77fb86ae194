//! Surrogate objectives and gradient post-processing.
//!
//! All objectives are maximized. Gradients are dense `V × d` matrices in the
//! layout of [`PolicyParams::weights`].
//!
//! The clipped objective for one trajectory is
//! `J = (1/|a(x)|) · Σ_u min(ρ_u · A, g_ε(A))` where the units `u` are agent
//! tokens, turns or the whole trajectory and `ρ_u` is the product of token
//! ratios inside the unit. The same `1/|a(x)|` normalization is used at every
//! granularity, so with all ratios equal to 1 the gradient is the REINFORCE
//! gradient.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::policy::{add_score, PolicyParams};
use crate::rollout::{Advantage, Granularity, Trajectory, LOG_RATIO_CLAMP};

pub const DEFAULT_EPSILON: f64 = 0.2;
pub const DEFAULT_KL_COEF: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClipConfig {
    pub epsilon: f64,
    pub granularity: Granularity,
}

impl Default for ClipConfig {
    fn default() -> Self {
        Self { epsilon: DEFAULT_EPSILON, granularity: Granularity::Token }
    }
}

/// `A + ε·|A|`, the clipped branch of the surrogate.
pub fn g_epsilon(a: f64, epsilon: f64) -> f64 {
    a + epsilon * a.abs()
}

/// Per-trajectory diagnostics from a surrogate evaluation.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct SurrogateStats {
    pub units: usize,
    pub clipped_units: usize,
    /// `Σ_u |ρ_u − 1|`.
    pub ratio_deviation: f64,
}

impl SurrogateStats {
    pub fn merge(&mut self, other: &SurrogateStats) {
        self.units += other.units;
        self.clipped_units += other.clipped_units;
        self.ratio_deviation += other.ratio_deviation;
    }
}

/// Per agent token: active features, current log-probabilities and the token.
struct Step {
    active: Vec<usize>,
    logprobs: Vec<f64>,
    token: usize,
}

fn agent_steps(params: &PolicyParams, traj: &Trajectory) -> Result<Vec<Step>> {
    let mut steps = Vec::with_capacity(traj.sampling_logprobs.len());
    traj.for_each_agent_step(|_, history, token| {
        let active = params.active(history);
        let logprobs = params.logprobs_active(&active)?;
        steps.push(Step { active, logprobs, token });
        Ok::<_, Error>(())
    })?;
    Ok(steps)
}

fn unit_ranges(traj: &Trajectory, n: usize, granularity: Granularity) -> Vec<std::ops::Range<usize>> {
    match granularity {
        Granularity::Token => (0..n).map(|t| t..t + 1).collect(),
        Granularity::Turn => traj.turn_agent_ranges(),
        Granularity::Trajectory => vec![0..n],
    }
}

/// Adds `scale · ∇J` into `grad` and returns `(J, stats)`.
pub fn ppo_objective_into(
    traj: &Trajectory,
    advantage: &Advantage,
    params: &PolicyParams,
    clip: &ClipConfig,
    grad: &mut Array2<f64>,
    scale: f64,
) -> Result<(f64, SurrogateStats)> {
    let n = traj.agent_token_count();
    if traj.sampling_logprobs.len() != n {
        return Err(Error::Contract("ppo objective needs sampling log-probabilities".into()));
    }
    if n == 0 {
        return Ok((0.0, SurrogateStats::default()));
    }
    let per_token: Vec<f64> = match advantage {
        Advantage::Unset => return Err(Error::Contract("advantage not set".into())),
        Advantage::Scalar(a) => vec![*a; n],
        Advantage::PerToken(a) if a.len() == n => {
            if clip.granularity != Granularity::Token {
                return Err(Error::Config("per-token advantages require token granularity".into()));
            }
            a.clone()
        }
        Advantage::PerToken(_) => return Err(Error::Contract("per-token advantage length mismatch".into())),
    };
    if per_token.iter().any(|a| !a.is_finite()) {
        return Err(Error::Numerical("non-finite advantage".into()));
    }

    let steps = agent_steps(params, traj)?;
    let norm = 1.0 / n as f64;
    let mut objective = 0.0;
    let mut stats = SurrogateStats::default();
    for range in unit_ranges(traj, n, clip.granularity) {
        if range.is_empty() {
            continue;
        }
        let a = per_token[range.start];
        let log_ratio: f64 = range
            .clone()
            .map(|t| steps[t].logprobs[steps[t].token] - traj.sampling_logprobs[t])
            .sum();
        let ratio = log_ratio.clamp(-LOG_RATIO_CLAMP, LOG_RATIO_CLAMP).exp();
        let surrogate = ratio * a;
        let clipped = g_epsilon(a, clip.epsilon);
        stats.units += 1;
        stats.ratio_deviation += (ratio - 1.0).abs();
        if surrogate > clipped {
            stats.clipped_units += 1;
            objective += norm * clipped;
        } else {
            objective += norm * surrogate;
            let coef = scale * norm * surrogate;
            for t in range {
                add_score(grad, &steps[t].active, &steps[t].logprobs, steps[t].token, coef);
            }
        }
    }
    Ok((objective, stats))
}

/// Clipped surrogate value and gradient for one trajectory.
pub fn ppo_objective(
    traj: &Trajectory,
    advantage: &Advantage,
    params: &PolicyParams,
    clip: &ClipConfig,
) -> Result<(f64, Array2<f64>, SurrogateStats)> {
    let mut grad = Array2::zeros(params.weights.dim());
    let (value, stats) = ppo_objective_into(traj, advantage, params, clip, &mut grad, 1.0)?;
    Ok((value, grad, stats))
}

/// Adds `scale · A · (1/|a(x)|) Σ ∇ log p` into `grad`; returns the
/// objective `A · mean log p`.
pub fn reinforce_objective_into(
    traj: &Trajectory,
    advantage: &Advantage,
    params: &PolicyParams,
    grad: &mut Array2<f64>,
    scale: f64,
) -> Result<f64> {
    let steps = agent_steps(params, traj)?;
    let n = steps.len();
    if n == 0 {
        return Ok(0.0);
    }
    let adv = |t: usize| -> Result<f64> {
        match advantage {
            Advantage::Scalar(a) => Ok(*a),
            Advantage::PerToken(a) => a.get(t).copied().ok_or_else(|| Error::Contract("advantage length mismatch".into())),
            Advantage::Unset => Err(Error::Contract("advantage not set".into())),
        }
    };
    let norm = 1.0 / n as f64;
    let mut value = 0.0;
    for (t, s) in steps.iter().enumerate() {
        let a = adv(t)?;
        value += norm * a * s.logprobs[s.token];
        add_score(grad, &s.active, &s.logprobs, s.token, scale * norm * a);
    }
    Ok(value)
}

pub fn reinforce_objective(traj: &Trajectory, advantage: &Advantage, params: &PolicyParams) -> Result<(f64, Array2<f64>)> {
    let mut grad = Array2::zeros(params.weights.dim());
    let value = reinforce_objective_into(traj, advantage, params, &mut grad, 1.0)?;
    Ok((value, grad))
}

/// Adds `scale · ∇ (β · Σ_t KL(p_θ ‖ p_ref))` into `grad` and returns the
/// penalty. The caller subtracts it from the objective.
pub fn kl_penalty_into(
    params: &PolicyParams,
    reference: &PolicyParams,
    traj: &Trajectory,
    beta: f64,
    grad: &mut Array2<f64>,
    scale: f64,
) -> Result<f64> {
    if params.weights.dim() != reference.weights.dim() || params.features != reference.features {
        return Err(Error::Contract("reference policy has a different shape".into()));
    }
    let mut penalty = 0.0;
    traj.for_each_agent_step(|_, history, _| {
        let active = params.active(history);
        let lp = params.logprobs_active(&active)?;
        let lq = reference.logprobs_active(&active)?;
        let kl: f64 = lp.iter().zip(&lq).map(|(p, q)| p.exp() * (p - q)).sum();
        penalty += beta * kl;
        for (y, (p, q)) in lp.iter().zip(&lq).enumerate() {
            let coef = scale * beta * p.exp() * (p - q - kl);
            if coef != 0.0 {
                let mut row = grad.row_mut(y);
                for &j in &active {
                    row[j] += coef;
                }
            }
        }
        Ok::<_, Error>(())
    })?;
    Ok(penalty)
}

/// `β · Σ_t KL(p_θ(·|ctx_t) ‖ p_ref(·|ctx_t))` over agent-token contexts, and
/// its gradient with respect to `θ`.
pub fn kl_penalty(
    params: &PolicyParams,
    reference: &PolicyParams,
    traj: &Trajectory,
    beta: f64,
) -> Result<(f64, Array2<f64>)> {
    let mut grad = Array2::zeros(params.weights.dim());
    let value = kl_penalty_into(params, reference, traj, beta, &mut grad, 1.0)?;
    Ok((value, grad))
}

pub fn grad_norm(grad: &Array2<f64>) -> f64 {
    grad.iter().map(|g| g * g).sum::<f64>().sqrt()
}

/// Rescales `grad` to norm `max_norm` when it is larger. Returns the norm
/// before clipping.
pub fn clip_grad_norm(grad: &mut Array2<f64>, max_norm: f64) -> Result<f64> {
    if let Some((idx, g)) = grad.indexed_iter().find(|(_, g)| !g.is_finite()) {
        return Err(Error::Numerical(format!("non-finite gradient entry {g} at {idx:?}")));
    }
    let norm = grad_norm(grad);
    if norm > max_norm {
        *grad *= max_norm / norm;
    }
    Ok(norm)
}

/// Gradient ascent step `W ← W + lr · grad`.
pub fn apply_update(params: &mut PolicyParams, grad: &Array2<f64>, learning_rate: f64) -> Result<()> {
    if grad.dim() != params.weights.dim() {
        return Err(Error::Contract(format!(
            "gradient shape {:?} does not match parameters {:?}",
            grad.dim(),
            params.weights.dim()
        )));
    }
    params.weights.scaled_add(learning_rate, grad);
    Ok(())
}

/// Sum of per-trajectory gradients; [`GradAccumulator::mean`] averages over
/// trajectories.
#[derive(Debug, Clone, PartialEq)]
pub struct GradAccumulator {
    pub grad: Array2<f64>,
    pub trajectories: usize,
    pub tokens: usize,
}

impl GradAccumulator {
    pub fn new(shape: (usize, usize)) -> Self {
        Self { grad: Array2::zeros(shape), trajectories: 0, tokens: 0 }
    }

    pub fn add(&mut self, grad: &Array2<f64>, tokens: usize) -> Result<()> {
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Numerical("non-finite gradient accumulated".into()));
        }
        self.grad += grad;
        self.trajectories += 1;
        self.tokens += tokens;
        Ok(())
    }

    pub fn mean(&self) -> Array2<f64> {
        if self.trajectories == 0 {
            return self.grad.clone();
        }
        &self.grad / self.trajectories as f64
    }
}
