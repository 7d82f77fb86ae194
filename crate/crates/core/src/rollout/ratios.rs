use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::policy::PolicyParams;

use super::Trajectory;

/// Log-ratios are clamped to `±LOG_RATIO_CLAMP` before exponentiation.
pub const LOG_RATIO_CLAMP: f64 = 30.0;

/// Unit over which importance weights are formed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Granularity {
    Token,
    Turn,
    Trajectory,
}

impl std::str::FromStr for Granularity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "token" => Ok(Granularity::Token),
            "turn" => Ok(Granularity::Turn),
            "trajectory" => Ok(Granularity::Trajectory),
            _ => Err(Error::Config(format!("unknown granularity `{s}`"))),
        }
    }
}

/// `Σ_{t ∈ a(x)} log p_θ(x_t | c, x_<t)`.
pub fn traj_logprob(params: &PolicyParams, traj: &Trajectory) -> Result<f64> {
    let mut total = 0.0;
    traj.for_each_agent_step(|_, history, tok| {
        total += params.logprobs(history)?[tok];
        Ok::<_, Error>(())
    })?;
    Ok(total)
}

/// Per-agent-token `log p_θ − log p_ψ`.
pub fn token_log_ratios(params: &PolicyParams, traj: &Trajectory) -> Result<Vec<f64>> {
    if traj.sampling_logprobs.len() != traj.agent_token_count() {
        return Err(Error::Contract("trajectory lacks sampling log-probabilities".into()));
    }
    let mut out = Vec::with_capacity(traj.sampling_logprobs.len());
    traj.for_each_agent_step(|k, history, tok| {
        out.push(params.logprobs(history)?[tok] - traj.sampling_logprobs[k]);
        Ok::<_, Error>(())
    })?;
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Ratios {
    pub values: Vec<f64>,
    /// Unclamped log-ratios, one per unit.
    pub log_values: Vec<f64>,
    /// Units whose log-ratio hit the clamp.
    pub clamped: usize,
}

/// Groups per-token log-ratios into units and exponentiates with clamping.
pub fn group_log_ratios(traj: &Trajectory, token_log: &[f64], granularity: Granularity) -> Ratios {
    let log_values: Vec<f64> = match granularity {
        Granularity::Token => token_log.to_vec(),
        Granularity::Turn => traj
            .turn_agent_ranges()
            .into_iter()
            .map(|r| token_log[r].iter().sum())
            .collect(),
        Granularity::Trajectory => vec![token_log.iter().sum()],
    };
    let mut clamped = 0;
    let values = log_values
        .iter()
        .map(|&l| {
            if l.abs() > LOG_RATIO_CLAMP {
                clamped += 1;
            }
            l.clamp(-LOG_RATIO_CLAMP, LOG_RATIO_CLAMP).exp()
        })
        .collect();
    if clamped > 0 {
        log::debug!("{}: {clamped} importance ratio(s) clamped", traj.task_id);
    }
    Ratios { values, log_values, clamped }
}

/// Importance ratios `p_θ / p_ψ` per token, per turn, or for the whole
/// trajectory.
pub fn importance_ratios(params: &PolicyParams, traj: &Trajectory, granularity: Granularity) -> Result<Ratios> {
    let token_log = token_log_ratios(params, traj)?;
    Ok(group_log_ratios(traj, &token_log, granularity))
}
