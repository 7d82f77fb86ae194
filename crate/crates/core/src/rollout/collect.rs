use crate::error::Result;
use crate::miniworld::{EnvConfig, Episode, Task};
use crate::policy::{sample_token, PolicyParams};
use crate::seed;

use super::{Trajectory, TurnRecord};

pub const TOKEN_CAP: usize = 32;
pub const CONTEXT_CAP: usize = 1024;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RolloutConfig {
    pub temperature: f64,
    pub turn_limit: usize,
    /// Maximum agent tokens per turn; generation is force-stopped with
    /// `<eos>` (an environment token) at the cap.
    pub token_cap: usize,
    /// Maximum length of context plus trajectory.
    pub context_cap: usize,
    pub env: EnvConfig,
}

impl Default for RolloutConfig {
    fn default() -> Self {
        Self {
            temperature: 1.0,
            turn_limit: crate::miniworld::generate::MAX_TURNS_TRAIN,
            token_cap: TOKEN_CAP,
            context_cap: CONTEXT_CAP,
            env: EnvConfig::default(),
        }
    }
}

/// Runs one episode of `params` on `task`. The result is a pure function of
/// `(params, task, config, seed)`.
pub fn collect_rollout(params: &PolicyParams, task: &Task, config: &RolloutConfig, seed_value: u64) -> Result<Trajectory> {
    let stop = params.vocab.stop();
    let mut episode = Episode::new(task, config.turn_limit, config.env);
    let context = episode.context().to_vec();
    let mut seq = context.clone();
    let mut rng = seed::rng(seed_value);

    let mut tokens = Vec::new();
    let mut mask = Vec::new();
    let mut logps = Vec::new();
    let mut spans = Vec::new();
    let mut turns = Vec::new();
    let mut out_of_context = false;

    while !episode.finished() {
        let start = tokens.len();
        let mut turn = Vec::new();
        loop {
            if seq.len() + 1 >= config.context_cap {
                out_of_context = true;
            }
            if out_of_context || turn.len() >= config.token_cap {
                turn.push(stop);
                seq.push(stop);
                tokens.push(stop);
                mask.push(false);
                break;
            }
            let lp = params.logprobs(&seq)?;
            let tok = sample_token(&lp, config.temperature, &mut rng)?;
            logps.push(lp[tok]);
            turn.push(tok);
            seq.push(tok);
            tokens.push(tok);
            mask.push(true);
            if tok == stop {
                break;
            }
        }
        let agent_end = start + turn.len() - usize::from(mask.last() == Some(&false));
        spans.push((start, agent_end));

        let result = episode.step(&turn);
        turns.push(TurnRecord {
            endpoints_attempted: result.endpoints_attempted,
            execution_error: result.execution_error,
            error_code: result.error_code,
            command_count: result.command_count,
            docs_calls: result.docs_calls,
        });
        for &t in &result.response_tokens {
            seq.push(t);
            tokens.push(t);
            mask.push(false);
        }
        if out_of_context || seq.len() >= config.context_cap {
            episode.abort();
        }
    }

    Ok(Trajectory {
        task_id: task.task_id.clone(),
        seed: seed_value,
        context,
        tokens,
        action_mask: mask,
        turn_spans: spans,
        sampling_logprobs: logps,
        ret: episode.reward(),
        truncated: !episode.terminal(),
        turns,
    })
}

/// Runs a scripted agent. `agent` receives the previous turn's result (none
/// on the first turn) and returns the next turn, which must end with the
/// stop token. Agent log-probabilities are recorded as 0.
pub fn run_scripted(
    task: &Task,
    turn_limit: usize,
    env: EnvConfig,
    mut agent: impl FnMut(Option<&crate::miniworld::TurnResult>) -> Vec<crate::policy::Token>,
) -> Trajectory {
    let mut episode = Episode::new(task, turn_limit, env);
    let context = episode.context().to_vec();
    let (mut tokens, mut mask, mut spans, mut turns) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    let mut last = None;
    while !episode.finished() {
        let turn = agent(last.as_ref());
        let start = tokens.len();
        tokens.extend_from_slice(&turn);
        mask.extend(std::iter::repeat(true).take(turn.len()));
        spans.push((start, tokens.len()));
        let result = episode.step(&turn);
        turns.push(TurnRecord {
            endpoints_attempted: result.endpoints_attempted.clone(),
            execution_error: result.execution_error,
            error_code: result.error_code,
            command_count: result.command_count,
            docs_calls: result.docs_calls,
        });
        tokens.extend_from_slice(&result.response_tokens);
        mask.extend(std::iter::repeat(false).take(result.response_tokens.len()));
        last = Some(result);
    }
    let n = mask.iter().filter(|&&m| m).count();
    Trajectory {
        task_id: task.task_id.clone(),
        seed: 0,
        context,
        tokens,
        action_mask: mask,
        turn_spans: spans,
        sampling_logprobs: vec![0.0; n],
        ret: episode.reward(),
        truncated: !episode.terminal(),
        turns,
    }
}
