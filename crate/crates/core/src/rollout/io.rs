//! Line-delimited JSON trajectory records.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use super::{Trajectory, TurnRecord};
use crate::error::{Error, Result};
use crate::policy::Vocab;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub task_id: String,
    pub seed: u64,
    pub context: Vec<String>,
    pub tokens: Vec<String>,
    pub mask: Vec<bool>,
    pub turn_spans: Vec<(usize, usize)>,
    pub logprobs: Vec<f64>,
    #[serde(rename = "return")]
    pub ret: f64,
    pub truncated: bool,
    pub turns: Vec<TurnRecord>,
}

impl TrajectoryRecord {
    pub fn from_trajectory(t: &Trajectory, vocab: &Vocab) -> Result<Self> {
        Ok(Self {
            task_id: t.task_id.clone(),
            seed: t.seed,
            context: vocab.decode(&t.context)?,
            tokens: vocab.decode(&t.tokens)?,
            mask: t.action_mask.clone(),
            turn_spans: t.turn_spans.clone(),
            logprobs: t.sampling_logprobs.clone(),
            ret: t.ret,
            truncated: t.truncated,
            turns: t.turns.clone(),
        })
    }

    pub fn into_trajectory(self, vocab: &Vocab) -> Result<Trajectory> {
        let t = Trajectory {
            task_id: self.task_id,
            seed: self.seed,
            context: vocab.encode(&self.context)?,
            tokens: vocab.encode(&self.tokens)?,
            action_mask: self.mask,
            turn_spans: self.turn_spans,
            sampling_logprobs: self.logprobs,
            ret: self.ret,
            truncated: self.truncated,
            turns: self.turns,
        };
        t.validate().map_err(Error::Format)?;
        Ok(t)
    }
}

pub fn write_trajectories<'a, W: Write>(
    trajs: impl IntoIterator<Item = &'a Trajectory>,
    vocab: &Vocab,
    mut out: W,
) -> Result<()> {
    for t in trajs {
        serde_json::to_writer(&mut out, &TrajectoryRecord::from_trajectory(t, vocab)?)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_trajectories<R: BufRead>(input: R, vocab: &Vocab) -> Result<Vec<Trajectory>> {
    let mut out = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: TrajectoryRecord = serde_json::from_str(&line)
            .map_err(|e| Error::Format(format!("trajectory record on line {}: {e}", i + 1)))?;
        out.push(rec.into_trajectory(vocab)?);
    }
    Ok(out)
}
