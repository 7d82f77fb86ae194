#![allow(dead_code)]

pub mod world;

use std::sync::Arc;

use leaveout::policy::{sample_token, FeatureConfig, PolicyParams, Token, Vocab};
use leaveout::rollout::{Trajectory, TurnRecord};
use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    leaveout::seed::rng(seed)
}

/// Eight-symbol alphabet: stop, separator and six letters.
pub fn small_vocab() -> Arc<Vocab> {
    let symbols = ["<eos>", ";", "a", "b", "c", "d", "e", "f"].map(String::from).to_vec();
    Arc::new(Vocab::new(symbols, 0, 1).unwrap())
}

pub fn random_params(rng: &mut ChaCha8Rng, vocab: Arc<Vocab>, window: usize, scale: f64) -> PolicyParams {
    let features = FeatureConfig::new(window).unwrap();
    let shape = (vocab.len(), features.dim(vocab.len()));
    let w = Array2::from_shape_fn(shape, |_| rng.gen_range(-scale..scale));
    PolicyParams::from_weights(vocab, features, w).unwrap()
}

pub fn random_context(rng: &mut ChaCha8Rng, v: usize, max_len: usize) -> Vec<Token> {
    let n = rng.gen_range(0..=max_len);
    (0..n).map(|_| rng.gen_range(0..v)).collect()
}

/// A synthetic multi-turn trajectory sampled from `params`: each turn has
/// 1..=4 agent tokens followed by 1..=3 random environment tokens.
pub fn sampled_trajectory(params: &PolicyParams, rng: &mut ChaCha8Rng, turns: usize) -> Trajectory {
    let v = params.vocab_size();
    let context: Vec<Token> = (0..3).map(|_| rng.gen_range(0..v)).collect();
    let mut seq = context.clone();
    let (mut tokens, mut mask, mut spans, mut logps, mut records) = (vec![], vec![], vec![], vec![], vec![]);
    for _ in 0..turns {
        let start = tokens.len();
        for _ in 0..rng.gen_range(1..=4) {
            let lp = params.logprobs(&seq).unwrap();
            let tok = sample_token(&lp, 1.0, rng).unwrap();
            logps.push(lp[tok]);
            seq.push(tok);
            tokens.push(tok);
            mask.push(true);
        }
        spans.push((start, tokens.len()));
        for _ in 0..rng.gen_range(1..=3) {
            let tok = rng.gen_range(0..v);
            seq.push(tok);
            tokens.push(tok);
            mask.push(false);
        }
        records.push(TurnRecord::default());
    }
    let traj = Trajectory {
        task_id: "synthetic".into(),
        seed: 0,
        context,
        tokens,
        action_mask: mask,
        turn_spans: spans,
        sampling_logprobs: logps,
        ret: rng.gen_range(0.0..=1.0),
        truncated: false,
        turns: records,
    };
    traj.validate().unwrap();
    traj
}

/// Elementwise relative error of `analytic` against `numeric`, over entries
/// whose magnitude exceeds `floor`.
pub fn max_rel_error(analytic: &Array2<f64>, numeric: &Array2<f64>, floor: f64) -> f64 {
    analytic
        .iter()
        .zip(numeric.iter())
        .filter(|(a, n)| a.abs().max(n.abs()) > floor)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()))
        .fold(0.0, f64::max)
}

/// Central finite differences of `f` at `params` with step `h`.
pub fn finite_difference(params: &PolicyParams, h: f64, mut f: impl FnMut(&PolicyParams) -> f64) -> Array2<f64> {
    let mut out = Array2::zeros(params.weights.dim());
    let mut p = params.clone();
    for idx in 0..p.weights.len() {
        let (r, c) = (idx / p.weights.ncols(), idx % p.weights.ncols());
        let w = p.weights[[r, c]];
        p.weights[[r, c]] = w + h;
        let up = f(&p);
        p.weights[[r, c]] = w - h;
        let down = f(&p);
        p.weights[[r, c]] = w;
        out[[r, c]] = (up - down) / (2.0 * h);
    }
    out
}

pub fn max_abs_diff(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}
