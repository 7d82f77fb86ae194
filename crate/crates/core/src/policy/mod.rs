//! Linear-softmax autoregressive token policy.
//!
//! The next-token distribution is `softmax(W · φ(context))`, where `φ` is the
//! concatenated one-hot encoding of the last `m` tokens plus a bias entry.
//! Because the features are one-hot, only `m + 1` columns of `W` are ever
//! touched per prediction, and both the forward pass and the score function
//! `∇ log p(y | c) = (e_y − p) ⊗ φ(c)` are cheap and exact.

mod io;

pub use io::{read_params, write_params, write_params_text, PARAMS_MAGIC, PARAMS_VERSION};

use std::collections::HashMap;
use std::sync::Arc;

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Index of a symbol in a [`Vocab`].
pub type Token = usize;

/// Ordered token alphabet with designated stop and separator symbols.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    symbols: Vec<String>,
    index: HashMap<String, Token>,
    stop: Token,
    separator: Token,
}

impl Vocab {
    pub const MIN_SIZE: usize = 8;

    pub fn new(symbols: Vec<String>, stop: Token, separator: Token) -> Result<Self> {
        if symbols.len() < Self::MIN_SIZE {
            return Err(Error::MalformedInput(format!(
                "vocabulary needs at least {} symbols, got {}",
                Self::MIN_SIZE,
                symbols.len()
            )));
        }
        if stop >= symbols.len() || separator >= symbols.len() {
            return Err(Error::MalformedInput("stop or separator index out of range".into()));
        }
        let mut index = HashMap::with_capacity(symbols.len());
        for (i, s) in symbols.iter().enumerate() {
            if index.insert(s.clone(), i).is_some() {
                return Err(Error::MalformedInput(format!("duplicate symbol `{s}`")));
            }
        }
        Ok(Self { symbols, index, stop, separator })
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    pub fn stop(&self) -> Token {
        self.stop
    }

    pub fn separator(&self) -> Token {
        self.separator
    }

    pub fn symbol(&self, token: Token) -> Option<&str> {
        self.symbols.get(token).map(String::as_str)
    }

    pub fn symbols(&self) -> &[String] {
        &self.symbols
    }

    pub fn lookup(&self, symbol: &str) -> Option<Token> {
        self.index.get(symbol).copied()
    }

    pub fn encode<S: AsRef<str>>(&self, symbols: &[S]) -> Result<Vec<Token>> {
        symbols
            .iter()
            .map(|s| {
                self.lookup(s.as_ref())
                    .ok_or_else(|| Error::MalformedInput(format!("unknown symbol `{}`", s.as_ref())))
            })
            .collect()
    }

    /// Parses whitespace-separated symbols.
    pub fn parse(&self, text: &str) -> Result<Vec<Token>> {
        let parts: Vec<&str> = text.split_whitespace().collect();
        self.encode(&parts)
    }

    pub fn decode(&self, tokens: &[Token]) -> Result<Vec<String>> {
        tokens
            .iter()
            .map(|&t| {
                self.symbol(t)
                    .map(str::to_owned)
                    .ok_or_else(|| Error::MalformedInput(format!("token {t} outside vocabulary")))
            })
            .collect()
    }

    pub fn render(&self, tokens: &[Token]) -> String {
        tokens
            .iter()
            .map(|&t| self.symbol(t).unwrap_or("<?>"))
            .collect::<Vec<_>>()
            .join(" ")
    }

    fn check(&self, tokens: &[Token]) -> Result<()> {
        match tokens.iter().find(|&&t| t >= self.len()) {
            Some(t) => Err(Error::MalformedInput(format!(
                "token {t} outside vocabulary of size {}",
                self.len()
            ))),
            None => Ok(()),
        }
    }
}

/// Sliding-window feature layout.
///
/// Slot `k` (for `k = 0..window`) holds the one-hot encoding of the token at
/// offset `-(k + 1)` from the prediction point, so the most recent token is in
/// slot 0. The final entry is the always-on bias.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureConfig {
    pub window: usize,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self { window: 4 }
    }
}

impl FeatureConfig {
    pub fn new(window: usize) -> Result<Self> {
        if window == 0 {
            return Err(Error::Config("feature window must be at least 1".into()));
        }
        Ok(Self { window })
    }

    pub fn dim(&self, vocab_size: usize) -> usize {
        self.window * vocab_size + 1
    }

    pub fn bias_index(&self, vocab_size: usize) -> usize {
        self.window * vocab_size
    }

    /// Indices of the nonzero (unit) entries of `φ(context)`, bias last.
    pub fn active(&self, context: &[Token], vocab_size: usize) -> Vec<usize> {
        let n = context.len().min(self.window);
        let mut out = Vec::with_capacity(n + 1);
        for k in 0..n {
            out.push(k * vocab_size + context[context.len() - 1 - k]);
        }
        out.push(self.bias_index(vocab_size));
        out
    }
}

/// Dense feature vector `φ(context)` of length `m·V + 1`.
pub fn featurize(context: &[Token], features: &FeatureConfig, vocab: &Vocab) -> Result<Vec<f64>> {
    vocab.check(context)?;
    let mut phi = vec![0.0; features.dim(vocab.len())];
    for i in features.active(context, vocab.len()) {
        phi[i] = 1.0;
    }
    Ok(phi)
}

/// Logit weights of the policy, shape `V × d`.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyParams {
    pub weights: Array2<f64>,
    pub features: FeatureConfig,
    pub vocab: Arc<Vocab>,
}

impl PolicyParams {
    /// The uniform policy.
    pub fn zeros(vocab: Arc<Vocab>, features: FeatureConfig) -> Self {
        let shape = (vocab.len(), features.dim(vocab.len()));
        Self { weights: Array2::zeros(shape), features, vocab }
    }

    pub fn from_weights(vocab: Arc<Vocab>, features: FeatureConfig, weights: Array2<f64>) -> Result<Self> {
        let expected = (vocab.len(), features.dim(vocab.len()));
        if weights.dim() != expected {
            return Err(Error::MalformedInput(format!(
                "weight shape {:?} does not match vocab/features {:?}",
                weights.dim(),
                expected
            )));
        }
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::Numerical("non-finite policy weight".into()));
        }
        Ok(Self { weights, features, vocab })
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    pub fn dim(&self) -> usize {
        self.features.dim(self.vocab.len())
    }

    pub fn active(&self, context: &[Token]) -> Vec<usize> {
        self.features.active(context, self.vocab.len())
    }

    /// Log-probabilities of the next token, given precomputed active features.
    pub fn logprobs_active(&self, active: &[usize]) -> Result<Vec<f64>> {
        let v = self.vocab.len();
        let mut logits = vec![0.0; v];
        for (y, z) in logits.iter_mut().enumerate() {
            let row = self.weights.row(y);
            *z = active.iter().map(|&j| row[j]).sum();
        }
        log_softmax(&mut logits)?;
        Ok(logits)
    }

    /// Log-softmax of `W · φ(context)`.
    pub fn logprobs(&self, context: &[Token]) -> Result<Vec<f64>> {
        let n = context.len().min(self.features.window);
        self.vocab.check(&context[context.len() - n..])?;
        self.logprobs_active(&self.active(context))
    }

    pub fn logprob(&self, context: &[Token], token: Token) -> Result<f64> {
        let lp = self.logprobs(context)?;
        lp.get(token)
            .copied()
            .ok_or_else(|| Error::MalformedInput(format!("token {token} outside vocabulary")))
    }

    /// `∇_W log p(token | context)` as a dense `V × d` matrix.
    pub fn grad_logprob(&self, context: &[Token], token: Token) -> Result<Array2<f64>> {
        self.vocab.check(&[token])?;
        let active = self.active(context);
        let lp = self.logprobs(context)?;
        let mut grad = Array2::zeros(self.weights.dim());
        add_score(&mut grad, &active, &lp, token, 1.0);
        Ok(grad)
    }
}

/// Adds `scale · (e_token − softmax) ⊗ φ` into `grad`, where `φ` is given by
/// its active indices and the softmax by its log-probabilities.
pub fn add_score(grad: &mut Array2<f64>, active: &[usize], logprobs: &[f64], token: Token, scale: f64) {
    if scale == 0.0 {
        return;
    }
    for (y, lp) in logprobs.iter().enumerate() {
        let indicator = if y == token { 1.0 } else { 0.0 };
        let coef = scale * (indicator - lp.exp());
        let mut row = grad.row_mut(y);
        for &j in active {
            row[j] += coef;
        }
    }
}

/// In-place log-softmax with max subtraction.
pub fn log_softmax(logits: &mut [f64]) -> Result<()> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Err(Error::Numerical("non-finite logits".into()));
    }
    let lse = max + logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
    for z in logits.iter_mut() {
        *z -= lse;
    }
    Ok(())
}

/// Draws a token from a log-probability vector.
///
/// Temperature 0 is greedy decoding with ties going to the lowest index;
/// positive temperatures sample from `softmax(logprobs / t)`.
pub fn sample_token<R: Rng + ?Sized>(logprobs: &[f64], temperature: f64, rng: &mut R) -> Result<Token> {
    if logprobs.is_empty() || logprobs.iter().any(|x| x.is_nan()) {
        return Err(Error::MalformedInput("empty or NaN distribution".into()));
    }
    if !(temperature >= 0.0) || !temperature.is_finite() {
        return Err(Error::MalformedInput(format!("invalid temperature {temperature}")));
    }
    if temperature == 0.0 {
        let mut best = 0;
        for (i, &lp) in logprobs.iter().enumerate() {
            if lp > logprobs[best] {
                best = i;
            }
        }
        return Ok(best);
    }
    let mut scaled: Vec<f64> = logprobs.iter().map(|lp| lp / temperature).collect();
    log_softmax(&mut scaled)?;
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, lp) in scaled.iter().enumerate() {
        acc += lp.exp();
        if u < acc {
            return Ok(i);
        }
    }
    // Rounding left the cumulative sum just below 1; fall back to the last
    // token with nonzero mass.
    Ok(scaled.iter().rposition(|lp| lp.is_finite()).unwrap_or(0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;

    fn vocab(n: usize) -> Arc<Vocab> {
        let symbols = (0..n).map(|i| format!("t{i}")).collect();
        Arc::new(Vocab::new(symbols, 0, 1).unwrap())
    }

    fn random_params(v: usize, m: usize, s: u64) -> PolicyParams {
        let mut rng = seed::rng(s);
        let mut p = PolicyParams::zeros(vocab(v), FeatureConfig::new(m).unwrap());
        p.weights.mapv_inplace(|_| rng.gen_range(-1.5..1.5));
        p
    }

    #[test]
    fn vocab_rejects_duplicates_and_small_alphabets() {
        let dup = vec!["a", "b", "c", "d", "e", "f", "g", "a"].into_iter().map(String::from).collect();
        assert!(Vocab::new(dup, 0, 1).is_err());
        let small = vec!["a", "b"].into_iter().map(String::from).collect();
        assert!(Vocab::new(small, 0, 1).is_err());
        let ok: Vec<String> = (0..8).map(|i| i.to_string()).collect();
        assert!(Vocab::new(ok.clone(), 8, 1).is_err());
        assert!(Vocab::new(ok, 7, 1).is_ok());
    }

    #[test]
    fn featurize_empty_context_is_bias_only() {
        let phi = featurize(&[], &FeatureConfig::new(4).unwrap(), &vocab(8)).unwrap();
        assert_eq!(phi.len(), 33);
        assert_eq!(phi.iter().sum::<f64>(), 1.0);
        assert_eq!(phi[32], 1.0);
    }

    #[test]
    fn featurize_single_token_window() {
        let phi = featurize(&[3], &FeatureConfig::new(2).unwrap(), &vocab(8)).unwrap();
        // V = 8 here; the m=2, V=4 golden layout lives in the integration tests.
        assert_eq!(phi.len(), 17);
        assert_eq!(phi[3], 1.0);
        assert_eq!(phi[16], 1.0);
        assert_eq!(phi.iter().sum::<f64>(), 2.0);
    }

    #[test]
    fn featurize_rejects_bad_tokens() {
        let err = featurize(&[1, 99], &FeatureConfig::default(), &vocab(8)).unwrap_err();
        assert!(matches!(err, Error::MalformedInput(_)));
    }

    #[test]
    fn zero_params_give_uniform_logprobs() {
        let p = PolicyParams::zeros(vocab(10), FeatureConfig::default());
        for lp in p.logprobs(&[1, 2, 3, 4, 5]).unwrap() {
            assert!((lp + (10f64).ln()).abs() < 1e-15);
        }
    }

    #[test]
    fn equal_logits_are_uniform_after_shift() {
        let v = vocab(8);
        let mut p = PolicyParams::zeros(v, FeatureConfig::new(1).unwrap());
        // Bias column all ones: logits [1, 1, ..., 1].
        let bias = p.features.bias_index(8);
        p.weights.column_mut(bias).fill(1.0);
        for lp in p.logprobs(&[]).unwrap() {
            assert!((lp + (8f64).ln()).abs() < 1e-15);
        }
    }

    #[test]
    fn logprobs_flag_nonfinite_logits() {
        let mut p = PolicyParams::zeros(vocab(8), FeatureConfig::new(1).unwrap());
        p.weights[[0, 8]] = f64::INFINITY;
        assert!(matches!(p.logprobs(&[]), Err(Error::Numerical(_))));
    }

    #[test]
    fn greedy_sampling_takes_lowest_index_maximum() {
        let mut rng = seed::rng(0);
        let mut dist = vec![-3.0; 8];
        dist[5] = -0.1;
        assert_eq!(sample_token(&dist, 0.0, &mut rng).unwrap(), 5);
        let mut tie = vec![-3.0; 8];
        tie[2] = -0.5;
        tie[6] = -0.5;
        assert_eq!(sample_token(&tie, 0.0, &mut rng).unwrap(), 2);
    }

    #[test]
    fn sampling_is_seed_deterministic() {
        let p = random_params(12, 3, 4);
        let lp = p.logprobs(&[1, 4, 7]).unwrap();
        let draw = |s| {
            let mut rng = seed::rng(s);
            (0..50).map(|_| sample_token(&lp, 0.7, &mut rng).unwrap()).collect::<Vec<_>>()
        };
        assert_eq!(draw(11), draw(11));
        assert_ne!(draw(11), draw(12));
    }

    #[test]
    fn uniform_score_closed_form() {
        let v = 8;
        let p = PolicyParams::zeros(vocab(v), FeatureConfig::new(2).unwrap());
        let ctx = [4, 6];
        let phi = featurize(&ctx, &p.features, &p.vocab).unwrap();
        let g = p.grad_logprob(&ctx, 3).unwrap();
        for y in 0..v {
            let coef = if y == 3 { 1.0 - 1.0 / v as f64 } else { -1.0 / v as f64 };
            for (j, &f) in phi.iter().enumerate() {
                assert!((g[[y, j]] - coef * f).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn expected_score_is_zero() {
        let p = random_params(9, 3, 21);
        let ctx = [2, 8, 1, 1];
        let lp = p.logprobs(&ctx).unwrap();
        let mut total = Array2::<f64>::zeros(p.weights.dim());
        for (y, l) in lp.iter().enumerate() {
            total.scaled_add(l.exp(), &p.grad_logprob(&ctx, y).unwrap());
        }
        assert!(total.iter().all(|x| x.abs() < 1e-10));
    }
}
