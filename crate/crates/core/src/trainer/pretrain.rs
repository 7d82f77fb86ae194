//! Supervised training on agent tokens: behaviour cloning and the
//! fine-tuning step of the rejection-sampling baselines.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::miniworld::Task;
use crate::policy::{add_score, FeatureConfig, PolicyParams, Token};
use crate::rollout::Trajectory;

use super::demo::{demo_corpus, DemoNoise};
use super::eval::evaluate_policy;

/// Agent-token examples with precomputed features. Features do not depend on
/// the weights, so they are extracted once.
#[derive(Debug, Clone, Default)]
pub struct TokenDataset {
    examples: Vec<(Vec<usize>, Token)>,
}

impl TokenDataset {
    pub fn new(trajectories: &[Trajectory], features: &FeatureConfig, vocab_size: usize) -> Self {
        let mut examples = Vec::new();
        for t in trajectories {
            let _ = t.for_each_agent_step(|_, history, token| {
                examples.push((features.active(history, vocab_size), token));
                Ok::<_, ()>(())
            });
        }
        Self { examples }
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    /// Mean log-likelihood, and its gradient when `grad` is given.
    pub fn log_likelihood(&self, params: &PolicyParams, mut grad: Option<&mut Array2<f64>>) -> Result<f64> {
        if self.examples.is_empty() {
            return Ok(0.0);
        }
        let scale = 1.0 / self.examples.len() as f64;
        let mut total = 0.0;
        for (active, token) in &self.examples {
            let lp = params.logprobs_active(active)?;
            total += lp[*token];
            if let Some(g) = grad.as_deref_mut() {
                add_score(g, active, &lp, *token, scale);
            }
        }
        Ok(total * scale)
    }

    /// Full-batch gradient ascent on the mean log-likelihood. Returns the
    /// negative log-likelihood before each epoch and after the last one.
    pub fn fit(&self, params: &mut PolicyParams, epochs: usize, lr: f64) -> Result<Vec<f64>> {
        let mut losses = Vec::with_capacity(epochs + 1);
        if self.examples.is_empty() {
            return Ok(losses);
        }
        let mut grad = Array2::zeros(params.weights.dim());
        for _ in 0..epochs {
            grad.fill(0.0);
            losses.push(-self.log_likelihood(params, Some(&mut grad))?);
            params.weights.scaled_add(lr, &grad);
        }
        losses.push(-self.log_likelihood(params, None)?);
        if losses.iter().any(|l| !l.is_finite()) {
            return Err(Error::Numerical("supervised loss diverged".into()));
        }
        Ok(losses)
    }
}

/// Maximizes the mean agent-token log-likelihood of `demos`, starting from
/// `params`. Zero demos leave the parameters unchanged.
pub fn clone_pretrain(params: &PolicyParams, demos: &[Trajectory], epochs: usize, lr: f64) -> Result<(PolicyParams, Vec<f64>)> {
    let data = TokenDataset::new(demos, &params.features, params.vocab_size());
    let mut out = params.clone();
    let losses = data.fit(&mut out, epochs, lr)?;
    Ok((out, losses))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PretrainConfig {
    pub window: usize,
    pub noise: DemoNoise,
    /// Multipliers applied to `noise`, tried in order until the base policy
    /// lands in the band.
    pub noise_scales: Vec<f64>,
    pub demos_per_task: usize,
    pub epochs: usize,
    pub lr: f64,
    pub band: (f64, f64),
    pub seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            window: 20,
            noise: DemoNoise { docs_prob: 0.3, skip_login_prob: 0.3, typo_prob: 0.3, quit_early_prob: 0.7 },
            noise_scales: vec![1.0, 1.2, 0.8, 1.4, 0.6, 1.7, 0.4],
            demos_per_task: 4,
            epochs: 1000,
            lr: 2.0,
            band: (0.2, 0.5),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PretrainOutcome {
    pub params: PolicyParams,
    pub noise: DemoNoise,
    pub dev_tgc: f64,
    /// `(noise scale, dev TGC)` for every attempt.
    pub attempts: Vec<(f64, f64)>,
}

/// Clones the demonstrator on `train` tasks, adjusting demo noise until the
/// greedy dev TGC falls inside the configured band.
pub fn pretrain_in_band(
    config: &PretrainConfig,
    train: &[Task],
    dev: &[Task],
    turn_limit_train: usize,
    turn_limit_eval: usize,
) -> Result<PretrainOutcome> {
    if train.is_empty() || dev.is_empty() {
        return Err(Error::EmptyDataset("pretraining needs train and dev tasks".into()));
    }
    let features = FeatureConfig::new(config.window)?;
    let init = PolicyParams::zeros(crate::miniworld::vocab::vocab(), features);
    let mut attempts = Vec::new();
    for &scale in &config.noise_scales {
        let noise = config.noise.scaled(scale);
        let demos = demo_corpus(train, noise, config.demos_per_task, turn_limit_train, config.seed);
        let (params, _) = clone_pretrain(&init, &demos, config.epochs, config.lr)?;
        let report = evaluate_policy(&params, dev, 0.0, turn_limit_eval, config.seed)?;
        log::info!("pretrain noise scale {scale}: dev TGC {:.3}", report.tgc);
        attempts.push((scale, report.tgc));
        if report.tgc >= config.band.0 && report.tgc <= config.band.1 {
            return Ok(PretrainOutcome { params, noise, dev_tgc: report.tgc, attempts });
        }
    }
    Err(Error::Config(format!(
        "no demo noise level put the base dev TGC in [{}, {}] (tried {:?}); adjust the noise settings",
        config.band.0, config.band.1, attempts
    )))
}
