//! Leave-one-out PPO for multi-turn, token-level agents.
//!
//! The crate is organised bottom-up:
//!
//! - [`policy`]: a linear-softmax autoregressive token policy with exact
//!   score-function gradients.
//! - [`miniworld`]: a deterministic multi-app environment with unit-test
//!   rewards.
//! - [`rollout`]: trajectories, importance ratios and parallel collection.
//! - [`advantage`]: leave-one-out, standardized and GAE advantages.
//! - [`losses`]: clipped surrogate objectives, REINFORCE and KL penalties.
//! - [`trainer`]: the outer training loop and its baselines.
//! - [`metrics`]: behaviour analytics over collected rollouts.

pub mod advantage;
pub mod error;
pub mod losses;
pub mod metrics;
pub mod miniworld;
pub mod policy;
pub mod rollout;
pub mod seed;
pub mod trainer;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/policy.md")]
    mod policy {}
    #[doc = include_str!("../../../book/src/miniworld.md")]
    mod miniworld {}
    #[doc = include_str!("../../../book/src/rollouts.md")]
    mod rollouts {}
    #[doc = include_str!("../../../book/src/advantages.md")]
    mod advantages {}
    #[doc = include_str!("../../../book/src/losses.md")]
    mod losses {}
    #[doc = include_str!("../../../book/src/training.md")]
    mod training {}
    #[doc = include_str!("../../../book/src/metrics.md")]
    mod metrics {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
