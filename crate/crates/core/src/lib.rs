//! Prefix-scoring discriminators for adversarial sequence generation.
//!
//! A discriminator that scores every prefix `X[..t]` of a sequence, not only
//! the full sequence, gives the generator one feedback signal per cut point.
//! This crate implements that mechanism for two training paths:
//!
//! * [`seg_rl`]: policy-gradient training with Monte-Carlo rollout rewards,
//!   direct per-prefix rewards, or the two-cut simplification;
//! * [`seg_relgan`]: Gumbel-softmax relaxed training with a relativistic
//!   multi-head loss summed over cut points.
//!
//! Both are benchmarked by [`experiment`] on a synthetic LSTM oracle
//! ([`oracle`]) or on real text, with BLEU and NLL metrics from [`metrics`].

pub mod autodiff;
pub mod checkpoint;
pub mod config;
pub mod corpus;
pub mod discriminator;
pub mod error;
pub mod experiment;
pub mod generator;
pub mod lm;
pub mod metrics;
pub mod optim;
pub mod oracle;
pub mod seg_relgan;
pub mod seg_rl;
pub mod training;

pub use error::{Error, Result};

#[cfg(doctest)]
mod guide {
    #[doc = include_str!("../../../book/src/introduction.md")]
    struct Introduction;
    #[doc = include_str!("../../../book/src/prefix-scoring.md")]
    struct PrefixScoring;
    #[doc = include_str!("../../../book/src/rewards.md")]
    struct Rewards;
    #[doc = include_str!("../../../book/src/relaxed.md")]
    struct Relaxed;
    #[doc = include_str!("../../../book/src/metrics.md")]
    struct Metrics;
    #[doc = include_str!("../../../book/src/experiments.md")]
    struct Experiments;
}
