//! Policy-gradient training path.
//!
//! Rewards `Q(Y[..t-1], y_t)` for every sampled token come from one of three
//! estimators:
//!
//! * [`rewards_baseline`]: the mean full-sequence score of `N` Monte-Carlo
//!   completions of `Y[..t]` (direct score at `t = T`);
//! * [`rewards_full_prefix`]: the discriminator's score of the prefix
//!   `Y[..t]` itself, with no rollouts;
//! * [`rewards_two_segment`]: rollouts to the middle cut for `t < t_mid`,
//!   rollouts to `T` for `t_mid < t < T`, and direct prefix scores at the two
//!   cuts.
//!
//! The generator then ascends the REINFORCE surrogate
//! `Σ_t log G(y_t | Y[..t-1]) · Q_t` with the rewards held constant.

mod losses;
mod train;

pub use losses::{
    bce_cut_loss, bce_pair_loss, disc_loss_cuts, disc_loss_full_prefix, disc_loss_seqgan,
    disc_loss_two_segment,
};
pub use train::train_seqgan;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::autodiff::{Matrix, Tape};
use crate::corpus::{SegmentPlan, Sequence};
use crate::discriminator::DiscriminatorModel;
use crate::error::{Error, Result};
use crate::generator::{GeneratorModel, Phase};

/// Which reward estimator (and matching discriminator loss) a run uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Variant {
    /// Full-sequence discriminator, Monte-Carlo rewards.
    Baseline,
    /// Every prefix scored directly.
    FullPrefix,
    /// Two cuts: the average length and the full length.
    TwoSegment,
}

impl Variant {
    pub fn as_str(&self) -> &'static str {
        match self {
            Variant::Baseline => "baseline",
            Variant::FullPrefix => "full_prefix",
            Variant::TwoSegment => "two_segment",
        }
    }

    /// Cut points scored by this variant's discriminator loss.
    pub fn cuts(&self, plan: SegmentPlan) -> Vec<usize> {
        match self {
            Variant::Baseline => vec![plan.t_full],
            Variant::FullPrefix => (1..=plan.t_full).collect(),
            Variant::TwoSegment => vec![plan.t_mid, plan.t_full],
        }
    }
}

impl std::str::FromStr for Variant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "baseline" => Ok(Variant::Baseline),
            "full_prefix" => Ok(Variant::FullPrefix),
            "two_segment" => Ok(Variant::TwoSegment),
            other => Err(format!("unknown variant `{other}` (baseline, full_prefix, two_segment)")),
        }
    }
}

/// Per-(sample, timestep) rewards, `B × T`.
#[derive(Debug, Clone, PartialEq)]
pub struct RewardMatrix {
    pub values: Matrix,
    pub variant: Variant,
}

impl RewardMatrix {
    /// Column `t` (1-based) as a vector.
    pub fn column(&self, t: usize) -> Vec<f64> {
        self.values.column(t - 1).to_vec()
    }

    /// Copy with each column's batch mean subtracted.
    pub fn with_mean_baseline(&self) -> RewardMatrix {
        let mean = self.values.mean_axis(ndarray::Axis(0)).expect("nonempty batch");
        RewardMatrix {
            values: &self.values - &mean,
            variant: self.variant,
        }
    }
}

/// Frozen copy of the generator used to complete prefixes.
#[derive(Debug, Clone)]
pub struct RolloutPolicy {
    model: GeneratorModel,
}

impl RolloutPolicy {
    pub fn from_generator(gen: &GeneratorModel) -> Self {
        RolloutPolicy { model: gen.clone() }
    }

    pub fn model(&self) -> &GeneratorModel {
        &self.model
    }

    fn complete<R: Rng + ?Sized>(&self, prefix: &[usize], target: usize, n: usize, rng: &mut R) -> Vec<Vec<usize>> {
        self.model.lm().complete(prefix, n, target, rng).0
    }
}

/// `n` ancestral completions of `prefix` to exactly `target_len` tokens.
pub fn rollout<R: Rng + ?Sized>(
    policy: &RolloutPolicy,
    prefix: &[usize],
    target_len: usize,
    n: usize,
    rng: &mut R,
) -> Result<Vec<Vec<usize>>> {
    if target_len <= prefix.len() {
        return Err(Error::RolloutTarget {
            prefix: prefix.len(),
            target: target_len,
        });
    }
    if n == 0 {
        return Err(Error::NoRollouts);
    }
    Ok(policy.complete(prefix, target_len, n, rng))
}

/// Mean over heads of the output-mode score of each row.
fn row_rewards(disc: &DiscriminatorModel, rows: &[Vec<usize>]) -> Vec<f64> {
    let scores = disc.apply_mode(&disc.logits_of_rows(rows));
    scores
        .rows()
        .into_iter()
        .map(|r| r.sum() / r.len() as f64)
        .collect()
}

fn pad_to(mut row: Vec<usize>, len: usize, pad: usize) -> Vec<usize> {
    row.resize(len, pad);
    row
}

/// One Monte-Carlo reward request: complete `Y[..t]` to `target`, score at
/// cut `target`.
#[derive(Clone, Copy)]
struct McColumn {
    t: usize,
    target: usize,
}

/// Fills the requested columns of `values` by rollouts. Each sample gets its
/// own RNG stream seeded from `rng`, so results do not depend on scheduling.
fn fill_mc_columns<R: Rng + ?Sized>(
    values: &mut Matrix,
    disc: &DiscriminatorModel,
    policy: &RolloutPolicy,
    batch: &[Sequence],
    columns: &[McColumn],
    n: usize,
    rng: &mut R,
) {
    if columns.is_empty() {
        return;
    }
    let len = disc.max_len();
    let pad = disc.pad_id();
    let seeds: Vec<u64> = batch.iter().map(|_| rng.random()).collect();
    let rows: Vec<Vec<Vec<usize>>> = batch
        .par_iter()
        .zip(seeds.par_iter())
        .map(|(seq, &seed)| {
            let mut row_rng = ChaCha8Rng::seed_from_u64(seed);
            columns
                .iter()
                .flat_map(|col| {
                    policy
                        .complete(&seq.ids()[..col.t], col.target, n, &mut row_rng)
                        .into_iter()
                        .map(|r| pad_to(r, len, pad))
                        .collect::<Vec<_>>()
                })
                .collect()
        })
        .collect();
    let flat: Vec<Vec<usize>> = rows.into_iter().flatten().collect();
    let rewards = row_rewards(disc, &flat);
    let per_sample = columns.len() * n;
    for b in 0..batch.len() {
        for (c, col) in columns.iter().enumerate() {
            let start = b * per_sample + c * n;
            let mean = rewards[start..start + n].iter().sum::<f64>() / n as f64;
            values[[b, col.t - 1]] = mean;
        }
    }
}

fn fill_direct_columns(values: &mut Matrix, disc: &DiscriminatorModel, batch: &[Sequence], cuts: &[usize]) {
    let pad = disc.pad_id();
    let rows: Vec<Vec<usize>> = cuts
        .iter()
        .flat_map(|&t| batch.iter().map(move |s| s.masked_after(t, pad)))
        .collect();
    let rewards = row_rewards(disc, &rows);
    for (c, &t) in cuts.iter().enumerate() {
        for b in 0..batch.len() {
            values[[b, t - 1]] = rewards[c * batch.len() + b];
        }
    }
}

fn check_batch(disc: &DiscriminatorModel, batch: &[Sequence]) -> Result<()> {
    if batch.is_empty() {
        return Err(Error::BatchMismatch("empty batch".into()));
    }
    if batch.iter().any(|s| s.max_len() != disc.max_len()) {
        return Err(Error::BatchMismatch("sequence length differs from discriminator".into()));
    }
    Ok(())
}

/// Monte-Carlo rewards: `Q_t` is the mean full-sequence score of `n`
/// completions of `Y[..t]`, and `Q_T` the direct score. Uses `(T-1)·n + 1`
/// discriminator evaluations per sample.
pub fn rewards_baseline<R: Rng + ?Sized>(
    disc: &DiscriminatorModel,
    policy: &RolloutPolicy,
    batch: &[Sequence],
    n: usize,
    rng: &mut R,
) -> Result<RewardMatrix> {
    if n == 0 {
        return Err(Error::NoRollouts);
    }
    check_batch(disc, batch)?;
    let len = disc.max_len();
    let mut values = Matrix::zeros((batch.len(), len));
    let columns: Vec<McColumn> = (1..len).map(|t| McColumn { t, target: len }).collect();
    fill_mc_columns(&mut values, disc, policy, batch, &columns, n, rng);
    fill_direct_columns(&mut values, disc, batch, &[len]);
    Ok(RewardMatrix {
        values,
        variant: Variant::Baseline,
    })
}

/// Direct prefix rewards `Q_t = D(Y[..t])`: `T` evaluations per sample and
/// no rollouts.
pub fn rewards_full_prefix(disc: &DiscriminatorModel, batch: &[Sequence]) -> Result<RewardMatrix> {
    check_batch(disc, batch)?;
    let len = disc.max_len();
    let mut values = Matrix::zeros((batch.len(), len));
    let cuts: Vec<usize> = (1..=len).collect();
    fill_direct_columns(&mut values, disc, batch, &cuts);
    Ok(RewardMatrix {
        values,
        variant: Variant::FullPrefix,
    })
}

/// Two-cut rewards: rollouts to `t_mid` scored at `t_mid` for `t < t_mid`,
/// rollouts to `T` scored in full for `t_mid < t < T`, and the direct prefix
/// score at `t ∈ {t_mid, T}`.
pub fn rewards_two_segment<R: Rng + ?Sized>(
    disc: &DiscriminatorModel,
    policy: &RolloutPolicy,
    batch: &[Sequence],
    plan: SegmentPlan,
    n: usize,
    rng: &mut R,
) -> Result<RewardMatrix> {
    if n == 0 {
        return Err(Error::NoRollouts);
    }
    check_batch(disc, batch)?;
    let len = disc.max_len();
    if plan.t_full != len || plan.t_mid == 0 || plan.t_mid >= len {
        return Err(Error::BatchMismatch(format!(
            "segment plan {plan:?} does not fit length {len}"
        )));
    }
    let mut values = Matrix::zeros((batch.len(), len));
    let columns: Vec<McColumn> = (1..len)
        .filter(|&t| t != plan.t_mid)
        .map(|t| McColumn {
            t,
            target: if t < plan.t_mid { plan.t_mid } else { len },
        })
        .collect();
    fill_mc_columns(&mut values, disc, policy, batch, &columns, n, rng);
    fill_direct_columns(&mut values, disc, batch, &[plan.t_mid, len]);
    Ok(RewardMatrix {
        values,
        variant: Variant::TwoSegment,
    })
}

/// Gradient (ascent direction) and value of the batch-mean REINFORCE
/// surrogate `Σ_t log G(y_t | Y[..t-1]) · Q_t`.
pub fn pg_gradient(gen: &GeneratorModel, batch: &[Sequence], rewards: &RewardMatrix) -> (f64, Vec<Matrix>) {
    assert_eq!(rewards.values.nrows(), batch.len());
    let mut tape = Tape::new();
    let lp = gen.logprob_matrix(&mut tape, batch);
    let q = tape.leaf(rewards.values.clone());
    let weighted = tape.mul(lp, q);
    let total = tape.sum(weighted);
    let objective = tape.scale(total, 1.0 / batch.len() as f64);
    let grads = tape.backward(objective).for_store(gen.params());
    (tape.scalar(objective), grads)
}

/// One ascent step on the REINFORCE surrogate. Returns the objective value
/// before the step.
pub fn pg_update(gen: &mut GeneratorModel, batch: &[Sequence], rewards: &RewardMatrix, lr: f64) -> Result<f64> {
    let (objective, grads) = pg_gradient(gen, batch, rewards);
    if !objective.is_finite() {
        return Err(Error::NonFinite("policy-gradient objective".into()));
    }
    let descent: Vec<Matrix> = grads.into_iter().map(|g| -g).collect();
    gen.apply_gradients(descent, lr, Phase::Adversarial)?;
    Ok(objective)
}
