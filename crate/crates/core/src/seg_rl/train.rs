use crate::autodiff::Tape;
use crate::config::TrainConfig;
use crate::corpus::{SegmentPlan, Sequence};
use crate::discriminator::{disc_update, BoundDiscriminator, DiscriminatorModel, OutputMode};
use crate::error::Result;
use crate::generator::GeneratorModel;
use crate::training::{
    evaluate, init_models, pretrain_generator, real_batch, seeded, Clock, EpochPhase, Stream, TrainData,
    TrainOutcome,
};

use super::{
    disc_loss_cuts, pg_update, rewards_baseline, rewards_full_prefix, rewards_two_segment, RewardMatrix,
    RolloutPolicy, Variant,
};

fn rewards(
    cfg: &TrainConfig,
    variant: Variant,
    plan: SegmentPlan,
    disc: &DiscriminatorModel,
    gen: &GeneratorModel,
    batch: &[Sequence],
    rng: &mut rand_chacha::ChaCha8Rng,
) -> Result<RewardMatrix> {
    let policy = RolloutPolicy::from_generator(gen);
    let r = match variant {
        Variant::Baseline => rewards_baseline(disc, &policy, batch, cfg.rollouts, rng)?,
        Variant::FullPrefix => rewards_full_prefix(disc, batch)?,
        Variant::TwoSegment => rewards_two_segment(disc, &policy, batch, plan, cfg.rollouts, rng)?,
    };
    Ok(if cfg.reward_baseline { r.with_mean_baseline() } else { r })
}

fn d_step(
    cfg: &TrainConfig,
    data: &TrainData,
    cuts: &[usize],
    gen: &GeneratorModel,
    disc: &mut DiscriminatorModel,
    rng: &mut rand_chacha::ChaCha8Rng,
) -> Result<f64> {
    let real = real_batch(data, cfg.batch_size, rng);
    let fake = gen.sample(cfg.batch_size, data.max_len(), rng);
    let loss = |tape: &mut Tape, m: &DiscriminatorModel, b: &BoundDiscriminator, r: &[Sequence], f: &[Sequence]| {
        disc_loss_cuts(tape, m, b, r, f, cuts)
    };
    disc_update(disc, &real, &fake, &loss, cfg.disc_lr)
}

fn mean(xs: &[f64]) -> Option<f64> {
    (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64)
}

/// Policy-gradient adversarial training for one seed: MLE pretraining,
/// discriminator pretraining, then alternating g-steps (rewards from
/// `variant`, REINFORCE update) and d-steps (cross-entropy over the
/// variant's cuts). A numerical failure stops training and is returned in
/// the outcome together with the last good models.
pub fn train_seqgan(cfg: &TrainConfig, data: &TrainData, variant: Variant, seed: u64) -> Result<TrainOutcome> {
    let (mut gen, mut disc) = init_models(cfg, data, seed, OutputMode::Probability)?;
    let clock = Clock::new(cfg.record_wall_time);
    let cuts = variant.cuts(data.plan);
    let mut rows = Vec::new();

    let mut rng = seeded(seed, Stream::Pretrain);
    let mut failure = pretrain_generator(cfg, data, &mut gen, seed, &mut rng, &clock, &mut rows).err();
    if failure.is_none() {
        let mut losses = Vec::with_capacity(cfg.disc_pretrain_steps);
        for _ in 0..cfg.disc_pretrain_steps {
            match d_step(cfg, data, &cuts, &gen, &mut disc, &mut rng) {
                Ok(l) => losses.push(l),
                Err(e) => {
                    failure = Some(e);
                    break;
                }
            }
        }
        if let Some(last) = rows.last_mut() {
            last.d_loss = mean(&losses);
        }
    }

    let mut rng = seeded(seed, Stream::Adversarial);
    let first = cfg.pretrain_epochs + 1;
    for epoch in first..first + cfg.adv_epochs {
        if failure.is_some() {
            break;
        }
        let mut objectives = Vec::with_capacity(cfg.g_steps);
        let mut losses = Vec::with_capacity(cfg.d_steps);
        let step = (|| -> Result<()> {
            for _ in 0..cfg.g_steps {
                let batch = gen.sample(cfg.batch_size, data.max_len(), &mut rng);
                let q = rewards(cfg, variant, data.plan, &disc, &gen, &batch, &mut rng)?;
                objectives.push(pg_update(&mut gen, &batch, &q, cfg.gen_lr_adv)?);
            }
            for _ in 0..cfg.d_steps {
                losses.push(d_step(cfg, data, &cuts, &gen, &mut disc, &mut rng)?);
            }
            Ok(())
        })();
        failure = step.err();
        let mut row = evaluate(cfg, data, &gen, seed, epoch, EpochPhase::Adversarial, &clock);
        row.d_loss = mean(&losses);
        row.g_objective = mean(&objectives);
        rows.push(row);
    }

    Ok(TrainOutcome {
        rows,
        generator: gen,
        discriminator: disc,
        failure,
        rng,
    })
}
