use crate::autodiff::Tape;
use crate::config::TrainConfig;
use crate::discriminator::OutputMode;
use crate::error::{Error, Result};
use crate::generator::Phase;
use crate::seg_rl::Variant;
use crate::training::{
    evaluate, init_models, pretrain_generator, real_batch, seeded, Clock, EpochPhase, Stream, TrainData,
    TrainOutcome,
};

use super::{relaxed_batch, relgan_d_loss, relgan_g_loss, soft_leaves, soft_sequences, TemperatureSchedule};

fn mean(xs: &[f64]) -> Option<f64> {
    (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64)
}

/// Relaxed adversarial training for one seed: MLE pretraining, then
/// alternating generator steps (gradient of the relativistic generator loss
/// through the Gumbel-softmax sample) and discriminator steps, both over the
/// variant's cuts. The temperature advances once per generator step.
pub fn train_relgan(cfg: &TrainConfig, data: &TrainData, variant: Variant, seed: u64) -> Result<TrainOutcome> {
    let (mut gen, mut disc) = init_models(cfg, data, seed, OutputMode::Logit)?;
    let warmup = cfg.temperature_warmup.unwrap_or(cfg.adv_epochs * cfg.g_steps);
    let schedule = TemperatureSchedule::new(cfg.temperature, warmup, cfg.temperature_shape)?;
    let clock = Clock::new(cfg.record_wall_time);
    let cuts = variant.cuts(data.plan);
    let len = data.max_len();
    let mut rows = Vec::new();

    let mut rng = seeded(seed, Stream::Pretrain);
    let mut failure = pretrain_generator(cfg, data, &mut gen, seed, &mut rng, &clock, &mut rows).err();

    let mut rng = seeded(seed, Stream::Adversarial);
    let mut iteration = 0;
    let first = cfg.pretrain_epochs + 1;
    for epoch in first..first + cfg.adv_epochs {
        if failure.is_some() {
            break;
        }
        let mut objectives = Vec::with_capacity(cfg.g_steps);
        let mut losses = Vec::with_capacity(cfg.d_steps);
        let mut tau = schedule.tau(iteration);
        let step = (|| -> Result<()> {
            for _ in 0..cfg.g_steps {
                tau = schedule.tau(iteration);
                let real = real_batch(data, cfg.batch_size, &mut rng);
                let mut tape = Tape::new();
                let fake = relaxed_batch(&mut tape, &gen, cfg.batch_size, len, tau, &mut rng)?;
                let b = disc.bind(&mut tape);
                let loss = relgan_g_loss(&mut tape, &disc, &b, &real, &fake, &cuts)?;
                let value = tape.scalar(loss);
                if !value.is_finite() {
                    return Err(Error::NonFinite("relaxed generator loss".into()));
                }
                let grads = tape.backward(loss).for_store(gen.params());
                gen.apply_gradients(grads, cfg.gen_lr_adv, Phase::Adversarial)?;
                objectives.push(value);
                iteration += 1;
            }
            for _ in 0..cfg.d_steps {
                let real = real_batch(data, cfg.batch_size, &mut rng);
                let soft = {
                    let mut tape = Tape::new();
                    let pos = relaxed_batch(&mut tape, &gen, cfg.batch_size, len, tau, &mut rng)?;
                    soft_sequences(&tape, &pos, tau)
                };
                let loss = disc.descend(cfg.disc_lr, |tape, m, b| {
                    let fake = soft_leaves(tape, &soft)?;
                    relgan_d_loss(tape, m, b, &real, &fake, &cuts)
                })?;
                losses.push(loss);
            }
            Ok(())
        })();
        failure = step.err();
        let mut row = evaluate(cfg, data, &gen, seed, epoch, EpochPhase::Adversarial, &clock);
        row.d_loss = mean(&losses);
        row.g_objective = mean(&objectives);
        row.temperature = Some(tau);
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

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seg_relgan::ScheduleShape;

    fn tiny() -> TrainConfig {
        TrainConfig {
            seq_len: 5,
            vocab_size: 6,
            oracle_hidden: 8,
            n_train: 64,
            n_test: 16,
            gen_hidden: 8,
            disc_emb: 4,
            disc_widths: vec![2, 3],
            disc_filters: 3,
            eval_samples: 32,
            pretrain_epochs: 2,
            adv_epochs: 3,
            d_steps: 2,
            batch_size: 8,
            path: crate::config::TrainingPath::Relaxed,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn every_variant_runs_and_anneals() {
        let cfg = tiny();
        let data = TrainData::prepare(&cfg).unwrap();
        for v in [Variant::Baseline, Variant::FullPrefix, Variant::TwoSegment] {
            let out = train_relgan(&cfg, &data, v, 2).unwrap();
            assert!(out.failure.is_none(), "{:?}", out.failure);
            assert_eq!(out.rows.len(), 5);
            let taus: Vec<f64> = out.rows[2..].iter().map(|r| r.temperature.unwrap()).collect();
            assert_eq!(taus[0], 1.0);
            assert!(taus.windows(2).all(|w| w[1] < w[0]));
            assert!(out.rows[2..].iter().all(|r| r.d_loss.unwrap().is_finite()));
        }
    }

    #[test]
    fn constant_unit_temperature_without_adversarial_epochs_is_pretraining() {
        let cfg = TrainConfig {
            adv_epochs: 0,
            temperature: 1.0,
            temperature_shape: ScheduleShape::Constant,
            ..tiny()
        };
        let data = TrainData::prepare(&cfg).unwrap();
        let a = train_relgan(&cfg, &data, Variant::TwoSegment, 4).unwrap();
        let b = crate::seg_rl::train_seqgan(&cfg, &data, Variant::Baseline, 4).unwrap();
        assert_eq!(a.generator.checksum(), b.generator.checksum());
        assert_eq!(a.rows.len(), 2);
        assert!(a.rows.iter().all(|r| r.temperature.is_none()));
    }
}
