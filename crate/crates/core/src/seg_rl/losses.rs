//! Binary cross-entropy discriminator losses summed over cut points.

use crate::autodiff::{log_sigmoid_scalar, Matrix, Tape, Var};
use crate::corpus::{SegmentPlan, Sequence};
use crate::discriminator::{BoundDiscriminator, DiscriminatorModel};
use crate::error::{Error, Result};

/// `−mean log σ(real) − mean log σ(−fake)` over rows and heads, from logits.
pub fn bce_pair_loss(real_logits: &Matrix, fake_logits: &Matrix) -> f64 {
    let real = -real_logits.mapv(log_sigmoid_scalar).mean().unwrap_or(0.0);
    let fake = -fake_logits.mapv(|l| log_sigmoid_scalar(-l)).mean().unwrap_or(0.0);
    real + fake
}

/// Value of the cross-entropy at a single cut `t`, without a tape.
pub fn bce_cut_loss(disc: &DiscriminatorModel, real: &[Sequence], fake: &[Sequence], t: usize) -> Result<f64> {
    disc.check_cut(t)?;
    let pad = disc.pad_id();
    let mask = |s: &[Sequence]| -> Vec<Vec<usize>> { s.iter().map(|x| x.masked_after(t, pad)).collect() };
    Ok(bce_pair_loss(
        &disc.logits_of_rows(&mask(real)),
        &disc.logits_of_rows(&mask(fake)),
    ))
}

/// Cross-entropy summed over `cuts`, built on `tape`. All masked rows go
/// through the discriminator in a single pass.
pub fn disc_loss_cuts(
    tape: &mut Tape,
    disc: &DiscriminatorModel,
    bound: &BoundDiscriminator,
    real: &[Sequence],
    fake: &[Sequence],
    cuts: &[usize],
) -> Result<Var> {
    if cuts.is_empty() {
        return Err(Error::BatchMismatch("empty cut set".into()));
    }
    if real.is_empty() || fake.is_empty() {
        return Err(Error::BatchMismatch("empty real or fake batch".into()));
    }
    for &t in cuts {
        disc.check_cut(t)?;
    }
    let pad = disc.pad_id();
    let (nr, nf, heads) = (real.len(), fake.len(), disc.heads());
    let mut rows = Vec::with_capacity(cuts.len() * (nr + nf));
    let mut sign = Vec::with_capacity(rows.capacity());
    let mut weight = Vec::with_capacity(rows.capacity());
    for &t in cuts {
        for s in real {
            rows.push(s.masked_after(t, pad));
            sign.push(1.0);
            weight.push(1.0 / (nr * heads) as f64);
        }
        for s in fake {
            rows.push(s.masked_after(t, pad));
            sign.push(-1.0);
            weight.push(1.0 / (nf * heads) as f64);
        }
    }
    let n = rows.len();
    let logits = disc.logits_ids(tape, bound, &rows);
    let sign = tape.leaf(Matrix::from_shape_vec((n, 1), sign).expect("column"));
    let weight = tape.leaf(Matrix::from_shape_vec((n, 1), weight).expect("column"));
    let signed = tape.mul(logits, sign);
    let ls = tape.log_sigmoid(signed);
    let weighted = tape.mul(ls, weight);
    let total = tape.sum(weighted);
    Ok(tape.scale(total, -1.0))
}

/// Cross-entropy on full sequences only.
pub fn disc_loss_seqgan(
    tape: &mut Tape,
    disc: &DiscriminatorModel,
    bound: &BoundDiscriminator,
    real: &[Sequence],
    fake: &[Sequence],
) -> Result<Var> {
    disc_loss_cuts(tape, disc, bound, real, fake, &[disc.max_len()])
}

/// Cross-entropy summed over every cut `1..=T`.
pub fn disc_loss_full_prefix(
    tape: &mut Tape,
    disc: &DiscriminatorModel,
    bound: &BoundDiscriminator,
    real: &[Sequence],
    fake: &[Sequence],
) -> Result<Var> {
    let cuts: Vec<usize> = (1..=disc.max_len()).collect();
    disc_loss_cuts(tape, disc, bound, real, fake, &cuts)
}

/// Cross-entropy summed over the two cuts of `plan`.
pub fn disc_loss_two_segment(
    tape: &mut Tape,
    disc: &DiscriminatorModel,
    bound: &BoundDiscriminator,
    real: &[Sequence],
    fake: &[Sequence],
    plan: SegmentPlan,
) -> Result<Var> {
    disc_loss_cuts(tape, disc, bound, real, fake, &plan.cuts())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Vocab;
    use crate::discriminator::{disc_update, DiscriminatorConfig, OutputMode};
    use crate::generator::GeneratorModel;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn disc(len: usize) -> DiscriminatorModel {
        let cfg = DiscriminatorConfig {
            emb_dim: 5,
            widths: vec![1, 2, 3],
            filters: 4,
            heads: 2,
            mode: OutputMode::Probability,
        };
        DiscriminatorModel::new(6, len, 0, &cfg, &mut rng(3)).unwrap()
    }

    fn batches(len: usize) -> (Vec<Sequence>, Vec<Sequence>) {
        let v = Vocab::synthetic(4);
        let g = GeneratorModel::new(&v, 5, false, &mut rng(1));
        (g.sample(6, len, &mut rng(2)), g.sample(5, len, &mut rng(9)))
    }

    fn value(d: &DiscriminatorModel, real: &[Sequence], fake: &[Sequence], cuts: &[usize]) -> f64 {
        let mut tape = Tape::new();
        let b = d.bind(&mut tape);
        let v = disc_loss_cuts(&mut tape, d, &b, real, fake, cuts).unwrap();
        tape.scalar(v)
    }

    #[test]
    fn constant_half_gives_two_ln_two_per_cut() {
        let mut d = disc(5);
        let last = d.params().len() - 2;
        d.params_mut().get_mut(last).fill(0.0);
        d.params_mut().get_mut(last + 1).fill(0.0);
        let (r, f) = batches(5);
        let ln2 = 2f64.ln();
        assert!((value(&d, &r, &f, &[5]) - 2.0 * ln2).abs() < 1e-12);
        assert!((value(&d, &r, &f, &[1, 2, 3, 4, 5]) - 10.0 * ln2).abs() < 1e-12);
    }

    #[test]
    fn confident_correct_discriminator_has_near_zero_loss() {
        assert!(bce_pair_loss(&Matrix::from_elem((3, 1), 40.0), &Matrix::from_elem((3, 1), -40.0)) < 1e-15);
        let wrong = bce_pair_loss(&Matrix::from_elem((3, 1), -40.0), &Matrix::from_elem((3, 1), 40.0));
        assert!((wrong - 80.0).abs() < 1e-9);
    }

    #[test]
    fn full_prefix_is_the_sum_of_per_cut_losses() {
        let d = disc(5);
        let (r, f) = batches(5);
        let total = value(&d, &r, &f, &[1, 2, 3, 4, 5]);
        let sum: f64 = (1..=5).map(|t| bce_cut_loss(&d, &r, &f, t).unwrap()).sum();
        assert!((total - sum).abs() < 1e-12);
        let two = value(&d, &r, &f, &[2, 5]);
        let pair = bce_cut_loss(&d, &r, &f, 2).unwrap() + bce_cut_loss(&d, &r, &f, 5).unwrap();
        assert!((two - pair).abs() < 1e-12);
    }

    #[test]
    fn single_cut_length_reduces_to_full_sequence_loss() {
        let d = disc(1);
        let (r, f) = batches(1);
        let mut tape = Tape::new();
        let b = d.bind(&mut tape);
        let a = disc_loss_full_prefix(&mut tape, &d, &b, &r, &f).unwrap();
        let s = disc_loss_seqgan(&mut tape, &d, &b, &r, &f).unwrap();
        assert_eq!(tape.scalar(a), tape.scalar(s));
    }

    #[test]
    fn gradient_is_linear_in_cuts() {
        let d = disc(4);
        let (r, f) = batches(4);
        let grads = |cuts: &[usize]| {
            let mut tape = Tape::new();
            let b = d.bind(&mut tape);
            let v = disc_loss_cuts(&mut tape, &d, &b, &r, &f, cuts).unwrap();
            crate::autodiff::flatten_grads(&tape.backward(v).for_store(d.params()))
        };
        let all = grads(&[1, 2, 3, 4]);
        let parts: Vec<Vec<f64>> = (1..=4).map(|t| grads(&[t])).collect();
        for (k, g) in all.iter().enumerate() {
            let s: f64 = parts.iter().map(|p| p[k]).sum();
            assert!((g - s).abs() < 1e-10 * (1.0 + g.abs()));
        }
    }

    #[test]
    fn two_segment_scores_four_batches() {
        let d = disc(5);
        let (r, f) = batches(5);
        let plan = SegmentPlan::new(2, 5).unwrap();
        d.reset_evaluation_count();
        let mut tape = Tape::new();
        let b = d.bind(&mut tape);
        disc_loss_two_segment(&mut tape, &d, &b, &r, &f, plan).unwrap();
        assert_eq!(d.evaluation_count() as usize, 2 * (r.len() + f.len()));
    }

    #[test]
    fn equal_fake_scores_match_the_sequence_loss_structure() {
        // Real and fake rows identical at both cuts: loss is the one-cut value twice.
        let d = disc(5);
        let (r, _) = batches(5);
        let fixed: Vec<Sequence> = r.iter().map(|s| Sequence::padded(&s.ids()[..2], 5, 0)).collect();
        let two = value(&d, &fixed, &fixed, &[2, 5]);
        let one = value(&d, &fixed, &fixed, &[5]);
        assert!((two - 2.0 * one).abs() < 1e-12);
    }

    #[test]
    fn loss_falls_on_separable_data() {
        let mut d = disc(4);
        let real = vec![Sequence::padded(&[2, 2, 2, 2], 4, 0); 8];
        let fake = vec![Sequence::padded(&[5, 5, 5, 5], 4, 0); 8];
        let loss = |tape: &mut Tape, m: &DiscriminatorModel, b: &BoundDiscriminator, r: &[Sequence], f: &[Sequence]| {
            disc_loss_seqgan(tape, m, b, r, f)
        };
        let first = disc_update(&mut d, &real, &fake, &loss, 0.01).unwrap();
        let mut last = first;
        for _ in 0..100 {
            last = disc_update(&mut d, &real, &fake, &loss, 0.01).unwrap();
        }
        assert!(last < 0.1 * first);
    }

    #[test]
    fn rejects_out_of_range_cuts() {
        let d = disc(4);
        let (r, f) = batches(4);
        let mut tape = Tape::new();
        let b = d.bind(&mut tape);
        assert!(disc_loss_cuts(&mut tape, &d, &b, &r, &f, &[5]).is_err());
        assert!(disc_loss_cuts(&mut tape, &d, &b, &r, &f, &[0]).is_err());
        assert!(disc_loss_cuts(&mut tape, &d, &b, &r, &f, &[]).is_err());
    }
}
