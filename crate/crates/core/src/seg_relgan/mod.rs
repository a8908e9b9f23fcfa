//! Gumbel-softmax relaxed training path.
//!
//! The generator emits a [`SoftSequence`]: at each step
//! `softmax((logits + g) / τ)` with Gumbel noise `g`, fed back as the
//! probability-weighted embedding. The discriminator runs in logit mode and
//! both players use the relativistic pairing
//! `f(y, r) = −log σ(r − y)` (discriminator) and `−log σ(y − r)`
//! (generator), averaged over heads and summed over a cut set.

mod train;

pub use train::train_relgan;

use ndarray::Array1;
use rand::Rng;

use crate::autodiff::{Matrix, Tape, Var};
use crate::corpus::Sequence;
use crate::discriminator::{BoundDiscriminator, DiscriminatorModel, SIMPLEX_TOL};
use crate::error::{Error, Result};
use crate::generator::GeneratorModel;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScheduleShape {
    /// The target from the first iteration.
    Constant,
    /// Geometric interpolation from 1 to the target over the warm-up.
    Exponential,
}

/// Temperature control. `target` is the final inverse temperature `β`
/// (the sharpness); the emitted temperature is `τ = 1/β`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TemperatureSchedule {
    pub target: f64,
    pub warmup: usize,
    pub shape: ScheduleShape,
}

impl TemperatureSchedule {
    pub fn new(target: f64, warmup: usize, shape: ScheduleShape) -> Result<Self> {
        if !(target.is_finite() && target >= 1.0) {
            return Err(Error::config("temperature", format!("target must be ≥ 1, got {target}")));
        }
        Ok(TemperatureSchedule {
            target,
            warmup: warmup.max(1),
            shape,
        })
    }

    /// Inverse temperature at iteration `i`.
    pub fn beta(&self, i: usize) -> f64 {
        match self.shape {
            ScheduleShape::Constant => self.target,
            ScheduleShape::Exponential => {
                let progress = (i as f64 / self.warmup as f64).min(1.0);
                self.target.powf(progress)
            }
        }
    }

    pub fn tau(&self, i: usize) -> f64 {
        1.0 / self.beta(i)
    }
}

fn gumbel<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    let u: f64 = rng.random_range(f64::MIN_POSITIVE..1.0);
    -(-u.ln()).ln()
}

/// Matrix of independent standard Gumbel draws.
pub fn gumbel_noise<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Matrix {
    Matrix::from_shape_simple_fn((rows, cols), || gumbel(rng))
}

/// `softmax((logits + g) / τ)` for one fresh Gumbel draw `g`.
pub fn gumbel_softmax_step<R: Rng + ?Sized>(logits: &[f64], tau: f64, rng: &mut R) -> Result<Array1<f64>> {
    if !(tau > 0.0) {
        return Err(Error::NonPositiveTemperature(tau));
    }
    let z: Vec<f64> = logits.iter().map(|&l| (l + gumbel(rng)) / tau).collect();
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Array1<f64> = z.iter().map(|&x| (x - m).exp()).collect();
    let s = e.sum();
    Ok(e / s)
}

/// A relaxed sequence: one probability vector over the vocabulary per step.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftSequence {
    /// `T × V`, rows on the simplex.
    pub probs: Matrix,
    pub tau: f64,
}

impl SoftSequence {
    pub fn len(&self) -> usize {
        self.probs.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.nrows() == 0
    }

    /// Per-step argmax as a discrete sequence.
    pub fn hard(&self, pad_id: usize) -> Sequence {
        let ids = self
            .probs
            .rows()
            .into_iter()
            .map(|r| {
                r.iter()
                    .enumerate()
                    .fold((0, f64::NEG_INFINITY), |best, (i, &p)| if p > best.1 { (i, p) } else { best })
                    .0
            })
            .collect();
        Sequence::from_raw(ids, pad_id)
    }

    /// One-hot encoding of a discrete sequence.
    pub fn one_hot(seq: &Sequence, vocab: usize) -> SoftSequence {
        let mut probs = Matrix::zeros((seq.max_len(), vocab));
        for (k, &id) in seq.ids().iter().enumerate() {
            probs[[k, id]] = 1.0;
        }
        SoftSequence { probs, tau: 1.0 }
    }

    fn check(&self) -> Result<()> {
        for (step, r) in self.probs.rows().into_iter().enumerate() {
            let sum = r.sum();
            if (sum - 1.0).abs() > SIMPLEX_TOL || r.iter().any(|&p| p < 0.0) {
                return Err(Error::OffSimplex { step, sum });
            }
        }
        Ok(())
    }
}

/// Relaxed rollout of `noise.len()` steps on a tape, one `rows × V`
/// probability matrix per step. `noise[k]` is the Gumbel draw for step `k`;
/// fixing it makes the result a deterministic, differentiable function of
/// the generator parameters.
pub fn relaxed_positions(tape: &mut Tape, gen: &GeneratorModel, noise: &[Matrix], tau: f64) -> Result<Vec<Var>> {
    if !(tau > 0.0) {
        return Err(Error::NonPositiveTemperature(tau));
    }
    let Some(first) = noise.first() else {
        return Ok(Vec::new());
    };
    let rows = first.nrows();
    let lm = gen.lm();
    let bound = lm.bind(tape);
    let (mut h, mut c) = bound.zero_state(tape, rows);
    let mut x = tape.gather_rows(bound.emb, &vec![lm.start_id(); rows]);
    let mut out = Vec::with_capacity(noise.len());
    for g in noise {
        let (h2, c2, logits) = bound.step(tape, x, h, c);
        h = h2;
        c = c2;
        let g = tape.leaf(g.clone());
        let noisy = tape.add(logits, g);
        let scaled = tape.scale(noisy, 1.0 / tau);
        let p = tape.softmax_rows(scaled);
        x = tape.matmul(p, bound.emb);
        out.push(p);
    }
    Ok(out)
}

/// Draws noise and runs [`relaxed_positions`] for `rows` sequences of
/// length `len`.
pub fn relaxed_batch<R: Rng + ?Sized>(
    tape: &mut Tape,
    gen: &GeneratorModel,
    rows: usize,
    len: usize,
    tau: f64,
    rng: &mut R,
) -> Result<Vec<Var>> {
    let v = gen.lm().vocab_size();
    let noise: Vec<Matrix> = (0..len).map(|_| gumbel_noise(rows, v, rng)).collect();
    relaxed_positions(tape, gen, &noise, tau)
}

/// Splits tape positions into one [`SoftSequence`] per row.
pub fn soft_sequences(tape: &Tape, positions: &[Var], tau: f64) -> Vec<SoftSequence> {
    if positions.is_empty() {
        return Vec::new();
    }
    let rows = tape.value(positions[0]).nrows();
    (0..rows)
        .map(|r| {
            let steps: Vec<_> = positions.iter().map(|&p| tape.value(p).row(r)).collect();
            SoftSequence {
                probs: ndarray::stack(ndarray::Axis(0), &steps).expect("equal widths"),
                tau,
            }
        })
        .collect()
}

/// One relaxed sample of length `len` at temperature `tau`.
pub fn relaxed_sample<R: Rng + ?Sized>(gen: &GeneratorModel, len: usize, tau: f64, rng: &mut R) -> Result<SoftSequence> {
    let mut tape = Tape::new();
    let pos = relaxed_batch(&mut tape, gen, 1, len, tau, rng)?;
    Ok(soft_sequences(&tape, &pos, tau).remove(0))
}

/// Stacks soft sequences into per-step leaves (`rows × V` each).
pub fn soft_leaves(tape: &mut Tape, soft: &[SoftSequence]) -> Result<Vec<Var>> {
    for s in soft {
        s.check()?;
    }
    let len = soft.first().map_or(0, SoftSequence::len);
    if soft.iter().any(|s| s.len() != len) {
        return Err(Error::BatchMismatch("soft sequences differ in length".into()));
    }
    Ok((0..len)
        .map(|k| {
            let steps: Vec<_> = soft.iter().map(|s| s.probs.row(k)).collect();
            tape.leaf(ndarray::stack(ndarray::Axis(0), &steps).expect("equal widths"))
        })
        .collect())
}

/// Which side of the relativistic pairing is being trained.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Discriminator,
    Generator,
}

/// `Σ_{t ∈ cuts} mean_rows (1/S) Σ_s f(fake_s, real_s)` with rows paired by
/// index. Fake steps at or after each cut are replaced by the one-hot pad
/// vector, real rows by the pad token. All cuts go through the
/// discriminator in one pass per input kind.
pub fn relativistic_loss(
    tape: &mut Tape,
    disc: &DiscriminatorModel,
    bound: &BoundDiscriminator,
    real: &[Sequence],
    fake: &[Var],
    cuts: &[usize],
    role: Role,
) -> Result<Var> {
    if cuts.is_empty() {
        return Err(Error::BatchMismatch("empty cut set".into()));
    }
    for &t in cuts {
        disc.check_cut(t)?;
    }
    let len = disc.max_len();
    if fake.len() != len {
        return Err(Error::BatchMismatch(format!("{} soft steps for length {len}", fake.len())));
    }
    let rows = tape.value(fake[0]).nrows();
    if rows != real.len() || rows == 0 {
        return Err(Error::BatchMismatch(format!(
            "{} real rows paired with {rows} fake rows",
            real.len()
        )));
    }
    let pad = disc.pad_id();
    let mut pad_hot = Matrix::zeros((rows, disc.vocab_size()));
    pad_hot.column_mut(pad).fill(1.0);
    let pad_hot = tape.leaf(pad_hot);

    let real_rows: Vec<Vec<usize>> = cuts
        .iter()
        .flat_map(|&t| real.iter().map(move |s| s.masked_after(t, pad)))
        .collect();
    let fake_positions: Vec<Var> = (0..len)
        .map(|k| {
            let parts: Vec<Var> = cuts.iter().map(|&t| if k < t { fake[k] } else { pad_hot }).collect();
            if parts.len() == 1 {
                parts[0]
            } else {
                tape.concat_rows(&parts)
            }
        })
        .collect();
    let r = disc.logits_ids(tape, bound, &real_rows);
    let y = disc.logits_soft(tape, bound, &fake_positions);
    let diff = match role {
        Role::Discriminator => tape.sub(r, y),
        Role::Generator => tape.sub(y, r),
    };
    let ls = tape.log_sigmoid(diff);
    let total = tape.sum(ls);
    Ok(tape.scale(total, -1.0 / (rows * disc.heads()) as f64))
}

pub fn relgan_d_loss(
    tape: &mut Tape,
    disc: &DiscriminatorModel,
    bound: &BoundDiscriminator,
    real: &[Sequence],
    fake: &[Var],
    cuts: &[usize],
) -> Result<Var> {
    relativistic_loss(tape, disc, bound, real, fake, cuts, Role::Discriminator)
}

pub fn relgan_g_loss(
    tape: &mut Tape,
    disc: &DiscriminatorModel,
    bound: &BoundDiscriminator,
    real: &[Sequence],
    fake: &[Var],
    cuts: &[usize],
) -> Result<Var> {
    relativistic_loss(tape, disc, bound, real, fake, cuts, Role::Generator)
}

/// Loss value for fixed soft sequences, without gradients.
pub fn relativistic_loss_value(
    disc: &DiscriminatorModel,
    real: &[Sequence],
    fake: &[SoftSequence],
    cuts: &[usize],
    role: Role,
) -> Result<f64> {
    let mut tape = Tape::new();
    let b = disc.bind(&mut tape);
    let fake = soft_leaves(&mut tape, fake)?;
    let v = relativistic_loss(&mut tape, disc, &b, real, &fake, cuts, role)?;
    Ok(tape.scalar(v))
}
