//! The trainable autoregressive generator.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, RngCore};
use rand_distr::{Distribution, Normal};

use crate::autodiff::{Matrix, ParamStore, Tape, Var};
use crate::checkpoint;
use crate::corpus::{Corpus, Sequence, Vocab};
use crate::error::{Error, Result};
use crate::lm::RecurrentLm;
use crate::optim::{all_finite, clip_global_norm, Adam};
use crate::oracle::{Sampler, PROB_CLAMP};

/// Standard deviation of the generator's initial parameters.
pub const INIT_STD: f64 = 0.1;
/// Global gradient-norm bound applied to every generator update.
pub const GRAD_CLIP: f64 = 5.0;

/// Which optimizer state an update uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Pretrain,
    Adversarial,
}

#[derive(Debug, Clone)]
pub struct GeneratorModel {
    lm: RecurrentLm,
    pretrain_opt: Adam,
    adversarial_opt: Adam,
}

impl GeneratorModel {
    /// Fresh generator over `vocab`. Fixed-length corpora use
    /// `emits_pad = false`; variable-length corpora let the model emit pad as
    /// an end marker.
    pub fn new<R: Rng + ?Sized>(vocab: &Vocab, hidden: usize, emits_pad: bool, rng: &mut R) -> Self {
        let normal = Normal::new(0.0, INIT_STD).expect("valid std");
        let lm = RecurrentLm::new(vocab.len(), hidden, vocab.start_id(), vocab.pad_id(), emits_pad, || {
            normal.sample(rng)
        });
        Self::from_lm(lm)
    }

    pub fn from_lm(lm: RecurrentLm) -> Self {
        GeneratorModel {
            lm,
            pretrain_opt: Adam::new(),
            adversarial_opt: Adam::new(),
        }
    }

    /// Scalar parameter count for a vocabulary of `v` ids and hidden width `h`.
    pub fn param_count(v: usize, h: usize) -> usize {
        v * h + 2 * h * 4 * h + 4 * h + h * v + v
    }

    pub fn lm(&self) -> &RecurrentLm {
        &self.lm
    }

    pub fn params(&self) -> &ParamStore {
        self.lm.params()
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        self.lm.params_mut()
    }

    pub fn checksum(&self) -> u64 {
        self.lm.params().checksum()
    }

    /// `G(· | prefix)` over the full id space.
    pub fn step_distribution(&self, prefix: &[usize]) -> Vec<f64> {
        self.lm.next_distribution(prefix).to_vec()
    }

    pub fn sample<R: Rng + ?Sized>(&self, n: usize, max_len: usize, rng: &mut R) -> Vec<Sequence> {
        self.sample_with_log_prob(n, max_len, rng).0
    }

    /// Samples together with the log-probability accumulated while sampling.
    pub fn sample_with_log_prob<R: Rng + ?Sized>(
        &self,
        n: usize,
        max_len: usize,
        rng: &mut R,
    ) -> (Vec<Sequence>, Vec<f64>) {
        let (rows, logp) = self.lm.complete(&[], n, max_len, rng);
        let seqs = rows
            .into_iter()
            .map(|r| Sequence::from_raw(r, self.lm.pad_id()))
            .collect();
        (seqs, logp)
    }

    /// Unclamped log-probability of each sequence, by chaining step
    /// distributions.
    pub fn log_prob(&self, seqs: &[Sequence]) -> Vec<f64> {
        self.position_probs(seqs)
            .into_iter()
            .map(|ps| ps.iter().map(|p| p.ln()).sum())
            .collect()
    }

    pub(crate) fn position_probs(&self, seqs: &[Sequence]) -> Vec<Vec<f64>> {
        let rows: Vec<&[usize]> = seqs.iter().map(|s| s.ids()).collect();
        self.lm.position_probs(&rows)
    }

    /// Teacher-forced per-position log-probabilities on a tape (`B × T`).
    pub fn logprob_matrix(&self, tape: &mut Tape, seqs: &[Sequence]) -> Var {
        let rows: Vec<&[usize]> = seqs.iter().map(|s| s.ids()).collect();
        self.lm.logprob_matrix(tape, &rows)
    }

    /// Number of scored positions per sequence.
    pub fn scored_positions(&self, seq: &Sequence) -> usize {
        if self.lm.emits_pad() && seq.true_len() < seq.max_len() {
            seq.true_len() + 1
        } else {
            seq.true_len()
        }
    }

    /// Mean per-token teacher-forced cross-entropy and its gradient.
    pub fn mle_loss_and_grads(&self, batch: &[Sequence]) -> (f64, Vec<Matrix>) {
        let mut tape = Tape::new();
        let lp = self.logprob_matrix(&mut tape, batch);
        let total = tape.sum(lp);
        let tokens: usize = batch.iter().map(|s| self.scored_positions(s)).sum();
        let loss = tape.scale(total, -1.0 / tokens.max(1) as f64);
        let grads = tape.backward(loss).for_store(self.lm.params());
        (tape.scalar(loss), grads)
    }

    /// Clipped optimizer step descending on `grads`.
    pub fn apply_gradients(&mut self, mut grads: Vec<Matrix>, lr: f64, phase: Phase) -> Result<()> {
        if !all_finite(&grads) {
            return Err(Error::NonFinite("generator gradient".into()));
        }
        clip_global_norm(&mut grads, GRAD_CLIP);
        let opt = match phase {
            Phase::Pretrain => &mut self.pretrain_opt,
            Phase::Adversarial => &mut self.adversarial_opt,
        };
        opt.step(self.lm.params_mut(), &grads, lr);
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        checkpoint::save(
            path,
            "generator",
            &[
                ("vocab_size", self.lm.vocab_size() as u64),
                ("hidden_width", self.lm.hidden() as u64),
                ("start_id", self.lm.start_id() as u64),
                ("pad_id", self.lm.pad_id() as u64),
                ("emits_pad", self.lm.emits_pad() as u64),
            ],
            self.lm.params(),
        )
    }

    pub fn load(path: &Path) -> Result<Self> {
        let blob = checkpoint::load(path, "generator")?;
        let start = blob.require("start_id", path)? as usize;
        let pad = blob.require("pad_id", path)? as usize;
        let emits_pad = blob.require("emits_pad", path)? != 0;
        let vocab = blob.require("vocab_size", path)? as usize;
        let lm = RecurrentLm::from_params(blob.params, start, pad, emits_pad);
        if lm.vocab_size() != vocab {
            return Err(Error::Checkpoint {
                path: path.to_path_buf(),
                message: "header vocabulary size disagrees with parameters".into(),
            });
        }
        Ok(Self::from_lm(lm))
    }
}

impl Sampler for GeneratorModel {
    fn sample_sequences(&self, n: usize, max_len: usize, rng: &mut dyn RngCore) -> Vec<Sequence> {
        self.sample(n, max_len, rng)
    }
}

/// Teacher-forced maximum-likelihood training. Returns the mean per-token
/// loss of each epoch.
pub fn mle_pretrain<R: Rng + ?Sized>(
    model: &mut GeneratorModel,
    corpus: &Corpus,
    epochs: usize,
    lr: f64,
    batch_size: usize,
    rng: &mut R,
) -> Result<Vec<f64>> {
    if corpus.is_empty() {
        return Err(Error::EmptyInput("pretraining corpus"));
    }
    let batch_size = batch_size.max(1);
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    let mut curve = Vec::with_capacity(epochs);
    for epoch in 0..epochs {
        order.shuffle(rng);
        let mut total = 0.0;
        let mut batches = 0;
        for chunk in order.chunks(batch_size) {
            let batch: Vec<Sequence> = chunk.iter().map(|&i| corpus.sequences()[i].clone()).collect();
            let (loss, grads) = model.mle_loss_and_grads(&batch);
            if !loss.is_finite() {
                return Err(Error::NonFinite(format!("MLE pretraining, epoch {epoch}")));
            }
            model.apply_gradients(grads, lr, Phase::Pretrain)?;
            total += loss;
            batches += 1;
        }
        curve.push(total / batches as f64);
    }
    Ok(curve)
}

/// Mean negative log-likelihood (nats per sequence) of `corpus` under the
/// model, pad positions after the end marker excluded.
pub fn nll_gen(model: &GeneratorModel, corpus: &Corpus) -> f64 {
    let per_seq: Vec<f64> = model
        .position_probs(corpus.sequences())
        .into_iter()
        .map(|ps| -ps.iter().map(|&p| p.max(PROB_CLAMP).ln()).sum::<f64>())
        .collect();
    per_seq.iter().sum::<f64>() / per_seq.len().max(1) as f64
}
