//! Synthetic ground-truth model: a frozen LSTM with standard-normal
//! parameters that generates training data and scores generated samples.

use std::path::Path;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::checkpoint;
use crate::corpus::{Corpus, Sequence, Vocab};
use crate::error::{Error, Result};
use crate::lm::RecurrentLm;

/// Probability floor inside every logarithm of a reported NLL.
pub const PROB_CLAMP: f64 = 1e-8;

const PAD_ID: usize = 0;
const START_ID: usize = 1;

/// Anything that can emit fixed-length sequences.
pub trait Sampler {
    fn sample_sequences(&self, n: usize, max_len: usize, rng: &mut dyn RngCore) -> Vec<Sequence>;
}

#[derive(Debug, Clone)]
pub struct OracleModel {
    lm: RecurrentLm,
    seed: u64,
}

/// Random oracle over `vocab_size` word tokens (ids `2..vocab_size + 2`,
/// see [`Vocab::synthetic`]). Every parameter is drawn from N(0, 1) with a
/// ChaCha stream seeded by `seed`.
pub fn init_oracle(seed: u64, vocab_size: usize, hidden_width: usize) -> Result<OracleModel> {
    if vocab_size < 2 {
        return Err(Error::InvalidDimension(format!(
            "oracle vocabulary must have at least 2 tokens, got {vocab_size}"
        )));
    }
    if hidden_width < 1 {
        return Err(Error::InvalidDimension("oracle hidden width must be ≥ 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let lm = RecurrentLm::new(vocab_size + 2, hidden_width, START_ID, PAD_ID, false, || {
        StandardNormal.sample(&mut rng)
    });
    Ok(OracleModel { lm, seed })
}

impl OracleModel {
    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Number of word tokens.
    pub fn vocab_size(&self) -> usize {
        self.lm.vocab_size() - 2
    }

    pub fn hidden_width(&self) -> usize {
        self.lm.hidden()
    }

    /// The matching synthetic vocabulary.
    pub fn vocab(&self) -> Vocab {
        Vocab::synthetic(self.vocab_size())
    }

    pub fn checksum(&self) -> u64 {
        self.lm.params().checksum()
    }

    pub fn lm(&self) -> &RecurrentLm {
        &self.lm
    }

    #[cfg(test)]
    pub(crate) fn lm_mut(&mut self) -> &mut RecurrentLm {
        &mut self.lm
    }

    /// Next-token distribution over the full id space after `prefix`.
    pub fn step_distribution(&self, prefix: &[usize]) -> Vec<f64> {
        self.lm.next_distribution(prefix).to_vec()
    }

    /// Sum of clamped log-probabilities of each sequence.
    pub fn log_prob(&self, seqs: &[Sequence]) -> Vec<f64> {
        let rows: Vec<&[usize]> = seqs.iter().map(|s| s.ids()).collect();
        self.lm
            .position_probs(&rows)
            .into_iter()
            .map(|ps| ps.iter().map(|&p| p.max(PROB_CLAMP).ln()).sum())
            .collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        checkpoint::save(
            path,
            "oracle",
            &[
                ("seed", self.seed),
                ("vocab_size", self.vocab_size() as u64),
                ("hidden_width", self.hidden_width() as u64),
            ],
            self.lm.params(),
        )
    }

    pub fn load(path: &Path) -> Result<Self> {
        let blob = checkpoint::load(path, "oracle")?;
        let seed = blob.require("seed", path)?;
        let vocab = blob.require("vocab_size", path)? as usize;
        let hidden = blob.require("hidden_width", path)? as usize;
        let lm = RecurrentLm::from_params(blob.params, START_ID, PAD_ID, false);
        if lm.vocab_size() != vocab + 2 || lm.hidden() != hidden {
            return Err(Error::Checkpoint {
                path: path.to_path_buf(),
                message: "header dimensions disagree with parameters".into(),
            });
        }
        Ok(OracleModel { lm, seed })
    }
}

impl Sampler for OracleModel {
    fn sample_sequences(&self, n: usize, max_len: usize, rng: &mut dyn RngCore) -> Vec<Sequence> {
        let (rows, _) = self.lm.complete(&[], n, max_len, rng);
        rows.into_iter().map(|r| Sequence::from_raw(r, PAD_ID)).collect()
    }
}

/// `n` ancestral samples of length `max_len`.
pub fn oracle_sample<R: Rng>(model: &OracleModel, n: usize, max_len: usize, rng: &mut R) -> Corpus {
    assert!(n >= 1, "oracle_sample needs n ≥ 1");
    Corpus::from_sequences(model.sample_sequences(n, max_len, rng), max_len)
}

/// Monte-Carlo estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NllEstimate {
    pub mean: f64,
    pub std_err: f64,
    pub n: usize,
}

pub(crate) fn mean_and_se(values: &[f64]) -> NllEstimate {
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    let var = if n > 1 {
        values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64
    } else {
        0.0
    };
    NllEstimate {
        mean,
        std_err: (var / n as f64).sqrt(),
        n,
    }
}

/// Oracle negative log-likelihood (nats per sequence) of samples drawn from
/// `sampler`.
pub fn nll_oracle_estimate(
    oracle: &OracleModel,
    sampler: &dyn Sampler,
    n_samples: usize,
    max_len: usize,
    rng: &mut dyn RngCore,
) -> NllEstimate {
    let seqs = sampler.sample_sequences(n_samples, max_len, rng);
    let nll: Vec<f64> = oracle.log_prob(&seqs).into_iter().map(|l| -l).collect();
    mean_and_se(&nll)
}

pub fn nll_oracle(
    oracle: &OracleModel,
    sampler: &dyn Sampler,
    n_samples: usize,
    max_len: usize,
    rng: &mut dyn RngCore,
) -> f64 {
    nll_oracle_estimate(oracle, sampler, n_samples, max_len, rng).mean
}
