//! Pieces shared by both adversarial training paths: data preparation,
//! seeded RNG streams, MLE pretraining with per-epoch evaluation, and the
//! per-epoch report rows.

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::{DataMode, TrainConfig};
use crate::corpus::{build_vocab, encode_corpus, read_lines, segment_plan, Corpus, SegmentPlan, Vocab};
use crate::discriminator::{DiscriminatorConfig, DiscriminatorModel, OutputMode};
use crate::error::{Error, Result};
use crate::generator::{mle_pretrain, nll_gen, GeneratorModel};
use crate::oracle::{init_oracle, nll_oracle, oracle_sample, OracleModel};

/// Independent RNG streams derived from one seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Data,
    TestData,
    Init,
    Pretrain,
    Adversarial,
    /// Evaluation after the given epoch.
    Eval(usize),
    FinalEval,
}

impl Stream {
    fn id(self) -> u64 {
        match self {
            Stream::Data => 1,
            Stream::TestData => 2,
            Stream::Init => 3,
            Stream::Pretrain => 4,
            Stream::Adversarial => 5,
            Stream::FinalEval => 6,
            Stream::Eval(e) => 1000 + e as u64,
        }
    }
}

pub fn seeded(seed: u64, stream: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream.id());
    rng
}

/// Training and test corpora with everything derived from them.
#[derive(Debug, Clone)]
pub struct TrainData {
    pub vocab: Vocab,
    pub train: Corpus,
    pub test: Corpus,
    pub oracle: Option<OracleModel>,
    pub plan: SegmentPlan,
}

impl TrainData {
    /// Builds the oracle and draws both corpora (synthetic mode), or reads
    /// and encodes the corpus files (real mode). Depends only on the config,
    /// never on the run seed, so every seed and variant sees the same data.
    pub fn prepare(cfg: &TrainConfig) -> Result<Self> {
        let (vocab, train, test, oracle) = match cfg.mode {
            DataMode::Synthetic => {
                let oracle = init_oracle(cfg.oracle_seed, cfg.vocab_size, cfg.oracle_hidden)?;
                let train = oracle_sample(&oracle, cfg.n_train, cfg.seq_len, &mut seeded(cfg.oracle_seed, Stream::Data));
                let test = oracle_sample(&oracle, cfg.n_test, cfg.seq_len, &mut seeded(cfg.oracle_seed, Stream::TestData));
                (oracle.vocab(), train, test, Some(oracle))
            }
            DataMode::Real => {
                let missing = |f: &str| Error::config(f, "required in real mode");
                let train_lines = read_lines(cfg.train_path.as_deref().ok_or_else(|| missing("train_path"))?)?;
                let test_lines = read_lines(cfg.test_path.as_deref().ok_or_else(|| missing("test_path"))?)?;
                let vocab = build_vocab(&train_lines)?;
                if vocab.len() > cfg.vocab_cap {
                    return Err(Error::VocabTooLarge {
                        size: vocab.len(),
                        cap: cfg.vocab_cap,
                    });
                }
                let train = encode_corpus(&train_lines, &vocab, cfg.seq_len)?;
                let test = encode_corpus(&test_lines, &vocab, cfg.seq_len)?;
                (vocab, train, test, None)
            }
        };
        let plan = match cfg.cut_mid {
            Some(m) => SegmentPlan::new(m, cfg.seq_len)?,
            None => segment_plan(&train)?,
        };
        Ok(TrainData {
            vocab,
            train,
            test,
            oracle,
            plan,
        })
    }

    /// Variable-length (real) data lets the generator emit pad as an end
    /// marker.
    pub fn emits_pad(&self) -> bool {
        self.oracle.is_none()
    }

    pub fn max_len(&self) -> usize {
        self.train.max_len()
    }
}

/// Fresh generator and discriminator for one seed.
pub fn init_models(cfg: &TrainConfig, data: &TrainData, seed: u64, mode: OutputMode) -> Result<(GeneratorModel, DiscriminatorModel)> {
    let mut rng = seeded(seed, Stream::Init);
    let gen = GeneratorModel::new(&data.vocab, cfg.gen_hidden, data.emits_pad(), &mut rng);
    let dcfg = DiscriminatorConfig {
        emb_dim: cfg.disc_emb,
        widths: cfg.disc_widths.clone(),
        filters: cfg.disc_filters,
        heads: cfg.heads(),
        mode,
    };
    let disc = DiscriminatorModel::new(data.vocab.len(), data.max_len(), data.vocab.pad_id(), &dcfg, &mut rng)?;
    Ok((gen, disc))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EpochPhase {
    Pretrain,
    Adversarial,
}

impl EpochPhase {
    pub fn as_str(&self) -> &'static str {
        match self {
            EpochPhase::Pretrain => "pretrain",
            EpochPhase::Adversarial => "adversarial",
        }
    }
}

/// One line of the training curve.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochRow {
    pub epoch: usize,
    pub phase: EpochPhase,
    pub nll_oracle: Option<f64>,
    pub nll_gen: f64,
    pub d_loss: Option<f64>,
    pub g_objective: Option<f64>,
    pub wall_s: Option<f64>,
    pub temperature: Option<f64>,
}

/// Everything a training run produces. On a numerical failure the models
/// are the last good state and `failure` holds the error.
#[derive(Debug)]
pub struct TrainOutcome {
    pub rows: Vec<EpochRow>,
    pub generator: GeneratorModel,
    pub discriminator: DiscriminatorModel,
    pub failure: Option<Error>,
    /// Adversarial-phase RNG at the end of training.
    pub rng: ChaCha8Rng,
}

/// Wall-clock recorder that reports nothing unless enabled, keeping CSVs
/// deterministic by default.
#[derive(Debug)]
pub struct Clock {
    start: Option<Instant>,
}

impl Clock {
    pub fn new(enabled: bool) -> Self {
        Clock {
            start: enabled.then(Instant::now),
        }
    }

    pub fn elapsed(&self) -> Option<f64> {
        self.start.map(|s| s.elapsed().as_secs_f64())
    }
}

/// NLL metrics after `epoch`, with the evaluation RNG keyed by the epoch.
pub fn evaluate(
    cfg: &TrainConfig,
    data: &TrainData,
    gen: &GeneratorModel,
    seed: u64,
    epoch: usize,
    phase: EpochPhase,
    clock: &Clock,
) -> EpochRow {
    let nll_o = data.oracle.as_ref().map(|o| {
        let mut rng = seeded(seed, Stream::Eval(epoch));
        nll_oracle(o, gen, cfg.eval_samples, data.max_len(), &mut rng)
    });
    EpochRow {
        epoch,
        phase,
        nll_oracle: nll_o,
        nll_gen: nll_gen(gen, &data.test),
        d_loss: None,
        g_objective: None,
        wall_s: clock.elapsed(),
        temperature: None,
    }
}

/// MLE pretraining, one evaluated row per epoch.
pub fn pretrain_generator(
    cfg: &TrainConfig,
    data: &TrainData,
    gen: &mut GeneratorModel,
    seed: u64,
    rng: &mut ChaCha8Rng,
    clock: &Clock,
    rows: &mut Vec<EpochRow>,
) -> Result<()> {
    for epoch in 1..=cfg.pretrain_epochs {
        let mut trial = gen.clone();
        mle_pretrain(&mut trial, &data.train, 1, cfg.gen_lr_pretrain, cfg.batch_size, rng)?;
        *gen = trial;
        rows.push(evaluate(cfg, data, gen, seed, epoch, EpochPhase::Pretrain, clock));
    }
    Ok(())
}

/// Uniform random minibatch (with replacement) of the training corpus.
pub fn real_batch<R: rand::Rng + ?Sized>(data: &TrainData, n: usize, rng: &mut R) -> Vec<crate::corpus::Sequence> {
    let seqs = data.train.sequences();
    (0..n).map(|_| seqs[rng.random_range(0..seqs.len())].clone()).collect()
}
