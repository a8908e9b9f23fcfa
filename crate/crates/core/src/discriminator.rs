//! Convolutional prefix discriminator.
//!
//! One parameter set scores every cut point `t`: the input is always the
//! length-`T` grid, with positions at or after `t` replaced by the pad token
//! (or, for relaxed inputs, by the one-hot pad vector). Features are n-gram
//! convolutions with max-over-time pooling followed by a highway layer and
//! `S` independent linear scoring heads.

use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};

use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::autodiff::{sigmoid_scalar, Matrix, ParamStore, Tape, Var};
use crate::checkpoint;
use crate::corpus::Sequence;
use crate::error::{Error, Result};
use crate::optim::{all_finite, Adam};

/// Rows scored per tape when evaluating without gradients.
const SCORE_CHUNK: usize = 256;
/// Tolerance on the sum of a relaxed input step.
pub const SIMPLEX_TOL: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputMode {
    /// `σ(logit)`, in `(0, 1)`.
    Probability,
    /// Raw logits.
    Logit,
}

/// Architecture hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscriminatorConfig {
    pub emb_dim: usize,
    /// Convolution widths; widths above the sequence length are dropped.
    pub widths: Vec<usize>,
    /// Filters per width.
    pub filters: usize,
    pub heads: usize,
    pub mode: OutputMode,
}

impl Default for DiscriminatorConfig {
    fn default() -> Self {
        DiscriminatorConfig {
            emb_dim: 32,
            widths: vec![2, 3, 4, 5],
            filters: 16,
            heads: 1,
            mode: OutputMode::Probability,
        }
    }
}

/// Score of one cut point, one value per head.
#[derive(Debug, Clone, PartialEq)]
pub struct PrefixScore {
    pub t: usize,
    pub scores: Vec<f64>,
}

#[derive(Debug)]
pub struct DiscriminatorModel {
    params: ParamStore,
    vocab_size: usize,
    max_len: usize,
    pad_id: usize,
    emb_dim: usize,
    widths: Vec<usize>,
    filters: usize,
    heads: usize,
    mode: OutputMode,
    opt: Adam,
    evaluations: AtomicU64,
}

impl Clone for DiscriminatorModel {
    fn clone(&self) -> Self {
        DiscriminatorModel {
            params: self.params.clone(),
            vocab_size: self.vocab_size,
            max_len: self.max_len,
            pad_id: self.pad_id,
            emb_dim: self.emb_dim,
            widths: self.widths.clone(),
            filters: self.filters,
            heads: self.heads,
            mode: self.mode,
            opt: self.opt.clone(),
            evaluations: AtomicU64::new(self.evaluation_count()),
        }
    }
}

/// Tape-side parameter handles.
#[derive(Debug, Clone)]
pub struct BoundDiscriminator {
    emb: Var,
    convs: Vec<(usize, Var, Var)>,
    gate_w: Var,
    gate_b: Var,
    hw_w: Var,
    hw_b: Var,
    out_w: Var,
    out_b: Var,
}

impl DiscriminatorModel {
    pub fn new<R: Rng + ?Sized>(
        vocab_size: usize,
        max_len: usize,
        pad_id: usize,
        config: &DiscriminatorConfig,
        rng: &mut R,
    ) -> Result<Self> {
        let widths: Vec<usize> = config
            .widths
            .iter()
            .copied()
            .filter(|&w| w >= 1 && w <= max_len)
            .collect();
        if widths.is_empty() || config.filters == 0 || config.heads == 0 || config.emb_dim == 0 {
            return Err(Error::InvalidDimension(format!(
                "discriminator needs a width ≤ {max_len} and nonzero filters, heads and embedding"
            )));
        }
        let normal = Normal::new(0.0, 0.1).expect("valid std");
        let mut draw = |r: usize, c: usize| Matrix::from_shape_simple_fn((r, c), || normal.sample(rng));
        let mut params = ParamStore::new();
        let e = config.emb_dim;
        let f = config.filters;
        params.push("embedding", draw(vocab_size, e));
        for &w in &widths {
            params.push(format!("conv{w}_w"), draw(w * e, f));
            params.push(format!("conv{w}_b"), Matrix::zeros((1, f)));
        }
        let feat = f * widths.len();
        params.push("highway_gate_w", draw(feat, feat));
        params.push("highway_gate_b", Matrix::zeros((1, feat)));
        params.push("highway_w", draw(feat, feat));
        params.push("highway_b", Matrix::zeros((1, feat)));
        params.push("head_w", draw(feat, config.heads));
        params.push("head_b", Matrix::zeros((1, config.heads)));
        Ok(DiscriminatorModel {
            params,
            vocab_size,
            max_len,
            pad_id,
            emb_dim: e,
            widths,
            filters: f,
            heads: config.heads,
            mode: config.mode,
            opt: Adam::new(),
            evaluations: AtomicU64::new(0),
        })
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn checksum(&self) -> u64 {
        self.params.checksum()
    }

    pub fn max_len(&self) -> usize {
        self.max_len
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn pad_id(&self) -> usize {
        self.pad_id
    }

    pub fn heads(&self) -> usize {
        self.heads
    }

    pub fn mode(&self) -> OutputMode {
        self.mode
    }

    pub fn set_mode(&mut self, mode: OutputMode) {
        self.mode = mode;
    }

    /// Number of (sequence, cut) evaluations performed so far.
    pub fn evaluation_count(&self) -> u64 {
        self.evaluations.load(Ordering::Relaxed)
    }

    pub fn reset_evaluation_count(&self) {
        self.evaluations.store(0, Ordering::Relaxed);
    }

    fn count(&self, rows: usize) {
        self.evaluations.fetch_add(rows as u64, Ordering::Relaxed);
    }

    pub fn check_cut(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.max_len {
            return Err(Error::CutOutOfRange {
                t,
                max_len: self.max_len,
            });
        }
        Ok(())
    }

    pub fn bind(&self, tape: &mut Tape) -> BoundDiscriminator {
        let p = &self.params;
        let mut idx = 1;
        let mut convs = Vec::new();
        for &w in &self.widths {
            convs.push((w, tape.param(p, idx), tape.param(p, idx + 1)));
            idx += 2;
        }
        BoundDiscriminator {
            emb: tape.param(p, 0),
            convs,
            gate_w: tape.param(p, idx),
            gate_b: tape.param(p, idx + 1),
            hw_w: tape.param(p, idx + 2),
            hw_b: tape.param(p, idx + 3),
            out_w: tape.param(p, idx + 4),
            out_b: tape.param(p, idx + 5),
        }
    }

    /// Logits (`rows × S`) from per-position embedded inputs.
    fn forward_embedded(&self, tape: &mut Tape, b: &BoundDiscriminator, positions: &[Var]) -> Var {
        assert_eq!(positions.len(), self.max_len);
        let mut pooled = Vec::with_capacity(b.convs.len());
        for &(w, kernel, bias) in &b.convs {
            let mut maps = Vec::with_capacity(self.max_len + 1 - w);
            for p in 0..=self.max_len - w {
                let window = if w == 1 {
                    positions[p]
                } else {
                    tape.concat_cols(&positions[p..p + w])
                };
                let z = tape.matmul(window, kernel);
                let z = tape.add(z, bias);
                maps.push(tape.relu(z));
            }
            pooled.push(tape.max(&maps));
        }
        let feat = if pooled.len() == 1 {
            pooled[0]
        } else {
            tape.concat_cols(&pooled)
        };
        let gate = tape.matmul(feat, b.gate_w);
        let gate = tape.add(gate, b.gate_b);
        let gate = tape.sigmoid(gate);
        let trans = tape.matmul(feat, b.hw_w);
        let trans = tape.add(trans, b.hw_b);
        let trans = tape.relu(trans);
        // gate * trans + (1 - gate) * feat
        let diff = tape.sub(trans, feat);
        let gated = tape.mul(gate, diff);
        let hw = tape.add(feat, gated);
        let logits = tape.matmul(hw, b.out_w);
        tape.add(logits, b.out_b)
    }

    /// Logits for already-masked id rows, recorded on `tape`.
    pub fn logits_ids(&self, tape: &mut Tape, b: &BoundDiscriminator, rows: &[Vec<usize>]) -> Var {
        self.count(rows.len());
        let positions: Vec<Var> = (0..self.max_len)
            .map(|p| {
                let ids: Vec<usize> = rows.iter().map(|r| r[p]).collect();
                tape.gather_rows(b.emb, &ids)
            })
            .collect();
        self.forward_embedded(tape, b, &positions)
    }

    /// Logits for relaxed inputs: one `rows × V` probability matrix per
    /// position, already masked.
    pub fn logits_soft(&self, tape: &mut Tape, b: &BoundDiscriminator, positions: &[Var]) -> Var {
        self.count(tape.value(positions[0]).nrows());
        let embedded: Vec<Var> = positions.iter().map(|&p| tape.matmul(p, b.emb)).collect();
        self.forward_embedded(tape, b, &embedded)
    }

    /// Converts logits to the configured output mode.
    pub fn apply_mode(&self, logits: &Matrix) -> Matrix {
        match self.mode {
            OutputMode::Logit => logits.clone(),
            OutputMode::Probability => logits.mapv(sigmoid_scalar),
        }
    }

    /// Logits (`rows × S`) of id rows, evaluated in parallel chunks without
    /// keeping a tape.
    pub fn logits_of_rows(&self, rows: &[Vec<usize>]) -> Matrix {
        let chunks: Vec<Matrix> = rows
            .par_chunks(SCORE_CHUNK)
            .map(|chunk| {
                let mut tape = Tape::new();
                let b = self.bind(&mut tape);
                let v = self.logits_ids(&mut tape, &b, chunk);
                tape.value(v).clone()
            })
            .collect();
        if chunks.is_empty() {
            return Matrix::zeros((0, self.heads));
        }
        let views: Vec<_> = chunks.iter().map(|c| c.view()).collect();
        ndarray::concatenate(ndarray::Axis(0), &views).expect("same head count")
    }

    /// Output-mode scores (`rows × S`) of every sequence cut at `t`.
    pub fn score_batch_at(&self, seqs: &[Sequence], t: usize) -> Result<Matrix> {
        self.check_cut(t)?;
        let rows: Vec<Vec<usize>> = seqs.iter().map(|s| s.masked_after(t, self.pad_id)).collect();
        Ok(self.apply_mode(&self.logits_of_rows(&rows)))
    }

    /// Scores of the full sequences: the `t = T` case of
    /// [`score_batch_at`](Self::score_batch_at).
    pub fn score_full(&self, seqs: &[Sequence]) -> Matrix {
        self.score_batch_at(seqs, self.max_len).expect("T is a valid cut")
    }

    pub fn score_prefix(&self, seq: &Sequence, t: usize) -> Result<PrefixScore> {
        let m = self.score_batch_at(std::slice::from_ref(seq), t)?;
        Ok(PrefixScore {
            t,
            scores: m.row(0).to_vec(),
        })
    }

    /// Validates a relaxed sequence (`T × V`, one simplex row per step).
    pub fn check_soft(&self, soft: &Matrix) -> Result<()> {
        if soft.dim() != (self.max_len, self.vocab_size) {
            return Err(Error::BatchMismatch(format!(
                "soft sequence is {:?}, expected {:?}",
                soft.dim(),
                (self.max_len, self.vocab_size)
            )));
        }
        for (step, row) in soft.rows().into_iter().enumerate() {
            let sum = row.sum();
            if (sum - 1.0).abs() > SIMPLEX_TOL || row.iter().any(|&x| x < -SIMPLEX_TOL) {
                return Err(Error::OffSimplex { step, sum });
            }
        }
        Ok(())
    }

    /// Per-position `1 × V` leaves for one relaxed sequence cut at `t`.
    fn soft_leaves(&self, tape: &mut Tape, soft: &Matrix, t: usize) -> Vec<Var> {
        (0..self.max_len)
            .map(|p| {
                let row = if p < t {
                    soft.row(p).to_owned()
                } else {
                    let mut pad = ndarray::Array1::zeros(self.vocab_size);
                    pad[self.pad_id] = 1.0;
                    pad
                };
                tape.leaf(row.insert_axis(ndarray::Axis(0)))
            })
            .collect()
    }

    /// Scores a relaxed sequence cut at `t`: each step's embedding is the
    /// probability-weighted mix of token embeddings.
    pub fn score_soft(&self, soft: &Matrix, t: usize) -> Result<PrefixScore> {
        Ok(self.score_soft_with_grad(soft, t, 0)?.0)
    }

    /// [`score_soft`](Self::score_soft) plus the gradient of head `head`'s
    /// output-mode score with respect to the soft input (`T × V`).
    pub fn score_soft_with_grad(&self, soft: &Matrix, t: usize, head: usize) -> Result<(PrefixScore, Matrix)> {
        self.check_cut(t)?;
        self.check_soft(soft)?;
        let mut tape = Tape::new();
        let b = self.bind(&mut tape);
        let leaves = self.soft_leaves(&mut tape, soft, t);
        let logits = self.logits_soft(&mut tape, &b, &leaves);
        let out = match self.mode {
            OutputMode::Logit => logits,
            OutputMode::Probability => tape.sigmoid(logits),
        };
        let picked = tape.slice_cols(out, head, head + 1);
        let root = tape.sum(picked);
        let grads = tape.backward(root);
        let mut g = Matrix::zeros(soft.dim());
        for (p, &leaf) in leaves.iter().enumerate().take(t) {
            if let Some(gl) = grads.wrt(leaf) {
                g.row_mut(p).assign(&gl.row(0));
            }
        }
        let score = PrefixScore {
            t,
            scores: tape.value(out).row(0).to_vec(),
        };
        Ok((score, g))
    }

    /// One optimizer step on the scalar built by `loss`.
    pub fn descend<F>(&mut self, lr: f64, loss: F) -> Result<f64>
    where
        F: FnOnce(&mut Tape, &DiscriminatorModel, &BoundDiscriminator) -> Result<Var>,
    {
        let mut tape = Tape::new();
        let b = self.bind(&mut tape);
        let root = loss(&mut tape, self, &b)?;
        let value = tape.scalar(root);
        if !value.is_finite() {
            return Err(Error::NonFinite("discriminator loss".into()));
        }
        let grads = tape.backward(root).for_store(&self.params);
        if !all_finite(&grads) {
            return Err(Error::NonFinite("discriminator gradient".into()));
        }
        self.opt.step(&mut self.params, &grads, lr);
        Ok(value)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut header: Vec<(String, u64)> = vec![
            ("vocab_size".into(), self.vocab_size as u64),
            ("max_len".into(), self.max_len as u64),
            ("pad_id".into(), self.pad_id as u64),
            ("emb_dim".into(), self.emb_dim as u64),
            ("filters".into(), self.filters as u64),
            ("heads".into(), self.heads as u64),
            ("logit_mode".into(), (self.mode == OutputMode::Logit) as u64),
            ("n_widths".into(), self.widths.len() as u64),
        ];
        for (i, &w) in self.widths.iter().enumerate() {
            header.push((format!("width_{i}"), w as u64));
        }
        let header: Vec<(&str, u64)> = header.iter().map(|(k, v)| (k.as_str(), *v)).collect();
        checkpoint::save(path, "discriminator", &header, &self.params)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let blob = checkpoint::load(path, "discriminator")?;
        let get = |k: &str| blob.require(k, path).map(|v| v as usize);
        let n_widths = get("n_widths")?;
        let widths = (0..n_widths)
            .map(|i| get(&format!("width_{i}")))
            .collect::<Result<Vec<_>>>()?;
        let mode = if get("logit_mode")? == 1 {
            OutputMode::Logit
        } else {
            OutputMode::Probability
        };
        let expected = 1 + 2 * widths.len() + 6;
        if blob.params.len() != expected {
            return Err(Error::Checkpoint {
                path: path.to_path_buf(),
                message: format!("expected {expected} parameter matrices, found {}", blob.params.len()),
            });
        }
        Ok(DiscriminatorModel {
            vocab_size: get("vocab_size")?,
            max_len: get("max_len")?,
            pad_id: get("pad_id")?,
            emb_dim: get("emb_dim")?,
            filters: get("filters")?,
            heads: get("heads")?,
            widths,
            mode,
            params: blob.params,
            opt: Adam::new(),
            evaluations: AtomicU64::new(0),
        })
    }
}

/// Loss builder used by [`disc_update`]: records a scalar loss for a pair of
/// real and fake batches.
pub type DiscLossFn<'a> =
    dyn Fn(&mut Tape, &DiscriminatorModel, &BoundDiscriminator, &[Sequence], &[Sequence]) -> Result<Var> + 'a;

/// One optimizer step of `model` on `loss_fn(real, fake)`.
pub fn disc_update(
    model: &mut DiscriminatorModel,
    real: &[Sequence],
    fake: &[Sequence],
    loss_fn: &DiscLossFn<'_>,
    lr: f64,
) -> Result<f64> {
    if real.is_empty() || fake.is_empty() {
        return Err(Error::BatchMismatch("empty real or fake batch".into()));
    }
    let len = real[0].max_len();
    if real.iter().chain(fake).any(|s| s.max_len() != len) || len != model.max_len() {
        return Err(Error::BatchMismatch("sequence lengths differ".into()));
    }
    model.descend(lr, |tape, m, b| loss_fn(tape, m, b, real, fake))
}
