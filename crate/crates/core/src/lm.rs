//! Single-layer LSTM language model shared by the oracle and the generator.
//!
//! Output logits carry an additive mask that removes the start token (and,
//! for fixed-length models, the pad token) from the output space. When pad is
//! emittable it acts as an end marker: once emitted, every later position is
//! pad and contributes no probability mass.

use ndarray::{s, Array1, ArrayView1, Axis};
use rand::Rng;

use crate::autodiff::{softmax_rows, Matrix, ParamStore, Tape, Var};

/// Logit offset for tokens outside the output space. `exp` of it underflows
/// to exactly zero.
pub(crate) const MASKED_LOGIT: f64 = -1e30;

const EMB: usize = 0;
const WX: usize = 1;
const WH: usize = 2;
const BIAS: usize = 3;
const WO: usize = 4;
const BO: usize = 5;

#[derive(Debug, Clone)]
pub struct RecurrentLm {
    params: ParamStore,
    vocab_size: usize,
    hidden: usize,
    start_id: usize,
    pad_id: usize,
    emits_pad: bool,
    logit_mask: Matrix,
}

/// Hidden and cell state for a batch of rows.
#[derive(Debug, Clone)]
pub struct LmState {
    h: Matrix,
    c: Matrix,
}

impl LmState {
    fn tile(&self, rows: usize) -> LmState {
        let h = self.h.row(0).broadcast((rows, self.h.ncols())).unwrap().to_owned();
        let c = self.c.row(0).broadcast((rows, self.c.ncols())).unwrap().to_owned();
        LmState { h, c }
    }
}

fn sigmoid(x: f64) -> f64 {
    crate::autodiff::sigmoid_scalar(x)
}

/// Inverse-CDF draw from a categorical distribution.
pub(crate) fn draw_categorical<R: Rng + ?Sized>(probs: ArrayView1<f64>, rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > 0.0 {
            acc += p;
            last = i;
            if u < acc {
                return i;
            }
        }
    }
    last
}

impl RecurrentLm {
    /// Builds a model whose parameters are drawn in a fixed order from `init`.
    pub fn new(
        vocab_size: usize,
        hidden: usize,
        start_id: usize,
        pad_id: usize,
        emits_pad: bool,
        mut init: impl FnMut() -> f64,
    ) -> Self {
        let mut params = ParamStore::new();
        let mut draw = |rows: usize, cols: usize| Matrix::from_shape_simple_fn((rows, cols), &mut init);
        params.push("embedding", draw(vocab_size, hidden));
        params.push("w_input", draw(hidden, 4 * hidden));
        params.push("w_hidden", draw(hidden, 4 * hidden));
        params.push("b_gates", draw(1, 4 * hidden));
        params.push("w_out", draw(hidden, vocab_size));
        params.push("b_out", draw(1, vocab_size));
        Self::from_params(params, start_id, pad_id, emits_pad)
    }

    pub(crate) fn from_params(params: ParamStore, start_id: usize, pad_id: usize, emits_pad: bool) -> Self {
        let vocab_size = params.get(EMB).nrows();
        let hidden = params.get(EMB).ncols();
        let mut logit_mask = Matrix::zeros((1, vocab_size));
        logit_mask[[0, start_id]] = MASKED_LOGIT;
        if !emits_pad {
            logit_mask[[0, pad_id]] = MASKED_LOGIT;
        }
        RecurrentLm {
            params,
            vocab_size,
            hidden,
            start_id,
            pad_id,
            emits_pad,
            logit_mask,
        }
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn start_id(&self) -> usize {
        self.start_id
    }

    pub fn pad_id(&self) -> usize {
        self.pad_id
    }

    pub fn emits_pad(&self) -> bool {
        self.emits_pad
    }

    /// Whether `token` is in the output space.
    pub fn can_emit(&self, token: usize) -> bool {
        self.logit_mask[[0, token]] == 0.0
    }

    pub fn initial_state(&self, rows: usize) -> LmState {
        LmState {
            h: Matrix::zeros((rows, self.hidden)),
            c: Matrix::zeros((rows, self.hidden)),
        }
    }

    /// Feeds one input token per row and returns next-token probabilities.
    pub fn advance(&self, state: &mut LmState, inputs: &[usize]) -> Matrix {
        let emb = self.params.get(EMB);
        let mut x = Matrix::zeros((inputs.len(), self.hidden));
        for (r, &id) in inputs.iter().enumerate() {
            x.row_mut(r).assign(&emb.row(id));
        }
        self.advance_embedded(state, &x)
    }

    fn advance_embedded(&self, state: &mut LmState, x: &Matrix) -> Matrix {
        let hd = self.hidden;
        let mut gates = x.dot(self.params.get(WX)) + state.h.dot(self.params.get(WH));
        gates += self.params.get(BIAS);
        let i = gates.slice(s![.., 0..hd]).mapv(sigmoid);
        let f = gates.slice(s![.., hd..2 * hd]).mapv(sigmoid);
        let g = gates.slice(s![.., 2 * hd..3 * hd]).mapv(f64::tanh);
        let o = gates.slice(s![.., 3 * hd..4 * hd]).mapv(sigmoid);
        state.c = &f * &state.c + &i * &g;
        state.h = &o * &state.c.mapv(f64::tanh);
        let mut logits = state.h.dot(self.params.get(WO));
        logits += self.params.get(BO);
        logits += &self.logit_mask;
        softmax_rows(&logits)
    }

    /// Next-token distribution after `prefix`.
    pub fn next_distribution(&self, prefix: &[usize]) -> Array1<f64> {
        let mut state = self.initial_state(1);
        let mut probs = self.advance(&mut state, &[self.start_id]);
        for &tok in prefix {
            probs = self.advance(&mut state, &[tok]);
        }
        probs.index_axis_move(Axis(0), 0)
    }

    /// Probability assigned to every scored position of each row. Position
    /// `k` is scored while the row has not ended; the first pad of an
    /// end-marking model is scored, later positions are not.
    pub fn position_probs(&self, rows: &[&[usize]]) -> Vec<Vec<f64>> {
        if rows.is_empty() {
            return Vec::new();
        }
        let len = rows[0].len();
        let mut state = self.initial_state(rows.len());
        let mut inputs = vec![self.start_id; rows.len()];
        let mut out = vec![Vec::with_capacity(len); rows.len()];
        let mut ended = vec![false; rows.len()];
        for k in 0..len {
            let probs = self.advance(&mut state, &inputs);
            for (r, row) in rows.iter().enumerate() {
                if ended[r] {
                    continue;
                }
                let tok = row[k];
                out[r].push(probs[[r, tok]]);
                if tok == self.pad_id {
                    ended[r] = true;
                }
                inputs[r] = tok;
            }
        }
        out
    }

    /// Extends `prefix` to `target_len` tokens in `rows` independent rows.
    /// Returns the completed rows and the log-probability of each sampled
    /// suffix.
    pub fn complete<R: Rng + ?Sized>(
        &self,
        prefix: &[usize],
        rows: usize,
        target_len: usize,
        rng: &mut R,
    ) -> (Vec<Vec<usize>>, Vec<f64>) {
        assert!(prefix.len() <= target_len);
        let mut single = self.initial_state(1);
        let mut probs = self.advance(&mut single, &[self.start_id]);
        let mut prefix_ended = false;
        for &tok in prefix {
            if tok == self.pad_id {
                prefix_ended = true;
                break;
            }
            probs = self.advance(&mut single, &[tok]);
        }
        let mut out: Vec<Vec<usize>> = (0..rows).map(|_| prefix.to_vec()).collect();
        let mut logp = vec![0.0; rows];
        if prefix_ended {
            for row in &mut out {
                row.resize(target_len, self.pad_id);
            }
            return (out, logp);
        }
        let mut state = single.tile(rows);
        let mut probs = probs.row(0).broadcast((rows, self.vocab_size)).unwrap().to_owned();
        let mut ended = vec![false; rows];
        let mut inputs = vec![0; rows];
        for k in prefix.len()..target_len {
            for r in 0..rows {
                if ended[r] {
                    out[r].push(self.pad_id);
                    inputs[r] = self.pad_id;
                    continue;
                }
                let tok = draw_categorical(probs.row(r), rng);
                logp[r] += probs[[r, tok]].ln();
                out[r].push(tok);
                inputs[r] = tok;
                if tok == self.pad_id {
                    ended[r] = true;
                }
            }
            if k + 1 < target_len {
                probs = self.advance(&mut state, &inputs);
            }
        }
        (out, logp)
    }
}

/// Tape-side view of a model's parameters.
#[derive(Debug, Clone, Copy)]
pub struct BoundLm {
    pub emb: Var,
    wx: Var,
    wh: Var,
    bias: Var,
    wo: Var,
    bo: Var,
    mask: Var,
    hidden: usize,
}

impl RecurrentLm {
    pub fn bind(&self, tape: &mut Tape) -> BoundLm {
        BoundLm {
            emb: tape.param(&self.params, EMB),
            wx: tape.param(&self.params, WX),
            wh: tape.param(&self.params, WH),
            bias: tape.param(&self.params, BIAS),
            wo: tape.param(&self.params, WO),
            bo: tape.param(&self.params, BO),
            mask: tape.leaf(self.logit_mask.clone()),
            hidden: self.hidden,
        }
    }

    /// Teacher-forced log-probability of every position, `rows × T`, with
    /// unscored positions multiplied out to zero.
    pub fn logprob_matrix(&self, tape: &mut Tape, rows: &[&[usize]]) -> Var {
        let bound = self.bind(tape);
        let n = rows.len();
        let len = rows[0].len();
        let mut mask = Matrix::zeros((n, len));
        for (r, row) in rows.iter().enumerate() {
            for (k, &tok) in row.iter().enumerate() {
                mask[[r, k]] = 1.0;
                if tok == self.pad_id {
                    break;
                }
            }
        }
        let (mut h, mut c) = bound.zero_state(tape, n);
        let mut inputs = vec![self.start_id; n];
        let mut cols = Vec::with_capacity(len);
        for k in 0..len {
            let x = tape.gather_rows(bound.emb, &inputs);
            let (h2, c2, logits) = bound.step(tape, x, h, c);
            h = h2;
            c = c2;
            let logp = tape.log_softmax_rows(logits);
            let targets: Vec<usize> = rows.iter().map(|row| row[k]).collect();
            cols.push(tape.pick(logp, &targets));
            inputs = targets;
        }
        let all = tape.concat_cols(&cols);
        let m = tape.leaf(mask);
        tape.mul(all, m)
    }
}

impl BoundLm {
    pub fn zero_state(&self, tape: &mut Tape, rows: usize) -> (Var, Var) {
        let h = tape.leaf(Matrix::zeros((rows, self.hidden)));
        let c = tape.leaf(Matrix::zeros((rows, self.hidden)));
        (h, c)
    }

    /// One LSTM step from embedded input `x`; returns `(h, c, logits)`.
    pub fn step(&self, tape: &mut Tape, x: Var, h: Var, c: Var) -> (Var, Var, Var) {
        let hd = self.hidden;
        let xw = tape.matmul(x, self.wx);
        let hw = tape.matmul(h, self.wh);
        let gates = tape.add(xw, hw);
        let gates = tape.add(gates, self.bias);
        let i = tape.slice_cols(gates, 0, hd);
        let i = tape.sigmoid(i);
        let f = tape.slice_cols(gates, hd, 2 * hd);
        let f = tape.sigmoid(f);
        let g = tape.slice_cols(gates, 2 * hd, 3 * hd);
        let g = tape.tanh(g);
        let o = tape.slice_cols(gates, 3 * hd, 4 * hd);
        let o = tape.sigmoid(o);
        let fc = tape.mul(f, c);
        let ig = tape.mul(i, g);
        let c = tape.add(fc, ig);
        let tc = tape.tanh(c);
        let h = tape.mul(o, tc);
        let logits = tape.matmul(h, self.wo);
        let logits = tape.add(logits, self.bo);
        let logits = tape.add(logits, self.mask);
        (h, c, logits)
    }
}
