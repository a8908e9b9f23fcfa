//! A small reverse-mode automatic differentiation tape over dense `f64`
//! matrices.
//!
//! Every model in the crate records its forward pass on a [`Tape`]; calling
//! [`Tape::backward`] on a scalar node yields [`Gradients`] for every
//! parameter and every input leaf that took part. Vectors are represented as
//! `1 × n` or `m × 1` matrices, and binary element-wise operations broadcast
//! their right operand over rows, columns or both.
//!
//! Parameters live in a [`ParamStore`]. A store has a process-unique id, so
//! one tape can mix parameters of several models (the relaxed training path
//! differentiates through the generator and the discriminator at once).

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};

use ndarray::{s, Array2, Axis, Zip};

pub type Matrix = Array2<f64>;

static NEXT_STORE_ID: AtomicU64 = AtomicU64::new(1);

/// Named, ordered collection of trainable matrices.
#[derive(Debug)]
pub struct ParamStore {
    id: u64,
    names: Vec<String>,
    values: Vec<Matrix>,
}

impl Clone for ParamStore {
    fn clone(&self) -> Self {
        // A clone is a distinct parameter set as far as a tape is concerned.
        ParamStore {
            id: NEXT_STORE_ID.fetch_add(1, Ordering::Relaxed),
            names: self.names.clone(),
            values: self.values.clone(),
        }
    }
}

impl Default for ParamStore {
    fn default() -> Self {
        Self::new()
    }
}

impl ParamStore {
    pub fn new() -> Self {
        ParamStore {
            id: NEXT_STORE_ID.fetch_add(1, Ordering::Relaxed),
            names: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn push(&mut self, name: impl Into<String>, value: Matrix) -> usize {
        self.names.push(name.into());
        self.values.push(value);
        self.values.len() - 1
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, idx: usize) -> &Matrix {
        &self.values[idx]
    }

    pub fn get_mut(&mut self, idx: usize) -> &mut Matrix {
        &mut self.values[idx]
    }

    pub fn name(&self, idx: usize) -> &str {
        &self.names[idx]
    }

    pub fn values(&self) -> &[Matrix] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Matrix] {
        &mut self.values
    }

    /// Total number of scalar parameters.
    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(|m| m.len()).sum()
    }

    /// Order-sensitive FNV-1a hash over the bit patterns of every parameter.
    pub fn checksum(&self) -> u64 {
        let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
        for m in &self.values {
            for &x in m.iter() {
                for b in x.to_bits().to_le_bytes() {
                    hash ^= b as u64;
                    hash = hash.wrapping_mul(0x0100_0000_01b3);
                }
            }
        }
        hash
    }

    /// Flat view of all parameters, in store order.
    pub fn flatten(&self) -> Vec<f64> {
        self.values.iter().flat_map(|m| m.iter().copied()).collect()
    }

    /// Reads and writes a single scalar addressed by its flat index.
    pub fn scalar(&self, flat: usize) -> f64 {
        let (i, j) = self.locate(flat);
        self.values[i].as_slice_memory_order().expect("contiguous")[j]
    }

    pub fn set_scalar(&mut self, flat: usize, value: f64) {
        let (i, j) = self.locate(flat);
        self.values[i]
            .as_slice_memory_order_mut()
            .expect("contiguous")[j] = value;
    }

    fn locate(&self, mut flat: usize) -> (usize, usize) {
        for (i, m) in self.values.iter().enumerate() {
            if flat < m.len() {
                return (i, flat);
            }
            flat -= m.len();
        }
        panic!("flat parameter index out of range");
    }

    pub(crate) fn id(&self) -> u64 {
        self.id
    }
}

/// Handle to a node recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    Exp(Var),
    Ln(Var),
    LogSigmoid(Var),
    SoftmaxRows(Var),
    LogSoftmaxRows(Var),
    GatherRows(Var, Vec<usize>),
    Pick(Var, Vec<usize>),
    SliceCols(Var, usize),
    SliceRows(Var, usize),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    Max(Vec<Var>, Array2<u32>),
    SumAll(Var),
    SumCols(Var),
}

#[derive(Debug)]
struct Node {
    value: Matrix,
    op: Op,
}

/// Records a computation for later differentiation.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: HashMap<(u64, usize), Var>,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

/// Row-wise softmax, numerically stabilised by the row maximum.
pub fn softmax_rows(a: &Matrix) -> Matrix {
    let mut out = a.clone();
    for mut row in out.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |m, &x| m.max(x));
        row.mapv_inplace(|x| (x - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|x| x / sum);
    }
    out
}

fn log_softmax_rows(a: &Matrix) -> Matrix {
    let mut out = a.clone();
    for mut row in out.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |m, &x| m.max(x));
        let lse = max + row.fold(0.0, |acc, &x| acc + (x - max).exp()).ln();
        row.mapv_inplace(|x| x - lse);
    }
    out
}

pub(crate) fn sigmoid_scalar(x: f64) -> f64 {
    sigmoid(x)
}

pub(crate) fn log_sigmoid_scalar(x: f64) -> f64 {
    log_sigmoid(x)
}

fn broadcastable(a: &Matrix, b: &Matrix) -> bool {
    let (m, n) = a.dim();
    let (p, q) = b.dim();
    (p == m || p == 1) && (q == n || q == 1)
}

fn reduce_to(grad: Matrix, shape: (usize, usize)) -> Matrix {
    let mut g = grad;
    if shape.0 == 1 && g.nrows() != 1 {
        g = g.sum_axis(Axis(0)).insert_axis(Axis(0));
    }
    if shape.1 == 1 && g.ncols() != 1 {
        g = g.sum_axis(Axis(1)).insert_axis(Axis(1));
    }
    g
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Matrix, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    /// Value of a `1 × 1` node.
    pub fn scalar(&self, v: Var) -> f64 {
        let m = self.value(v);
        debug_assert_eq!(m.dim(), (1, 1));
        m[[0, 0]]
    }

    /// Records a leaf. Gradients with respect to leaves are available through
    /// [`Gradients::wrt`].
    pub fn leaf(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf)
    }

    /// Records parameter `idx` of `store`, reusing the node if it is already
    /// on this tape.
    pub fn param(&mut self, store: &ParamStore, idx: usize) -> Var {
        let key = (store.id(), idx);
        if let Some(&v) = self.params.get(&key) {
            return v;
        }
        let v = self.push(store.get(idx).clone(), Op::Leaf);
        self.params.insert(key, v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).dot(self.value(b));
        self.push(value, Op::MatMul(a, b))
    }

    fn binary(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Matrix {
        let (va, vb) = (self.value(a), self.value(b));
        assert!(
            broadcastable(va, vb),
            "cannot broadcast {:?} onto {:?}",
            vb.dim(),
            va.dim()
        );
        let vb = vb.broadcast(va.dim()).expect("broadcast");
        let mut out = va.clone();
        Zip::from(&mut out).and(&vb).for_each(|x, &y| *x = f(*x, y));
        out
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let value = self.binary(a, b, |x, y| x + y);
        self.push(value, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let value = self.binary(a, b, |x, y| x - y);
        self.push(value, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let value = self.binary(a, b, |x, y| x * y);
        self.push(value, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let value = self.value(a).mapv(|x| x * c);
        self.push(value, Op::Scale(a, c))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(sigmoid);
        self.push(value, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(f64::tanh);
        self.push(value, Op::Tanh(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(|x| x.max(0.0));
        self.push(value, Op::Relu(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(f64::exp);
        self.push(value, Op::Exp(a))
    }

    pub fn ln(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(f64::ln);
        self.push(value, Op::Ln(a))
    }

    /// `log σ(x)`, stable for large `|x|`.
    pub fn log_sigmoid(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(log_sigmoid);
        self.push(value, Op::LogSigmoid(a))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let value = softmax_rows(self.value(a));
        self.push(value, Op::SoftmaxRows(a))
    }

    pub fn log_softmax_rows(&mut self, a: Var) -> Var {
        let value = log_softmax_rows(self.value(a));
        self.push(value, Op::LogSoftmaxRows(a))
    }

    /// Selects rows `ids` of `table` (an embedding lookup).
    pub fn gather_rows(&mut self, table: Var, ids: &[usize]) -> Var {
        let t = self.value(table);
        let mut out = Matrix::zeros((ids.len(), t.ncols()));
        for (r, &id) in ids.iter().enumerate() {
            out.row_mut(r).assign(&t.row(id));
        }
        self.push(out, Op::GatherRows(table, ids.to_vec()))
    }

    /// Picks `a[i, cols[i]]` from each row, giving an `m × 1` column.
    pub fn pick(&mut self, a: Var, cols: &[usize]) -> Var {
        let va = self.value(a);
        assert_eq!(va.nrows(), cols.len());
        let out = Matrix::from_shape_fn((cols.len(), 1), |(i, _)| va[[i, cols[i]]]);
        self.push(out, Op::Pick(a, cols.to_vec()))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Var {
        let value = self.value(a).slice(s![.., start..end]).to_owned();
        self.push(value, Op::SliceCols(a, start))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, end: usize) -> Var {
        let value = self.value(a).slice(s![start..end, ..]).to_owned();
        self.push(value, Op::SliceRows(a, start))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let value = ndarray::concatenate(Axis(1), &views).expect("row counts agree");
        self.push(value, Op::ConcatCols(parts.to_vec()))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let value = ndarray::concatenate(Axis(0), &views).expect("column counts agree");
        self.push(value, Op::ConcatRows(parts.to_vec()))
    }

    /// Element-wise maximum over same-shaped nodes. Ties go to the earliest.
    pub fn max(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let mut value = self.value(parts[0]).clone();
        let mut arg = Array2::<u32>::zeros(value.dim());
        for (k, &p) in parts.iter().enumerate().skip(1) {
            Zip::from(&mut value)
                .and(&mut arg)
                .and(self.value(p))
                .for_each(|v, a, &x| {
                    if x > *v {
                        *v = x;
                        *a = k as u32;
                    }
                });
        }
        self.push(value, Op::Max(parts.to_vec(), arg))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let value = Matrix::from_elem((1, 1), self.value(a).sum());
        self.push(value, Op::SumAll(a))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.value(a).len() as f64;
        let s = self.sum(a);
        self.scale(s, 1.0 / n)
    }

    /// Sums each row, giving an `m × 1` column.
    pub fn sum_cols(&mut self, a: Var) -> Var {
        let value = self.value(a).sum_axis(Axis(1)).insert_axis(Axis(1));
        self.push(value, Op::SumCols(a))
    }

    /// Adds up a list of same-shaped nodes.
    pub fn add_all(&mut self, parts: &[Var]) -> Var {
        let mut acc = parts[0];
        for &p in &parts[1..] {
            acc = self.add(acc, p);
        }
        acc
    }

    /// Reverse pass from a `1 × 1` node.
    pub fn backward(&self, root: Var) -> Gradients {
        assert_eq!(self.value(root).dim(), (1, 1), "backward needs a scalar root");
        let mut grads: Vec<Option<Matrix>> = vec![None; root.0 + 1];
        grads[root.0] = Some(Matrix::from_elem((1, 1), 1.0));

        fn acc(grads: &mut [Option<Matrix>], v: Var, g: Matrix) {
            match &mut grads[v.0] {
                Some(existing) => *existing += &g,
                slot @ None => *slot = Some(g),
            }
        }

        for i in (0..=root.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    let ga = g.dot(&self.value(*b).t());
                    let gb = self.value(*a).t().dot(&g);
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::Add(a, b) => {
                    let shape = self.value(*b).dim();
                    acc(&mut grads, *b, reduce_to(g.clone(), shape));
                    acc(&mut grads, *a, g.clone());
                }
                Op::Sub(a, b) => {
                    let shape = self.value(*b).dim();
                    acc(&mut grads, *b, reduce_to(-&g, shape));
                    acc(&mut grads, *a, g.clone());
                }
                Op::Mul(a, b) => {
                    let va = self.value(*a);
                    let vb = self.value(*b);
                    let vb_full = vb.broadcast(va.dim()).expect("broadcast");
                    let ga = &g * &vb_full;
                    let gb = reduce_to(&g * va, vb.dim());
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::Scale(a, c) => acc(&mut grads, *a, g.mapv(|x| x * c)),
                Op::Sigmoid(a) => {
                    let y = &node.value;
                    let mut ga = g.clone();
                    Zip::from(&mut ga).and(y).for_each(|d, &s| *d *= s * (1.0 - s));
                    acc(&mut grads, *a, ga);
                }
                Op::Tanh(a) => {
                    let y = &node.value;
                    let mut ga = g.clone();
                    Zip::from(&mut ga).and(y).for_each(|d, &t| *d *= 1.0 - t * t);
                    acc(&mut grads, *a, ga);
                }
                Op::Relu(a) => {
                    let x = self.value(*a);
                    let mut ga = g.clone();
                    Zip::from(&mut ga).and(x).for_each(|d, &v| {
                        if v <= 0.0 {
                            *d = 0.0
                        }
                    });
                    acc(&mut grads, *a, ga);
                }
                Op::Exp(a) => acc(&mut grads, *a, &g * &node.value),
                Op::Ln(a) => acc(&mut grads, *a, &g / self.value(*a)),
                Op::LogSigmoid(a) => {
                    let x = self.value(*a);
                    let mut ga = g.clone();
                    Zip::from(&mut ga).and(x).for_each(|d, &v| *d *= sigmoid(-v));
                    acc(&mut grads, *a, ga);
                }
                Op::SoftmaxRows(a) => {
                    let y = &node.value;
                    let mut ga = &g * y;
                    for (mut row, yrow) in ga.rows_mut().into_iter().zip(y.rows()) {
                        let dot = row.sum();
                        Zip::from(&mut row).and(&yrow).for_each(|d, &p| *d -= p * dot);
                    }
                    acc(&mut grads, *a, ga);
                }
                Op::LogSoftmaxRows(a) => {
                    let y = &node.value;
                    let mut ga = g.clone();
                    for (mut row, yrow) in ga.rows_mut().into_iter().zip(y.rows()) {
                        let total = row.sum();
                        Zip::from(&mut row)
                            .and(&yrow)
                            .for_each(|d, &lp| *d -= lp.exp() * total);
                    }
                    acc(&mut grads, *a, ga);
                }
                Op::GatherRows(table, ids) => {
                    let mut gt = Matrix::zeros(self.value(*table).dim());
                    for (r, &id) in ids.iter().enumerate() {
                        let mut dst = gt.row_mut(id);
                        dst += &g.row(r);
                    }
                    acc(&mut grads, *table, gt);
                }
                Op::Pick(a, cols) => {
                    let mut ga = Matrix::zeros(self.value(*a).dim());
                    for (r, &c) in cols.iter().enumerate() {
                        ga[[r, c]] = g[[r, 0]];
                    }
                    acc(&mut grads, *a, ga);
                }
                Op::SliceCols(a, start) => {
                    let mut ga = Matrix::zeros(self.value(*a).dim());
                    ga.slice_mut(s![.., *start..*start + g.ncols()]).assign(&g);
                    acc(&mut grads, *a, ga);
                }
                Op::SliceRows(a, start) => {
                    let mut ga = Matrix::zeros(self.value(*a).dim());
                    ga.slice_mut(s![*start..*start + g.nrows(), ..]).assign(&g);
                    acc(&mut grads, *a, ga);
                }
                Op::ConcatCols(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let w = self.value(p).ncols();
                        acc(&mut grads, p, g.slice(s![.., offset..offset + w]).to_owned());
                        offset += w;
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let h = self.value(p).nrows();
                        acc(&mut grads, p, g.slice(s![offset..offset + h, ..]).to_owned());
                        offset += h;
                    }
                }
                Op::Max(parts, arg) => {
                    for (k, &p) in parts.iter().enumerate() {
                        let mut gp = g.clone();
                        Zip::from(&mut gp).and(arg).for_each(|d, &a| {
                            if a as usize != k {
                                *d = 0.0
                            }
                        });
                        acc(&mut grads, p, gp);
                    }
                }
                Op::SumAll(a) => {
                    let ga = Matrix::from_elem(self.value(*a).dim(), g[[0, 0]]);
                    acc(&mut grads, *a, ga);
                }
                Op::SumCols(a) => {
                    let ga = g
                        .broadcast(self.value(*a).dim())
                        .expect("column broadcast")
                        .to_owned();
                    acc(&mut grads, *a, ga);
                }
            }
            // Leaves keep their gradient for lookup.
            if matches!(node.op, Op::Leaf) {
                grads[i] = Some(g);
            }
        }
        Gradients {
            grads,
            params: self.params.clone(),
        }
    }
}

/// Result of [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
    params: HashMap<(u64, usize), Var>,
}

impl Gradients {
    /// Gradient with respect to a leaf, if the root depended on it.
    pub fn wrt(&self, v: Var) -> Option<&Matrix> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradients for every parameter of `store`, zero where unused.
    pub fn for_store(&self, store: &ParamStore) -> Vec<Matrix> {
        (0..store.len())
            .map(|idx| {
                self.params
                    .get(&(store.id(), idx))
                    .and_then(|&v| self.wrt(v))
                    .cloned()
                    .unwrap_or_else(|| Matrix::zeros(store.get(idx).dim()))
            })
            .collect()
    }
}

/// Flattens per-parameter gradients in store order.
pub fn flatten_grads(grads: &[Matrix]) -> Vec<f64> {
    grads.iter().flat_map(|m| m.iter().copied()).collect()
}
