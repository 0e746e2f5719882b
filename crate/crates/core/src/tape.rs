//! Reverse-mode differentiation over a linear tape.
//!
//! Every op appends a node holding its output value; [`Tape::backward`]
//! walks the nodes in exact reverse order and accumulates gradients into the
//! inputs. Parameters are bound by name from a [`ParamStore`] and their
//! gradients copied back with [`Tape::accumulate_param_grads`].

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;
use core::sync::atomic::{AtomicU32, Ordering};

use crate::edgeset::NeighborIndex;
use crate::error::{Error, Result};
use crate::kernels::{self, gemm};
use crate::params::ParamStore;
use crate::real::Real;
use crate::tensor::Tensor;

static NEXT_TAPE_ID: AtomicU32 = AtomicU32::new(1);

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// `choice` marker of a candidate node that records the entropy instead of
/// a log-probability.
const ENTROPY: usize = usize::MAX;

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var {
    tape: u32,
    idx: u32,
}

impl Var {
    pub fn index(self) -> usize {
        self.idx as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum State {
    Recording,
    Consumed,
}

#[derive(Debug, Clone)]
enum Op<T: Real> {
    Leaf,
    MatMul { a: usize, b: usize, b_t: bool },
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, T),
    AddBias(usize, usize),
    Tanh(usize),
    Sigmoid(usize),
    Relu(usize),
    LayerNorm { x: usize, gamma: usize, beta: usize, rstd: Vec<T> },
    Gather { table: usize, ids: Vec<usize> },
    ConcatCols(Vec<usize>),
    ConcatRows(Vec<usize>),
    SliceCols { x: usize, start: usize },
    SegmentSoftmax { x: usize, offsets: Arc<[usize]> },
    SoftmaxRows(usize),
    LogSoftmaxRows(usize),
    EdgeScores { q: usize, k: usize, index: Arc<NeighborIndex>, col: usize, width: usize, scale: T },
    EdgeAggregate { w: usize, v: usize, index: Arc<NeighborIndex>, col: usize, width: usize },
    Lstm { xg: usize, h: usize, c: usize, w_hh: usize, b: usize, gates: Vec<T> },
    SelectRow { x: usize, row: usize },
    Sum(usize),
    Dot(usize, usize),
    AddScalars(Vec<usize>),
    CrossEntropy { logits: usize, targets: Vec<(usize, usize)>, smoothing: T, probs: Vec<T> },
    CandidateLogProb {
        nodes: usize,
        dist: Option<usize>,
        g: usize,
        buckets: Vec<usize>,
        allowed: Vec<bool>,
        choice: usize,
        probs: Vec<T>,
    },
}

#[derive(Debug, Clone)]
struct Node<T: Real> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Instrumentation collected while recording.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Counters {
    /// Attention score evaluations (query·key products).
    pub score_evals: u64,
}

/// Recording of one forward pass.
#[derive(Debug)]
pub struct Tape<T: Real = f64> {
    id: u32,
    nodes: Vec<Node<T>>,
    grads: Vec<Option<Vec<T>>>,
    state: State,
    bound: BTreeMap<String, Var>,
    counters: Counters,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
            grads: Vec::new(),
            state: State::Recording,
            bound: BTreeMap::new(),
            counters: Counters::default(),
        }
    }

    /// Clears the tape for a fresh forward pass. Old handles become foreign.
    pub fn reset(&mut self) {
        *self = Self::new();
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn counters(&self) -> Counters {
        self.counters
    }

    pub fn count_scores(&mut self, n: u64) {
        self.counters.score_evals += n;
    }

    /// Elements held by op outputs (leaves excluded).
    pub fn activation_elements(&self) -> usize {
        self.nodes
            .iter()
            .filter(|n| !matches!(n.op, Op::Leaf))
            .map(|n| n.value.len())
            .sum()
    }

    fn check(&self, v: Var) -> Result<usize> {
        if v.tape != self.id || v.index() >= self.nodes.len() {
            return Err(Error::ForeignVar);
        }
        Ok(v.index())
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool, name: &'static str) -> Result<Var> {
        if self.state == State::Consumed {
            return Err(Error::TapeConsumed);
        }
        if !value.is_finite() {
            return Err(Error::NonFinite(name));
        }
        let idx = self.nodes.len() as u32;
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var { tape: self.id, idx })
    }

    fn rg(&self, ids: &[usize]) -> bool {
        ids.iter().any(|&i| self.nodes[i].requires_grad)
    }

    /// Differentiable leaf.
    pub fn var(&mut self, t: Tensor<T>) -> Result<Var> {
        self.push(t, Op::Leaf, true, "leaf")
    }

    /// Non-differentiable leaf.
    pub fn constant(&mut self, t: Tensor<T>) -> Result<Var> {
        self.push(t, Op::Leaf, false, "constant")
    }

    /// Binds a named parameter; repeated binds return the same handle.
    pub fn param(&mut self, store: &ParamStore<T>, name: &str) -> Result<Var> {
        if let Some(&v) = self.bound.get(name) {
            return Ok(v);
        }
        let t = store.get(name)?;
        let leaf = Tensor::new(t.shape(), t.values().to_vec())?;
        let v = self.push(leaf, Op::Leaf, t.requires_grad, "param")?;
        self.bound.insert(name.to_string(), v);
        Ok(v)
    }

    pub fn bound_params(&self) -> impl Iterator<Item = (&str, Var)> {
        self.bound.iter().map(|(k, &v)| (k.as_str(), v))
    }

    pub fn value(&self, v: Var) -> Result<&Tensor<T>> {
        let i = self.check(v)?;
        Ok(&self.nodes[i].value)
    }

    pub fn grad(&self, v: Var) -> Result<Option<&[T]>> {
        let i = self.check(v)?;
        Ok(self.grads.get(i).and_then(|g| g.as_deref()))
    }

    // ---- ops -----------------------------------------------------------

    fn matmul_impl(&mut self, a: Var, b: Var, b_t: bool) -> Result<Var> {
        let (ia, ib) = (self.check(a)?, self.check(b)?);
        let (sa, sb) = (self.nodes[ia].value.shape(), self.nodes[ib].value.shape());
        if sa.len() != 2 || sb.len() != 2 {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                lhs: sa.to_vec(),
                rhs: sb.to_vec(),
            });
        }
        let (m, k) = (sa[0], sa[1]);
        let (kb, n) = if b_t { (sb[1], sb[0]) } else { (sb[0], sb[1]) };
        if k != kb {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                lhs: sa.to_vec(),
                rhs: sb.to_vec(),
            });
        }
        let mut out = vec![T::zero(); m * n];
        gemm(
            m,
            k,
            n,
            self.nodes[ia].value.values(),
            false,
            self.nodes[ib].value.values(),
            b_t,
            T::zero(),
            &mut out,
        );
        let rg = self.rg(&[ia, ib]);
        self.push(Tensor::new(&[m, n], out)?, Op::MatMul { a: ia, b: ib, b_t }, rg, "matmul")
    }

    /// `a[m×k] · b[k×n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_impl(a, b, false)
    }

    /// `a[m×k] · b[n×k]ᵀ`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_impl(a, b, true)
    }

    fn same_shape(&self, op: &'static str, a: usize, b: usize) -> Result<()> {
        let (sa, sb) = (self.nodes[a].value.shape(), self.nodes[b].value.shape());
        if sa != sb {
            return Err(Error::ShapeMismatch {
                op,
                lhs: sa.to_vec(),
                rhs: sb.to_vec(),
            });
        }
        Ok(())
    }

    fn zip_op(&mut self, a: Var, b: Var, name: &'static str, f: impl Fn(T, T) -> T, op: fn(usize, usize) -> Op<T>) -> Result<Var> {
        let (ia, ib) = (self.check(a)?, self.check(b)?);
        self.same_shape(name, ia, ib)?;
        let va = &self.nodes[ia].value;
        let vb = &self.nodes[ib].value;
        let out: Vec<T> = va.values().iter().zip(vb.values()).map(|(&x, &y)| f(x, y)).collect();
        let t = Tensor::new(va.shape(), out)?;
        let rg = self.rg(&[ia, ib]);
        self.push(t, op(ia, ib), rg, name)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_op(a, b, "add", |x, y| x + y, Op::Add)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_op(a, b, "sub", |x, y| x - y, Op::Sub)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_op(a, b, "mul", |x, y| x * y, Op::Mul)
    }

    pub fn scale(&mut self, a: Var, s: T) -> Result<Var> {
        let ia = self.check(a)?;
        let v = &self.nodes[ia].value;
        let t = Tensor::new(v.shape(), v.values().iter().map(|&x| x * s).collect())?;
        let rg = self.rg(&[ia]);
        self.push(t, Op::Scale(ia, s), rg, "scale")
    }

    /// Adds a bias vector to every row of `x`.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (ix, ib) = (self.check(x)?, self.check(bias)?);
        let c = self.nodes[ix].value.cols();
        if self.nodes[ib].value.len() != c {
            return Err(Error::ShapeMismatch {
                op: "add_bias",
                lhs: self.nodes[ix].value.shape().to_vec(),
                rhs: self.nodes[ib].value.shape().to_vec(),
            });
        }
        let bv = self.nodes[ib].value.values();
        let xv = &self.nodes[ix].value;
        let out: Vec<T> = xv
            .values()
            .chunks_exact(c)
            .flat_map(|row| row.iter().zip(bv).map(|(&a, &b)| a + b))
            .collect();
        let t = Tensor::new(xv.shape(), out)?;
        let rg = self.rg(&[ix, ib]);
        self.push(t, Op::AddBias(ix, ib), rg, "add_bias")
    }

    /// `x·w + b`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let y = self.matmul(x, w)?;
        match b {
            Some(b) => self.add_bias(y, b),
            None => Ok(y),
        }
    }

    fn map_op(&mut self, x: Var, name: &'static str, f: impl Fn(T) -> T, op: fn(usize) -> Op<T>) -> Result<Var> {
        let ix = self.check(x)?;
        let v = &self.nodes[ix].value;
        let t = Tensor::new(v.shape(), v.values().iter().map(|&a| f(a)).collect())?;
        let rg = self.rg(&[ix]);
        self.push(t, op(ix), rg, name)
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        self.map_op(x, "tanh", |a| a.tanh(), Op::Tanh)
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.map_op(x, "sigmoid", kernels::sigmoid, Op::Sigmoid)
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.map_op(x, "relu", |a| if a > T::zero() { a } else { T::zero() }, Op::Relu)
    }

    /// Row-wise layer normalization with learned scale and offset.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        let (ix, ig, ib) = (self.check(x)?, self.check(gamma)?, self.check(beta)?);
        let c = self.nodes[ix].value.cols();
        if self.nodes[ig].value.len() != c || self.nodes[ib].value.len() != c {
            return Err(Error::ShapeMismatch {
                op: "layer_norm",
                lhs: self.nodes[ix].value.shape().to_vec(),
                rhs: self.nodes[ig].value.shape().to_vec(),
            });
        }
        let eps = T::from_f64(LAYER_NORM_EPS);
        let inv_c = T::one() / T::from_f64(c as f64);
        let g = self.nodes[ig].value.values();
        let bta = self.nodes[ib].value.values();
        let xv = &self.nodes[ix].value;
        let mut out = Vec::with_capacity(xv.len());
        let mut rstds = Vec::with_capacity(xv.rows());
        for row in xv.values().chunks_exact(c) {
            let mean = row.iter().copied().sum::<T>() * inv_c;
            let var = row.iter().map(|&a| (a - mean) * (a - mean)).sum::<T>() * inv_c;
            let rstd = T::one() / (var + eps).sqrt();
            rstds.push(rstd);
            for j in 0..c {
                out.push((row[j] - mean) * rstd * g[j] + bta[j]);
            }
        }
        let t = Tensor::new(xv.shape(), out)?;
        let rg = self.rg(&[ix, ig, ib]);
        self.push(
            t,
            Op::LayerNorm {
                x: ix,
                gamma: ig,
                beta: ib,
                rstd: rstds,
            },
            rg,
            "layer_norm",
        )
    }

    /// Selects rows of `table` (embedding lookup).
    pub fn gather_rows(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let it = self.check(table)?;
        let tv = &self.nodes[it].value;
        let (rows, c) = (tv.rows(), tv.cols());
        if ids.is_empty() {
            return Err(Error::InvalidArgument("gather_rows: empty id list".into()));
        }
        let mut out = Vec::with_capacity(ids.len() * c);
        for &id in ids {
            if id >= rows {
                return Err(Error::IndexOutOfRange { index: id, len: rows });
            }
            out.extend_from_slice(tv.row(id));
        }
        let t = Tensor::new(&[ids.len(), c], out)?;
        let rg = self.rg(&[it]);
        self.push(
            t,
            Op::Gather {
                table: it,
                ids: ids.to_vec(),
            },
            rg,
            "gather_rows",
        )
    }

    pub fn embedding_lookup(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        self.gather_rows(table, ids)
    }

    /// Concatenates matrices with equal row counts along columns.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let ids = parts.iter().map(|&p| self.check(p)).collect::<Result<Vec<_>>>()?;
        let first = *ids.first().ok_or_else(|| Error::InvalidArgument("concat of nothing".into()))?;
        let rows = self.nodes[first].value.rows();
        for &i in &ids {
            if self.nodes[i].value.rows() != rows {
                return Err(Error::ShapeMismatch {
                    op: "concat_cols",
                    lhs: self.nodes[first].value.shape().to_vec(),
                    rhs: self.nodes[i].value.shape().to_vec(),
                });
            }
        }
        let total: usize = ids.iter().map(|&i| self.nodes[i].value.cols()).sum();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &i in &ids {
                out.extend_from_slice(self.nodes[i].value.row(r));
            }
        }
        let t = Tensor::new(&[rows, total], out)?;
        let rg = self.rg(&ids);
        self.push(t, Op::ConcatCols(ids), rg, "concat_cols")
    }

    /// Alias of [`Tape::concat_cols`] for row vectors.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        self.concat_cols(parts)
    }

    /// Stacks matrices with equal column counts.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let ids = parts.iter().map(|&p| self.check(p)).collect::<Result<Vec<_>>>()?;
        let first = *ids.first().ok_or_else(|| Error::InvalidArgument("concat of nothing".into()))?;
        let cols = self.nodes[first].value.cols();
        let mut rows = 0;
        let mut out = Vec::new();
        for &i in &ids {
            let v = &self.nodes[i].value;
            if v.cols() != cols {
                return Err(Error::ShapeMismatch {
                    op: "concat_rows",
                    lhs: self.nodes[first].value.shape().to_vec(),
                    rhs: v.shape().to_vec(),
                });
            }
            rows += v.rows();
            out.extend_from_slice(v.values());
        }
        let t = Tensor::new(&[rows, cols], out)?;
        let rg = self.rg(&ids);
        self.push(t, Op::ConcatRows(ids), rg, "concat_rows")
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, width: usize) -> Result<Var> {
        let ix = self.check(x)?;
        let v = &self.nodes[ix].value;
        let (rows, c) = (v.rows(), v.cols());
        if width == 0 || start + width > c {
            return Err(Error::InvalidArgument("slice_cols out of range".into()));
        }
        let mut out = Vec::with_capacity(rows * width);
        for r in 0..rows {
            out.extend_from_slice(&v.row(r)[start..start + width]);
        }
        let t = Tensor::new(&[rows, width], out)?;
        let rg = self.rg(&[ix]);
        self.push(t, Op::SliceCols { x: ix, start }, rg, "slice_cols")
    }

    /// Softmax within each segment `offsets[s]..offsets[s+1]` of a flat
    /// score vector.
    pub fn segment_softmax(&mut self, scores: Var, offsets: Arc<[usize]>) -> Result<Var> {
        let ix = self.check(scores)?;
        let v = &self.nodes[ix].value;
        if offsets.first() != Some(&0) || offsets.last() != Some(&v.len()) {
            return Err(Error::InvalidArgument("segments must partition the scores".into()));
        }
        let mut out = v.values().to_vec();
        for (s, w) in offsets.windows(2).enumerate() {
            if w[1] <= w[0] {
                return Err(Error::EmptySegment(s));
            }
            kernels::softmax_in_place(&mut out[w[0]..w[1]]);
        }
        let t = Tensor::new(v.shape(), out)?;
        let rg = self.rg(&[ix]);
        self.push(t, Op::SegmentSoftmax { x: ix, offsets }, rg, "segment_softmax")
    }

    /// Row-wise softmax. Entries where `mask` is false get probability 0.
    pub fn softmax_rows(&mut self, x: Var, mask: Option<&[bool]>) -> Result<Var> {
        let ix = self.check(x)?;
        let v = &self.nodes[ix].value;
        let c = v.cols();
        let mut out = v.values().to_vec();
        if let Some(m) = mask {
            if m.len() != out.len() {
                return Err(Error::InvalidArgument("mask length".into()));
            }
            for (o, &keep) in out.iter_mut().zip(m) {
                if !keep {
                    *o = T::neg_infinity();
                }
            }
        }
        for (r, row) in out.chunks_exact_mut(c).enumerate() {
            if row.iter().all(|x| *x == T::neg_infinity()) {
                return Err(Error::EmptySegment(r));
            }
            kernels::softmax_in_place(row);
        }
        let t = Tensor::new(v.shape(), out)?;
        let rg = self.rg(&[ix]);
        self.push(t, Op::SoftmaxRows(ix), rg, "softmax_rows")
    }

    pub fn log_softmax(&mut self, x: Var) -> Result<Var> {
        let ix = self.check(x)?;
        let v = &self.nodes[ix].value;
        let c = v.cols();
        let mut out = v.values().to_vec();
        for row in out.chunks_exact_mut(c) {
            let all = vec![true; c];
            let lse = kernels::log_sum_exp_masked(row, &all);
            row.iter_mut().for_each(|a| *a -= lse);
        }
        let t = Tensor::new(v.shape(), out)?;
        let rg = self.rg(&[ix]);
        self.push(t, Op::LogSoftmaxRows(ix), rg, "log_softmax")
    }

    /// `scale · q_i·k_j` for every `(i, j)` of `index`, restricted to the
    /// column block `col..col+width` of `q` and `k`.
    pub fn edge_scores(&mut self, q: Var, k: Var, index: &Arc<NeighborIndex>, col: usize, width: usize, scale: T) -> Result<Var> {
        let (iq, ik) = (self.check(q)?, self.check(k)?);
        let (qv, kv) = (&self.nodes[iq].value, &self.nodes[ik].value);
        let n = index.num_nodes();
        if qv.rows() != n || kv.rows() != n || col + width > qv.cols() || col + width > kv.cols() {
            return Err(Error::ShapeMismatch {
                op: "edge_scores",
                lhs: qv.shape().to_vec(),
                rhs: kv.shape().to_vec(),
            });
        }
        let mut out = Vec::with_capacity(index.num_entries());
        for i in 0..n {
            let qi = &qv.row(i)[col..col + width];
            for &j in index.neighbors(i) {
                out.push(kernels::dot(qi, &kv.row(j as usize)[col..col + width]) * scale);
            }
        }
        if out.is_empty() {
            return Err(Error::EmptySegment(0));
        }
        self.counters.score_evals += out.len() as u64;
        let len = out.len();
        let t = Tensor::new(&[len], out)?;
        let rg = self.rg(&[iq, ik]);
        self.push(
            t,
            Op::EdgeScores {
                q: iq,
                k: ik,
                index: index.clone(),
                col,
                width,
                scale,
            },
            rg,
            "edge_scores",
        )
    }

    /// `out_i = Σ_{j∈N(i)} w_ij · v_j[col..col+width]`.
    pub fn edge_aggregate(&mut self, weights: Var, v: Var, index: &Arc<NeighborIndex>, col: usize, width: usize) -> Result<Var> {
        let (iw, iv) = (self.check(weights)?, self.check(v)?);
        let (wv, vv) = (&self.nodes[iw].value, &self.nodes[iv].value);
        let n = index.num_nodes();
        if wv.len() != index.num_entries() || vv.rows() != n || col + width > vv.cols() {
            return Err(Error::ShapeMismatch {
                op: "edge_aggregate",
                lhs: wv.shape().to_vec(),
                rhs: vv.shape().to_vec(),
            });
        }
        let mut out = vec![T::zero(); n * width];
        let w = wv.values();
        let mut e = 0;
        for i in 0..n {
            let oi = &mut out[i * width..(i + 1) * width];
            for &j in index.neighbors(i) {
                let vj = &vv.row(j as usize)[col..col + width];
                let a = w[e];
                for (o, &x) in oi.iter_mut().zip(vj) {
                    *o += a * x;
                }
                e += 1;
            }
        }
        let t = Tensor::new(&[n, width], out)?;
        let rg = self.rg(&[iw, iv]);
        self.push(
            t,
            Op::EdgeAggregate {
                w: iw,
                v: iv,
                index: index.clone(),
                col,
                width,
            },
            rg,
            "edge_aggregate",
        )
    }

    /// LSTM step from pre-projected input gates. Returns a `2×hidden`
    /// tensor holding `h` (row 0) and `c` (row 1).
    pub fn lstm_gates(&mut self, xg: Var, h: Var, c: Var, w_hh: Var, b: Var) -> Result<Var> {
        let ids = [self.check(xg)?, self.check(h)?, self.check(c)?, self.check(w_hh)?, self.check(b)?];
        let hd = self.nodes[ids[1]].value.len();
        let ok = self.nodes[ids[0]].value.len() == 4 * hd
            && self.nodes[ids[2]].value.len() == hd
            && self.nodes[ids[3]].value.shape() == [hd, 4 * hd]
            && self.nodes[ids[4]].value.len() == 4 * hd;
        if !ok {
            return Err(Error::ShapeMismatch {
                op: "lstm",
                lhs: self.nodes[ids[0]].value.shape().to_vec(),
                rhs: self.nodes[ids[3]].value.shape().to_vec(),
            });
        }
        let (gates, hn, cn) = kernels::lstm_step(
            self.nodes[ids[0]].value.values(),
            self.nodes[ids[1]].value.values(),
            self.nodes[ids[2]].value.values(),
            self.nodes[ids[3]].value.values(),
            self.nodes[ids[4]].value.values(),
        );
        let mut out = hn;
        out.extend_from_slice(&cn);
        let t = Tensor::new(&[2, hd], out)?;
        let rg = self.rg(&ids);
        self.push(
            t,
            Op::Lstm {
                xg: ids[0],
                h: ids[1],
                c: ids[2],
                w_hh: ids[3],
                b: ids[4],
                gates,
            },
            rg,
            "lstm",
        )
    }

    /// Full LSTM cell: `x[1×d]`, state `h, c [1×hidden]`,
    /// `w_ih [d×4h]`, `w_hh [h×4h]`, `b [4h]`.
    pub fn lstm_cell(&mut self, x: Var, h: Var, c: Var, w_ih: Var, w_hh: Var, b: Var) -> Result<(Var, Var)> {
        let xg = self.matmul(x, w_ih)?;
        let hc = self.lstm_gates(xg, h, c, w_hh, b)?;
        Ok((self.select_row(hc, 0)?, self.select_row(hc, 1)?))
    }

    pub fn select_row(&mut self, x: Var, row: usize) -> Result<Var> {
        let ix = self.check(x)?;
        let v = &self.nodes[ix].value;
        if row >= v.rows() {
            return Err(Error::IndexOutOfRange { index: row, len: v.rows() });
        }
        let t = Tensor::new(&[1, v.cols()], v.row(row).to_vec())?;
        let rg = self.rg(&[ix]);
        self.push(t, Op::SelectRow { x: ix, row }, rg, "select_row")
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let ix = self.check(x)?;
        let s = self.nodes[ix].value.values().iter().copied().sum::<T>();
        let rg = self.rg(&[ix]);
        self.push(Tensor::scalar(s), Op::Sum(ix), rg, "sum")
    }

    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = (self.check(a)?, self.check(b)?);
        if self.nodes[ia].value.len() != self.nodes[ib].value.len() {
            return Err(Error::ShapeMismatch {
                op: "dot",
                lhs: self.nodes[ia].value.shape().to_vec(),
                rhs: self.nodes[ib].value.shape().to_vec(),
            });
        }
        let s = kernels::dot(self.nodes[ia].value.values(), self.nodes[ib].value.values());
        let rg = self.rg(&[ia, ib]);
        self.push(Tensor::scalar(s), Op::Dot(ia, ib), rg, "dot")
    }

    /// Sum of scalar variables, accumulated in the given order.
    pub fn add_scalars(&mut self, xs: &[Var]) -> Result<Var> {
        let ids = xs.iter().map(|&x| self.check(x)).collect::<Result<Vec<_>>>()?;
        let mut s = T::zero();
        for &i in &ids {
            if self.nodes[i].value.len() != 1 {
                return Err(Error::NonScalarLoss(self.nodes[i].value.shape().to_vec()));
            }
            s += self.nodes[i].value.item();
        }
        let rg = self.rg(&ids);
        self.push(Tensor::scalar(s), Op::AddScalars(ids), rg, "add_scalars")
    }

    /// Mean label-smoothed cross entropy over `(row, target)` pairs of a
    /// logits matrix: `-(1-ε)·log p_y - (ε/C)·Σ_c log p_c`.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[(usize, usize)], smoothing: T) -> Result<Var> {
        let il = self.check(logits)?;
        let v = &self.nodes[il].value;
        let (rows, c) = (v.rows(), v.cols());
        if targets.is_empty() {
            return Err(Error::InvalidArgument("cross_entropy: no targets".into()));
        }
        let all = vec![true; c];
        let uniform = smoothing / T::from_f64(c as f64);
        let mut probs = Vec::with_capacity(targets.len() * c);
        let mut loss = T::zero();
        for &(r, y) in targets {
            if r >= rows || y >= c {
                return Err(Error::IndexOutOfRange { index: r.max(y), len: rows.max(c) });
            }
            let row = v.row(r);
            let lse = kernels::log_sum_exp_masked(row, &all);
            let mut term = T::zero();
            for (j, &x) in row.iter().enumerate() {
                let lp = x - lse;
                probs.push(lp.exp());
                let mut q = uniform;
                if j == y {
                    q += T::one() - smoothing;
                }
                term -= q * lp;
            }
            loss += term;
        }
        loss /= T::from_f64(targets.len() as f64);
        let rg = self.rg(&[il]);
        self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits: il,
                targets: targets.to_vec(),
                smoothing,
                probs,
            },
            rg,
            "cross_entropy",
        )
    }

    /// Log-probability of `choice` under the predictor's candidate softmax.
    ///
    /// `nodes` is `M×d`, `dist` (destination steps only) is the `B×d`
    /// distance table, `g` is `1×d`.
    pub fn candidate_log_prob(
        &mut self,
        nodes: Var,
        dist: Option<Var>,
        g: Var,
        buckets: &[usize],
        allowed: &[bool],
        choice: usize,
    ) -> Result<Var> {
        if choice == ENTROPY {
            return Err(Error::DisallowedAction { step: 0, node: choice });
        }
        self.candidate_op(nodes, dist, g, buckets, allowed, &mut |_| choice).map(|(v, _)| v)
    }

    /// Like [`Tape::candidate_log_prob`], but the choice is made by `pick`
    /// from the step's log-probabilities (`-inf` where disallowed). Returns
    /// the recorded log-probability and the chosen node.
    pub fn candidate_pick(
        &mut self,
        nodes: Var,
        dist: Option<Var>,
        g: Var,
        buckets: &[usize],
        allowed: &[bool],
        pick: &mut dyn FnMut(&[T]) -> usize,
    ) -> Result<(Var, usize)> {
        self.candidate_op(nodes, dist, g, buckets, allowed, pick)
    }

    /// Entropy of the same candidate distribution.
    pub fn candidate_entropy(&mut self, nodes: Var, dist: Option<Var>, g: Var, buckets: &[usize], allowed: &[bool]) -> Result<Var> {
        self.candidate_op(nodes, dist, g, buckets, allowed, &mut |_| ENTROPY).map(|(v, _)| v)
    }

    fn candidate_op(
        &mut self,
        nodes: Var,
        dist: Option<Var>,
        g: Var,
        buckets: &[usize],
        allowed: &[bool],
        pick: &mut dyn FnMut(&[T]) -> usize,
    ) -> Result<(Var, usize)> {
        let inodes = self.check(nodes)?;
        let idist = dist.map(|d| self.check(d)).transpose()?;
        let ig = self.check(g)?;
        let d = self.nodes[ig].value.len();
        let m = self.nodes[inodes].value.rows();
        if self.nodes[inodes].value.cols() != d || allowed.len() != m || (idist.is_some() && buckets.len() != m) {
            return Err(Error::ShapeMismatch {
                op: "candidate_log_prob",
                lhs: self.nodes[inodes].value.shape().to_vec(),
                rhs: self.nodes[ig].value.shape().to_vec(),
            });
        }
        let logits = kernels::candidate_logits(
            self.nodes[inodes].value.values(),
            idist.map(|i| self.nodes[i].value.values()),
            self.nodes[ig].value.values(),
            buckets,
            allowed,
        );
        let lse = kernels::log_sum_exp_masked(&logits, allowed);
        let log_probs: Vec<T> = logits
            .iter()
            .zip(allowed)
            .map(|(&l, &a)| if a { l - lse } else { T::neg_infinity() })
            .collect();
        let choice = pick(&log_probs);
        if choice != ENTROPY && (choice >= m || !allowed[choice]) {
            return Err(Error::DisallowedAction { step: 0, node: choice });
        }
        let probs: Vec<T> = logits
            .iter()
            .zip(allowed)
            .map(|(&l, &a)| if a { (l - lse).exp() } else { T::zero() })
            .collect();
        let lp = if choice == ENTROPY {
            let mut h = T::zero();
            for (&l, &p) in logits.iter().zip(&probs) {
                if p > T::zero() {
                    h -= p * (l - lse);
                }
            }
            h
        } else {
            logits[choice] - lse
        };
        let mut ids = vec![inodes, ig];
        ids.extend(idist);
        let rg = self.rg(&ids);
        let v = self.push(
            Tensor::scalar(lp),
            Op::CandidateLogProb {
                nodes: inodes,
                dist: idist,
                g: ig,
                buckets: if idist.is_some() { buckets.to_vec() } else { Vec::new() },
                allowed: allowed.to_vec(),
                choice,
                probs,
            },
            rg,
            "candidate_log_prob",
        )?;
        Ok((v, choice))
    }

    // ---- backward ------------------------------------------------------

    /// Propagates `∂loss/∂x` to every recorded value. Allowed once per
    /// forward pass.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.state == State::Consumed {
            return Err(Error::TapeConsumed);
        }
        let il = self.check(loss)?;
        if self.nodes[il].value.len() != 1 {
            return Err(Error::NonScalarLoss(self.nodes[il].value.shape().to_vec()));
        }
        self.state = State::Consumed;
        let mut grads: Vec<Option<Vec<T>>> = vec![None; self.nodes.len()];
        grads[il] = Some(vec![T::one()]);
        for i in (0..=il).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(dy) = grads[i].take() else { continue };
            self.backprop_node(i, &dy, &mut grads);
            grads[i] = Some(dy);
        }
        for (i, g) in grads.iter().enumerate() {
            if let Some(g) = g {
                if matches!(self.nodes[i].op, Op::Leaf) && g.iter().any(|x| !x.is_finite()) {
                    return Err(Error::NonFinite("backward"));
                }
            }
        }
        self.grads = grads;
        Ok(())
    }

    /// Adds gradients of bound parameters into the store (additive).
    pub fn accumulate_param_grads(&self, store: &mut ParamStore<T>) -> Result<()> {
        if self.state != State::Consumed {
            return Err(Error::InvalidArgument("accumulate before backward".into()));
        }
        for (name, v) in &self.bound {
            if let Some(Some(g)) = self.grads.get(v.index()) {
                store.add_grad(name, g)?;
            }
        }
        Ok(())
    }

    fn backprop_node(&self, i: usize, dy: &[T], grads: &mut [Option<Vec<T>>]) {
        let nodes = &self.nodes;
        let needs = |j: usize| nodes[j].requires_grad;
        match &nodes[i].op {
            Op::Leaf => {}
            Op::MatMul { a, b, b_t } => {
                let (a, b, b_t) = (*a, *b, *b_t);
                let sa = nodes[a].value.shape();
                let (m, k) = (sa[0], sa[1]);
                let n = nodes[i].value.cols();
                if needs(a) {
                    // dA = dC · Bᵀ (B stored k×n) or dC · B (B stored n×k)
                    let ga = acc(grads, a, m * k);
                    gemm(m, n, k, dy, false, nodes[b].value.values(), !b_t, T::one(), ga);
                }
                if needs(b) {
                    if b_t {
                        // B stored n×k: dB = dCᵀ · A
                        let gb = acc(grads, b, n * k);
                        gemm(n, m, k, dy, true, nodes[a].value.values(), false, T::one(), gb);
                    } else {
                        let gb = acc(grads, b, k * n);
                        gemm(k, m, n, nodes[a].value.values(), true, dy, false, T::one(), gb);
                    }
                }
            }
            Op::Add(a, b) => {
                for &j in &[*a, *b] {
                    if needs(j) {
                        add_into(acc(grads, j, dy.len()), dy);
                    }
                }
            }
            Op::Sub(a, b) => {
                if needs(*a) {
                    add_into(acc(grads, *a, dy.len()), dy);
                }
                if needs(*b) {
                    let g = acc(grads, *b, dy.len());
                    for (x, &d) in g.iter_mut().zip(dy) {
                        *x -= d;
                    }
                }
            }
            Op::Mul(a, b) => {
                let (a, b) = (*a, *b);
                if needs(a) {
                    let bv = nodes[b].value.values();
                    let g = acc(grads, a, dy.len());
                    for ((x, &d), &o) in g.iter_mut().zip(dy).zip(bv) {
                        *x += d * o;
                    }
                }
                if needs(b) {
                    let av = nodes[a].value.values();
                    let g = acc(grads, b, dy.len());
                    for ((x, &d), &o) in g.iter_mut().zip(dy).zip(av) {
                        *x += d * o;
                    }
                }
            }
            Op::Scale(a, s) => {
                if needs(*a) {
                    let g = acc(grads, *a, dy.len());
                    for (x, &d) in g.iter_mut().zip(dy) {
                        *x += d * *s;
                    }
                }
            }
            Op::AddBias(x, b) => {
                if needs(*x) {
                    add_into(acc(grads, *x, dy.len()), dy);
                }
                if needs(*b) {
                    let c = nodes[*b].value.len();
                    let g = acc(grads, *b, c);
                    for row in dy.chunks_exact(c) {
                        add_into(g, row);
                    }
                }
            }
            Op::Tanh(x) => {
                if needs(*x) {
                    let y = nodes[i].value.values();
                    let g = acc(grads, *x, dy.len());
                    for ((gx, &d), &yy) in g.iter_mut().zip(dy).zip(y) {
                        *gx += d * (T::one() - yy * yy);
                    }
                }
            }
            Op::Sigmoid(x) => {
                if needs(*x) {
                    let y = nodes[i].value.values();
                    let g = acc(grads, *x, dy.len());
                    for ((gx, &d), &yy) in g.iter_mut().zip(dy).zip(y) {
                        *gx += d * yy * (T::one() - yy);
                    }
                }
            }
            Op::Relu(x) => {
                if needs(*x) {
                    let xv = nodes[*x].value.values();
                    let g = acc(grads, *x, dy.len());
                    for ((gx, &d), &xx) in g.iter_mut().zip(dy).zip(xv) {
                        if xx > T::zero() {
                            *gx += d;
                        }
                    }
                }
            }
            Op::LayerNorm { x, gamma, beta, rstd } => {
                let (x, gamma, beta) = (*x, *gamma, *beta);
                let xv = &nodes[x].value;
                let c = xv.cols();
                let inv_c = T::one() / T::from_f64(c as f64);
                let gv = nodes[gamma].value.values();
                let mut dgamma = vec![T::zero(); c];
                let mut dbeta = vec![T::zero(); c];
                let mut dx = vec![T::zero(); xv.len()];
                for (r, (row, dyr)) in xv.values().chunks_exact(c).zip(dy.chunks_exact(c)).enumerate() {
                    let mean = row.iter().copied().sum::<T>() * inv_c;
                    let rs = rstd[r];
                    let mut mean_dxh = T::zero();
                    let mut mean_dxh_xh = T::zero();
                    for j in 0..c {
                        let xh = (row[j] - mean) * rs;
                        dgamma[j] += dyr[j] * xh;
                        dbeta[j] += dyr[j];
                        let dxh = dyr[j] * gv[j];
                        mean_dxh += dxh;
                        mean_dxh_xh += dxh * xh;
                    }
                    mean_dxh *= inv_c;
                    mean_dxh_xh *= inv_c;
                    for j in 0..c {
                        let xh = (row[j] - mean) * rs;
                        let dxh = dyr[j] * gv[j];
                        dx[r * c + j] = rs * (dxh - mean_dxh - xh * mean_dxh_xh);
                    }
                }
                if needs(x) {
                    add_into(acc(grads, x, dx.len()), &dx);
                }
                if needs(gamma) {
                    add_into(acc(grads, gamma, c), &dgamma);
                }
                if needs(beta) {
                    add_into(acc(grads, beta, c), &dbeta);
                }
            }
            Op::Gather { table, ids } => {
                if needs(*table) {
                    let tv = &nodes[*table].value;
                    let c = tv.cols();
                    let g = acc(grads, *table, tv.len());
                    for (r, &id) in ids.iter().enumerate() {
                        add_into(&mut g[id * c..(id + 1) * c], &dy[r * c..(r + 1) * c]);
                    }
                }
            }
            Op::ConcatCols(parts) => {
                let rows = nodes[i].value.rows();
                let total = nodes[i].value.cols();
                let mut off = 0;
                for &p in parts {
                    let c = nodes[p].value.cols();
                    if needs(p) {
                        let g = acc(grads, p, rows * c);
                        for r in 0..rows {
                            add_into(&mut g[r * c..(r + 1) * c], &dy[r * total + off..r * total + off + c]);
                        }
                    }
                    off += c;
                }
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for &p in parts {
                    let len = nodes[p].value.len();
                    if needs(p) {
                        add_into(acc(grads, p, len), &dy[off..off + len]);
                    }
                    off += len;
                }
            }
            Op::SliceCols { x, start } => {
                if needs(*x) {
                    let xv = &nodes[*x].value;
                    let (rows, c) = (xv.rows(), xv.cols());
                    let w = nodes[i].value.cols();
                    let g = acc(grads, *x, rows * c);
                    for r in 0..rows {
                        add_into(&mut g[r * c + start..r * c + start + w], &dy[r * w..(r + 1) * w]);
                    }
                }
            }
            Op::SegmentSoftmax { x, offsets } => {
                if needs(*x) {
                    let y = nodes[i].value.values();
                    let g = acc(grads, *x, y.len());
                    for w in offsets.windows(2) {
                        softmax_backward(&y[w[0]..w[1]], &dy[w[0]..w[1]], &mut g[w[0]..w[1]]);
                    }
                }
            }
            Op::SoftmaxRows(x) => {
                if needs(*x) {
                    let yv = &nodes[i].value;
                    let c = yv.cols();
                    let g = acc(grads, *x, yv.len());
                    for ((yr, dr), gr) in yv.values().chunks_exact(c).zip(dy.chunks_exact(c)).zip(g.chunks_exact_mut(c)) {
                        softmax_backward(yr, dr, gr);
                    }
                }
            }
            Op::LogSoftmaxRows(x) => {
                if needs(*x) {
                    let yv = &nodes[i].value;
                    let c = yv.cols();
                    let g = acc(grads, *x, yv.len());
                    for ((yr, dr), gr) in yv.values().chunks_exact(c).zip(dy.chunks_exact(c)).zip(g.chunks_exact_mut(c)) {
                        let s: T = dr.iter().copied().sum();
                        for ((gx, &d), &l) in gr.iter_mut().zip(dr).zip(yr) {
                            *gx += d - l.exp() * s;
                        }
                    }
                }
            }
            Op::EdgeScores {
                q,
                k,
                index,
                col,
                width,
                scale,
            } => {
                let (q, k, col, width, scale) = (*q, *k, *col, *width, *scale);
                let (qv, kv) = (&nodes[q].value, &nodes[k].value);
                let (qc, kc) = (qv.cols(), kv.cols());
                let n = index.num_nodes();
                if needs(q) {
                    let g = acc(grads, q, qv.len());
                    let mut e = 0;
                    for i in 0..n {
                        for &j in index.neighbors(i) {
                            let s = dy[e] * scale;
                            let kj = &kv.row(j as usize)[col..col + width];
                            for (x, &kk) in g[i * qc + col..i * qc + col + width].iter_mut().zip(kj) {
                                *x += s * kk;
                            }
                            e += 1;
                        }
                    }
                }
                if needs(k) {
                    let g = acc(grads, k, kv.len());
                    let mut e = 0;
                    for i in 0..n {
                        let qi = &qv.row(i)[col..col + width];
                        for &j in index.neighbors(i) {
                            let s = dy[e] * scale;
                            let j = j as usize;
                            for (x, &qq) in g[j * kc + col..j * kc + col + width].iter_mut().zip(qi) {
                                *x += s * qq;
                            }
                            e += 1;
                        }
                    }
                }
            }
            Op::EdgeAggregate { w, v, index, col, width } => {
                let (w, v, col, width) = (*w, *v, *col, *width);
                let vv = &nodes[v].value;
                let vc = vv.cols();
                let n = index.num_nodes();
                if needs(w) {
                    let g = acc(grads, w, index.num_entries());
                    let mut e = 0;
                    for i in 0..n {
                        let di = &dy[i * width..(i + 1) * width];
                        for &j in index.neighbors(i) {
                            g[e] += kernels::dot(di, &vv.row(j as usize)[col..col + width]);
                            e += 1;
                        }
                    }
                }
                if needs(v) {
                    let wv = nodes[w].value.values();
                    let g = acc(grads, v, vv.len());
                    let mut e = 0;
                    for i in 0..n {
                        let di = &dy[i * width..(i + 1) * width];
                        for &j in index.neighbors(i) {
                            let j = j as usize;
                            let a = wv[e];
                            for (x, &d) in g[j * vc + col..j * vc + col + width].iter_mut().zip(di) {
                                *x += a * d;
                            }
                            e += 1;
                        }
                    }
                }
            }
            Op::Lstm { xg, h, c, w_hh, b, gates } => {
                let (xg, h, c, w_hh, b) = (*xg, *h, *c, *w_hh, *b);
                let hd = nodes[h].value.len();
                let c_prev = nodes[c].value.values();
                let c_new = &nodes[i].value.values()[hd..];
                let (dh, dc) = (&dy[..hd], &dy[hd..]);
                let mut dgates = vec![T::zero(); 4 * hd];
                let mut dc_prev = vec![T::zero(); hd];
                for j in 0..hd {
                    let (gi, gf, gg, go) = (gates[j], gates[hd + j], gates[2 * hd + j], gates[3 * hd + j]);
                    let tc = c_new[j].tanh();
                    let dct = dc[j] + dh[j] * go * (T::one() - tc * tc);
                    let d_o = dh[j] * tc;
                    let d_i = dct * gg;
                    let d_g = dct * gi;
                    let d_f = dct * c_prev[j];
                    dc_prev[j] = dct * gf;
                    dgates[j] = d_i * gi * (T::one() - gi);
                    dgates[hd + j] = d_f * gf * (T::one() - gf);
                    dgates[2 * hd + j] = d_g * (T::one() - gg * gg);
                    dgates[3 * hd + j] = d_o * go * (T::one() - go);
                }
                if needs(xg) {
                    add_into(acc(grads, xg, 4 * hd), &dgates);
                }
                if needs(b) {
                    add_into(acc(grads, b, 4 * hd), &dgates);
                }
                if needs(c) {
                    add_into(acc(grads, c, hd), &dc_prev);
                }
                if needs(h) {
                    let g = acc(grads, h, hd);
                    gemm(1, 4 * hd, hd, &dgates, false, nodes[w_hh].value.values(), true, T::one(), g);
                }
                if needs(w_hh) {
                    let g = acc(grads, w_hh, hd * 4 * hd);
                    gemm(hd, 1, 4 * hd, nodes[h].value.values(), true, &dgates, false, T::one(), g);
                }
            }
            Op::SelectRow { x, row } => {
                if needs(*x) {
                    let xv = &nodes[*x].value;
                    let c = xv.cols();
                    let g = acc(grads, *x, xv.len());
                    add_into(&mut g[row * c..(row + 1) * c], dy);
                }
            }
            Op::Sum(x) => {
                if needs(*x) {
                    let len = nodes[*x].value.len();
                    let g = acc(grads, *x, len);
                    for gx in g.iter_mut() {
                        *gx += dy[0];
                    }
                }
            }
            Op::Dot(a, b) => {
                let (a, b) = (*a, *b);
                if needs(a) {
                    let bv = nodes[b].value.values();
                    let g = acc(grads, a, bv.len());
                    for (gx, &o) in g.iter_mut().zip(bv) {
                        *gx += dy[0] * o;
                    }
                }
                if needs(b) {
                    let av = nodes[a].value.values();
                    let g = acc(grads, b, av.len());
                    for (gx, &o) in g.iter_mut().zip(av) {
                        *gx += dy[0] * o;
                    }
                }
            }
            Op::AddScalars(ids) => {
                for &j in ids {
                    if needs(j) {
                        acc(grads, j, 1)[0] += dy[0];
                    }
                }
            }
            Op::CrossEntropy {
                logits,
                targets,
                smoothing,
                probs,
            } => {
                if needs(*logits) {
                    let lv = &nodes[*logits].value;
                    let c = lv.cols();
                    let scale = dy[0] / T::from_f64(targets.len() as f64);
                    let uniform = *smoothing / T::from_f64(c as f64);
                    let g = acc(grads, *logits, lv.len());
                    for (t, &(r, y)) in targets.iter().enumerate() {
                        let p = &probs[t * c..(t + 1) * c];
                        for j in 0..c {
                            let mut q = uniform;
                            if j == y {
                                q += T::one() - *smoothing;
                            }
                            g[r * c + j] += scale * (p[j] - q);
                        }
                    }
                }
            }
            Op::CandidateLogProb {
                nodes: inodes,
                dist,
                g,
                buckets,
                allowed,
                choice,
                probs,
            } => {
                let (inodes, g, choice) = (*inodes, *g, *choice);
                let d = nodes[g].value.len();
                let gv = nodes[g].value.values();
                let nv = nodes[inodes].value.values();
                let m = allowed.len();
                let entropy = nodes[i].value.item();
                // ∂lp/∂logit_i = [i == choice] - p_i over allowed candidates;
                // for the entropy, ∂H/∂logit_i = -p_i (ln p_i + H).
                let dl: Vec<T> = (0..m)
                    .map(|c| {
                        if !allowed[c] || (choice == ENTROPY && probs[c] == T::zero()) {
                            return T::zero();
                        }
                        if choice == ENTROPY {
                            return -probs[c] * (probs[c].ln() + entropy) * dy[0];
                        }
                        let ind = if c == choice { T::one() } else { T::zero() };
                        (ind - probs[c]) * dy[0]
                    })
                    .collect();
                if needs(inodes) {
                    let gn = acc(grads, inodes, m * d);
                    for (c, &w) in dl.iter().enumerate() {
                        if w != T::zero() {
                            for (x, &gg) in gn[c * d..(c + 1) * d].iter_mut().zip(gv) {
                                *x += w * gg;
                            }
                        }
                    }
                }
                if let Some(di) = *dist {
                    if needs(di) {
                        let len = nodes[di].value.len();
                        let gd = acc(grads, di, len);
                        for (c, &w) in dl.iter().enumerate() {
                            if w != T::zero() {
                                let b = buckets[c];
                                for (x, &gg) in gd[b * d..(b + 1) * d].iter_mut().zip(gv) {
                                    *x += w * gg;
                                }
                            }
                        }
                    }
                }
                if needs(g) {
                    let dv = dist.map(|di| nodes[di].value.values());
                    let gg = acc(grads, g, d);
                    for (c, &w) in dl.iter().enumerate() {
                        if w == T::zero() {
                            continue;
                        }
                        for (x, &e) in gg.iter_mut().zip(&nv[c * d..(c + 1) * d]) {
                            *x += w * e;
                        }
                        if let Some(dv) = dv {
                            let b = buckets[c];
                            for (x, &e) in gg.iter_mut().zip(&dv[b * d..(b + 1) * d]) {
                                *x += w * e;
                            }
                        }
                    }
                }
            }
        }
    }
}

fn acc<T: Real>(grads: &mut [Option<Vec<T>>], j: usize, len: usize) -> &mut [T] {
    grads[j].get_or_insert_with(|| vec![T::zero(); len])
}

fn add_into<T: Real>(dst: &mut [T], src: &[T]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

fn softmax_backward<T: Real>(y: &[T], dy: &[T], g: &mut [T]) {
    let s: T = y.iter().zip(dy).map(|(&a, &b)| a * b).sum();
    for ((gx, &yy), &d) in g.iter_mut().zip(y).zip(dy) {
        *gx += yy * (d - s);
    }
}
