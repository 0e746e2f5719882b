//! Multi-head self-attention restricted to neighbor lists, the dense
//! reference, and pre-norm transformer blocks built on either.

use alloc::format;
use alloc::sync::Arc;
use alloc::vec::Vec;

use rand::Rng;

use crate::edgeset::NeighborIndex;
use crate::error::{Error, Result};
use crate::params::{glorot, ParamStore};
use crate::real::Real;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockConfig {
    pub d: usize,
    pub heads: usize,
    pub d_ff: usize,
}

impl BlockConfig {
    pub fn head_dim(&self) -> usize {
        self.d / self.heads
    }

    pub fn check(&self) -> Result<()> {
        if self.d == 0 || self.heads == 0 || self.d % self.heads != 0 || self.d_ff == 0 {
            return Err(Error::InvalidConfig(format!(
                "d={} must be a positive multiple of heads={} and d_ff positive",
                self.d, self.heads
            )));
        }
        Ok(())
    }
}

/// How a block mixes positions.
#[derive(Debug, Clone, Copy)]
pub enum Attention<'a> {
    /// One index shared by all heads, or one per head.
    Sparse(&'a [Arc<NeighborIndex>]),
    /// Full attention with an optional row-major `N×N` keep-mask.
    Dense(Option<&'a [bool]>),
}

/// Registers the attention and feed-forward parameters under `prefix`.
pub fn init_block<T: Real, R: Rng + ?Sized>(store: &mut ParamStore<T>, rng: &mut R, prefix: &str, cfg: BlockConfig) -> Result<()> {
    cfg.check()?;
    let (d, f) = (cfg.d, cfg.d_ff);
    for w in ["wq", "wk", "wv", "wo"] {
        store.insert(&format!("{prefix}.attn.{w}"), glorot(rng, d, d))?;
    }
    for ln in ["ln1", "ln2"] {
        store.insert(&format!("{prefix}.{ln}.g"), Tensor::full(&[d], T::one()))?;
        store.insert(&format!("{prefix}.{ln}.b"), Tensor::zeros(&[d]))?;
    }
    store.insert(&format!("{prefix}.ffn.w1"), glorot(rng, d, f))?;
    store.insert(&format!("{prefix}.ffn.b1"), Tensor::zeros(&[f]))?;
    store.insert(&format!("{prefix}.ffn.w2"), glorot(rng, f, d))?;
    store.insert(&format!("{prefix}.ffn.b2"), Tensor::zeros(&[d]))?;
    Ok(())
}

fn projections<T: Real>(tape: &mut Tape<T>, store: &ParamStore<T>, prefix: &str, h: Var) -> Result<[Var; 3]> {
    let wq = tape.param(store, &format!("{prefix}.attn.wq"))?;
    let wk = tape.param(store, &format!("{prefix}.attn.wk"))?;
    let wv = tape.param(store, &format!("{prefix}.attn.wv"))?;
    Ok([tape.matmul(h, wq)?, tape.matmul(h, wk)?, tape.matmul(h, wv)?])
}

fn scale_for<T: Real>(head_dim: usize) -> T {
    T::one() / T::from_f64(head_dim as f64).sqrt()
}

/// Attention of every node over its neighbor list only.
///
/// `idx` holds one index shared by all heads or one per head. Scores are
/// scaled by `1/√(d/heads)`.
pub fn sparse_mha<T: Real>(
    tape: &mut Tape<T>,
    store: &ParamStore<T>,
    prefix: &str,
    h: Var,
    idx: &[Arc<NeighborIndex>],
    heads: usize,
) -> Result<Var> {
    let shape = tape.value(h)?.shape().to_vec();
    let (n, d) = (shape[0], shape[1]);
    if idx.is_empty() || (idx.len() != 1 && idx.len() != heads) || heads == 0 || d % heads != 0 {
        return Err(Error::InvalidArgument(format!("{} indices for {heads} heads", idx.len())));
    }
    if let Some(bad) = idx.iter().find(|ix| ix.num_nodes() != n) {
        return Err(Error::ShapeMismatch {
            op: "sparse_mha",
            lhs: shape,
            rhs: alloc::vec![bad.num_nodes()],
        });
    }
    let dh = d / heads;
    let [q, k, v] = projections(tape, store, prefix, h)?;
    let mut outs = Vec::with_capacity(heads);
    for t in 0..heads {
        let ix = &idx[if idx.len() == 1 { 0 } else { t }];
        let s = tape.edge_scores(q, k, ix, t * dh, dh, scale_for(dh))?;
        let a = tape.segment_softmax(s, ix.offsets().clone())?;
        outs.push(tape.edge_aggregate(a, v, ix, t * dh, dh)?);
    }
    let cat = if heads == 1 { outs[0] } else { tape.concat_cols(&outs)? };
    let wo = tape.param(store, &format!("{prefix}.attn.wo"))?;
    tape.matmul(cat, wo)
}

/// Textbook full attention; `mask[i*N + j] == false` removes `j` from the
/// keys of `i`. Counts `N²` score evaluations per head.
pub fn dense_mha<T: Real>(
    tape: &mut Tape<T>,
    store: &ParamStore<T>,
    prefix: &str,
    h: Var,
    heads: usize,
    mask: Option<&[bool]>,
) -> Result<Var> {
    let shape = tape.value(h)?.shape().to_vec();
    let (n, d) = (shape[0], shape[1]);
    if heads == 0 || d % heads != 0 {
        return Err(Error::InvalidArgument(format!("d={d} not divisible by heads={heads}")));
    }
    if mask.is_some_and(|m| m.len() != n * n) {
        return Err(Error::InvalidArgument("mask must be N×N".into()));
    }
    let dh = d / heads;
    let [q, k, v] = projections(tape, store, prefix, h)?;
    let mut outs = Vec::with_capacity(heads);
    for t in 0..heads {
        let (qh, kh, vh) = if heads == 1 {
            (q, k, v)
        } else {
            (tape.slice_cols(q, t * dh, dh)?, tape.slice_cols(k, t * dh, dh)?, tape.slice_cols(v, t * dh, dh)?)
        };
        let s = tape.matmul_nt(qh, kh)?;
        tape.count_scores((n * n) as u64);
        let s = tape.scale(s, scale_for(dh))?;
        let a = tape.softmax_rows(s, mask)?;
        outs.push(tape.matmul(a, vh)?);
    }
    let cat = if heads == 1 { outs[0] } else { tape.concat_cols(&outs)? };
    let wo = tape.param(store, &format!("{prefix}.attn.wo"))?;
    tape.matmul(cat, wo)
}

/// Lower-triangular keep-mask for [`dense_mha`].
pub fn causal_mask(n: usize) -> Vec<bool> {
    (0..n * n).map(|e| e % n <= e / n).collect()
}

/// Removes neighbors `j > i` (self-loops stay).
pub fn causal_filter(idx: &NeighborIndex) -> NeighborIndex {
    idx.causal_filter()
}

/// `h + MHA(LN(h))` followed by `x + FFN(LN(x))`, FFN = `relu(x·W1+b1)·W2+b2`.
pub fn transformer_block<T: Real>(
    tape: &mut Tape<T>,
    store: &ParamStore<T>,
    prefix: &str,
    h: Var,
    attn: Attention<'_>,
    heads: usize,
) -> Result<Var> {
    let g1 = tape.param(store, &format!("{prefix}.ln1.g"))?;
    let b1 = tape.param(store, &format!("{prefix}.ln1.b"))?;
    let x = tape.layer_norm(h, g1, b1)?;
    let a = match attn {
        Attention::Sparse(idx) => sparse_mha(tape, store, prefix, x, idx, heads)?,
        Attention::Dense(mask) => dense_mha(tape, store, prefix, x, heads, mask)?,
    };
    let h = tape.add(h, a)?;
    let g2 = tape.param(store, &format!("{prefix}.ln2.g"))?;
    let b2 = tape.param(store, &format!("{prefix}.ln2.b"))?;
    let x = tape.layer_norm(h, g2, b2)?;
    let w1 = tape.param(store, &format!("{prefix}.ffn.w1"))?;
    let fb1 = tape.param(store, &format!("{prefix}.ffn.b1"))?;
    let w2 = tape.param(store, &format!("{prefix}.ffn.w2"))?;
    let fb2 = tape.param(store, &format!("{prefix}.ffn.b2"))?;
    let f = tape.linear(x, w1, Some(fb1))?;
    let f = tape.relu(f)?;
    let f = tape.linear(f, w2, Some(fb2))?;
    tape.add(h, f)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn setup(n: usize, d: usize, seed: u64) -> (ParamStore<f64>, Tensor<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        init_block(&mut store, &mut rng, "b", BlockConfig { d, heads: 1, d_ff: 4 }).unwrap();
        let h = Tensor::new(&[n, d], (0..n * d).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
        (store, h)
    }

    #[test]
    fn self_loops_only_returns_projected_values() {
        let (store, h) = setup(3, 4, 1);
        let idx = Arc::new(NeighborIndex::from_lists(&[alloc::vec![], alloc::vec![], alloc::vec![]]).unwrap());
        let mut tape = Tape::new();
        let hv = tape.constant(h.clone()).unwrap();
        let out = sparse_mha(&mut tape, &store, "b", hv, &[idx], 1).unwrap();
        let wv = store.get("b.attn.wv").unwrap().values();
        let wo = store.get("b.attn.wo").unwrap().values();
        let v = crate::kernels::matmul(3, 4, 4, h.values(), wv);
        let want = crate::kernels::matmul(3, 4, 4, &v, wo);
        for (a, b) in tape.value(out).unwrap().values().iter().zip(&want) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn causal_mask_node_zero_sees_itself() {
        assert_eq!(causal_mask(2), [true, false, true, true]);
    }

    #[test]
    fn zero_output_projections_make_block_identity() {
        let (mut store, h) = setup(3, 4, 2);
        store.set("b.attn.wo", alloc::vec![0.0; 16]).unwrap();
        store.set("b.ffn.w2", alloc::vec![0.0; 16]).unwrap();
        let mut tape = Tape::new();
        let hv = tape.constant(h.clone()).unwrap();
        let out = transformer_block(&mut tape, &store, "b", hv, Attention::Dense(None), 1).unwrap();
        assert_eq!(tape.value(out).unwrap().values(), h.values());
    }
}
