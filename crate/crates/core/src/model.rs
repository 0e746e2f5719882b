//! The main network Φ: node embeddings, a stack of transformer blocks and a
//! task head.

use alloc::format;
use alloc::sync::Arc;
use alloc::vec::Vec;

use rand::Rng;

use crate::attention::{self, Attention, BlockConfig};
use crate::edgeset::{compile, CompileOptions, EdgeSet, NeighborIndex};
use crate::error::{Error, Result};
use crate::params::{glorot, ParamStore};
use crate::real::Real;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InputSpec {
    /// Token ids with learned absolute positions.
    Tokens { vocab: usize },
    /// Dense node features projected to `d`.
    Features { dim: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputSpec {
    /// One label per example, read out at node `readout`.
    Classify { classes: usize, readout: usize },
    /// A next-token distribution at every position.
    Lm { vocab: usize },
    /// A label per node.
    NodeClassify { classes: usize },
}

impl OutputSpec {
    pub fn classes(&self) -> usize {
        match *self {
            Self::Classify { classes, .. } | Self::NodeClassify { classes } => classes,
            Self::Lm { vocab } => vocab,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelConfig {
    /// Real nodes per example.
    pub n: usize,
    pub block: BlockConfig,
    pub layers: usize,
    pub input: InputSpec,
    pub output: OutputSpec,
    /// Learned sink node appended at index `n`.
    pub dummy: bool,
    /// Attention restricted to `j ≤ i` (sinks excepted).
    pub causal: bool,
}

/// Input of one example.
#[derive(Debug, Clone, Copy)]
pub enum Input<'a> {
    Tokens(&'a [usize]),
    /// Row-major `n × dim`.
    Features(&'a [f64]),
}

/// Per-layer attention pattern for one forward pass.
#[derive(Debug, Clone)]
pub enum LayerAttention {
    /// `[layer][head]`, a single entry per layer when heads share lists.
    Sparse(Vec<Vec<Arc<NeighborIndex>>>),
    Dense,
}

impl ModelConfig {
    pub fn table_rows(&self) -> usize {
        self.n + usize::from(self.dummy)
    }

    pub fn check(&self) -> Result<()> {
        self.block.check()?;
        if self.n == 0 || self.layers == 0 {
            return Err(Error::InvalidConfig("n and layers must be positive".into()));
        }
        if let OutputSpec::Classify { readout, .. } = self.output {
            if readout >= self.n {
                return Err(Error::InvalidConfig(format!("readout {readout} outside {} nodes", self.n)));
            }
        }
        if self.output.classes() == 0 {
            return Err(Error::InvalidConfig("output needs at least one class".into()));
        }
        Ok(())
    }

    pub fn init_params<T: Real, R: Rng + ?Sized>(&self, store: &mut ParamStore<T>, rng: &mut R) -> Result<()> {
        self.check()?;
        let d = self.block.d;
        match self.input {
            InputSpec::Tokens { vocab } => {
                store.insert("embed.tok", glorot(rng, vocab, d))?;
                store.insert("embed.pos", glorot(rng, self.n, d))?;
            }
            InputSpec::Features { dim } => {
                store.insert("embed.feat_w", glorot(rng, dim, d))?;
                store.insert("embed.feat_b", Tensor::zeros(&[d]))?;
            }
        }
        if self.dummy {
            store.insert("embed.dummy", glorot(rng, 1, d))?;
        }
        for l in 0..self.layers {
            attention::init_block(store, rng, &format!("block{l}"), self.block)?;
        }
        store.insert("head.ln.g", Tensor::full(&[d], T::one()))?;
        store.insert("head.ln.b", Tensor::zeros(&[d]))?;
        let c = self.output.classes();
        store.insert("head.w", glorot(rng, d, c))?;
        store.insert("head.b", Tensor::zeros(&[c]))?;
        Ok(())
    }

    /// Layer-0 node table (`M×d`, sinks last). These rows double as the
    /// predictor's node projection columns.
    pub fn embed<T: Real>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, input: Input<'_>) -> Result<Var> {
        let n = self.n;
        let h = match (self.input, input) {
            (InputSpec::Tokens { vocab }, Input::Tokens(ids)) => {
                if ids.len() != n {
                    return Err(Error::InvalidArgument(format!("expected {n} tokens, got {}", ids.len())));
                }
                if let Some(&bad) = ids.iter().find(|&&t| t >= vocab) {
                    return Err(Error::IndexOutOfRange { index: bad, len: vocab });
                }
                let tok = tape.param(store, "embed.tok")?;
                let pos = tape.param(store, "embed.pos")?;
                let a = tape.gather_rows(tok, ids)?;
                let positions: Vec<usize> = (0..n).collect();
                let b = tape.gather_rows(pos, &positions)?;
                tape.add(a, b)?
            }
            (InputSpec::Features { dim }, Input::Features(x)) => {
                let xt = Tensor::from_f64(&[n, dim], x)?;
                let xv = tape.constant(xt)?;
                let w = tape.param(store, "embed.feat_w")?;
                let b = tape.param(store, "embed.feat_b")?;
                tape.linear(xv, w, Some(b))?
            }
            _ => return Err(Error::InvalidArgument("input kind does not match the model".into())),
        };
        if self.dummy {
            let dm = tape.param(store, "embed.dummy")?;
            tape.concat_rows(&[h, dm])
        } else {
            Ok(h)
        }
    }

    /// Neighbor indices for every layer of `es`; layers with identical
    /// lists share one `Arc`.
    pub fn compile_edges(&self, es: &EdgeSet, opts: CompileOptions) -> Result<LayerAttention> {
        if es.num_nodes() != self.table_rows() || es.num_layers() != self.layers {
            return Err(Error::InvalidArgument(format!(
                "edge set has {} nodes × {} layers, model expects {} × {}",
                es.num_nodes(),
                es.num_layers(),
                self.table_rows(),
                self.layers
            )));
        }
        let heads = if es.per_head() { self.block.heads } else { 1 };
        if es.per_head() && es.num_heads() != self.block.heads {
            return Err(Error::InvalidArgument("per-head edge set has the wrong head count".into()));
        }
        let mut out: Vec<Vec<Arc<NeighborIndex>>> = Vec::with_capacity(self.layers);
        for l in 0..self.layers {
            let reuse = (0..l).find(|&p| (0..heads).all(|h| es.edges(p, h) == es.edges(l, h)));
            if let Some(p) = reuse {
                let shared = out[p].clone();
                out.push(shared);
                continue;
            }
            let mut layer = Vec::with_capacity(heads);
            for h in 0..heads {
                let mut idx = compile(es, l, h, opts)?;
                if self.causal {
                    idx = idx.causal_filter_with_sinks(self.n);
                }
                layer.push(Arc::new(idx));
            }
            out.push(layer);
        }
        Ok(LayerAttention::Sparse(out))
    }

    /// Keep-mask for dense attention over `M` nodes: causal if configured;
    /// sinks are visible to every node and attend only to themselves.
    pub fn dense_mask(&self) -> Option<Vec<bool>> {
        if !self.causal && !self.dummy {
            return None;
        }
        let (n, m) = (self.n, self.table_rows());
        Some(
            (0..m * m)
                .map(|e| {
                    let (i, j) = (e / m, e % m);
                    if i >= n {
                        i == j
                    } else {
                        j >= n || !self.causal || j <= i
                    }
                })
                .collect(),
        )
    }

    /// Runs the blocks and the task head; returns the logits matrix
    /// (`1×C` for classification, `N×C` otherwise).
    pub fn encode<T: Real>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, nodes: Var, attn: &LayerAttention) -> Result<Var> {
        let heads = self.block.heads;
        let mask = match attn {
            LayerAttention::Dense => self.dense_mask(),
            LayerAttention::Sparse(layers) if layers.len() != self.layers => {
                return Err(Error::InvalidArgument("attention pattern has the wrong layer count".into()));
            }
            LayerAttention::Sparse(_) => None,
        };
        let mut h = nodes;
        for l in 0..self.layers {
            let a = match attn {
                LayerAttention::Sparse(layers) => Attention::Sparse(&layers[l]),
                LayerAttention::Dense => Attention::Dense(mask.as_deref()),
            };
            h = attention::transformer_block(tape, store, &format!("block{l}"), h, a, heads)?;
        }
        let rows: Vec<usize> = match self.output {
            OutputSpec::Classify { readout, .. } => alloc::vec![readout],
            _ => (0..self.n).collect(),
        };
        let h = if rows.len() == self.table_rows() { h } else { tape.gather_rows(h, &rows)? };
        let g = tape.param(store, "head.ln.g")?;
        let b = tape.param(store, "head.ln.b")?;
        let h = tape.layer_norm(h, g, b)?;
        let w = tape.param(store, "head.w")?;
        let hb = tape.param(store, "head.b")?;
        tape.linear(h, w, Some(hb))
    }
}

/// Predictor parameters live under this prefix; everything else is Φ.
pub fn is_predictor_param(name: &str) -> bool {
    name.starts_with("predictor.")
}
