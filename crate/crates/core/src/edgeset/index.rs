use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use super::EdgeSet;
use crate::error::{Error, Result};

/// How edge lists become neighbor lists.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CompileOptions {
    /// Collapse repeated edges (set semantics). With `false` the node itself
    /// is listed first, followed by every edge destination in input order.
    pub dedupe: bool,
    /// Add the reverse of every edge.
    pub symmetrize: bool,
}

impl Default for CompileOptions {
    fn default() -> Self {
        Self {
            dedupe: true,
            symmetrize: false,
        }
    }
}

/// CSR neighbor lists: `neighbors[offsets[i]..offsets[i+1]]` are the nodes
/// `i` attends to. Every list contains `i` itself.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NeighborIndex {
    offsets: Arc<[usize]>,
    neighbors: Vec<u32>,
}

impl NeighborIndex {
    /// Builds from explicit per-node lists; a missing self-loop is prepended.
    pub fn from_lists(lists: &[Vec<u32>]) -> Result<Self> {
        let n = lists.len();
        let mut offsets = Vec::with_capacity(n + 1);
        let mut neighbors = Vec::new();
        offsets.push(0);
        for (i, l) in lists.iter().enumerate() {
            if l.iter().any(|&j| j as usize >= n) {
                return Err(Error::IndexOutOfRange { index: i, len: n });
            }
            if !l.contains(&(i as u32)) {
                neighbors.push(i as u32);
            }
            neighbors.extend_from_slice(l);
            offsets.push(neighbors.len());
        }
        Ok(Self {
            offsets: offsets.into(),
            neighbors,
        })
    }

    /// Dense neighbor lists (everyone attends to everyone).
    pub fn full(n: usize) -> Self {
        let lists: Vec<Vec<u32>> = (0..n).map(|_| (0..n as u32).collect()).collect();
        Self::from_lists(&lists).expect("in range")
    }

    pub fn num_nodes(&self) -> usize {
        self.offsets.len() - 1
    }

    /// Total neighbor entries `Σ_i |N(i)|`.
    pub fn num_entries(&self) -> usize {
        self.neighbors.len()
    }

    pub fn neighbors(&self, i: usize) -> &[u32] {
        &self.neighbors[self.offsets[i]..self.offsets[i + 1]]
    }

    pub fn offsets(&self) -> &Arc<[usize]> {
        &self.offsets
    }

    pub fn degree(&self, i: usize) -> usize {
        self.offsets[i + 1] - self.offsets[i]
    }

    /// Drops neighbors `j > i`, except nodes at or beyond `first_sink`
    /// (dummy sinks stay visible to everyone). Self-loops are kept.
    pub fn causal_filter_with_sinks(&self, first_sink: usize) -> Self {
        let lists: Vec<Vec<u32>> = (0..self.num_nodes())
            .map(|i| {
                self.neighbors(i)
                    .iter()
                    .copied()
                    .filter(|&j| j as usize <= i || j as usize >= first_sink)
                    .collect()
            })
            .collect();
        Self::from_lists(&lists).expect("subset of a valid index")
    }

    pub fn causal_filter(&self) -> Self {
        self.causal_filter_with_sinks(usize::MAX)
    }

    pub fn is_causal(&self) -> bool {
        (0..self.num_nodes()).all(|i| self.neighbors(i).iter().all(|&j| j as usize <= i))
    }
}

/// Compiles the edges seen by (`layer`, `head`) into neighbor lists.
pub fn compile(es: &EdgeSet, layer: usize, head: usize, opts: CompileOptions) -> Result<NeighborIndex> {
    let n = es.num_nodes();
    if layer >= es.num_layers() || (es.per_head() && head >= es.num_heads()) {
        return Err(Error::InvalidArgument("layer/head outside the edge set".into()));
    }
    let edges = es.edges(layer, head);
    let mut lists: Vec<Vec<u32>> = vec![Vec::new(); n];
    for &(s, d) in edges {
        if s as usize >= n || d as usize >= n {
            return Err(Error::IndexOutOfRange {
                index: s.max(d) as usize,
                len: n,
            });
        }
        lists[s as usize].push(d);
        if opts.symmetrize && s != d {
            lists[d as usize].push(s);
        }
    }
    let mut offsets = Vec::with_capacity(n + 1);
    let mut neighbors = Vec::with_capacity(edges.len() + n);
    offsets.push(0);
    for (i, mut l) in lists.into_iter().enumerate() {
        if opts.dedupe {
            l.push(i as u32);
            l.sort_unstable();
            l.dedup();
            neighbors.extend_from_slice(&l);
        } else {
            neighbors.push(i as u32);
            neighbors.extend_from_slice(&l);
        }
        offsets.push(neighbors.len());
    }
    Ok(NeighborIndex {
        offsets: offsets.into(),
        neighbors,
    })
}
