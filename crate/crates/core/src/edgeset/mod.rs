//! Attention edge sets: representation, generators for the classic fixed
//! topologies, validation, and compilation into per-node neighbor lists.

mod generators;
mod index;

pub use generators::{gen_bpt, gen_full, gen_random, gen_segment, gen_span};
pub use index::{compile, CompileOptions, NeighborIndex};

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};

/// Directed attention edge: `src` attends to `dst`.
pub type Edge = (u32, u32);

/// Per-layer (and optionally per-head) edge lists over `num_nodes` nodes.
///
/// Duplicate edges are preserved; attention treats each list as a set once
/// compiled.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeSet {
    num_nodes: usize,
    num_layers: usize,
    num_heads: usize,
    per_head: bool,
    alpha: f64,
    sinks: usize,
    lists: Vec<Vec<Edge>>,
}

impl EdgeSet {
    /// Empty edge set. `num_heads` is ignored unless `per_head`.
    pub fn new(num_nodes: usize, num_layers: usize, num_heads: usize, per_head: bool, alpha: f64) -> Result<Self> {
        if num_nodes == 0 || num_layers == 0 || (per_head && num_heads == 0) {
            return Err(Error::InvalidArgument("edge set needs nodes, layers and heads".into()));
        }
        if !(alpha >= 0.0) {
            return Err(Error::InvalidArgument("alpha must be nonnegative".into()));
        }
        let heads = if per_head { num_heads } else { 1 };
        Ok(Self {
            num_nodes,
            num_layers,
            num_heads: heads,
            per_head,
            alpha,
            sinks: 0,
            lists: vec![Vec::new(); num_layers * heads],
        })
    }

    /// Builds from explicit lists laid out `layer * heads + head`.
    pub fn from_lists(num_nodes: usize, num_layers: usize, num_heads: usize, per_head: bool, alpha: f64, lists: Vec<Vec<Edge>>) -> Result<Self> {
        let mut es = Self::new(num_nodes, num_layers, num_heads, per_head, alpha)?;
        if lists.len() != es.lists.len() {
            return Err(Error::InvalidArgument("list count must be layers × heads".into()));
        }
        es.lists = lists;
        Ok(es)
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    /// Nodes excluding appended sinks.
    pub fn num_real_nodes(&self) -> usize {
        self.num_nodes - self.sinks
    }

    pub fn num_sinks(&self) -> usize {
        self.sinks
    }

    pub fn num_layers(&self) -> usize {
        self.num_layers
    }

    /// Heads with their own lists (1 unless `per_head`).
    pub fn num_heads(&self) -> usize {
        self.num_heads
    }

    pub fn per_head(&self) -> bool {
        self.per_head
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn set_alpha(&mut self, alpha: f64) {
        self.alpha = alpha;
    }

    /// Edge budget `α·N` per list (sinks excluded from `N`), rounded to
    /// the nearest integer.
    pub fn budget(&self) -> usize {
        edge_budget(self.alpha, self.num_real_nodes())
    }

    fn slot(&self, layer: usize, head: usize) -> usize {
        let h = if self.per_head { head } else { 0 };
        layer * self.num_heads + h
    }

    /// Edges seen by `head` of `layer`; heads share one list unless `per_head`.
    pub fn edges(&self, layer: usize, head: usize) -> &[Edge] {
        &self.lists[self.slot(layer, head)]
    }

    pub fn edges_mut(&mut self, layer: usize, head: usize) -> &mut Vec<Edge> {
        let s = self.slot(layer, head);
        &mut self.lists[s]
    }

    pub fn push(&mut self, layer: usize, head: usize, edge: Edge) {
        self.edges_mut(layer, head).push(edge);
    }

    pub fn lists(&self) -> &[Vec<Edge>] {
        &self.lists
    }

    pub fn total_edges(&self) -> usize {
        self.lists.iter().map(Vec::len).sum()
    }

    /// Copies layer 0 into `num_layers` identical layers.
    pub fn replicated(&self, num_layers: usize) -> Self {
        let first: Vec<Vec<Edge>> = self.lists[..self.num_heads].to_vec();
        let mut lists = Vec::with_capacity(num_layers * self.num_heads);
        for _ in 0..num_layers {
            lists.extend(first.iter().cloned());
        }
        Self {
            num_layers,
            lists,
            ..self.clone()
        }
    }

    /// True when every layer carries the same lists.
    pub fn is_shared(&self) -> bool {
        let h = self.num_heads;
        self.lists.chunks(h).all(|layer| layer == &self.lists[..h])
    }

    /// Appends `extra` sink nodes (destinations only) at indices `N..`.
    pub fn with_sinks(mut self, extra: usize) -> Self {
        self.num_nodes += extra;
        self.sinks += extra;
        self
    }

    pub fn validate(&self) -> Diagnostics {
        validate(self)
    }
}

pub fn edge_budget(alpha: f64, n: usize) -> usize {
    let b = alpha * n as f64;
    // round half away from zero without std
    (b + 0.5) as usize
}

/// Report produced by [`validate`].
#[derive(Debug, Clone, PartialEq)]
pub struct Diagnostics {
    /// `(list, edge)` pairs with an endpoint outside `[0, N)`.
    pub out_of_range: Vec<(usize, Edge)>,
    /// Edge count of every list.
    pub counts: Vec<usize>,
    /// Expected count `α·N`.
    pub expected_count: usize,
    /// Source degree of each node, per list.
    pub src_degrees: Vec<Vec<usize>>,
    /// `histogram[list][k]` = number of nodes with source degree `k`.
    pub degree_histogram: Vec<Vec<usize>>,
    real_nodes: usize,
}

impl Diagnostics {
    pub fn is_valid(&self) -> bool {
        self.out_of_range.is_empty()
    }

    pub fn counts_match_budget(&self) -> bool {
        self.counts.iter().all(|&c| c == self.expected_count)
    }

    /// True when every non-sink node has source degree exactly `k` in every list.
    pub fn uniform_src_degree(&self, k: usize) -> bool {
        self.src_degrees.iter().all(|d| d[..self.real_nodes].iter().all(|&x| x == k))
    }
}

pub fn validate(es: &EdgeSet) -> Diagnostics {
    let n = es.num_nodes;
    let mut out_of_range = Vec::new();
    let mut counts = Vec::with_capacity(es.lists.len());
    let mut src_degrees = Vec::with_capacity(es.lists.len());
    let mut degree_histogram = Vec::with_capacity(es.lists.len());
    for (li, list) in es.lists.iter().enumerate() {
        counts.push(list.len());
        let mut deg = vec![0usize; n];
        for &(s, d) in list {
            if s as usize >= n || d as usize >= n {
                out_of_range.push((li, (s, d)));
                continue;
            }
            deg[s as usize] += 1;
        }
        let max = deg.iter().copied().max().unwrap_or(0);
        let mut hist = vec![0usize; max + 1];
        for &k in &deg {
            hist[k] += 1;
        }
        src_degrees.push(deg);
        degree_histogram.push(hist);
    }
    Diagnostics {
        out_of_range,
        counts,
        expected_count: es.budget(),
        src_degrees,
        degree_histogram,
        real_nodes: es.num_real_nodes(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_three_counts_nine() {
        let d = gen_full(3).unwrap().validate();
        assert_eq!(d.counts, [9]);
        assert!(d.is_valid());
    }

    #[test]
    fn out_of_range_is_flagged() {
        let es = EdgeSet::from_lists(3, 1, 1, false, 1.0, vec![vec![(5, 0), (1, 2)]]).unwrap();
        let d = es.validate();
        assert_eq!(d.out_of_range, [(0, (5, 0))]);
    }

    #[test]
    fn replicated_layers_are_shared() {
        let es = gen_full(4).unwrap().replicated(3);
        assert_eq!(es.num_layers(), 3);
        assert!(es.is_shared());
        let mut other = es.clone();
        other.push(2, 0, (0, 0));
        assert!(!other.is_shared());
    }
}
