use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{edge_budget, Edge, EdgeSet};
use crate::error::{Error, Result};

/// Every node attends to every node: `N²` edges.
pub fn gen_full(n: usize) -> Result<EdgeSet> {
    let edges: Vec<Edge> = (0..n as u32).flat_map(|i| (0..n as u32).map(move |j| (i, j))).collect();
    EdgeSet::from_lists(n, 1, 1, false, n as f64, alloc::vec![edges])
}

/// Nodes attend within consecutive segments of `seg_len`.
pub fn gen_segment(n: usize, seg_len: usize) -> Result<EdgeSet> {
    if seg_len < 1 || seg_len > n {
        return Err(Error::InvalidArgument("segment length must lie in [1, N]".into()));
    }
    let mut edges = Vec::new();
    for i in 0..n {
        let start = (i / seg_len) * seg_len;
        let end = (start + seg_len).min(n);
        edges.extend((start..end).map(|j| (i as u32, j as u32)));
    }
    let alpha = edges.len() as f64 / n as f64;
    EdgeSet::from_lists(n, 1, 1, false, alpha, alloc::vec![edges])
}

/// Per-head causal windows: head `t` links `i` to `i-s_t+1 ..= i`.
pub fn gen_span(n: usize, spans: &[usize]) -> Result<EdgeSet> {
    if spans.is_empty() {
        return Err(Error::InvalidArgument("span list is empty".into()));
    }
    if spans.iter().any(|&s| s < 1 || s > n) {
        return Err(Error::InvalidArgument("spans must lie in [1, N]".into()));
    }
    let lists: Vec<Vec<Edge>> = spans
        .iter()
        .map(|&s| {
            (0..n)
                .flat_map(|i| (i + 1 - s.min(i + 1)..=i).map(move |j| (i as u32, j as u32)))
                .collect()
        })
        .collect();
    let total: usize = lists.iter().map(Vec::len).sum();
    let alpha = total as f64 / (n * spans.len()) as f64;
    EdgeSet::from_lists(n, 1, spans.len(), true, alpha, lists)
}

/// Binary-partition tree: leaves `0..N` attend to every span node above
/// them. Span nodes are numbered `N..N+P-1` in heap order (root first), where
/// `P` is `N` rounded up to a power of two; edges from padding leaves are
/// dropped. For power-of-two `N` this gives `2N-1` nodes and `⌊log₂N⌋`
/// edges per leaf.
pub fn gen_bpt(n: usize) -> Result<EdgeSet> {
    if n < 2 {
        return Err(Error::InvalidArgument("binary partition tree needs N ≥ 2".into()));
    }
    let p = n.next_power_of_two();
    let total_nodes = n + p - 1;
    let mut edges = Vec::new();
    for leaf in 0..n {
        let mut h = (p + leaf) / 2;
        while h >= 1 {
            edges.push((leaf as u32, (n + h - 1) as u32));
            h /= 2;
        }
    }
    let alpha = edges.len() as f64 / total_nodes as f64;
    EdgeSet::from_lists(total_nodes, 1, 1, false, alpha, alloc::vec![edges])
}

/// `α·N` uniformly drawn edges; with `causal`, `dst ≤ src`.
pub fn gen_random(n: usize, alpha: f64, seed: u64, causal: bool) -> Result<EdgeSet> {
    let count = edge_budget(alpha, n);
    if n == 0 || count < 1 {
        return Err(Error::InvalidArgument("random edge set needs α·N ≥ 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let edges: Vec<Edge> = (0..count)
        .map(|_| {
            let s = rng.gen_range(0..n);
            let d = if causal { rng.gen_range(0..=s) } else { rng.gen_range(0..n) };
            (s as u32, d as u32)
        })
        .collect();
    EdgeSet::from_lists(n, 1, 1, false, alpha, alloc::vec![edges])
}
