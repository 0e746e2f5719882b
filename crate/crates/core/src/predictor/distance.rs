//! Shortest-path distance buckets over base graph ∪ constructed edges.

use alloc::collections::VecDeque;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};

/// Largest distance with its own bucket; longer paths share it.
pub const MAX_DISTANCE: usize = 16;
/// Buckets: unreachable, then distances `0..=MAX_DISTANCE`.
pub const NUM_BUCKETS: usize = MAX_DISTANCE + 2;
/// Bucket of nodes with no path from the origin.
pub const UNREACHABLE: usize = 0;

/// Bucket row for a BFS distance (`None` = unreachable).
pub fn bucket(distance: Option<usize>) -> usize {
    match distance {
        None => UNREACHABLE,
        Some(d) => 1 + d.min(MAX_DISTANCE),
    }
}

/// Signed distance a bucket stands for (`-1` = unreachable).
pub fn bucket_distance(b: usize) -> i64 {
    b as i64 - 1
}

/// Undirected structure supplied by the task.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct BaseGraph {
    adj: Vec<Vec<u32>>,
}

impl BaseGraph {
    pub fn empty(n: usize) -> Self {
        Self { adj: vec![Vec::new(); n] }
    }

    /// Path `0 - 1 - … - (n-1)`.
    pub fn chain(n: usize) -> Self {
        let mut g = Self::empty(n);
        for i in 1..n {
            g.adj[i - 1].push(i as u32);
            g.adj[i].push(i as u32 - 1);
        }
        g
    }

    /// Builds from undirected pairs; each pair is inserted both ways.
    pub fn from_undirected(n: usize, edges: &[(u32, u32)]) -> Result<Self> {
        let mut g = Self::empty(n);
        for &(u, v) in edges {
            if u as usize >= n || v as usize >= n {
                return Err(Error::IndexOutOfRange {
                    index: u.max(v) as usize,
                    len: n,
                });
            }
            if u != v {
                g.adj[u as usize].push(v);
                g.adj[v as usize].push(u);
            }
        }
        for l in &mut g.adj {
            l.sort_unstable();
            l.dedup();
        }
        Ok(g)
    }

    /// Builds from directed pairs that must come in both directions.
    pub fn from_symmetric(n: usize, edges: &[(u32, u32)]) -> Result<Self> {
        let mut set: Vec<(u32, u32)> = edges.iter().copied().filter(|(u, v)| u != v).collect();
        set.sort_unstable();
        set.dedup();
        for &(u, v) in &set {
            if set.binary_search(&(v, u)).is_err() {
                return Err(Error::Dataset(alloc::format!("asymmetric adjacency: ({u},{v}) without ({v},{u})")));
            }
        }
        Self::from_undirected(n, &set)
    }

    pub fn num_nodes(&self) -> usize {
        self.adj.len()
    }

    pub fn neighbors(&self, i: usize) -> &[u32] {
        &self.adj[i]
    }

    /// Copy padded with isolated nodes up to `n`.
    pub fn padded(&self, n: usize) -> Self {
        let mut g = self.clone();
        if g.adj.len() < n {
            g.adj.resize(n, Vec::new());
        }
        g
    }
}

/// Distances from the current origin, kept exact as edges are added.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DistanceTracker {
    adj: Vec<Vec<u32>>,
    origin: Option<usize>,
    dist: Vec<Option<usize>>,
}

impl DistanceTracker {
    pub fn new(base: &BaseGraph) -> Self {
        let n = base.num_nodes();
        Self {
            adj: base.adj.clone(),
            origin: None,
            dist: vec![None; n],
        }
    }

    pub fn num_nodes(&self) -> usize {
        self.adj.len()
    }

    pub fn origin(&self) -> Option<usize> {
        self.origin
    }

    /// Recomputes distances from `origin` by BFS.
    pub fn set_origin(&mut self, origin: usize) {
        if self.origin == Some(origin) {
            return;
        }
        self.origin = Some(origin);
        self.dist.iter_mut().for_each(|d| *d = None);
        self.dist[origin] = Some(0);
        let mut queue = VecDeque::from([origin]);
        self.relax(&mut queue);
    }

    fn relax(&mut self, queue: &mut VecDeque<usize>) {
        while let Some(u) = queue.pop_front() {
            let du = self.dist[u].expect("queued nodes are reached") + 1;
            for k in 0..self.adj[u].len() {
                let v = self.adj[u][k] as usize;
                if self.dist[v].map_or(true, |dv| du < dv) {
                    self.dist[v] = Some(du);
                    queue.push_back(v);
                }
            }
        }
    }

    /// Adds the undirected edge `{u, v}` and updates distances from the
    /// current origin.
    pub fn add_edge(&mut self, u: usize, v: usize) {
        if u == v {
            return;
        }
        self.adj[u].push(v as u32);
        self.adj[v].push(u as u32);
        if self.origin.is_none() {
            return;
        }
        let mut queue = VecDeque::new();
        for (a, b) in [(u, v), (v, u)] {
            if let Some(da) = self.dist[a] {
                if self.dist[b].map_or(true, |db| da + 1 < db) {
                    self.dist[b] = Some(da + 1);
                    queue.push_back(b);
                }
            }
        }
        self.relax(&mut queue);
    }

    pub fn distance(&self, i: usize) -> Option<usize> {
        self.dist[i]
    }

    /// Distances with `-1` for unreachable.
    pub fn signed_distances(&self) -> Vec<i64> {
        self.dist.iter().map(|d| d.map_or(-1, |x| x as i64)).collect()
    }

    pub fn buckets(&self) -> Vec<usize> {
        self.dist.iter().map(|&d| bucket(d)).collect()
    }

    pub fn buckets_into(&self, out: &mut Vec<usize>) {
        out.clear();
        out.extend(self.dist.iter().map(|&d| bucket(d)));
    }

    /// Distances from `origin` computed from scratch, ignoring the cache.
    pub fn bfs_from(&self, origin: usize) -> Vec<Option<usize>> {
        let mut dist = vec![None; self.adj.len()];
        dist[origin] = Some(0);
        let mut queue = VecDeque::from([origin]);
        while let Some(u) = queue.pop_front() {
            for &v in &self.adj[u] {
                if dist[v as usize].is_none() {
                    dist[v as usize] = Some(dist[u].unwrap() + 1);
                    queue.push_back(v as usize);
                }
            }
        }
        dist
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn figure_one_distances() {
        // e1..e4 are nodes 0..3; edges (e1,e3), (e3,e2) built, origin e2.
        let mut t = DistanceTracker::new(&BaseGraph::empty(4));
        t.add_edge(0, 2);
        t.add_edge(2, 1);
        t.set_origin(1);
        assert_eq!(t.signed_distances(), [2, 0, 1, -1]);
    }

    #[test]
    fn fresh_origin_sees_only_itself() {
        let mut t = DistanceTracker::new(&BaseGraph::empty(5));
        t.set_origin(3);
        assert_eq!(t.signed_distances(), [-1, -1, -1, 0, -1]);
        assert_eq!(t.buckets(), [0, 0, 0, 1, 0]);
    }

    #[test]
    fn incremental_updates_match_bfs() {
        let mut t = DistanceTracker::new(&BaseGraph::chain(6));
        t.set_origin(0);
        assert_eq!(t.distance(5), Some(5));
        t.add_edge(0, 4);
        assert_eq!(t.distance(5), Some(2));
        assert_eq!(t.distance(3), Some(2));
        assert_eq!((0..6).map(|i| t.distance(i)).collect::<Vec<_>>(), t.bfs_from(0));
    }

    #[test]
    fn long_paths_share_the_last_bucket() {
        assert_eq!(bucket(Some(16)), bucket(Some(40)));
        assert_eq!(bucket_distance(bucket(Some(3))), 3);
        assert_eq!(bucket_distance(bucket(None)), -1);
    }

    #[test]
    fn asymmetric_input_rejected() {
        assert!(BaseGraph::from_symmetric(3, &[(0, 1)]).is_err());
        assert!(BaseGraph::from_symmetric(3, &[(0, 1), (1, 0)]).is_ok());
    }
}
