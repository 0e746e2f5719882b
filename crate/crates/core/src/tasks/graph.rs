use alloc::format;
use alloc::sync::Arc;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::predictor::BaseGraph;
use crate::rl::{Example, ExampleInput};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Valid,
    Test,
}

/// A transductive node-classification instance.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphData {
    pub num_nodes: usize,
    pub num_features: usize,
    pub num_classes: usize,
    /// Row-major `N × F`.
    pub features: Vec<f64>,
    pub labels: Vec<usize>,
    /// Directed pairs; every edge appears in both directions.
    pub edges: Vec<(u32, u32)>,
    pub train: Vec<usize>,
    pub valid: Vec<usize>,
    pub test: Vec<usize>,
}

impl GraphData {
    pub fn validate(&self) -> Result<()> {
        let n = self.num_nodes;
        let bad = |m: alloc::string::String| Err(Error::Dataset(m));
        if n == 0 || self.num_features == 0 || self.num_classes == 0 {
            return bad("graph needs nodes, features and classes".into());
        }
        if self.features.len() != n * self.num_features {
            return bad(format!("expected {} feature values, got {}", n * self.num_features, self.features.len()));
        }
        if self.features.iter().any(|x| !x.is_finite()) {
            return bad("non-finite feature".into());
        }
        if self.labels.len() != n {
            return bad(format!("expected {n} labels, got {}", self.labels.len()));
        }
        if let Some(l) = self.labels.iter().find(|&&l| l >= self.num_classes) {
            return bad(format!("label {l} outside {} classes", self.num_classes));
        }
        for idx in [&self.train, &self.valid, &self.test] {
            if let Some(i) = idx.iter().find(|&&i| i >= n) {
                return bad(format!("mask index {i} outside {n} nodes"));
            }
        }
        self.base_graph().map(|_| ())
    }

    /// Undirected structure (fails on asymmetric adjacency).
    pub fn base_graph(&self) -> Result<BaseGraph> {
        BaseGraph::from_symmetric(self.num_nodes, &self.edges)
    }

    pub fn indices(&self, split: Split) -> &[usize] {
        match split {
            Split::Train => &self.train,
            Split::Valid => &self.valid,
            Split::Test => &self.test,
        }
    }

    /// The whole graph as one example whose targets are the split's nodes.
    pub fn example(&self, split: Split) -> Result<Example> {
        self.validate()?;
        let idx = self.indices(split);
        if idx.is_empty() {
            return Err(Error::Dataset(format!("{split:?} split is empty")));
        }
        Ok(Example {
            input: ExampleInput::Features(Arc::new(self.features.clone())),
            targets: idx.iter().map(|&i| (i, self.labels[i])).collect(),
            base: Some(Arc::new(self.base_graph()?)),
            salient: None,
        })
    }
}

fn gaussian<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    // Box-Muller
    let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
    let u2: f64 = rng.gen();
    num_traits::Float::sqrt(-2.0 * num_traits::Float::ln(u1)) * num_traits::Float::cos(core::f64::consts::TAU * u2)
}

fn split_nodes<R: Rng + ?Sized>(n: usize, rng: &mut R) -> (Vec<usize>, Vec<usize>, Vec<usize>) {
    let mut order: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        order.swap(i, rng.gen_range(0..=i));
    }
    let n_train = (n / 2).max(1);
    let n_valid = n / 5;
    let mut train = order[..n_train].to_vec();
    let mut valid = order[n_train..n_train + n_valid].to_vec();
    let mut test = order[n_train + n_valid..].to_vec();
    train.sort_unstable();
    valid.sort_unstable();
    test.sort_unstable();
    (train, valid, test)
}

/// Stochastic block model with class-shifted Gaussian features.
pub fn sbm(n: usize, blocks: usize, p_in: f64, p_out: f64, features: usize, seed: u64) -> Result<GraphData> {
    if n == 0 || blocks == 0 || blocks > n || features == 0 {
        return Err(Error::InvalidArgument("sbm needs n >= blocks >= 1 and features >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let labels: Vec<usize> = (0..n).map(|i| i * blocks / n).collect();
    let mut edges = Vec::new();
    for u in 0..n {
        for v in u + 1..n {
            let p = if labels[u] == labels[v] { p_in } else { p_out };
            if rng.gen_bool(p.clamp(0.0, 1.0)) {
                edges.push((u as u32, v as u32));
                edges.push((v as u32, u as u32));
            }
        }
    }
    let mut feats = Vec::with_capacity(n * features);
    for &l in &labels {
        for f in 0..features {
            let shift = if f % blocks == l { 1.0 } else { 0.0 };
            feats.push(shift + gaussian(&mut rng));
        }
    }
    let (train, valid, test) = split_nodes(n, &mut rng);
    Ok(GraphData {
        num_nodes: n,
        num_features: features,
        num_classes: blocks,
        features: feats,
        labels,
        edges,
        train,
        valid,
        test,
    })
}

/// Two disconnected cliques of `k` nodes labeled by clique; features carry
/// a weak clique signal under unit noise.
pub fn two_cliques(k: usize, features: usize, seed: u64) -> Result<GraphData> {
    if k == 0 || features == 0 {
        return Err(Error::InvalidArgument("two_cliques needs k >= 1 and features >= 1".into()));
    }
    let n = 2 * k;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let labels: Vec<usize> = (0..n).map(|i| i / k).collect();
    let mut edges = Vec::new();
    for u in 0..n {
        for v in 0..n {
            if u != v && labels[u] == labels[v] {
                edges.push((u as u32, v as u32));
            }
        }
    }
    let feats = labels
        .iter()
        .flat_map(|&l| {
            let sign = if l == 0 { 1.0 } else { -1.0 };
            (0..features).map(|_| 0.5 * sign + gaussian(&mut rng)).collect::<Vec<_>>()
        })
        .collect();
    let (train, valid, test) = split_nodes(n, &mut rng);
    Ok(GraphData {
        num_nodes: n,
        num_features: features,
        num_classes: 2,
        features: feats,
        labels,
        edges,
        train,
        valid,
        test,
    })
}
