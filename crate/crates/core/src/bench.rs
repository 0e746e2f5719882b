//! Attention cost instrumentation: score evaluations and activation
//! elements of one forward pass, sparse against dense, over growing `N`.

use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::attention::BlockConfig;
use crate::edgeset::CompileOptions;
use crate::error::{Error, Result};
use crate::model::{Input, InputSpec, LayerAttention, ModelConfig, OutputSpec};
use crate::params::ParamStore;
use crate::predictor::{self, BaseGraph, Mode, PredictorConfig, Prepared};
use crate::real::Real;
use crate::tape::Tape;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BenchConfig {
    pub d: usize,
    pub heads: usize,
    pub d_ff: usize,
    pub layers: usize,
    pub d_lstm: usize,
    pub alpha: f64,
    pub vocab: usize,
    pub seed: u64,
    /// Deduplicate neighbor lists (counts then include only distinct pairs).
    pub dedupe: bool,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            d: 32,
            heads: 4,
            d_ff: 64,
            layers: 2,
            d_lstm: 16,
            alpha: 2.0,
            vocab: 16,
            seed: 0,
            dedupe: false,
        }
    }
}

/// Costs of one forward pass at one `N`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScalingRow {
    pub n: usize,
    pub dense_scores: u64,
    pub sparse_scores: u64,
    pub dense_activations: u64,
    pub sparse_activations: u64,
    /// Neighbor-index entries per (layer, head) in sparse mode.
    pub sparse_entries: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScalingReport {
    pub rows: Vec<ScalingRow>,
}

impl ScalingReport {
    /// `count(N_{i+1}) / count(N_i)` for consecutive rows.
    pub fn dense_ratios(&self) -> Vec<f64> {
        self.ratios(|r| r.dense_scores)
    }

    pub fn sparse_ratios(&self) -> Vec<f64> {
        self.ratios(|r| r.sparse_scores)
    }

    fn ratios(&self, f: impl Fn(&ScalingRow) -> u64) -> Vec<f64> {
        self.rows.windows(2).map(|w| f(&w[1]) as f64 / f(&w[0]) as f64).collect()
    }

    /// Least-squares slope of `ln(sparse activations)` against `ln N`.
    pub fn sparse_activation_exponent(&self) -> f64 {
        log_log_slope(self.rows.iter().map(|r| (r.n as f64, r.sparse_activations as f64)))
    }

    pub fn dense_activation_exponent(&self) -> f64 {
        log_log_slope(self.rows.iter().map(|r| (r.n as f64, r.dense_activations as f64)))
    }
}

fn log_log_slope(points: impl Iterator<Item = (f64, f64)>) -> f64 {
    let pts: Vec<(f64, f64)> = points.map(|(x, y)| (num_traits::Float::ln(x), num_traits::Float::ln(y))).collect();
    let k = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / k;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / k;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    sxy / sxx
}

/// One dense and one sparse forward pass per `N`. Sparse edges come from a
/// freshly initialized predictor in all-nodes-connected mode.
pub fn bench_scaling<T: Real>(cfg: &BenchConfig, ns: &[usize]) -> Result<ScalingReport> {
    if ns.is_empty() || ns.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidArgument("N list must be non-empty and ascending".into()));
    }
    let mut rows = Vec::with_capacity(ns.len());
    for &n in ns {
        let model = ModelConfig {
            n,
            block: BlockConfig {
                d: cfg.d,
                heads: cfg.heads,
                d_ff: cfg.d_ff,
            },
            layers: cfg.layers,
            input: InputSpec::Tokens { vocab: cfg.vocab },
            output: OutputSpec::Lm { vocab: cfg.vocab },
            dummy: false,
            causal: false,
        };
        let pcfg = PredictorConfig {
            num_nodes: n,
            d: cfg.d,
            hidden: cfg.d_lstm,
            layers: cfg.layers,
            heads: cfg.heads,
            alpha: cfg.alpha,
            mode: Mode {
                all_nodes_connected: true,
                ..Mode::default()
            },
        };
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut store = ParamStore::<T>::new();
        model.init_params(&mut store, &mut rng)?;
        pcfg.init_params(&mut store, &mut rng)?;
        let tokens: Vec<usize> = (0..n).map(|_| rng.gen_range(0..cfg.vocab)).collect();

        let mut dense = Tape::new();
        let nodes = model.embed(&mut dense, &store, Input::Tokens(&tokens))?;
        model.encode(&mut dense, &store, nodes, &LayerAttention::Dense)?;

        let mut sparse = Tape::new();
        let nodes = model.embed(&mut sparse, &store, Input::Tokens(&tokens))?;
        let prep = Prepared::new(pcfg, &store, sparse.value(nodes)?.values())?;
        let sample = predictor::sample_edges(&prep, &BaseGraph::empty(n), &mut rng)?;
        let opts = CompileOptions {
            dedupe: cfg.dedupe,
            symmetrize: false,
        };
        let attn = model.compile_edges(&sample.edges, opts)?;
        let sparse_entries = match &attn {
            LayerAttention::Sparse(layers) => layers.iter().flatten().map(|ix| ix.num_entries()).collect(),
            LayerAttention::Dense => Vec::new(),
        };
        model.encode(&mut sparse, &store, nodes, &attn)?;

        rows.push(ScalingRow {
            n,
            dense_scores: dense.counters().score_evals,
            sparse_scores: sparse.counters().score_evals,
            dense_activations: dense.activation_elements() as u64,
            sparse_activations: sparse.activation_elements() as u64,
            sparse_entries,
        });
    }
    Ok(ScalingReport { rows })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slope_of_a_power_law() {
        let s = log_log_slope([(2.0, 12.0), (4.0, 48.0), (8.0, 192.0)].into_iter());
        assert!((s - 2.0).abs() < 1e-12);
    }

    #[test]
    fn doubling_n_quadruples_dense_and_doubles_sparse() {
        let r = bench_scaling::<f64>(&BenchConfig::default(), &[8, 16, 32]).unwrap();
        assert_eq!(r.dense_ratios(), [4.0, 4.0]);
        assert_eq!(r.sparse_ratios(), [2.0, 2.0]);
    }
}
