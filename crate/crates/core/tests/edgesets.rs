use std::collections::BTreeSet;
use std::sync::Arc;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sac_core::bench::{bench_scaling, BenchConfig};
use sac_core::edgeset::{compile, gen_bpt, gen_full, gen_random, gen_segment, gen_span, CompileOptions, Edge, EdgeSet, NeighborIndex};
use sac_core::predictor::{self, BaseGraph, Mode, PredictorConfig, Prepared};
use sac_core::{ParamStore, Tape, Tensor};

fn set(es: &EdgeSet, layer: usize, head: usize) -> BTreeSet<Edge> {
    es.edges(layer, head).iter().copied().collect()
}

fn edges_strategy() -> impl Strategy<Value = (usize, Vec<Edge>)> {
    (1usize..12).prop_flat_map(|n| (Just(n), prop::collection::vec((0..n as u32, 0..n as u32), 0..40)))
}

proptest! {
    #[test]
    fn compile_ignores_edge_order((n, edges) in edges_strategy(), seed in any::<u64>(), symmetrize in any::<bool>()) {
        let mut shuffled = edges.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for i in (1..shuffled.len()).rev() {
            shuffled.swap(i, rng.gen_range(0..=i));
        }
        let opts = CompileOptions { dedupe: true, symmetrize };
        let a = EdgeSet::from_lists(n, 1, 1, false, 1.0, vec![edges.clone()]).unwrap();
        let b = EdgeSet::from_lists(n, 1, 1, false, 1.0, vec![shuffled]).unwrap();
        let (ia, ib) = (compile(&a, 0, 0, opts).unwrap(), compile(&b, 0, 0, opts).unwrap());
        prop_assert_eq!(&ia, &ib);
        for i in 0..n {
            let nb = ia.neighbors(i);
            prop_assert!(nb.contains(&(i as u32)));
            let uniq: BTreeSet<u32> = nb.iter().copied().collect();
            prop_assert_eq!(uniq.len(), nb.len());
            let mut want: BTreeSet<u32> = edges.iter().filter(|e| e.0 as usize == i).map(|e| e.1).collect();
            if symmetrize {
                want.extend(edges.iter().filter(|e| e.1 as usize == i).map(|e| e.0));
            }
            want.insert(i as u32);
            prop_assert_eq!(uniq, want);
        }
    }

    #[test]
    fn segment_softmax_rows_sum_to_one((n, edges) in edges_strategy(), scale in 0.1f64..30.0) {
        let es = EdgeSet::from_lists(n, 1, 1, false, 1.0, vec![edges]).unwrap();
        let idx = compile(&es, 0, 0, CompileOptions::default()).unwrap();
        let m = idx.num_entries();
        let scores: Vec<f64> = (0..m).map(|k| scale * ((k * 31 % 17) as f64 - 8.0)).collect();
        let mut tape = Tape::new();
        let s = tape.var(Tensor::new(&[m], scores).unwrap()).unwrap();
        let a = tape.segment_softmax(s, idx.offsets().clone()).unwrap();
        let w = tape.value(a).unwrap().values().to_vec();
        let off = idx.offsets();
        for i in 0..n {
            let row = &w[off[i]..off[i + 1]];
            prop_assert!(row.iter().all(|&x| (0.0..=1.0).contains(&x)));
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn segment_and_span_match_predicates(n in 1usize..65, seg in 1usize..65, spans in prop::collection::vec(1usize..65, 1..4)) {
        let seg = seg.min(n);
        let es = gen_segment(n, seg).unwrap();
        let want: BTreeSet<Edge> = (0..n)
            .flat_map(|i| (0..n).filter(move |j| i / seg == j / seg).map(move |j| (i as u32, j as u32)))
            .collect();
        prop_assert_eq!(set(&es, 0, 0), want);
        let spans: Vec<usize> = spans.into_iter().map(|s| s.min(n)).collect();
        let es = gen_span(n, &spans).unwrap();
        for (h, &s) in spans.iter().enumerate() {
            let want: BTreeSet<Edge> = (0..n)
                .flat_map(|i| (0..=i).filter(move |&j| i - j < s).map(move |j| (i as u32, j as u32)))
                .collect();
            prop_assert_eq!(set(&es, 0, h), want);
            prop_assert_eq!(es.edges(0, h).len(), (0..n).map(|i| s.min(i + 1)).sum::<usize>());
        }
    }

    #[test]
    fn random_edges_respect_budget_and_causality(n in 1usize..40, alpha in 0.5f64..4.0, seed in any::<u64>(), causal in any::<bool>()) {
        prop_assume!(alpha * n as f64 >= 1.0);
        let es = gen_random(n, alpha, seed, causal).unwrap();
        prop_assert_eq!(es.total_edges(), es.budget());
        prop_assert!(es.edges(0, 0).iter().all(|&(s, d)| (s as usize) < n && (d as usize) < n && (!causal || d <= s)));
        prop_assert_eq!(es, gen_random(n, alpha, seed, causal).unwrap());
    }
}

#[test]
fn full_generator_is_every_pair() {
    for n in 1..=64 {
        let es = gen_full(n).unwrap();
        let want: BTreeSet<Edge> = (0..n as u32).flat_map(|i| (0..n as u32).map(move |j| (i, j))).collect();
        assert_eq!(set(&es, 0, 0), want);
        assert_eq!(es.total_edges(), n * n);
        assert_eq!(compile(&es, 0, 0, CompileOptions::default()).unwrap(), NeighborIndex::full(n));
    }
}

/// Span node `N + h - 1` (heap index `h`) covers the padded leaf range of
/// `h`; every real leaf links to each ancestor above it.
#[test]
fn bpt_matches_ancestor_enumeration() {
    for n in 2..=64 {
        let es = gen_bpt(n).unwrap();
        let p = n.next_power_of_two();
        assert_eq!(es.num_nodes(), n + p - 1);
        let mut want = BTreeSet::new();
        for h in 1..p {
            let depth = usize::BITS - 1 - h.leading_zeros();
            let width = p >> depth;
            let start = (h - (1 << depth)) * width;
            for leaf in start..(start + width).min(n) {
                want.insert((leaf as u32, (n + h - 1) as u32));
            }
        }
        assert_eq!(set(&es, 0, 0), want, "N={n}");
    }
    for n in [8usize, 16, 64] {
        let es = gen_bpt(n).unwrap();
        let log2 = n.ilog2() as usize;
        for leaf in 0..n {
            assert_eq!(es.edges(0, 0).iter().filter(|e| e.0 as usize == leaf).count(), log2, "N={n} leaf {leaf}");
        }
    }
}

#[test]
fn all_nodes_connected_degrees_over_a_thousand_samples() {
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    for i in 0..1000 {
        let n = rng.gen_range(1..=32);
        let k = rng.gen_range(1..=3);
        let cfg = PredictorConfig {
            num_nodes: n,
            d: 4,
            hidden: 3,
            layers: 2,
            heads: 2,
            alpha: k as f64,
            mode: Mode {
                all_nodes_connected: true,
                shared: i % 3 == 0,
                head_adaptive: i % 3 == 1,
                ..Mode::default()
            },
        };
        let mut store = ParamStore::<f64>::new();
        cfg.init_params(&mut store, &mut rng).unwrap();
        let nodes: Vec<f64> = (0..n * 4).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let prep = Prepared::new(cfg, &store, &nodes).unwrap();
        let s = predictor::sample_edges(&prep, &BaseGraph::empty(n), &mut rng).unwrap();
        let heads = s.edges.num_heads();
        for l in 0..2 {
            for h in 0..heads {
                let e = s.edges.edges(l, h);
                assert_eq!(e.len(), k * n, "sample {i}");
                for v in 0..n {
                    assert_eq!(e.iter().filter(|x| x.0 as usize == v).count(), k, "sample {i} node {v}");
                }
            }
        }
        if cfg.mode.shared {
            assert!(s.edges.is_shared());
        }
    }
}

#[test]
fn deduplicated_sparse_entries_lie_between_budget_and_budget_plus_n() {
    let cfg = BenchConfig {
        dedupe: true,
        ..BenchConfig::default()
    };
    for seed in 0..5 {
        let r = bench_scaling::<f64>(&BenchConfig { seed, ..cfg }, &[8, 16, 32]).unwrap();
        for row in &r.rows {
            let budget = (cfg.alpha * row.n as f64) as usize;
            for &c in &row.sparse_entries {
                assert!(c >= budget && c <= budget + row.n, "N={} entries {c}", row.n);
            }
        }
    }
}

#[test]
fn distance_buckets_match_bfs_on_random_instances() {
    let (ok, detail) = sac_core::selftest::distance_oracle(200, 99).unwrap();
    assert!(ok, "{detail}");
}

#[test]
fn shared_layers_compile_once() {
    let es = gen_random(10, 2.0, 3, false).unwrap().replicated(3);
    let a = Arc::new(compile(&es, 0, 0, CompileOptions::default()).unwrap());
    for l in 1..3 {
        assert_eq!(*a, compile(&es, l, 0, CompileOptions::default()).unwrap());
    }
}
