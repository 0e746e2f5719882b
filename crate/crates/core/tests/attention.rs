use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sac_core::attention::{causal_mask, dense_mha, init_block, sparse_mha, BlockConfig};
use sac_core::edgeset::{compile, gen_full, gen_random, CompileOptions, NeighborIndex};
use sac_core::{ParamStore, Tape, Tensor};

fn store_and_input(n: usize, d: usize, seed: u64) -> (ParamStore<f64>, Tensor<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    init_block(&mut store, &mut rng, "b", BlockConfig { d, heads: 1, d_ff: 4 }).unwrap();
    let x = Tensor::new(&[n, d], (0..n * d).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
    (store, x)
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[test]
fn sparse_over_full_edges_equals_dense() {
    for n in [4usize, 16, 32] {
        for heads in [1usize, 2, 4] {
            let d = 8;
            let (store, x) = store_and_input(n, d, (n * 10 + heads) as u64);
            let idx = vec![Arc::new(compile(&gen_full(n).unwrap(), 0, 0, CompileOptions::default()).unwrap())];
            let mut t = Tape::new();
            let xv = t.var(x.clone()).unwrap();
            let s = sparse_mha(&mut t, &store, "b", xv, &idx, heads).unwrap();
            let dv = t.var(x).unwrap();
            let dn = dense_mha(&mut t, &store, "b", dv, heads, None).unwrap();
            let diff = max_abs_diff(t.value(s).unwrap().values(), t.value(dn).unwrap().values());
            assert!(diff <= 1e-10, "N={n} heads={heads}: {diff:e}");
        }
    }
}

/// Dense attention under an arbitrary keep-mask is the sparse layer over
/// the mask's neighbor lists.
#[test]
fn masked_dense_equals_sparse_on_random_lists() {
    for seed in 0..10u64 {
        let n = 12;
        let (store, x) = store_and_input(n, 8, seed);
        let es = gen_random(n, 3.0, seed, false).unwrap();
        let ix = compile(&es, 0, 0, CompileOptions::default()).unwrap();
        let mut mask = vec![false; n * n];
        for i in 0..n {
            for &j in ix.neighbors(i) {
                mask[i * n + j as usize] = true;
            }
        }
        let mut t = Tape::new();
        let xv = t.var(x).unwrap();
        let s = sparse_mha(&mut t, &store, "b", xv, &[Arc::new(ix)], 2).unwrap();
        let dn = dense_mha(&mut t, &store, "b", xv, 2, Some(&mask)).unwrap();
        assert!(max_abs_diff(t.value(s).unwrap().values(), t.value(dn).unwrap().values()) <= 1e-12);
    }
}

#[test]
fn causal_full_index_equals_causal_mask() {
    let n = 9;
    let (store, x) = store_and_input(n, 8, 3);
    let ix = NeighborIndex::full(n).causal_filter();
    let mut t = Tape::new();
    let xv = t.var(x).unwrap();
    let s = sparse_mha(&mut t, &store, "b", xv, &[Arc::new(ix)], 4).unwrap();
    let dn = dense_mha(&mut t, &store, "b", xv, 4, Some(&causal_mask(n))).unwrap();
    assert!(max_abs_diff(t.value(s).unwrap().values(), t.value(dn).unwrap().values()) <= 1e-12);
}

#[test]
fn score_counts_follow_entries() {
    let n = 10;
    let (store, x) = store_and_input(n, 8, 4);
    let ix = Arc::new(compile(&gen_random(n, 2.0, 1, false).unwrap(), 0, 0, CompileOptions::default()).unwrap());
    let mut t = Tape::new();
    let xv = t.var(x).unwrap();
    sparse_mha(&mut t, &store, "b", xv, &[ix.clone()], 2).unwrap();
    assert_eq!(t.counters().score_evals, 2 * ix.num_entries() as u64);
    let before = t.counters().score_evals;
    dense_mha(&mut t, &store, "b", xv, 2, None).unwrap();
    assert_eq!(t.counters().score_evals - before, 2 * (n * n) as u64);
}
