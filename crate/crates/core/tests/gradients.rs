use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sac_core::attention::{self, Attention, BlockConfig};
use sac_core::edgeset::{compile, gen_random, CompileOptions, NeighborIndex};
use sac_core::gradcheck::{check_leaves, check_params, GradReport};
use sac_core::{ParamStore, Tape, Tensor, Var};

const EPS: f64 = 1e-6;
const TOL: f64 = 1e-5;

fn rand_t(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

fn assert_ok(what: &str, r: GradReport) {
    assert!(r.passes(TOL), "{what}: {r:?}");
    assert!(r.checked > 0);
}

/// Reduces any tensor to a scalar with fixed random weights so every
/// output entry gets a distinct upstream gradient.
fn weighted_sum(tape: &mut Tape<f64>, x: Var) -> Var {
    let t = tape.value(x).unwrap().clone();
    let w: Vec<f64> = (0..t.len()).map(|i| ((i * 7 + 3) as f64 * 0.37).sin()).collect();
    let wv = tape.constant(Tensor::new(t.shape(), w).unwrap()).unwrap();
    let p = tape.mul(x, wv).unwrap();
    tape.sum(p).unwrap()
}

#[test]
fn sum_gives_ones() {
    let mut tape = Tape::<f64>::new();
    let x = tape.var(Tensor::new(&[2, 3], vec![0.5; 6]).unwrap()).unwrap();
    let s = tape.sum(x).unwrap();
    tape.backward(s).unwrap();
    assert_eq!(tape.grad(x).unwrap().unwrap(), &[1.0; 6]);
}

#[test]
fn dot_self_gives_twice_x() {
    let mut tape = Tape::<f64>::new();
    let x = tape.var(Tensor::new(&[2], vec![1.0, 2.0]).unwrap()).unwrap();
    let s = tape.dot(x, x).unwrap();
    tape.backward(s).unwrap();
    assert_eq!(tape.grad(x).unwrap().unwrap(), &[2.0, 4.0]);
}

#[test]
fn second_backward_is_an_error() {
    let mut tape = Tape::<f64>::new();
    let x = tape.var(Tensor::scalar(1.0)).unwrap();
    let s = tape.sum(x).unwrap();
    tape.backward(s).unwrap();
    assert!(tape.backward(s).is_err());
    let mut other = Tape::<f64>::new();
    assert!(other.backward(s).is_err());
}

#[test]
fn elementwise_and_matmul_ops() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let a = rand_t(&mut rng, &[3, 4]);
    let b = rand_t(&mut rng, &[4, 5]);
    let c = rand_t(&mut rng, &[3, 4]);
    let bt = rand_t(&mut rng, &[5, 4]);
    let bias = rand_t(&mut rng, &[5]);
    assert_ok(
        "matmul",
        check_leaves(&[a.clone(), b.clone()], EPS, |t, v| {
            let y = t.matmul(v[0], v[1])?;
            Ok(weighted_sum(t, y))
        })
        .unwrap(),
    );
    assert_ok(
        "matmul_nt",
        check_leaves(&[a.clone(), bt], EPS, |t, v| {
            let y = t.matmul_nt(v[0], v[1])?;
            Ok(weighted_sum(t, y))
        })
        .unwrap(),
    );
    assert_ok(
        "add/sub/mul/scale",
        check_leaves(&[a.clone(), c.clone()], EPS, |t, v| {
            let x = t.add(v[0], v[1])?;
            let y = t.sub(x, v[1])?;
            let z = t.mul(y, v[1])?;
            let z = t.scale(z, -1.7)?;
            Ok(weighted_sum(t, z))
        })
        .unwrap(),
    );
    assert_ok(
        "linear",
        check_leaves(&[a.clone(), b, bias], EPS, |t, v| {
            let y = t.linear(v[0], v[1], Some(v[2]))?;
            Ok(weighted_sum(t, y))
        })
        .unwrap(),
    );
    assert_ok(
        "tanh/sigmoid/relu",
        check_leaves(&[a], EPS, |t, v| {
            let x = t.tanh(v[0])?;
            let y = t.sigmoid(v[0])?;
            let z = t.relu(v[0])?;
            let s = t.add(x, y)?;
            let s = t.add(s, z)?;
            Ok(weighted_sum(t, s))
        })
        .unwrap(),
    );
}

#[test]
fn layer_norm_and_shape_ops() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x = rand_t(&mut rng, &[4, 6]);
    let g = rand_t(&mut rng, &[6]);
    let b = rand_t(&mut rng, &[6]);
    assert_ok(
        "layer_norm",
        check_leaves(&[x.clone(), g, b], EPS, |t, v| {
            let y = t.layer_norm(v[0], v[1], v[2])?;
            Ok(weighted_sum(t, y))
        })
        .unwrap(),
    );
    let table = rand_t(&mut rng, &[5, 3]);
    assert_ok(
        "gather/concat/slice/select",
        check_leaves(&[table, x], EPS, |t, v| {
            let e = t.embedding_lookup(v[0], &[4, 0, 4, 2])?;
            let c = t.concat_cols(&[e, v[1]])?;
            let s = t.slice_cols(c, 2, 5)?;
            let r = t.concat_rows(&[s, s])?;
            let row = t.select_row(r, 5)?;
            let a = weighted_sum(t, r);
            let b = weighted_sum(t, row);
            t.add_scalars(&[a, b])
        })
        .unwrap(),
    );
}

#[test]
fn softmax_family() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let s = rand_t(&mut rng, &[7]);
    let offsets: Arc<[usize]> = vec![0, 1, 4, 7].into();
    assert_ok(
        "segment_softmax",
        check_leaves(&[s], EPS, |t, v| {
            let y = t.segment_softmax(v[0], offsets.clone())?;
            Ok(weighted_sum(t, y))
        })
        .unwrap(),
    );
    let x = rand_t(&mut rng, &[3, 4]);
    let mask = [true, false, true, true, true, true, true, true, false, false, true, false];
    assert_ok(
        "softmax_rows/log_softmax",
        check_leaves(&[x.clone()], EPS, |t, v| {
            let a = t.softmax_rows(v[0], Some(&mask))?;
            let b = t.log_softmax(v[0])?;
            let s = t.add(a, b)?;
            Ok(weighted_sum(t, s))
        })
        .unwrap(),
    );
    assert_ok(
        "cross_entropy",
        check_leaves(&[x], EPS, |t, v| t.cross_entropy(v[0], &[(0, 1), (2, 3), (0, 0)], 0.1)).unwrap(),
    );
}

#[test]
fn edge_attention_ops() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let es = gen_random(5, 1.4, 9, false).unwrap();
    let idx = Arc::new(compile(&es, 0, 0, CompileOptions::default()).unwrap());
    let q = rand_t(&mut rng, &[5, 6]);
    let k = rand_t(&mut rng, &[5, 6]);
    let v = rand_t(&mut rng, &[5, 6]);
    assert_ok(
        "edge_scores/segment_softmax/edge_aggregate",
        check_leaves(&[q, k, v], EPS, |t, x| {
            let s = t.edge_scores(x[0], x[1], &idx, 2, 3, 0.7)?;
            let a = t.segment_softmax(s, idx.offsets().clone())?;
            let o = t.edge_aggregate(a, x[2], &idx, 1, 4)?;
            Ok(weighted_sum(t, o))
        })
        .unwrap(),
    );
}

#[test]
fn lstm_cell_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (d, hd) = (3, 4);
    let inputs = [
        rand_t(&mut rng, &[1, d]),
        rand_t(&mut rng, &[1, hd]),
        rand_t(&mut rng, &[1, hd]),
        rand_t(&mut rng, &[d, 4 * hd]),
        rand_t(&mut rng, &[hd, 4 * hd]),
        rand_t(&mut rng, &[4 * hd]),
    ];
    assert_ok(
        "lstm_cell",
        check_leaves(&inputs, EPS, |t, v| {
            let (h, c) = t.lstm_cell(v[0], v[1], v[2], v[3], v[4], v[5])?;
            let (h2, c2) = t.lstm_cell(v[0], h, c, v[3], v[4], v[5])?;
            let a = weighted_sum(t, h2);
            let b = weighted_sum(t, c2);
            t.add_scalars(&[a, b])
        })
        .unwrap(),
    );
}

#[test]
fn candidate_log_prob_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let nodes = rand_t(&mut rng, &[5, 4]);
    let dist = rand_t(&mut rng, &[3, 4]);
    let g = rand_t(&mut rng, &[1, 4]);
    let allowed = [true, true, false, true, true];
    let buckets = [0, 2, 1, 1, 0];
    assert_ok(
        "candidate_log_prob",
        check_leaves(&[nodes, dist, g], EPS, |t, v| {
            let a = t.candidate_log_prob(v[0], Some(v[1]), v[2], &buckets, &allowed, 3)?;
            let b = t.candidate_log_prob(v[0], None, v[2], &[], &allowed, 0)?;
            let h = t.candidate_entropy(v[0], Some(v[1]), v[2], &buckets, &allowed)?;
            t.add_scalars(&[a, b, h])
        })
        .unwrap(),
    );
}

fn block_store(seed: u64, cfg: BlockConfig) -> ParamStore<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    attention::init_block(&mut store, &mut rng, "blk", cfg).unwrap();
    // break the symmetric layer-norm initialization
    for name in ["blk.ln1.g", "blk.ln1.b", "blk.ln2.g", "blk.ln2.b", "blk.ffn.b1", "blk.ffn.b2"] {
        let n = store.get(name).unwrap().len();
        store.set(name, (0..n).map(|_| rng.gen_range(0.5..1.5)).collect()).unwrap();
    }
    store
}

#[test]
fn transformer_block_sparse_and_dense() {
    let cfg = BlockConfig { d: 4, heads: 2, d_ff: 6 };
    let store = block_store(7, cfg);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let h = rand_t(&mut rng, &[5, 4]);
    let es = gen_random(5, 2.0, 3, false).unwrap();
    let idx: Vec<Arc<NeighborIndex>> = vec![Arc::new(compile(&es, 0, 0, CompileOptions::default()).unwrap())];
    let mask = attention::causal_mask(5);
    let run = |dense: bool| {
        let h = h.clone();
        let idx = idx.clone();
        let mask = mask.clone();
        check_params(&store, EPS, |_| true, move |t, s| {
            let x = t.constant(h.clone())?;
            let attn = if dense { Attention::Dense(Some(&mask)) } else { Attention::Sparse(&idx) };
            let y = attention::transformer_block(t, s, "blk", x, attn, 2)?;
            Ok(weighted_sum(t, y))
        })
        .unwrap()
    };
    assert_ok("block sparse", run(false));
    assert_ok("block dense", run(true));
}
