//! Fast oracle checks run by `sac selftest`: gradients, dense equivalence,
//! distance buckets, generator predicates, baseline and bandit behavior.

use alloc::collections::{BTreeSet, VecDeque};
use alloc::format;
use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::attention::{self, Attention, BlockConfig};
use crate::edgeset::{compile, gen_bpt, gen_full, gen_segment, gen_span, CompileOptions, Edge, EdgeSet, NeighborIndex};
use crate::error::Result;
use crate::gradcheck::{check_leaves, check_params};
use crate::params::ParamStore;
use crate::predictor::{self, BaseGraph, DistanceTracker, Mode, PredictorConfig, Prepared};
use crate::rl::BaselineState;
use crate::tape::Tape;
use crate::tensor::Tensor;

const GRAD_EPS: f64 = 1e-6;
const GRAD_TOL: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl core::fmt::Display for Check {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        let tag = if self.passed { "ok  " } else { "FAIL" };
        write!(f, "{tag} {:<22} {}", self.name, self.detail)
    }
}

fn check(name: &'static str, r: Result<(bool, String)>) -> Check {
    match r {
        Ok((passed, detail)) => Check { name, passed, detail },
        Err(e) => Check {
            name,
            passed: false,
            detail: format!("error: {e}"),
        },
    }
}

/// Runs every check; all must pass for a healthy build.
pub fn run_all() -> Vec<Check> {
    vec![
        check("gradients", gradients()),
        check("dense_equivalence", dense_equivalence()),
        check("distance_oracle", distance_oracle(200, 7)),
        check("figure_one", figure_one()),
        check("generators", generators()),
        check("anc_degrees", anc_degrees()),
        check("baseline", baseline()),
        check("two_action_bandit", bandit()),
        check("beam_vs_greedy", beam_vs_greedy()),
    ]
}

fn rand_t(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).expect("positive shape")
}

fn weighted_sum(tape: &mut Tape<f64>, x: crate::Var) -> Result<crate::Var> {
    let shape = tape.value(x)?.shape().to_vec();
    let len = shape.iter().product::<usize>();
    let w: Vec<f64> = (0..len).map(|i| num_traits::Float::sin((i * 5 + 1) as f64 * 0.31)).collect();
    let wv = tape.constant(Tensor::new(&shape, w)?)?;
    let p = tape.mul(x, wv)?;
    tape.sum(p)
}

fn block_store(rng: &mut ChaCha8Rng, cfg: BlockConfig) -> Result<ParamStore<f64>> {
    let mut store = ParamStore::new();
    attention::init_block(&mut store, rng, "b", cfg)?;
    // Move layer-norm parameters off their identity initialization.
    for name in ["b.ln1.g", "b.ln1.b", "b.ln2.g", "b.ln2.b"] {
        let len = store.get(name)?.len();
        let v = (0..len).map(|_| rng.gen_range(0.5..1.5)).collect();
        store.set(name, v)?;
    }
    Ok(store)
}

fn gradients() -> Result<(bool, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst = 0.0f64;
    let mut count = 0usize;
    let mut note = |r: crate::gradcheck::GradReport| {
        worst = worst.max(r.max_rel_err);
        count += r.checked;
    };

    let (a, b, g, bias) = (rand_t(&mut rng, &[3, 4]), rand_t(&mut rng, &[4, 5]), rand_t(&mut rng, &[4]), rand_t(&mut rng, &[4]));
    note(check_leaves(&[a.clone(), b], GRAD_EPS, |t, v| {
        let y = t.matmul(v[0], v[1])?;
        let y = t.tanh(y)?;
        weighted_sum(t, y)
    })?);
    note(check_leaves(&[a.clone(), g, bias], GRAD_EPS, |t, v| {
        let y = t.layer_norm(v[0], v[1], v[2])?;
        let y = t.sigmoid(y)?;
        weighted_sum(t, y)
    })?);
    note(check_leaves(&[a], GRAD_EPS, |t, v| {
        let y = t.log_softmax(v[0])?;
        let s = t.softmax_rows(v[0], None)?;
        let z = t.add(y, s)?;
        weighted_sum(t, z)
    })?);

    let es = crate::edgeset::gen_random(5, 2.0, 3, false)?;
    let idx = Arc::new(compile(&es, 0, 0, CompileOptions::default())?);
    let (q, k, vv) = (rand_t(&mut rng, &[5, 4]), rand_t(&mut rng, &[5, 4]), rand_t(&mut rng, &[5, 4]));
    note(check_leaves(&[q, k, vv], GRAD_EPS, |t, v| {
        let s = t.edge_scores(v[0], v[1], &idx, 2, 2, 0.7)?;
        let w = t.segment_softmax(s, idx.offsets().clone())?;
        let o = t.edge_aggregate(w, v[2], &idx, 0, 2)?;
        weighted_sum(t, o)
    })?);

    let (x, h0, c0) = (rand_t(&mut rng, &[1, 3]), rand_t(&mut rng, &[1, 2]), rand_t(&mut rng, &[1, 2]));
    let (wih, whh, lb) = (rand_t(&mut rng, &[3, 8]), rand_t(&mut rng, &[2, 8]), rand_t(&mut rng, &[8]));
    note(check_leaves(&[x, h0, c0, wih, whh, lb], GRAD_EPS, |t, v| {
        let (h, c) = t.lstm_cell(v[0], v[1], v[2], v[3], v[4], v[5])?;
        let (h, _) = t.lstm_cell(v[0], h, c, v[3], v[4], v[5])?;
        weighted_sum(t, h)
    })?);

    let (nodes, dist, gv) = (rand_t(&mut rng, &[4, 3]), rand_t(&mut rng, &[3, 3]), rand_t(&mut rng, &[1, 3]));
    let buckets = [0usize, 2, 1, 2];
    let allowed = [true, false, true, true];
    note(check_leaves(&[nodes, dist, gv], GRAD_EPS, |t, v| {
        let lp = t.candidate_log_prob(v[0], Some(v[1]), v[2], &buckets, &allowed, 2)?;
        let h = t.candidate_entropy(v[0], Some(v[1]), v[2], &buckets, &allowed)?;
        t.add_scalars(&[lp, h])
    })?);
    note(check_leaves(&[rand_t(&mut rng, &[2, 3])], GRAD_EPS, |t, v| t.cross_entropy(v[0], &[(0, 1), (1, 2)], 0.1))?);

    let cfg = BlockConfig { d: 4, heads: 2, d_ff: 6 };
    let store = block_store(&mut rng, cfg)?;
    let hx = rand_t(&mut rng, &[5, 4]);
    let idx = vec![Arc::new(compile(&crate::edgeset::gen_random(5, 2.0, 9, false)?, 0, 0, CompileOptions::default())?)];
    note(check_params(&store, GRAD_EPS, |_| true, |t, s| {
        let x = t.constant(hx.clone())?;
        let y = attention::transformer_block(t, s, "b", x, Attention::Sparse(&idx), 2)?;
        weighted_sum(t, y)
    })?);

    let pcfg = PredictorConfig {
        num_nodes: 3,
        d: 3,
        hidden: 2,
        layers: 1,
        heads: 1,
        alpha: 1.0,
        mode: Mode::default(),
    };
    let mut pstore = ParamStore::new();
    pcfg.init_params(&mut pstore, &mut rng)?;
    let table = rand_t(&mut rng, &[3, 3]);
    let prep = Prepared::new(pcfg, &pstore, table.values())?;
    let base = BaseGraph::chain(3);
    let s = predictor::sample_edges(&prep, &base, &mut rng)?;
    note(check_params(&pstore, GRAD_EPS, |_| true, |t, st| {
        let nv = t.constant(table.clone())?;
        Ok(predictor::log_prob_on_tape(&pcfg, t, st, nv, &base, &s.actions, false)?.sum)
    })?);

    Ok((worst <= GRAD_TOL, format!("{count} entries, max rel err {worst:.2e}")))
}

fn dense_equivalence() -> Result<(bool, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst = 0.0f64;
    for n in [4usize, 16, 32] {
        for heads in [1usize, 2, 4] {
            let cfg = BlockConfig { d: 8, heads, d_ff: 8 };
            let store = block_store(&mut rng, cfg)?;
            let x = rand_t(&mut rng, &[n, 8]);
            let idx = vec![Arc::new(NeighborIndex::full(n))];
            let run = |sparse: bool| -> Result<Vec<f64>> {
                let mut t = Tape::new();
                let xv = t.constant(x.clone())?;
                let y = if sparse {
                    attention::sparse_mha(&mut t, &store, "b", xv, &idx, heads)?
                } else {
                    attention::dense_mha(&mut t, &store, "b", xv, heads, None)?
                };
                Ok(t.value(y)?.values().to_vec())
            };
            let (s, d) = (run(true)?, run(false)?);
            for (a, b) in s.iter().zip(&d) {
                worst = worst.max((a - b).abs());
            }
        }
    }
    Ok((worst <= 1e-10, format!("max abs diff {worst:.2e}")))
}

/// Reference distances: plain BFS over the union graph, rebuilt from
/// scratch.
fn bfs_oracle(n: usize, base: &[(u32, u32)], built: &[(usize, usize)], origin: usize) -> Vec<i64> {
    let mut adj = vec![Vec::new(); n];
    for &(u, v) in base {
        adj[u as usize].push(v as usize);
        adj[v as usize].push(u as usize);
    }
    for &(u, v) in built {
        adj[u].push(v);
        adj[v].push(u);
    }
    let mut dist = vec![-1i64; n];
    dist[origin] = 0;
    let mut q = VecDeque::from([origin]);
    while let Some(u) = q.pop_front() {
        for &v in &adj[u] {
            if dist[v] < 0 {
                dist[v] = dist[u] + 1;
                q.push_back(v);
            }
        }
    }
    dist.iter().map(|&d| if d > predictor::MAX_DISTANCE as i64 { predictor::MAX_DISTANCE as i64 } else { d }).collect()
}

/// Incremental distance tracking against [`bfs_oracle`] on random
/// instances; returns the number of mismatching instances in the detail.
pub fn distance_oracle(instances: usize, seed: u64) -> Result<(bool, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut bad = 0;
    for _ in 0..instances {
        let n = rng.gen_range(2..24);
        let base: Vec<(u32, u32)> = (0..rng.gen_range(0..n))
            .map(|_| (rng.gen_range(0..n) as u32, rng.gen_range(0..n) as u32))
            .collect();
        let bg = BaseGraph::from_undirected(n, &base)?;
        let mut tracker = DistanceTracker::new(&bg);
        let mut built = Vec::new();
        let mut ok = true;
        for _ in 0..rng.gen_range(1..2 * n) {
            let origin = rng.gen_range(0..n);
            tracker.set_origin(origin);
            let want = bfs_oracle(n, &base, &built, origin);
            let got: Vec<i64> = tracker.buckets().into_iter().map(predictor::bucket_distance).collect();
            ok &= got == want;
            let dst = rng.gen_range(0..n);
            tracker.add_edge(origin, dst);
            built.push((origin, dst));
        }
        if !ok {
            bad += 1;
        }
    }
    Ok((bad == 0, format!("{instances} instances, {bad} mismatches")))
}

fn figure_one() -> Result<(bool, String)> {
    let mut t = DistanceTracker::new(&BaseGraph::empty(4));
    t.add_edge(0, 2);
    t.add_edge(2, 1);
    t.set_origin(1);
    let d = t.signed_distances();
    Ok((d == [2, 0, 1, -1], format!("{d:?}")))
}

fn edge_set(es: &EdgeSet, layer: usize, head: usize) -> BTreeSet<Edge> {
    es.edges(layer, head).iter().copied().collect()
}

fn generators() -> Result<(bool, String)> {
    let mut failures = Vec::new();
    for n in [1usize, 2, 3, 7, 8, 16, 33, 64] {
        let full = gen_full(n)?;
        let want: BTreeSet<Edge> = (0..n as u32).flat_map(|i| (0..n as u32).map(move |j| (i, j))).collect();
        if edge_set(&full, 0, 0) != want || full.total_edges() != n * n {
            failures.push(format!("full N={n}"));
        }
        for seg in [1usize, 3, 8] {
            if seg > n {
                continue;
            }
            let es = gen_segment(n, seg)?;
            let want: BTreeSet<Edge> = (0..n)
                .flat_map(|i| (0..n).filter(move |j| i / seg == j / seg).map(move |j| (i as u32, j as u32)))
                .collect();
            if edge_set(&es, 0, 0) != want {
                failures.push(format!("segment N={n} s={seg}"));
            }
        }
        let spans: Vec<usize> = [1usize, 2, 5].iter().copied().filter(|&s| s <= n).collect();
        let es = gen_span(n, &spans)?;
        for (h, &s) in spans.iter().enumerate() {
            let want: BTreeSet<Edge> = (0..n)
                .flat_map(|i| (0..n).filter(move |&j| j <= i && i - j < s).map(move |j| (i as u32, j as u32)))
                .collect();
            if edge_set(&es, 0, h) != want {
                failures.push(format!("span N={n} s={s}"));
            }
        }
        if n >= 2 {
            let es = gen_bpt(n)?;
            let p = n.next_power_of_two();
            // Leaf i lies under heap node h iff its padded position is in
            // h's range at that depth.
            let want: BTreeSet<Edge> = (0..n)
                .flat_map(|i| {
                    (1..p).filter_map(move |h| {
                        let depth = usize::BITS - 1 - h.leading_zeros();
                        let width = p >> depth;
                        let start = (h - (1 << depth)) * width;
                        (start..start + width).contains(&i).then_some((i as u32, (n + h - 1) as u32))
                    })
                })
                .collect();
            let per_leaf_ok = (0..n).all(|i| es.edges(0, 0).iter().filter(|e| e.0 as usize == i).count() == p.trailing_zeros() as usize);
            if edge_set(&es, 0, 0) != want || !per_leaf_ok {
                failures.push(format!("bpt N={n}"));
            }
        }
    }
    Ok((failures.is_empty(), if failures.is_empty() { "all predicates hold".into() } else { failures.join(", ") }))
}

fn anc_degrees() -> Result<(bool, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut bad = 0;
    let samples = 100;
    for i in 0..samples {
        let n = rng.gen_range(1..=32);
        let alpha = rng.gen_range(1..=3) as f64;
        let cfg = PredictorConfig {
            num_nodes: n,
            d: 4,
            hidden: 3,
            layers: 2,
            heads: 2,
            alpha,
            mode: Mode {
                all_nodes_connected: true,
                shared: i % 2 == 0,
                ..Mode::default()
            },
        };
        let mut store = ParamStore::<f64>::new();
        cfg.init_params(&mut store, &mut rng)?;
        let nodes: Vec<f64> = (0..n * 4).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let prep = Prepared::new(cfg, &store, &nodes)?;
        let s = predictor::sample_edges(&prep, &BaseGraph::empty(n), &mut rng)?;
        let k = alpha as usize;
        let ok = (0..2).all(|l| {
            let e = s.edges.edges(l, 0);
            e.len() == k * n && (0..n).all(|v| e.iter().filter(|x| x.0 as usize == v).count() == k)
        });
        if !ok {
            bad += 1;
        }
    }
    Ok((bad == 0, format!("{samples} samples, {bad} violations")))
}

fn baseline() -> Result<(bool, String)> {
    let mut b = BaselineState::default();
    let first = b.value();
    for r in [1.0, 2.0, 3.0] {
        b.update(r);
    }
    // Zero advantage leaves the predictor untouched.
    let mut tape = Tape::<f64>::new();
    let x = tape.var(Tensor::scalar(0.3))?;
    let mut bs = BaselineState::default();
    bs.update(-1.5);
    let (term, rec) = crate::rl::reinforce_step(&mut tape, x, -1.5, &mut bs, 0, 1)?;
    tape.backward(term)?;
    let g = tape.grad(x)?.map_or(0.0, |g| g[0]);
    let ok = first == 0.0 && b.value() == 2.0 && rec.advantage == 0.0 && g == 0.0;
    Ok((ok, format!("b0={first}, b([1,2,3])={}, zero-advantage grad={g}", b.value())))
}

/// Single-parameter softmax policy over {A, B} with rewards 1 and 0,
/// trained by REINFORCE with the running-mean baseline and plain SGD.
/// Returns `p(A)` after `steps` updates.
pub fn two_action_bandit(steps: usize, lr: f64, seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut theta = 0.0f64;
    let mut baseline = BaselineState::default();
    for _ in 0..steps {
        let mut tape = Tape::<f64>::new();
        let th = tape.var(Tensor::new(&[1, 1], vec![theta])?)?;
        let zero = tape.constant(Tensor::new(&[1, 1], vec![0.0])?)?;
        let logits = tape.concat_cols(&[th, zero])?;
        let lp = tape.log_softmax(logits)?;
        let p_a = num_traits::Float::exp(tape.value(lp)?.values()[0]);
        let action = usize::from(rng.gen::<f64>() >= p_a);
        let chosen = tape.slice_cols(lp, action, 1)?;
        let chosen = tape.sum(chosen)?;
        let reward = if action == 0 { 1.0 } else { 0.0 };
        let (term, _) = crate::rl::reinforce_step(&mut tape, chosen, reward, &mut baseline, 0, 1)?;
        tape.backward(term)?;
        theta -= lr * tape.grad(th)?.map_or(0.0, |g| g[0]);
    }
    Ok(1.0 / (1.0 + num_traits::Float::exp(-theta)))
}

fn bandit() -> Result<(bool, String)> {
    let p = two_action_bandit(2000, 0.1, 1)?;
    Ok((p >= 0.95, format!("p(A) = {p:.4} after 2000 steps")))
}

fn beam_vs_greedy() -> Result<(bool, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut worse = 0;
    let trials = 20;
    for _ in 0..trials {
        let n = rng.gen_range(3..7);
        let cfg = PredictorConfig {
            num_nodes: n,
            d: 4,
            hidden: 3,
            layers: 1,
            heads: 1,
            alpha: 1.0,
            mode: Mode::default(),
        };
        let mut store = ParamStore::<f64>::new();
        cfg.init_params(&mut store, &mut rng)?;
        let nodes: Vec<f64> = (0..n * 4).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let prep = Prepared::new(cfg, &store, &nodes)?;
        let base = BaseGraph::empty(n);
        let greedy = predictor::beam_search(&prep, &base, 1)?;
        let beam = predictor::beam_search(&prep, &base, 5)?;
        if beam.total_log_prob < greedy.total_log_prob - 1e-12 {
            worse += 1;
        }
    }
    Ok((worse == 0, format!("{trials} trials, {worse} where beam < greedy")))
}

#[cfg(test)]
mod tests {
    #[test]
    fn every_check_passes() {
        for c in super::run_all() {
            assert!(c.passed, "{c}");
        }
    }
}
