//! The LSTM edge predictor: emits node indices alternating origin and
//! destination, scoring destinations with distance-bucket embeddings.
//!
//! Everything numeric goes through [`Prepared`], a per-example snapshot of
//! the parameters and node embeddings. Sampling, beam search and
//! teacher-forced re-scoring share its kernels, and the tape version in
//! [`log_prob_on_tape`] repeats the same arithmetic so log-probabilities
//! agree bit for bit.

mod beam;
mod distance;

pub use beam::beam_search;
pub use distance::{bucket, bucket_distance, BaseGraph, DistanceTracker, MAX_DISTANCE, NUM_BUCKETS, UNREACHABLE};

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::edgeset::{edge_budget, EdgeSet};
use crate::error::{Error, Result};
use crate::kernels;
use crate::params::{glorot, ParamStore};
use crate::real::Real;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Predictor variants.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Mode {
    /// Origins follow the schedule `0 ×α, 1 ×α, …`; only destinations are sampled.
    pub all_nodes_connected: bool,
    /// One pass whose edges serve every layer.
    pub shared: bool,
    /// One pass per head, conditioned on a head embedding.
    pub head_adaptive: bool,
    /// Destinations restricted to `dst ≤ origin` (sinks excepted).
    pub causal: bool,
    /// Append one learned sink node at index `N`.
    pub dummy: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PredictorConfig {
    /// Real nodes `N`.
    pub num_nodes: usize,
    /// Node embedding width.
    pub d: usize,
    /// LSTM hidden width.
    pub hidden: usize,
    pub layers: usize,
    pub heads: usize,
    pub alpha: f64,
    pub mode: Mode,
}

/// Which node a step emits.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepKind {
    /// Free origin choice.
    Origin,
    /// Origin fixed by the all-nodes-connected schedule.
    ForcedOrigin(usize),
    Destination { origin: usize },
}

impl PredictorConfig {
    pub fn num_sinks(&self) -> usize {
        usize::from(self.mode.dummy)
    }

    /// Rows of the node table (`N` plus sinks).
    pub fn table_rows(&self) -> usize {
        self.num_nodes + self.num_sinks()
    }

    pub fn budget(&self) -> usize {
        edge_budget(self.alpha, self.num_nodes)
    }

    /// `(layer, head)` of every prediction pass, in order.
    pub fn passes(&self) -> Vec<(usize, usize)> {
        let layers = if self.mode.shared { 1 } else { self.layers };
        let heads = if self.mode.head_adaptive { self.heads } else { 1 };
        (0..layers).flat_map(|l| (0..heads).map(move |h| (l, h))).collect()
    }

    pub fn steps_per_pass(&self) -> usize {
        2 * self.budget()
    }

    pub fn total_steps(&self) -> usize {
        self.passes().len() * self.steps_per_pass()
    }

    /// Copies of each origin under all-nodes-connected (integral `α`).
    fn origin_repeats(&self) -> usize {
        self.alpha as usize
    }

    pub fn check(&self) -> Result<()> {
        if self.num_nodes == 0 || self.d == 0 || self.hidden == 0 || self.layers == 0 || self.heads == 0 {
            return Err(Error::InvalidConfig("predictor dimensions must be positive".into()));
        }
        if self.budget() == 0 {
            return Err(Error::InvalidConfig(format!("alpha·N must be at least 1 (alpha={})", self.alpha)));
        }
        if self.mode.all_nodes_connected && (num_traits::Float::fract(self.alpha) != 0.0 || self.alpha < 1.0) {
            return Err(Error::InvalidConfig("all-nodes-connected needs a positive integral alpha".into()));
        }
        if self.num_nodes > u32::MAX as usize {
            return Err(Error::InvalidConfig("too many nodes".into()));
        }
        Ok(())
    }

    /// Kind of global step `t`, given the origin chosen at the previous step.
    pub fn step_kind(&self, t: usize, origin: Option<usize>) -> Result<StepKind> {
        let within = t % self.steps_per_pass();
        if within % 2 == 0 {
            if self.mode.all_nodes_connected {
                Ok(StepKind::ForcedOrigin(within / 2 / self.origin_repeats()))
            } else {
                Ok(StepKind::Origin)
            }
        } else {
            origin.map(|o| StepKind::Destination { origin: o }).ok_or(Error::UndefinedOrigin)
        }
    }

    /// Candidate mask for a step.
    pub fn allowed(&self, kind: StepKind, out: &mut Vec<bool>) {
        let (n, m) = (self.num_nodes, self.table_rows());
        out.clear();
        match kind {
            StepKind::Origin | StepKind::ForcedOrigin(_) => out.extend((0..m).map(|i| i < n)),
            StepKind::Destination { origin } => {
                out.extend((0..m).map(|i| i >= n || !self.mode.causal || i <= origin));
            }
        }
    }

    /// Registers the predictor parameters (`predictor.*`).
    pub fn init_params<T: Real, R: Rng + ?Sized>(&self, store: &mut ParamStore<T>, rng: &mut R) -> Result<()> {
        self.check()?;
        let (d, h) = (self.d, self.hidden);
        store.insert("predictor.sos", glorot(rng, 1, d))?;
        store.insert("predictor.lstm.w_ih", glorot(rng, d, 4 * h))?;
        store.insert("predictor.lstm.w_hh", glorot(rng, h, 4 * h))?;
        let mut b = vec![T::zero(); 4 * h];
        b[h..2 * h].iter_mut().for_each(|x| *x = T::one());
        store.insert("predictor.lstm.b", Tensor::new(&[4 * h], b)?)?;
        if h != d {
            store.insert("predictor.out", glorot(rng, h, d))?;
        }
        store.insert("predictor.dist", glorot(rng, NUM_BUCKETS, d))?;
        if self.mode.head_adaptive {
            store.insert("predictor.head_emb", glorot(rng, self.heads, d))?;
        }
        Ok(())
    }

    /// Empty edge set shaped for this predictor's output.
    pub fn empty_edges(&self) -> Result<EdgeSet> {
        let es = EdgeSet::new(self.num_nodes, self.layers, self.heads, self.mode.head_adaptive, self.alpha)?;
        Ok(es.with_sinks(self.num_sinks()))
    }

    /// Assembles emitted actions into an edge set (replicated over layers
    /// in shared mode).
    pub fn edges_from_actions(&self, actions: &[u32]) -> Result<EdgeSet> {
        if actions.len() != self.total_steps() {
            return Err(Error::InvalidArgument(format!(
                "expected {} actions, got {}",
                self.total_steps(),
                actions.len()
            )));
        }
        let mut es = self.empty_edges()?;
        let spp = self.steps_per_pass();
        for (p, (layer, head)) in self.passes().into_iter().enumerate() {
            let chunk = &actions[p * spp..(p + 1) * spp];
            for pair in chunk.chunks_exact(2) {
                es.push(layer, head, (pair[0], pair[1]));
            }
        }
        if self.mode.shared && self.layers > 1 {
            es = es.replicated(self.layers);
        }
        Ok(es)
    }
}

/// Per-example snapshot of predictor parameters and node embeddings.
#[derive(Debug, Clone)]
pub struct Prepared<T: Real = f64> {
    pub cfg: PredictorConfig,
    /// Node table `M×d` (the layer-0 node representations).
    pub nodes: Vec<T>,
    /// `nodes · W_ih`, `M×4h`.
    node_gates: Vec<T>,
    /// `sos · W_ih`.
    sos_gates: Vec<T>,
    /// `head_emb · W_ih`, `H×4h`.
    head_gates: Vec<T>,
    w_hh: Vec<T>,
    bias: Vec<T>,
    out: Option<Vec<T>>,
    dist: Vec<T>,
}

impl<T: Real> Prepared<T> {
    pub fn new(cfg: PredictorConfig, store: &ParamStore<T>, nodes: &[T]) -> Result<Self> {
        cfg.check()?;
        let (m, d, h) = (cfg.table_rows(), cfg.d, cfg.hidden);
        if nodes.len() != m * d {
            return Err(Error::ShapeMismatch {
                op: "predictor nodes",
                lhs: vec![m, d],
                rhs: vec![nodes.len()],
            });
        }
        let w_ih = store.get("predictor.lstm.w_ih")?.values();
        let node_gates = kernels::matmul(m, d, 4 * h, nodes, w_ih);
        let sos_gates = kernels::matmul(1, d, 4 * h, store.get("predictor.sos")?.values(), w_ih);
        let head_gates = if cfg.mode.head_adaptive {
            kernels::matmul(cfg.heads, d, 4 * h, store.get("predictor.head_emb")?.values(), w_ih)
        } else {
            Vec::new()
        };
        let out = if h != d { Some(store.get("predictor.out")?.values().to_vec()) } else { None };
        Ok(Self {
            cfg,
            nodes: nodes.to_vec(),
            node_gates,
            sos_gates,
            head_gates,
            w_hh: store.get("predictor.lstm.w_hh")?.values().to_vec(),
            bias: store.get("predictor.lstm.b")?.values().to_vec(),
            out,
            dist: store.get("predictor.dist")?.values().to_vec(),
        })
    }

    fn input_gates(&self, last: Option<usize>, head: usize) -> Vec<T> {
        let g4 = 4 * self.cfg.hidden;
        let base = match last {
            None => &self.sos_gates[..],
            Some(y) => &self.node_gates[y * g4..(y + 1) * g4],
        };
        if self.cfg.mode.head_adaptive {
            let hg = &self.head_gates[head * g4..(head + 1) * g4];
            base.iter().zip(hg).map(|(&a, &b)| a + b).collect()
        } else {
            base.to_vec()
        }
    }

    /// Candidate logits for `g` (`-inf` where disallowed).
    pub fn logits(&self, kind: StepKind, g: &[T], buckets: &[usize], allowed: &[bool]) -> Vec<T> {
        match kind {
            StepKind::Destination { .. } => kernels::candidate_logits(&self.nodes, Some(&self.dist), g, buckets, allowed),
            _ => kernels::candidate_logits(&self.nodes, None, g, buckets, allowed),
        }
    }

    /// Distance-table row `b`.
    pub fn dist_row(&self, b: usize) -> &[T] {
        &self.dist[b * self.cfg.d..(b + 1) * self.cfg.d]
    }
}

/// Decoding state of one action sequence.
#[derive(Debug, Clone)]
pub struct Rollout<'a, T: Real = f64> {
    prep: &'a Prepared<T>,
    passes: Vec<(usize, usize)>,
    h: Vec<T>,
    c: Vec<T>,
    g: Vec<T>,
    tracker: DistanceTracker,
    t: usize,
    origin: Option<usize>,
    last: Option<usize>,
    kind: Option<StepKind>,
    allowed: Vec<bool>,
    buckets: Vec<usize>,
}

impl<'a, T: Real> Rollout<'a, T> {
    pub fn new(prep: &'a Prepared<T>, base: &BaseGraph) -> Self {
        let h = prep.cfg.hidden;
        Self {
            prep,
            passes: prep.cfg.passes(),
            h: vec![T::zero(); h],
            c: vec![T::zero(); h],
            g: Vec::new(),
            tracker: DistanceTracker::new(&base.padded(prep.cfg.table_rows())),
            t: 0,
            origin: None,
            last: None,
            kind: None,
            allowed: Vec::new(),
            buckets: Vec::new(),
        }
    }

    pub fn step(&self) -> usize {
        self.t
    }

    pub fn is_done(&self) -> bool {
        self.t >= self.prep.cfg.total_steps()
    }

    pub fn tracker(&self) -> &DistanceTracker {
        &self.tracker
    }

    /// Runs the LSTM for the current step and returns its kind. Idempotent
    /// until [`Rollout::commit`].
    pub fn advance(&mut self) -> Result<StepKind> {
        if let Some(k) = self.kind {
            return Ok(k);
        }
        if self.is_done() {
            return Err(Error::InvalidArgument("rollout already complete".into()));
        }
        let cfg = &self.prep.cfg;
        let kind = cfg.step_kind(self.t, self.origin)?;
        let head = self.passes[self.t / cfg.steps_per_pass()].1;
        let xg = self.prep.input_gates(self.last, head);
        let (_, h, c) = kernels::lstm_step(&xg, &self.h, &self.c, &self.prep.w_hh, &self.prep.bias);
        self.g = match &self.prep.out {
            Some(w) => kernels::matmul(1, cfg.hidden, cfg.d, &h, w),
            None => h.clone(),
        };
        self.h = h;
        self.c = c;
        cfg.allowed(kind, &mut self.allowed);
        if let StepKind::Destination { origin } = kind {
            self.tracker.set_origin(origin);
            self.tracker.buckets_into(&mut self.buckets);
        }
        self.kind = Some(kind);
        Ok(kind)
    }

    /// Predictor output `g_t` of the current step.
    pub fn g(&self) -> &[T] {
        &self.g
    }

    pub fn allowed(&self) -> &[bool] {
        &self.allowed
    }

    pub fn buckets(&self) -> &[usize] {
        &self.buckets
    }

    /// Logits of the current step.
    pub fn logits(&mut self) -> Result<Vec<T>> {
        let kind = self.advance()?;
        Ok(self.prep.logits(kind, &self.g, &self.buckets, &self.allowed))
    }

    /// Log-probabilities of the current step (`-inf` where disallowed).
    pub fn log_probs(&mut self) -> Result<Vec<T>> {
        let logits = self.logits()?;
        let lse = kernels::log_sum_exp_masked(&logits, &self.allowed);
        Ok(logits
            .iter()
            .zip(&self.allowed)
            .map(|(&l, &a)| if a { l - lse } else { T::neg_infinity() })
            .collect())
    }

    /// Emits `node` for the current step.
    pub fn commit(&mut self, node: usize) -> Result<()> {
        let kind = self.advance()?;
        if let StepKind::ForcedOrigin(o) = kind {
            if node != o {
                return Err(Error::DisallowedAction { step: self.t, node });
            }
        }
        if node >= self.allowed.len() || !self.allowed[node] {
            return Err(Error::DisallowedAction { step: self.t, node });
        }
        match kind {
            StepKind::Origin | StepKind::ForcedOrigin(_) => self.origin = Some(node),
            StepKind::Destination { origin } => {
                self.tracker.add_edge(origin, node);
                self.origin = None;
            }
        }
        self.last = Some(node);
        self.kind = None;
        self.t += 1;
        Ok(())
    }
}

/// An emitted action sequence with its log-probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample<T: Real = f64> {
    pub edges: EdgeSet,
    /// Every emitted node, forced origins included.
    pub actions: Vec<u32>,
    /// Per-action log-probability; forced steps contribute 0.
    pub log_probs: Vec<T>,
    pub total_log_prob: T,
}

fn finish<T: Real>(cfg: &PredictorConfig, actions: Vec<u32>, log_probs: Vec<T>) -> Result<Sample<T>> {
    let edges = cfg.edges_from_actions(&actions)?;
    let total_log_prob = log_probs.iter().copied().sum();
    Ok(Sample {
        edges,
        actions,
        log_probs,
        total_log_prob,
    })
}

/// Draws an action sequence at temperature 1.
pub fn sample_edges<T: Real, R: Rng + ?Sized>(prep: &Prepared<T>, base: &BaseGraph, rng: &mut R) -> Result<Sample<T>> {
    let total = prep.cfg.total_steps();
    let mut ro = Rollout::new(prep, base);
    let mut actions = Vec::with_capacity(total);
    let mut log_probs = Vec::with_capacity(total);
    while !ro.is_done() {
        let kind = ro.advance()?;
        let (node, lp) = if let StepKind::ForcedOrigin(o) = kind {
            (o, T::zero())
        } else {
            let lps = ro.log_probs()?;
            let node = draw(&lps, &ro.allowed, rng);
            (node, lps[node])
        };
        ro.commit(node)?;
        actions.push(node as u32);
        log_probs.push(lp);
    }
    finish(&prep.cfg, actions, log_probs)
}

fn draw<T: Real, R: Rng + ?Sized>(log_probs: &[T], allowed: &[bool], rng: &mut R) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    let mut last = 0;
    for (i, (&lp, &a)) in log_probs.iter().zip(allowed).enumerate() {
        if !a {
            continue;
        }
        acc += num_traits::Float::exp(lp.as_f64());
        last = i;
        if u < acc {
            return i;
        }
    }
    last
}

/// Teacher-forced per-action log-probabilities of `actions`.
pub fn rescore<T: Real>(prep: &Prepared<T>, base: &BaseGraph, actions: &[u32]) -> Result<Vec<T>> {
    let total = prep.cfg.total_steps();
    if actions.len() != total {
        return Err(Error::InvalidArgument(format!("expected {total} actions, got {}", actions.len())));
    }
    let mut ro = Rollout::new(prep, base);
    let mut out = Vec::with_capacity(total);
    for &a in actions {
        let kind = ro.advance()?;
        let lp = if let StepKind::ForcedOrigin(_) = kind {
            T::zero()
        } else {
            let lps = ro.log_probs()?;
            lps.get(a as usize).copied().unwrap_or(T::neg_infinity())
        };
        ro.commit(a as usize)?;
        out.push(lp);
    }
    Ok(out)
}

/// Teacher-forced log-probability recorded on a tape.
#[derive(Debug, Clone)]
pub struct TapeLogProb<T: Real> {
    /// `Σ log p(a_i | a_<i)` over sampled (non-forced) steps.
    pub sum: Var,
    /// Summed per-step entropy, when requested.
    pub entropy: Option<Var>,
    /// Per-action values; forced steps are 0.
    pub values: Vec<T>,
}

/// Records the log-probability of `actions` on `tape` as a function of the
/// predictor parameters and the node table `nodes` (`M×d`).
pub fn log_prob_on_tape<T: Real>(
    cfg: &PredictorConfig,
    tape: &mut Tape<T>,
    store: &ParamStore<T>,
    nodes: Var,
    base: &BaseGraph,
    actions: &[u32],
    with_entropy: bool,
) -> Result<TapeLogProb<T>> {
    let total = cfg.total_steps();
    if actions.len() != total {
        return Err(Error::InvalidArgument(format!("expected {total} actions, got {}", actions.len())));
    }
    record(cfg, tape, store, nodes, base, Drive::Teacher(actions), with_entropy).map(|(lp, _)| lp)
}

/// Samples an action sequence while recording it on `tape`. Draws the same
/// actions as [`sample_edges`] for the same parameters and `rng` state.
pub fn sample_on_tape<T: Real, R: Rng + ?Sized>(
    cfg: &PredictorConfig,
    tape: &mut Tape<T>,
    store: &ParamStore<T>,
    nodes: Var,
    base: &BaseGraph,
    rng: &mut R,
    with_entropy: bool,
) -> Result<(TapeLogProb<T>, Sample<T>)> {
    let mut draw_fn = |lps: &[T], allowed: &[bool]| draw(lps, allowed, rng);
    let (lp, actions) = record(cfg, tape, store, nodes, base, Drive::Sample(&mut draw_fn), with_entropy)?;
    let sample = finish(cfg, actions, lp.values.clone())?;
    Ok((lp, sample))
}

enum Drive<'a, T> {
    Teacher(&'a [u32]),
    Sample(&'a mut dyn FnMut(&[T], &[bool]) -> usize),
}

fn record<T: Real>(
    cfg: &PredictorConfig,
    tape: &mut Tape<T>,
    store: &ParamStore<T>,
    nodes: Var,
    base: &BaseGraph,
    mut drive: Drive<'_, T>,
    with_entropy: bool,
) -> Result<(TapeLogProb<T>, Vec<u32>)> {
    cfg.check()?;
    let total = cfg.total_steps();
    let hd = cfg.hidden;
    let w_ih = tape.param(store, "predictor.lstm.w_ih")?;
    let w_hh = tape.param(store, "predictor.lstm.w_hh")?;
    let bias = tape.param(store, "predictor.lstm.b")?;
    let sos = tape.param(store, "predictor.sos")?;
    let dist = tape.param(store, "predictor.dist")?;
    let out = if hd != cfg.d { Some(tape.param(store, "predictor.out")?) } else { None };
    let node_gates = tape.matmul(nodes, w_ih)?;
    let sos_gates = tape.matmul(sos, w_ih)?;
    let head_gates = if cfg.mode.head_adaptive {
        let he = tape.param(store, "predictor.head_emb")?;
        Some(tape.matmul(he, w_ih)?)
    } else {
        None
    };
    let passes = cfg.passes();
    let mut h = tape.constant(Tensor::zeros(&[1, hd]))?;
    let mut c = h;
    let mut tracker = DistanceTracker::new(&base.padded(cfg.table_rows()));
    let (mut origin, mut last) = (None::<usize>, None::<usize>);
    let mut allowed = Vec::new();
    let mut buckets = Vec::new();
    let mut terms = Vec::new();
    let mut entropies = Vec::new();
    let mut values = Vec::with_capacity(total);
    let mut actions = Vec::with_capacity(total);
    for t in 0..total {
        let kind = cfg.step_kind(t, origin)?;
        let head = passes[t / cfg.steps_per_pass()].1;
        let mut xg = match last {
            None => sos_gates,
            Some(y) => tape.gather_rows(node_gates, &[y])?,
        };
        if let Some(hg) = head_gates {
            let row = tape.gather_rows(hg, &[head])?;
            xg = tape.add(xg, row)?;
        }
        let hc = tape.lstm_gates(xg, h, c, w_hh, bias)?;
        h = tape.select_row(hc, 0)?;
        c = tape.select_row(hc, 1)?;
        cfg.allowed(kind, &mut allowed);
        let a = match kind {
            StepKind::ForcedOrigin(o) => {
                if let Drive::Teacher(acts) = &drive {
                    if acts[t] as usize != o {
                        return Err(Error::DisallowedAction { step: t, node: acts[t] as usize });
                    }
                }
                values.push(T::zero());
                origin = Some(o);
                o
            }
            StepKind::Origin | StepKind::Destination { .. } => {
                let g = match out {
                    Some(w) => tape.matmul(h, w)?,
                    None => h,
                };
                let dv = if let StepKind::Destination { origin: o } = kind {
                    tracker.set_origin(o);
                    tracker.buckets_into(&mut buckets);
                    Some(dist)
                } else {
                    buckets.clear();
                    None
                };
                let (lp, a) = match &mut drive {
                    Drive::Teacher(acts) => {
                        let a = acts[t] as usize;
                        let lp = tape
                            .candidate_log_prob(nodes, dv, g, &buckets, &allowed, a)
                            .map_err(|_| Error::DisallowedAction { step: t, node: a })?;
                        (lp, a)
                    }
                    Drive::Sample(f) => {
                        let al = &allowed;
                        tape.candidate_pick(nodes, dv, g, &buckets, al, &mut |lps| f(lps, al))?
                    }
                };
                if with_entropy {
                    entropies.push(tape.candidate_entropy(nodes, dv, g, &buckets, &allowed)?);
                }
                values.push(tape.value(lp)?.item());
                terms.push(lp);
                match kind {
                    StepKind::Destination { origin: o } => {
                        tracker.add_edge(o, a);
                        origin = None;
                    }
                    _ => origin = Some(a),
                }
                a
            }
        };
        actions.push(a as u32);
        last = Some(a);
    }
    let sum = tape.add_scalars(&terms)?;
    let entropy = if with_entropy { Some(tape.add_scalars(&entropies)?) } else { None };
    Ok((TapeLogProb { sum, entropy, values }, actions))
}
