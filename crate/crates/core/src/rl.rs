//! Joint training: Φ by label-smoothed likelihood, the predictor Θ by
//! REINFORCE against a running-mean reward baseline.

use alloc::sync::Arc;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::edgeset::{CompileOptions, EdgeSet};
use crate::error::{Error, Result};
use crate::kernels;
use crate::model::{is_predictor_param, Input, LayerAttention, ModelConfig};
use crate::params::{adam_step, AdamConfig, ParamStore};
use crate::predictor::{self, BaseGraph, Prepared, PredictorConfig, Sample, TapeLogProb};
use crate::real::Real;
use crate::tape::{Tape, Var};

/// Running arithmetic mean of all rewards seen so far.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct BaselineState {
    pub count: u64,
    pub sum: f64,
}

impl BaselineState {
    /// Current baseline; 0 before the first reward.
    pub fn value(&self) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            self.sum / self.count as f64
        }
    }

    pub fn update(&mut self, reward: f64) {
        self.count += 1;
        self.sum += reward;
    }
}

/// Reward bookkeeping for one example.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RewardRecord {
    pub example: u64,
    pub reward: f64,
    /// Baseline snapshot the advantage was computed against.
    pub baseline: f64,
    pub advantage: f64,
    pub actions: usize,
}

/// Mean gold log-probability of `targets` (`(row, class)`) under the
/// row-major `logits` with `classes` columns. Detached from any tape.
pub fn compute_reward<T: Real>(logits: &[T], classes: usize, targets: &[(usize, usize)]) -> Result<f64> {
    if classes == 0 || logits.len() % classes != 0 {
        return Err(Error::InvalidArgument("logits length is not a multiple of the class count".into()));
    }
    let rows = logits.len() / classes;
    if targets.is_empty() || targets.len() > rows {
        return Err(Error::ShapeMismatch {
            op: "compute_reward",
            lhs: alloc::vec![rows, classes],
            rhs: alloc::vec![targets.len()],
        });
    }
    let all = alloc::vec![true; classes];
    let mut total = 0.0;
    for &(r, y) in targets {
        if r >= rows || y >= classes {
            return Err(Error::IndexOutOfRange { index: r.max(y), len: rows.max(classes) });
        }
        let row = &logits[r * classes..(r + 1) * classes];
        let lse = kernels::log_sum_exp_masked(row, &all);
        total += (row[y] - lse).as_f64();
    }
    let r = total / targets.len() as f64;
    if !r.is_finite() {
        return Err(Error::NonFinite("reward"));
    }
    Ok(r)
}

/// Policy-gradient term for one example: returns `-(R - b) · Σ log p` so
/// that minimizing it ascends `(R - b)·∇Σ log p`, then folds `R` into the
/// baseline.
pub fn reinforce_step<T: Real>(
    tape: &mut Tape<T>,
    log_prob_sum: Var,
    reward: f64,
    baseline: &mut BaselineState,
    example: u64,
    actions: usize,
) -> Result<(Var, RewardRecord)> {
    if !reward.is_finite() {
        return Err(Error::NonFinite("reward"));
    }
    let b = baseline.value();
    let advantage = reward - b;
    let term = tape.scale(log_prob_sum, T::from_f64(-advantage))?;
    baseline.update(reward);
    Ok((
        term,
        RewardRecord {
            example,
            reward,
            baseline: b,
            advantage,
            actions,
        },
    ))
}

/// Where a forward pass gets its attention edges.
#[derive(Debug, Clone)]
pub enum EdgeSource {
    /// Sampled (training) or beam-decoded (evaluation) by the predictor.
    Learned(PredictorConfig),
    /// The same edge set for every example.
    Fixed(Arc<EdgeSet>),
    /// Dense attention (reference model).
    Dense,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub lr_phi: f64,
    pub lr_theta: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub label_smoothing: f64,
    /// Global-norm clip for Θ gradients.
    pub clip_theta: Option<f64>,
    pub clip_phi: Option<f64>,
    pub beam: usize,
    /// Divide advantages by the running reward standard deviation.
    pub reward_normalization: bool,
    /// Weight of the policy-entropy bonus.
    pub entropy_coef: f64,
    pub compile: CompileOptions,
    /// Seed of the per-example sampling streams.
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr_phi: 1e-3,
            lr_theta: 1e-3,
            beta1: 0.9,
            beta2: 0.98,
            eps: 1e-9,
            label_smoothing: 0.1,
            clip_theta: Some(1.0),
            clip_phi: None,
            beam: 5,
            reward_normalization: false,
            entropy_coef: 0.0,
            compile: CompileOptions::default(),
            seed: 0,
        }
    }
}

/// Input payload of an example.
#[derive(Debug, Clone, PartialEq)]
pub enum ExampleInput {
    Tokens(Vec<usize>),
    Features(Arc<Vec<f64>>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub input: ExampleInput,
    /// `(logit row, gold class)` pairs.
    pub targets: Vec<(usize, usize)>,
    /// Structure for distance encodings.
    pub base: Option<Arc<BaseGraph>>,
    /// Node a good edge set should reach (edge hit-rate metric).
    pub salient: Option<usize>,
}

impl Example {
    fn as_input(&self) -> Input<'_> {
        match &self.input {
            ExampleInput::Tokens(t) => Input::Tokens(t),
            ExampleInput::Features(f) => Input::Features(f),
        }
    }
}

/// Aggregates of one optimizer step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepStats {
    pub step: u64,
    /// Mean label-smoothed task loss.
    pub loss: f64,
    /// Fraction of targets whose argmax is gold.
    pub accuracy: f64,
    pub mean_reward: f64,
    pub baseline: f64,
    pub score_evals: u64,
    /// Largest activation element count of a single forward pass.
    pub activation_elements: u64,
    /// Fraction of edges pointing at the salient node (when defined).
    pub edge_hit_rate: Option<f64>,
    pub rewards: Vec<RewardRecord>,
    pub theta_grad_norm: f64,
}

/// Metrics of a deterministic evaluation pass.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalStats {
    pub examples: usize,
    pub targets: usize,
    /// Mean unsmoothed cross entropy (nats per target).
    pub loss: f64,
    pub accuracy: f64,
    /// Mean gold log-probability (nats).
    pub mean_log_prob: f64,
    /// Cross entropy in bits per target.
    pub bpc: f64,
    pub score_evals: u64,
    /// Largest activation element count of a single forward pass.
    pub activation_elements: u64,
    /// Summed log-probability of the decoded edge sequences.
    pub edge_log_prob: f64,
    pub edge_hit_rate: Option<f64>,
}

/// Fraction of edges in `es` whose destination is `node`.
pub fn edge_hit_rate(es: &EdgeSet, node: usize) -> f64 {
    let total = es.total_edges();
    if total == 0 {
        return 0.0;
    }
    let hits = es.lists().iter().flatten().filter(|e| e.1 as usize == node).count();
    hits as f64 / total as f64
}

struct Forward<T: Real> {
    tape: Tape<T>,
    logits: Var,
    sample: Option<Sample<T>>,
    edges: Option<Arc<EdgeSet>>,
    policy: Option<TapeLogProb<T>>,
}

/// Model Φ, optional predictor Θ, their parameters and the baseline.
#[derive(Debug, Clone)]
pub struct Trainer<T: Real = f64> {
    pub model: ModelConfig,
    pub source: EdgeSource,
    pub store: ParamStore<T>,
    pub baseline: BaselineState,
    pub cfg: TrainConfig,
    step: u64,
    examples_seen: u64,
    reward_sq: f64,
}

impl<T: Real> Trainer<T> {
    pub fn new(model: ModelConfig, source: EdgeSource, store: ParamStore<T>, cfg: TrainConfig) -> Result<Self> {
        model.check()?;
        if let EdgeSource::Learned(p) = &source {
            p.check()?;
            if p.num_nodes != model.n || p.d != model.block.d || p.layers != model.layers || p.mode.dummy != model.dummy {
                return Err(Error::InvalidConfig("predictor and model disagree on N, d, L or dummy".into()));
            }
            if p.mode.head_adaptive && p.heads != model.block.heads {
                return Err(Error::InvalidConfig("head-adaptive predictor needs the model head count".into()));
            }
        }
        if cfg.beam == 0 {
            return Err(Error::InvalidConfig("beam must be at least 1".into()));
        }
        Ok(Self {
            model,
            source,
            store,
            baseline: BaselineState::default(),
            cfg,
            step: 0,
            examples_seen: 0,
            reward_sq: 0.0,
        })
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn examples_seen(&self) -> u64 {
        self.examples_seen
    }

    /// Deterministic stream for the `example`-th training example.
    pub fn example_rng(&self, example: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.seed);
        rng.set_stream(example);
        rng
    }

    fn base_for(&self, ex: &Example) -> BaseGraph {
        match &ex.base {
            Some(b) => (**b).clone(),
            None => BaseGraph::empty(self.model.n),
        }
    }

    /// Edge set for an example: sampled when `rng` is given, beam-decoded
    /// with `beam` otherwise.
    /// With `rng` the predictor's log-probability is recorded on the tape.
    fn forward(&self, ex: &Example, rng: Option<&mut ChaCha8Rng>, beam: usize) -> Result<Forward<T>> {
        let mut tape = Tape::new();
        let nodes = self.model.embed(&mut tape, &self.store, ex.as_input())?;
        let mut policy = None;
        let (attn, sample, edges) = match &self.source {
            EdgeSource::Dense => (LayerAttention::Dense, None, None),
            EdgeSource::Fixed(es) => (self.model.compile_edges(es, self.cfg.compile)?, None, Some(es.clone())),
            EdgeSource::Learned(p) => {
                let base = self.base_for(ex);
                let s = match rng {
                    Some(r) => {
                        let with_entropy = self.cfg.entropy_coef != 0.0;
                        let (lp, s) = predictor::sample_on_tape(p, &mut tape, &self.store, nodes, &base, r, with_entropy)?;
                        policy = Some(lp);
                        s
                    }
                    None => {
                        let prep = Prepared::new(*p, &self.store, tape.value(nodes)?.values())?;
                        predictor::beam_search(&prep, &base, beam)?
                    }
                };
                let es = Arc::new(s.edges.clone());
                (self.model.compile_edges(&es, self.cfg.compile)?, Some(s), Some(es))
            }
        };
        let logits = self.model.encode(&mut tape, &self.store, nodes, &attn)?;
        Ok(Forward {
            tape,
            logits,
            sample,
            edges,
            policy,
        })
    }

    /// Decodes (beam) the edge set the model would use for `ex`.
    pub fn decode_edges(&self, ex: &Example, beam: usize) -> Result<Option<Sample<T>>> {
        Ok(self.forward(ex, None, beam)?.sample)
    }

    /// One optimizer step over `batch`.
    pub fn train_step(&mut self, batch: &[Example]) -> Result<StepStats> {
        if batch.is_empty() {
            return Err(Error::InvalidArgument("empty batch".into()));
        }
        let classes = self.model.output.classes();
        let inv_b = T::one() / T::from_f64(batch.len() as f64);
        let smoothing = T::from_f64(self.cfg.label_smoothing);
        let (mut loss_sum, mut correct, mut total_targets) = (0.0, 0usize, 0usize);
        let (mut score_evals, mut act) = (0u64, 0u64);
        let mut hit = (0.0, 0usize);
        let mut rewards = Vec::with_capacity(batch.len());
        self.store.zero_grads();
        for ex in batch {
            let id = self.examples_seen;
            self.examples_seen += 1;
            let mut rng = self.example_rng(id);
            let fwd = self.forward(ex, Some(&mut rng), 1)?;
            let Forward {
                mut tape,
                logits,
                sample,
                edges,
                policy,
            } = fwd;
            let ce = tape.cross_entropy(logits, &ex.targets, smoothing)?;
            let lv = tape.value(logits)?.values().to_vec();
            loss_sum += tape.value(ce)?.item().as_f64();
            correct += count_correct(&lv, classes, &ex.targets);
            total_targets += ex.targets.len();
            score_evals += tape.counters().score_evals;
            act = act.max(tape.activation_elements() as u64);
            if let (Some(es), Some(node)) = (&edges, ex.salient) {
                hit.0 += edge_hit_rate(es, node);
                hit.1 += 1;
            }
            let reward = compute_reward(&lv, classes, &ex.targets)?;
            let mut terms = alloc::vec![ce];
            if let (Some(lp), Some(s)) = (policy, &sample) {
                let mut baseline = self.baseline;
                let (mut term, mut rec) = reinforce_step(&mut tape, lp.sum, reward, &mut baseline, id, s.actions.len())?;
                if self.cfg.reward_normalization && self.baseline.count > 1 {
                    let n = self.baseline.count as f64;
                    let mean = self.baseline.value();
                    let std = num_traits::Float::sqrt((self.reward_sq / n - mean * mean).max(0.0));
                    let k = 1.0 / (std + 1e-8);
                    term = tape.scale(term, T::from_f64(k))?;
                    rec.advantage *= k;
                }
                self.baseline = baseline;
                self.reward_sq += reward * reward;
                terms.push(term);
                if let Some(h) = lp.entropy {
                    terms.push(tape.scale(h, T::from_f64(-self.cfg.entropy_coef))?);
                }
                rewards.push(rec);
            } else {
                rewards.push(RewardRecord {
                    example: id,
                    reward,
                    baseline: self.baseline.value(),
                    advantage: 0.0,
                    actions: 0,
                });
            }
            let total = tape.add_scalars(&terms)?;
            let total = tape.scale(total, inv_b)?;
            tape.backward(total)?;
            tape.accumulate_param_grads(&mut self.store)?;
        }
        let theta_norm = if matches!(self.source, EdgeSource::Learned(_)) {
            match self.cfg.clip_theta {
                Some(c) => self.store.clip_grad_norm(is_predictor_param, T::from_f64(c)),
                None => self.store.grad_norm(is_predictor_param),
            }
            .as_f64()
        } else {
            0.0
        };
        if let Some(c) = self.cfg.clip_phi {
            self.store.clip_grad_norm(|n| !is_predictor_param(n), T::from_f64(c));
        }
        let adam = |lr| AdamConfig {
            lr,
            beta1: self.cfg.beta1,
            beta2: self.cfg.beta2,
            eps: self.cfg.eps,
        };
        adam_step(&mut self.store, &adam(self.cfg.lr_phi), |n| !is_predictor_param(n))?;
        if matches!(self.source, EdgeSource::Learned(_)) {
            adam_step(&mut self.store, &adam(self.cfg.lr_theta), is_predictor_param)?;
        }
        self.step += 1;
        let b = batch.len() as f64;
        Ok(StepStats {
            step: self.step,
            loss: loss_sum / b,
            accuracy: correct as f64 / total_targets as f64,
            mean_reward: rewards.iter().map(|r| r.reward).sum::<f64>() / b,
            baseline: self.baseline.value(),
            score_evals,
            activation_elements: act,
            edge_hit_rate: (hit.1 > 0).then(|| hit.0 / hit.1 as f64),
            rewards,
            theta_grad_norm: theta_norm,
        })
    }

    /// Deterministic evaluation with beam-decoded edges.
    pub fn evaluate(&self, examples: &[Example]) -> Result<EvalStats> {
        self.evaluate_with_beam(examples, self.cfg.beam)
    }

    pub fn evaluate_with_beam(&self, examples: &[Example], beam: usize) -> Result<EvalStats> {
        if examples.is_empty() {
            return Err(Error::InvalidArgument("nothing to evaluate".into()));
        }
        let classes = self.model.output.classes();
        let (mut lp_sum, mut correct, mut targets) = (0.0, 0usize, 0usize);
        let (mut score_evals, mut act, mut edge_lp) = (0u64, 0u64, 0.0);
        let mut hit = (0.0, 0usize);
        for ex in examples {
            let fwd = self.forward(ex, None, beam)?;
            let lv = fwd.tape.value(fwd.logits)?.values().to_vec();
            let r = compute_reward(&lv, classes, &ex.targets)?;
            lp_sum += r * ex.targets.len() as f64;
            correct += count_correct(&lv, classes, &ex.targets);
            targets += ex.targets.len();
            score_evals += fwd.tape.counters().score_evals;
            act = act.max(fwd.tape.activation_elements() as u64);
            if let Some(s) = &fwd.sample {
                edge_lp += s.total_log_prob.as_f64();
            }
            if let (Some(es), Some(node)) = (&fwd.edges, ex.salient) {
                hit.0 += edge_hit_rate(es, node);
                hit.1 += 1;
            }
        }
        let mean_lp = lp_sum / targets as f64;
        Ok(EvalStats {
            examples: examples.len(),
            targets,
            loss: -mean_lp,
            accuracy: correct as f64 / targets as f64,
            mean_log_prob: mean_lp,
            bpc: -mean_lp / core::f64::consts::LN_2,
            score_evals,
            activation_elements: act,
            edge_log_prob: edge_lp,
            edge_hit_rate: (hit.1 > 0).then(|| hit.0 / hit.1 as f64),
        })
    }
}

fn count_correct<T: Real>(logits: &[T], classes: usize, targets: &[(usize, usize)]) -> usize {
    targets
        .iter()
        .filter(|&&(r, y)| {
            let row = &logits[r * classes..(r + 1) * classes];
            let mut best = 0;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            best == y
        })
        .count()
}

impl core::fmt::Display for EvalStats {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        write!(
            f,
            "examples={} loss={:.6} accuracy={:.4} bpc={:.4} score_evals={}",
            self.examples, self.loss, self.accuracy, self.bpc, self.score_evals
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn baseline_is_the_running_mean() {
        let mut b = BaselineState::default();
        assert_eq!(b.value(), 0.0);
        for r in [1.0, 2.0, 3.0] {
            b.update(r);
        }
        assert_eq!(b.value(), 2.0);
    }

    #[test]
    fn uniform_prediction_rewards_minus_ln_v() {
        let r = compute_reward(&[0.3f64; 5], 5, &[(0, 2)]).unwrap();
        assert!((r + 5f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn sequence_reward_is_mean_gold_log_prob() {
        // rows with gold probabilities 0.5, 0.25, 0.125 over two classes
        let p = [0.5f64, 0.25, 0.125];
        let logits: Vec<f64> = p.iter().flat_map(|&q| [q.ln(), (1.0 - q).ln()]).collect();
        let r = compute_reward(&logits, 2, &[(0, 0), (1, 0), (2, 0)]).unwrap();
        let want = (0.5f64.ln() + 0.25f64.ln() + 0.125f64.ln()) / 3.0;
        assert!((r - want).abs() < 1e-12);
        assert!(compute_reward(&logits, 2, &[(0, 0); 4]).is_err());
    }
}
