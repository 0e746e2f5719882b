//! Datasets, trainer construction and the train / eval / edges / bench
//! drivers behind the command line.

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sac_core::attention::BlockConfig;
use sac_core::bench::{bench_scaling, BenchConfig, ScalingReport};
use sac_core::edgeset::{gen_bpt, gen_full, gen_random, gen_segment, gen_span, CompileOptions, EdgeSet};
use sac_core::model::{InputSpec, ModelConfig, OutputSpec};
use sac_core::predictor::{Mode, PredictorConfig};
use sac_core::rl::{EdgeSource, EvalStats, Example, StepStats, TrainConfig, Trainer};
use sac_core::tasks::{self, CharLmData, GraphData, PointerExample, Split};
use sac_core::{ParamStore, Real};

use crate::config::{Dtype, EdgeSourceKind, RunConfig, TaskName};
use crate::error::CliError;
use crate::formats;
use crate::metrics::{MetricName, MetricsRecord, MetricsWriter, RecordKind};

/// A loaded task.
#[derive(Debug, Clone)]
pub enum Dataset {
    Pointer {
        n: usize,
        vocab: usize,
        seed: u64,
        train_examples: usize,
        valid: Vec<Example>,
        test: Vec<Example>,
    },
    CharLm(CharLmData),
    Graph {
        data: GraphData,
        train: Example,
        valid: Vec<Example>,
        test: Vec<Example>,
    },
}

impl Dataset {
    pub fn load(cfg: &RunConfig) -> Result<Self, CliError> {
        let t = &cfg.task;
        let ds = |e: sac_core::Error| CliError::Dataset(e.to_string());
        match t.name {
            TaskName::Pointer => Ok(Self::Pointer {
                n: t.n,
                vocab: t.vocab,
                seed: t.data_seed,
                train_examples: t.train_examples,
                valid: tasks::task_pointer(t.n, t.vocab, t.data_seed.wrapping_add(1), 0, t.valid_examples).map_err(ds)?,
                test: tasks::task_pointer(t.n, t.vocab, t.data_seed.wrapping_add(2), 0, t.test_examples).map_err(ds)?,
            }),
            TaskName::CharLm => {
                let corpus = match &t.corpus {
                    Some(p) => std::fs::read(p).map_err(|e| CliError::Dataset(format!("{}: {e}", p.display())))?,
                    None => tasks::synthetic_corpus(t.corpus_bytes, t.data_seed),
                };
                Ok(Self::CharLm(tasks::task_char_lm(&corpus, t.n, t.chain_base).map_err(ds)?))
            }
            TaskName::Graph | TaskName::Sbm | TaskName::TwoCliques => {
                let data = match t.name {
                    TaskName::Graph => {
                        let p = t.graph.as_ref().ok_or_else(|| CliError::Config("task.graph is required for the graph task".into()))?;
                        let text = std::fs::read_to_string(p).map_err(|e| CliError::Dataset(format!("{}: {e}", p.display())))?;
                        formats::read_graph(&text)?
                    }
                    TaskName::Sbm => tasks::sbm(t.n, t.blocks, t.p_in, t.p_out, t.features, t.data_seed).map_err(ds)?,
                    _ => tasks::two_cliques(t.n / 2, t.features, t.data_seed).map_err(ds)?,
                };
                Self::from_graph(data)
            }
        }
    }

    pub fn from_graph(data: GraphData) -> Result<Self, CliError> {
        let ds = |e: sac_core::Error| CliError::Dataset(e.to_string());
        let split = |s| -> Result<Vec<Example>, CliError> {
            if data.indices(s).is_empty() {
                Ok(Vec::new())
            } else {
                Ok(vec![data.example(s).map_err(ds)?])
            }
        };
        Ok(Self::Graph {
            train: data.example(Split::Train).map_err(ds)?,
            valid: split(Split::Valid)?,
            test: split(Split::Test)?,
            data,
        })
    }

    /// `(N, input, output)` of the model this task needs.
    pub fn model_io(&self, cfg: &RunConfig) -> (usize, InputSpec, OutputSpec) {
        match self {
            Self::Pointer { n, vocab, .. } => (
                *n,
                InputSpec::Tokens {
                    vocab: PointerExample::input_vocab(*vocab),
                },
                OutputSpec::Classify { classes: *vocab, readout: 0 },
            ),
            Self::CharLm(_) => (cfg.task.n, InputSpec::Tokens { vocab: 256 }, OutputSpec::Lm { vocab: 256 }),
            Self::Graph { data, .. } => (
                data.num_nodes,
                InputSpec::Features { dim: data.num_features },
                OutputSpec::NodeClassify { classes: data.num_classes },
            ),
        }
    }

    pub fn metric_name(&self) -> MetricName {
        match self {
            Self::CharLm(_) => MetricName::Bpc,
            _ => MetricName::Accuracy,
        }
    }

    pub fn steps_per_epoch(&self, batch: usize) -> u64 {
        match self {
            Self::Pointer { train_examples, .. } => (*train_examples / batch).max(1) as u64,
            Self::CharLm(d) => d.train.len().div_ceil(batch) as u64,
            Self::Graph { .. } => 1,
        }
    }

    /// Batch `step` of `epoch`; char-LM windows are reshuffled per epoch.
    pub fn train_batch(&self, epoch: u64, step: u64, batch: usize, seed: u64) -> Result<Vec<Example>, CliError> {
        match self {
            Self::Pointer { n, vocab, seed: ds, .. } => {
                tasks::task_pointer(*n, *vocab, *ds, step * batch as u64, batch).map_err(|e| CliError::Dataset(e.to_string()))
            }
            Self::CharLm(d) => {
                let mut order: Vec<usize> = (0..d.train.len()).collect();
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(epoch);
                order.shuffle(&mut rng);
                let start = step as usize * batch;
                Ok(order[start..(start + batch).min(order.len())].iter().map(|&i| d.train[i].clone()).collect())
            }
            Self::Graph { train, .. } => Ok(vec![train.clone()]),
        }
    }

    /// Evaluation examples; the char-LM task has a single held-out part
    /// serving as both `valid` and `test`.
    pub fn split(&self, split: Split) -> &[Example] {
        match (self, split) {
            (Self::Pointer { valid, .. }, Split::Valid) => valid,
            (Self::Pointer { test, .. }, _) => test,
            (Self::CharLm(d), _) => &d.valid,
            (Self::Graph { valid, .. }, Split::Valid) => valid,
            (Self::Graph { test, .. }, Split::Test) => test,
            (Self::Graph { train, .. }, Split::Train) => std::slice::from_ref(train),
        }
    }
}

/// The edge set a fixed source would use, or `None` for `sac` / `dense`.
pub fn fixed_edges(cfg: &RunConfig, n: usize) -> Result<Option<EdgeSet>, CliError> {
    let e = &cfg.edges;
    let cfgerr = |err: sac_core::Error| CliError::Config(err.to_string());
    let es = match e.source {
        EdgeSourceKind::Sac | EdgeSourceKind::Dense => return Ok(None),
        EdgeSourceKind::Full => gen_full(n),
        EdgeSourceKind::Random => gen_random(n, e.alpha, e.random_seed, e.causal),
        EdgeSourceKind::Segment => gen_segment(n, e.segment_len),
        EdgeSourceKind::Span => gen_span(n, &e.spans),
        EdgeSourceKind::Bpt => return gen_bpt(n).map(Some).map_err(cfgerr),
    }
    .map_err(cfgerr)?;
    let es = es.replicated(cfg.model.layers);
    Ok(Some(if e.dummy_node { es.with_sinks(1) } else { es }))
}

pub fn model_config(cfg: &RunConfig, data: &Dataset) -> ModelConfig {
    let (n, input, output) = data.model_io(cfg);
    ModelConfig {
        n,
        block: BlockConfig {
            d: cfg.model.d,
            heads: cfg.model.heads,
            d_ff: cfg.model.d_ff,
        },
        layers: cfg.model.layers,
        input,
        output,
        dummy: cfg.edges.dummy_node,
        causal: cfg.edges.causal,
    }
}

pub fn train_config(cfg: &RunConfig) -> TrainConfig {
    let o = &cfg.optim;
    let clip = |c: f64| (c > 0.0).then_some(c);
    TrainConfig {
        lr_phi: o.lr_phi,
        lr_theta: o.lr_theta,
        beta1: o.beta1,
        beta2: o.beta2,
        eps: o.eps,
        label_smoothing: o.label_smoothing,
        clip_theta: clip(o.clip_theta),
        clip_phi: clip(o.clip_phi),
        beam: cfg.train.beam,
        reward_normalization: o.reward_normalization,
        entropy_coef: o.entropy_coef,
        compile: CompileOptions {
            dedupe: cfg.edges.dedupe,
            symmetrize: cfg.edges.undirected,
        },
        seed: cfg.train.seed,
    }
}

/// Fresh parameters from `train.seed` and the configured edge source.
pub fn build_trainer<T: Real>(cfg: &RunConfig, data: &Dataset) -> Result<Trainer<T>, CliError> {
    let model = model_config(cfg, data);
    let e = &cfg.edges;
    if e.source == EdgeSourceKind::Bpt {
        return Err(CliError::Config("bpt edges reference span nodes the model has no embeddings for".into()));
    }
    if matches!(e.source, EdgeSourceKind::Sac | EdgeSourceKind::Random) && e.alpha * (model.n as f64) < 1.0 {
        return Err(CliError::Config(format!("alpha·N = {} must be at least 1", e.alpha * model.n as f64)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.train.seed);
    let mut store = ParamStore::<T>::new();
    model.init_params(&mut store, &mut rng).map_err(|err| CliError::Config(err.to_string()))?;
    let source = match e.source {
        EdgeSourceKind::Sac => {
            let p = PredictorConfig {
                num_nodes: model.n,
                d: cfg.model.d,
                hidden: cfg.model.d_lstm,
                layers: cfg.model.layers,
                heads: cfg.model.heads,
                alpha: e.alpha,
                mode: Mode {
                    all_nodes_connected: e.all_nodes_connected,
                    shared: e.shared_structure,
                    head_adaptive: e.head_adaptive,
                    causal: e.causal,
                    dummy: e.dummy_node,
                },
            };
            p.init_params(&mut store, &mut rng).map_err(|err| CliError::Config(err.to_string()))?;
            EdgeSource::Learned(p)
        }
        EdgeSourceKind::Dense => EdgeSource::Dense,
        _ => EdgeSource::Fixed(Arc::new(fixed_edges(cfg, model.n)?.expect("fixed source"))),
    };
    Trainer::new(model, source, store, train_config(cfg)).map_err(|err| CliError::Config(err.to_string()))
}

fn metric_of(name: MetricName, ev: &EvalStats) -> f64 {
    match name {
        MetricName::Accuracy => ev.accuracy,
        MetricName::Bpc => ev.bpc,
        MetricName::MeanLogProb => ev.mean_log_prob,
    }
}

fn reached(name: MetricName, value: f64, target: f64) -> bool {
    match name {
        MetricName::Bpc => value <= target,
        _ => value >= target,
    }
}

pub fn eval_record<T: Real>(trainer: &Trainer<T>, name: MetricName, split: Split, ev: &EvalStats, wall_ms: f64) -> MetricsRecord {
    MetricsRecord {
        kind: RecordKind::Eval,
        split: Some(if split == Split::Valid { "valid" } else { "test" }.to_string()),
        step: trainer.steps(),
        loss: ev.loss,
        metric_name: name,
        metric: metric_of(name, ev),
        mean_reward: ev.mean_log_prob,
        baseline: trainer.baseline.value(),
        score_evals: ev.score_evals,
        peak_activation: ev.activation_elements,
        edge_hit_rate: ev.edge_hit_rate,
        wall_ms,
    }
}

fn train_record(name: MetricName, st: &StepStats, wall_ms: f64) -> MetricsRecord {
    let metric = match name {
        MetricName::Bpc => -st.mean_reward / std::f64::consts::LN_2,
        MetricName::Accuracy => st.accuracy,
        MetricName::MeanLogProb => st.mean_reward,
    };
    MetricsRecord {
        kind: RecordKind::Train,
        split: None,
        step: st.step,
        loss: st.loss,
        metric_name: name,
        metric,
        mean_reward: st.mean_reward,
        baseline: st.baseline,
        score_evals: st.score_evals,
        peak_activation: st.activation_elements,
        edge_hit_rate: st.edge_hit_rate,
        wall_ms,
    }
}

fn finite(what: &str, x: f64) -> Result<(), CliError> {
    if x.is_finite() {
        Ok(())
    } else {
        Err(CliError::Numeric(format!("{what} became {x}")))
    }
}

/// Result of a training run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub steps: u64,
    pub stopped_early: bool,
    pub metric_name: MetricName,
    /// Last validation pass (absent when the task has no validation split).
    pub valid: Option<EvalStats>,
    pub test: EvalStats,
}

impl RunOutcome {
    pub fn test_metric(&self) -> f64 {
        metric_of(self.metric_name, &self.test)
    }
}

/// Trains for `epochs` (capped by `max_steps`), validating every
/// `eval_every` steps and stopping early at `stop_at`; ends with a
/// validation and a test pass. Every record goes through `log`.
pub fn train_loop<T: Real>(
    cfg: &RunConfig,
    trainer: &mut Trainer<T>,
    data: &Dataset,
    log: &mut dyn FnMut(&MetricsRecord) -> Result<(), CliError>,
) -> Result<RunOutcome, CliError> {
    let t = &cfg.train;
    let name = data.metric_name();
    let start = Instant::now();
    let ms = |s: &Instant| s.elapsed().as_secs_f64() * 1e3;
    let per_epoch = data.steps_per_epoch(t.batch_size);
    let mut valid: Option<(u64, EvalStats)> = None;
    let mut stopped_early = false;
    let has_valid = !data.split(Split::Valid).is_empty();
    'outer: for epoch in 0..t.epochs as u64 {
        for s in 0..per_epoch {
            if t.max_steps > 0 && trainer.steps() >= t.max_steps {
                break 'outer;
            }
            let batch = data.train_batch(epoch, s, t.batch_size, t.seed)?;
            let st = trainer.train_step(&batch)?;
            finite("training loss", st.loss)?;
            finite("mean reward", st.mean_reward)?;
            log(&train_record(name, &st, ms(&start)))?;
            if has_valid && t.eval_every > 0 && st.step % t.eval_every == 0 {
                let ev = trainer.evaluate(data.split(Split::Valid))?;
                finite("validation loss", ev.loss)?;
                log(&eval_record(trainer, name, Split::Valid, &ev, ms(&start)))?;
                let hit = t.stop_at.is_some_and(|target| reached(name, metric_of(name, &ev), target));
                valid = Some((st.step, ev));
                if hit {
                    stopped_early = true;
                    break 'outer;
                }
            }
        }
    }
    if has_valid && valid.as_ref().map_or(true, |(s, _)| *s != trainer.steps()) {
        let ev = trainer.evaluate(data.split(Split::Valid))?;
        finite("validation loss", ev.loss)?;
        log(&eval_record(trainer, name, Split::Valid, &ev, ms(&start)))?;
        valid = Some((trainer.steps(), ev));
    }
    let test = evaluate_split(trainer, data, Split::Test)?;
    log(&eval_record(trainer, name, Split::Test, &test, ms(&start)))?;
    Ok(RunOutcome {
        steps: trainer.steps(),
        stopped_early,
        metric_name: name,
        valid: valid.map(|(_, v)| v),
        test,
    })
}

pub fn evaluate_split<T: Real>(trainer: &Trainer<T>, data: &Dataset, split: Split) -> Result<EvalStats, CliError> {
    let ex = data.split(split);
    if ex.is_empty() {
        return Err(CliError::Dataset(format!("{split:?} split is empty")));
    }
    let ev = trainer.evaluate(ex)?;
    finite("evaluation loss", ev.loss)?;
    Ok(ev)
}

fn create_out(out: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(out).map_err(|e| CliError::io(out, e))
}

/// Paths of the files a command writes under `--out`.
pub struct OutFiles {
    pub metrics: PathBuf,
    pub summary: PathBuf,
    pub checkpoint: PathBuf,
    pub edges: PathBuf,
    pub config: PathBuf,
}

impl OutFiles {
    pub fn new(out: &Path) -> Self {
        Self {
            metrics: out.join("metrics.jsonl"),
            summary: out.join("summary.txt"),
            checkpoint: out.join("checkpoint.bin"),
            edges: out.join("edges.tsv"),
            config: out.join("config.toml"),
        }
    }
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map_or_else(|| "none".into(), |v| v.to_string())
}

/// `sac train`: metrics stream, checkpoint, resolved config and summary.
pub fn train_command(cfg: &RunConfig, out: &Path) -> Result<RunOutcome, CliError> {
    match cfg.model.dtype {
        Dtype::F32 => train_typed::<f32>(cfg, out),
        Dtype::F64 => train_typed::<f64>(cfg, out),
    }
}

fn train_typed<T: Real>(cfg: &RunConfig, out: &Path) -> Result<RunOutcome, CliError> {
    let data = Dataset::load(cfg)?;
    let mut trainer = build_trainer::<T>(cfg, &data)?;
    create_out(out)?;
    let files = OutFiles::new(out);
    std::fs::write(&files.config, cfg.to_toml_string()).map_err(|e| CliError::io(&files.config, e))?;
    let mut w = MetricsWriter::create(&files.metrics)?;
    let start = Instant::now();
    let outcome = train_loop(cfg, &mut trainer, &data, &mut |r| w.write(r))?;
    let bytes = formats::write_checkpoint(&trainer.store);
    std::fs::write(&files.checkpoint, bytes).map_err(|e| CliError::io(&files.checkpoint, e))?;
    let name = outcome.metric_name;
    crate::metrics::write_summary(
        &files.summary,
        &[
            ("command", "train".into()),
            ("task", format!("{:?}", cfg.task.name)),
            ("edge_source", format!("{:?}", cfg.edges.source)),
            ("dtype", T::NAME.into()),
            ("steps", outcome.steps.to_string()),
            ("stopped_early", outcome.stopped_early.to_string()),
            ("metric", format!("{name:?}").to_lowercase()),
            ("valid_metric", fmt_opt(outcome.valid.as_ref().map(|v| metric_of(name, v)))),
            ("test_metric", outcome.test_metric().to_string()),
            ("test_loss", outcome.test.loss.to_string()),
            ("test_edge_hit_rate", fmt_opt(outcome.test.edge_hit_rate)),
            ("baseline", trainer.baseline.value().to_string()),
            ("wall_ms", format!("{:.0}", start.elapsed().as_secs_f64() * 1e3)),
        ],
    )?;
    Ok(outcome)
}

/// `sac eval`: restores a checkpoint and evaluates one split.
pub fn eval_command(cfg: &RunConfig, checkpoint: &Path, split: Split, out: &Path) -> Result<EvalStats, CliError> {
    match cfg.model.dtype {
        Dtype::F32 => eval_typed::<f32>(cfg, checkpoint, split, out),
        Dtype::F64 => eval_typed::<f64>(cfg, checkpoint, split, out),
    }
}

pub fn load_trainer<T: Real>(cfg: &RunConfig, data: &Dataset, checkpoint: Option<&Path>) -> Result<Trainer<T>, CliError> {
    let mut trainer = build_trainer::<T>(cfg, data)?;
    if let Some(p) = checkpoint {
        let bytes = std::fs::read(p).map_err(|e| CliError::io(p, e))?;
        let loaded = formats::read_checkpoint::<T>(&bytes)?;
        formats::restore_params(&mut trainer.store, &loaded)?;
    }
    Ok(trainer)
}

fn eval_typed<T: Real>(cfg: &RunConfig, checkpoint: &Path, split: Split, out: &Path) -> Result<EvalStats, CliError> {
    let data = Dataset::load(cfg)?;
    let trainer = load_trainer::<T>(cfg, &data, Some(checkpoint))?;
    let start = Instant::now();
    let ev = evaluate_split(&trainer, &data, split)?;
    let name = data.metric_name();
    create_out(out)?;
    let files = OutFiles::new(out);
    let mut w = MetricsWriter::create(&files.metrics)?;
    w.write(&eval_record(&trainer, name, split, &ev, start.elapsed().as_secs_f64() * 1e3))?;
    let key = if split == Split::Valid { "valid_metric" } else { "test_metric" };
    crate::metrics::write_summary(
        &files.summary,
        &[
            ("command", "eval".into()),
            ("checkpoint", checkpoint.display().to_string()),
            ("metric", format!("{name:?}").to_lowercase()),
            (key, metric_of(name, &ev).to_string()),
            ("loss", ev.loss.to_string()),
            ("examples", ev.examples.to_string()),
        ],
    )?;
    Ok(ev)
}

/// `sac edges`: the edge set used for example `index` of `split`
/// (beam-decoded for `sac`, the generator output otherwise), written to
/// `edges.tsv` and verified by re-reading.
pub fn edges_command(cfg: &RunConfig, checkpoint: Option<&Path>, split: Split, index: usize, out: &Path) -> Result<EdgeSet, CliError> {
    match cfg.model.dtype {
        Dtype::F32 => edges_typed::<f32>(cfg, checkpoint, split, index, out),
        Dtype::F64 => edges_typed::<f64>(cfg, checkpoint, split, index, out),
    }
}

fn edges_typed<T: Real>(cfg: &RunConfig, checkpoint: Option<&Path>, split: Split, index: usize, out: &Path) -> Result<EdgeSet, CliError> {
    let data = Dataset::load(cfg)?;
    let es = match cfg.edges.source {
        EdgeSourceKind::Sac => {
            let trainer = load_trainer::<T>(cfg, &data, checkpoint)?;
            let ex = data
                .split(split)
                .get(index)
                .ok_or_else(|| CliError::Config(format!("{split:?} split has no example {index}")))?;
            trainer.decode_edges(ex, cfg.train.beam)?.expect("learned source decodes edges").edges
        }
        EdgeSourceKind::Dense => {
            let n = data.model_io(cfg).0;
            gen_full(n).map_err(|e| CliError::Config(e.to_string()))?.replicated(cfg.model.layers)
        }
        _ => fixed_edges(cfg, data.model_io(cfg).0)?.expect("fixed source"),
    };
    create_out(out)?;
    let files = OutFiles::new(out);
    let text = formats::write_edges(&es);
    std::fs::write(&files.edges, &text).map_err(|e| CliError::io(&files.edges, e))?;
    let back = formats::read_edges(&std::fs::read_to_string(&files.edges).map_err(|e| CliError::io(&files.edges, e))?)?;
    if back != es {
        return Err(CliError::Format {
            what: "edge dump",
            msg: "re-read edge set differs from the written one".into(),
        });
    }
    Ok(es)
}

pub fn bench_config(cfg: &RunConfig) -> BenchConfig {
    BenchConfig {
        d: cfg.model.d,
        heads: cfg.model.heads,
        d_ff: cfg.model.d_ff,
        layers: cfg.model.layers,
        d_lstm: cfg.model.d_lstm,
        alpha: cfg.edges.alpha,
        vocab: cfg.task.vocab,
        seed: cfg.train.seed,
        dedupe: cfg.edges.dedupe,
    }
}

/// `sac bench`: score counts and activation sizes over `ns`, written as
/// `bench.tsv` plus a summary of ratios and the fitted exponent.
pub fn bench_command(cfg: &RunConfig, ns: &[usize], out: &Path) -> Result<ScalingReport, CliError> {
    let bc = bench_config(cfg);
    let report = match cfg.model.dtype {
        Dtype::F32 => bench_scaling::<f32>(&bc, ns),
        Dtype::F64 => bench_scaling::<f64>(&bc, ns),
    }
    .map_err(|e| CliError::Config(e.to_string()))?;
    create_out(out)?;
    let mut tsv = String::from("n\tdense_scores\tsparse_scores\tdense_activations\tsparse_activations\n");
    for r in &report.rows {
        tsv.push_str(&format!("{}\t{}\t{}\t{}\t{}\n", r.n, r.dense_scores, r.sparse_scores, r.dense_activations, r.sparse_activations));
    }
    let path = out.join("bench.tsv");
    std::fs::write(&path, tsv).map_err(|e| CliError::io(&path, e))?;
    let join = |v: Vec<f64>| v.iter().map(f64::to_string).collect::<Vec<_>>().join(",");
    crate::metrics::write_summary(
        &OutFiles::new(out).summary,
        &[
            ("command", "bench".into()),
            ("dense_ratios", join(report.dense_ratios())),
            ("sparse_ratios", join(report.sparse_ratios())),
            ("sparse_activation_exponent", report.sparse_activation_exponent().to_string()),
            ("dense_activation_exponent", report.dense_activation_exponent().to_string()),
        ],
    )?;
    Ok(report)
}
