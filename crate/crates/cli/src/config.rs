//! Run configuration: a sectioned `key = value` file (TOML syntax) plus
//! command-line overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskName {
    Pointer,
    CharLm,
    /// Node classification from a graph file.
    Graph,
    Sbm,
    TwoCliques,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EdgeSourceKind {
    Sac,
    Dense,
    Full,
    Random,
    Segment,
    Span,
    Bpt,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dtype {
    F32,
    F64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TaskSection {
    pub name: TaskName,
    /// Sequence length, or node count for generated graphs.
    pub n: usize,
    pub vocab: usize,
    pub data_seed: u64,
    /// Pointer examples per epoch.
    pub train_examples: usize,
    pub valid_examples: usize,
    pub test_examples: usize,
    /// Byte corpus; a synthetic one of `corpus_bytes` is generated when unset.
    pub corpus: Option<PathBuf>,
    pub corpus_bytes: usize,
    /// Use the chain over positions as the base graph of sequence tasks.
    pub chain_base: bool,
    pub graph: Option<PathBuf>,
    pub features: usize,
    pub blocks: usize,
    pub p_in: f64,
    pub p_out: f64,
}

impl Default for TaskSection {
    fn default() -> Self {
        Self {
            name: TaskName::Pointer,
            n: 64,
            vocab: 16,
            data_seed: 7,
            train_examples: 320_000,
            valid_examples: 200,
            test_examples: 200,
            corpus: None,
            corpus_bytes: 1_000_000,
            chain_base: true,
            graph: None,
            features: 8,
            blocks: 4,
            p_in: 0.1,
            p_out: 0.01,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub layers: usize,
    pub heads: usize,
    pub d: usize,
    pub d_ff: usize,
    pub d_lstm: usize,
    pub dtype: Dtype,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            layers: 2,
            heads: 4,
            d: 128,
            d_ff: 512,
            d_lstm: 32,
            dtype: Dtype::F64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EdgesSection {
    pub source: EdgeSourceKind,
    pub alpha: f64,
    pub shared_structure: bool,
    pub all_nodes_connected: bool,
    pub head_adaptive: bool,
    pub causal: bool,
    pub dummy_node: bool,
    /// Symmetrize edges at compile time.
    pub undirected: bool,
    pub dedupe: bool,
    pub segment_len: usize,
    /// One span per head.
    pub spans: Vec<usize>,
    pub random_seed: u64,
}

impl Default for EdgesSection {
    fn default() -> Self {
        Self {
            source: EdgeSourceKind::Sac,
            alpha: 2.0,
            shared_structure: false,
            all_nodes_connected: true,
            head_adaptive: false,
            causal: false,
            dummy_node: false,
            undirected: false,
            dedupe: true,
            segment_len: 8,
            spans: Vec::new(),
            random_seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimSection {
    pub lr_phi: f64,
    pub lr_theta: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub label_smoothing: f64,
    /// Global-norm clip of predictor gradients; 0 disables.
    pub clip_theta: f64,
    pub clip_phi: f64,
    pub reward_normalization: bool,
    pub entropy_coef: f64,
}

impl Default for OptimSection {
    fn default() -> Self {
        Self {
            lr_phi: 1e-3,
            lr_theta: 3e-4,
            beta1: 0.9,
            beta2: 0.98,
            eps: 1e-9,
            label_smoothing: 0.1,
            clip_theta: 1.0,
            clip_phi: 0.0,
            reward_normalization: false,
            entropy_coef: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub seed: u64,
    pub epochs: usize,
    /// Optimizer steps cap; 0 means epochs alone decide.
    pub max_steps: u64,
    pub batch_size: usize,
    pub beam: usize,
    /// Validation every this many steps; 0 evaluates only at the end.
    pub eval_every: u64,
    /// Stop once the validation metric reaches this value (accuracy: at
    /// least, BPC: at most).
    pub stop_at: Option<f64>,
}

impl Default for TrainSection {
    fn default() -> Self {
        Self {
            seed: 1,
            epochs: 1,
            max_steps: 0,
            batch_size: 16,
            beam: 5,
            eval_every: 0,
            stop_at: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub task: TaskSection,
    pub model: ModelSection,
    pub edges: EdgesSection,
    pub optim: OptimSection,
    pub train: TrainSection,
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, CliError> {
        let table: toml::Table = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        Self::from_table(table, &[])
    }

    /// Reads `path` (defaults when `None`) and applies `key=value`
    /// overrides such as `model.d=64` or `edges.source="dense"`.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self, CliError> {
        let table = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?;
                toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?
            }
            None => toml::Table::new(),
        };
        Self::from_table(table, overrides)
    }

    fn from_table(mut table: toml::Table, overrides: &[String]) -> Result<Self, CliError> {
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let cfg: Self = toml::Value::Table(table).try_into().map_err(|e: toml::de::Error| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Config(m));
        let (m, e, o, t) = (&self.model, &self.edges, &self.optim, &self.train);
        if m.heads == 0 || m.d % m.heads != 0 {
            return bad(format!("d={} must be a positive multiple of heads={}", m.d, m.heads));
        }
        if m.layers == 0 || m.d_ff == 0 || m.d_lstm == 0 {
            return bad("layers, d_ff and d_lstm must be positive".into());
        }
        if t.beam == 0 {
            return bad("beam must be at least 1".into());
        }
        if t.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if !(e.alpha.is_finite() && e.alpha >= 0.0) {
            return bad(format!("alpha={} is not a valid coefficient", e.alpha));
        }
        let needs_alpha = matches!(e.source, EdgeSourceKind::Sac | EdgeSourceKind::Random);
        if needs_alpha && e.alpha * (self.task.n as f64) < 1.0 {
            return bad(format!("alpha·N = {} must be at least 1", e.alpha * self.task.n as f64));
        }
        if e.source == EdgeSourceKind::Sac && e.all_nodes_connected && (e.alpha.fract() != 0.0 || e.alpha < 1.0) {
            return bad("all_nodes_connected needs a positive integral alpha".into());
        }
        if e.source == EdgeSourceKind::Span && e.spans.len() != m.heads {
            return bad(format!("span source needs one span per head ({} heads, {} spans)", m.heads, e.spans.len()));
        }
        if self.task.name == TaskName::CharLm && !e.causal {
            return bad("char_lm needs edges.causal = true".into());
        }
        if self.task.name == TaskName::Pointer && (self.task.n < 4 || self.task.vocab < 2) {
            return bad("pointer task needs n >= 4 and vocab >= 2".into());
        }
        for (name, v) in [("lr_phi", o.lr_phi), ("lr_theta", o.lr_theta), ("eps", o.eps), ("clip_theta", o.clip_theta), ("clip_phi", o.clip_phi), ("entropy_coef", o.entropy_coef)] {
            if !(v.is_finite() && v >= 0.0) {
                return bad(format!("{name}={v} must be finite and nonnegative"));
            }
        }
        if !(0.0..1.0).contains(&o.beta1) || !(0.0..1.0).contains(&o.beta2) || !(0.0..1.0).contains(&o.label_smoothing) {
            return bad("beta1, beta2 and label_smoothing must lie in [0, 1)".into());
        }
        Ok(())
    }
}

fn apply_override(table: &mut toml::Table, spec: &str) -> Result<(), CliError> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| CliError::Config(format!("override `{spec}` is not key=value")))?;
    let path: Vec<&str> = key.trim().split('.').collect();
    if path.iter().any(|p| p.is_empty()) {
        return Err(CliError::Config(format!("override key `{key}` is malformed")));
    }
    let raw = raw.trim();
    let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let (last, parents) = path.split_last().expect("non-empty key");
    let mut cur = table;
    for p in parents {
        let entry = cur.entry(p.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| CliError::Config(format!("override `{key}`: `{p}` is not a section")))?;
    }
    cur.insert(last.to_string(), value);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_round_trip() {
        let c = RunConfig::default();
        c.validate().unwrap();
        assert_eq!(RunConfig::from_toml_str(&c.to_toml_string()).unwrap(), c);
    }

    #[test]
    fn overrides_take_typed_and_bare_values() {
        let ov = ["model.d=64".to_string(), "edges.source=dense".into(), "train.stop_at=0.9".into()];
        let c = RunConfig::load(None, &ov).unwrap();
        assert_eq!(c.model.d, 64);
        assert_eq!(c.edges.source, EdgeSourceKind::Dense);
        assert_eq!(c.train.stop_at, Some(0.9));
    }

    #[test]
    fn invariants_are_enforced() {
        for ov in ["model.d=30", "train.beam=0", "edges.alpha=0.001", "model.nope=1", "edges.alpha=1.5"] {
            assert!(matches!(RunConfig::load(None, &[ov.to_string()]), Err(CliError::Config(_))), "{ov}");
        }
        let ok = RunConfig::load(None, &["edges.alpha=1.5".into(), "edges.all_nodes_connected=false".into()]);
        assert!(ok.is_ok());
    }
}
