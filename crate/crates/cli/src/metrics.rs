//! Line-delimited JSON metrics and the run summary.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecordKind {
    Train,
    Eval,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricName {
    Accuracy,
    Bpc,
    MeanLogProb,
}

/// One record per optimizer step (`train`) or per evaluated split (`eval`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsRecord {
    pub kind: RecordKind,
    /// `valid` or `test` for eval records.
    pub split: Option<String>,
    pub step: u64,
    pub loss: f64,
    pub metric_name: MetricName,
    pub metric: f64,
    pub mean_reward: f64,
    pub baseline: f64,
    pub score_evals: u64,
    pub peak_activation: u64,
    pub edge_hit_rate: Option<f64>,
    pub wall_ms: f64,
}

impl MetricsRecord {
    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("record serializes")
    }

    /// The record with its timestamp zeroed, for reproducibility checks.
    pub fn without_time(&self) -> Self {
        Self { wall_ms: 0.0, ..self.clone() }
    }

    fn check(&self) -> Result<(), String> {
        let mut nums = vec![("loss", self.loss), ("metric", self.metric), ("mean_reward", self.mean_reward), ("baseline", self.baseline), ("wall_ms", self.wall_ms)];
        if let Some(h) = self.edge_hit_rate {
            nums.push(("edge_hit_rate", h));
        }
        if let Some((k, v)) = nums.iter().find(|(_, v)| !v.is_finite()) {
            return Err(format!("{k} is not finite ({v})"));
        }
        match (self.kind, self.split.as_deref()) {
            (RecordKind::Train, None) | (RecordKind::Eval, Some("valid" | "test")) => Ok(()),
            (k, s) => Err(format!("kind {k:?} with split {s:?}")),
        }
    }
}

/// Validates a whole stream: every line parses against the fixed schema,
/// numbers are finite and steps never decrease.
pub fn validate_stream(text: &str) -> Result<Vec<MetricsRecord>, CliError> {
    let mut out: Vec<MetricsRecord> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let bad = |m: String| CliError::Format { what: "metrics", msg: format!("line {}: {m}", i + 1) };
        let rec: MetricsRecord = serde_json::from_str(line).map_err(|e| bad(e.to_string()))?;
        rec.check().map_err(bad)?;
        if let Some(prev) = out.last() {
            if rec.step < prev.step {
                return Err(bad(format!("step {} after {}", rec.step, prev.step)));
            }
        }
        out.push(rec);
    }
    Ok(out)
}

pub struct MetricsWriter {
    out: BufWriter<File>,
    path: std::path::PathBuf,
}

impl MetricsWriter {
    pub fn create(path: &Path) -> Result<Self, CliError> {
        let f = File::create(path).map_err(|e| CliError::io(path, e))?;
        Ok(Self {
            out: BufWriter::new(f),
            path: path.to_path_buf(),
        })
    }

    pub fn write(&mut self, rec: &MetricsRecord) -> Result<(), CliError> {
        writeln!(self.out, "{}", rec.to_line())
            .and_then(|_| self.out.flush())
            .map_err(|e| CliError::io(&self.path, e))
    }
}

/// `key: value` lines.
pub fn write_summary(path: &Path, entries: &[(&str, String)]) -> Result<(), CliError> {
    let text: String = entries.iter().map(|(k, v)| format!("{k}: {v}\n")).collect();
    std::fs::write(path, text).map_err(|e| CliError::io(path, e))
}

pub fn read_summary(text: &str) -> Vec<(String, String)> {
    text.lines()
        .filter_map(|l| l.split_once(": "))
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect()
}
