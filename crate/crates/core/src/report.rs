//! Run reports.
//!
//! A report echoes the configuration, stores every instance's prediction,
//! trace and scores, and carries aggregate metrics and failure tables. The
//! canonical form drops wall-clock fields and execution-only settings so
//! that two runs of the same configuration compare byte for byte.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::analysis::{
    breakdown_by_type, error_table, render_error_table, render_runtime_breakdown, render_type_table, runtime_breakdown,
    ErrorTable, RuntimeBreakdown, TableFormat, TypeRow,
};
use crate::config::RunConfig;
use crate::instance::{OutcomeClass, Prediction, Setting};
use crate::metrics::{Judgement, Verdict, NORMALIZATION_VERSION};
use crate::program::{ExecutionOutcome, GeneratedProgram};
use crate::successive::DecompositionTrace;

pub const REPORT_VERSION: u32 = 1;

/// Keys removed at every depth by [`canonicalize`].
const VOLATILE_KEYS: [&str; 3] = ["timestamp_ms", "generated_at", "run_stats"];
/// Configuration keys removed by [`canonicalize`].
const EXECUTION_KEYS: [&str; 2] = ["cache", "jobs"];

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("cannot access {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: String,
        #[source]
        source: serde_json::Error,
    },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct InstanceScores {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vqa_accuracy: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exact_match: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mc_accuracy: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub judge: Option<Judgement>,
}

impl InstanceScores {
    /// The score used for per-type failure rates: the judge when present,
    /// else multiple-choice accuracy, else soft accuracy.
    pub fn primary(&self) -> Option<f64> {
        if let Some(j) = &self.judge {
            return Some(if j.verdict == Verdict::Correct { 1.0 } else { 0.0 });
        }
        self.mc_accuracy.or(self.vqa_accuracy)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceRecord {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub question_type: Option<String>,
    pub prediction: Prediction,
    pub scores: InstanceScores,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub program: Option<GeneratedProgram>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub outcome: Option<ExecutionOutcome>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub decomposition: Option<DecompositionTrace>,
}

/// Means over the instances that carry each score.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Aggregates {
    pub count: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vqa_accuracy: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exact_match: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mc_accuracy: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub judge_accuracy: Option<f64>,
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

impl Aggregates {
    pub fn from_records(records: &[InstanceRecord]) -> Self {
        let judge = |r: &InstanceRecord| r.scores.judge.map(|j| if j.verdict == Verdict::Correct { 1.0 } else { 0.0 });
        Aggregates {
            count: records.len(),
            vqa_accuracy: mean(records.iter().filter_map(|r| r.scores.vqa_accuracy)),
            exact_match: mean(records.iter().filter_map(|r| r.scores.exact_match)),
            mc_accuracy: mean(records.iter().filter_map(|r| r.scores.mc_accuracy)),
            judge_accuracy: mean(records.iter().filter_map(judge)),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunStats {
    pub elapsed_ms: u64,
    /// Requests that reached a backend (cache hits excluded).
    pub backend_calls: usize,
    pub jobs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub report_version: u32,
    pub generated_at: String,
    pub config: RunConfig,
    pub notes: Vec<String>,
    pub instances: Vec<InstanceRecord>,
    pub aggregates: Aggregates,
    /// Summary failure view; present for the modular method.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error_table: Option<ErrorTable>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub runtime_breakdown: Option<RuntimeBreakdown>,
    pub run_stats: RunStats,
}

/// Fixed notes describing how scores were computed.
pub fn metric_notes(config: &RunConfig) -> Vec<String> {
    let mut notes = vec![
        "vqa_accuracy = min(1, matches / 3); the max(1, matches / 3) form is constant and is not used".to_string(),
        format!(
            "answer normalization v{NORMALIZATION_VERSION} {}: lowercase, collapse whitespace, strip terminal punctuation, \
             drop leading articles, number words zero to ten as digits",
            if config.normalize { "on" } else { "off" }
        ),
        "percentages are stored at full precision and rendered rounded to whole numbers".to_string(),
    ];
    if config.setting == Setting::DirectAnswer {
        notes.push("exact_match is reported for instances with a single annotation".to_string());
    }
    if config.judge {
        notes.push("judge: Correct iff the normalized log likelihood of yes exceeds that of no".to_string());
    }
    notes
}

impl Report {
    pub fn new(config: RunConfig, mut instances: Vec<InstanceRecord>, run_stats: RunStats) -> Self {
        instances.sort_by(|a, b| a.id.cmp(&b.id));
        let classes: Vec<OutcomeClass> = instances.iter().filter_map(|r| r.prediction.outcome_class).collect();
        let error_table = error_table(&classes).ok();
        let runtime_breakdown = error_table.as_ref().map(|_| runtime_breakdown(&classes));
        Report {
            report_version: REPORT_VERSION,
            generated_at: unix_seconds(),
            notes: metric_notes(&config),
            aggregates: Aggregates::from_records(&instances),
            config,
            instances,
            error_table,
            runtime_breakdown,
            run_stats,
        }
    }

    pub fn load(path: &Path) -> Result<Self, ReportError> {
        let raw = std::fs::read_to_string(path)
            .map_err(|source| ReportError::Io { path: path.display().to_string(), source })?;
        serde_json::from_str(&raw).map_err(|source| ReportError::Json { path: path.display().to_string(), source })
    }

    pub fn save(&self, path: &Path) -> Result<(), ReportError> {
        let io = |source| ReportError::Io { path: path.display().to_string(), source };
        let mut w = BufWriter::new(File::create(path).map_err(io)?);
        serde_json::to_writer_pretty(&mut w, self)
            .map_err(|source| ReportError::Json { path: path.display().to_string(), source })?;
        w.write_all(b"\n").and_then(|_| w.flush()).map_err(io)
    }

    /// Sorted-key JSON without volatile fields.
    pub fn canonical(&self) -> String {
        let mut v = serde_json::to_value(self).expect("report serializes");
        canonicalize(&mut v);
        serde_json::to_string_pretty(&v).expect("value serializes")
    }

    /// Per-type failure rates over the primary score.
    pub fn type_breakdown(&self, min_count: usize) -> Vec<TypeRow> {
        breakdown_by_type(
            self.instances.iter().filter_map(|r| r.scores.primary().map(|s| (r.question_type.as_deref(), s))),
            min_count,
            1.0,
        )
    }

    /// One row per instance: id, method, variant, answer, scores and
    /// outcome class.
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<(), ReportError> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "id",
            "question_type",
            "method",
            "variant",
            "answer",
            "vqa_accuracy",
            "exact_match",
            "mc_accuracy",
            "judge",
            "outcome",
            "error_label",
        ])?;
        let num = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for r in &self.instances {
            let p = &r.prediction;
            w.write_record([
                r.id.clone(),
                r.question_type.clone().unwrap_or_default(),
                p.method.to_string(),
                p.variant.clone(),
                p.answer_text.clone(),
                num(r.scores.vqa_accuracy),
                num(r.scores.exact_match),
                num(r.scores.mc_accuracy),
                r.scores.judge.map(|j| format!("{:?}", j.verdict)).unwrap_or_default(),
                p.outcome_class.map(|c| format!("{:?}", c.class)).unwrap_or_default(),
                p.outcome_class.and_then(|c| c.label).map(|l| l.to_string()).unwrap_or_default(),
            ])?;
        }
        w.flush().map_err(|e| ReportError::Csv(e.into()))
    }

    /// Score table plus, when present, both failure views and the per-type
    /// breakdown.
    pub fn render(&self, format: TableFormat, min_type_count: usize) -> String {
        let mut out = self.render_scores();
        out.push_str(&self.render_errors(format));
        let types = self.type_breakdown(min_type_count);
        if !types.is_empty() {
            out.push_str("\nfailure rate by question type\n");
            out.push_str(&render_type_table(&[(self.config.variant_label(), types)], format));
        }
        out
    }

    /// The run header and one line per aggregate score.
    pub fn render_scores(&self) -> String {
        let mut out = String::new();
        let a = &self.aggregates;
        out.push_str(&format!(
            "method {} ({}), setting {}, {} instances\n",
            self.config.method,
            self.config.variant_label(),
            self.config.setting,
            a.count
        ));
        for (name, v) in [
            ("vqa_accuracy", a.vqa_accuracy),
            ("exact_match", a.exact_match),
            ("mc_accuracy", a.mc_accuracy),
            ("judge_accuracy", a.judge_accuracy),
        ] {
            if let Some(v) = v {
                out.push_str(&format!("{name:<15}{:.2}%\n", 100.0 * v));
            }
        }
        out
    }

    /// The summary and runtime failure views.
    pub fn render_errors(&self, format: TableFormat) -> String {
        let mut out = String::new();
        let column = self.config.variant_label();
        if let Some(t) = &self.error_table {
            out.push_str("\nexception modes (layout faults count as Parsing)\n");
            out.push_str(&render_error_table(&[(column.clone(), t.clone())], format));
        }
        if let Some(b) = &self.runtime_breakdown {
            out.push_str("\nruntime exceptions (layout faults listed as IndentationError)\n");
            out.push_str(&render_runtime_breakdown(&[(column, b.clone())], format));
        }
        out
    }
}

/// Removes volatile keys at every depth and execution-only keys from the
/// configuration echo.
pub fn canonicalize(v: &mut Value) {
    if let Some(config) = v.get_mut("config").and_then(Value::as_object_mut) {
        for k in EXECUTION_KEYS {
            config.remove(k);
        }
    }
    strip(v);
}

fn strip(v: &mut Value) {
    match v {
        Value::Object(map) => {
            for k in VOLATILE_KEYS {
                map.remove(k);
            }
            map.values_mut().for_each(strip);
        }
        Value::Array(items) => items.iter_mut().for_each(strip),
        _ => {}
    }
}

/// Seconds since the Unix epoch, as a string.
fn unix_seconds() -> String {
    let secs = std::time::SystemTime::now().duration_since(std::time::UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
    format!("{secs}")
}
