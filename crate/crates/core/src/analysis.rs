//! Aggregation of outcomes and scores into report tables.
//!
//! Two views of program failures are kept. The summary view splits every
//! program into `No Exception`, `Parsing` and `Runtime`; layout faults are
//! detected by the parser and count as `Parsing` there. The runtime view is
//! the distribution of error labels over failed runs and lists layout faults
//! under their own `IndentationError` row.
//!
//! Percentages are stored at full precision and rendered rounded to whole
//! numbers (half away from zero).

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::instance::{OutcomeClass, SummaryClass};
use crate::program::{ErrorLabel, ExecutionOutcome};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AnalysisError {
    #[error("no outcomes to aggregate")]
    Empty,
    #[error("column {column} has no {kind}")]
    MissingColumn { column: String, kind: &'static str },
}

/// Anything that carries a summary class and an optional error label.
pub trait Classified {
    fn outcome_class(&self) -> OutcomeClass;
}

impl Classified for OutcomeClass {
    fn outcome_class(&self) -> OutcomeClass {
        *self
    }
}

impl Classified for ExecutionOutcome {
    fn outcome_class(&self) -> OutcomeClass {
        self.class()
    }
}

pub fn classify_outcome(outcome: &ExecutionOutcome) -> SummaryClass {
    outcome.class().class
}

/// The label an outcome contributes to the runtime view: runtime labels and
/// layout faults.
pub fn runtime_label(class: &OutcomeClass) -> Option<ErrorLabel> {
    match (class.class, class.label) {
        (SummaryClass::Runtime, label) => Some(label.unwrap_or(ErrorLabel::Other)),
        (SummaryClass::Parsing, Some(ErrorLabel::IndentationError)) => Some(ErrorLabel::IndentationError),
        _ => None,
    }
}

/// A share of a total.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Share<K> {
    pub key: K,
    pub count: usize,
    pub percent: f64,
}

fn share<K>(key: K, count: usize, total: usize) -> Share<K> {
    Share { key, count, percent: 100.0 * count as f64 / total as f64 }
}

/// Summary view over all programs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorTable {
    pub total: usize,
    pub rows: Vec<Share<SummaryClass>>,
}

impl ErrorTable {
    pub fn percent(&self, class: SummaryClass) -> f64 {
        self.rows.iter().find(|r| r.key == class).map_or(0.0, |r| r.percent)
    }
}

pub fn error_table<T: Classified>(outcomes: &[T]) -> Result<ErrorTable, AnalysisError> {
    if outcomes.is_empty() {
        return Err(AnalysisError::Empty);
    }
    let mut counts = [0usize; 3];
    for o in outcomes {
        let idx = SummaryClass::ALL.iter().position(|c| *c == o.outcome_class().class).expect("known class");
        counts[idx] += 1;
    }
    let total = outcomes.len();
    let rows = SummaryClass::ALL.iter().zip(counts).map(|(c, n)| share(*c, n, total)).collect();
    Ok(ErrorTable { total, rows })
}

/// Label distribution over failed runs. Empty when nothing failed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuntimeBreakdown {
    pub total: usize,
    pub rows: Vec<Share<ErrorLabel>>,
}

impl RuntimeBreakdown {
    pub fn is_empty(&self) -> bool {
        self.total == 0
    }

    pub fn percent(&self, label: ErrorLabel) -> f64 {
        self.rows.iter().find(|r| r.key == label).map_or(0.0, |r| r.percent)
    }
}

pub fn runtime_breakdown<T: Classified>(outcomes: &[T]) -> RuntimeBreakdown {
    let mut counts: BTreeMap<ErrorLabel, usize> = BTreeMap::new();
    let mut total = 0;
    for o in outcomes {
        if let Some(label) = runtime_label(&o.outcome_class()) {
            *counts.entry(label).or_default() += 1;
            total += 1;
        }
    }
    if total == 0 {
        return RuntimeBreakdown { total, rows: Vec::new() };
    }
    let rows = ErrorLabel::ALL.iter().map(|l| share(*l, counts.get(l).copied().unwrap_or(0), total)).collect();
    RuntimeBreakdown { total, rows }
}

/// Failure rate of one question type.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TypeRow {
    pub question_type: String,
    pub count: usize,
    pub failures: usize,
    pub failure_rate: f64,
}

/// Groups scores by question type and drops types with fewer than
/// `min_count` samples. A score below `threshold` is a failure. Untyped
/// items are ignored. Rows are sorted by type name.
pub fn breakdown_by_type<'a>(
    items: impl IntoIterator<Item = (Option<&'a str>, f64)>,
    min_count: usize,
    threshold: f64,
) -> Vec<TypeRow> {
    let mut groups: BTreeMap<&str, (usize, usize)> = BTreeMap::new();
    for (qtype, score) in items {
        let Some(t) = qtype else { continue };
        let entry = groups.entry(t).or_default();
        entry.0 += 1;
        if score < threshold {
            entry.1 += 1;
        }
    }
    groups
        .into_iter()
        .filter(|(_, (n, _))| *n >= min_count)
        .map(|(t, (count, failures))| TypeRow {
            question_type: t.to_string(),
            count,
            failures,
            failure_rate: 100.0 * failures as f64 / count as f64,
        })
        .collect()
}

pub const DEFAULT_MIN_TYPE_COUNT: usize = 50;

/// Rendering style for tables.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TableFormat {
    /// Aligned plain-text columns.
    Text,
    /// `Label & 99\% & 1\% \\` rows.
    Latex,
}

/// A percentage rounded half away from zero.
pub fn whole_percent(p: f64) -> i64 {
    p.round() as i64
}

fn render(header: &[String], rows: &[(String, Vec<f64>)], format: TableFormat) -> String {
    let label_width = rows.iter().map(|(l, _)| l.len()).max().unwrap_or(0);
    let mut out = String::new();
    match format {
        TableFormat::Text => {
            let widths: Vec<usize> = header.iter().map(|h| h.len().max(4)).collect();
            out.push_str(&" ".repeat(label_width));
            for (h, w) in header.iter().zip(&widths) {
                out.push_str(&format!("  {h:>w$}"));
            }
            out.push('\n');
            for (label, values) in rows {
                out.push_str(&format!("{label:<label_width$}"));
                for (v, w) in values.iter().zip(&widths) {
                    out.push_str(&format!("  {:>w$}", format!("{}%", whole_percent(*v))));
                }
                out.push('\n');
            }
        }
        TableFormat::Latex => {
            out.push_str(&format!("& {} \\\\\n", header.join(" & ")));
            for (label, values) in rows {
                let cells: Vec<String> = values.iter().map(|v| format!("{}\\%", whole_percent(*v))).collect();
                out.push_str(&format!("{label} & {} \\\\\n", cells.join(" & ")));
            }
        }
    }
    out
}

/// Summary view with one column per named table.
pub fn render_error_table(columns: &[(String, ErrorTable)], format: TableFormat) -> String {
    let header: Vec<String> = columns.iter().map(|(n, _)| n.clone()).collect();
    let rows: Vec<(String, Vec<f64>)> = SummaryClass::ALL
        .iter()
        .map(|c| (c.title().to_string(), columns.iter().map(|(_, t)| t.percent(*c)).collect()))
        .collect();
    render(&header, &rows, format)
}

/// Runtime view with one column per named breakdown; empty breakdowns
/// render as zeros.
pub fn render_runtime_breakdown(columns: &[(String, RuntimeBreakdown)], format: TableFormat) -> String {
    let header: Vec<String> = columns.iter().map(|(n, _)| n.clone()).collect();
    let rows: Vec<(String, Vec<f64>)> = ErrorLabel::ALL
        .iter()
        .map(|l| (l.as_str().to_string(), columns.iter().map(|(_, b)| b.percent(*l)).collect()))
        .collect();
    render(&header, &rows, format)
}

/// Failure rates by type with one column per method. Only types present in
/// every column are shown; with two or more columns rows are ordered by the
/// absolute gap between the last two columns, largest first.
pub fn render_type_table(columns: &[(String, Vec<TypeRow>)], format: TableFormat) -> String {
    let header: Vec<String> = columns.iter().map(|(n, _)| n.clone()).collect();
    let Some((_, first)) = columns.first() else { return String::new() };
    let mut rows: Vec<(String, Vec<f64>)> = first
        .iter()
        .filter_map(|r| {
            let values: Option<Vec<f64>> = columns
                .iter()
                .map(|(_, rows)| rows.iter().find(|x| x.question_type == r.question_type).map(|x| x.failure_rate))
                .collect();
            values.map(|v| (r.question_type.clone(), v))
        })
        .collect();
    if columns.len() >= 2 {
        let gap = |v: &[f64]| (v[v.len() - 1] - v[v.len() - 2]).abs();
        rows.sort_by(|a, b| gap(&b.1).total_cmp(&gap(&a.1)).then_with(|| a.0.cmp(&b.0)));
    }
    render(&header, &rows, format)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn oc(class: SummaryClass, label: Option<ErrorLabel>) -> OutcomeClass {
        OutcomeClass { class, label }
    }

    #[test]
    fn empty_summary_is_an_error() {
        assert_eq!(error_table::<OutcomeClass>(&[]), Err(AnalysisError::Empty));
    }

    #[test]
    fn no_failures_give_empty_breakdown() {
        let ok = vec![oc(SummaryClass::NoException, None); 4];
        assert!(runtime_breakdown(&ok).is_empty());
    }

    #[test]
    fn layout_faults_appear_in_both_views() {
        let v = vec![
            oc(SummaryClass::Parsing, Some(ErrorLabel::IndentationError)),
            oc(SummaryClass::Parsing, None),
            oc(SummaryClass::Runtime, Some(ErrorLabel::KeyError)),
            oc(SummaryClass::NoException, None),
        ];
        let t = error_table(&v).unwrap();
        assert_eq!(t.percent(SummaryClass::Parsing), 50.0);
        let b = runtime_breakdown(&v);
        assert_eq!(b.total, 2);
        assert_eq!(b.percent(ErrorLabel::IndentationError), 50.0);
        assert_eq!(b.percent(ErrorLabel::KeyError), 50.0);
    }

    #[test]
    fn type_breakdown_filters_small_groups() {
        let mut items: Vec<(Option<&str>, f64)> = Vec::new();
        items.extend(std::iter::repeat_n((Some("count"), 0.0), 10));
        items.extend(std::iter::repeat_n((Some("count"), 1.0), 40));
        items.extend(std::iter::repeat_n((Some("color"), 1.0), 49));
        items.push((None, 0.0));
        let rows = breakdown_by_type(items.iter().copied(), DEFAULT_MIN_TYPE_COUNT, 1.0);
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].question_type, "count");
        assert_eq!(rows[0].failure_rate, 20.0);
    }

    #[test]
    fn type_table_orders_by_gap() {
        let row = |t: &str, r: f64| TypeRow { question_type: t.into(), count: 50, failures: 0, failure_rate: r };
        let cols = vec![
            ("a".to_string(), vec![row("x", 10.0), row("y", 10.0)]),
            ("b".to_string(), vec![row("x", 12.0), row("y", 40.0)]),
        ];
        let s = render_type_table(&cols, TableFormat::Latex);
        let lines: Vec<&str> = s.lines().collect();
        assert_eq!(lines[1], "y & 10\\% & 40\\% \\\\");
        assert_eq!(lines[2], "x & 10\\% & 12\\% \\\\");
    }

    #[test]
    fn rounding_is_half_away_from_zero() {
        assert_eq!(whole_percent(12.5), 13);
        assert_eq!(whole_percent(2.5), 3);
        assert_eq!(whole_percent(33.333), 33);
    }
}
