//! Benchmark items, predictions and per-instance traces.
//!
//! Everything here is immutable once built and is shared freely between
//! evaluation workers.

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::program::ErrorLabel;

/// Upper bound on ground-truth annotations per item (VQAv2 ships ten).
pub const MAX_ANSWERS: usize = 10;

/// One VQA item. `image_ref` is an opaque key; pixels are never decoded here.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkInstance {
    pub id: String,
    pub image_ref: String,
    pub question: String,
    #[serde(default)]
    pub answers: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub choices: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub question_type: Option<String>,
    pub split: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ValidationError {
    #[error("empty id")]
    EmptyId,
    #[error("empty question")]
    EmptyQuestion,
    #[error("missing answers")]
    MissingAnswers,
    #[error("too many answers ({0} > {MAX_ANSWERS})")]
    TooManyAnswers(usize),
    #[error("multiple-choice instance has no choices")]
    MissingChoices,
    #[error("choices must have at least 2 entries, found {0}")]
    TooFewChoices(usize),
    #[error("duplicate choice {0:?}")]
    DuplicateChoice(String),
    #[error("correct answer {0:?} is not one of the choices")]
    AnswerNotInChoices(String),
}

impl BenchmarkInstance {
    pub fn validate(&self, setting: Setting) -> Result<(), ValidationError> {
        if self.id.is_empty() {
            return Err(ValidationError::EmptyId);
        }
        if self.question.trim().is_empty() {
            return Err(ValidationError::EmptyQuestion);
        }
        if self.answers.is_empty() {
            return Err(ValidationError::MissingAnswers);
        }
        if self.answers.len() > MAX_ANSWERS {
            return Err(ValidationError::TooManyAnswers(self.answers.len()));
        }
        if let Some(choices) = &self.choices {
            if choices.len() < 2 {
                return Err(ValidationError::TooFewChoices(choices.len()));
            }
            let mut seen = HashSet::new();
            for c in choices {
                if !seen.insert(c.as_str()) {
                    return Err(ValidationError::DuplicateChoice(c.clone()));
                }
            }
        }
        if setting == Setting::MultipleChoice {
            let choices = self.choices.as_ref().ok_or(ValidationError::MissingChoices)?;
            if !choices.contains(&self.answers[0]) {
                return Err(ValidationError::AnswerNotInChoices(self.answers[0].clone()));
            }
        }
        Ok(())
    }

    /// Index of the correct choice for multiple-choice items (the first answer).
    pub fn correct_index(&self) -> Option<usize> {
        let choices = self.choices.as_ref()?;
        let answer = self.answers.first()?;
        choices.iter().position(|c| c == answer)
    }
}

/// Direct answer or multiple choice.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Setting {
    #[serde(alias = "direct")]
    DirectAnswer,
    #[serde(alias = "mc")]
    MultipleChoice,
}

impl FromStr for Setting {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "direct" | "direct_answer" => Ok(Setting::DirectAnswer),
            "mc" | "multiple_choice" => Ok(Setting::MultipleChoice),
            other => Err(format!("unknown setting {other:?} (expected direct|mc)")),
        }
    }
}

impl fmt::Display for Setting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Setting::DirectAnswer => "direct",
            Setting::MultipleChoice => "mc",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    #[serde(alias = "e2e")]
    EndToEnd,
    #[serde(alias = "viper")]
    Modular,
    Successive,
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "e2e" | "end_to_end" => Ok(Method::EndToEnd),
            "viper" | "modular" => Ok(Method::Modular),
            "successive" => Ok(Method::Successive),
            other => Err(format!("unknown method {other:?} (expected e2e|viper|successive)")),
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::EndToEnd => "e2e",
            Method::Modular => "viper",
            Method::Successive => "successive",
        })
    }
}

/// Three-way summary of how a generated program ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SummaryClass {
    NoException,
    Parsing,
    Runtime,
}

impl SummaryClass {
    pub const ALL: [SummaryClass; 3] = [SummaryClass::NoException, SummaryClass::Parsing, SummaryClass::Runtime];

    /// Row label used in rendered tables.
    pub fn title(self) -> &'static str {
        match self {
            SummaryClass::NoException => "No Exception",
            SummaryClass::Parsing => "Parsing",
            SummaryClass::Runtime => "Runtime",
        }
    }
}

/// Summary class plus error label, attached to predictions of the program
/// engine. Layout faults are `Parsing` with label `IndentationError`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutcomeClass {
    pub class: SummaryClass,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<ErrorLabel>,
}

/// The answer a method produced for one instance. `answer_text` is scored
/// verbatim.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub instance_id: String,
    pub answer_text: String,
    pub method: Method,
    pub variant: String,
    pub trace: Trace,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub outcome_class: Option<OutcomeClass>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TraceKind {
    BackendCall,
    ParserEvent,
    InterpreterStep,
    EngineDecision,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TracePayload {
    /// Backend id, or the engine component that produced the event.
    pub source: String,
    pub op: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub request_digest: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub response_digest: Option<String>,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub detail: String,
    pub timestamp_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEvent {
    pub seq: u64,
    pub kind: TraceKind,
    pub payload: TracePayload,
}

/// Append-only event log for one instance; `seq` is assigned on push.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Trace {
    events: Vec<TraceEvent>,
}

impl Trace {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, kind: TraceKind, source: &str, op: &str, detail: impl Into<String>) -> &mut TraceEvent {
        self.push_payload(
            kind,
            TracePayload {
                source: source.to_string(),
                op: op.to_string(),
                request_digest: None,
                response_digest: None,
                detail: detail.into(),
                timestamp_ms: now_ms(),
            },
        )
    }

    pub fn push_payload(&mut self, kind: TraceKind, payload: TracePayload) -> &mut TraceEvent {
        let seq = self.events.len() as u64;
        self.events.push(TraceEvent { seq, kind, payload });
        self.events.last_mut().expect("just pushed")
    }

    pub fn events(&self) -> &[TraceEvent] {
        &self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    /// Backend calls with the given op name.
    pub fn calls<'a>(&'a self, op: &'a str) -> impl Iterator<Item = &'a TraceEvent> + 'a {
        self.events.iter().filter(move |e| e.kind == TraceKind::BackendCall && e.payload.op == op)
    }
}

pub(crate) fn now_ms() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis() as u64).unwrap_or(0)
}
