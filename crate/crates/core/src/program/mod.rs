//! The program-generation strategy.
//!
//! A code model is prompted with an image-manipulation API and the question,
//! and continues the `execute_command` signature. The returned program is
//! parsed as a small indentation-delimited dialect and run by a sandboxed
//! interpreter whose `ImagePatch` methods call the backend suite. Failures
//! are classified as parse or runtime errors with a label.

pub mod api;
pub mod ast;
mod builtins;
pub mod interp;
pub mod lexer;
pub mod parser;
pub mod prompt;
pub mod value;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backends::{self, complete, BackendError, BackendSuite, DecodingParams};
use crate::instance::{BenchmarkInstance, Method, OutcomeClass, Prediction, Setting, SummaryClass, Trace, TraceKind};
use crate::scoring::map_to_nearest_choice;
use interp::Interpreter;
use prompt::PromptError;
use value::{coerce_result, Patch, Value};

/// Error labels of the failure taxonomy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ErrorLabel {
    NameError,
    AttributeError,
    IndexError,
    TypeError,
    IndentationError,
    ValueError,
    KeyError,
    ZeroDivisionError,
    Other,
}

impl ErrorLabel {
    pub const ALL: [ErrorLabel; 9] = [
        ErrorLabel::NameError,
        ErrorLabel::AttributeError,
        ErrorLabel::IndexError,
        ErrorLabel::TypeError,
        ErrorLabel::IndentationError,
        ErrorLabel::ValueError,
        ErrorLabel::KeyError,
        ErrorLabel::ZeroDivisionError,
        ErrorLabel::Other,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ErrorLabel::NameError => "NameError",
            ErrorLabel::AttributeError => "AttributeError",
            ErrorLabel::IndexError => "IndexError",
            ErrorLabel::TypeError => "TypeError",
            ErrorLabel::IndentationError => "IndentationError",
            ErrorLabel::ValueError => "ValueError",
            ErrorLabel::KeyError => "KeyError",
            ErrorLabel::ZeroDivisionError => "ZeroDivisionError",
            ErrorLabel::Other => "Other",
        }
    }
}

impl fmt::Display for ErrorLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ErrorLabel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ErrorLabel::ALL.into_iter().find(|l| l.as_str() == s).ok_or_else(|| format!("unknown error label {s:?}"))
    }
}

/// A syntax or layout error with its 1-based position. Layout faults carry
/// the `IndentationError` label.
#[derive(Debug, Clone, PartialEq, Error)]
#[error("line {line}, column {col}: {message}")]
pub struct ParseError {
    pub line: u32,
    pub col: u32,
    pub message: String,
    pub label: Option<ErrorLabel>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ExecStatus {
    Ok,
    ParseError,
    RuntimeError,
}

/// Result or classified failure of one program.
///
/// `result` is present exactly for `Ok`. `error_label` is present for every
/// runtime error and for parse errors caused by layout (`IndentationError`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecutionOutcome {
    pub status: ExecStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub result: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error_label: Option<ErrorLabel>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub message: Option<String>,
    pub steps_used: u64,
    /// Backend transport failure that caused a runtime error, if any.
    #[serde(skip)]
    pub transport: Option<BackendError>,
}

impl ExecutionOutcome {
    pub fn ok(result: String, steps_used: u64) -> Self {
        ExecutionOutcome {
            status: ExecStatus::Ok,
            result: Some(result),
            error_label: None,
            message: None,
            steps_used,
            transport: None,
        }
    }

    pub fn parse_error(e: &ParseError) -> Self {
        ExecutionOutcome {
            status: ExecStatus::ParseError,
            result: None,
            error_label: e.label,
            message: Some(e.to_string()),
            steps_used: 0,
            transport: None,
        }
    }

    pub fn runtime_error(e: interp::RtError, steps_used: u64) -> Self {
        ExecutionOutcome {
            status: ExecStatus::RuntimeError,
            result: None,
            error_label: Some(e.label),
            message: Some(format!("{}: {} (line {})", e.label, e.message, e.line)),
            steps_used,
            transport: e.transport,
        }
    }

    /// Summary class and label.
    pub fn class(&self) -> OutcomeClass {
        let class = match self.status {
            ExecStatus::Ok => SummaryClass::NoException,
            ExecStatus::ParseError => SummaryClass::Parsing,
            ExecStatus::RuntimeError => SummaryClass::Runtime,
        };
        OutcomeClass { class, label: self.error_label }
    }
}

/// Prompt variants of the modular strategy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ApiVariant {
    /// Full API.
    TaskAgnostic,
    /// Full API minus `simple_query`.
    #[serde(rename = "no-blip2")]
    WithoutBlip2,
    /// Only `simple_query`, with rewritten built-in demonstrations.
    #[serde(rename = "only-blip2-zs")]
    OnlyBlip2ZeroShot,
    /// Only `simple_query`, with three user-supplied demonstrations.
    #[serde(rename = "only-blip2-fs")]
    OnlyBlip2FewShot,
}

impl ApiVariant {
    pub const ALL: [ApiVariant; 4] = [
        ApiVariant::TaskAgnostic,
        ApiVariant::WithoutBlip2,
        ApiVariant::OnlyBlip2ZeroShot,
        ApiVariant::OnlyBlip2FewShot,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ApiVariant::TaskAgnostic => "task-agnostic",
            ApiVariant::WithoutBlip2 => "no-blip2",
            ApiVariant::OnlyBlip2ZeroShot => "only-blip2-zs",
            ApiVariant::OnlyBlip2FewShot => "only-blip2-fs",
        }
    }

    /// `ImagePatch` methods bound at runtime.
    pub fn methods(self) -> &'static [&'static str] {
        match self {
            ApiVariant::TaskAgnostic => api::ALL_METHODS,
            ApiVariant::WithoutBlip2 => {
                &["find", "exists", "verify_property", "best_text_match", "compute_depth", "crop"]
            }
            ApiVariant::OnlyBlip2ZeroShot | ApiVariant::OnlyBlip2FewShot => &["simple_query"],
        }
    }

    /// Module-level API functions bound at runtime.
    pub fn functions(self) -> &'static [&'static str] {
        match self {
            ApiVariant::TaskAgnostic | ApiVariant::WithoutBlip2 => api::ALL_FUNCTIONS,
            ApiVariant::OnlyBlip2ZeroShot | ApiVariant::OnlyBlip2FewShot => &[],
        }
    }

    pub fn is_few_shot(self) -> bool {
        self == ApiVariant::OnlyBlip2FewShot
    }
}

impl fmt::Display for ApiVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ApiVariant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ApiVariant::ALL.into_iter().find(|v| v.as_str() == s).ok_or_else(|| {
            format!("unknown variant {s:?} (expected task-agnostic|no-blip2|only-blip2-zs|only-blip2-fs)")
        })
    }
}

/// One worked (question, program) pair for few-shot prompts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Demo {
    pub question: String,
    pub program: String,
}

/// A program returned by the code model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratedProgram {
    /// Text following the signature, or the whole program when the model
    /// restated the definition.
    pub source: String,
    pub signature: String,
    pub question: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub choices: Option<Vec<String>>,
}

impl GeneratedProgram {
    pub fn from_completion(completion: &str, question: &str, choices: Option<&[String]>) -> Self {
        GeneratedProgram {
            source: completion.to_string(),
            signature: prompt::signature(choices),
            question: question.to_string(),
            choices: choices.map(<[String]>::to_vec),
        }
    }

    /// The complete program text handed to the parser.
    pub fn full_text(&self) -> String {
        if self.source.trim_start().starts_with("def ") {
            self.source.clone()
        } else {
            format!("{}\n{}", self.signature, self.source)
        }
    }
}

/// Interpreter limits.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExecConfig {
    /// Evaluation steps before the run is aborted.
    pub budget: u64,
    /// `verify_property` holds when similarity is strictly above this.
    pub theta: f64,
}

impl Default for ExecConfig {
    fn default() -> Self {
        ExecConfig { budget: 100_000, theta: 0.5 }
    }
}

/// Stack for the interpreter thread; the nesting limits keep recursion
/// well inside it.
const INTERPRETER_STACK: usize = 64 << 20;

/// Parses and runs a program against the image. Never fails: every problem
/// becomes part of the outcome.
pub fn execute_source(
    source: &str,
    image_ref: &str,
    variant: ApiVariant,
    suite: &BackendSuite,
    config: &ExecConfig,
    trace: &mut Trace,
) -> ExecutionOutcome {
    let run = || {
        let module = match parser::parse(source) {
            Ok(m) => m,
            Err(e) => {
                trace.push(TraceKind::ParserEvent, "parser", "parse", format!("error: {e}"));
                return ExecutionOutcome::parse_error(&e);
            }
        };
        trace.push(TraceKind::ParserEvent, "parser", "parse", "ok");
        execute(&module, image_ref, variant, suite, config, trace)
    };
    std::thread::scope(|scope| {
        std::thread::Builder::new()
            .name("interpreter".into())
            .stack_size(INTERPRETER_STACK)
            .spawn_scoped(scope, run)
            .expect("spawn interpreter thread")
            .join()
            .unwrap_or_else(|panic| std::panic::resume_unwind(panic))
    })
}

/// Runs a parsed program; the function receives the full image as its first
/// argument.
pub fn execute(
    module: &ast::Module,
    image_ref: &str,
    variant: ApiVariant,
    suite: &BackendSuite,
    config: &ExecConfig,
    trace: &mut Trace,
) -> ExecutionOutcome {
    let info = backends::image_info(suite.vlm.as_ref(), image_ref, trace);
    let mut interp = Interpreter::new(suite, variant, config, trace);
    let result = match info {
        Ok(info) => {
            let image = Value::Patch(std::rc::Rc::new(Patch::root(image_ref, info.width, info.height)));
            interp.call_function(&module.func, vec![image])
        }
        Err(e) => Err(interp.backend_err(e)),
    };
    let steps = interp.steps();
    let outcome = match result {
        Ok(v) => ExecutionOutcome::ok(coerce_result(&v), steps),
        Err(e) => ExecutionOutcome::runtime_error(e, steps),
    };
    let detail = match &outcome.message {
        Some(m) => format!("{:?} after {steps} steps: {m}", outcome.status),
        None => format!("{:?} after {steps} steps", outcome.status),
    };
    trace.push(TraceKind::InterpreterStep, "interpreter", "execute", detail);
    outcome
}

/// Decoding settings for program generation.
pub fn code_decoding() -> DecodingParams {
    DecodingParams::default().with_max_tokens(512).with_stop(&["\n#", "\ndef "])
}

/// The modular strategy for one prompt variant.
#[derive(Debug, Clone)]
pub struct ModularEngine {
    variant: ApiVariant,
    config: ExecConfig,
    prefix: String,
}

/// Everything one modular run produced.
#[derive(Debug, Clone, PartialEq)]
pub struct ModularRun {
    pub prediction: Prediction,
    pub program: GeneratedProgram,
    pub outcome: ExecutionOutcome,
}

impl ModularEngine {
    /// Validates the demonstrations and renders the shared prompt prefix.
    pub fn new(variant: ApiVariant, demos: &[Demo], config: ExecConfig) -> Result<Self, PromptError> {
        let prefix = prompt::prompt_prefix(variant, demos)?;
        Ok(ModularEngine { variant, config, prefix })
    }

    pub fn variant(&self) -> ApiVariant {
        self.variant
    }

    pub fn config(&self) -> &ExecConfig {
        &self.config
    }

    pub fn prompt(&self, question: &str, choices: Option<&[String]>) -> Result<String, PromptError> {
        Ok(format!("{}{}", self.prefix, prompt::question_block(question, choices)?))
    }

    /// Prompt, generate, parse, execute and (for multiple choice) map the
    /// result onto a choice. Program failures are returned as data; only
    /// backend failures outside the sandbox, and transport failures inside
    /// it, are errors.
    pub fn run(
        &self,
        instance: &BenchmarkInstance,
        setting: Setting,
        suite: &BackendSuite,
        mut trace: Trace,
    ) -> Result<ModularRun, BackendError> {
        let choices = match setting {
            Setting::MultipleChoice => instance.choices.as_deref(),
            Setting::DirectAnswer => None,
        };
        let prompt =
            self.prompt(&instance.question, choices).map_err(|e| BackendError::InvalidRequest(e.to_string()))?;
        let completion = complete(suite.code_lm.as_ref(), &prompt, &code_decoding(), &mut trace)?;
        let program = GeneratedProgram::from_completion(&completion.text, &instance.question, choices);
        let outcome =
            execute_source(&program.full_text(), &instance.image_ref, self.variant, suite, &self.config, &mut trace);
        if let Some(e) = &outcome.transport {
            return Err(e.clone());
        }
        let answer_text = match (&outcome.result, choices) {
            (Some(result), Some(choices)) if !result.trim().is_empty() => {
                map_to_nearest_choice(suite.instruct_lm.as_ref(), result, choices, &mut trace)
                    .map_err(|e| e.into_backend())?
            }
            (Some(result), Some(_)) => {
                trace.push(TraceKind::EngineDecision, "modular", "map_to_choice", "empty result left unmapped");
                result.clone()
            }
            (Some(result), None) => result.clone(),
            (None, _) => String::new(),
        };
        let prediction = Prediction {
            instance_id: instance.id.clone(),
            answer_text,
            method: Method::Modular,
            variant: self.variant.to_string(),
            trace,
            outcome_class: Some(outcome.class()),
        };
        Ok(ModularRun { prediction, program, outcome })
    }
}

/// Runs the modular strategy on one instance.
pub fn run_modular(
    instance: &BenchmarkInstance,
    setting: Setting,
    engine: &ModularEngine,
    suite: &BackendSuite,
) -> Result<Prediction, BackendError> {
    engine.run(instance, setting, suite, Trace::new()).map(|r| r.prediction)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn label_names_round_trip() {
        for l in ErrorLabel::ALL {
            assert_eq!(l.as_str().parse::<ErrorLabel>().unwrap(), l);
            assert_eq!(serde_json::to_string(&l).unwrap(), format!("\"{}\"", l.as_str()));
        }
    }

    #[test]
    fn variant_names_round_trip() {
        for v in ApiVariant::ALL {
            assert_eq!(v.as_str().parse::<ApiVariant>().unwrap(), v);
            assert_eq!(serde_json::to_string(&v).unwrap(), format!("\"{}\"", v.as_str()));
        }
        assert!("full".parse::<ApiVariant>().is_err());
    }

    #[test]
    fn variant_surfaces() {
        assert!(!ApiVariant::WithoutBlip2.methods().contains(&"simple_query"));
        assert_eq!(ApiVariant::OnlyBlip2ZeroShot.methods(), &["simple_query"]);
        assert!(ApiVariant::OnlyBlip2FewShot.functions().is_empty());
    }

    #[test]
    fn full_text_prepends_signature() {
        let p = GeneratedProgram::from_completion("    return 'x'\n", "q", None);
        assert_eq!(p.full_text(), "def execute_command(image) -> str:\n    return 'x'\n");
        let q = GeneratedProgram::from_completion("def execute_command(image) -> str:\n  return 1", "q", None);
        assert!(q.full_text().starts_with("def execute_command"));
    }

    #[test]
    fn outcome_classes() {
        let ok = ExecutionOutcome::ok("2".into(), 5);
        assert_eq!(ok.class(), OutcomeClass { class: SummaryClass::NoException, label: None });
        let pe = ParseError { line: 2, col: 1, message: "bad".into(), label: Some(ErrorLabel::IndentationError) };
        let c = ExecutionOutcome::parse_error(&pe).class();
        assert_eq!(c.class, SummaryClass::Parsing);
        assert_eq!(c.label, Some(ErrorLabel::IndentationError));
    }
}
