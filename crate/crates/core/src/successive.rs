//! The successive-prompting strategy.
//!
//! A language model reads an instruction, three worked decompositions and
//! the question, then either asks a follow-up question or answers. Before
//! each step the more likely of the two line prefixes `Follow-up:` and
//! `Answer to the original question:` decides which. Follow-up questions are
//! answered by the vision-language model alone and appended to the
//! transcript, so every prompt extends the previous one.

use std::sync::OnceLock;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backends::{complete, vqa, vqa_prompt, BackendError, BackendSuite, DecodingParams};
use crate::instance::{BenchmarkInstance, Method, Prediction, Setting, Trace, TraceKind};
use crate::scoring::{quoted_list, select_choice, select_prefix};

pub const FOLLOW_UP: &str = "Follow-up:";
pub const FOLLOW_UP_ANSWER: &str = "Follow-up answer:";
pub const ANSWER: &str = "Answer to the original question:";
const QUESTION: &str = "Question:";
const CHOICES: &str = "Choices:";

/// Number of demonstrations the prompt takes.
pub const DEMO_COUNT: usize = 3;
pub const DEFAULT_MAX_STEPS: usize = 8;
pub const SUCCESSIVE_PROMPT: &str = include_str!("../assets/successive_prompt.txt");

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SuccessiveError {
    #[error("the prompt takes exactly {DEMO_COUNT} demonstrations, got {0}")]
    DemoCount(usize),
    #[error("malformed prompt asset: {0}")]
    Asset(String),
    #[error("max_steps must be at least 1")]
    ZeroSteps,
}

/// One follow-up question and the answer the vision model gave.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Step {
    pub followup_question: String,
    pub followup_answer: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Termination {
    /// The answer prefix won the likelihood comparison (or no follow-up
    /// question could be produced).
    AnswerPrefix,
    /// `max_steps` follow-ups were asked and the answer was forced.
    StepCap,
}

/// A worked decomposition shown to the model.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecompositionDemo {
    pub question: String,
    pub steps: Vec<Step>,
    pub answer: String,
}

/// Instruction plus demonstrations.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SuccessivePrompt {
    pub instruction: String,
    pub demonstrations: Vec<DecompositionDemo>,
}

/// Everything one decomposition produced. `terminated_by` and
/// `final_answer` are unset only in the partial trace of a failed run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecompositionTrace {
    pub instruction: String,
    pub demonstrations: Vec<DecompositionDemo>,
    pub question: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub choices: Option<Vec<String>>,
    pub steps: Vec<Step>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub final_answer: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub terminated_by: Option<Termination>,
}

impl DecompositionTrace {
    /// The line-structured transcript of this run, without instruction or
    /// demonstrations.
    pub fn transcript(&self) -> String {
        let mut out = question_block(&self.question, self.choices.as_deref());
        push_steps(&mut out, &self.steps);
        if let Some(a) = &self.final_answer {
            out.push_str(&format!("{ANSWER} {a}\n"));
        }
        out
    }
}

/// A backend failure together with the decomposition so far.
#[derive(Debug, Clone, Error)]
#[error("{source}")]
pub struct DecompositionFailure {
    pub source: BackendError,
    pub partial: Box<DecompositionTrace>,
    pub trace: Trace,
}

fn question_block(question: &str, choices: Option<&[String]>) -> String {
    let mut out = format!("{QUESTION} {}\n", one_line(question));
    if let Some(c) = choices {
        out.push_str(&format!("{CHOICES} {}\n", quoted_list(c)));
    }
    out
}

fn push_steps(out: &mut String, steps: &[Step]) {
    for s in steps {
        out.push_str(&format!("{FOLLOW_UP} {}\n", one_line(&s.followup_question)));
        out.push_str(&format!("{FOLLOW_UP_ANSWER} {}\n", one_line(&s.followup_answer)));
    }
}

fn one_line(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn render_demo(d: &DecompositionDemo) -> String {
    let mut out = question_block(&d.question, None);
    push_steps(&mut out, &d.steps);
    out.push_str(&format!("{ANSWER} {}\n", one_line(&d.answer)));
    out
}

/// Instruction, demonstrations, the question block and the follow-ups so
/// far. With no steps the prompt ends right after the question block.
pub fn build_decomposition_prompt(
    instruction: &str,
    demos: &[DecompositionDemo],
    question: &str,
    choices: Option<&[String]>,
    steps: &[Step],
) -> Result<String, SuccessiveError> {
    if demos.len() != DEMO_COUNT {
        return Err(SuccessiveError::DemoCount(demos.len()));
    }
    let mut out = format!("{}\n\n", instruction.trim());
    for d in demos {
        out.push_str(&render_demo(d));
        out.push('\n');
    }
    out.push_str(&question_block(question, choices));
    push_steps(&mut out, steps);
    Ok(out)
}

/// Parses one demonstration transcript.
pub fn parse_transcript(text: &str) -> Result<DecompositionDemo, SuccessiveError> {
    let bad = |m: &str| SuccessiveError::Asset(format!("{m} in demonstration {:?}", text.lines().next().unwrap_or("")));
    let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty());
    let question = lines
        .next()
        .and_then(|l| l.strip_prefix(QUESTION))
        .map(|q| q.trim().to_string())
        .ok_or_else(|| bad("missing question line"))?;
    let mut steps = Vec::new();
    let mut answer = None;
    while let Some(line) = lines.next() {
        if answer.is_some() {
            return Err(bad("text after the answer"));
        }
        if let Some(q) = line.strip_prefix(FOLLOW_UP) {
            let a = lines
                .next()
                .and_then(|l| l.strip_prefix(FOLLOW_UP_ANSWER))
                .ok_or_else(|| bad("follow-up without an answer"))?;
            steps.push(Step { followup_question: q.trim().to_string(), followup_answer: a.trim().to_string() });
        } else if let Some(a) = line.strip_prefix(ANSWER) {
            answer = Some(a.trim().to_string());
        } else {
            return Err(bad(&format!("unexpected line {line:?}")));
        }
    }
    let answer = answer.ok_or_else(|| bad("missing answer line"))?;
    Ok(DecompositionDemo { question, steps, answer })
}

impl SuccessivePrompt {
    /// Parses an asset of `#@ instruction` and `#@ demo` blocks after a
    /// `#@ version` line.
    pub fn parse(text: &str) -> Result<Self, SuccessiveError> {
        let mut lines = text.lines();
        match lines.next() {
            Some(l) if l.starts_with("#@ version ") => {}
            _ => return Err(SuccessiveError::Asset("first line must be a version directive".into())),
        }
        let mut blocks: Vec<(&str, String)> = Vec::new();
        for line in lines {
            match line.strip_prefix("#@ ") {
                Some(kind @ ("instruction" | "demo")) => blocks.push((kind, String::new())),
                Some(other) => return Err(SuccessiveError::Asset(format!("unknown directive {other:?}"))),
                None => match blocks.last_mut() {
                    Some((_, body)) => {
                        body.push_str(line);
                        body.push('\n');
                    }
                    None if line.trim().is_empty() => {}
                    None => return Err(SuccessiveError::Asset("text before the first block".into())),
                },
            }
        }
        let mut instruction = None;
        let mut demonstrations = Vec::new();
        for (kind, body) in blocks {
            if kind == "instruction" {
                if instruction.replace(body.trim().to_string()).is_some() {
                    return Err(SuccessiveError::Asset("more than one instruction".into()));
                }
            } else {
                demonstrations.push(parse_transcript(&body)?);
            }
        }
        let instruction = instruction.ok_or_else(|| SuccessiveError::Asset("missing instruction".into()))?;
        if demonstrations.len() != DEMO_COUNT {
            return Err(SuccessiveError::DemoCount(demonstrations.len()));
        }
        Ok(SuccessivePrompt { instruction, demonstrations })
    }

    /// The shipped instruction and demonstrations.
    pub fn builtin() -> &'static SuccessivePrompt {
        static PROMPT: OnceLock<SuccessivePrompt> = OnceLock::new();
        PROMPT.get_or_init(|| SuccessivePrompt::parse(SUCCESSIVE_PROMPT).expect("shipped successive prompt is valid"))
    }
}

/// Decoding settings for follow-up questions and free-form answers: one line.
pub fn line_decoding() -> DecodingParams {
    DecodingParams::default().with_max_tokens(64).with_stop(&["\n"])
}

#[derive(Debug, Clone)]
pub struct SuccessiveEngine {
    prompt: SuccessivePrompt,
    max_steps: usize,
}

impl SuccessiveEngine {
    pub fn new(prompt: SuccessivePrompt, max_steps: usize) -> Result<Self, SuccessiveError> {
        if prompt.demonstrations.len() != DEMO_COUNT {
            return Err(SuccessiveError::DemoCount(prompt.demonstrations.len()));
        }
        if max_steps == 0 {
            return Err(SuccessiveError::ZeroSteps);
        }
        Ok(SuccessiveEngine { prompt, max_steps })
    }

    pub fn max_steps(&self) -> usize {
        self.max_steps
    }

    pub fn prompt(&self) -> &SuccessivePrompt {
        &self.prompt
    }

    fn render(&self, d: &DecompositionTrace) -> String {
        build_decomposition_prompt(
            &self.prompt.instruction,
            &self.prompt.demonstrations,
            &d.question,
            d.choices.as_deref(),
            &d.steps,
        )
        .expect("demo count checked on construction")
    }

    /// Runs the decomposition loop for one instance. The language model is
    /// `suite.instruct_lm`; follow-ups go to `suite.vlm`.
    pub fn run(
        &self,
        instance: &BenchmarkInstance,
        setting: Setting,
        suite: &BackendSuite,
    ) -> Result<(Prediction, DecompositionTrace), DecompositionFailure> {
        let choices = match setting {
            Setting::MultipleChoice => instance.choices.clone(),
            Setting::DirectAnswer => None,
        };
        let mut d = DecompositionTrace {
            instruction: self.prompt.instruction.clone(),
            demonstrations: self.prompt.demonstrations.clone(),
            question: instance.question.clone(),
            choices,
            steps: Vec::new(),
            final_answer: None,
            terminated_by: None,
        };
        let mut trace = Trace::new();
        match self.step_loop(instance, suite, &mut d, &mut trace) {
            Ok(answer) => {
                let prediction = Prediction {
                    instance_id: instance.id.clone(),
                    answer_text: answer,
                    method: Method::Successive,
                    variant: "successive".into(),
                    trace,
                    outcome_class: None,
                };
                Ok((prediction, d))
            }
            Err(source) => Err(DecompositionFailure { source, partial: Box::new(d), trace }),
        }
    }

    fn step_loop(
        &self,
        instance: &BenchmarkInstance,
        suite: &BackendSuite,
        d: &mut DecompositionTrace,
        trace: &mut Trace,
    ) -> Result<String, BackendError> {
        let lm = suite.instruct_lm.as_ref();
        let terminated_by = loop {
            if d.steps.len() >= self.max_steps {
                trace.push(TraceKind::EngineDecision, "successive", "step_cap", format!("{} steps", d.steps.len()));
                break Termination::StepCap;
            }
            let prompt = self.render(d);
            let chosen = select_prefix(lm, &prompt, [FOLLOW_UP, ANSWER], trace).map_err(|e| e.into_backend())?;
            if chosen == 1 {
                break Termination::AnswerPrefix;
            }
            let question = complete(lm, &format!("{prompt}{FOLLOW_UP}"), &line_decoding(), trace)?;
            let question = one_line(&question.text);
            if question.is_empty() {
                trace.push(TraceKind::EngineDecision, "successive", "empty_follow_up", "answering instead");
                break Termination::AnswerPrefix;
            }
            let answer = vqa(
                suite.vlm.as_ref(),
                &instance.image_ref,
                &vqa_prompt(&question),
                None,
                Some(&DecodingParams::vlm_default()),
                trace,
            )?;
            d.steps.push(Step { followup_question: question, followup_answer: one_line(&answer) });
        };
        let prompt = format!("{}{ANSWER}", self.render(d));
        let answer = match d.choices.as_deref() {
            Some(choices) => {
                select_choice(lm, &format!("{prompt} "), choices, None, trace).map_err(|e| e.into_backend())?.choice
            }
            None => one_line(&complete(lm, &prompt, &line_decoding(), trace)?.text),
        };
        d.final_answer = Some(answer.clone());
        d.terminated_by = Some(terminated_by);
        Ok(answer)
    }
}

impl Default for SuccessiveEngine {
    fn default() -> Self {
        SuccessiveEngine { prompt: SuccessivePrompt::builtin().clone(), max_steps: DEFAULT_MAX_STEPS }
    }
}

/// Runs the successive strategy on one instance.
pub fn run_decomposition(
    instance: &BenchmarkInstance,
    setting: Setting,
    suite: &BackendSuite,
    max_steps: usize,
) -> Result<(Prediction, DecompositionTrace), DecompositionFailure> {
    let engine =
        SuccessiveEngine::new(SuccessivePrompt::builtin().clone(), max_steps).map_err(|e| DecompositionFailure {
            source: BackendError::InvalidRequest(e.to_string()),
            partial: Box::new(DecompositionTrace {
                instruction: String::new(),
                demonstrations: Vec::new(),
                question: instance.question.clone(),
                choices: None,
                steps: Vec::new(),
                final_answer: None,
                terminated_by: None,
            }),
            trace: Trace::new(),
        })?;
    engine.run(instance, setting, suite)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn demos() -> Vec<DecompositionDemo> {
        SuccessivePrompt::builtin().demonstrations.clone()
    }

    #[test]
    fn shipped_prompt_parses() {
        let p = SuccessivePrompt::builtin();
        assert_eq!(p.demonstrations.len(), DEMO_COUNT);
        assert!(p.demonstrations.iter().all(|d| !d.steps.is_empty()));
    }

    #[test]
    fn zero_steps_end_after_question() {
        let p = build_decomposition_prompt("Do it.", &demos(), "Is it red?", None, &[]).unwrap();
        assert!(p.starts_with("Do it.\n\nQuestion: "));
        assert!(p.ends_with("\nQuestion: Is it red?\n"));
    }

    #[test]
    fn steps_follow_in_order() {
        let steps = vec![
            Step { followup_question: "A?".into(), followup_answer: "a".into() },
            Step { followup_question: "B?".into(), followup_answer: "b".into() },
        ];
        let p = build_decomposition_prompt("I", &demos(), "Q?", None, &steps).unwrap();
        assert!(p.ends_with("Question: Q?\nFollow-up: A?\nFollow-up answer: a\nFollow-up: B?\nFollow-up answer: b\n"));
    }

    #[test]
    fn mc_prompt_lists_each_choice_once() {
        let choices = vec!["zebra crossing".to_string(), "roundabout".to_string()];
        let p = build_decomposition_prompt("I", &demos(), "Where?", Some(&choices), &[]).unwrap();
        for c in &choices {
            assert_eq!(p.matches(c.as_str()).count(), 1);
        }
        assert!(p.ends_with("Choices: ['zebra crossing', 'roundabout']\n"));
    }

    #[test]
    fn demo_count_enforced() {
        assert_eq!(build_decomposition_prompt("I", &demos()[..2], "Q?", None, &[]), Err(SuccessiveError::DemoCount(2)));
        let mut p = SuccessivePrompt::builtin().clone();
        p.demonstrations.push(p.demonstrations[0].clone());
        assert_eq!(SuccessiveEngine::new(p, 8).unwrap_err(), SuccessiveError::DemoCount(4));
        assert_eq!(
            SuccessiveEngine::new(SuccessivePrompt::builtin().clone(), 0).unwrap_err(),
            SuccessiveError::ZeroSteps
        );
    }

    #[test]
    fn transcript_round_trips_through_parser() {
        for d in demos() {
            assert_eq!(parse_transcript(&render_demo(&d)).unwrap(), d);
        }
    }

    #[test]
    fn malformed_transcripts_rejected() {
        assert!(parse_transcript("Follow-up: x\n").is_err());
        assert!(parse_transcript("Question: q\nFollow-up: x\nAnswer to the original question: y\n").is_err());
        assert!(parse_transcript("Question: q\nFollow-up: x\nFollow-up answer: z\n").is_err());
        assert!(parse_transcript("Question: q\nAnswer to the original question: y\nFollow-up: x\n").is_err());
        assert!(SuccessivePrompt::parse("#@ instruction\nx\n").is_err());
    }
}
