//! Answer scoring.
//!
//! `vqa_accuracy` is the soft accuracy against up to ten annotations,
//! `min(1, matches / 3)`. `llm_judge` asks a language model whether a
//! candidate answer is correct and compares the likelihoods of `yes` and
//! `no`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backends::Backend;
use crate::instance::{Trace, TraceKind};
use crate::scoring::{score_options, ScoringError};

/// Version of the normalization rule set, recorded in reports.
pub const NORMALIZATION_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricError {
    #[error("no ground-truth answers")]
    NoAnswers,
    #[error("prediction {0:?} is not one of the choices")]
    NotAChoice(String),
    #[error("correct index {index} out of range for {len} choices")]
    BadIndex { index: usize, len: usize },
}

const ARTICLES: [&str; 3] = ["a", "an", "the"];
const NUMBERS: [&str; 11] = ["zero", "one", "two", "three", "four", "five", "six", "seven", "eight", "nine", "ten"];
const TERMINAL_PUNCT: &[char] = &['.', ',', '!', '?', ';', ':'];

/// Lowercases, collapses whitespace, strips terminal punctuation, drops
/// leading articles (keeping a lone word) and maps number words up to ten
/// to digits. Idempotent.
pub fn normalize_answer(text: &str) -> String {
    let lower = text.to_lowercase();
    let mut s = lower.split_whitespace().collect::<Vec<_>>().join(" ");
    loop {
        let stripped = s.trim_end_matches(TERMINAL_PUNCT).trim_end();
        if stripped.len() == s.len() {
            break;
        }
        s = stripped.to_string();
    }
    let mut words: Vec<&str> = s.split(' ').filter(|w| !w.is_empty()).collect();
    while words.len() > 1 && ARTICLES.contains(&words[0]) {
        words.remove(0);
    }
    let mapped: Vec<String> = words
        .iter()
        .map(|w| match NUMBERS.iter().position(|n| n == w) {
            Some(i) => i.to_string(),
            None => w.to_string(),
        })
        .collect();
    mapped.join(" ")
}

fn prepare(text: &str, normalize: bool) -> String {
    if normalize {
        normalize_answer(text)
    } else {
        text.to_string()
    }
}

/// Number of annotations equal to the prediction.
pub fn num_matches(prediction: &str, answers: &[String], normalize: bool) -> usize {
    let p = prepare(prediction, normalize);
    answers.iter().filter(|a| prepare(a, normalize) == p).count()
}

/// `min(1, matches / 3)`.
pub fn vqa_accuracy(prediction: &str, answers: &[String], normalize: bool) -> Result<f64, MetricError> {
    if answers.is_empty() {
        return Err(MetricError::NoAnswers);
    }
    Ok((num_matches(prediction, answers, normalize) as f64 / 3.0).min(1.0))
}

pub fn exact_match(prediction: &str, answer: &str, normalize: bool) -> f64 {
    if prepare(prediction, normalize) == prepare(answer, normalize) {
        1.0
    } else {
        0.0
    }
}

pub fn mc_accuracy(prediction: &str, choices: &[String], correct_index: usize) -> Result<f64, MetricError> {
    let correct =
        choices.get(correct_index).ok_or(MetricError::BadIndex { index: correct_index, len: choices.len() })?;
    if !choices.iter().any(|c| c == prediction) {
        return Err(MetricError::NotAChoice(prediction.to_string()));
    }
    Ok(if prediction == correct { 1.0 } else { 0.0 })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Verdict {
    Correct,
    Incorrect,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Judgement {
    pub verdict: Verdict,
    pub yes: f64,
    pub no: f64,
}

/// The four-line judge prompt. Several distinct annotations are joined
/// with `or` in first-seen order.
pub fn judge_prompt(question: &str, answers: &[String], candidate: &str) -> String {
    let mut distinct: Vec<&str> = Vec::new();
    for a in answers {
        if !distinct.contains(&a.as_str()) {
            distinct.push(a);
        }
    }
    format!(
        "Question: {question}\nAnswer: {}\nCandidate: {candidate}\nIs the candidate correct? [yes/no]\n",
        distinct.join(" or ")
    )
}

/// `Correct` iff `yes` is strictly more likely than `no`.
pub fn llm_judge(
    lm: &dyn Backend,
    question: &str,
    answers: &[String],
    candidate: &str,
    normalize: bool,
    trace: &mut Trace,
) -> Result<Judgement, ScoringError> {
    if answers.is_empty() {
        return Err(ScoringError::TooFewOptions { needed: 1, got: 0 });
    }
    let (answers, candidate): (Vec<String>, String) = if normalize {
        (answers.iter().map(|a| normalize_answer(a)).collect(), normalize_answer(candidate))
    } else {
        (answers.to_vec(), candidate.to_string())
    };
    let prompt = judge_prompt(question, &answers, &candidate);
    let scores = score_options(lm, &prompt, &["yes".to_string(), "no".to_string()], None, trace)?;
    let (yes, no) = (scores[0].normalized, scores[1].normalized);
    let verdict = if yes > no { Verdict::Correct } else { Verdict::Incorrect };
    trace.push(TraceKind::EngineDecision, "metrics", "llm_judge", format!("{verdict:?} ({yes:.6} vs {no:.6})"));
    Ok(Judgement { verdict, yes, no })
}
