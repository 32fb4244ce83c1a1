//! Log-likelihood scoring of continuations.
//!
//! A continuation of `n` tokens is scored by its byte-length weighted mean
//! log-probability: each token's logprob is weighted by the token's share of
//! the continuation's total UTF-8 byte length, so the weights sum to one and
//! equal-length tokens reduce to the plain mean.
//!
//! Every argmax in this module breaks exact ties by input order.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backends::{score_continuations, Backend, BackendError, TokenScore};
use crate::instance::{Trace, TraceKind};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ScoringError {
    #[error("cannot score an empty continuation")]
    EmptyContinuation,
    #[error("token {index} has zero byte length")]
    ZeroByteLength { index: usize },
    #[error("need at least {needed} options, got {got}")]
    TooFewOptions { needed: usize, got: usize },
    #[error("empty option")]
    EmptyOption,
    #[error(transparent)]
    Backend(#[from] BackendError),
}

impl ScoringError {
    pub fn into_backend(self) -> BackendError {
        match self {
            ScoringError::Backend(e) => e,
            other => BackendError::InvalidRequest(other.to_string()),
        }
    }
}

/// A scored continuation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContinuationScore {
    pub continuation: String,
    pub tokens: Vec<TokenScore>,
    pub normalized: f64,
}

/// Byte-length weighted log-likelihood of the continuation tokens.
pub fn normalized_loglikelihood(tokens: &[TokenScore]) -> Result<f64, ScoringError> {
    if tokens.is_empty() {
        return Err(ScoringError::EmptyContinuation);
    }
    if let Some(index) = tokens.iter().position(|t| t.byte_length == 0) {
        return Err(ScoringError::ZeroByteLength { index });
    }
    let total: f64 = tokens.iter().map(|t| f64::from(t.byte_length)).sum();
    Ok(tokens.iter().map(|t| t.logprob * (f64::from(t.byte_length) / total)).sum())
}

/// Index of the maximum, first index on ties.
pub fn argmax(scores: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, s) in scores.iter().enumerate() {
        match best {
            Some(b) if *s <= scores[b] => {}
            _ => best = Some(i),
        }
    }
    best
}

/// Scores every option as a continuation of `prompt` in one backend call.
pub fn score_options(
    lm: &dyn Backend,
    prompt: &str,
    options: &[String],
    image_ref: Option<&str>,
    trace: &mut Trace,
) -> Result<Vec<ContinuationScore>, ScoringError> {
    if options.iter().any(|o| o.is_empty()) {
        return Err(ScoringError::EmptyOption);
    }
    let raw = score_continuations(lm, prompt, options, image_ref, trace)?;
    options
        .iter()
        .zip(raw)
        .map(|(opt, tokens)| {
            let normalized = normalized_loglikelihood(&tokens)?;
            Ok(ContinuationScore { continuation: opt.clone(), tokens, normalized })
        })
        .collect()
}

/// Chooses between two prefixes by normalized likelihood; ties pick index 0.
pub fn select_prefix(
    lm: &dyn Backend,
    prompt: &str,
    prefixes: [&str; 2],
    trace: &mut Trace,
) -> Result<usize, ScoringError> {
    let options: Vec<String> = prefixes.iter().map(|p| p.to_string()).collect();
    let scored = score_options(lm, prompt, &options, None, trace)?;
    let values: Vec<f64> = scored.iter().map(|s| s.normalized).collect();
    let idx = argmax(&values).expect("two options");
    trace.push(
        TraceKind::EngineDecision,
        "scoring",
        "select_prefix",
        format!("{:?} ({:.6} vs {:.6})", prefixes[idx], values[0], values[1]),
    );
    Ok(idx)
}

/// The winning choice and every option's normalized score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChoiceSelection {
    pub index: usize,
    pub choice: String,
    pub scores: Vec<ContinuationScore>,
}

pub fn select_choice(
    lm: &dyn Backend,
    prompt: &str,
    choices: &[String],
    image_ref: Option<&str>,
    trace: &mut Trace,
) -> Result<ChoiceSelection, ScoringError> {
    if choices.len() < 2 {
        return Err(ScoringError::TooFewOptions { needed: 2, got: choices.len() });
    }
    let scores = score_options(lm, prompt, choices, image_ref, trace)?;
    let values: Vec<f64> = scores.iter().map(|s| s.normalized).collect();
    let index = argmax(&values).expect("non-empty");
    trace.push(TraceKind::EngineDecision, "scoring", "select_choice", format!("{:?}", choices[index]));
    Ok(ChoiceSelection { index, choice: choices[index].clone(), scores })
}

/// Renders strings as a bracketed, single-quoted list: `['dog', 'cat']`.
pub fn quoted_list(items: &[String]) -> String {
    let quoted: Vec<String> =
        items.iter().map(|s| format!("'{}'", s.replace('\\', "\\\\").replace('\'', "\\'"))).collect();
    format!("[{}]", quoted.join(", "))
}

pub fn nearest_choice_prompt(candidate: &str, choices: &[String]) -> String {
    format!("Choices: {} Candidate: {} Most similar choice:", quoted_list(choices), candidate.trim())
}

/// Maps free text onto one of the choices. An exact match (after trimming)
/// returns immediately without touching the backend.
pub fn map_to_nearest_choice(
    lm: &dyn Backend,
    candidate: &str,
    choices: &[String],
    trace: &mut Trace,
) -> Result<String, ScoringError> {
    if choices.len() < 2 {
        return Err(ScoringError::TooFewOptions { needed: 2, got: choices.len() });
    }
    let trimmed = candidate.trim();
    if trimmed.is_empty() {
        return Err(ScoringError::EmptyOption);
    }
    if let Some(exact) = choices.iter().find(|c| c.as_str() == trimmed) {
        trace.push(TraceKind::EngineDecision, "scoring", "map_to_nearest_choice", format!("exact {exact:?}"));
        return Ok(exact.clone());
    }
    let prompt = nearest_choice_prompt(trimmed, choices);
    Ok(select_choice(lm, &prompt, choices, None, trace)?.choice)
}
