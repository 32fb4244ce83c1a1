//! Deterministic stand-in for a language model.
//!
//! Completions come from an ordered rule list (first match wins) and
//! continuation scores from an ordered scoring table. A prompt no rule
//! matches is a fixture error; there is no silent fallback.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{
    Backend, BackendError, BackendRequest, BackendResponse, CompleteRequest, Completion, FinishReason, ScoreRequest,
    ScoreResponse, TokenScore,
};

/// Predicate over a prompt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptMatch {
    Exact(String),
    Prefix(String),
    Suffix(String),
    Contains(String),
    Any,
    /// Every inner predicate holds.
    AllOf(Vec<PromptMatch>),
    Not(Box<PromptMatch>),
}

impl PromptMatch {
    pub fn matches(&self, prompt: &str) -> bool {
        match self {
            PromptMatch::Exact(s) => prompt == s,
            PromptMatch::Prefix(s) => prompt.starts_with(s.as_str()),
            PromptMatch::Suffix(s) => prompt.ends_with(s.as_str()),
            PromptMatch::Contains(s) => prompt.contains(s.as_str()),
            PromptMatch::Any => true,
            PromptMatch::AllOf(ms) => ms.iter().all(|m| m.matches(prompt)),
            PromptMatch::Not(m) => !m.matches(prompt),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRule {
    #[serde(rename = "match")]
    pub matcher: PromptMatch,
    pub completion: String,
    /// Token breakdown; defaults to a single zero-logprob token.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tokens: Option<Vec<TokenScore>>,
}

/// A continuation score: either a single logprob (one token spanning the
/// whole continuation) or an explicit token list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ScoreSpec {
    Logprob(f64),
    Tokens(Vec<TokenScore>),
}

impl ScoreSpec {
    fn tokens_for(&self, continuation: &str) -> Vec<TokenScore> {
        match self {
            ScoreSpec::Logprob(lp) => vec![TokenScore::new(continuation, *lp)],
            ScoreSpec::Tokens(t) => t.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRule {
    #[serde(rename = "match")]
    pub matcher: PromptMatch,
    /// Restricts the rule to image-conditioned scoring of this image.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_ref: Option<String>,
    pub scores: BTreeMap<String, ScoreSpec>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ScriptedLmSpec {
    #[serde(default)]
    pub rules: Vec<CompletionRule>,
    #[serde(default)]
    pub scoring: Vec<ScoreRule>,
}

#[derive(Debug, Clone)]
pub struct ScriptedLm {
    id: String,
    spec: ScriptedLmSpec,
}

impl ScriptedLm {
    pub fn new(id: impl Into<String>) -> Self {
        ScriptedLm { id: id.into(), spec: ScriptedLmSpec::default() }
    }

    pub fn from_spec(id: impl Into<String>, spec: ScriptedLmSpec) -> Result<Self, BackendError> {
        for (i, rule) in spec.rules.iter().enumerate() {
            if let Some(tokens) = &rule.tokens {
                let joined: String = tokens.iter().map(|t| t.token_text.as_str()).collect();
                if joined != rule.completion {
                    return Err(BackendError::Fixture(format!(
                        "rule {i}: tokens do not concatenate to the completion text"
                    )));
                }
            }
        }
        Ok(ScriptedLm { id: id.into(), spec })
    }

    pub fn with_completion(mut self, matcher: PromptMatch, completion: impl Into<String>) -> Self {
        self.spec.rules.push(CompletionRule { matcher, completion: completion.into(), tokens: None });
        self
    }

    pub fn with_scores<S: Into<String>>(
        mut self,
        matcher: PromptMatch,
        scores: impl IntoIterator<Item = (S, f64)>,
    ) -> Self {
        self.spec.scoring.push(ScoreRule {
            matcher,
            image_ref: None,
            scores: scores.into_iter().map(|(k, v)| (k.into(), ScoreSpec::Logprob(v))).collect(),
        });
        self
    }

    pub fn with_score_rule(mut self, rule: ScoreRule) -> Self {
        self.spec.scoring.push(rule);
        self
    }

    pub fn complete(&self, req: &CompleteRequest) -> Result<Completion, BackendError> {
        if req.prompt.is_empty() {
            return Err(BackendError::InvalidRequest("empty prompt".into()));
        }
        let rule = self.spec.rules.iter().find(|r| r.matcher.matches(&req.prompt)).ok_or_else(|| {
            BackendError::Fixture(format!(
                "{}: no completion rule matches prompt ending {:?}",
                self.id,
                tail(&req.prompt)
            ))
        })?;
        let tokens = rule.tokens.clone().unwrap_or_else(|| Completion::from_text(rule.completion.clone()).tokens);
        Ok(truncate(tokens, &req.stop, req.max_tokens))
    }

    pub fn score(&self, req: &ScoreRequest) -> Result<Vec<Vec<TokenScore>>, BackendError> {
        if req.continuations.is_empty() {
            return Err(BackendError::InvalidRequest("no continuations to score".into()));
        }
        req.continuations
            .iter()
            .map(|cont| {
                if cont.is_empty() {
                    return Ok(Vec::new());
                }
                self.spec
                    .scoring
                    .iter()
                    .filter(|r| r.matcher.matches(&req.prompt))
                    .filter(|r| r.image_ref.is_none() || r.image_ref.as_deref() == req.image_ref.as_deref())
                    .find_map(|r| r.scores.get(cont))
                    .map(|s| s.tokens_for(cont))
                    .ok_or_else(|| {
                        BackendError::Fixture(format!(
                            "{}: no score for continuation {cont:?} after prompt ending {:?}",
                            self.id,
                            tail(&req.prompt)
                        ))
                    })
            })
            .collect()
    }
}

fn tail(prompt: &str) -> String {
    let n = prompt.chars().count();
    prompt.chars().skip(n.saturating_sub(60)).collect()
}

/// Cuts the token stream at the earliest stop sequence (excluded from the
/// output) and at `max_tokens`.
fn truncate(tokens: Vec<TokenScore>, stop: &[String], max_tokens: u32) -> Completion {
    let full: String = tokens.iter().map(|t| t.token_text.as_str()).collect();
    let stop_at = stop.iter().filter(|s| !s.is_empty()).filter_map(|s| full.find(s.as_str())).min();
    let mut kept = Vec::new();
    let mut used = 0usize;
    let limit = stop_at.unwrap_or(usize::MAX);
    let mut finish = FinishReason::Stop;
    for tok in tokens {
        if used >= limit {
            break;
        }
        if kept.len() as u32 >= max_tokens {
            finish = FinishReason::Length;
            break;
        }
        let end = used + tok.token_text.len();
        if end > limit {
            let keep = &tok.token_text[..limit - used];
            if !keep.is_empty() {
                kept.push(TokenScore {
                    byte_length: keep.len() as u32,
                    token_text: keep.to_string(),
                    logprob: tok.logprob,
                });
            }
            break;
        }
        used = end;
        kept.push(tok);
    }
    let text = kept.iter().map(|t| t.token_text.as_str()).collect();
    Completion { text, tokens: kept, finish_reason: finish }
}

impl Backend for ScriptedLm {
    fn id(&self) -> &str {
        &self.id
    }

    fn call(&self, request: &BackendRequest) -> Result<BackendResponse, BackendError> {
        match request {
            BackendRequest::Complete(r) => self.complete(r).map(BackendResponse::Complete),
            BackendRequest::Score(r) => self.score(r).map(|scores| BackendResponse::Score(ScoreResponse { scores })),
            other => Err(BackendError::Unsupported { backend: self.id.clone(), op: other.op().to_string() }),
        }
    }
}
