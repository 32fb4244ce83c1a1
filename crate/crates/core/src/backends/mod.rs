//! Uniform protocol for every neural module.
//!
//! A [`Backend`] answers [`BackendRequest`]s. Requests and responses are the
//! JSON bodies of the HTTP wire protocol, so the same values drive the remote
//! client, the deterministic mocks and the on-disk cache:
//!
//! | endpoint          | request                                   | response |
//! |-------------------|-------------------------------------------|----------|
//! | `/v1/complete`    | `{prompt, max_tokens, stop[], beam_width?, length_penalty?, model?}` | `{text, tokens:[{t, logprob, bytes}], finish_reason}` |
//! | `/v1/score`       | `{prompt, continuations[], image_ref?, model?}` | `{scores:[[{t, logprob, bytes}]]}` |
//! | `/v1/vqa`         | `{image_ref, question, box?, beam_width?, length_penalty?}` | `{answer}` |
//! | `/v1/detect`      | `{image_ref, category}`                   | `{boxes:[[l,b,r,u]]}` |
//! | `/v1/depth`       | `{image_ref, box}`                        | `{depth}` |
//! | `/v1/similarity`  | `{image_ref, box, texts[]}`               | `{scores[]}` |
//! | `/v1/image_info`  | `{image_ref}`                             | `{width, height}` |
//!
//! Log-probabilities are natural logarithms. `bytes` is the UTF-8 length of
//! the token text.

pub mod cache;
pub mod fixture;
pub mod remote;
pub mod scene;
pub mod scripted;

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::instance::{Trace, TraceKind, TracePayload};

pub use cache::CachedBackend;
pub use fixture::MockFixture;
pub use remote::RemoteBackend;
pub use scene::{PatchQa, SceneGraph, SceneObject, SceneOracle};
pub use scripted::{PromptMatch, ScriptedLm};

/// Prompt template for the vision-language model.
pub fn vqa_prompt(question: &str) -> String {
    format!("Question: {question} Short answer:")
}

/// Inverse of [`vqa_prompt`].
pub fn strip_vqa_prompt(prompt: &str) -> Option<&str> {
    prompt.trim_end().strip_prefix("Question: ")?.strip_suffix(" Short answer:")
}

/// Axis-aligned region `(left, lower, right, upper)` in pixels, serialized
/// as a four-element array.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 4]", into = "[f64; 4]")]
pub struct BBox {
    pub left: f64,
    pub lower: f64,
    pub right: f64,
    pub upper: f64,
}

impl From<[f64; 4]> for BBox {
    fn from(a: [f64; 4]) -> Self {
        BBox { left: a[0], lower: a[1], right: a[2], upper: a[3] }
    }
}

impl From<BBox> for [f64; 4] {
    fn from(b: BBox) -> Self {
        [b.left, b.lower, b.right, b.upper]
    }
}

impl BBox {
    pub fn new(left: f64, lower: f64, right: f64, upper: f64) -> Self {
        BBox { left, lower, right, upper }
    }

    pub fn width(&self) -> f64 {
        self.right - self.left
    }

    pub fn height(&self) -> f64 {
        self.upper - self.lower
    }

    pub fn area(&self) -> f64 {
        if self.has_positive_area() {
            self.width() * self.height()
        } else {
            0.0
        }
    }

    pub fn has_positive_area(&self) -> bool {
        self.right > self.left && self.upper > self.lower
    }

    pub fn center(&self) -> (f64, f64) {
        ((self.left + self.right) / 2.0, (self.lower + self.upper) / 2.0)
    }

    pub fn intersection(&self, other: &BBox) -> BBox {
        BBox {
            left: self.left.max(other.left),
            lower: self.lower.max(other.lower),
            right: self.right.min(other.right),
            upper: self.upper.min(other.upper),
        }
    }

    pub fn contains_box(&self, other: &BBox) -> bool {
        other.left >= self.left && other.lower >= self.lower && other.right <= self.right && other.upper <= self.upper
    }

    pub fn contains_point(&self, (x, y): (f64, f64)) -> bool {
        x >= self.left && x <= self.right && y >= self.lower && y <= self.upper
    }
}

/// One scored token. `byte_length` is the UTF-8 length of `token_text`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenScore {
    #[serde(rename = "t")]
    pub token_text: String,
    pub logprob: f64,
    #[serde(rename = "bytes")]
    pub byte_length: u32,
}

impl TokenScore {
    pub fn new(token_text: impl Into<String>, logprob: f64) -> Self {
        let token_text = token_text.into();
        let byte_length = token_text.len() as u32;
        TokenScore { token_text, logprob, byte_length }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FinishReason {
    Stop,
    Length,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Completion {
    pub text: String,
    pub tokens: Vec<TokenScore>,
    pub finish_reason: FinishReason,
}

impl Completion {
    /// A completion consisting of a single zero-logprob token.
    pub fn from_text(text: impl Into<String>) -> Self {
        let text = text.into();
        let tokens = if text.is_empty() { Vec::new() } else { vec![TokenScore::new(text.clone(), 0.0)] };
        Completion { text, tokens, finish_reason: FinishReason::Stop }
    }

    /// The token texts concatenate to `text`.
    pub fn is_consistent(&self) -> bool {
        let joined: String = self.tokens.iter().map(|t| t.token_text.as_str()).collect();
        joined == self.text
    }
}

/// Decoding configuration. Beam parameters are forwarded to remote backends
/// and ignored by mocks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodingParams {
    pub max_tokens: u32,
    #[serde(default)]
    pub stop: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beam_width: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub length_penalty: Option<f64>,
}

impl Default for DecodingParams {
    fn default() -> Self {
        DecodingParams { max_tokens: 256, stop: Vec::new(), beam_width: None, length_penalty: None }
    }
}

impl DecodingParams {
    /// Beam search (width 5, length penalty -1) used for the end-to-end VLM.
    pub fn vlm_default() -> Self {
        DecodingParams { max_tokens: 32, stop: Vec::new(), beam_width: Some(5), length_penalty: Some(-1.0) }
    }

    pub fn with_stop(mut self, stop: &[&str]) -> Self {
        self.stop = stop.iter().map(|s| s.to_string()).collect();
        self
    }

    pub fn with_max_tokens(mut self, max_tokens: u32) -> Self {
        self.max_tokens = max_tokens;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompleteRequest {
    pub prompt: String,
    pub max_tokens: u32,
    #[serde(default)]
    pub stop: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beam_width: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub length_penalty: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRequest {
    pub prompt: String,
    pub continuations: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_ref: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VqaRequest {
    pub image_ref: String,
    pub question: String,
    #[serde(rename = "box", default, skip_serializing_if = "Option::is_none")]
    pub region: Option<BBox>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beam_width: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub length_penalty: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectRequest {
    pub image_ref: String,
    pub category: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DepthRequest {
    pub image_ref: String,
    #[serde(rename = "box")]
    pub region: BBox,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityRequest {
    pub image_ref: String,
    #[serde(rename = "box")]
    pub region: BBox,
    pub texts: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageInfoRequest {
    pub image_ref: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreResponse {
    pub scores: Vec<Vec<TokenScore>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VqaResponse {
    pub answer: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectResponse {
    pub boxes: Vec<BBox>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DepthResponse {
    pub depth: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityResponse {
    pub scores: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImageInfo {
    pub width: f64,
    pub height: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum BackendRequest {
    Complete(CompleteRequest),
    Score(ScoreRequest),
    Vqa(VqaRequest),
    Detect(DetectRequest),
    Depth(DepthRequest),
    Similarity(SimilarityRequest),
    ImageInfo(ImageInfoRequest),
}

impl BackendRequest {
    pub fn op(&self) -> &'static str {
        match self {
            BackendRequest::Complete(_) => "complete",
            BackendRequest::Score(_) => "score",
            BackendRequest::Vqa(_) => "vqa",
            BackendRequest::Detect(_) => "detect",
            BackendRequest::Depth(_) => "depth",
            BackendRequest::Similarity(_) => "similarity",
            BackendRequest::ImageInfo(_) => "image_info",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum BackendResponse {
    Complete(Completion),
    Score(ScoreResponse),
    Vqa(VqaResponse),
    Detect(DetectResponse),
    Depth(DepthResponse),
    Similarity(SimilarityResponse),
    ImageInfo(ImageInfo),
}

impl BackendResponse {
    pub fn op(&self) -> &'static str {
        match self {
            BackendResponse::Complete(_) => "complete",
            BackendResponse::Score(_) => "score",
            BackendResponse::Vqa(_) => "vqa",
            BackendResponse::Detect(_) => "detect",
            BackendResponse::Depth(_) => "depth",
            BackendResponse::Similarity(_) => "similarity",
            BackendResponse::ImageInfo(_) => "image_info",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BackendError {
    #[error("transport error from {backend} after {attempts} attempt(s): {message}")]
    Transport { backend: String, attempts: u32, message: String },
    #[error("fixture error: {0}")]
    Fixture(String),
    #[error("backend {backend} does not support {op}")]
    Unsupported { backend: String, op: String },
    #[error("unknown image {0:?}")]
    UnknownImage(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("protocol error: {0}")]
    Protocol(String),
}

impl BackendError {
    pub fn is_transport(&self) -> bool {
        matches!(self, BackendError::Transport { .. })
    }
}

pub trait Backend: Send + Sync {
    /// Stable identifier; part of every cache key.
    fn id(&self) -> &str;

    fn call(&self, request: &BackendRequest) -> Result<BackendResponse, BackendError>;
}

pub type SharedBackend = Arc<dyn Backend>;

/// Short hex digest of a serializable value (first 16 hex chars of SHA-256
/// over its JSON form).
pub fn digest<T: Serialize>(value: &T) -> String {
    let bytes = serde_json::to_vec(value).expect("protocol values always serialize");
    let full = hex::encode(Sha256::digest(&bytes));
    full[..16].to_string()
}

fn summarize(request: &BackendRequest) -> String {
    fn clip(s: &str) -> String {
        const MAX: usize = 120;
        if s.chars().count() <= MAX {
            s.to_string()
        } else {
            let head: String = s.chars().take(MAX).collect();
            format!("{head}...")
        }
    }
    match request {
        BackendRequest::Complete(r) => clip(r.prompt.lines().last().unwrap_or("")),
        BackendRequest::Score(r) => clip(&format!("{:?}", r.continuations)),
        BackendRequest::Vqa(r) => clip(&r.question),
        BackendRequest::Detect(r) => r.category.clone(),
        BackendRequest::Depth(r) => format!("{:?}", <[f64; 4]>::from(r.region)),
        BackendRequest::Similarity(r) => clip(&format!("{:?}", r.texts)),
        BackendRequest::ImageInfo(r) => r.image_ref.clone(),
    }
}

/// Sends a request and records a `BackendCall` trace event.
pub fn invoke(
    backend: &dyn Backend,
    request: &BackendRequest,
    trace: &mut Trace,
) -> Result<BackendResponse, BackendError> {
    let request_digest = digest(request);
    let result = backend.call(request);
    let (response_digest, outcome) = match &result {
        Ok(resp) => (Some(digest(resp)), String::new()),
        Err(e) => (None, format!(" -> error: {e}")),
    };
    trace.push_payload(
        TraceKind::BackendCall,
        TracePayload {
            source: backend.id().to_string(),
            op: request.op().to_string(),
            request_digest: Some(request_digest),
            response_digest,
            detail: format!("{}{outcome}", summarize(request)),
            timestamp_ms: crate::instance::now_ms(),
        },
    );
    let resp = result?;
    if resp.op() != request.op() {
        return Err(BackendError::Protocol(format!("{} answered {} with {}", backend.id(), request.op(), resp.op())));
    }
    Ok(resp)
}

fn mismatch(op: &str) -> BackendError {
    BackendError::Protocol(format!("unexpected response type for {op}"))
}

pub fn complete(
    lm: &dyn Backend,
    prompt: &str,
    params: &DecodingParams,
    trace: &mut Trace,
) -> Result<Completion, BackendError> {
    if prompt.is_empty() {
        return Err(BackendError::InvalidRequest("empty prompt".into()));
    }
    let req = BackendRequest::Complete(CompleteRequest {
        prompt: prompt.to_string(),
        max_tokens: params.max_tokens,
        stop: params.stop.clone(),
        beam_width: params.beam_width,
        length_penalty: params.length_penalty,
        model: None,
    });
    match invoke(lm, &req, trace)? {
        BackendResponse::Complete(c) => {
            if !c.is_consistent() {
                return Err(BackendError::Protocol("completion tokens do not concatenate to its text".into()));
            }
            Ok(c)
        }
        _ => Err(mismatch("complete")),
    }
}

/// Scores each continuation given the prompt. `image_ref` conditions the
/// scoring on an image (vision-language scoring).
pub fn score_continuations(
    lm: &dyn Backend,
    prompt: &str,
    continuations: &[String],
    image_ref: Option<&str>,
    trace: &mut Trace,
) -> Result<Vec<Vec<TokenScore>>, BackendError> {
    if continuations.is_empty() {
        return Err(BackendError::InvalidRequest("no continuations to score".into()));
    }
    let req = BackendRequest::Score(ScoreRequest {
        prompt: prompt.to_string(),
        continuations: continuations.to_vec(),
        image_ref: image_ref.map(str::to_string),
        model: None,
    });
    match invoke(lm, &req, trace)? {
        BackendResponse::Score(s) if s.scores.len() == continuations.len() => Ok(s.scores),
        BackendResponse::Score(s) => {
            Err(BackendError::Protocol(format!("expected {} score lists, got {}", continuations.len(), s.scores.len())))
        }
        _ => Err(mismatch("score")),
    }
}

/// Asks the VLM a question about the image, optionally scoped to a region.
pub fn vqa(
    vlm: &dyn Backend,
    image_ref: &str,
    question: &str,
    region: Option<BBox>,
    params: Option<&DecodingParams>,
    trace: &mut Trace,
) -> Result<String, BackendError> {
    let req = BackendRequest::Vqa(VqaRequest {
        image_ref: image_ref.to_string(),
        question: question.to_string(),
        region,
        beam_width: params.and_then(|p| p.beam_width),
        length_penalty: params.and_then(|p| p.length_penalty),
    });
    match invoke(vlm, &req, trace)? {
        BackendResponse::Vqa(v) => Ok(v.answer),
        _ => Err(mismatch("vqa")),
    }
}

pub fn detect(
    detector: &dyn Backend,
    image_ref: &str,
    category: &str,
    trace: &mut Trace,
) -> Result<Vec<BBox>, BackendError> {
    if category.trim().is_empty() {
        return Err(BackendError::InvalidRequest("empty category".into()));
    }
    let req =
        BackendRequest::Detect(DetectRequest { image_ref: image_ref.to_string(), category: category.to_string() });
    match invoke(detector, &req, trace)? {
        BackendResponse::Detect(d) => Ok(d.boxes),
        _ => Err(mismatch("detect")),
    }
}

pub fn similarity(
    sim: &dyn Backend,
    image_ref: &str,
    region: BBox,
    texts: &[String],
    trace: &mut Trace,
) -> Result<Vec<f64>, BackendError> {
    if texts.is_empty() {
        return Err(BackendError::InvalidRequest("no texts to compare".into()));
    }
    let req = BackendRequest::Similarity(SimilarityRequest {
        image_ref: image_ref.to_string(),
        region,
        texts: texts.to_vec(),
    });
    match invoke(sim, &req, trace)? {
        BackendResponse::Similarity(s) if s.scores.len() == texts.len() => Ok(s.scores),
        BackendResponse::Similarity(_) => Err(BackendError::Protocol("similarity score count mismatch".into())),
        _ => Err(mismatch("similarity")),
    }
}

pub fn depth_at(depth: &dyn Backend, image_ref: &str, region: BBox, trace: &mut Trace) -> Result<f64, BackendError> {
    if !region.has_positive_area() {
        return Err(BackendError::InvalidRequest("region has zero area".into()));
    }
    let req = BackendRequest::Depth(DepthRequest { image_ref: image_ref.to_string(), region });
    match invoke(depth, &req, trace)? {
        BackendResponse::Depth(d) => Ok(d.depth),
        _ => Err(mismatch("depth")),
    }
}

pub fn image_info(backend: &dyn Backend, image_ref: &str, trace: &mut Trace) -> Result<ImageInfo, BackendError> {
    let req = BackendRequest::ImageInfo(ImageInfoRequest { image_ref: image_ref.to_string() });
    match invoke(backend, &req, trace)? {
        BackendResponse::ImageInfo(i) => Ok(i),
        _ => Err(mismatch("image_info")),
    }
}

/// Counts calls that reach the wrapped backend.
pub struct Counting {
    inner: SharedBackend,
    counter: Arc<AtomicUsize>,
}

impl Counting {
    pub fn new(inner: SharedBackend, counter: Arc<AtomicUsize>) -> Self {
        Counting { inner, counter }
    }
}

impl Backend for Counting {
    fn id(&self) -> &str {
        self.inner.id()
    }

    fn call(&self, request: &BackendRequest) -> Result<BackendResponse, BackendError> {
        self.counter.fetch_add(1, Ordering::SeqCst);
        self.inner.call(request)
    }
}

/// Every module an engine may use. Engines only reach models through this.
#[derive(Clone)]
pub struct BackendSuite {
    pub code_lm: SharedBackend,
    pub instruct_lm: SharedBackend,
    pub vlm: SharedBackend,
    pub detector: SharedBackend,
    pub depth: SharedBackend,
    pub similarity: SharedBackend,
}

impl BackendSuite {
    /// Applies `f` to every role, wrapping backends shared between roles only
    /// once so wrappers (caches, counters) stay shared too.
    pub fn map(&self, mut f: impl FnMut(SharedBackend) -> SharedBackend) -> BackendSuite {
        let mut done: Vec<(SharedBackend, SharedBackend)> = Vec::new();
        let mut wrap = |b: &SharedBackend| -> SharedBackend {
            if let Some((_, w)) = done.iter().find(|(orig, _)| Arc::ptr_eq(orig, b)) {
                return w.clone();
            }
            let w = f(b.clone());
            done.push((b.clone(), w.clone()));
            w
        };
        BackendSuite {
            code_lm: wrap(&self.code_lm),
            instruct_lm: wrap(&self.instruct_lm),
            vlm: wrap(&self.vlm),
            detector: wrap(&self.detector),
            depth: wrap(&self.depth),
            similarity: wrap(&self.similarity),
        }
    }

    /// Wraps every role with a shared invocation counter.
    pub fn counted(&self) -> (BackendSuite, Arc<AtomicUsize>) {
        let counter = Arc::new(AtomicUsize::new(0));
        let suite = self.map(|b| Arc::new(Counting::new(b, counter.clone())) as SharedBackend);
        (suite, counter)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bbox_serializes_as_array() {
        let b = BBox::new(1.0, 2.0, 3.0, 4.0);
        assert_eq!(serde_json::to_string(&b).unwrap(), "[1.0,2.0,3.0,4.0]");
        let back: BBox = serde_json::from_str("[1,2,3,4]").unwrap();
        assert_eq!(back, b);
    }

    #[test]
    fn token_wire_names() {
        let t = TokenScore::new("héllo", -0.5);
        assert_eq!(t.byte_length, 6);
        let v = serde_json::to_value(&t).unwrap();
        assert_eq!(v, serde_json::json!({"t": "héllo", "logprob": -0.5, "bytes": 6}));
    }

    #[test]
    fn vqa_prompt_round_trip() {
        let p = vqa_prompt("What color is the sky?");
        assert_eq!(p, "Question: What color is the sky? Short answer:");
        assert_eq!(strip_vqa_prompt(&p), Some("What color is the sky?"));
        assert_eq!(strip_vqa_prompt("What color?"), None);
    }

    #[test]
    fn request_wire_shape() {
        let r = BackendRequest::Vqa(VqaRequest {
            image_ref: "img".into(),
            question: "q".into(),
            region: Some(BBox::new(0.0, 0.0, 1.0, 1.0)),
            beam_width: None,
            length_penalty: None,
        });
        let v = serde_json::to_value(&r).unwrap();
        assert_eq!(v["op"], "vqa");
        assert_eq!(v["box"], serde_json::json!([0.0, 0.0, 1.0, 1.0]));
    }
}
