//! HTTP client for a model gateway speaking the wire protocol.

use std::sync::Arc;
use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::Serialize;

use super::{
    Backend, BackendError, BackendRequest, BackendResponse, BackendSuite, Completion, DepthResponse, DetectResponse,
    ImageInfo, ScoreResponse, SharedBackend, SimilarityResponse, VqaResponse,
};

/// Environment variable holding the gateway bearer token.
pub const TOKEN_ENV: &str = "VQDECOMP_GATEWAY_TOKEN";

pub struct RemoteBackend {
    id: String,
    base_url: String,
    model: Option<String>,
    token: Option<String>,
    attempts: u32,
    agent: ureq::Agent,
}

enum Failure {
    Retryable(String),
    Fatal(BackendError),
}

impl RemoteBackend {
    pub fn new(base_url: impl Into<String>) -> Self {
        let base_url = base_url.into().trim_end_matches('/').to_string();
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(120)))
            .http_status_as_error(false)
            .build()
            .new_agent();
        RemoteBackend { id: format!("remote:{base_url}"), base_url, model: None, token: None, attempts: 3, agent }
    }

    /// Routes completion and scoring requests to a named model on the gateway.
    pub fn with_model(mut self, model: impl Into<String>) -> Self {
        let model = model.into();
        self.id = format!("remote:{}#{model}", self.base_url);
        self.model = Some(model);
        self
    }

    pub fn with_token(mut self, token: Option<String>) -> Self {
        self.token = token;
        self
    }

    pub fn with_attempts(mut self, attempts: u32) -> Self {
        self.attempts = attempts.max(1);
        self
    }

    fn post<B: Serialize, R: DeserializeOwned>(&self, endpoint: &str, body: &B) -> Result<R, BackendError> {
        let url = format!("{}/v1/{endpoint}", self.base_url);
        let mut last = String::new();
        for attempt in 1..=self.attempts {
            match self.post_once(&url, body) {
                Ok(r) => return Ok(r),
                Err(Failure::Fatal(e)) => return Err(e),
                Err(Failure::Retryable(msg)) => {
                    tracing::debug!(%url, attempt, %msg, "gateway request failed");
                    last = msg;
                    if attempt < self.attempts {
                        std::thread::sleep(Duration::from_millis(50 * u64::from(attempt)));
                    }
                }
            }
        }
        Err(BackendError::Transport { backend: self.id.clone(), attempts: self.attempts, message: last })
    }

    fn post_once<B: Serialize, R: DeserializeOwned>(&self, url: &str, body: &B) -> Result<R, Failure> {
        let mut req = self.agent.post(url);
        if let Some(token) = &self.token {
            req = req.header("Authorization", format!("Bearer {token}"));
        }
        let mut resp = req.send_json(body).map_err(|e| Failure::Retryable(e.to_string()))?;
        let status = resp.status().as_u16();
        if status >= 500 {
            let text = resp.body_mut().read_to_string().unwrap_or_default();
            return Err(Failure::Retryable(format!("HTTP {status}: {text}")));
        }
        if status >= 400 {
            let text = resp.body_mut().read_to_string().unwrap_or_default();
            return Err(Failure::Fatal(BackendError::InvalidRequest(format!("HTTP {status}: {text}"))));
        }
        resp.body_mut()
            .read_json::<R>()
            .map_err(|e| Failure::Fatal(BackendError::Protocol(format!("malformed response from {url}: {e}"))))
    }
}

impl Backend for RemoteBackend {
    fn id(&self) -> &str {
        &self.id
    }

    fn call(&self, request: &BackendRequest) -> Result<BackendResponse, BackendError> {
        match request {
            BackendRequest::Complete(r) => {
                let mut r = r.clone();
                r.model = self.model.clone();
                self.post::<_, Completion>("complete", &r).map(BackendResponse::Complete)
            }
            BackendRequest::Score(r) => {
                let mut r = r.clone();
                r.model = self.model.clone();
                self.post::<_, ScoreResponse>("score", &r).map(BackendResponse::Score)
            }
            BackendRequest::Vqa(r) => self.post::<_, VqaResponse>("vqa", r).map(BackendResponse::Vqa),
            BackendRequest::Detect(r) => self.post::<_, DetectResponse>("detect", r).map(BackendResponse::Detect),
            BackendRequest::Depth(r) => self.post::<_, DepthResponse>("depth", r).map(BackendResponse::Depth),
            BackendRequest::Similarity(r) => {
                self.post::<_, SimilarityResponse>("similarity", r).map(BackendResponse::Similarity)
            }
            BackendRequest::ImageInfo(r) => self.post::<_, ImageInfo>("image_info", r).map(BackendResponse::ImageInfo),
        }
    }
}

impl BackendSuite {
    /// All roles served by one gateway; the two language roles are routed
    /// by model name (`code`, `instruct`).
    pub fn remote(base_url: &str, token: Option<String>) -> BackendSuite {
        let vision: SharedBackend = Arc::new(RemoteBackend::new(base_url).with_token(token.clone()));
        BackendSuite {
            code_lm: Arc::new(RemoteBackend::new(base_url).with_model("code").with_token(token.clone())),
            instruct_lm: Arc::new(RemoteBackend::new(base_url).with_model("instruct").with_token(token)),
            vlm: vision.clone(),
            detector: vision.clone(),
            depth: vision.clone(),
            similarity: vision,
        }
    }
}
