//! Run configuration.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::backends::DecodingParams;
use crate::instance::{Method, Setting};
use crate::program::{ApiVariant, ExecConfig};
use crate::successive::DEFAULT_MAX_STEPS;

/// Where models come from: a mock world file or a gateway URL.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum BackendSpec {
    Mock(PathBuf),
    Remote(String),
}

impl FromStr for BackendSpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.split_once(':') {
            Some(("mock", path)) if !path.is_empty() => Ok(BackendSpec::Mock(PathBuf::from(path))),
            Some(("remote", url)) if !url.is_empty() => Ok(BackendSpec::Remote(url.to_string())),
            _ => Err(format!("invalid backends {s:?} (expected mock:PATH or remote:URL)")),
        }
    }
}

impl TryFrom<String> for BackendSpec {
    type Error = String;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<BackendSpec> for String {
    fn from(b: BackendSpec) -> String {
        b.to_string()
    }
}

impl fmt::Display for BackendSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BackendSpec::Mock(p) => write!(f, "mock:{}", p.display()),
            BackendSpec::Remote(u) => write!(f, "remote:{u}"),
        }
    }
}

/// Everything that determines a run. `cache` and `jobs` affect how the run
/// executes but never its results.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub method: Method,
    /// Prompt variant of the modular method.
    #[serde(default = "default_variant")]
    pub variant: ApiVariant,
    pub setting: Setting,
    pub dataset: PathBuf,
    pub backends: BackendSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cache: Option<PathBuf>,
    #[serde(default)]
    pub seed: u64,
    /// Evaluate a seeded sample of this many instances.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub limit: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub jobs: Option<usize>,
    /// Decoding for the end-to-end VLM call.
    #[serde(default = "DecodingParams::vlm_default")]
    pub decoding: DecodingParams,
    #[serde(default = "default_max_steps")]
    pub max_steps: usize,
    /// JSON list of `{question, program}` demonstrations for few-shot
    /// modular prompts.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub demos: Option<PathBuf>,
    /// Instruction and demonstrations for the successive method, replacing
    /// the shipped asset.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub successive_prompt: Option<PathBuf>,
    #[serde(default)]
    pub exec: ExecConfig,
    /// Also score direct answers with the language-model judge.
    #[serde(default)]
    pub judge: bool,
    /// Normalize answers before string matching.
    #[serde(default = "default_true")]
    pub normalize: bool,
}

fn default_variant() -> ApiVariant {
    ApiVariant::TaskAgnostic
}

fn default_max_steps() -> usize {
    DEFAULT_MAX_STEPS
}

fn default_true() -> bool {
    true
}

impl RunConfig {
    pub fn new(method: Method, setting: Setting, dataset: impl Into<PathBuf>, backends: BackendSpec) -> Self {
        RunConfig {
            method,
            variant: default_variant(),
            setting,
            dataset: dataset.into(),
            backends,
            cache: None,
            seed: 0,
            limit: None,
            jobs: None,
            decoding: DecodingParams::vlm_default(),
            max_steps: DEFAULT_MAX_STEPS,
            demos: None,
            successive_prompt: None,
            exec: ExecConfig::default(),
            judge: false,
            normalize: true,
        }
    }

    /// The variant label recorded on predictions.
    pub fn variant_label(&self) -> String {
        match self.method {
            Method::Modular => self.variant.to_string(),
            Method::EndToEnd => crate::e2e::VARIANT.to_string(),
            Method::Successive => "successive".to_string(),
        }
    }
}
