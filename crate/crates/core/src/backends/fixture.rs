//! Mock world files: scene graphs plus scripted language models.
//!
//! ```json
//! {
//!   "scenes": [ { "image_ref": "img1", "width": 640, "height": 480,
//!                 "objects": [ { "id": 1, "category": "cat", "box": [0,0,10,10],
//!                                "attributes": ["black"], "depth": 2.5 } ],
//!                 "scene_qa": { "What is shown?": "a cat" },
//!                 "patch_qa": [ { "object": 1, "question": "What color?", "answer": "black" } ] } ],
//!   "code_lm":     { "rules": [ { "match": { "suffix": "..." }, "completion": "..." } ] },
//!   "instruct_lm": { "rules": [], "scoring": [ { "match": "any", "scores": { "yes": -0.1 } } ] },
//!   "vlm_scorer":  { "scoring": [ { "match": "any", "image_ref": "img1", "scores": { "push": -1.2 } } ] },
//!   "vqa_fallback": "unknown"
//! }
//! ```

use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::scene::{SceneGraph, SceneOracle, DEFAULT_VQA_FALLBACK};
use super::scripted::{ScriptedLm, ScriptedLmSpec};
use super::{BackendError, BackendSuite, SharedBackend};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MockFixture {
    #[serde(default)]
    pub scenes: Vec<SceneGraph>,
    #[serde(default)]
    pub code_lm: ScriptedLmSpec,
    #[serde(default)]
    pub instruct_lm: ScriptedLmSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vlm_scorer: Option<ScriptedLmSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vqa_fallback: Option<String>,
}

impl MockFixture {
    pub fn load(path: &Path) -> Result<Self, BackendError> {
        let raw = std::fs::read_to_string(path)
            .map_err(|e| BackendError::Fixture(format!("cannot read {}: {e}", path.display())))?;
        serde_json::from_str(&raw).map_err(|e| BackendError::Fixture(format!("{}: {e}", path.display())))
    }

    /// Builds the mock suite. The four vision roles share one scene oracle.
    pub fn into_suite(self) -> Result<BackendSuite, BackendError> {
        let mut oracle = SceneOracle::new("scene", self.scenes)?
            .with_fallback(self.vqa_fallback.unwrap_or_else(|| DEFAULT_VQA_FALLBACK.to_string()));
        if let Some(spec) = self.vlm_scorer {
            oracle = oracle.with_scorer(ScriptedLm::from_spec("vlm_scorer", spec)?);
        }
        let vision: SharedBackend = Arc::new(oracle);
        Ok(BackendSuite {
            code_lm: Arc::new(ScriptedLm::from_spec("code_lm", self.code_lm)?),
            instruct_lm: Arc::new(ScriptedLm::from_spec("instruct_lm", self.instruct_lm)?),
            vlm: vision.clone(),
            detector: vision.clone(),
            depth: vision.clone(),
            similarity: vision,
        })
    }
}
