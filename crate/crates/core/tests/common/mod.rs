//! Fixtures shared by the integration tests.
#![allow(dead_code)]

use std::sync::{Arc, Mutex};

use vqdecomp::backends::{
    Backend, BackendError, BackendRequest, BackendResponse, BackendSuite, SceneGraph, SceneObject, SceneOracle,
    ScriptedLm, SharedBackend,
};
use vqdecomp::instance::Trace;
use vqdecomp::program::{execute_source, ApiVariant, ExecConfig, ExecutionOutcome};

pub fn obj(id: u32, category: &str, b: [f64; 4], attrs: &[&str], depth: f64) -> SceneObject {
    SceneObject {
        id,
        category: category.into(),
        bbox: b.into(),
        attributes: attrs.iter().map(|s| s.to_string()).collect(),
        depth,
    }
}

pub fn scene(image_ref: &str, objects: Vec<SceneObject>) -> SceneGraph {
    let mut s = SceneGraph::new(image_ref, 100.0, 100.0);
    s.objects = objects;
    s
}

/// Three cats (black, white, black) and a dog.
pub fn cat_scene() -> SceneGraph {
    scene(
        "img",
        vec![
            obj(1, "cat", [10.0, 10.0, 20.0, 20.0], &["black"], 4.0),
            obj(2, "cat", [30.0, 10.0, 40.0, 20.0], &["white"], 2.0),
            obj(3, "cat", [60.0, 10.0, 70.0, 20.0], &["black"], 3.0),
            obj(4, "dog", [40.0, 50.0, 80.0, 90.0], &["brown"], 9.0),
        ],
    )
}

pub fn suite_with(scenes: Vec<SceneGraph>, code_lm: ScriptedLm, instruct_lm: ScriptedLm) -> BackendSuite {
    let vision: SharedBackend = Arc::new(SceneOracle::new("scene", scenes).expect("valid scenes"));
    BackendSuite {
        code_lm: Arc::new(code_lm),
        instruct_lm: Arc::new(instruct_lm),
        vlm: vision.clone(),
        detector: vision.clone(),
        depth: vision.clone(),
        similarity: vision,
    }
}

pub fn suite(scenes: Vec<SceneGraph>) -> BackendSuite {
    suite_with(scenes, ScriptedLm::new("code_lm"), ScriptedLm::new("instruct_lm"))
}

pub fn run_in(src: &str, scene: SceneGraph, variant: ApiVariant) -> ExecutionOutcome {
    let image = scene.image_ref.clone();
    let s = suite(vec![scene]);
    let mut trace = Trace::new();
    execute_source(src, &image, variant, &s, &ExecConfig::default(), &mut trace)
}

/// Runs a function body (indented by the caller) against the cat scene.
pub fn run_body(body: &str) -> ExecutionOutcome {
    let src = format!("def execute_command(image) -> str:\n{body}");
    run_in(&src, cat_scene(), ApiVariant::TaskAgnostic)
}

pub const BLACK_CATS: &str = "def execute_command(image) -> str:
  image_patch = ImagePatch(image)
  cat_patches = image_patch.find('cat')
  black_cat_patches = [
    p for p in cat_patches if
    p.verify_property('cat', 'black')
  ]
  return len(black_cat_patches)
";

/// Passes requests through and keeps a copy of each.
pub struct Recorder {
    inner: SharedBackend,
    pub requests: Mutex<Vec<BackendRequest>>,
}

impl Recorder {
    pub fn new(inner: SharedBackend) -> Arc<Self> {
        Arc::new(Recorder { inner, requests: Mutex::new(Vec::new()) })
    }

    pub fn take(&self) -> Vec<BackendRequest> {
        std::mem::take(&mut *self.requests.lock().unwrap())
    }
}

impl Backend for Recorder {
    fn id(&self) -> &str {
        self.inner.id()
    }

    fn call(&self, request: &BackendRequest) -> Result<BackendResponse, BackendError> {
        self.requests.lock().unwrap().push(request.clone());
        self.inner.call(request)
    }
}
