//! Scene-graph oracle: a deterministic mock world answering every vision call.
//!
//! Region-scoped calls resolve the *dominant object* of a region: the object
//! covering the largest fraction of the region (equivalently, the largest
//! intersection area), ties going to the smaller object id. Category and
//! attribute matching is case-insensitive exact string equality.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};

use serde::{Deserialize, Serialize};

use super::scripted::ScriptedLm;
use super::{
    strip_vqa_prompt, BBox, Backend, BackendError, BackendRequest, BackendResponse, DepthResponse, DetectResponse,
    ImageInfo, ScoreResponse, SimilarityResponse, VqaResponse,
};

/// Answer returned when no QA table entry matches.
pub const DEFAULT_VQA_FALLBACK: &str = "unknown";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneObject {
    pub id: u32,
    pub category: String,
    #[serde(rename = "box")]
    pub bbox: BBox,
    #[serde(default)]
    pub attributes: BTreeSet<String>,
    #[serde(default)]
    pub depth: f64,
}

impl SceneObject {
    fn has_label(&self, text: &str) -> bool {
        let text = text.trim().to_lowercase();
        self.category.to_lowercase() == text || self.attributes.iter().any(|a| a.to_lowercase() == text)
    }
}

/// A region-scoped QA entry keyed by object id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatchQa {
    pub object: u32,
    pub question: String,
    pub answer: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneGraph {
    pub image_ref: String,
    pub width: f64,
    pub height: f64,
    #[serde(default)]
    pub objects: Vec<SceneObject>,
    #[serde(default)]
    pub scene_qa: BTreeMap<String, String>,
    #[serde(default)]
    pub patch_qa: Vec<PatchQa>,
    #[serde(default)]
    pub caption: String,
}

impl SceneGraph {
    pub fn new(image_ref: impl Into<String>, width: f64, height: f64) -> Self {
        SceneGraph {
            image_ref: image_ref.into(),
            width,
            height,
            objects: Vec::new(),
            scene_qa: BTreeMap::new(),
            patch_qa: Vec::new(),
            caption: String::new(),
        }
    }

    pub fn extent(&self) -> BBox {
        BBox::new(0.0, 0.0, self.width, self.height)
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        let err = |m: String| BackendError::Fixture(format!("scene {:?}: {m}", self.image_ref));
        if !(self.width > 0.0 && self.height > 0.0) {
            return Err(err("image extent must be positive".into()));
        }
        let mut ids = HashSet::new();
        for o in &self.objects {
            if !ids.insert(o.id) {
                return Err(err(format!("duplicate object id {}", o.id)));
            }
            if !o.bbox.has_positive_area() {
                return Err(err(format!("object {} has a degenerate box", o.id)));
            }
            if !self.extent().contains_box(&o.bbox) {
                return Err(err(format!("object {} lies outside the image", o.id)));
            }
        }
        for p in &self.patch_qa {
            if !ids.contains(&p.object) {
                return Err(err(format!("patch_qa refers to unknown object {}", p.object)));
            }
        }
        Ok(())
    }

    /// Object with the largest overlap with `region`; ties to the smaller id.
    pub fn dominant_object(&self, region: &BBox) -> Option<&SceneObject> {
        let mut best: Option<(&SceneObject, f64)> = None;
        for o in &self.objects {
            let overlap = o.bbox.intersection(region).area();
            if overlap <= 0.0 {
                continue;
            }
            best = match best {
                None => Some((o, overlap)),
                Some((b, bo)) if overlap > bo || (overlap == bo && o.id < b.id) => Some((o, overlap)),
                keep => keep,
            };
        }
        best.map(|(o, _)| o)
    }

    fn check_region(&self, region: &BBox) -> Result<(), BackendError> {
        if !region.has_positive_area() {
            return Err(BackendError::InvalidRequest("region has zero area".into()));
        }
        if !self.extent().contains_box(region) {
            return Err(BackendError::InvalidRequest(format!(
                "region {:?} lies outside the image",
                <[f64; 4]>::from(*region)
            )));
        }
        Ok(())
    }

    /// QA lookup: patch table for region-scoped questions, then the scene
    /// table. Keys match either the raw question or the templated prompt.
    pub fn answer(&self, question: &str, region: Option<&BBox>) -> Option<&str> {
        let raw = strip_vqa_prompt(question);
        let keys = [Some(question), raw];
        if let Some(region) = region {
            if let Some(obj) = self.dominant_object(region) {
                for key in keys.iter().flatten() {
                    if let Some(p) = self.patch_qa.iter().find(|p| p.object == obj.id && p.question == *key) {
                        return Some(&p.answer);
                    }
                }
            }
        }
        keys.iter().flatten().find_map(|k| self.scene_qa.get(*k)).map(String::as_str)
    }

    pub fn detect(&self, category: &str) -> Vec<BBox> {
        let wanted = category.trim().to_lowercase();
        let mut hits: Vec<&SceneObject> = self.objects.iter().filter(|o| o.category.to_lowercase() == wanted).collect();
        hits.sort_by(|a, b| {
            a.bbox.left.total_cmp(&b.bbox.left).then(a.bbox.lower.total_cmp(&b.bbox.lower)).then(a.id.cmp(&b.id))
        });
        hits.into_iter().map(|o| o.bbox).collect()
    }
}

/// Serves vqa, detect, depth, similarity and image_info from scene graphs,
/// plus image-conditioned scoring through an optional scripted scorer.
#[derive(Debug, Clone)]
pub struct SceneOracle {
    id: String,
    scenes: HashMap<String, SceneGraph>,
    fallback: String,
    scorer: Option<ScriptedLm>,
}

impl SceneOracle {
    pub fn new(id: impl Into<String>, scenes: impl IntoIterator<Item = SceneGraph>) -> Result<Self, BackendError> {
        let mut map = HashMap::new();
        for s in scenes {
            s.validate()?;
            if map.insert(s.image_ref.clone(), s).is_some() {
                return Err(BackendError::Fixture("duplicate scene image_ref".into()));
            }
        }
        Ok(SceneOracle { id: id.into(), scenes: map, fallback: DEFAULT_VQA_FALLBACK.to_string(), scorer: None })
    }

    pub fn with_fallback(mut self, fallback: impl Into<String>) -> Self {
        self.fallback = fallback.into();
        self
    }

    pub fn with_scorer(mut self, scorer: ScriptedLm) -> Self {
        self.scorer = Some(scorer);
        self
    }

    pub fn scene(&self, image_ref: &str) -> Result<&SceneGraph, BackendError> {
        self.scenes.get(image_ref).ok_or_else(|| BackendError::UnknownImage(image_ref.to_string()))
    }

    fn unsupported(&self, op: &str) -> BackendError {
        BackendError::Unsupported { backend: self.id.clone(), op: op.to_string() }
    }
}

impl Backend for SceneOracle {
    fn id(&self) -> &str {
        &self.id
    }

    fn call(&self, request: &BackendRequest) -> Result<BackendResponse, BackendError> {
        match request {
            BackendRequest::Vqa(r) => {
                let scene = self.scene(&r.image_ref)?;
                if let Some(region) = &r.region {
                    scene.check_region(region)?;
                }
                let answer = scene.answer(&r.question, r.region.as_ref()).unwrap_or(&self.fallback);
                Ok(BackendResponse::Vqa(VqaResponse { answer: answer.to_string() }))
            }
            BackendRequest::Detect(r) => {
                if r.category.trim().is_empty() {
                    return Err(BackendError::InvalidRequest("empty category".into()));
                }
                let scene = self.scene(&r.image_ref)?;
                Ok(BackendResponse::Detect(DetectResponse { boxes: scene.detect(&r.category) }))
            }
            BackendRequest::Depth(r) => {
                let scene = self.scene(&r.image_ref)?;
                scene.check_region(&r.region)?;
                let obj = scene
                    .dominant_object(&r.region)
                    .ok_or_else(|| BackendError::InvalidRequest("no object in region".into()))?;
                Ok(BackendResponse::Depth(DepthResponse { depth: obj.depth }))
            }
            BackendRequest::Similarity(r) => {
                if r.texts.is_empty() {
                    return Err(BackendError::InvalidRequest("no texts to compare".into()));
                }
                let scene = self.scene(&r.image_ref)?;
                scene.check_region(&r.region)?;
                let obj = scene.dominant_object(&r.region);
                let scores =
                    r.texts.iter().map(|t| if obj.is_some_and(|o| o.has_label(t)) { 1.0 } else { 0.0 }).collect();
                Ok(BackendResponse::Similarity(SimilarityResponse { scores }))
            }
            BackendRequest::ImageInfo(r) => {
                let scene = self.scene(&r.image_ref)?;
                Ok(BackendResponse::ImageInfo(ImageInfo { width: scene.width, height: scene.height }))
            }
            BackendRequest::Score(r) => {
                let image = r.image_ref.as_deref().ok_or_else(|| self.unsupported("score without image"))?;
                self.scene(image)?;
                let scorer = self.scorer.as_ref().ok_or_else(|| self.unsupported("score"))?;
                scorer.score(r).map(|scores| BackendResponse::Score(ScoreResponse { scores }))
            }
            BackendRequest::Complete(_) => Err(self.unsupported("complete")),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::{complete, depth_at, detect, similarity, vqa, DecodingParams};
    use crate::instance::Trace;

    fn obj(id: u32, category: &str, b: [f64; 4], attrs: &[&str], depth: f64) -> SceneObject {
        SceneObject {
            id,
            category: category.into(),
            bbox: b.into(),
            attributes: attrs.iter().map(|s| s.to_string()).collect(),
            depth,
        }
    }

    fn cats() -> SceneOracle {
        let mut s = SceneGraph::new("img", 100.0, 100.0);
        s.objects = vec![
            obj(1, "cat", [10.0, 10.0, 20.0, 20.0], &["black"], 4.2),
            obj(2, "Cat", [5.0, 50.0, 15.0, 60.0], &["white"], 1.0),
            obj(3, "cat", [60.0, 10.0, 80.0, 30.0], &["black"], 2.0),
            obj(4, "dog", [30.0, 30.0, 70.0, 70.0], &[], 9.0),
        ];
        s.scene_qa.insert("What's in the image?".into(), "a person is preparing a salad on the counter".into());
        s.scene_qa.insert("What color is it?".into(), "scene answer".into());
        s.patch_qa.push(PatchQa { object: 4, question: "What color is it?".into(), answer: "brown".into() });
        SceneOracle::new("scene", [s]).unwrap()
    }

    #[test]
    fn vqa_tables_and_fallback() {
        let o = cats();
        let mut t = Trace::new();
        assert_eq!(
            vqa(&o, "img", "What's in the image?", None, None, &mut t).unwrap(),
            "a person is preparing a salad on the counter"
        );
        assert_eq!(vqa(&o, "img", "Is it raining?", None, None, &mut t).unwrap(), "unknown");
        let templated = crate::backends::vqa_prompt("What's in the image?");
        assert_eq!(
            vqa(&o, "img", &templated, None, None, &mut t).unwrap(),
            "a person is preparing a salad on the counter"
        );
        assert!(matches!(vqa(&o, "nope", "q", None, None, &mut t), Err(BackendError::UnknownImage(_))));
    }

    #[test]
    fn patch_qa_wins_over_scene_qa() {
        let o = cats();
        let mut t = Trace::new();
        let region = BBox::new(30.0, 30.0, 70.0, 70.0);
        assert_eq!(vqa(&o, "img", "What color is it?", Some(region), None, &mut t).unwrap(), "brown");
        assert_eq!(vqa(&o, "img", "What color is it?", None, None, &mut t).unwrap(), "scene answer");
    }

    #[test]
    fn detect_is_case_insensitive_and_ordered() {
        let o = cats();
        let mut t = Trace::new();
        let boxes = detect(&o, "img", "CAT", &mut t).unwrap();
        assert_eq!(boxes.len(), 3);
        assert_eq!(boxes[0].left, 5.0);
        assert_eq!(boxes[1].left, 10.0);
        assert!(detect(&o, "img", "unicorn", &mut t).unwrap().is_empty());
    }

    #[test]
    fn similarity_attribute_and_category() {
        let o = cats();
        let mut t = Trace::new();
        let b = BBox::new(10.0, 10.0, 20.0, 20.0);
        assert_eq!(similarity(&o, "img", b, &["black".into()], &mut t).unwrap(), vec![1.0]);
        assert_eq!(similarity(&o, "img", b, &["purple".into()], &mut t).unwrap(), vec![0.0]);
        assert_eq!(similarity(&o, "img", b, &["black".into(), "cat".into()], &mut t).unwrap(), vec![1.0, 1.0]);
        assert!(similarity(&o, "img", b, &[], &mut t).is_err());
    }

    #[test]
    fn depth_of_dominant_object() {
        let o = cats();
        let mut t = Trace::new();
        assert_eq!(depth_at(&o, "img", BBox::new(10.0, 10.0, 20.0, 20.0), &mut t).unwrap(), 4.2);
        // overlap with cat 3 is [60,10]-[65,30] = 100, with the dog
        // [55,30]-[65,50] = 200
        let r = BBox::new(55.0, 10.0, 65.0, 50.0);
        assert_eq!(depth_at(&o, "img", r, &mut t).unwrap(), 9.0);
        assert!(depth_at(&o, "img", BBox::new(1.0, 1.0, 1.0, 5.0), &mut t).is_err());
    }

    #[test]
    fn dominant_tie_goes_to_smaller_id() {
        let mut s = SceneGraph::new("img", 10.0, 10.0);
        s.objects = vec![obj(7, "a", [0.0, 0.0, 5.0, 10.0], &[], 1.0), obj(3, "b", [5.0, 0.0, 10.0, 10.0], &[], 2.0)];
        assert_eq!(s.dominant_object(&BBox::new(0.0, 0.0, 10.0, 10.0)).unwrap().id, 3);
    }

    #[test]
    fn completion_is_wrong_backend_kind() {
        let o = cats();
        let mut t = Trace::new();
        let r = complete(&o, "Question: What? Short answer: ", &DecodingParams::default(), &mut t);
        assert!(matches!(r, Err(BackendError::Unsupported { .. })));
    }

    #[test]
    fn invalid_scenes_rejected() {
        let mut s = SceneGraph::new("img", 10.0, 10.0);
        s.objects = vec![obj(1, "a", [0.0, 0.0, 20.0, 5.0], &[], 1.0)];
        assert!(SceneOracle::new("x", [s.clone()]).is_err());
        s.objects = vec![obj(1, "a", [0.0, 0.0, 2.0, 5.0], &[], 1.0), obj(1, "b", [0.0, 0.0, 2.0, 5.0], &[], 1.0)];
        assert!(SceneOracle::new("x", [s]).is_err());
    }
}
