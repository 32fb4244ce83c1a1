//! `ImagePatch` and the module functions exposed to generated programs.
//!
//! Every method delegates to a backend of the suite. Which methods and
//! functions are bound depends on the prompt variant; unbound ones behave
//! like absent attributes and names.

use std::rc::Rc;

use super::interp::{Interpreter, R};
use super::value::{Patch, Value};
use super::ErrorLabel;
use crate::backends::{self, vqa_prompt, BBox, DecodingParams};
use crate::scoring::argmax;

/// Question asked by `simple_query` when none is given.
pub const DEFAULT_QUERY: &str = "What is this?";

/// Every `ImagePatch` method the runtime knows about.
pub const ALL_METHODS: &[&str] =
    &["find", "exists", "verify_property", "best_text_match", "simple_query", "compute_depth", "crop"];
/// Every module-level function the runtime knows about.
pub const ALL_FUNCTIONS: &[&str] = &["distance", "llm_query", "bool_to_yesno"];

impl Interpreter<'_> {
    pub(super) fn construct_patch(&mut self, args: Vec<Value>, kwargs: Vec<(String, Value)>) -> R<Value> {
        let a = self.bind("ImagePatch", &["image", "left", "lower", "right", "upper"], 1, args, kwargs)?;
        let Some(Value::Patch(base)) = &a[0] else {
            return Err(self.type_err("ImagePatch() expects an image or ImagePatch as its first argument"));
        };
        let coords: Vec<&Value> = a[1..].iter().flatten().collect();
        match coords.len() {
            0 => Ok(Value::Patch(Rc::new((**base).clone()))),
            4 => {
                let c: Vec<f64> =
                    coords.iter().map(|v| self.expect_f64(v, "ImagePatch() coordinate")).collect::<R<_>>()?;
                self.clipped_child(base, BBox::new(c[0], c[1], c[2], c[3]))
            }
            _ => Err(self.type_err("ImagePatch() takes either no coordinates or all four")),
        }
    }

    fn clipped_child(&self, parent: &Rc<Patch>, bbox: BBox) -> R<Value> {
        if ![bbox.left, bbox.lower, bbox.right, bbox.upper].iter().all(|x| x.is_finite()) {
            return Err(self.value_err("patch coordinates must be finite"));
        }
        parent
            .child(bbox)
            .map(|p| Value::Patch(Rc::new(p)))
            .ok_or_else(|| self.value_err("crop region does not intersect the patch"))
    }

    pub(super) fn patch_method(
        &mut self,
        p: &Rc<Patch>,
        name: &str,
        args: Vec<Value>,
        kwargs: Vec<(String, Value)>,
    ) -> R<Value> {
        let suite = self.suite;
        match name {
            "find" => {
                let a = self.bind("find", &["object_name"], 1, args, kwargs)?;
                let category = self.expect_str(a[0].as_ref().expect("required"), "object_name")?;
                let found = self.find(p, &category)?;
                Ok(Value::list(found.into_iter().map(Value::Patch).collect()))
            }
            "exists" => {
                let a = self.bind("exists", &["object_name"], 1, args, kwargs)?;
                let category = self.expect_str(a[0].as_ref().expect("required"), "object_name")?;
                Ok(Value::Bool(!self.find(p, &category)?.is_empty()))
            }
            "verify_property" => {
                let a = self.bind("verify_property", &["object_name", "property"], 2, args, kwargs)?;
                self.expect_str(a[0].as_ref().expect("required"), "object_name")?;
                let property = self.expect_str(a[1].as_ref().expect("required"), "property")?;
                let scores = backends::similarity(
                    suite.similarity.as_ref(),
                    &p.image_ref,
                    p.bbox,
                    &[property.to_string()],
                    self.trace,
                )
                .map_err(|e| self.backend_err(e))?;
                Ok(Value::Bool(scores[0] > self.config.theta))
            }
            "best_text_match" => {
                let a = self.bind("best_text_match", &["option_list", "prefix"], 1, args, kwargs)?;
                let options = self.iterate(a[0].as_ref().expect("required"))?;
                let options: Vec<Rc<str>> = options.iter().map(|o| self.expect_str(o, "option")).collect::<R<_>>()?;
                if options.is_empty() {
                    return Err(self.value_err("best_text_match() needs at least one option"));
                }
                let prefix = match &a[1] {
                    None | Some(Value::None) => None,
                    Some(v) => Some(self.expect_str(v, "prefix")?),
                };
                let texts: Vec<String> = options
                    .iter()
                    .map(|o| match &prefix {
                        Some(pre) => format!("{pre} {o}"),
                        None => o.to_string(),
                    })
                    .collect();
                let scores = backends::similarity(suite.similarity.as_ref(), &p.image_ref, p.bbox, &texts, self.trace)
                    .map_err(|e| self.backend_err(e))?;
                let best = argmax(&scores).expect("non-empty");
                Ok(Value::Str(options[best].clone()))
            }
            "simple_query" => {
                let a = self.bind("simple_query", &["question"], 0, args, kwargs)?;
                let question = match &a[0] {
                    None | Some(Value::None) => Rc::from(DEFAULT_QUERY),
                    Some(v) => self.expect_str(v, "question")?,
                };
                let region = p.parent.is_some().then_some(p.bbox);
                let answer =
                    backends::vqa(suite.vlm.as_ref(), &p.image_ref, &vqa_prompt(&question), region, None, self.trace)
                        .map_err(|e| self.backend_err(e))?;
                Ok(Value::str(&answer))
            }
            "compute_depth" => {
                self.bind("compute_depth", &[], 0, args, kwargs)?;
                let d = backends::depth_at(suite.depth.as_ref(), &p.image_ref, p.bbox, self.trace)
                    .map_err(|e| self.backend_err(e))?;
                Ok(Value::Float(d))
            }
            "crop" => {
                let a = self.bind("crop", &["left", "lower", "right", "upper"], 4, args, kwargs)?;
                let c: Vec<f64> =
                    a.iter().flatten().map(|v| self.expect_f64(v, "crop() coordinate")).collect::<R<_>>()?;
                self.clipped_child(p, BBox::new(c[0], c[1], c[2], c[3]))
            }
            _ => unreachable!("method table and dispatch agree"),
        }
    }

    /// Detections whose centre lies inside the patch, clipped to it.
    fn find(&mut self, p: &Rc<Patch>, category: &str) -> R<Vec<Rc<Patch>>> {
        let boxes = backends::detect(self.suite.detector.as_ref(), &p.image_ref, category, self.trace)
            .map_err(|e| self.backend_err(e))?;
        self.alloc(boxes.len())?;
        Ok(boxes
            .into_iter()
            .filter(|b| p.bbox.contains_point(b.center()))
            .filter_map(|b| p.child(b))
            .map(Rc::new)
            .collect())
    }

    pub(super) fn call_api_function(&mut self, name: &str, args: Vec<Value>, kwargs: Vec<(String, Value)>) -> R<Value> {
        match name {
            "distance" => {
                let a = self.bind("distance", &["patch_a", "patch_b"], 2, args, kwargs)?;
                let (x, y) = (a[0].as_ref().expect("required"), a[1].as_ref().expect("required"));
                match (x, y) {
                    (Value::Patch(p), Value::Patch(q)) => {
                        let (px, py) = p.bbox.center();
                        let (qx, qy) = q.bbox.center();
                        Ok(Value::Float((px - qx).hypot(py - qy)))
                    }
                    (x, y) if x.is_number() && y.is_number() => {
                        Ok(Value::Float((x.as_f64().expect("number") - y.as_f64().expect("number")).abs()))
                    }
                    (x, y) => Err(self.type_err(format!(
                        "distance() expects two patches or two numbers, got '{}' and '{}'",
                        x.type_name(),
                        y.type_name()
                    ))),
                }
            }
            "llm_query" => {
                let a = self.bind("llm_query", &["question", "long_answer"], 1, args, kwargs)?;
                let question = self.expect_str(a[0].as_ref().expect("required"), "question")?;
                let c = backends::complete(
                    self.suite.instruct_lm.as_ref(),
                    &question,
                    &DecodingParams::default(),
                    self.trace,
                )
                .map_err(|e| self.backend_err(e))?;
                Ok(Value::str(c.text.trim()))
            }
            "bool_to_yesno" => {
                let a = self.bind("bool_to_yesno", &["bool_answer"], 1, args, kwargs)?;
                Ok(Value::str(if a[0].as_ref().expect("required").truthy() { "yes" } else { "no" }))
            }
            other => Err(self.err(ErrorLabel::NameError, format!("name '{other}' is not defined"))),
        }
    }
}
