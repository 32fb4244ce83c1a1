//! The end-to-end strategy: one vision-language model call per question.
//!
//! Direct answers come from a single templated VQA request. Multiple choice
//! scores every choice as a continuation of the same template, conditioned
//! on the image, and keeps the most likely one.

use crate::backends::{vqa, vqa_prompt, BackendError, BackendSuite, DecodingParams};
use crate::instance::{BenchmarkInstance, Method, Prediction, Setting, Trace};
use crate::scoring::select_choice;

pub const VARIANT: &str = "e2e";

fn prediction(instance: &BenchmarkInstance, answer_text: String, trace: Trace) -> Prediction {
    Prediction {
        instance_id: instance.id.clone(),
        answer_text,
        method: Method::EndToEnd,
        variant: VARIANT.into(),
        trace,
        outcome_class: None,
    }
}

fn check_question(instance: &BenchmarkInstance) -> Result<(), BackendError> {
    if instance.question.trim().is_empty() {
        return Err(BackendError::InvalidRequest(format!("instance {}: empty question", instance.id)));
    }
    Ok(())
}

/// One VQA call with the templated question; the raw answer is the
/// prediction.
pub fn answer_direct(
    instance: &BenchmarkInstance,
    suite: &BackendSuite,
    params: &DecodingParams,
) -> Result<Prediction, BackendError> {
    check_question(instance)?;
    let mut trace = Trace::new();
    let answer =
        vqa(suite.vlm.as_ref(), &instance.image_ref, &vqa_prompt(&instance.question), None, Some(params), &mut trace)?;
    Ok(prediction(instance, answer, trace))
}

/// One image-conditioned scoring call over all choices.
pub fn answer_multiple_choice(instance: &BenchmarkInstance, suite: &BackendSuite) -> Result<Prediction, BackendError> {
    check_question(instance)?;
    let choices = instance
        .choices
        .as_deref()
        .ok_or_else(|| BackendError::InvalidRequest(format!("instance {}: no choices", instance.id)))?;
    let mut trace = Trace::new();
    let selection = select_choice(
        suite.vlm.as_ref(),
        &vqa_prompt(&instance.question),
        choices,
        Some(&instance.image_ref),
        &mut trace,
    )
    .map_err(|e| e.into_backend())?;
    Ok(prediction(instance, selection.choice, trace))
}

pub fn run_e2e(
    instance: &BenchmarkInstance,
    setting: Setting,
    suite: &BackendSuite,
    params: &DecodingParams,
) -> Result<Prediction, BackendError> {
    match setting {
        Setting::DirectAnswer => answer_direct(instance, suite, params),
        Setting::MultipleChoice => answer_multiple_choice(instance, suite),
    }
}
