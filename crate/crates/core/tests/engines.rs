mod common;

use std::collections::BTreeMap;
use std::sync::Arc;

use common::*;
use proptest::prelude::*;
use vqdecomp::backends::{
    vqa_prompt, BackendError, BackendRequest, BackendSuite, DecodingParams, PromptMatch, SceneGraph, ScriptedLm,
    SharedBackend,
};
use vqdecomp::e2e::{answer_direct, run_e2e};
use vqdecomp::instance::{BenchmarkInstance, Method, Setting, SummaryClass, TraceKind};
use vqdecomp::program::{ApiVariant, Demo, ErrorLabel, ExecConfig, ExecStatus, ModularEngine};
use vqdecomp::successive::{SuccessiveEngine, SuccessivePrompt, Termination, ANSWER, FOLLOW_UP, FOLLOW_UP_ANSWER};

fn instance(question: &str, answers: &[&str], choices: Option<&[&str]>) -> BenchmarkInstance {
    BenchmarkInstance {
        id: "i1".into(),
        image_ref: "img".into(),
        question: question.into(),
        answers: answers.iter().map(|s| s.to_string()).collect(),
        choices: choices.map(|c| c.iter().map(|s| s.to_string()).collect()),
        question_type: None,
        split: "val".into(),
    }
}

fn qa_scene(pairs: &[(&str, &str)]) -> SceneGraph {
    let mut s = cat_scene();
    s.scene_qa = pairs.iter().map(|(q, a)| (q.to_string(), a.to_string())).collect::<BTreeMap<_, _>>();
    s
}

fn prefix_scores(follow: f64, answer: f64) -> [(&'static str, f64); 2] {
    [(FOLLOW_UP, follow), (ANSWER, answer)]
}

/// Asks "How many cats?" then answers.
fn two_step_lm() -> ScriptedLm {
    ScriptedLm::new("instruct_lm")
        .with_scores(PromptMatch::Suffix("Follow-up answer: 3\n".into()), prefix_scores(-3.0, -0.1))
        .with_scores(PromptMatch::Any, prefix_scores(-0.1, -3.0))
        .with_completion(PromptMatch::Suffix(ANSWER.into()), " three")
        .with_completion(PromptMatch::Any, " How many cats?\nFollow-up answer: 99")
}

fn recording_lm(lm: ScriptedLm, scene: SceneGraph) -> (BackendSuite, Arc<Recorder>, Arc<Recorder>) {
    let mut s = suite_with(vec![scene], ScriptedLm::new("code_lm"), lm);
    let lm = Recorder::new(s.instruct_lm.clone());
    let vlm = Recorder::new(s.vlm.clone());
    s.instruct_lm = lm.clone();
    s.vlm = vlm.clone();
    (s, lm, vlm)
}

#[test]
fn follow_up_answers_come_from_the_vision_model() {
    let (s, _, vlm) = recording_lm(two_step_lm(), qa_scene(&[("How many cats?", "3")]));
    let (pred, d) = SuccessiveEngine::default()
        .run(&instance("Are there three cats?", &["yes"], None), Setting::DirectAnswer, &s)
        .unwrap();
    // the completion tried to answer its own follow-up; only its first line counts
    assert_eq!(d.steps.len(), 1);
    assert_eq!(d.steps[0].followup_question, "How many cats?");
    assert_eq!(d.steps[0].followup_answer, "3");
    assert_eq!(pred.answer_text, "three");
    let asked: Vec<String> = vlm
        .take()
        .into_iter()
        .filter_map(|r| match r {
            BackendRequest::Vqa(v) => Some(v.question),
            _ => None,
        })
        .collect();
    assert_eq!(asked, [vqa_prompt("How many cats?")]);
    let vqa_calls: Vec<_> = pred.trace.calls("vqa").collect();
    assert_eq!(vqa_calls.len(), 1);
    assert_eq!(vqa_calls[0].payload.source, "scene");
}

#[test]
fn each_prompt_extends_the_previous_one() {
    let lm = ScriptedLm::new("instruct_lm")
        .with_scores(PromptMatch::Any, prefix_scores(-0.1, -3.0))
        .with_completion(PromptMatch::Suffix(ANSWER.into()), " done")
        .with_completion(PromptMatch::Any, " What is left?");
    let (s, rec, _) = recording_lm(lm, qa_scene(&[("What is left?", "a cat")]));
    let engine = SuccessiveEngine::new(SuccessivePrompt::builtin().clone(), 4).unwrap();
    let (_, d) = engine.run(&instance("What is here?", &["cats"], None), Setting::DirectAnswer, &s).unwrap();
    assert_eq!(d.terminated_by, Some(Termination::StepCap));
    let prompts: Vec<String> = rec
        .take()
        .into_iter()
        .filter_map(|r| match r {
            BackendRequest::Score(s) => Some(s.prompt),
            _ => None,
        })
        .collect();
    assert_eq!(prompts.len(), 4);
    for pair in prompts.windows(2) {
        let added = pair[1].strip_prefix(pair[0].as_str()).expect("prompt grows by appending");
        assert_eq!(added, format!("{FOLLOW_UP} What is left?\n{FOLLOW_UP_ANSWER} a cat\n"));
    }
}

#[test]
fn immediate_answer_asks_nothing() {
    let lm = ScriptedLm::new("instruct_lm")
        .with_scores(PromptMatch::Any, prefix_scores(-2.0, -0.5))
        .with_completion(PromptMatch::Suffix(ANSWER.into()), " yes");
    let (s, _, vlm) = recording_lm(lm, cat_scene());
    let (pred, d) =
        SuccessiveEngine::default().run(&instance("Is it a cat?", &["yes"], None), Setting::DirectAnswer, &s).unwrap();
    assert!(d.steps.is_empty());
    assert_eq!(d.terminated_by, Some(Termination::AnswerPrefix));
    assert_eq!(pred.answer_text, "yes");
    assert_eq!(pred.method, Method::Successive);
    assert!(vlm.take().is_empty());
}

#[test]
fn empty_follow_up_forces_the_answer() {
    let lm = ScriptedLm::new("instruct_lm")
        .with_scores(PromptMatch::Any, prefix_scores(-0.1, -2.0))
        .with_completion(PromptMatch::Suffix(ANSWER.into()), " no")
        .with_completion(PromptMatch::Any, "   \n");
    let (s, _, _) = recording_lm(lm, cat_scene());
    let (pred, d) =
        SuccessiveEngine::default().run(&instance("Is it a dog?", &["no"], None), Setting::DirectAnswer, &s).unwrap();
    assert!(d.steps.is_empty());
    assert_eq!(d.terminated_by, Some(Termination::AnswerPrefix));
    assert_eq!(pred.answer_text, "no");
    assert!(pred.trace.events().iter().any(|e| e.payload.op == "empty_follow_up"));
}

#[test]
fn multiple_choice_final_answer_is_scored() {
    let lm = ScriptedLm::new("instruct_lm")
        .with_scores(PromptMatch::Suffix(format!("{ANSWER} ")), [("red", -2.0), ("black", -0.2), ("white", -1.0)])
        .with_scores(PromptMatch::Any, prefix_scores(-2.0, -0.5));
    let (s, rec, _) = recording_lm(lm, cat_scene());
    let inst = instance("What color is the cat?", &["black"], Some(&["red", "black", "white"]));
    let (pred, d) = SuccessiveEngine::default().run(&inst, Setting::MultipleChoice, &s).unwrap();
    assert_eq!(pred.answer_text, "black");
    assert_eq!(d.final_answer.as_deref(), Some("black"));
    let requests = rec.take();
    let BackendRequest::Score(last) = requests.last().unwrap() else { panic!("expected a scoring call") };
    assert!(last.prompt.contains("Choices: ['red', 'black', 'white']\n"));
    assert!(last.prompt.ends_with(&format!("{ANSWER} ")));
}

#[test]
fn backend_failure_keeps_the_partial_decomposition() {
    // only the first follow-up has a completion rule, so the second fails
    let lm = ScriptedLm::new("instruct_lm")
        .with_scores(PromptMatch::Any, prefix_scores(-0.1, -3.0))
        .with_completion(PromptMatch::Suffix("Question: Q?\nFollow-up:".into()), " How many cats?");
    let s = suite_with(vec![qa_scene(&[("How many cats?", "3")])], ScriptedLm::new("code_lm"), lm);
    let failure =
        SuccessiveEngine::default().run(&instance("Q?", &["a"], None), Setting::DirectAnswer, &s).unwrap_err();
    assert!(matches!(failure.source, BackendError::Fixture(_)));
    assert_eq!(failure.partial.steps.len(), 1);
    assert_eq!(failure.partial.steps[0].followup_answer, "3");
    assert!(failure.partial.final_answer.is_none());
    assert!(failure.partial.terminated_by.is_none());
    assert_eq!(failure.trace.calls("vqa").count(), 1);
}

#[test]
fn replay_is_deterministic() {
    let run = || {
        let (s, _, _) = recording_lm(two_step_lm(), qa_scene(&[("How many cats?", "3")]));
        let (p, d) = SuccessiveEngine::default()
            .run(&instance("Are there three cats?", &["yes"], None), Setting::DirectAnswer, &s)
            .unwrap();
        let digests: Vec<_> = p.trace.events().iter().map(|e| e.payload.response_digest.clone()).collect();
        (p.answer_text, d, digests)
    };
    assert_eq!(run(), run());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn steps_never_exceed_the_cap(cap in 1usize..10, stop_after in 0usize..12) {
        // the answer prefix wins once `stop_after` steps are present
        let marker = format!("Follow-up answer: a{stop_after}\n");
        let mut scene = cat_scene();
        for k in 0..12 {
            scene.scene_qa.insert(format!("Q{k}?"), format!("a{k}"));
        }
        let mut lm = ScriptedLm::new("instruct_lm")
            .with_scores(PromptMatch::Suffix(marker), prefix_scores(-3.0, -0.1))
            .with_scores(PromptMatch::Any, prefix_scores(-0.1, -3.0))
            .with_completion(PromptMatch::Suffix(ANSWER.into()), " fin");
        for k in (1..12).rev() {
            lm = lm.with_completion(PromptMatch::Suffix(format!("answer: a{}\n{FOLLOW_UP}", k - 1)), format!(" Q{k}?"));
        }
        lm = lm.with_completion(PromptMatch::Any, " Q0?");
        let s = suite_with(vec![scene], ScriptedLm::new("code_lm"), lm);
        let engine = SuccessiveEngine::new(SuccessivePrompt::builtin().clone(), cap).unwrap();
        let (_, d) = engine.run(&instance("Why?", &["x"], None), Setting::DirectAnswer, &s).unwrap();
        // the marker after step k names answer a{k-1}, so it appears once k = stop_after + 1 steps exist
        let expected = (stop_after + 1).min(cap);
        prop_assert_eq!(d.steps.len(), expected);
        prop_assert!(d.steps.len() <= cap);
        let want = if stop_after + 1 >= cap { Termination::StepCap } else { Termination::AnswerPrefix };
        prop_assert_eq!(d.terminated_by, Some(want));
        prop_assert_eq!(d.final_answer.as_deref(), Some("fin"));
    }
}

fn e2e_suite() -> (BackendSuite, Arc<Recorder>) {
    let scorer = ScriptedLm::new("vlm_scorer")
        .with_scores(PromptMatch::Exact(vqa_prompt("What color is the dog?")), [("brown", -0.3), ("black", -1.2)]);
    let oracle = vqdecomp::backends::SceneOracle::new("scene", [qa_scene(&[("What color is the dog?", "brown")])])
        .unwrap()
        .with_scorer(scorer);
    let vision: SharedBackend = Arc::new(oracle);
    let rec = Recorder::new(vision);
    let s = BackendSuite {
        code_lm: Arc::new(ScriptedLm::new("code_lm")),
        instruct_lm: Arc::new(ScriptedLm::new("instruct_lm")),
        vlm: rec.clone(),
        detector: rec.clone(),
        depth: rec.clone(),
        similarity: rec.clone(),
    };
    (s, rec)
}

#[test]
fn direct_answer_is_one_vlm_call_with_beam_settings() {
    let (s, rec) = e2e_suite();
    let inst = instance("What color is the dog?", &["brown"], Some(&["brown", "black"]));
    let p = run_e2e(&inst, Setting::DirectAnswer, &s, &DecodingParams::vlm_default()).unwrap();
    assert_eq!(p.answer_text, "brown");
    assert_eq!(p.variant, "e2e");
    let requests = rec.take();
    assert_eq!(requests.len(), 1);
    let BackendRequest::Vqa(v) = &requests[0] else { panic!("expected vqa") };
    assert_eq!(v.question, vqa_prompt("What color is the dog?"));
    assert_eq!(v.beam_width, Some(5));
    assert_eq!(v.length_penalty, Some(-1.0));
    assert_eq!(p.trace.calls("vqa").count(), 1);
}

#[test]
fn multiple_choice_is_one_scoring_call() {
    let (s, rec) = e2e_suite();
    let inst = instance("What color is the dog?", &["brown"], Some(&["black", "brown"]));
    let p = run_e2e(&inst, Setting::MultipleChoice, &s, &DecodingParams::vlm_default()).unwrap();
    assert_eq!(p.answer_text, "brown");
    let requests = rec.take();
    assert_eq!(requests.len(), 1);
    let BackendRequest::Score(sc) = &requests[0] else { panic!("expected score") };
    assert_eq!(sc.image_ref.as_deref(), Some("img"));
    assert_eq!(sc.continuations, ["black", "brown"]);
}

#[test]
fn empty_question_is_rejected() {
    let (s, _) = e2e_suite();
    let err = answer_direct(&instance("  ", &["a"], None), &s, &DecodingParams::vlm_default()).unwrap_err();
    assert!(matches!(err, BackendError::InvalidRequest(_)));
}

fn modular_suite(program: &str) -> (BackendSuite, Arc<Recorder>) {
    let code = ScriptedLm::new("code_lm").with_completion(PromptMatch::Any, program);
    let instruct = ScriptedLm::new("instruct_lm")
        .with_scores(PromptMatch::Prefix("Choices: ".into()), [("two", -0.2), ("three", -0.9), ("four", -1.5)]);
    let mut s = suite_with(vec![cat_scene()], code, instruct);
    let rec = Recorder::new(s.code_lm.clone());
    s.code_lm = rec.clone();
    (s, rec)
}

const COUNT_BLACK: &str = "    image_patch = ImagePatch(image)
    cats = image_patch.find('cat')
    return len([c for c in cats if c.verify_property('cat', 'black')])
";

#[test]
fn modular_direct_answer_runs_the_generated_program() {
    let (s, rec) = modular_suite(COUNT_BLACK);
    let engine = ModularEngine::new(ApiVariant::TaskAgnostic, &[], ExecConfig::default()).unwrap();
    let run = engine
        .run(&instance("How many black cats?", &["2"], None), Setting::DirectAnswer, &s, Default::default())
        .unwrap();
    assert_eq!(run.outcome.status, ExecStatus::Ok);
    assert_eq!(run.prediction.answer_text, "2");
    assert_eq!(run.prediction.outcome_class.unwrap().class, SummaryClass::NoException);
    assert!(run.program.full_text().starts_with("def execute_command(image) -> str:\n"));
    let requests = rec.take();
    let BackendRequest::Complete(c) = &requests[0] else { panic!("expected completion") };
    assert!(c.prompt.ends_with("# How many black cats?\ndef execute_command(image) -> str:\n"));
    let kinds: Vec<TraceKind> = run.prediction.trace.events().iter().map(|e| e.kind).collect();
    assert!(kinds.contains(&TraceKind::ParserEvent));
    assert!(kinds.contains(&TraceKind::BackendCall));
}

#[test]
fn modular_multiple_choice_maps_onto_a_choice() {
    let (s, rec) = modular_suite(COUNT_BLACK);
    let engine = ModularEngine::new(ApiVariant::TaskAgnostic, &[], ExecConfig::default()).unwrap();
    let inst = instance("How many black cats?", &["two"], Some(&["two", "three", "four"]));
    let run = engine.run(&inst, Setting::MultipleChoice, &s, Default::default()).unwrap();
    assert_eq!(run.outcome.result.as_deref(), Some("2"));
    assert_eq!(run.prediction.answer_text, "two");
    let BackendRequest::Complete(c) = &rec.take()[0] else { panic!("expected completion") };
    assert!(c.prompt.contains("# possible answers : ['two', 'three', 'four']\n"));
    assert!(c.prompt.ends_with("def execute_command(image, possible_choices=['two', 'three', 'four']) -> str:\n"));
}

#[test]
fn modular_failures_are_data_not_errors() {
    let (s, _) = modular_suite("    return cats_patches\n");
    let engine = ModularEngine::new(ApiVariant::TaskAgnostic, &[], ExecConfig::default()).unwrap();
    let run = engine.run(&instance("How many?", &["2"], None), Setting::DirectAnswer, &s, Default::default()).unwrap();
    assert_eq!(run.outcome.error_label, Some(ErrorLabel::NameError));
    assert_eq!(run.prediction.answer_text, "");
    assert_eq!(run.prediction.outcome_class.unwrap().class, SummaryClass::Runtime);
}

#[test]
fn variants_restrict_what_programs_can_call() {
    let (s, _) = modular_suite("    return ImagePatch(image).simple_query('What is this?')\n");
    let inst = instance("What is it?", &["cat"], None);
    let no_blip = ModularEngine::new(ApiVariant::WithoutBlip2, &[], ExecConfig::default()).unwrap();
    let run = no_blip.run(&inst, Setting::DirectAnswer, &s, Default::default()).unwrap();
    assert_eq!(run.outcome.error_label, Some(ErrorLabel::AttributeError));

    let demos: Vec<Demo> = (0..3)
        .map(|i| Demo {
            question: format!("Demo {i}?"),
            program: format!("def execute_command(image) -> str:\n    return ImagePatch(image).simple_query('d{i}')\n"),
        })
        .collect();
    let few = ModularEngine::new(ApiVariant::OnlyBlip2FewShot, &demos, ExecConfig::default()).unwrap();
    let run = few.run(&inst, Setting::DirectAnswer, &s, Default::default()).unwrap();
    assert_eq!(run.outcome.status, ExecStatus::Ok);
    let prompt = few.prompt("What is it?", None).unwrap();
    for d in &demos {
        assert!(prompt.contains(&d.question));
    }
    assert!(ModularEngine::new(ApiVariant::OnlyBlip2FewShot, &demos[..1], ExecConfig::default()).is_err());
}
