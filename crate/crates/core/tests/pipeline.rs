//! Whole runs over the fixture world, report persistence and properties of
//! the aggregation and caching layers.

mod common;

use std::io::Write;
use std::path::PathBuf;
use std::sync::Arc;

use common::*;
use proptest::prelude::*;
use vqdecomp::analysis::{error_table, runtime_breakdown};
use vqdecomp::backends::{
    vqa, BackendRequest, BackendSuite, CachedBackend, PromptMatch, SceneOracle, ScriptedLm, SharedBackend,
};
use vqdecomp::config::{BackendSpec, RunConfig};
use vqdecomp::instance::{Method, OutcomeClass, Setting, SummaryClass, Trace};
use vqdecomp::metrics::{llm_judge, Verdict};
use vqdecomp::program::{ApiVariant, ErrorLabel};
use vqdecomp::report::Report;
use vqdecomp::runner::{self, RunError};

fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

fn config(method: Method, setting: Setting) -> RunConfig {
    let mut c = RunConfig::new(
        method,
        setting,
        fixtures().join("scene_vqa.jsonl"),
        BackendSpec::Mock(fixtures().join("world.json")),
    );
    c.jobs = Some(2);
    c
}

fn ids(report: &Report) -> Vec<String> {
    report.instances.iter().map(|r| r.id.clone()).collect()
}

#[test]
fn judge_scores_every_direct_answer() {
    let mut c = config(Method::EndToEnd, Setting::DirectAnswer);
    c.judge = true;
    let report = runner::run(&c, None).unwrap();
    assert_eq!(report.instances.len(), 50);
    assert!(report.instances.iter().all(|r| r.scores.judge.is_some() && r.scores.vqa_accuracy.is_some()));
    let judged = report.aggregates.judge_accuracy.unwrap();
    assert!((0.0..=1.0).contains(&judged));
    assert!(report.aggregates.mc_accuracy.is_none());
    assert!(report.notes.iter().any(|n| n.starts_with("judge:")));
    assert!(report.error_table.is_none());
}

#[test]
fn multiple_choice_runs_score_choices_only() {
    let report = runner::run(&config(Method::Successive, Setting::MultipleChoice), None).unwrap();
    assert!(report.instances.iter().all(|r| r.scores.mc_accuracy.is_some() && r.scores.vqa_accuracy.is_none()));
    assert!(report.instances.iter().all(|r| r.decomposition.is_some()));
    assert!(report.aggregates.vqa_accuracy.is_none());
}

#[test]
fn program_runs_carry_error_tables() {
    let report = runner::run(&config(Method::Modular, Setting::DirectAnswer), None).unwrap();
    let table = report.error_table.as_ref().unwrap();
    assert_eq!(table.total, 50);
    let sum: f64 = table.rows.iter().map(|r| r.percent).sum();
    assert!((sum - 100.0).abs() < 1e-9);
    assert!(report.runtime_breakdown.is_some());
    assert!(report.instances.iter().all(|r| r.program.is_some() && r.outcome.is_some()));
}

#[test]
fn limit_sampling_is_seeded_and_clamped() {
    let mut c = config(Method::EndToEnd, Setting::MultipleChoice);
    c.limit = Some(10);
    c.seed = 3;
    let a = runner::run(&c, None).unwrap();
    let b = runner::run(&c, None).unwrap();
    assert_eq!(a.instances.len(), 10);
    assert_eq!(ids(&a), ids(&b));
    c.seed = 4;
    assert_ne!(ids(&a), ids(&runner::run(&c, None).unwrap()));
    c.limit = Some(1000);
    assert_eq!(runner::run(&c, None).unwrap().instances.len(), 50);
}

#[test]
fn few_shot_variant_requires_demos() {
    let mut c = config(Method::Modular, Setting::MultipleChoice);
    c.variant = ApiVariant::OnlyBlip2FewShot;
    assert!(matches!(runner::run(&c, None), Err(RunError::Config(_))));
    c.demos = Some(fixtures().join("demos_only_blip2.json"));
    assert_eq!(runner::run(&c, None).unwrap().instances.len(), 50);
}

#[test]
fn unknown_image_aborts_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.jsonl");
    let mut f = std::fs::File::create(&path).unwrap();
    writeln!(f, r#"{{"id": "a", "image_ref": "scene00", "question": "How many cars are in the kitchen?", "answers": ["3"], "split": "val"}}"#).unwrap();
    writeln!(
        f,
        r#"{{"id": "b", "image_ref": "nowhere", "question": "What is it?", "answers": ["cat"], "split": "val"}}"#
    )
    .unwrap();
    drop(f);
    let mut c = config(Method::EndToEnd, Setting::DirectAnswer);
    c.dataset = path;
    match runner::run(&c, None) {
        Err(RunError::Instance { id, .. }) => assert_eq!(id, "b"),
        other => panic!("expected an instance failure, got {other:?}"),
    }
}

#[test]
fn bad_dataset_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.jsonl");
    std::fs::write(&path, "{\"id\": \"a\", \"image_ref\": \"scene00\", \"question\": \"q\"}\n").unwrap();
    let mut c = config(Method::EndToEnd, Setting::DirectAnswer);
    c.dataset = path;
    assert!(matches!(runner::run(&c, None), Err(RunError::Dataset(_))));
    c.dataset = dir.path().join("missing.jsonl");
    assert!(matches!(runner::run(&c, None), Err(RunError::Dataset(_))));
}

#[test]
fn missing_fixture_is_a_backend_error() {
    let mut c = config(Method::EndToEnd, Setting::DirectAnswer);
    c.backends = BackendSpec::Mock(fixtures().join("absent.json"));
    assert!(matches!(runner::run(&c, None), Err(RunError::Backend(_))));
}

#[test]
fn report_round_trips_through_disk() {
    let report = runner::run(&config(Method::Modular, Setting::MultipleChoice), None).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("report.json");
    report.save(&path).unwrap();
    let loaded = Report::load(&path).unwrap();
    assert_eq!(loaded.canonical(), report.canonical());
    assert_eq!(loaded.generated_at, report.generated_at);
    assert!(Report::load(&dir.path().join("nope.json")).is_err());
}

#[test]
fn csv_has_one_row_per_instance() {
    let report = runner::run(&config(Method::Modular, Setting::DirectAnswer), None).unwrap();
    let mut buf = Vec::new();
    report.write_csv(&mut buf).unwrap();
    let mut reader = csv::Reader::from_reader(buf.as_slice());
    let header: Vec<String> = reader.headers().unwrap().iter().map(String::from).collect();
    assert_eq!(header[0], "id");
    assert!(header.contains(&"outcome".to_string()));
    let rows: Vec<csv::StringRecord> = reader.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 50);
    let outcome = header.iter().position(|h| h == "outcome").unwrap();
    assert!(rows.iter().all(|r| !r[outcome].is_empty()));
    let got: Vec<&str> = rows.iter().map(|r| &r[0]).collect();
    assert_eq!(got, ids(&report).iter().map(String::as_str).collect::<Vec<_>>());
}

#[test]
fn canonical_form_ignores_jobs_and_cache() {
    let mut c = config(Method::EndToEnd, Setting::MultipleChoice);
    c.limit = Some(5);
    let plain = runner::run(&c, None).unwrap();
    let dir = tempfile::tempdir().unwrap();
    c.jobs = Some(3);
    c.cache = Some(dir.path().to_path_buf());
    let cached = runner::run(&c, None).unwrap();
    assert_eq!(plain.canonical(), cached.canonical());
    assert!(!plain.canonical().contains("elapsed_ms"));
}

#[test]
fn renders_mention_each_score() {
    let mut c = config(Method::EndToEnd, Setting::DirectAnswer);
    c.judge = true;
    let text = runner::run(&c, None).unwrap().render_scores();
    for key in ["vqa_accuracy", "judge"] {
        assert!(text.contains(key), "{key} missing from\n{text}");
    }
}

fn arb_class() -> impl Strategy<Value = OutcomeClass> {
    let labels = [
        ErrorLabel::NameError,
        ErrorLabel::AttributeError,
        ErrorLabel::IndexError,
        ErrorLabel::TypeError,
        ErrorLabel::IndentationError,
        ErrorLabel::ValueError,
        ErrorLabel::Other,
    ];
    prop_oneof![
        Just(OutcomeClass { class: SummaryClass::NoException, label: None }),
        Just(OutcomeClass { class: SummaryClass::Parsing, label: None }),
        Just(OutcomeClass { class: SummaryClass::Parsing, label: Some(ErrorLabel::IndentationError) }),
        prop::sample::select(labels.to_vec())
            .prop_map(|l| OutcomeClass { class: SummaryClass::Runtime, label: Some(l) }),
    ]
}

proptest! {
    #[test]
    fn tables_ignore_outcome_order(
        (outcomes, shuffled) in prop::collection::vec(arb_class(), 1..60)
            .prop_flat_map(|v| (Just(v.clone()), Just(v).prop_shuffle()))
    ) {
        let json = |v: &[OutcomeClass]| {
            (
                serde_json::to_value(error_table(v).unwrap()).unwrap(),
                serde_json::to_value(runtime_breakdown(v)).unwrap(),
            )
        };
        prop_assert_eq!(json(&outcomes), json(&shuffled));
        let t = error_table(&outcomes).unwrap();
        let sum: f64 = t.rows.iter().map(|r| r.percent).sum();
        prop_assert!((sum - 100.0).abs() < 1e-9);
    }

    #[test]
    fn judge_depends_only_on_the_score_gap(
        yes in -10.0f64..0.0,
        no in -10.0f64..0.0,
        shift in -5.0f64..5.0,
    ) {
        let verdict = |y: f64, n: f64| {
            let lm = ScriptedLm::new("judge").with_scores(PromptMatch::Any, [("yes", y), ("no", n)]);
            let answers = vec!["cat".to_string()];
            llm_judge(&lm, "What is it?", &answers, "dog", true, &mut Trace::new()).unwrap().verdict
        };
        let want = if yes > no { Verdict::Correct } else { Verdict::Incorrect };
        prop_assert_eq!(verdict(yes, no), want);
        if (yes - no).abs() > 1e-6 {
            prop_assert_eq!(verdict(yes + shift, no + shift), want);
        }
    }

    #[test]
    fn cache_is_transparent(questions in prop::collection::vec("[a-z ]{1,12}\\?", 1..6)) {
        let oracle: SharedBackend = Arc::new(SceneOracle::new("scene", vec![cat_scene()]).unwrap());
        let recorder = Recorder::new(oracle.clone());
        let dir = tempfile::tempdir().unwrap();
        let cached = CachedBackend::new(recorder.clone(), dir.path()).unwrap();
        for q in &questions {
            let direct = vqa(oracle.as_ref(), "img", q, None, None, &mut Trace::new()).unwrap();
            let first = vqa(&cached, "img", q, None, None, &mut Trace::new()).unwrap();
            let again = vqa(&cached, "img", q, None, None, &mut Trace::new()).unwrap();
            prop_assert_eq!(&first, &direct);
            prop_assert_eq!(&again, &direct);
        }
        let forwarded = recorder.take();
        let mut distinct: Vec<&String> = questions.iter().collect();
        distinct.sort();
        distinct.dedup();
        prop_assert_eq!(forwarded.len(), distinct.len());
        prop_assert!(forwarded.iter().all(|r| matches!(r, BackendRequest::Vqa(_))));
    }
}

#[test]
fn suite_cache_shares_one_directory() {
    let dir = tempfile::tempdir().unwrap();
    let base: BackendSuite = suite(vec![cat_scene()]);
    let cached = runner::with_cache(&base, dir.path()).unwrap();
    let a = vqa(cached.vlm.as_ref(), "img", "What is it?", None, None, &mut Trace::new()).unwrap();
    let again = runner::with_cache(&base, dir.path()).unwrap();
    let b = vqa(again.vlm.as_ref(), "img", "What is it?", None, None, &mut Trace::new()).unwrap();
    assert_eq!(a, b);
    assert!(std::fs::read_dir(dir.path()).unwrap().count() > 0);
}
