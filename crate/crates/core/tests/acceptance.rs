//! Acceptance criteria. Each test prints one `PASS`/`FAIL` line with its
//! wall time; the line bypasses output capture so it shows up in plain
//! `cargo test` logs.

mod common;

use std::collections::BTreeMap;
use std::io::Write;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::sync::Arc;
use std::time::{Duration, Instant};

use common::*;
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vqdecomp::analysis::{error_table, render_error_table, render_runtime_breakdown, runtime_breakdown, TableFormat};
use vqdecomp::backends::scripted::{ScoreRule, ScoreSpec};
use vqdecomp::backends::{
    vqa_prompt, BackendSuite, PromptMatch, SceneGraph, SceneOracle, ScriptedLm, SharedBackend, TokenScore,
};
use vqdecomp::config::{BackendSpec, RunConfig};
use vqdecomp::e2e::answer_multiple_choice;
use vqdecomp::instance::{BenchmarkInstance, Method, OutcomeClass, Setting, SummaryClass, Trace, TraceKind};
use vqdecomp::metrics::{llm_judge, normalize_answer, vqa_accuracy, Verdict};
use vqdecomp::program::prompt::{build_code_prompt, prompt_prefix};
use vqdecomp::program::{execute_source, ApiVariant, Demo, ErrorLabel, ExecConfig, ExecStatus};
use vqdecomp::runner;
use vqdecomp::scoring::{map_to_nearest_choice, normalized_loglikelihood};
use vqdecomp::successive::{SuccessiveEngine, SuccessivePrompt, Termination, ANSWER, FOLLOW_UP};

/// Runs one criterion, prints its verdict line and re-raises any failure.
fn criterion(name: &str, budget: Duration, body: impl FnOnce()) {
    let start = Instant::now();
    let result = catch_unwind(AssertUnwindSafe(body));
    let elapsed = start.elapsed();
    let verdict = match (&result, elapsed <= budget) {
        (Ok(()), true) => "PASS",
        _ => "FAIL",
    };
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "acceptance {verdict}: {name} ({} ms, limit {} ms)", elapsed.as_millis(), budget.as_millis());
    drop(out);
    if let Err(panic) = result {
        std::panic::resume_unwind(panic);
    }
    assert!(elapsed <= budget, "{name} took {elapsed:?}, limit {budget:?}");
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn strings(items: &[&str]) -> Vec<String> {
    items.iter().map(|s| s.to_string()).collect()
}

/// Brute-force byte-weighted mean: integer byte totals, then one division.
fn oracle_eq1(tokens: &[TokenScore]) -> f64 {
    let total: u64 = tokens.iter().map(|t| u64::from(t.byte_length)).sum();
    let weighted: f64 = tokens.iter().map(|t| t.logprob * t.byte_length as f64).sum();
    weighted / total as f64
}

fn random_tokens(r: &mut ChaCha8Rng, max_len: usize) -> Vec<TokenScore> {
    let n = r.random_range(1..=max_len);
    (0..n)
        .map(|_| {
            let bytes = r.random_range(1..=8usize);
            let text: String = (0..bytes).map(|_| r.random_range(b'a'..=b'z') as char).collect();
            TokenScore { token_text: text, logprob: -10.0 * r.random::<f64>(), byte_length: bytes as u32 }
        })
        .collect()
}

#[test]
fn normalized_loglikelihood_matches_brute_force() {
    criterion("normalized log-likelihood oracle, 1000 sequences", Duration::from_secs(1), || {
        let mut r = rng(1);
        for case in 0..1000 {
            let tokens = random_tokens(&mut r, 20);
            let got = normalized_loglikelihood(&tokens).unwrap();
            let want = oracle_eq1(&tokens);
            assert!((got - want).abs() <= 1e-9, "case {case}: {got} vs {want}");
        }
    });
}

/// Objects on a 4x4 grid of 25px cells so no two boxes overlap.
fn random_scene(r: &mut ChaCha8Rng) -> SceneGraph {
    let mut cells: Vec<usize> = (0..16).collect();
    cells.shuffle(r);
    let n = r.random_range(0..=16);
    let objects = cells[..n]
        .iter()
        .enumerate()
        .map(|(i, cell)| {
            let (cx, cy) = ((cell % 4) as f64 * 25.0, (cell / 4) as f64 * 25.0);
            let (a, b) = (r.random_range(1..8) as f64, r.random_range(1..8) as f64);
            let category = *["cat", "cat", "dog", "car"].choose(r).unwrap();
            let attrs: Vec<&str> =
                ["black", "white", "brown", "small"].into_iter().filter(|_| r.random_bool(0.4)).collect();
            obj(
                i as u32 + 1,
                category,
                [cx + a, cy + b, cx + 25.0 - b, cy + 25.0 - a],
                &attrs,
                r.random_range(1.0..20.0),
            )
        })
        .collect();
    scene("img", objects)
}

#[test]
fn black_cats_listing_matches_brute_force() {
    criterion("black-cats listing over 200 random scenes", Duration::from_secs(5), || {
        let mut r = rng(2);
        for case in 0..200 {
            let s = random_scene(&mut r);
            let want = s.objects.iter().filter(|o| o.category == "cat" && o.attributes.contains("black")).count();
            let out = run_in(BLACK_CATS, s, ApiVariant::TaskAgnostic);
            assert_eq!(out.status, ExecStatus::Ok, "case {case}: {:?}", out.message);
            assert_eq!(out.result, Some(want.to_string()), "case {case}");
        }
    });
}

fn class(class: SummaryClass, label: Option<ErrorLabel>) -> OutcomeClass {
    OutcomeClass { class, label }
}

const SOUP: &[&str] = &[
    "image_patch",
    "ImagePatch",
    "(",
    ")",
    "image",
    "find",
    ".",
    "'cat'",
    "\"x\"",
    "[",
    "]",
    "{",
    "}",
    ":",
    ",",
    "=",
    "==",
    "+",
    "-",
    "*",
    "/",
    "//",
    "%",
    "**",
    "<",
    ">",
    "not",
    "and",
    "or",
    "if",
    "else",
    "elif",
    "for",
    "in",
    "while",
    "return",
    "lambda",
    "def",
    "pass",
    "break",
    "continue",
    "True",
    "False",
    "None",
    "0",
    "1",
    "2.5",
    "-1",
    "len",
    "str",
    "int",
    "sorted",
    "range",
    "x",
    "y",
    "p",
    "simple_query",
    "exists",
    "verify_property",
    "compute_depth",
    "crop",
    "llm_query",
    "distance",
    "bool_to_yesno",
    "best_text_match",
    "import",
    "os",
    "open",
    "exec",
    "eval",
    "__import__",
    "globals",
    "__class__",
    "__subclasses__",
    "sys",
    "try",
    "except",
    "raise",
    "with",
    "yield",
    "@",
    "\\",
    "#",
    "f'{x}'",
    ";",
    "\t",
    "\n",
];

const ATOMS: &[&str] = &[
    "x",
    "y",
    "p",
    "image",
    "0",
    "1",
    "-3",
    "2.5",
    "'cat'",
    "''",
    "None",
    "True",
    "[]",
    "[1, 'a']",
    "{}",
    "{'a': 1}",
    "ImagePatch(image)",
    "ImagePatch(image).find('cat')",
    "ImagePatch(image).find('unicorn')",
    "ImagePatch(image).simple_query('q')",
    "ImagePatch(image).exists('dog')",
    "len(x)",
    "x[0]",
    "x['a']",
    "x.foo",
    "int('z')",
    "str(y)",
    "sorted(x)",
    "range(3)",
    "open('f')",
    "__import__('os')",
    "eval('1')",
    "globals()",
    "x.__class__",
    "p.compute_depth()",
    "llm_query('q')",
    "bool_to_yesno(x)",
    "lambda v: v",
];
const BINOPS: &[&str] = &["+", "-", "*", "/", "//", "%", "<", "==", "and", "or", "in"];

fn expr(r: &mut ChaCha8Rng) -> String {
    let mut e = ATOMS.choose(r).unwrap().to_string();
    for _ in 0..r.random_range(0..3) {
        e = format!("{e} {} {}", BINOPS.choose(r).unwrap(), ATOMS.choose(r).unwrap());
    }
    e
}

/// Statement-shaped programs over a small expression grammar; most parse.
fn statement_soup(r: &mut ChaCha8Rng) -> String {
    let mut src = String::from("def execute_command(image) -> str:\n");
    for _ in 0..r.random_range(1..=5) {
        let line = match r.random_range(0..5) {
            0 => format!("    x = {}\n", expr(r)),
            1 => format!("    y = {}\n", expr(r)),
            2 => format!("    if {}:\n        return {}\n", expr(r), expr(r)),
            3 => format!("    for p in {}:\n        x = {}\n", expr(r), expr(r)),
            _ => format!("    while {}:\n        y = {}\n", expr(r), expr(r)),
        };
        src.push_str(&line);
    }
    src.push_str(&format!("    return {}\n", expr(r)));
    src
}

fn token_soup(r: &mut ChaCha8Rng) -> String {
    if r.random_bool(0.5) {
        return statement_soup(r);
    }
    let mut src = String::from("def execute_command(image) -> str:\n");
    for _ in 0..r.random_range(1..=6) {
        src.push_str(["    ", "        ", "  ", ""].choose(r).unwrap());
        for _ in 0..r.random_range(1..=10) {
            src.push_str(SOUP.choose(r).unwrap());
            src.push(' ');
        }
        src.push('\n');
    }
    src
}

fn well_formed(status: ExecStatus, result: &Option<String>, label: Option<ErrorLabel>, steps: u64) -> bool {
    match status {
        ExecStatus::Ok => result.is_some() && label.is_none(),
        ExecStatus::ParseError => {
            result.is_none() && steps == 0 && matches!(label, None | Some(ErrorLabel::IndentationError))
        }
        ExecStatus::RuntimeError => result.is_none() && label.is_some(),
    }
}

#[test]
fn error_taxonomy_corpus_and_fuzz() {
    criterion("error taxonomy corpus and 10k token-soup fuzz", Duration::from_secs(60), || {
        let header = "def execute_command(image) -> str:\n";
        let corpus: Vec<(&str, String, OutcomeClass)> = vec![
            (
                "ok",
                format!("{header}  return len(ImagePatch(image).find('cat'))\n"),
                class(SummaryClass::NoException, None),
            ),
            (
                "name",
                format!("{header}  return cat_patchs\n"),
                class(SummaryClass::Runtime, Some(ErrorLabel::NameError)),
            ),
            (
                "attribute",
                format!("{header}  return ImagePatch(image).simple_querry('q')\n"),
                class(SummaryClass::Runtime, Some(ErrorLabel::AttributeError)),
            ),
            (
                "index",
                format!("{header}  return ImagePatch(image).find('unicorn')[0]\n"),
                class(SummaryClass::Runtime, Some(ErrorLabel::IndexError)),
            ),
            (
                "type",
                format!("{header}  return 'n: ' + len([])\n"),
                class(SummaryClass::Runtime, Some(ErrorLabel::TypeError)),
            ),
            (
                "indentation",
                format!("{header}  x = 1\n    return x\n"),
                class(SummaryClass::Parsing, Some(ErrorLabel::IndentationError)),
            ),
            (
                "value",
                format!("{header}  return int('many')\n"),
                class(SummaryClass::Runtime, Some(ErrorLabel::ValueError)),
            ),
            (
                "key",
                format!("{header}  return {{'small': 1}}['large']\n"),
                class(SummaryClass::Runtime, Some(ErrorLabel::KeyError)),
            ),
            (
                "zero division",
                format!("{header}  return 10 / len([])\n"),
                class(SummaryClass::Runtime, Some(ErrorLabel::ZeroDivisionError)),
            ),
            ("other", format!("{header}  return 2 ** 64\n"), class(SummaryClass::Runtime, Some(ErrorLabel::Other))),
            ("syntax", format!("{header}  if True\n    return 'x'\n"), class(SummaryClass::Parsing, None)),
            (
                "budget",
                format!("{header}  while True:\n    pass\n"),
                class(SummaryClass::Runtime, Some(ErrorLabel::Other)),
            ),
        ];
        assert!(corpus.len() >= 9);
        for (name, src, want) in &corpus {
            let out = run_in(src, cat_scene(), ApiVariant::TaskAgnostic);
            assert_eq!(out.class(), *want, "{name}: {:?}", out.message);
        }

        let s = suite(vec![cat_scene()]);
        let known_ops = ["complete", "score", "vqa", "detect", "depth", "similarity", "image_info"];
        let config = ExecConfig { budget: 20_000, ..ExecConfig::default() };
        let mut r = rng(3);
        let mut tally: BTreeMap<String, usize> = BTreeMap::new();
        for case in 0..10_000 {
            let src = token_soup(&mut r);
            let mut trace = Trace::new();
            let out = catch_unwind(AssertUnwindSafe(|| {
                execute_source(&src, "img", ApiVariant::TaskAgnostic, &s, &config, &mut trace)
            }))
            .unwrap_or_else(|_| panic!("case {case} panicked:\n{src}"));
            assert!(
                well_formed(out.status, &out.result, out.error_label, out.steps_used),
                "case {case} unclassified: {out:?}\n{src}"
            );
            assert!(out.steps_used <= config.budget, "case {case} overran the budget");
            *tally.entry(format!("{:?}", out.status)).or_default() += 1;
            for e in trace.events().iter().filter(|e| e.kind == TraceKind::BackendCall) {
                assert!(known_ops.contains(&e.payload.op.as_str()), "case {case} escaped via {:?}", e.payload.op);
            }
        }
        let _ = writeln!(std::io::stdout().lock(), "token soup outcomes: {tally:?}");
        // the soup must reach the interpreter, not just the parser
        assert!(tally.get("RuntimeError").copied().unwrap_or(0) >= 1000, "{tally:?}");
        assert!(tally.get("Ok").copied().unwrap_or(0) >= 100, "{tally:?}");
    });
}

fn demos() -> Vec<Demo> {
    ["What is the man holding?", "Is the bus about to stop?", "Which season is it?"]
        .iter()
        .map(|q| Demo {
            question: q.to_string(),
            program: format!(
                "def execute_command(image) -> str:\n    image_patch = ImagePatch(image)\n    return image_patch.simple_query({q:?})\n"
            ),
        })
        .collect()
}

#[test]
fn prompt_variant_invariants() {
    criterion("prompt variant invariants", Duration::from_secs(5), || {
        let choices = strings(&["red", "blue"]);
        let questions: [(&str, Option<&[String]>); 2] =
            [("What color is the cat?", None), ("What color is the cat?", Some(&choices))];
        for (q, c) in questions {
            let p = build_code_prompt(q, c, ApiVariant::WithoutBlip2, &[]).unwrap();
            assert_eq!(p.matches("simple_query").count(), 0);
            for variant in [ApiVariant::OnlyBlip2ZeroShot, ApiVariant::OnlyBlip2FewShot] {
                let p = build_code_prompt(q, c, variant, &demos()).unwrap();
                assert!(p.contains("simple_query("));
                let others = vqdecomp::program::api::ALL_METHODS
                    .iter()
                    .chain(vqdecomp::program::api::ALL_FUNCTIONS)
                    .filter(|m| **m != "simple_query");
                for m in others {
                    assert!(!p.contains(&format!("{m}(")), "{variant} prompt mentions {m}");
                }
            }
        }
        let prefix = prompt_prefix(ApiVariant::OnlyBlip2FewShot, &demos()).unwrap();
        assert_eq!(prefix.lines().filter(|l| l.starts_with("def execute_command(")).count(), 3);
        for d in demos() {
            assert_eq!(prefix.matches(&format!("# {}\n", d.question)).count(), 1);
        }
        assert!(prompt_prefix(ApiVariant::OnlyBlip2FewShot, &demos()[..2]).is_err());
    });
}

fn successive_suite(scene: SceneGraph, lm: ScriptedLm) -> BackendSuite {
    suite_with(vec![scene], ScriptedLm::new("code_lm"), lm)
}

fn instance(id: &str, question: &str, choices: Option<Vec<String>>) -> BenchmarkInstance {
    BenchmarkInstance {
        id: id.into(),
        image_ref: "img".into(),
        question: question.into(),
        answers: vec!["no".into()],
        choices,
        question_type: None,
        split: "val".into(),
    }
}

const KITCHEN_TRANSCRIPT: &str = "Question: Has the food this woman is preparing been fried?
Follow-up: What's in the image?
Follow-up answer: a person is preparing a salad on the counter
Follow-up: Has the lettuce been fried?
Follow-up answer: no
Answer to the original question: no
";

fn prefix_scores(follow: f64, answer: f64) -> Vec<(&'static str, f64)> {
    vec![(FOLLOW_UP, follow), (ANSWER, answer)]
}

#[test]
fn successive_prompting_replay() {
    criterion("successive prompting replay, step cap and prefix selection", Duration::from_secs(30), || {
        let engine = SuccessiveEngine::new(SuccessivePrompt::builtin().clone(), 8).unwrap();

        let mut kitchen = SceneGraph::new("img", 100.0, 100.0);
        kitchen.scene_qa = BTreeMap::from([
            ("What's in the image?".into(), "a person is preparing a salad on the counter".into()),
            ("Has the lettuce been fried?".into(), "no".into()),
        ]);
        let lm = ScriptedLm::new("instruct_lm")
            .with_scores(PromptMatch::Suffix("Follow-up answer: no\n".into()), prefix_scores(-2.0, -0.3))
            .with_scores(PromptMatch::Suffix("on the counter\n".into()), prefix_scores(-0.4, -1.7))
            .with_scores(PromptMatch::Suffix("been fried?\n".into()), prefix_scores(-0.2, -1.1))
            .with_completion(PromptMatch::Suffix("preparing been fried?\nFollow-up:".into()), " What's in the image?\n")
            .with_completion(PromptMatch::Suffix("on the counter\nFollow-up:".into()), " Has the lettuce been fried?\n")
            .with_completion(PromptMatch::Suffix(ANSWER.into()), " no\n");
        let s = successive_suite(kitchen, lm);
        let q = instance("kitchen", "Has the food this woman is preparing been fried?", None);
        let (pred, d) = engine.run(&q, Setting::DirectAnswer, &s).unwrap();
        assert_eq!(d.transcript(), KITCHEN_TRANSCRIPT);
        assert_eq!(d.steps.len(), 2);
        assert_eq!(d.terminated_by, Some(Termination::AnswerPrefix));
        assert_eq!(pred.answer_text, "no");

        for cap in [1, 2, 5, 8] {
            let lm = ScriptedLm::new("instruct_lm")
                .with_scores(PromptMatch::Any, prefix_scores(-0.1, -5.0))
                .with_completion(PromptMatch::Suffix(ANSWER.into()), " yes")
                .with_completion(PromptMatch::Any, " Is it sunny?");
            let s = successive_suite(SceneGraph::new("img", 100.0, 100.0), lm);
            let engine = SuccessiveEngine::new(SuccessivePrompt::builtin().clone(), cap).unwrap();
            let (pred, d) = engine.run(&instance("cap", "Is it summer?", None), Setting::DirectAnswer, &s).unwrap();
            assert_eq!(d.steps.len(), cap);
            assert_eq!(d.terminated_by, Some(Termination::StepCap));
            assert_eq!(pred.answer_text, "yes");
        }

        // with a one-step cap, the first decision shows up as zero or one step
        let engine = SuccessiveEngine::new(SuccessivePrompt::builtin().clone(), 1).unwrap();
        let mut r = rng(5);
        for case in 0..500 {
            let follow = random_tokens(&mut r, 6);
            let answer = random_tokens(&mut r, 6);
            let (f, a) = (oracle_eq1(&follow), oracle_eq1(&answer));
            let expect_follow = f >= a;
            let rule = ScoreRule {
                matcher: PromptMatch::Any,
                image_ref: None,
                scores: BTreeMap::from([
                    (FOLLOW_UP.to_string(), ScoreSpec::Tokens(follow)),
                    (ANSWER.to_string(), ScoreSpec::Tokens(answer)),
                ]),
            };
            let lm = ScriptedLm::new("instruct_lm")
                .with_score_rule(rule)
                .with_completion(PromptMatch::Suffix(ANSWER.into()), " maybe")
                .with_completion(PromptMatch::Any, " Is it sunny?");
            let s = successive_suite(SceneGraph::new("img", 100.0, 100.0), lm);
            let (_, d) = engine.run(&instance("p", "Is it summer?", None), Setting::DirectAnswer, &s).unwrap();
            assert_eq!(d.steps.len(), usize::from(expect_follow), "case {case}: {f} vs {a}");
        }
    });
}

fn random_text(r: &mut ChaCha8Rng) -> String {
    const POOL: &[&str] = &[
        "a", "an", "the", "The", "A", "two", "Three", "ten", "eleven", "cat", "Dog", "  ", " ", "\t", "\n", ".", ",",
        "!", "?", ";", ":", "'", "-", "3", "0", "é", "ß", "İ", "ﬁ", "Σ", "红", "x", "yes", "No",
    ];
    let n = r.random_range(0..12);
    (0..n).map(|_| *POOL.choose(r).unwrap()).collect()
}

#[test]
fn metric_values() {
    criterion("metric values, normalization idempotence and judge", Duration::from_secs(10), || {
        for (k, want) in [(0usize, 0.0), (1, 1.0 / 3.0), (2, 2.0 / 3.0), (3, 1.0), (5, 1.0)] {
            let mut answers = vec!["dog".to_string(); 10];
            for a in answers.iter_mut().take(k) {
                *a = "cat".into();
            }
            let got = vqa_accuracy("cat", &answers, true).unwrap();
            assert!((got - want).abs() <= 1e-9, "{k} matches: {got}");
        }

        let mut r = rng(6);
        for _ in 0..10_000 {
            let s = random_text(&mut r);
            let once = normalize_answer(&s);
            assert_eq!(normalize_answer(&once), once, "{s:?}");
        }

        for case in 0..1000 {
            let yes = -5.0 * r.random::<f64>();
            let no = if case % 10 == 0 { yes } else { -5.0 * r.random::<f64>() };
            let lm = ScriptedLm::new("judge").with_scores(PromptMatch::Any, [("yes", yes), ("no", no)]);
            let mut trace = Trace::new();
            let j = llm_judge(&lm, "What is it?", &strings(&["cat", "kitten"]), "cat", false, &mut trace).unwrap();
            let want = if yes > no { Verdict::Correct } else { Verdict::Incorrect };
            assert_eq!(j.verdict, want, "case {case}: yes {yes} no {no}");
        }
    });
}

#[test]
fn choice_selection_is_permutation_invariant() {
    criterion("choice selection invariant under permutation, 1000 fixtures", Duration::from_secs(30), || {
        let mut r = rng(7);
        let words = ["red", "blue", "green", "left", "right", "two", "three", "dog", "cat", "car", "tree"];
        for case in 0..1000 {
            let n = r.random_range(2..=6);
            let mut pool = words.to_vec();
            pool.shuffle(&mut r);
            let choices: Vec<String> = pool[..n].iter().map(|s| s.to_string()).collect();
            let mut values: Vec<f64> = (0..n).map(|i| -(i as f64) - r.random::<f64>() * 0.5).collect();
            values.shuffle(&mut r);
            let best = values.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0;
            let want = choices[best].clone();
            let table: Vec<(String, f64)> = choices.iter().cloned().zip(values.iter().copied()).collect();

            let question = "Which one is it?";
            let scorer =
                ScriptedLm::new("vlm_scorer").with_scores(PromptMatch::Exact(vqa_prompt(question)), table.clone());
            let vision: SharedBackend =
                Arc::new(SceneOracle::new("scene", [SceneGraph::new("img", 10.0, 10.0)]).unwrap().with_scorer(scorer));
            let instruct = ScriptedLm::new("instruct_lm").with_scores(PromptMatch::Prefix("Choices: ".into()), table);
            let s = BackendSuite {
                code_lm: Arc::new(ScriptedLm::new("code_lm")),
                instruct_lm: Arc::new(instruct),
                vlm: vision.clone(),
                detector: vision.clone(),
                depth: vision.clone(),
                similarity: vision,
            };

            for _ in 0..3 {
                let mut perm = choices.clone();
                perm.shuffle(&mut r);
                let inst = instance("mc", question, Some(perm.clone()));
                let e2e = answer_multiple_choice(&inst, &s).unwrap().answer_text;
                assert_eq!(e2e, want, "case {case}, e2e, {perm:?}");
                let mut trace = Trace::new();
                let mapped =
                    map_to_nearest_choice(s.instruct_lm.as_ref(), "something else", &perm, &mut trace).unwrap();
                assert_eq!(mapped, want, "case {case}, nearest choice, {perm:?}");
            }
        }
    });
}

fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

#[test]
fn runs_are_deterministic_and_cached() {
    criterion("deterministic runs and warm-cache replay, 50 instances", Duration::from_secs(120), || {
        let world = BackendSpec::Mock(fixtures().join("world.json"));
        let dataset = fixtures().join("scene_vqa.jsonl");
        for (method, setting) in [
            (Method::EndToEnd, Setting::DirectAnswer),
            (Method::Modular, Setting::DirectAnswer),
            (Method::Modular, Setting::MultipleChoice),
            (Method::Successive, Setting::MultipleChoice),
        ] {
            let mut config = RunConfig::new(method, setting, &dataset, world.clone());
            config.judge = setting == Setting::DirectAnswer;
            let (a_dir, b_dir) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());

            config.cache = Some(a_dir.path().to_path_buf());
            config.jobs = Some(1);
            let first = runner::run(&config, None).unwrap();
            config.cache = Some(b_dir.path().to_path_buf());
            config.jobs = Some(4);
            let second = runner::run(&config, None).unwrap();
            assert_eq!(first.instances.len(), 50);
            assert!(first.run_stats.backend_calls > 0);
            assert_eq!(first.canonical(), second.canonical(), "{method:?} {setting:?}");

            config.cache = Some(a_dir.path().to_path_buf());
            let warm = runner::run(&config, None).unwrap();
            assert_eq!(warm.run_stats.backend_calls, 0, "{method:?} {setting:?}");
            assert_eq!(warm.canonical(), first.canonical());
        }
    });
}

#[test]
fn error_tables_reproduce_hand_counts() {
    criterion("error tables reproduce hand-computed percentages", Duration::from_secs(1), || {
        // 20 programs: 12 clean, 3 parse failures (one layout fault), 5 runtime
        let mut outcomes = vec![class(SummaryClass::NoException, None); 12];
        outcomes.push(class(SummaryClass::Parsing, Some(ErrorLabel::IndentationError)));
        outcomes.extend([class(SummaryClass::Parsing, None); 2]);
        outcomes.extend([class(SummaryClass::Runtime, Some(ErrorLabel::NameError)); 2]);
        outcomes.push(class(SummaryClass::Runtime, Some(ErrorLabel::TypeError)));
        outcomes.push(class(SummaryClass::Runtime, Some(ErrorLabel::KeyError)));
        outcomes.push(class(SummaryClass::Runtime, Some(ErrorLabel::Other)));
        outcomes.shuffle(&mut rng(9));

        let t = error_table(&outcomes).unwrap();
        assert_eq!(t.total, 20);
        assert_eq!(t.percent(SummaryClass::NoException), 60.0);
        assert_eq!(t.percent(SummaryClass::Parsing), 15.0);
        assert_eq!(t.percent(SummaryClass::Runtime), 25.0);

        // five runtime failures plus the layout fault
        let b = runtime_breakdown(&outcomes);
        assert_eq!(b.total, 6);
        let sixth = 100.0 / 6.0;
        let want = [
            (ErrorLabel::NameError, 2.0 * sixth),
            (ErrorLabel::AttributeError, 0.0),
            (ErrorLabel::IndexError, 0.0),
            (ErrorLabel::TypeError, sixth),
            (ErrorLabel::IndentationError, sixth),
            (ErrorLabel::ValueError, 0.0),
            (ErrorLabel::KeyError, sixth),
            (ErrorLabel::ZeroDivisionError, 0.0),
            (ErrorLabel::Other, sixth),
        ];
        for (label, p) in want {
            assert!((b.percent(label) - p).abs() <= 1e-12, "{label:?}: {}", b.percent(label));
        }
        let order: Vec<ErrorLabel> = b.rows.iter().map(|r| r.key).collect();
        assert_eq!(order, ErrorLabel::ALL);

        let latex = render_error_table(&[("viper".into(), t.clone())], TableFormat::Latex);
        assert_eq!(latex, "& viper \\\\\nNo Exception & 60\\% \\\\\nParsing & 15\\% \\\\\nRuntime & 25\\% \\\\\n");
        let text = render_error_table(&[("viper".into(), t)], TableFormat::Text);
        let rows: Vec<(&str, &str)> = text.lines().skip(1).map(|l| (l[..12].trim_end(), l[12..].trim())).collect();
        assert_eq!(rows, [("No Exception", "60%"), ("Parsing", "15%"), ("Runtime", "25%")]);

        let latex = render_runtime_breakdown(&[("viper".into(), b)], TableFormat::Latex);
        let lines: Vec<&str> = latex.lines().collect();
        assert_eq!(lines[0], "& viper \\\\");
        assert_eq!(
            &lines[1..],
            [
                "NameError & 33\\% \\\\",
                "AttributeError & 0\\% \\\\",
                "IndexError & 0\\% \\\\",
                "TypeError & 17\\% \\\\",
                "IndentationError & 17\\% \\\\",
                "ValueError & 0\\% \\\\",
                "KeyError & 17\\% \\\\",
                "ZeroDivisionError & 0\\% \\\\",
                "Other & 17\\% \\\\",
            ]
        );
    });
}
