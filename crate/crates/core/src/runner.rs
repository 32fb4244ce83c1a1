//! Evaluation runs: backend assembly, per-instance evaluation and report
//! construction.
//!
//! Backends are layered as base, then an invocation counter, then the
//! optional response cache, so the counter only sees requests the cache
//! could not answer. Instances are evaluated independently, in parallel
//! with the `parallel` feature, and merged by instance id.

use std::path::Path;
use std::sync::atomic::Ordering;
use std::sync::Arc;
use std::time::Instant;

use thiserror::Error;

use crate::backends::{BackendError, BackendSuite, CachedBackend, MockFixture, SharedBackend};
use crate::config::{BackendSpec, RunConfig};
use crate::dataset::{load_dataset, sample, DatasetError};
use crate::e2e::run_e2e;
use crate::instance::{BenchmarkInstance, Method, Setting};
use crate::metrics::{exact_match, llm_judge, mc_accuracy, vqa_accuracy};
use crate::program::prompt::PromptError;
use crate::program::{ApiVariant, Demo, ModularEngine};
use crate::report::{InstanceRecord, InstanceScores, Report, RunStats};
use crate::successive::{SuccessiveEngine, SuccessiveError, SuccessivePrompt};

#[derive(Debug, Error)]
pub enum RunError {
    #[error("configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error("backends: {0}")]
    Backend(#[from] BackendError),
    #[error("instance {id}: {source}")]
    Instance {
        id: String,
        #[source]
        source: BackendError,
    },
    #[error("cache {path}: {source}")]
    Cache {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl From<PromptError> for RunError {
    fn from(e: PromptError) -> Self {
        RunError::Config(e.to_string())
    }
}

impl From<SuccessiveError> for RunError {
    fn from(e: SuccessiveError) -> Self {
        RunError::Config(e.to_string())
    }
}

/// The configured strategy, ready to run.
#[derive(Debug, Clone)]
pub enum Engine {
    EndToEnd,
    Modular(ModularEngine),
    Successive(SuccessiveEngine),
}

fn read_file(path: &Path) -> Result<String, RunError> {
    std::fs::read_to_string(path).map_err(|e| RunError::Config(format!("cannot read {}: {e}", path.display())))
}

impl Engine {
    pub fn from_config(config: &RunConfig) -> Result<Self, RunError> {
        match config.method {
            Method::EndToEnd => Ok(Engine::EndToEnd),
            Method::Modular => {
                let demos: Vec<Demo> = match &config.demos {
                    Some(path) => serde_json::from_str(&read_file(path)?)
                        .map_err(|e| RunError::Config(format!("{}: {e}", path.display())))?,
                    None => Vec::new(),
                };
                if config.variant == ApiVariant::OnlyBlip2FewShot && config.demos.is_none() {
                    return Err(RunError::Config(format!(
                        "the {} variant needs three demonstrations (set demos)",
                        config.variant
                    )));
                }
                Ok(Engine::Modular(ModularEngine::new(config.variant, &demos, config.exec)?))
            }
            Method::Successive => {
                let prompt = match &config.successive_prompt {
                    Some(path) => SuccessivePrompt::parse(&read_file(path)?)?,
                    None => SuccessivePrompt::builtin().clone(),
                };
                Ok(Engine::Successive(SuccessiveEngine::new(prompt, config.max_steps)?))
            }
        }
    }
}

/// The base suite named by `backends`. `token` authenticates remote calls.
pub fn base_suite(backends: &BackendSpec, token: Option<String>) -> Result<BackendSuite, RunError> {
    match backends {
        BackendSpec::Mock(path) => Ok(MockFixture::load(path)?.into_suite()?),
        BackendSpec::Remote(url) => Ok(BackendSuite::remote(url, token)),
    }
}

/// Wraps every role of `suite` with a response cache in `dir`.
pub fn with_cache(suite: &BackendSuite, dir: &Path) -> Result<BackendSuite, RunError> {
    let mut failure = None;
    let cached = suite.map(|b| match CachedBackend::new(b.clone(), dir) {
        Ok(c) => Arc::new(c) as SharedBackend,
        Err(e) => {
            failure.get_or_insert(e);
            b
        }
    });
    match failure {
        Some(source) => Err(RunError::Cache { path: dir.display().to_string(), source }),
        None => Ok(cached),
    }
}

/// Runs the engine on one instance and scores the prediction.
pub fn evaluate_instance(
    instance: &BenchmarkInstance,
    config: &RunConfig,
    engine: &Engine,
    suite: &BackendSuite,
) -> Result<InstanceRecord, BackendError> {
    let setting = config.setting;
    let (mut prediction, program, outcome, decomposition) = match engine {
        Engine::EndToEnd => (run_e2e(instance, setting, suite, &config.decoding)?, None, None, None),
        Engine::Modular(m) => {
            let run = m.run(instance, setting, suite, Default::default())?;
            (run.prediction, Some(run.program), Some(run.outcome), None)
        }
        Engine::Successive(s) => {
            let (p, d) = s.run(instance, setting, suite).map_err(|f| f.source)?;
            (p, None, None, Some(d))
        }
    };
    let answer = prediction.answer_text.clone();
    let mut scores = InstanceScores::default();
    match setting {
        Setting::DirectAnswer => {
            scores.vqa_accuracy = vqa_accuracy(&answer, &instance.answers, config.normalize).ok();
            if let [single] = instance.answers.as_slice() {
                scores.exact_match = Some(exact_match(&answer, single, config.normalize));
            }
            if config.judge {
                let j = llm_judge(
                    suite.instruct_lm.as_ref(),
                    &instance.question,
                    &instance.answers,
                    &answer,
                    false,
                    &mut prediction.trace,
                )
                .map_err(|e| e.into_backend())?;
                scores.judge = Some(j);
            }
        }
        Setting::MultipleChoice => {
            if let (Some(choices), Some(i)) = (instance.choices.as_deref(), instance.correct_index()) {
                // an unmapped program result is not a choice and scores zero
                scores.mc_accuracy = Some(mc_accuracy(&answer, choices, i).unwrap_or(0.0));
            }
        }
    }
    Ok(InstanceRecord {
        id: instance.id.clone(),
        question_type: instance.question_type.clone(),
        prediction,
        scores,
        program,
        outcome,
        decomposition,
    })
}

/// Worker count: the configured value, else the machine's parallelism.
pub fn effective_jobs(jobs: Option<usize>) -> usize {
    jobs.filter(|j| *j > 0).unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

/// Evaluates every instance. The first failure in input order is reported.
pub fn evaluate_all(
    instances: &[BenchmarkInstance],
    config: &RunConfig,
    engine: &Engine,
    suite: &BackendSuite,
    jobs: usize,
) -> Result<Vec<InstanceRecord>, RunError> {
    let results = map_instances(instances, jobs, |i| evaluate_instance(i, config, engine, suite));
    instances
        .iter()
        .zip(results)
        .map(|(inst, r)| r.map_err(|source| RunError::Instance { id: inst.id.clone(), source }))
        .collect()
}

#[cfg(feature = "parallel")]
fn map_instances<T, F>(instances: &[BenchmarkInstance], jobs: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(&BenchmarkInstance) -> T + Sync,
{
    use rayon::prelude::*;
    if jobs <= 1 {
        return instances.iter().map(f).collect();
    }
    match rayon::ThreadPoolBuilder::new().num_threads(jobs).build() {
        Ok(pool) => pool.install(|| instances.par_iter().map(&f).collect()),
        Err(e) => {
            tracing::warn!(error = %e, "cannot start worker pool, running sequentially");
            instances.iter().map(f).collect()
        }
    }
}

#[cfg(not(feature = "parallel"))]
fn map_instances<T, F>(instances: &[BenchmarkInstance], _jobs: usize, f: F) -> Vec<T>
where
    F: Fn(&BenchmarkInstance) -> T,
{
    instances.iter().map(f).collect()
}

/// Loads the dataset, applies the seeded sample, evaluates and builds the
/// report.
pub fn run(config: &RunConfig, token: Option<String>) -> Result<Report, RunError> {
    let start = Instant::now();
    let engine = Engine::from_config(config)?;
    let mut instances = load_dataset(&config.dataset, config.setting)?;
    if let Some(n) = config.limit {
        instances = sample(&instances, n.min(instances.len()), config.seed)?;
    }
    let (counted, counter) = base_suite(&config.backends, token)?.counted();
    let suite = match &config.cache {
        Some(dir) => with_cache(&counted, dir)?,
        None => counted,
    };
    let jobs = effective_jobs(config.jobs);
    let records = evaluate_all(&instances, config, &engine, &suite, jobs)?;
    let stats = RunStats {
        elapsed_ms: start.elapsed().as_millis() as u64,
        backend_calls: counter.load(Ordering::SeqCst),
        jobs,
    };
    tracing::info!(instances = records.len(), backend_calls = stats.backend_calls, "run finished");
    Ok(Report::new(config.clone(), records, stats))
}
