//! Command-line entry point: run evaluations, render reports, validate
//! datasets.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use serde::Deserialize;
use vqdecomp::analysis::{TableFormat, DEFAULT_MIN_TYPE_COUNT};
use vqdecomp::backends::remote::TOKEN_ENV;
use vqdecomp::config::RunConfig;
use vqdecomp::dataset::validate_dataset;
use vqdecomp::instance::Setting;
use vqdecomp::report::Report;
use vqdecomp::runner;

#[derive(Parser, Debug)]
#[command(
    name = "vqdecomp",
    version,
    about = "Evaluate end-to-end, program-based and successive-prompting VQA strategies"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Evaluate one method over a dataset and write a report.
    Run(Box<RunArgs>),
    /// Render the tables of a saved report.
    Report(ReportArgs),
    /// Check a dataset file without running anything.
    Validate(ValidateArgs),
}

#[derive(clap::Args, Debug, Default)]
struct RunArgs {
    /// TOML file with run settings; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// e2e, viper or successive.
    #[arg(long)]
    method: Option<String>,
    /// task-agnostic, no-blip2, only-blip2-zs or only-blip2-fs.
    #[arg(long)]
    variant: Option<String>,
    /// direct or mc.
    #[arg(long)]
    setting: Option<String>,
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// mock:PATH or remote:URL.
    #[arg(long)]
    backends: Option<String>,
    /// Response cache directory.
    #[arg(long)]
    cache: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Evaluate a seeded sample of this many instances.
    #[arg(long)]
    limit: Option<usize>,
    /// Worker threads (default: all cores).
    #[arg(long)]
    jobs: Option<usize>,
    /// JSON list of few-shot demonstrations for the modular method.
    #[arg(long)]
    demos: Option<PathBuf>,
    /// Follow-up cap for the successive method.
    #[arg(long)]
    max_steps: Option<usize>,
    /// Also score direct answers with the language-model judge.
    #[arg(long)]
    judge: bool,
    /// Report path.
    #[arg(long)]
    out: PathBuf,
    /// Also write per-instance scores as CSV.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum View {
    Scores,
    Errors,
    Types,
    All,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Format {
    Text,
    Latex,
}

#[derive(clap::Args, Debug)]
struct ReportArgs {
    report: PathBuf,
    #[arg(long, value_enum, default_value = "all")]
    view: View,
    #[arg(long, value_enum, default_value = "text")]
    format: Format,
    /// Question types with fewer samples are left out of the type view.
    #[arg(long, default_value_t = DEFAULT_MIN_TYPE_COUNT)]
    min_type_count: usize,
    /// Write per-instance scores as CSV.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(clap::Args, Debug)]
struct ValidateArgs {
    dataset: PathBuf,
    /// direct or mc.
    #[arg(long, default_value = "direct")]
    setting: String,
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "warn".into()))
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(args) => cmd_run(&args),
        Command::Report(args) => cmd_report(&args),
        Command::Validate(args) => cmd_validate(&args),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

/// Config file settings with the flags laid over them.
fn resolve_config(args: &RunArgs) -> Result<RunConfig> {
    let mut table = match &args.config {
        Some(path) => {
            let raw = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            raw.parse::<toml::Table>().with_context(|| format!("parsing {}", path.display()))?
        }
        None => toml::Table::new(),
    };
    let base = args.config.as_deref().and_then(Path::parent).unwrap_or(Path::new(""));
    // paths in a config file are relative to the file
    for key in ["dataset", "cache", "demos", "successive_prompt"] {
        if let Some(toml::Value::String(p)) = table.get_mut(key) {
            *p = base.join(&*p).display().to_string();
        }
    }
    if let Some(toml::Value::String(spec)) = table.get_mut("backends") {
        if let Some(p) = spec.strip_prefix("mock:") {
            *spec = format!("mock:{}", base.join(p).display());
        }
    }
    let mut set = |key: &str, value: Option<toml::Value>| {
        if let Some(v) = value {
            table.insert(key.to_string(), v);
        }
    };
    let s = |v: &Option<String>| v.clone().map(toml::Value::String);
    let p = |v: &Option<PathBuf>| v.as_ref().map(|p| toml::Value::String(p.display().to_string()));
    let n = |v: Option<usize>| v.map(|n| toml::Value::Integer(n as i64));
    set("method", s(&args.method));
    set("variant", s(&args.variant));
    set("setting", s(&args.setting));
    set("dataset", p(&args.dataset));
    set("backends", s(&args.backends));
    set("cache", p(&args.cache));
    set("limit", n(args.limit));
    set("jobs", n(args.jobs));
    set("demos", p(&args.demos));
    set("max_steps", n(args.max_steps));
    if let Some(seed) = args.seed {
        let seed = i64::try_from(seed).context("--seed must fit in a signed 64-bit integer")?;
        set("seed", Some(toml::Value::Integer(seed)));
    }
    if args.judge {
        set("judge", Some(toml::Value::Boolean(true)));
    }
    RunConfig::deserialize(toml::Value::Table(table)).context("invalid run configuration")
}

fn cmd_run(args: &RunArgs) -> Result<ExitCode> {
    let config = resolve_config(args)?;
    let token = std::env::var(TOKEN_ENV).ok();
    let report = runner::run(&config, token)?;
    report.save(&args.out)?;
    if let Some(csv) = &args.csv {
        let file = std::fs::File::create(csv).with_context(|| format!("creating {}", csv.display()))?;
        report.write_csv(file)?;
    }
    print!("{}", report.render(TableFormat::Text, DEFAULT_MIN_TYPE_COUNT));
    println!("report written to {}", args.out.display());
    Ok(ExitCode::SUCCESS)
}

fn cmd_report(args: &ReportArgs) -> Result<ExitCode> {
    let report = Report::load(&args.report)?;
    let format = match args.format {
        Format::Text => TableFormat::Text,
        Format::Latex => TableFormat::Latex,
    };
    let text = match args.view {
        View::All => report.render(format, args.min_type_count),
        View::Scores => report.render_scores(),
        View::Errors => {
            if report.error_table.is_none() {
                bail!("report has no program outcomes (method {})", report.config.method);
            }
            report.render_errors(format)
        }
        View::Types => {
            let rows = report.type_breakdown(args.min_type_count);
            vqdecomp::analysis::render_type_table(&[(report.config.variant_label(), rows)], format)
        }
    };
    print!("{text}");
    if let Some(csv) = &args.csv {
        let file = std::fs::File::create(csv).with_context(|| format!("creating {}", csv.display()))?;
        report.write_csv(file)?;
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_validate(args: &ValidateArgs) -> Result<ExitCode> {
    let setting: Setting = args.setting.parse().map_err(anyhow::Error::msg)?;
    let diag = validate_dataset(&args.dataset, setting)?;
    for d in &diag.errors {
        println!("error: line {}: {}", d.line, d.message);
    }
    for d in &diag.warnings {
        println!("warning: line {}: {}", d.line, d.message);
    }
    println!("{} records, {} errors, {} warnings", diag.records, diag.errors.len(), diag.warnings.len());
    Ok(if diag.is_clean() { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}
