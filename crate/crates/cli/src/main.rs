//! `agora`: prepare competition bundles, run the agent loop, grade
//! submissions, summarize runs and replay recorded ones.
//!
//! Exit codes: 0 success, 1 a check did not pass (replay mismatch),
//! 2 configuration error, 3 bundle defect, 4 infrastructure failure.

mod config;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use agora_core::bundle::{load_bundle, BundleError, CompetitionBundle, SplitOptions, Target, Violation};
use agora_core::fixtures::{toy_regression, toy_script};
use agora_core::leaderboard::{aggregate, format_rate, CompetitionOutcome};
use agora_core::run::{execute_run, replay_run, BackendConfig, RunConfig, RunError, RunOutcome, StopCause};
use agora_core::sandbox::{Budget, Dialect, GuestSpec};

use config::Overrides;

#[derive(Debug)]
pub enum Failure {
    Check(String),
    Config(String),
    Bundle(String),
    Infra(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Check(_) => 1,
            Failure::Config(_) => 2,
            Failure::Bundle(_) => 3,
            Failure::Infra(_) => 4,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Check(m) | Failure::Config(m) | Failure::Bundle(m) | Failure::Infra(m) => m,
        }
    }
}

impl From<BundleError> for Failure {
    fn from(e: BundleError) -> Self {
        match e {
            BundleError::Io { .. } => Failure::Infra(e.to_string()),
            _ => Failure::Bundle(e.to_string()),
        }
    }
}

impl From<RunError> for Failure {
    fn from(e: RunError) -> Self {
        match e {
            RunError::Config(m) => Failure::Config(m),
            RunError::Bundle(b) => b.into(),
            other => Failure::Infra(other.to_string()),
        }
    }
}

#[derive(Parser)]
#[command(name = "agora", version, about = "Community-augmented ML engineering agent loop")]
struct Cli {
    /// More log output on stderr; repeat for more.
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum TargetArg {
    Validation,
    Test,
}

impl From<TargetArg> for Target {
    fn from(t: TargetArg) -> Self {
        match t {
            TargetArg::Validation => Target::Validation,
            TargetArg::Test => Target::Test,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Split a bundle's training data into public/ and private/ and audit it.
    Prepare {
        bundle: PathBuf,
        /// Fraction of rows kept for training.
        #[arg(long, default_value_t = 0.9)]
        ratio: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Split root; defaults to the bundle directory.
        #[arg(long)]
        out: Option<PathBuf>,
        /// JSON report path; defaults to `<split root>/prepare_report.json`.
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Run the agent loop described by a TOML config.
    Run {
        #[arg(long, short)]
        config: PathBuf,
        /// Run directory; must not exist or be empty.
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
        /// Extra copy of `outcome.json`.
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Grade a submission against a bundle's withheld labels.
    Grade {
        bundle: PathBuf,
        submission: PathBuf,
        #[arg(long, value_enum, default_value = "test")]
        target: TargetArg,
        /// JSON report path; defaults to `<submission stem>.eval_report.json` beside it.
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Summarize finished runs into benchmark rates.
    Report {
        #[arg(required = true)]
        runs: Vec<PathBuf>,
        /// JSON summary path; defaults to `agora_report.json`.
        #[arg(long, default_value = "agora_report.json")]
        json: PathBuf,
    },
    /// Re-execute a recorded run from its model-call log and compare.
    Replay {
        run: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// JSON report path; defaults to `<out>/replay_report.json`.
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Write a toy bundle, a scripted backend and a config that runs them.
    Fixture {
        dir: PathBuf,
        #[arg(long, default_value_t = 120)]
        rows: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long, default_value_t = 2)]
        iterations: u32,
        #[arg(long, default_value_t = 2)]
        drafts: usize,
    },
    /// Serve the scripted test guest on stdin/stdout.
    #[command(hide = true)]
    GuestFake,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), Failure> {
    let text = serde_json::to_string_pretty(value).expect("report serializes") + "\n";
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Failure::Infra(format!("{}: {e}", parent.display())))?;
    }
    fs::write(path, text).map_err(|e| Failure::Infra(format!("{}: {e}", path.display())))
}

fn require_empty(dir: &Path) -> Result<(), Failure> {
    let busy = dir.exists() && fs::read_dir(dir).map(|mut d| d.next().is_some()).unwrap_or(true);
    if busy {
        return Err(Failure::Config(format!("{} exists and is not empty", dir.display())));
    }
    Ok(())
}

#[derive(Serialize)]
struct PrepareReport {
    split_root: PathBuf,
    seed: u64,
    ratio: f64,
    train_rows: usize,
    validation_rows: usize,
    stratified: bool,
    warnings: Vec<String>,
    violations: Vec<Violation>,
}

fn prepare(bundle: &Path, ratio: f64, seed: u64, out: Option<PathBuf>, json: Option<PathBuf>) -> Result<(), Failure> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Failure::Config("--ratio must lie strictly between 0 and 1".into()));
    }
    let mut b = load_bundle(bundle)?;
    if let Some(o) = out {
        b = b.with_split_root(o);
    }
    let options = SplitOptions {
        ratio,
        stratify_on: b.spec.stratify_column.clone(),
        seed,
    };
    let m = b.split(&options)?;
    let violations = b.audit();
    let report = PrepareReport {
        split_root: b.split_root().to_path_buf(),
        seed,
        ratio,
        train_rows: m.train_rows.len(),
        validation_rows: m.validation_inputs.len(),
        stratified: m.stratified,
        warnings: m.warnings.clone(),
        violations,
    };
    println!(
        "split {}: {} train rows, {} validation rows{}",
        b.spec.slug,
        report.train_rows,
        report.validation_rows,
        if report.stratified { ", stratified" } else { "" }
    );
    for w in &report.warnings {
        println!("warning: {w}");
    }
    for v in &report.violations {
        println!("leak: {}: {}", v.file, v.reason);
    }
    write_json(&json.unwrap_or_else(|| b.split_root().join("prepare_report.json")), &report)?;
    if !report.violations.is_empty() {
        return Err(Failure::Bundle(format!("{} leakage violation(s)", report.violations.len())));
    }
    Ok(())
}

fn describe_outcome(o: &RunOutcome) {
    let stop = match &o.stop {
        StopCause::RunWall => "run budget spent".to_string(),
        StopCause::MaxIterations => "iteration limit reached".to_string(),
        StopCause::Failure { iteration, error } => format!("iteration {iteration} failed: {error}"),
    };
    println!("{}: {} iteration(s), {stop}", o.slug, o.iterations_completed);
    println!("published kernels: {}", o.published);
    match (&o.best_run, o.validation_score) {
        (Some(r), Some(s)) => println!("best run: {r} (validation {s:.6})"),
        _ => println!("best run: none"),
    }
    match &o.test {
        Some(t) if t.success => println!("test score: {:.6}", t.score.unwrap_or(f64::NAN)),
        Some(t) => println!("test grading failed: {}", t.message),
        None => println!("no submission produced"),
    }
    let c = &o.competition;
    println!(
        "medal: {:?}, above median: {}, win rate: {}",
        c.medal,
        c.above_median,
        format_rate(c.win_rate)
    );
    for n in o.notes.iter() {
        println!("note [{}]: {}", n.phase, n.message);
    }
}

fn run(config_path: &Path, out: &Path, overrides: &Overrides, json: Option<PathBuf>) -> Result<(), Failure> {
    let mut cfg = config::load(config_path)?;
    overrides.apply(&mut cfg)?;
    cfg.validate()?;
    require_empty(out)?;
    load_bundle(&cfg.bundle)?;
    tracing::debug!(?cfg, "configuration accepted");
    let outcome = execute_run(&cfg, out)?;
    describe_outcome(&outcome);
    if let Some(j) = json {
        write_json(&j, &outcome)?;
    }
    if let StopCause::Failure { error, .. } = &outcome.stop {
        return Err(Failure::Infra(error.clone()));
    }
    Ok(())
}

fn grade(bundle: &Path, submission: &Path, target: Target, json: Option<PathBuf>) -> Result<(), Failure> {
    let b: CompetitionBundle = load_bundle(bundle)?;
    let report = b.grade_file(submission, target);
    if report.success {
        println!("{} {target} score: {:.6}", b.metric.name(), report.score.unwrap_or(f64::NAN));
    } else {
        println!("invalid submission: {}", report.message);
    }
    let default = || {
        let stem = submission.file_stem().unwrap_or_default().to_string_lossy();
        submission.with_file_name(format!("{stem}.eval_report.json"))
    };
    let path = json.unwrap_or_else(default);
    report.write(&path).map_err(|e| Failure::Infra(format!("{}: {e}", path.display())))
}

#[derive(Serialize)]
struct RunsReport {
    runs: Vec<CompetitionOutcome>,
    summary: agora_core::leaderboard::Summary,
}

fn report(runs: &[PathBuf], json: &Path) -> Result<(), Failure> {
    let mut outcomes = Vec::with_capacity(runs.len());
    for r in runs {
        let o = RunOutcome::read(&r.join("outcome.json")).map_err(|e| Failure::Config(e.to_string()))?;
        outcomes.push(o.competition);
    }
    let summary = aggregate(&outcomes).map_err(|e| Failure::Config(e.to_string()))?;
    for o in &outcomes {
        let score = o.score.map_or("-".to_string(), |s| format!("{s:.6}"));
        println!("{:<32} {score:>12}  {:?}", o.slug, o.medal);
    }
    println!("competitions: {}", summary.competitions);
    println!("valid submission: {}", format_rate(summary.valid_submission_rate));
    println!("above median: {}", format_rate(summary.above_median_rate));
    println!("any medal: {}", format_rate(summary.any_medal_rate));
    println!(
        "gold / silver / bronze: {} / {} / {}",
        format_rate(summary.gold_rate),
        format_rate(summary.silver_rate),
        format_rate(summary.bronze_rate)
    );
    println!("mean win rate: {}", format_rate(summary.mean_win_rate));
    write_json(json, &RunsReport { runs: outcomes, summary })
}

fn replay(recorded: &Path, out: &Path, json: Option<PathBuf>) -> Result<(), Failure> {
    if !recorded.join("llm_log.jsonl").is_file() {
        return Err(Failure::Config(format!("{} has no llm_log.jsonl", recorded.display())));
    }
    require_empty(out)?;
    let report = replay_run(recorded, out)?;
    if report.identical {
        println!("identical");
    } else {
        if let Some(d) = &report.divergence {
            println!("{d}");
        }
        for f in &report.differing_files {
            println!("differs: {f}");
        }
    }
    println!("live calls: {}", report.live_calls);
    write_json(&json.unwrap_or_else(|| out.join("replay_report.json")), &report)?;
    if report.identical {
        Ok(())
    } else {
        Err(Failure::Check("replay diverged from the recording".into()))
    }
}

fn fixture(dir: &Path, rows: usize, seed: u64, iterations: u32, drafts: usize) -> Result<(), Failure> {
    if rows < 20 || iterations == 0 || drafts == 0 {
        return Err(Failure::Config("need --rows >= 20 and positive --iterations and --drafts".into()));
    }
    require_empty(dir)?;
    let exe = std::env::current_exe().map_err(|e| Failure::Infra(e.to_string()))?;
    toy_regression(&dir.join("bundle"), rows, seed);
    let script = serde_json::to_string_pretty(&toy_script(iterations, drafts)).expect("script serializes");
    let infra = |p: &Path, e: std::io::Error| Failure::Infra(format!("{}: {e}", p.display()));
    fs::write(dir.join("script.json"), script).map_err(|e| infra(&dir.join("script.json"), e))?;

    let mut cfg = RunConfig::new("bundle", BackendConfig::Scripted { script: "script.json".into() });
    cfg.seed = seed;
    cfg.n_parallel = drafts;
    cfg.max_iterations = Some(iterations);
    cfg.poll_interval = Duration::from_secs(1);
    cfg.budget = Budget {
        run_wall: Duration::from_secs(600),
        session_wall: Duration::from_secs(120),
        cell_wall: Duration::from_secs(60),
        max_steps: 10,
    };
    cfg.guest = GuestSpec::new(exe, &["guest-fake"], Dialect::Fake);
    let text = toml::to_string_pretty(&cfg).map_err(|e| Failure::Infra(e.to_string()))?;
    fs::write(dir.join("run.toml"), text).map_err(|e| infra(&dir.join("run.toml"), e))?;
    println!("wrote {}/bundle, script.json and run.toml", dir.display());
    println!("next: agora run --config {}/run.toml --out <run dir>", dir.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if matches!(cli.command, Command::GuestFake) {
        // stdout carries protocol frames; nothing else may write to it
        return ExitCode::from(agora_core::sandbox::fake_guest::main_stdio().clamp(0, 255) as u8);
    }
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let filter = tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| level.into());
    tracing_subscriber::fmt().with_env_filter(filter).with_writer(std::io::stderr).init();

    let result = match cli.command {
        Command::Prepare { bundle, ratio, seed, out, json } => prepare(&bundle, ratio, seed, out, json),
        Command::Run { config, out, overrides, json } => run(&config, &out, &overrides, json),
        Command::Grade { bundle, submission, target, json } => grade(&bundle, &submission, target.into(), json),
        Command::Report { runs, json } => report(&runs, &json),
        Command::Replay { run, out, json } => replay(&run, &out, json),
        Command::Fixture { dir, rows, seed, iterations, drafts } => fixture(&dir, rows, seed, iterations, drafts),
        Command::GuestFake => unreachable!("handled above"),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("agora: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}
