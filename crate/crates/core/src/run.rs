//! A whole run: configuration, the run directory, the iteration loop, the
//! final submission and its post-hoc scoring, and replay of a recorded run.
//!
//! Files compared byte for byte between two runs of the same scripted
//! configuration: `iterations/*.json`, `community/log/*`, `submission.csv`,
//! `llm_log.jsonl` and `outcome.json`. Session directories under `run/` hold
//! timings and are not part of that set.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bundle::{load_bundle, BundleError, CompetitionBundle, EvalReport, SplitOptions, Target};
use crate::community::{init_community, CommunityError, CommunityLog, InitParams, SamplingPolicy};
use crate::leaderboard::CompetitionOutcome;
use crate::llm::{
    verify_log, Divergence, Gateway, LiveBackend, LiveConfig, LlmError, PriceTable, ReplayBackend, Script,
    ScriptedBackend, TokenUsage,
};
use crate::roles::{
    run_iteration, synthesize_eval_scripts, EvaluatorSetup, IterationConfig, IterationEnv, LoopState, Notes,
    RoleError, RunPaths, TaskContext,
};
use crate::sandbox::{
    open_session, secs, Budget, GuestSpec, Mount, ResourceLimits, RunClock, SandboxError, SessionConfig,
    DEFAULT_GRACE, DEFAULT_HANDSHAKE_TIMEOUT, DEFAULT_POLL_INTERVAL,
};
use crate::seed::derive_seed;

#[derive(Debug, Error)]
pub enum RunError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Bundle(#[from] BundleError),
    #[error(transparent)]
    Community(#[from] CommunityError),
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error(transparent)]
    Sandbox(#[from] SandboxError),
    #[error(transparent)]
    Role(#[from] RoleError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> RunError + '_ {
    move |source| RunError::Io {
        path: path.display().to_string(),
        source,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BackendConfig {
    Scripted { script: PathBuf },
    Replay { log: PathBuf },
    Live(LiveConfig),
}

impl BackendConfig {
    pub fn gateway(&self, prices: PriceTable) -> Result<Gateway, LlmError> {
        let backend: Box<dyn crate::llm::CompletionBackend> = match self {
            BackendConfig::Scripted { script } => Box::new(ScriptedBackend::new(Script::load(script)?)),
            BackendConfig::Replay { log } => Box::new(ReplayBackend::new(Gateway::read_log(log)?)),
            BackendConfig::Live(c) => Box::new(LiveBackend::new(c.clone())?),
        };
        Ok(Gateway::new(backend, prices))
    }
}

fn default_parallel() -> usize {
    4
}
fn default_k() -> usize {
    10
}
fn default_ratio() -> f64 {
    0.9
}
fn default_rounds() -> u32 {
    5
}
fn default_poll() -> Duration {
    DEFAULT_POLL_INTERVAL
}
fn default_grace() -> Duration {
    DEFAULT_GRACE
}
fn default_handshake() -> Duration {
    DEFAULT_HANDSHAKE_TIMEOUT
}
fn default_guest() -> GuestSpec {
    GuestSpec::new("python3", &["-u", "-m", "agora_runner"], crate::sandbox::Dialect::Python)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub bundle: PathBuf,
    pub backend: BackendConfig,
    #[serde(default)]
    pub prices: PriceTable,
    /// Root of every random stream in the run.
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_parallel")]
    pub n_parallel: usize,
    /// Drafts per iteration; `None` means one per parallel agent.
    #[serde(default)]
    pub n_drafts: Option<usize>,
    #[serde(default = "default_k")]
    pub k_kernel: usize,
    #[serde(default = "default_k")]
    pub k_discussion: usize,
    #[serde(default)]
    pub budget: Budget,
    #[serde(default)]
    pub sampling: SamplingPolicy,
    #[serde(default)]
    pub dataset_access: bool,
    /// Stop after this many iterations even with budget left.
    #[serde(default)]
    pub max_iterations: Option<u32>,
    #[serde(default = "default_ratio")]
    pub split_ratio: f64,
    /// Have the evaluator role write the split and scoring scripts instead of
    /// splitting natively.
    #[serde(default)]
    pub synthesize_eval_scripts: bool,
    #[serde(default = "default_rounds")]
    pub eval_max_rounds: u32,
    #[serde(default)]
    pub llm_monitor: bool,
    #[serde(default = "default_poll", with = "secs")]
    pub poll_interval: Duration,
    #[serde(default = "default_grace", with = "secs")]
    pub grace: Duration,
    #[serde(default = "default_handshake", with = "secs")]
    pub handshake_timeout: Duration,
    #[serde(default = "default_guest")]
    pub guest: GuestSpec,
    #[serde(default)]
    pub limits: ResourceLimits,
}

impl RunConfig {
    pub fn new(bundle: impl Into<PathBuf>, backend: BackendConfig) -> Self {
        Self {
            bundle: bundle.into(),
            backend,
            prices: PriceTable::default(),
            seed: 0,
            n_parallel: default_parallel(),
            n_drafts: None,
            k_kernel: default_k(),
            k_discussion: default_k(),
            budget: Budget::default(),
            sampling: SamplingPolicy::default(),
            dataset_access: false,
            max_iterations: None,
            split_ratio: default_ratio(),
            synthesize_eval_scripts: false,
            eval_max_rounds: default_rounds(),
            llm_monitor: false,
            poll_interval: default_poll(),
            grace: default_grace(),
            handshake_timeout: default_handshake(),
            guest: default_guest(),
            limits: ResourceLimits::default(),
        }
    }

    pub fn n_drafts(&self) -> usize {
        self.n_drafts.unwrap_or(self.n_parallel)
    }

    /// Checks everything that can be checked without touching the disk.
    pub fn validate(&self) -> Result<(), RunError> {
        let bad = |m: &str| Err(RunError::Config(m.to_string()));
        if self.n_parallel == 0 {
            return bad("n_parallel must be at least 1");
        }
        if self.n_drafts() == 0 {
            return bad("n_drafts must be at least 1");
        }
        if !(self.split_ratio > 0.0 && self.split_ratio < 1.0) {
            return bad("split_ratio must lie strictly between 0 and 1");
        }
        if self.max_iterations == Some(0) {
            return bad("max_iterations must be at least 1");
        }
        if self.eval_max_rounds == 0 {
            return bad("eval_max_rounds must be at least 1");
        }
        if self.poll_interval.is_zero() {
            return bad("poll_interval must be positive");
        }
        self.budget.validate().map_err(|e| RunError::Config(e.to_string()))
    }

    pub fn iteration_config(&self) -> IterationConfig {
        IterationConfig {
            n_parallel: self.n_parallel,
            n_drafts: self.n_drafts(),
            k_kernel: self.k_kernel,
            k_discussion: self.k_discussion,
            sampling: self.sampling,
            budget: self.budget,
            poll_interval: self.poll_interval,
            grace: self.grace,
            handshake_timeout: self.handshake_timeout,
            guest: self.guest.clone(),
            limits: self.limits.clone(),
            llm_monitor: self.llm_monitor,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "cause", rename_all = "snake_case")]
pub enum StopCause {
    RunWall,
    MaxIterations,
    Failure { iteration: u32, error: String },
}

/// Contents of `outcome.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunOutcome {
    pub slug: String,
    pub iterations_completed: u32,
    pub stop: StopCause,
    pub published: usize,
    pub best_run: Option<String>,
    pub validation_score: Option<f64>,
    /// `submission.csv` when a run produced one.
    pub submission: Option<String>,
    /// Post-hoc grade on the withheld test labels.
    pub test: Option<EvalReport>,
    pub competition: CompetitionOutcome,
    pub split: SplitSource,
    pub usage: TokenUsage,
    pub notes: Notes,
}

impl RunOutcome {
    pub fn read(path: &Path) -> Result<Self, RunError> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        serde_json::from_str(&text).map_err(|e| RunError::Config(format!("{}: {e}", path.display())))
    }

    pub fn is_failure(&self) -> bool {
        matches!(self.stop, StopCause::Failure { .. })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitSource {
    Native,
    Scripts { rounds: u32 },
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), RunError> {
    let text = serde_json::to_string_pretty(value).expect("value serializes");
    fs::write(path, text + "\n").map_err(io_err(path))
}

const OVERVIEW_ROWS: usize = 3;

/// Listing of `dir` as the guest sees it at `guest_path`, with the first rows
/// of every CSV at the top level.
pub fn describe_dir(dir: &Path, guest_path: &str) -> String {
    let mut out = format!("Files under {guest_path}:\n");
    let mut entries: Vec<PathBuf> = fs::read_dir(dir)
        .map(|rd| rd.filter_map(|e| e.ok().map(|e| e.path())).collect())
        .unwrap_or_default();
    entries.sort();
    for p in &entries {
        let name = p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        match fs::metadata(p) {
            Ok(m) if m.is_dir() => out += &format!("- {name}/\n"),
            Ok(m) => out += &format!("- {name} ({} bytes)\n", m.len()),
            Err(_) => {}
        }
    }
    for p in entries.iter().filter(|p| p.extension().is_some_and(|e| e == "csv")) {
        let Ok(text) = fs::read_to_string(p) else { continue };
        let name = p.file_name().unwrap().to_string_lossy();
        let rows = text.lines().count().saturating_sub(1);
        out += &format!("\n{guest_path}/{name}, {rows} rows:\n");
        for line in text.lines().take(OVERVIEW_ROWS + 1) {
            out += line;
            out.push('\n');
        }
    }
    out
}

/// Makes the validation split, natively or through the evaluator role.
fn prepare_split(
    cfg: &RunConfig,
    bundle: &CompetitionBundle,
    paths: &RunPaths,
    gateway: &Gateway,
    clock: RunClock,
    notes: &mut Notes,
) -> Result<(PathBuf, PathBuf, SplitSource), RunError> {
    if cfg.synthesize_eval_scripts {
        let mut sc = SessionConfig::new("evaluator", cfg.guest.clone(), paths.root.join("run").join("evaluator"));
        sc.mounts = vec![Mount {
            source: bundle.data_dir(),
            at: String::new(),
        }];
        // the split script needs the submission format beside the data
        if !bundle.data_dir().join("sample_submission.csv").exists() {
            sc.mounts.push(Mount {
                source: bundle.sample_submission(),
                at: String::new(),
            });
        }
        sc.budget = cfg.budget;
        sc.clock = clock;
        sc.limits = cfg.limits.clone();
        sc.handshake_timeout = cfg.handshake_timeout;
        sc.grace = cfg.grace;
        let mut session = open_session(sc)?;
        let grader = bundle.grader();
        let preview = describe_dir(session.input_dir(), "../input");
        let setup = EvaluatorSetup {
            task_description: &bundle.spec.description,
            data_preview: &preview,
            input_dir: "../input",
            grader: &grader,
            gateway,
            channel: "t000/evaluator".into(),
            max_rounds: cfg.eval_max_rounds,
            poll_interval: cfg.poll_interval,
        };
        let result = synthesize_eval_scripts(&mut session, &setup, notes)?;
        session.close();
        match result {
            Ok(scripts) => {
                return Ok((
                    scripts.public_dir,
                    scripts.private_dir.join("validate.csv"),
                    SplitSource::Scripts { rounds: scripts.rounds },
                ))
            }
            Err(f) => notes.push("split", format!("falling back to the native split: {}", f.last_verdict)),
        }
    }
    let split_bundle = bundle.clone().with_split_root(paths.root.join("split"));
    let options = SplitOptions {
        ratio: cfg.split_ratio,
        stratify_on: bundle.spec.stratify_column.clone(),
        seed: derive_seed(cfg.seed, "split"),
    };
    split_bundle.split(&options)?;
    if let Some(v) = split_bundle.audit().first() {
        return Err(BundleError::Split(format!("leak in {}: {}", v.file, v.reason)).into());
    }
    Ok((split_bundle.public_dir(), split_bundle.validation_truth(), SplitSource::Native))
}

/// Runs the loop into `out`, which must not exist or be empty.
pub fn execute_run(cfg: &RunConfig, out: &Path) -> Result<RunOutcome, RunError> {
    cfg.validate()?;
    let bundle = load_bundle(&cfg.bundle)?;
    let gateway = cfg.backend.gateway(cfg.prices)?;
    execute_with(cfg, &bundle, &gateway, out).map(|(o, _)| o)
}

/// Also hands back the error that stopped the loop, if any.
fn execute_with(
    cfg: &RunConfig,
    bundle: &CompetitionBundle,
    gateway: &Gateway,
    out: &Path,
) -> Result<(RunOutcome, Option<RoleError>), RunError> {
    if out.exists() && fs::read_dir(out).map_err(io_err(out))?.next().is_some() {
        return Err(RunError::Config(format!("run directory {} is not empty", out.display())));
    }
    let clock = RunClock::start();
    let paths = RunPaths::new(out);
    fs::create_dir_all(&paths.root).map_err(io_err(&paths.root))?;
    write_json(&paths.config(), cfg)?;
    let mut notes = Notes::default();

    let (public_dir, validation_truth, split) = prepare_split(cfg, bundle, &paths, gateway, clock, &mut notes)?;
    let raw = bundle.load_community()?;
    let snapshot = init_community(
        &raw,
        &InitParams {
            deadline: bundle.spec.deadline,
            k_kernel: cfg.k_kernel,
            k_discussion: cfg.k_discussion,
            dataset_access: cfg.dataset_access,
            direction: bundle.direction(),
        },
    )?;
    let mut log = CommunityLog::create(&paths.community(), &snapshot)?;
    let task = TaskContext {
        description: bundle.spec.description.clone(),
        data_overview: describe_dir(&public_dir, "../input"),
        grader: bundle.grader(),
        direction: bundle.direction(),
        public_dir,
        validation_truth,
    };
    let icfg = cfg.iteration_config();
    let env = IterationEnv {
        task: &task,
        config: &icfg,
        gateway,
        paths: &paths,
        clock,
    };

    let mut state = LoopState::initial(snapshot);
    let mut published = 0;
    let mut failure = None;
    let stop = loop {
        if cfg.max_iterations.is_some_and(|m| state.t >= m) {
            break StopCause::MaxIterations;
        }
        if clock.elapsed() >= cfg.budget.run_wall {
            break StopCause::RunWall;
        }
        let (record, result) = run_iteration(&state, &env, &mut log);
        match result {
            Ok(next) => {
                published += record.publishes.len();
                state = next;
                if let Some(src) = state.best_record().and_then(|r| r.submission_path.clone()) {
                    let src = paths.root.join(src);
                    fs::copy(&src, paths.submission()).map_err(io_err(&src))?;
                }
            }
            Err(e) => {
                let stop = StopCause::Failure {
                    iteration: record.iteration,
                    error: e.to_string(),
                };
                failure = Some(e);
                break stop;
            }
        }
    };
    gateway.write_log(&paths.llm_log())?;

    let best = state.best_record();
    let submission = paths.submission();
    let test = submission.is_file().then(|| bundle.grade_file(&submission, Target::Test));
    let test_score = test.as_ref().and_then(|r| r.score.filter(|_| r.success));
    let outcome = RunOutcome {
        slug: bundle.spec.slug.clone(),
        iterations_completed: state.t,
        stop,
        published,
        best_run: state.best_run.clone(),
        validation_score: best.and_then(|r| r.validation_score),
        submission: submission.is_file().then(|| "submission.csv".to_string()),
        test,
        competition: CompetitionOutcome::evaluate(
            bundle.spec.slug.clone(),
            test_score,
            &bundle.leaderboard,
            &bundle.medal_rule,
        ),
        split,
        usage: gateway.usage(),
        notes,
    };
    write_json(&paths.outcome(), &outcome)?;
    Ok((outcome, failure))
}

/// Files whose bytes must agree between two runs of one scripted config,
/// relative to the run root.
pub fn reproducible_files(root: &Path) -> Result<BTreeMap<String, Vec<u8>>, RunError> {
    let mut files = BTreeMap::new();
    for name in ["submission.csv", "llm_log.jsonl", "outcome.json"] {
        let p = root.join(name);
        if p.is_file() {
            files.insert(name.to_string(), fs::read(&p).map_err(io_err(&p))?);
        }
    }
    for dir in ["iterations", "community/log"] {
        let d = root.join(dir);
        if !d.is_dir() {
            continue;
        }
        for e in fs::read_dir(&d).map_err(io_err(&d))? {
            let p = e.map_err(io_err(&d))?.path();
            let name = format!("{dir}/{}", p.file_name().unwrap().to_string_lossy());
            files.insert(name, fs::read(&p).map_err(io_err(&p))?);
        }
    }
    Ok(files)
}

/// Names of files that differ or exist on one side only.
pub fn compare_runs(a: &Path, b: &Path) -> Result<Vec<String>, RunError> {
    let (fa, fb) = (reproducible_files(a)?, reproducible_files(b)?);
    let mut names: Vec<&String> = fa.keys().chain(fb.keys()).collect();
    names.sort();
    names.dedup();
    Ok(names.into_iter().filter(|n| fa.get(*n) != fb.get(*n)).cloned().collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplayReport {
    pub identical: bool,
    pub divergence: Option<Divergence>,
    pub differing_files: Vec<String>,
    pub live_calls: u64,
}

/// Re-executes the run recorded in `recorded` into `out`, answering every
/// model call from the recorded log.
pub fn replay_run(recorded: &Path, out: &Path) -> Result<ReplayReport, RunError> {
    let paths = RunPaths::new(recorded);
    let text = fs::read_to_string(paths.config()).map_err(io_err(&paths.config()))?;
    let mut cfg: RunConfig =
        serde_json::from_str(&text).map_err(|e| RunError::Config(format!("{}: {e}", paths.config().display())))?;
    let records = Gateway::read_log(&paths.llm_log())?;
    if let Err(d) = verify_log(&records) {
        return Ok(ReplayReport {
            identical: false,
            divergence: Some(d),
            differing_files: Vec::new(),
            live_calls: 0,
        });
    }
    cfg.backend = BackendConfig::Replay { log: paths.llm_log() };
    cfg.validate()?;
    let bundle = load_bundle(&cfg.bundle)?;
    let records_len = records.len();
    let gateway = Gateway::new(Box::new(ReplayBackend::new(records)), cfg.prices);
    let (_, failure) = execute_with(&cfg, &bundle, &gateway, out)?;
    let divergence = match failure {
        Some(RoleError::Llm(LlmError::Diverged { index, channel, seq, reason })) => Some(Divergence {
            index,
            channel,
            seq,
            reason,
        }),
        Some(RoleError::Llm(LlmError::NotRecorded { channel, seq })) => Some(Divergence {
            index: records_len,
            channel,
            seq,
            reason: "call was never recorded".into(),
        }),
        _ => None,
    };
    let differing_files = compare_runs(recorded, out)?;
    Ok(ReplayReport {
        identical: divergence.is_none() && differing_files.is_empty(),
        divergence,
        differing_files,
        live_calls: gateway.live_calls(),
    })
}
