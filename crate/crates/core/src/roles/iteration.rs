//! One iteration of the loop: sample, analyze, ideate, draft, implement in
//! parallel, grade, publish.
//!
//! The iteration reads a [`LoopState`] and returns the next one; it never
//! mutates its input, so a failed iteration leaves the caller's state as it
//! was. Every iteration writes `iterations/NNN.json` whether or not it
//! completed.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::bundle::Grader;
use crate::community::{
    sample_artifacts, ArtifactId, CommunityLog, CommunitySnapshot, Kernel, Publishable, SamplingPolicy,
};
use crate::leaderboard::{select_best_run, RunRecord};
use crate::llm::parse::SolutionPath;
use crate::llm::Gateway;
use crate::num::Direction;
use crate::sandbox::{
    open_session, Budget, ExecStatus, GuestSpec, Monitor, Mount, ResourceLimits, RunClock, SessionConfig,
    DEFAULT_GRACE, DEFAULT_HANDSHAKE_TIMEOUT, DEFAULT_POLL_INTERVAL,
};

use super::coder::{compile_report, run_coding_agent, AgentContext, AgentRun, StopReason};
use super::{
    analyze, brainstorm, extract_discussion_ideas, io_err, merge_memory, public_pipelines, refine_ideas,
    synthesize_drafts, Idea, IdeaPool, LlmMonitor, Notes, Report, RoleError, SolutionDraft,
};

/// Layout of a run directory.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RunPaths {
    pub root: PathBuf,
}

impl RunPaths {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn config(&self) -> PathBuf {
        self.root.join("config.json")
    }

    pub fn community(&self) -> PathBuf {
        self.root.join("community")
    }

    pub fn iterations(&self) -> PathBuf {
        self.root.join("iterations")
    }

    pub fn iteration_file(&self, t: u32) -> PathBuf {
        self.iterations().join(format!("{t:03}.json"))
    }

    /// Per-agent sessions and kept submissions, relative to the root.
    pub fn agent_rel(&self, t: u32, i: usize) -> PathBuf {
        PathBuf::from("run").join(format!("iter_{t:03}")).join(format!("agent_{i}"))
    }

    pub fn agent(&self, t: u32, i: usize) -> PathBuf {
        self.root.join(self.agent_rel(t, i))
    }

    pub fn llm_log(&self) -> PathBuf {
        self.root.join("llm_log.jsonl")
    }

    pub fn submission(&self) -> PathBuf {
        self.root.join("submission.csv")
    }

    pub fn outcome(&self) -> PathBuf {
        self.root.join("outcome.json")
    }
}

/// What every agent is told about the task, plus where its work is graded.
#[derive(Clone, Debug)]
pub struct TaskContext {
    pub description: String,
    pub data_overview: String,
    pub grader: Grader,
    pub direction: Direction,
    /// Split `public/` tree mounted into every agent session.
    pub public_dir: PathBuf,
    /// Held-out validation labels.
    pub validation_truth: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationConfig {
    pub n_parallel: usize,
    pub n_drafts: usize,
    pub k_kernel: usize,
    pub k_discussion: usize,
    pub sampling: SamplingPolicy,
    pub budget: Budget,
    #[serde(with = "crate::sandbox::secs")]
    pub poll_interval: Duration,
    #[serde(with = "crate::sandbox::secs")]
    pub grace: Duration,
    #[serde(with = "crate::sandbox::secs")]
    pub handshake_timeout: Duration,
    pub guest: GuestSpec,
    pub limits: ResourceLimits,
    /// Ask the model whether long cells should keep running.
    pub llm_monitor: bool,
}

impl IterationConfig {
    pub fn new(guest: GuestSpec) -> Self {
        Self {
            n_parallel: 4,
            n_drafts: 4,
            k_kernel: 10,
            k_discussion: 10,
            sampling: SamplingPolicy::default(),
            budget: Budget::default(),
            poll_interval: DEFAULT_POLL_INTERVAL,
            grace: DEFAULT_GRACE,
            handshake_timeout: DEFAULT_HANDSHAKE_TIMEOUT,
            guest,
            limits: ResourceLimits::default(),
            llm_monitor: false,
        }
    }
}

/// State carried from one iteration to the next.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LoopState {
    /// Iterations completed so far.
    pub t: u32,
    pub snapshot: CommunitySnapshot,
    pub pool: IdeaPool,
    pub reports: Vec<Report>,
    /// Artifacts already read by the analyzer.
    pub analyzed: BTreeSet<ArtifactId>,
    pub records: Vec<RunRecord>,
    pub best_run: Option<String>,
}

impl LoopState {
    pub fn initial(snapshot: CommunitySnapshot) -> Self {
        Self {
            t: 0,
            snapshot,
            pool: IdeaPool::new(),
            reports: Vec::new(),
            analyzed: BTreeSet::new(),
            records: Vec::new(),
            best_run: None,
        }
    }

    pub fn best_record(&self) -> Option<&RunRecord> {
        let id = self.best_run.as_ref()?;
        self.records.iter().find(|r| &r.run_id == id)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PublishRecord {
    pub run_id: String,
    pub kernel: ArtifactId,
    pub score: f64,
    pub deps: BTreeSet<ArtifactId>,
    pub published_at: i64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentResult {
    pub agent: usize,
    pub draft_id: String,
    pub run: AgentRun,
    pub report: Report,
}

/// Transcript of one iteration, written to `iterations/NNN.json`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct IterationState {
    pub iteration: u32,
    pub snapshot_version: u64,
    pub sampled: Vec<ArtifactId>,
    pub analyzed: Vec<ArtifactId>,
    pub artifact_reports: Vec<Report>,
    pub discussion_ideas: Vec<Idea>,
    pub solution_paths: Vec<SolutionPath>,
    pub brainstormed: Vec<Idea>,
    pub refined: Vec<Idea>,
    pub memory: Vec<Idea>,
    pub drafts: Vec<SolutionDraft>,
    pub agents: Vec<AgentResult>,
    pub publishes: Vec<PublishRecord>,
    pub best_run: Option<String>,
    pub notes: Notes,
    pub completed: bool,
    pub error: Option<String>,
}

impl IterationState {
    pub fn write(&self, path: &Path) -> Result<(), RoleError> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(io_err(dir))?;
        }
        let text = serde_json::to_string_pretty(self).expect("iteration state serializes");
        fs::write(path, text + "\n").map_err(io_err(path))
    }

    pub fn read(path: &Path) -> Result<Self, RoleError> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        serde_json::from_str(&text).map_err(|e| RoleError::Invalid(format!("{}: {e}", path.display())))
    }
}

/// Shared, read-only inputs of one iteration.
pub struct IterationEnv<'a> {
    pub task: &'a TaskContext,
    pub config: &'a IterationConfig,
    pub gateway: &'a Gateway,
    pub paths: &'a RunPaths,
    pub clock: RunClock,
}

/// Runs iteration `state.t + 1`. On a hard failure the returned transcript
/// carries the error and the caller keeps `state`.
pub fn run_iteration(
    state: &LoopState,
    env: &IterationEnv<'_>,
    log: &mut CommunityLog,
) -> (IterationState, Result<LoopState, RoleError>) {
    let t = state.t + 1;
    let mut record = IterationState {
        iteration: t,
        snapshot_version: state.snapshot.version,
        ..IterationState::default()
    };
    let result = phases(state, env, log, &mut record);
    match &result {
        Ok(next) => {
            record.completed = true;
            record.best_run = next.best_run.clone();
        }
        Err(e) => {
            tracing::error!(iteration = t, "iteration aborted: {e}");
            record.error = Some(e.to_string());
        }
    }
    if let Err(e) = record.write(&env.paths.iteration_file(t)) {
        return (record, Err(e));
    }
    (record, result)
}

fn phases(
    state: &LoopState,
    env: &IterationEnv<'_>,
    log: &mut CommunityLog,
    rec: &mut IterationState,
) -> Result<LoopState, RoleError> {
    let t = rec.iteration;
    let cfg = env.config;
    let task = env.task;
    let gw = env.gateway;
    let mut notes = Notes::default();
    let mut next = state.clone();
    next.t = t;

    // sample
    let sample = sample_artifacts(&state.snapshot, cfg.sampling, cfg.k_kernel, cfg.k_discussion, task.direction);
    rec.sampled = sample.ids();
    tracing::info!(iteration = t, kernels = sample.kernels.len(), discussions = sample.discussions.len(), "sampled");

    // analyze what has not been read before
    let fresh_kernels: Vec<Kernel> = sample.kernels.iter().filter(|k| !state.analyzed.contains(&k.id)).cloned().collect();
    let fresh_discussions: Vec<_> =
        sample.discussions.iter().filter(|d| !state.analyzed.contains(&d.id)).cloned().collect();
    rec.analyzed = fresh_kernels.iter().map(|k| k.id.clone()).chain(fresh_discussions.iter().map(|d| d.id.clone())).collect();
    let artifact_reports = analyze(&fresh_kernels, &task.description, gw, t, &mut notes)?;
    rec.artifact_reports = artifact_reports.clone();
    next.analyzed.extend(rec.analyzed.iter().cloned());
    next.reports.extend(artifact_reports);
    rec.discussion_ideas = extract_discussion_ideas(&fresh_discussions, &task.description, gw, t, &mut notes)?;

    // ideate
    let pipelines = public_pipelines(&next.reports);
    let (paths, brainstormed) = brainstorm(&task.description, &next.reports, &state.pool, &pipelines, gw, t, &mut notes)?;
    rec.solution_paths = paths;
    rec.brainstormed = brainstormed.clone();
    let mut candidates = brainstormed;
    candidates.extend(rec.discussion_ideas.iter().cloned());
    rec.refined = refine_ideas(&candidates, &next.reports, &pipelines, gw, t, &mut notes)?;
    next.pool = merge_memory(&state.pool, &rec.refined);
    rec.memory = next.pool.ideas().to_vec();

    // draft
    let drafts = synthesize_drafts(
        &task.description,
        next.pool.ideas(),
        &next.reports,
        &pipelines,
        cfg.n_drafts,
        &state.snapshot,
        gw,
        t,
        &mut notes,
    )?;
    rec.drafts = drafts.clone();
    rec.notes = notes.clone();

    // implement, n_parallel at a time
    let mut agents = Vec::with_capacity(drafts.len());
    for (wave, chunk) in drafts.chunks(cfg.n_parallel.max(1)).enumerate() {
        let results: Vec<Result<(AgentResult, Notes), RoleError>> = thread::scope(|s| {
            let handles: Vec<_> = chunk
                .iter()
                .enumerate()
                .map(|(j, draft)| {
                    let i = wave * cfg.n_parallel.max(1) + j;
                    s.spawn(move || run_agent(i, draft, t, env))
                })
                .collect();
            handles.into_iter().map(|h| h.join().expect("agent thread panicked")).collect()
        });
        for r in results {
            let (result, agent_notes) = r?;
            notes.extend(agent_notes);
            agents.push(result);
        }
    }
    rec.agents = agents.clone();
    rec.notes = notes.clone();

    // reports always accrue, published or not
    for a in &agents {
        next.reports.push(a.report.clone());
        next.records.push(a.run.record.clone());
    }

    // publish graded runs in agent order
    let mut snapshot = state.snapshot.clone();
    for a in &agents {
        let record = &a.run.record;
        if !record.is_graded() {
            continue;
        }
        let score = record.validation_score.expect("graded run has a score");
        let draft = drafts.iter().find(|d| d.id == a.draft_id).expect("agent draft exists");
        let published_at = snapshot.latest_timestamp().unwrap_or(0) + 1;
        let deps: BTreeSet<ArtifactId> =
            draft.referenced_artifacts.iter().filter(|d| snapshot.graph().contains(d)).cloned().collect();
        let kernel = Kernel {
            id: ArtifactId::kernel(format!("agora-t{t:03}-{}", draft.id)),
            author_tier: Default::default(),
            votes: 0,
            public_score: Some(score),
            published_at,
            body: a.run.notebook.clone(),
            produced_files: record
                .submission_path
                .iter()
                .filter_map(|p| p.file_name().map(|f| f.to_string_lossy().into_owned()))
                .collect(),
        };
        let id = kernel.id.clone();
        snapshot = log.publish(&snapshot, Publishable::Kernel(kernel), &deps, Some(score))?;
        tracing::info!(iteration = t, kernel = %id, score, "published");
        rec.publishes.push(PublishRecord {
            run_id: record.run_id.clone(),
            kernel: id,
            score,
            deps,
            published_at,
        });
    }
    next.snapshot = snapshot;
    next.best_run = select_best_run(&next.records, task.direction).ok().map(|r| r.run_id.clone());
    rec.notes = notes;
    Ok(next)
}

fn run_agent(i: usize, draft: &SolutionDraft, t: u32, env: &IterationEnv<'_>) -> Result<(AgentResult, Notes), RoleError> {
    let cfg = env.config;
    let dir = env.paths.agent(t, i);
    let channel = format!("t{t:03}/agent{i}");
    let run_id = format!("t{t:03}-agent{i}");
    let mut notes = Notes::default();
    let mut sc = SessionConfig::new(run_id.clone(), cfg.guest.clone(), dir.join("session"));
    sc.mounts = vec![Mount {
        source: env.task.public_dir.clone(),
        at: String::new(),
    }];
    sc.budget = cfg.budget;
    sc.clock = env.clock;
    sc.limits = cfg.limits.clone();
    sc.handshake_timeout = cfg.handshake_timeout;
    sc.grace = cfg.grace;
    let llm_monitor = LlmMonitor::new(env.gateway, format!("{channel}/monitor"));
    let monitor: Option<&dyn Monitor> = cfg.llm_monitor.then_some(&llm_monitor as &dyn Monitor);

    let run = match open_session(sc) {
        Ok(mut session) => {
            let ctx = AgentContext {
                task_description: &env.task.description,
                data_overview: &env.task.data_overview,
                grader: &env.task.grader,
                validation_truth: &env.task.validation_truth,
                direction: env.task.direction,
                gateway: env.gateway,
                channel: channel.clone(),
                iteration: t,
                run_id: run_id.clone(),
                agent_dir: &dir,
                submission_record_path: env.paths.agent_rel(t, i).join("best_submission.csv"),
                monitor,
                poll_interval: cfg.poll_interval,
            };
            let run = run_coding_agent(draft, &mut session, &ctx);
            let transcript = session.close();
            let notebook = transcript
                .entries
                .iter()
                .filter(|e| e.status == ExecStatus::Ok)
                .map(|e| e.code.as_str())
                .collect::<Vec<_>>()
                .join("\n\n# %%\n\n");
            let mut run = run?;
            run.notebook = notebook;
            run
        }
        Err(e) => {
            notes.push("implement", format!("{run_id}: session failed to open: {e}"));
            AgentRun::failed(run_id, draft.id.clone(), t, StopReason::GuestDead, e.to_string())
        }
    };
    let report = compile_report(&run, draft, env.gateway, &channel, &mut notes)?;
    Ok((
        AgentResult {
            agent: i,
            draft_id: draft.id.clone(),
            run,
            report,
        },
        notes,
    ))
}
