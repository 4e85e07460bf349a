//! The coding agent: a step-bounded loop of model-written cells run in one
//! persistent session, with every validation submission graded on the host.

use std::fs;
use std::path::{Component, Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::bundle::{EvalReport, Grader, Target};
use crate::leaderboard::RunRecord;
use crate::llm::parse::{parse_cell_response, parse_report, CellResponse};
use crate::llm::templates::{CODER_FIRST_CELL, CODER_REPORT, CODER_REVISION};
use crate::llm::{Gateway, Role};
use crate::num::Direction;
use crate::sandbox::{BudgetCheck, ExecStatus, ExecutionOutcome, Monitor, SandboxError, Session};
use crate::text::truncate_middle;

use super::{ask_parsed, io_err, Notes, Report, ReportSubject, RoleError, SolutionDraft, MAX_REASKS, PROMPT_OUTPUT_LIMIT};

/// Everything an agent needs besides its draft and session.
pub struct AgentContext<'a> {
    pub task_description: &'a str,
    pub data_overview: &'a str,
    pub grader: &'a Grader,
    pub validation_truth: &'a Path,
    pub direction: Direction,
    pub gateway: &'a Gateway,
    /// Channel prefix for this agent's model calls.
    pub channel: String,
    pub iteration: u32,
    pub run_id: String,
    /// Where the best test submission is kept.
    pub agent_dir: &'a Path,
    /// `agent_dir/best_submission.csv` as recorded in the run record.
    pub submission_record_path: PathBuf,
    pub monitor: Option<&'a dyn Monitor>,
    pub poll_interval: Duration,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Finished,
    StepLimit,
    SessionBudget,
    RunBudget,
    GuestDead,
    FormatFailure,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub step: u32,
    pub goal: String,
    pub status: ExecStatus,
    pub validation_submission: Option<String>,
    pub submission: Option<String>,
    pub validation: Option<EvalReport>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentRun {
    pub record: RunRecord,
    pub steps: u32,
    pub stop: StopReason,
    pub cells: Vec<CellSummary>,
    pub failure: Option<String>,
    /// The linearized exchange, kept for the closing report.
    #[serde(skip)]
    pub conversation: String,
    /// Code of the cells that ran cleanly, in order.
    #[serde(skip)]
    pub notebook: String,
}

impl AgentRun {
    /// A run that never got to execute anything.
    pub fn failed(run_id: String, draft_id: String, iteration: u32, stop: StopReason, why: String) -> Self {
        Self {
            record: RunRecord {
                run_id,
                draft_id,
                iteration,
                validation_score: None,
                reports: Vec::new(),
                submission_path: None,
            },
            steps: 0,
            stop,
            cells: Vec::new(),
            failure: Some(why),
            conversation: String::new(),
            notebook: String::new(),
        }
    }

    pub fn last_goal(&self) -> Option<&str> {
        self.cells.last().map(|c| c.goal.as_str())
    }

    pub fn any_ok_cell(&self) -> bool {
        self.cells.iter().any(|c| c.status == ExecStatus::Ok)
    }
}

fn status_note(outcome: &ExecutionOutcome) -> String {
    match outcome.status {
        ExecStatus::Ok => "The cell finished without errors.".into(),
        ExecStatus::Error => "The cell raised an error; the traceback ends the output.".into(),
        ExecStatus::Timeout => "The cell was stopped at its time limit.".into(),
        ExecStatus::KilledByMonitor => format!(
            "The cell was stopped by the monitor: {}",
            outcome.monitor_note.as_deref().unwrap_or("no reason given")
        ),
        ExecStatus::GuestDead => "The execution environment died.".into(),
    }
}

/// A submission name must stay inside the working directory.
fn workspace_file(workspace: &Path, name: &str) -> Option<PathBuf> {
    let p = Path::new(name);
    let plain = p.components().all(|c| matches!(c, Component::Normal(_) | Component::CurDir));
    (plain && !name.is_empty()).then(|| workspace.join(p))
}

/// Drives one draft to completion. Sandbox death ends this agent only and is
/// recorded, not raised; gateway failures are raised.
pub fn run_coding_agent(
    draft: &SolutionDraft,
    session: &mut Session,
    ctx: &AgentContext<'_>,
) -> Result<AgentRun, RoleError> {
    let first = CODER_FIRST_CELL.fill(&[
        ("task_description", ctx.task_description),
        ("pipeline", &draft.description),
        ("data_overview", ctx.data_overview),
    ])?;
    let channel = format!("{}/coder", ctx.channel);
    let mut conversation = first;
    let mut run = AgentRun::failed(ctx.run_id.clone(), draft.id.clone(), ctx.iteration, StopReason::Finished, String::new());
    run.failure = None;
    let best_path = ctx.agent_dir.join("best_submission.csv");
    fs::create_dir_all(ctx.agent_dir).map_err(io_err(ctx.agent_dir))?;

    loop {
        if session.steps() >= session.budget().max_steps {
            run.stop = StopReason::StepLimit;
            break;
        }
        match session.check_budget() {
            BudgetCheck::Within => {}
            BudgetCheck::SessionExhausted => {
                run.stop = StopReason::SessionBudget;
                break;
            }
            BudgetCheck::RunExhausted => {
                run.stop = StopReason::RunBudget;
                break;
            }
        }
        let parsed = ask_parsed(ctx.gateway, Role::Coder, &channel, &conversation, MAX_REASKS, |reply| {
            parse_cell_response(reply).map(|c| (reply.to_string(), c))
        })?;
        let (reply, cell): (String, CellResponse) = match parsed {
            Ok(v) => v,
            Err(e) => {
                run.stop = StopReason::FormatFailure;
                run.failure = Some(e.to_string());
                break;
            }
        };
        conversation.push_str("\n\n## Your Reply\n");
        conversation.push_str(&reply);
        let Some(code) = cell.code.as_deref() else {
            run.stop = StopReason::Finished;
            break;
        };
        let outcome = match session.execute_cell(code, &cell.goal, ctx.monitor, ctx.poll_interval) {
            Ok(o) => o,
            Err(SandboxError::StepLimit(_)) => {
                run.stop = StopReason::StepLimit;
                break;
            }
            Err(SandboxError::BudgetExhausted(check)) => {
                run.stop = if check == BudgetCheck::RunExhausted { StopReason::RunBudget } else { StopReason::SessionBudget };
                break;
            }
            Err(SandboxError::NotOpen(state)) => {
                run.stop = StopReason::GuestDead;
                run.failure = Some(format!("session {state:?}"));
                break;
            }
            Err(e) => return Err(e.into()),
        };
        run.steps = session.steps();

        let mut note = status_note(&outcome);
        let mut validation = None;
        if let (Some(vname), Some(tname), ExecStatus::Ok) =
            (cell.validation_submission.as_deref(), cell.submission.as_deref(), outcome.status)
        {
            let mut report = match workspace_file(session.workspace(), vname) {
                Some(p) => ctx.grader.grade_paths(ctx.validation_truth, &p, Target::Validation),
                None => EvalReport::failure(format!("`{vname}` is not a file name inside the working directory")),
            };
            // host paths would leak into prompts and make transcripts location-dependent
            report.message = report.message.replace(&session.workspace().display().to_string(), ".");
            if let Some(dir) = ctx.validation_truth.parent() {
                report.message = report.message.replace(&dir.display().to_string(), "<private>");
            }
            match (&report.score, report.success) {
                (Some(s), true) => note += &format!(" Validation score for {vname}: {s:.6}."),
                _ => note += &format!(" Validation grading failed: {}", report.message),
            }
            if let (Some(score), true) = (report.score, report.success) {
                let test_file = workspace_file(session.workspace(), tname).filter(|p| p.is_file());
                match test_file {
                    None => note += &format!(" Test submission `{tname}` was not found, so this result cannot be kept."),
                    Some(src) => {
                        let better = run
                            .record
                            .validation_score
                            .is_none_or(|best| ctx.direction.is_better(score, best));
                        if better {
                            fs::copy(&src, &best_path).map_err(io_err(&src))?;
                            run.record.validation_score = Some(score);
                            run.record.submission_path = Some(ctx.submission_record_path.clone());
                        }
                    }
                }
            }
            run.record.reports.push(report.clone());
            validation = Some(report);
        }
        run.cells.push(CellSummary {
            step: run.steps,
            goal: cell.goal.clone(),
            status: outcome.status,
            validation_submission: cell.validation_submission.clone(),
            submission: cell.submission.clone(),
            validation,
        });
        if outcome.status == ExecStatus::GuestDead || session.state() == crate::sandbox::SessionState::Dead {
            run.stop = StopReason::GuestDead;
            run.failure = Some("execution environment died".into());
            break;
        }
        let (output, _) = truncate_middle(&outcome.output, PROMPT_OUTPUT_LIMIT);
        // whole seconds keep prompts stable across runs
        let secs = outcome.wall_time.as_secs().to_string();
        let revision = CODER_REVISION.fill(&[("execution_time", &secs), ("status_note", &note), ("output", &output)])?;
        conversation.push_str("\n\n");
        conversation.push_str(&revision);
    }
    run.conversation = conversation;
    Ok(run)
}

fn mechanical_report(run: &AgentRun, draft: &SolutionDraft, id: String, subject: ReportSubject) -> Report {
    let pipeline = run
        .last_goal()
        .map(str::to_string)
        .unwrap_or_else(|| draft.description.lines().next().unwrap_or("").to_string());
    let weaknesses = match (&run.failure, run.record.validation_score) {
        (Some(f), _) => format!("stopped ({:?}): {f}", run.stop),
        (None, None) => format!("stopped ({:?}) without a graded submission", run.stop),
        (None, Some(s)) => format!("stopped ({:?}); best validation score {s:.6}", run.stop),
    };
    Report {
        id,
        subject,
        pipeline,
        code_abstract: String::new(),
        components: Vec::new(),
        weaknesses,
        mechanical: true,
    }
}

/// Closing report for a finished agent. Runs without a single clean cell,
/// and replies that never parse, get a mechanical report.
pub fn compile_report(
    run: &AgentRun,
    draft: &SolutionDraft,
    gateway: &Gateway,
    channel: &str,
    notes: &mut Notes,
) -> Result<Report, RoleError> {
    let id = format!("r{:03}-{}", run.record.iteration, draft.id);
    let subject = ReportSubject::Draft {
        iteration: run.record.iteration,
        draft: draft.id.clone(),
    };
    if !run.any_ok_cell() {
        return Ok(mechanical_report(run, draft, id, subject));
    }
    let prompt = format!("{}\n\n{}", run.conversation, CODER_REPORT.fill(&[])?);
    let ch = format!("{channel}/report");
    match ask_parsed(gateway, Role::Coder, &ch, &prompt, MAX_REASKS, parse_report)? {
        Ok(parsed) => {
            let mut r = Report {
                id,
                subject,
                pipeline: parsed.pipeline,
                code_abstract: parsed.code_abstract,
                components: parsed.components,
                weaknesses: parsed.weaknesses,
                mechanical: false,
            };
            r.clamp_scores(notes, "report");
            Ok(r)
        }
        Err(e) => {
            notes.push("report", format!("{id}: unparseable report, using a mechanical one: {e}"));
            Ok(mechanical_report(run, draft, id, subject))
        }
    }
}
