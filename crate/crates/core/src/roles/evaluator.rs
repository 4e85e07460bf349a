//! Synthesis of the local split and scoring scripts.
//!
//! The model writes `split_dataset.py` and `evaluate.py` into a session's
//! working directory. Each script is run there and checked on the host: the
//! split must have the expected files, disjoint row sets and pass the leakage
//! audit; the scorer must write a well-formed `eval_report.json` whose score
//! agrees with the native grader on a probe submission. Failures are fed back
//! until both scripts pass or the round limit is hit.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::bundle::{audit_tree, EvalReport, Grader, Table, Target};
use crate::llm::parse::parse_script_response;
use crate::llm::templates::{EVALUATOR_FEEDBACK, EVALUATOR_SCRIPTS};
use crate::llm::{Gateway, Role};
use crate::sandbox::{ExecStatus, Session};
use crate::text::truncate_middle;

use super::{ask_parsed, io_err, Notes, RoleError, MAX_REASKS, PROMPT_OUTPUT_LIMIT};

pub const SPLIT_SCRIPT: &str = "split_dataset.py";
pub const EVAL_SCRIPT: &str = "evaluate.py";
const PROBE: &str = "probe_prediction.csv";
/// Relative tolerance between the script's score and the native one.
const SCORE_TOLERANCE: f64 = 1e-6;

pub struct EvaluatorSetup<'a> {
    pub task_description: &'a str,
    pub data_preview: &'a str,
    /// The data directory as the guest sees it.
    pub input_dir: &'a str,
    pub grader: &'a Grader,
    pub gateway: &'a Gateway,
    pub channel: String,
    /// Rounds allowed. A round is a pass at both scripts and ends early
    /// at the first failed check, so `n` rounds tolerate `n - 1` failures.
    pub max_rounds: u32,
    pub poll_interval: Duration,
}

/// Both scripts passed; the split lives under the session workspace.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalScripts {
    pub rounds: u32,
    pub public_dir: PathBuf,
    pub private_dir: PathBuf,
    pub split_source: String,
    pub eval_source: String,
    pub probe_score: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScriptFailure {
    pub rounds: u32,
    pub last_verdict: String,
}

fn ids_of(path: &Path, id_column: &str) -> Result<Vec<String>, String> {
    let t = Table::read(path).map_err(|e| e.to_string())?;
    let c = t.column(id_column).ok_or_else(|| format!("{} has no `{id_column}` column", path.display()))?;
    Ok(t.rows.iter().map(|r| r[c].trim().to_string()).collect())
}

/// Structural checks on a finished split. `Err` carries the verdict.
fn check_split(ws: &Path, grader: &Grader) -> Result<(), String> {
    let id = &grader.id_column;
    for f in ["public/train.csv", "public/validate.csv", "public/validate_sample_submission.csv", "private/validate.csv"] {
        if !ws.join(f).is_file() {
            return Err(format!("{f} was not created"));
        }
    }
    let train: BTreeSet<String> = ids_of(&ws.join("public/train.csv"), id)?.into_iter().collect();
    let vin = ids_of(&ws.join("public/validate.csv"), id)?;
    let vlab = ids_of(&ws.join("private/validate.csv"), id)?;
    if vin.is_empty() {
        return Err("the validation set is empty".into());
    }
    let vin_set: BTreeSet<String> = vin.iter().cloned().collect();
    if vin_set != vlab.iter().cloned().collect() {
        return Err("public/validate.csv and private/validate.csv list different ids".into());
    }
    if let Some(dup) = train.intersection(&vin_set).next() {
        return Err(format!("id {dup} is in both the training and validation rows"));
    }
    let labels = Table::read(&ws.join("private/validate.csv")).map_err(|e| e.to_string())?;
    if labels.column(&grader.target_column).is_none() {
        return Err(format!("private/validate.csv lacks the `{}` column", grader.target_column));
    }
    let violations = audit_tree(ws, id);
    if let Some(v) = violations.first() {
        return Err(format!("validation labels leak into public/{}: {}", v.file, v.reason));
    }
    Ok(())
}

/// The scorer must succeed on the sample validation submission and agree
/// with the native grade when there is one.
fn check_report(ws: &Path, grader: &Grader) -> Result<f64, String> {
    let report = EvalReport::read(&ws.join("private/eval_report.json"))?;
    let native = grader.grade_paths(&ws.join("private/validate.csv"), &ws.join(PROBE), Target::Validation);
    let Some(s) = report.score.filter(|s| s.is_finite() && report.success) else {
        return Err(format!("scoring the sample validation submission failed: {}", report.message));
    };
    if let Some(n) = native.score {
        let tol = SCORE_TOLERANCE * n.abs().max(1.0);
        if (s - n).abs() > tol {
            return Err(format!("reported score {s} differs from the expected {n:.6}"));
        }
    }
    Ok(s)
}

fn run_checked(session: &mut Session, cell: &str, goal: &str, poll: Duration) -> Result<(bool, String), RoleError> {
    let out = session.execute_cell(cell, goal, None, poll)?;
    let (text, _) = truncate_middle(&out.output, PROMPT_OUTPUT_LIMIT);
    Ok((out.status == ExecStatus::Ok, text))
}

/// Runs the round loop in `session`, whose input dir must hold the data.
pub fn synthesize_eval_scripts(
    session: &mut Session,
    setup: &EvaluatorSetup<'_>,
    notes: &mut Notes,
) -> Result<Result<EvalScripts, ScriptFailure>, RoleError> {
    let ws = session.workspace().to_path_buf();
    let mut conversation = EVALUATOR_SCRIPTS.fill(&[
        ("task_description", setup.task_description),
        ("data_preview", setup.data_preview),
        ("input_dir", setup.input_dir),
    ])?;
    let dialect = session.dialect();
    let mut split_ok = false;
    let mut eval_ok = false;
    let mut probe_score = None;
    let mut last_verdict = String::from("no reply yet");
    let mut failures = 0;
    let mut replies = 0;
    // each round needs at most two passing replies
    while failures < setup.max_rounds && replies < 2 * setup.max_rounds {
        replies += 1;
        let parsed = ask_parsed(setup.gateway, Role::Evaluator, &setup.channel, &conversation, MAX_REASKS, |r| {
            parse_script_response(r).map(|p| (r.to_string(), p))
        })?;
        let (reply, resp) = match parsed {
            Ok(v) => v,
            Err(e) => {
                last_verdict = format!("unparseable reply: {e}");
                failures += 1;
                break;
            }
        };
        conversation.push_str("\n\n## Your Reply\n");
        conversation.push_str(&reply);

        let (file, output, verdict, passed) = match (resp.current_file.as_deref(), resp.code.as_deref()) {
            (Some(file), Some(code)) => {
                let path = ws.join(file);
                fs::write(&path, code).map_err(io_err(&path))?;
                if file == SPLIT_SCRIPT {
                    // a new split invalidates an earlier scorer check
                    split_ok = false;
                    eval_ok = false;
                    let cell = dialect.run_script(
                        SPLIT_SCRIPT,
                        &[("input_dir", setup.input_dir), ("public_dir", "./public"), ("private_dir", "./private")],
                    );
                    let (ran, out) = run_checked(session, &cell, "run split_dataset.py", setup.poll_interval)?;
                    let verdict = if !ran {
                        "The script failed; fix the error shown above.".to_string()
                    } else {
                        match check_split(&ws, setup.grader) {
                            Ok(()) => {
                                split_ok = true;
                                "split_dataset.py passed every check.".to_string()
                            }
                            Err(why) => format!("split_dataset.py ran but is wrong: {why}."),
                        }
                    };
                    (file.to_string(), out, verdict, split_ok)
                } else if !split_ok {
                    (
                        file.to_string(),
                        String::new(),
                        "Write a working split_dataset.py first; evaluate.py needs its output.".to_string(),
                        false,
                    )
                } else {
                    let probe = ws.join(PROBE);
                    let sample = ws.join("public/validate_sample_submission.csv");
                    fs::copy(&sample, &probe).map_err(io_err(&sample))?;
                    let report = ws.join("private/eval_report.json");
                    if report.exists() {
                        fs::remove_file(&report).map_err(io_err(&report))?;
                    }
                    let cell = dialect.run_script(
                        EVAL_SCRIPT,
                        &[("public_dir", "./public"), ("private_dir", "./private"), ("pred", PROBE)],
                    );
                    let (ran, out) = run_checked(session, &cell, "run evaluate.py on a probe", setup.poll_interval)?;
                    let verdict = if !ran {
                        "The script failed; fix the error shown above.".to_string()
                    } else {
                        match check_report(&ws, setup.grader) {
                            Ok(score) => {
                                eval_ok = true;
                                probe_score = Some(score);
                                "evaluate.py passed every check.".to_string()
                            }
                            Err(why) => format!("evaluate.py ran but is wrong: {why}."),
                        }
                    };
                    (file.to_string(), out, verdict, eval_ok)
                }
            }
            _ => (
                "nothing".to_string(),
                String::new(),
                "Both scripts must pass their checks before you stop.".to_string(),
                false,
            ),
        };
        last_verdict = verdict.clone();
        if !passed {
            failures += 1;
        }
        if split_ok && eval_ok {
            let read = |f: &str| fs::read_to_string(ws.join(f)).map_err(io_err(&ws.join(f)));
            return Ok(Ok(EvalScripts {
                rounds: failures + 1,
                public_dir: ws.join("public"),
                private_dir: ws.join("private"),
                split_source: read(SPLIT_SCRIPT)?,
                eval_source: read(EVAL_SCRIPT)?,
                probe_score,
            }));
        }
        let feedback = EVALUATOR_FEEDBACK.fill(&[("file", &file), ("output", &output), ("verdict", &verdict)])?;
        conversation.push_str("\n\n");
        conversation.push_str(&feedback);
    }
    let rounds = failures.max(1);
    notes.push("evaluator", format!("scripts not accepted after {rounds} rounds: {last_verdict}"));
    Ok(Err(ScriptFailure { rounds, last_verdict }))
}
