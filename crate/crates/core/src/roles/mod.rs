//! The agent roles as deterministic procedures around the gateway: analysis
//! of community artifacts, idea generation and memory, draft synthesis,
//! coding agents with their reports, evaluation-script synthesis, and the
//! iteration that ties them together.

mod analyzer;
mod coder;
mod coordinator;
mod evaluator;
mod iteration;
mod monitor;
mod proposer;

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::community::{ArtifactId, CommunityError};
use crate::llm::parse::{ComponentScore, ParseError};
use crate::llm::{Gateway, LlmError, Role};
use crate::sandbox::SandboxError;
use crate::text::normalize;

pub use analyzer::{analyze, extract_discussion_ideas};
pub use coder::{compile_report, run_coding_agent, AgentContext, AgentRun, CellSummary, StopReason};
pub use coordinator::{designate_baseline, public_pipelines, synthesize_drafts};
pub use evaluator::{synthesize_eval_scripts, EvalScripts, EvaluatorSetup, ScriptFailure};
pub use iteration::{
    run_iteration, AgentResult, IterationConfig, IterationEnv, IterationState, LoopState, PublishRecord, RunPaths, TaskContext,
};
pub use monitor::LlmMonitor;
pub use proposer::{brainstorm, refine_ideas};

/// Re-asks allowed after an unparseable reply.
pub const MAX_REASKS: usize = 2;
/// Characters of execution output fed back to a model.
pub const PROMPT_OUTPUT_LIMIT: usize = 20_000;

#[derive(Debug, Error)]
pub enum RoleError {
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error(transparent)]
    Sandbox(#[from] SandboxError),
    #[error(transparent)]
    Community(#[from] CommunityError),
    #[error(transparent)]
    Bundle(#[from] crate::bundle::BundleError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Invalid(String),
}

pub(crate) fn io_err(path: &std::path::Path) -> impl FnOnce(std::io::Error) -> RoleError + '_ {
    move |source| RoleError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// A warning or degradation recorded in the iteration transcript.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Note {
    pub phase: String,
    pub message: String,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Notes(pub Vec<Note>);

impl Notes {
    pub fn push(&mut self, phase: &str, message: impl Into<String>) {
        let message = message.into();
        tracing::warn!(phase, "{message}");
        self.0.push(Note {
            phase: phase.to_string(),
            message,
        });
    }

    pub fn extend(&mut self, other: Notes) {
        self.0.extend(other.0);
    }

    pub fn iter(&self) -> impl Iterator<Item = &Note> {
        self.0.iter()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IdeaOrigin {
    DiscussionExtract,
    Brainstorm,
    Refinement,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Idea {
    pub id: String,
    pub text: String,
    pub origin: IdeaOrigin,
    pub born_iteration: u32,
}

impl Idea {
    pub fn new(id: impl Into<String>, text: impl Into<String>, origin: IdeaOrigin, t: u32) -> Self {
        Self {
            id: id.into(),
            text: text.into(),
            origin,
            born_iteration: t,
        }
    }

    pub fn key(&self) -> String {
        normalize(&self.text)
    }
}

/// Builds ideas from texts, dropping empty and repeated (normalized) entries.
pub(crate) fn make_ideas(texts: Vec<String>, origin: IdeaOrigin, t: u32, prefix: &str) -> Vec<Idea> {
    let mut seen = BTreeSet::new();
    texts
        .into_iter()
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty() && seen.insert(normalize(s)))
        .enumerate()
        .map(|(i, text)| Idea::new(format!("{prefix}-{i:03}"), text, origin, t))
        .collect()
}

/// Persistent idea memory; insertion-ordered with no two entries sharing
/// normalized text.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IdeaPool {
    ideas: Vec<Idea>,
}

impl IdeaPool {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn ideas(&self) -> &[Idea] {
        &self.ideas
    }

    pub fn len(&self) -> usize {
        self.ideas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ideas.is_empty()
    }

    pub fn keys(&self) -> BTreeSet<String> {
        self.ideas.iter().map(Idea::key).collect()
    }

    pub fn contains_text(&self, text: &str) -> bool {
        let k = normalize(text);
        self.ideas.iter().any(|i| i.key() == k)
    }

    /// Numbered listing used in prompts.
    pub fn render(&self) -> String {
        render_ideas(&self.ideas)
    }
}

pub(crate) fn render_ideas(ideas: &[Idea]) -> String {
    if ideas.is_empty() {
        return "(none yet)".into();
    }
    ideas
        .iter()
        .enumerate()
        .map(|(i, idea)| format!("({i}) {}", idea.text))
        .collect::<Vec<_>>()
        .join("\n")
}

/// Union by normalized text: existing entries first, then new ones in
/// arrival order.
pub fn merge_memory(pool: &IdeaPool, fresh: &[Idea]) -> IdeaPool {
    let mut keys = pool.keys();
    let mut ideas = pool.ideas.clone();
    for idea in fresh {
        if keys.insert(idea.key()) {
            ideas.push(idea.clone());
        }
    }
    IdeaPool { ideas }
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ReportSubject {
    Artifact { id: ArtifactId },
    Draft { iteration: u32, draft: String },
}

impl fmt::Display for ReportSubject {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ReportSubject::Artifact { id } => write!(f, "{id}"),
            ReportSubject::Draft { iteration, draft } => write!(f, "iteration {iteration} draft {draft}"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub id: String,
    pub subject: ReportSubject,
    pub pipeline: String,
    pub code_abstract: String,
    pub components: Vec<ComponentScore>,
    pub weaknesses: String,
    /// Built without a parsed model reply.
    pub mechanical: bool,
}

impl Report {
    /// Clamps every score into [0, 10], noting each correction.
    pub(crate) fn clamp_scores(&mut self, notes: &mut Notes, phase: &str) {
        for c in &mut self.components {
            let name = c.name.clone();
            for s in c.scores_mut() {
                if !(0.0..=10.0).contains(s) {
                    let fixed = if s.is_nan() { 0.0 } else { s.clamp(0.0, 10.0) };
                    notes.push(phase, format!("{}: score {} for `{name}` clamped to {fixed}", self.id, *s));
                    *s = fixed;
                }
            }
        }
    }

    pub fn render(&self) -> String {
        let mut s = format!("Report {} on {}\nPipeline: {}\n", self.id, self.subject, self.pipeline);
        if !self.code_abstract.is_empty() {
            s += &format!("Code abstract:\n{}\n", self.code_abstract);
        }
        for c in &self.components {
            s += &format!(
                "- {}: novelty {}, feasibility {}, effectiveness {}, efficiency {}, confidence {}\n",
                c.name, c.novelty, c.feasibility, c.effectiveness, c.efficiency, c.confidence
            );
        }
        if !self.weaknesses.is_empty() {
            s += &format!("Weaknesses: {}\n", self.weaknesses);
        }
        s
    }
}

pub(crate) fn render_reports(reports: &[Report]) -> String {
    if reports.is_empty() {
        return "(none yet)".into();
    }
    reports.iter().map(Report::render).collect::<Vec<_>>().join("\n")
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SolutionDraft {
    pub id: String,
    pub description: String,
    pub code_abstract: String,
    pub is_baseline: bool,
    pub referenced_artifacts: BTreeSet<ArtifactId>,
}

const REASK_NOTE: &str = "\n\n## Format Problem\nYour previous reply could not be parsed";

/// Asks, parses, and re-asks up to `reasks` times on parse failure. Returns
/// `Ok(Err(last parse error))` when every attempt failed to parse; gateway
/// failures are hard errors.
pub(crate) fn ask_parsed<T>(
    gateway: &Gateway,
    role: Role,
    channel: &str,
    prompt: &str,
    reasks: usize,
    parse: impl Fn(&str) -> Result<T, ParseError>,
) -> Result<Result<T, ParseError>, LlmError> {
    let mut current = prompt.to_string();
    let mut last = None;
    for _ in 0..=reasks {
        let reply = gateway.ask(role, channel, current.clone())?;
        match parse(&reply) {
            Ok(v) => return Ok(Ok(v)),
            Err(e) => {
                current = format!("{prompt}{REASK_NOTE} ({}: {}). Reply again in exactly the required format.\n", e.schema, e.message);
                last = Some(e);
            }
        }
    }
    Ok(Err(last.expect("at least one attempt")))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn idea(text: &str) -> Idea {
        Idea::new(text, text, IdeaOrigin::Brainstorm, 1)
    }

    #[test]
    fn union_keeps_existing_order() {
        let pool = merge_memory(&IdeaPool::new(), &[idea("a"), idea("b")]);
        let next = merge_memory(&pool, &[idea("B "), idea("c")]);
        let texts: Vec<&str> = next.ideas().iter().map(|i| i.text.as_str()).collect();
        assert_eq!(texts, vec!["a", "b", "c"]);
        let same = merge_memory(&IdeaPool::new(), &[idea("x")]);
        assert_eq!(same.ideas(), &[idea("x")]);
    }

    #[test]
    fn make_ideas_dedups() {
        let got = make_ideas(vec!["Use  GBM".into(), "use gbm".into(), " ".into(), "tune".into()], IdeaOrigin::Refinement, 2, "t");
        assert_eq!(got.len(), 2);
        assert_eq!(got[1].id, "t-001");
    }

    #[test]
    fn clamping_is_noted() {
        let mut r = Report {
            id: "r".into(),
            subject: ReportSubject::Draft { iteration: 1, draft: "d0".into() },
            pipeline: "p".into(),
            code_abstract: String::new(),
            components: vec![ComponentScore {
                name: "x".into(),
                novelty: 15.0,
                feasibility: -1.0,
                effectiveness: 5.0,
                efficiency: 5.0,
                confidence: 5.0,
            }],
            weaknesses: String::new(),
            mechanical: false,
        };
        let mut notes = Notes::default();
        r.clamp_scores(&mut notes, "analyze");
        assert_eq!(r.components[0].novelty, 10.0);
        assert_eq!(r.components[0].feasibility, 0.0);
        assert_eq!(notes.len(), 2);
    }
}
