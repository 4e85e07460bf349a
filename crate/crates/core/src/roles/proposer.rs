//! Idea generation: brainstormed solution paths and their refinement.

use crate::llm::parse::{parse_idea_list, parse_solution_paths, SolutionPath};
use crate::llm::templates::{BRAINSTORM, REFINE_IDEAS};
use crate::llm::{Gateway, Role};
use crate::text::normalize;

use super::{
    ask_parsed, make_ideas, render_ideas, render_reports, Idea, IdeaOrigin, IdeaPool, Notes, Report, RoleError,
};

/// Minimum number of solution paths asked for.
pub const MIN_PATHS: usize = 4;

/// Candidate ideas from brainstormed paths, excluding anything already in
/// the pool. Returns the parsed paths alongside for the transcript.
pub fn brainstorm(
    task_description: &str,
    reports: &[Report],
    pool: &IdeaPool,
    public_pipelines: &str,
    gateway: &Gateway,
    t: u32,
    notes: &mut Notes,
) -> Result<(Vec<SolutionPath>, Vec<Idea>), RoleError> {
    let prompt = BRAINSTORM.fill(&[
        ("task_description", task_description),
        ("ideas", &pool.render()),
        ("reports", &render_reports(reports)),
        ("public_pipelines", public_pipelines),
    ])?;
    let channel = format!("t{t:03}/brainstorm");
    let mut paths = match ask_parsed(gateway, Role::Proposer, &channel, &prompt, 0, parse_solution_paths)? {
        Ok(p) => p,
        Err(e) => {
            notes.push("ideate", format!("brainstorm reply unparseable: {e}"));
            Vec::new()
        }
    };
    if paths.len() < MIN_PATHS {
        let again = format!(
            "{prompt}\n\n## Format Problem\nOnly {} solution path(s) could be read; at least {MIN_PATHS} are required.\n",
            paths.len()
        );
        match ask_parsed(gateway, Role::Proposer, &channel, &again, 0, parse_solution_paths)? {
            Ok(p) if p.len() > paths.len() => paths = p,
            Ok(_) => {}
            Err(e) => notes.push("ideate", format!("brainstorm re-ask unparseable: {e}")),
        }
        if paths.len() < MIN_PATHS {
            notes.push("ideate", format!("accepted {} solution path(s)", paths.len()));
        }
    }
    let known = pool.keys();
    let texts: Vec<String> = paths
        .iter()
        .flat_map(|p| p.ideas.iter().cloned())
        .filter(|i| !known.contains(&normalize(i)))
        .collect();
    let ideas = make_ideas(texts, IdeaOrigin::Brainstorm, t, &format!("i{t:03}-brain"));
    Ok((paths, ideas))
}

/// Merges and filters candidates into this iteration's idea set. Falls back
/// to mechanical de-duplication when the reply never parses.
pub fn refine_ideas(
    candidates: &[Idea],
    reports: &[Report],
    public_pipelines: &str,
    gateway: &Gateway,
    t: u32,
    notes: &mut Notes,
) -> Result<Vec<Idea>, RoleError> {
    if candidates.is_empty() {
        return Ok(Vec::new());
    }
    let prompt = REFINE_IDEAS.fill(&[
        ("ideas", &render_ideas(candidates)),
        ("reports", &render_reports(reports)),
        ("public_pipelines", public_pipelines),
    ])?;
    let channel = format!("t{t:03}/refine");
    let prefix = format!("i{t:03}-ref");
    match ask_parsed(gateway, Role::Proposer, &channel, &prompt, super::MAX_REASKS, parse_idea_list)? {
        Ok(texts) => Ok(make_ideas(texts, IdeaOrigin::Refinement, t, &prefix)),
        Err(e) => {
            notes.push("ideate", format!("refinement unparseable, using de-duplicated candidates: {e}"));
            let texts = candidates.iter().map(|i| i.text.clone()).collect();
            Ok(make_ideas(texts, IdeaOrigin::Refinement, t, &prefix))
        }
    }
}
