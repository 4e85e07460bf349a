//! Reads community artifacts: kernels become scored reports, discussions are
//! distilled into ideas.

use crate::community::{Discussion, Kernel};
use crate::llm::parse::{parse_idea_list, parse_report};
use crate::llm::templates::{ANALYZE_KERNEL, EXTRACT_DISCUSSIONS};
use crate::llm::{Gateway, Role};
use crate::text::truncate_middle;

use super::{ask_parsed, make_ideas, Idea, IdeaOrigin, Notes, Report, ReportSubject, RoleError, MAX_REASKS, PROMPT_OUTPUT_LIMIT};

/// One report per kernel, in input order. Kernels whose replies never parse
/// are skipped and noted.
pub fn analyze(
    kernels: &[Kernel],
    task_description: &str,
    gateway: &Gateway,
    t: u32,
    notes: &mut Notes,
) -> Result<Vec<Report>, RoleError> {
    let mut reports = Vec::with_capacity(kernels.len());
    for k in kernels {
        let (body, _) = truncate_middle(&k.body, PROMPT_OUTPUT_LIMIT);
        let prompt = ANALYZE_KERNEL.fill(&[("task_description", task_description), ("public_kernels", &body)])?;
        let channel = format!("t{t:03}/analyze/{}", k.id);
        match ask_parsed(gateway, Role::Analyzer, &channel, &prompt, MAX_REASKS, parse_report)? {
            Ok(parsed) => {
                let mut r = Report {
                    id: format!("r{t:03}-{}", k.id),
                    subject: ReportSubject::Artifact { id: k.id.clone() },
                    pipeline: parsed.pipeline,
                    code_abstract: parsed.code_abstract,
                    components: parsed.components,
                    weaknesses: parsed.weaknesses,
                    mechanical: false,
                };
                r.clamp_scores(notes, "analyze");
                reports.push(r);
            }
            Err(e) => notes.push("analyze", format!("skipped {}: {e}", k.id)),
        }
    }
    Ok(reports)
}

fn render_discussion(d: &Discussion) -> String {
    let mut s = format!("### {} ({} votes)\n{}\n", d.id.key, d.votes, d.body.trim());
    for c in &d.comments {
        s += &format!("> {}\n", c.text.trim());
    }
    s
}

/// Ideas distilled from all discussions in one call; empty input makes no call.
pub fn extract_discussion_ideas(
    discussions: &[Discussion],
    task_description: &str,
    gateway: &Gateway,
    t: u32,
    notes: &mut Notes,
) -> Result<Vec<Idea>, RoleError> {
    if discussions.is_empty() {
        return Ok(Vec::new());
    }
    let joined = discussions.iter().map(render_discussion).collect::<Vec<_>>().join("\n");
    let (joined, _) = truncate_middle(&joined, PROMPT_OUTPUT_LIMIT);
    let prompt = EXTRACT_DISCUSSIONS.fill(&[("task_description", task_description), ("public_discussions", &joined)])?;
    let channel = format!("t{t:03}/discussions");
    match ask_parsed(gateway, Role::Analyzer, &channel, &prompt, MAX_REASKS, parse_idea_list)? {
        Ok(texts) => Ok(make_ideas(texts, IdeaOrigin::DiscussionExtract, t, &format!("i{t:03}-disc"))),
        Err(e) => {
            notes.push("analyze", format!("discussion ideas skipped: {e}"));
            Ok(Vec::new())
        }
    }
}
