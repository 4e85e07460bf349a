//! Draft synthesis: turns ideas and reports into implementable pipelines.

use std::collections::BTreeSet;
use std::sync::LazyLock;

use regex::Regex;

use crate::community::{ArtifactId, CommunitySnapshot};
use crate::llm::parse::parse_draft_list;
use crate::llm::templates::SYNTHESIZE_DRAFTS;
use crate::llm::{Gateway, Role};

use super::{ask_parsed, render_ideas, render_reports, Idea, Notes, Report, ReportSubject, RoleError, SolutionDraft};

static ARTIFACT_REF: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"\b(kernel|dataset):([A-Za-z0-9_.\-]*[A-Za-z0-9_])").unwrap());
static FENCED: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?s)```[A-Za-z0-9_]*\n(.*?)```").unwrap());

/// Pipelines described by reports on community kernels, tagged with the
/// kernel id so drafts can cite them.
pub fn public_pipelines(reports: &[Report]) -> String {
    let listed: Vec<String> = reports
        .iter()
        .filter_map(|r| match &r.subject {
            ReportSubject::Artifact { id } => Some((id, r)),
            ReportSubject::Draft { .. } => None,
        })
        .enumerate()
        .map(|(i, (id, r))| {
            let mut s = format!("Public pipeline ({i}) from {id}:\nPipeline: {}\n", r.pipeline);
            if !r.code_abstract.is_empty() {
                s += &format!("Code abstract:\n{}\n", r.code_abstract);
            }
            s
        })
        .collect();
    if listed.is_empty() {
        "(none yet)".into()
    } else {
        listed.join("\n")
    }
}

/// Artifact ids cited in `text` that exist in the snapshot.
pub fn referenced_artifacts(text: &str, snapshot: &CommunitySnapshot) -> BTreeSet<ArtifactId> {
    ARTIFACT_REF
        .find_iter(text)
        .filter_map(|m| m.as_str().parse::<ArtifactId>().ok())
        .filter(|id| snapshot.graph().contains(id))
        .collect()
}

fn declares_baseline(d: &SolutionDraft) -> bool {
    let first = d.description.lines().next().unwrap_or("");
    // `kernel:linear-baseline` names an artifact, not this draft
    ARTIFACT_REF.replace_all(first, "").to_lowercase().contains("baseline")
}

/// Marks exactly one draft as the baseline: the single draft whose first
/// line mentions it, else the first draft.
pub fn designate_baseline(drafts: &mut [SolutionDraft], notes: &mut Notes) {
    let declared: Vec<usize> = drafts
        .iter()
        .enumerate()
        .filter(|(_, d)| declares_baseline(d))
        .map(|(i, _)| i)
        .collect();
    let pick = match declared.as_slice() {
        [one] => *one,
        [] => {
            if !drafts.is_empty() {
                notes.push("draft", "no draft declares itself the baseline; using the first");
            }
            0
        }
        _ => {
            notes.push("draft", format!("{} drafts declare baseline; using the first of them", declared.len()));
            declared[0]
        }
    };
    for (i, d) in drafts.iter_mut().enumerate() {
        d.is_baseline = i == pick;
    }
}

#[allow(clippy::too_many_arguments)]
pub fn synthesize_drafts(
    task_description: &str,
    ideas: &[Idea],
    reports: &[Report],
    public_pipelines: &str,
    n_drafts: usize,
    snapshot: &CommunitySnapshot,
    gateway: &Gateway,
    t: u32,
    notes: &mut Notes,
) -> Result<Vec<SolutionDraft>, RoleError> {
    if n_drafts == 0 {
        return Err(RoleError::Invalid("n_drafts must be at least 1".into()));
    }
    let n = n_drafts.to_string();
    let prompt = SYNTHESIZE_DRAFTS.fill(&[
        ("task_description", task_description),
        ("ideas", &render_ideas(ideas)),
        ("reports", &render_reports(reports)),
        ("public_pipelines", public_pipelines),
        ("num_pipes", &n),
    ])?;
    let channel = format!("t{t:03}/drafts");
    let mut texts = ask_parsed(gateway, Role::Coordinator, &channel, &prompt, 0, parse_draft_list)?.unwrap_or_default();
    if texts.len() < n_drafts {
        let again = format!(
            "{prompt}\n\n## Format Problem\nOnly {} pipeline(s) could be read; {n_drafts} are required, separated by ===SEPARATOR===.\n",
            texts.len()
        );
        if let Ok(more) = ask_parsed(gateway, Role::Coordinator, &channel, &again, 0, parse_draft_list)? {
            if more.len() > texts.len() {
                texts = more;
            }
        }
        if texts.len() < n_drafts {
            notes.push("draft", format!("proceeding with {} of {n_drafts} drafts", texts.len()));
        }
    }
    texts.truncate(n_drafts);
    let mut drafts: Vec<SolutionDraft> = texts
        .into_iter()
        .enumerate()
        .map(|(i, text)| SolutionDraft {
            id: format!("d{i}"),
            code_abstract: FENCED
                .captures(&text)
                .map(|c| c[1].trim_end().to_string())
                .unwrap_or_default(),
            referenced_artifacts: referenced_artifacts(&text, snapshot),
            description: text,
            is_baseline: false,
        })
        .collect();
    designate_baseline(&mut drafts, notes);
    Ok(drafts)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn draft(text: &str) -> SolutionDraft {
        SolutionDraft {
            id: "d".into(),
            description: text.into(),
            code_abstract: String::new(),
            is_baseline: false,
            referenced_artifacts: BTreeSet::new(),
        }
    }

    #[test]
    fn baseline_designation() {
        let mut notes = Notes::default();
        let mut ds = vec![draft("fancy"), draft("Baseline ridge\nmore")];
        designate_baseline(&mut ds, &mut notes);
        assert_eq!(ds.iter().map(|d| d.is_baseline).collect::<Vec<_>>(), [false, true]);
        assert!(notes.is_empty());

        let mut none = vec![draft("a"), draft("b")];
        designate_baseline(&mut none, &mut notes);
        assert!(none[0].is_baseline && !none[1].is_baseline);
        assert_eq!(notes.len(), 1);

        let mut many = vec![draft("x"), draft("baseline 1"), draft("baseline 2")];
        designate_baseline(&mut many, &mut notes);
        assert_eq!(many.iter().filter(|d| d.is_baseline).count(), 1);
        assert!(many[1].is_baseline);
    }

    #[test]
    fn references_must_exist() {
        let snap = CommunitySnapshot::empty();
        assert!(referenced_artifacts("uses kernel:abc.", &snap).is_empty());
    }
}
