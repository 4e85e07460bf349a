//! Role prompt templates.
//!
//! Placeholders are written `{{name}}`. Rendering is a single pass, so text
//! substituted into a template is never re-expanded.

use std::collections::BTreeMap;

use super::LlmError;

/// Marker introducing the n-th solution path in a brainstorm response.
pub fn solution_path_marker(n: usize) -> String {
    format!("===SOLUTION_PATH_{n}===")
}

pub const SEPARATOR: &str = "===SEPARATOR===";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Template {
    pub name: &'static str,
    pub text: &'static str,
}

impl Template {
    /// Placeholder names in order of first appearance.
    pub fn placeholders(&self) -> Vec<&'static str> {
        let mut out = Vec::new();
        let mut rest = self.text;
        while let Some(start) = rest.find("{{") {
            let after = &rest[start + 2..];
            let Some(end) = after.find("}}") else { break };
            let name = &after[..end];
            if is_ident(name) && !out.contains(&name) {
                out.push(name);
            }
            rest = &after[end + 2..];
        }
        out
    }

    pub fn render(&self, vars: &BTreeMap<&str, String>) -> Result<String, LlmError> {
        let mut out = String::with_capacity(self.text.len());
        let mut rest = self.text;
        while let Some(start) = rest.find("{{") {
            out.push_str(&rest[..start]);
            let after = &rest[start + 2..];
            match after.find("}}") {
                Some(end) if is_ident(&after[..end]) => {
                    let name = &after[..end];
                    let value = vars.get(name).ok_or_else(|| LlmError::MissingPlaceholder {
                        template: self.name.into(),
                        name: name.into(),
                    })?;
                    out.push_str(value);
                    rest = &after[end + 2..];
                }
                _ => {
                    out.push_str("{{");
                    rest = after;
                }
            }
        }
        out.push_str(rest);
        Ok(out)
    }

    /// Shorthand taking `(name, value)` pairs.
    pub fn fill(&self, pairs: &[(&str, &str)]) -> Result<String, LlmError> {
        let vars = pairs.iter().map(|(k, v)| (*k, v.to_string())).collect();
        self.render(&vars)
    }
}

fn is_ident(s: &str) -> bool {
    !s.is_empty() && s.chars().all(|c| c.is_ascii_alphanumeric() || c == '_')
}

#[cfg(test)]
const INTRO: &str = "## Introduction\nYou are a seasoned machine learning practitioner competing in the data science challenge below.\n";

pub const ANALYZE_KERNEL: Template = Template {
    name: "analyze_kernel",
    text: concat!(
        "## Introduction\nYou are a seasoned machine learning practitioner competing in the data science challenge below.\n",
        "\n## Task Description\n{{task_description}}\n",
        "\n## Goals\nThe notebook below was shared publicly while the challenge was running.\n",
        "1. Study it end to end.\n",
        "2. If it is a complete solution, describe its pipeline, keeping every feature engineering and tuning detail.\n",
        "3. Pick a code excerpt that shows how data is read and how the submission file is written.\n",
        "4. Break the pipeline into components and rate each one.\n",
        "\n## Public Kernels\n{{public_kernels}}\n",
        "\n## Response Format\n",
        "Pipeline: <full description of the pipeline>\n",
        "Code abstract: <representative code, other parts elided with ...>\n",
        "Summary:\n",
        "=== <component name> ===\n",
        "Novelty: <0-10>\nFeasibility: <0-10>\nEffectiveness: <0-10>\nEfficiency: <0-10>\nConfidence: <0-10>\n",
        "(repeat for each component)\n",
        "Weaknesses: <known problems and ideas for improvement>\n",
    ),
};

pub const EXTRACT_DISCUSSIONS: Template = Template {
    name: "extract_discussions",
    text: concat!(
        "## Introduction\nYou are a seasoned machine learning practitioner competing in the data science challenge below.\n",
        "\n## Task Description\n{{task_description}}\n",
        "\n## Goals\nThe threads below are the most upvoted forum posts from the challenge. ",
        "Pull out every distinct idea in them that could move the leaderboard score.\n",
        "\n## Public Discussions\n{{public_discussions}}\n",
        "\n## Response Format\nA Python list of strings, one idea per element, e.g. ['idea 1', 'idea 2'].\n",
    ),
};

pub const BRAINSTORM: Template = Template {
    name: "brainstorm",
    text: concat!(
        "## Introduction\nYou are a seasoned machine learning practitioner competing in the data science challenge below.\n",
        "\n## Task Description\n{{task_description}}\n",
        "\n## Goals\n",
        "1. Propose at least 4 solution paths that differ from each other and from the ideas above.\n",
        "2. Use the reports to learn what has already worked or failed.\n",
        "3. Split each path into minimal ideas, each small enough to implement and test on its own.\n",
        "4. Do not repeat ideas that are already listed.\n",
        "\n## Ideas\n{{ideas}}\n",
        "\n## Reports\n{{reports}}\n",
        "\n## Public Pipelines\n{{public_pipelines}}\n",
        "\n## Response Format\n",
        "<your reading of the task>\n",
        "===SOLUTION_PATH_1===\n",
        "<description of the path>\n",
        "- <minimal idea>\n",
        "- <minimal idea>\n",
        "===SOLUTION_PATH_2===\n",
        "...\n",
    ),
};

pub const REFINE_IDEAS: Template = Template {
    name: "refine_ideas",
    text: concat!(
        "## Introduction\nYou curate a list of candidate ideas for a machine learning challenge. ",
        "Merge near duplicates, separate ideas that bundle several changes, and drop ideas that cannot affect the score.\n",
        "\n## Ideas\n{{ideas}}\n",
        "\n## Reports\n{{reports}}\n",
        "\n## Public Pipelines\n{{public_pipelines}}\n",
        "\n## Response Format\nA Python list of strings, one idea per element, e.g. ['idea 1', 'idea 2'].\n",
    ),
};

pub const SYNTHESIZE_DRAFTS: Template = Template {
    name: "synthesize_drafts",
    text: concat!(
        "## Introduction\nYou are a seasoned machine learning practitioner competing in the data science challenge below.\n",
        "\n## Task Description\n{{task_description}}\n",
        "\n## Ideas\n{{ideas}}\n",
        "\n## Reports\n{{reports}}\n",
        "\n## Public Pipelines\n{{public_pipelines}}\n",
        "\n## Goals\n",
        "1. Read the reports first.\n",
        "2. Write {{num_pipes}} complete pipelines that are likely to score well, with no overlap between them.\n",
        "3. Exactly one of them is a baseline built from well known, dependable methods; start its first line with the word baseline.\n",
        "4. Reuse the public pipelines where they help, including their input and output handling.\n",
        "5. Follow the submission format in the task description exactly.\n",
        "\n## Response Format\n",
        "The {{num_pipes}} pipelines, each a description followed by its key code, separated by ===SEPARATOR===\n",
    ),
};

pub const CODER_FIRST_CELL: Template = Template {
    name: "coder_first_cell",
    text: concat!(
        "## Introduction\nYou implement one pipeline for the challenge below in a persistent notebook. ",
        "Tune details freely but keep the overall design. Aim for the best validation score.\n",
        "\n## Task Description\n{{task_description}}\n",
        "\n## Pipeline\n{{pipeline}}\n",
        "\n## Data Overview\n{{data_overview}}\n",
        "\n## Rules\n",
        "- Inputs live under ../input; use relative paths only.\n",
        "- Outputs and checkpoints go in the working directory and persist between cells.\n",
        "- Each cell is appended to the notebook and run; keep loading, training and evaluation in separate cells.\n",
        "- Write the test predictions and the validation predictions in the same cell. A grader scores the validation file.\n",
        "- Print the validation metric before writing a submission.\n",
        "\n## Response Format\n",
        "Send the first cell only:\n",
        "<goal>what the cell does, how long it should run, and how to read its output</goal>\n",
        "<code>the cell source, without markdown fences</code>\n",
        "<validation_submission>file name of the validation predictions, or None</validation_submission>\n",
        "<submission>file name of the test predictions, or None</submission>\n",
        "validation_submission and submission are either both set or both None. ",
        "Send an empty <code></code> once you are finished.\n",
    ),
};

pub const CODER_REVISION: Template = Template {
    name: "coder_revision",
    text: concat!(
        "## Execution Result\nThe cell ran for {{execution_time}} seconds. {{status_note}}\n",
        "Output:\n{{output}}\n",
        "\n## Next Step\nKeep improving (features, hyperparameters, models) even after a valid submission; the best one is kept.\n",
        "\n## Response Format\n",
        "<validation_submission>file name or None</validation_submission>\n",
        "<submission>file name or None</submission>\n",
        "<goal>goal of the next cell and how to read its output</goal>\n",
        "<code>the next cell, without markdown fences</code>\n",
        "validation_submission and submission are either both set or both None. ",
        "Send an empty <code></code> once you are finished.\n",
    ),
};

pub const CODER_REPORT: Template = Template {
    name: "coder_report",
    text: concat!(
        "## Wrap Up\nSummarize this session as a report.\n",
        "\n## Response Format\n",
        "Pipeline: <the pipeline behind the best result, with hyperparameters and validation metric>\n",
        "Summary:\n",
        "=== <component name> ===\n",
        "Novelty: <0-10>\nFeasibility: <0-10>\nEffectiveness: <0-10>\nEfficiency: <0-10>\nConfidence: <0-10>\n",
        "(repeat for each component)\n",
        "Weaknesses: <problems seen and what to try next>\n",
    ),
};

pub const MONITOR: Template = Template {
    name: "monitor",
    text: concat!(
        "## Introduction\nYou watch a running notebook cell and decide whether it should keep running.\n",
        "\n## Code\n{{code}}\n",
        "\n## Goal\n{{goal}}\n",
        "\n## Runtime\nElapsed: {{elapsed}}\nLimit: {{max_runtime}}\nRemaining: {{remaining}}\n",
        "\n## Output So Far\n{{output}}\n",
        "\n## Checks\nDiverging or NaN loss, stalled progress, error messages, or no chance of finishing in time are reasons to stop.\n",
        "\n## Response Format\n",
        "<action>CONTINUE or STOP</action>\n",
        "<explanation>progress so far and expected time left; no bug fixes</explanation>\n",
    ),
};

pub const EVALUATOR_SCRIPTS: Template = Template {
    name: "evaluator_scripts",
    text: concat!(
        "## Introduction\nWrite two command line Python scripts that let an agent be scored locally on the challenge below.\n",
        "\n## Task Description\n{{task_description}}\n",
        "\n## Data Preview\n{{data_preview}}\n",
        "\n## Deliverables\n",
        "split_dataset.py --input_dir {{input_dir}} --public_dir ./public --private_dir ./private\n",
        "  Hold out 10% of the training rows for validation (stratified when there are classes). ",
        "./public gets the remaining training rows, the untouched test data, validation inputs without labels ",
        "and validate_sample_submission.csv, mirroring the original layout. Validation labels go only to ./private.\n",
        "evaluate.py --public_dir ./public --private_dir ./private --pred <validation submission>\n",
        "  Score the predictions with the official metric and write ./private/eval_report.json with keys ",
        "score (number, or null on failure), success (bool) and message (empty on success). Never raise.\n",
        "\n## Response Format\n",
        "```current_file\nsplit_dataset.py, evaluate.py, or None once both work\n```\n",
        "```explanation\nhow the script works\n```\n",
        "```python\nthe full file, or None\n```\n",
    ),
};

pub const EVALUATOR_FEEDBACK: Template = Template {
    name: "evaluator_feedback",
    text: concat!(
        "## Result\nRunning {{file}} gave:\n{{output}}\n",
        "\n## Verdict\n{{verdict}}\n",
        "\n## Response Format\nSame three fenced blocks as before: current_file, explanation, python.\n",
    ),
};

/// All templates, for coverage checks.
pub const ALL: [Template; 11] = [
    ANALYZE_KERNEL,
    EXTRACT_DISCUSSIONS,
    BRAINSTORM,
    REFINE_IDEAS,
    SYNTHESIZE_DRAFTS,
    CODER_FIRST_CELL,
    CODER_REVISION,
    CODER_REPORT,
    MONITOR,
    EVALUATOR_SCRIPTS,
    EVALUATOR_FEEDBACK,
];

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn intro_constant_matches_inline_copies() {
        for t in [ANALYZE_KERNEL, EXTRACT_DISCUSSIONS, BRAINSTORM, SYNTHESIZE_DRAFTS] {
            assert!(t.text.starts_with(INTRO), "{}", t.name);
        }
    }

    #[test]
    fn missing_placeholder_is_named() {
        let e = BRAINSTORM.fill(&[("task_description", "x")]).unwrap_err();
        assert!(e.to_string().contains("`ideas`"), "{e}");
    }

    #[test]
    fn full_render_leaves_no_placeholders() {
        for t in ALL {
            let vars = t.placeholders().into_iter().map(|p| (p, format!("<{p}>"))).collect();
            let out = t.render(&vars).unwrap();
            assert!(t.placeholders().iter().all(|p| !out.contains(&format!("{{{{{p}}}}}"))));
        }
    }

    #[test]
    fn substituted_text_is_not_expanded() {
        let out = MONITOR
            .fill(&[
                ("code", "print('{{goal}}')"),
                ("goal", "g"),
                ("elapsed", "1"),
                ("max_runtime", "2"),
                ("remaining", "1"),
                ("output", ""),
            ])
            .unwrap();
        assert!(out.contains("print('{{goal}}')"));
    }

    #[test]
    fn protocol_tokens_present() {
        assert!(BRAINSTORM.text.contains("===SOLUTION_PATH_1==="));
        let d = SYNTHESIZE_DRAFTS
            .fill(&[
                ("task_description", "t"),
                ("ideas", "i"),
                ("reports", "r"),
                ("public_pipelines", "p"),
                ("num_pipes", "2"),
            ])
            .unwrap();
        assert!(d.contains("2 complete pipelines") && d.contains(SEPARATOR));
        for tag in ["<goal>", "<code>", "<validation_submission>", "<submission>"] {
            assert!(CODER_FIRST_CELL.text.contains(tag));
            assert!(CODER_REVISION.text.contains(tag));
        }
        assert!(MONITOR.text.contains("<action>") && MONITOR.text.contains("<explanation>"));
        for key in crate::bundle::EVAL_REPORT_KEYS {
            assert!(EVALUATOR_SCRIPTS.text.contains(key));
        }
    }

    #[test]
    fn sections_follow_fixed_order() {
        let check = |t: Template, order: &[&str]| {
            let pos: Vec<usize> = order.iter().map(|h| t.text.find(h).unwrap()).collect();
            assert!(pos.windows(2).all(|w| w[0] < w[1]), "{}", t.name);
        };
        check(
            SYNTHESIZE_DRAFTS,
            &["## Introduction", "## Task Description", "## Ideas", "## Reports", "## Public Pipelines", "## Goals"],
        );
        check(
            BRAINSTORM,
            &["## Introduction", "## Task Description", "## Goals", "## Ideas", "## Reports", "## Public Pipelines"],
        );
        check(ANALYZE_KERNEL, &["## Introduction", "## Task Description", "## Goals", "## Public Kernels"]);
    }
}
