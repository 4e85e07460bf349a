//! Small synthetic competition bundles for tests, demos, and smoke runs.

use std::fs;
use std::path::Path;

use rand::Rng;

use crate::llm::{Role, Script, ScriptEntry};
use crate::seed;

/// Deadline used by every toy bundle.
pub const TOY_DEADLINE: i64 = 1_700_000_000;

fn write(path: &Path, text: &str) {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).expect("create fixture dir");
    }
    fs::write(path, text).expect("write fixture file");
}

fn spec_json(slug: &str, metric: &str, direction: &str) -> String {
    format!(
        r#"{{
  "slug": "{slug}",
  "description": "Predict `target` for each row of test.csv from the numeric features. Submissions are CSV files with columns id,target.",
  "metric": {{ "name": "{metric}", "direction": "{direction}" }},
  "deadline": {TOY_DEADLINE},
  "difficulty": "low",
  "id_column": "id",
  "target_column": "target"
}}
"#
    )
}

fn community(dir: &Path) {
    let c = dir.join("community");
    let d = TOY_DEADLINE;
    write(
        &c.join("linear-baseline.json"),
        &format!(
            r#"{{"kind": "kernel", "key": "linear-baseline", "votes": 12, "tier": "expert", "published_at": {}, "score": 0.35, "deps": ["dataset:feature-stats"]}}"#,
            d - 5000
        ),
    );
    write(
        &c.join("linear-baseline.txt"),
        "# Ordinary least squares on x1 and x2\nimport pandas as pd\nfrom sklearn.linear_model import LinearRegression\n",
    );
    write(
        &c.join("tree-ensemble.json"),
        &format!(
            r#"{{"kind": "kernel", "key": "tree-ensemble", "votes": 7, "published_at": {}, "score": 0.41}}"#,
            d - 3000
        ),
    );
    write(
        &c.join("tree-ensemble.txt"),
        "# Gradient boosted trees with default settings\nimport lightgbm as lgb\n",
    );
    write(
        &c.join("feature-stats.json"),
        &format!(r#"{{"kind": "dataset", "key": "feature-stats", "published_at": {}}}"#, d - 9000),
    );
    write(&c.join("feature-stats").join("stats.csv"), "feature,mean\nx1,0.5\nx2,0.5\n");
    write(
        &c.join("scaling-tips.json"),
        &format!(
            r#"{{"kind": "discussion", "key": "scaling-tips", "votes": 5, "published_at": {}, "comments": [{{"author_tier": "master", "text": "Standardize features before fitting."}}]}}"#,
            d - 4000
        ),
    );
    write(
        &c.join("scaling-tips.txt"),
        "Feature x1 dominates; a linear fit already explains most of the variance.",
    );
    write(
        &c.join("post-deadline-winner.json"),
        &format!(
            r#"{{"kind": "kernel", "key": "post-deadline-winner", "votes": 99, "published_at": {}, "score": 0.01}}"#,
            d + 10
        ),
    );
    write(&c.join("post-deadline-winner.txt"), "# published after the deadline\n");
}

/// Regression bundle scored by RMSE: `target = 3*x1 - 2*x2 + 1 + noise`.
pub fn toy_regression(dir: &Path, n_rows: usize, seed_value: u64) {
    let mut rng = seed::rng(seed::derive_seed(seed_value, "toy_regression"));
    let n_test = (n_rows / 2).max(5);
    let mut train = String::from("id,x1,x2,target\n");
    for i in 0..n_rows {
        let (x1, x2): (f64, f64) = (rng.random(), rng.random());
        let y = 3.0 * x1 - 2.0 * x2 + 1.0 + 0.1 * (rng.random::<f64>() - 0.5);
        train.push_str(&format!("id{i:04},{x1:.6},{x2:.6},{y:.6}\n"));
    }
    let mut test = String::from("id,x1,x2\n");
    let mut truth = String::from("id,target\n");
    let mut sample = String::from("id,target\n");
    for i in 0..n_test {
        let (x1, x2): (f64, f64) = (rng.random(), rng.random());
        let y = 3.0 * x1 - 2.0 * x2 + 1.0 + 0.1 * (rng.random::<f64>() - 0.5);
        let id = format!("t{i:04}");
        test.push_str(&format!("{id},{x1:.6},{x2:.6}\n"));
        truth.push_str(&format!("{id},{y:.6}\n"));
        sample.push_str(&format!("{id},0\n"));
    }
    let mut board = String::from("rank,score\n");
    for r in 0..40 {
        board.push_str(&format!("{},{:.4}\n", r + 1, 0.05 + 0.05 * r as f64));
    }
    write(&dir.join("spec.json"), &spec_json(&format!("toy-regression-{seed_value}"), "rmse", "lower_better"));
    write(&dir.join("data").join("train.csv"), &train);
    write(&dir.join("data").join("test.csv"), &test);
    write(&dir.join("data").join("README.txt"), "x1 and x2 are uniform on [0, 1].\n");
    write(&dir.join("grader").join("test_truth.csv"), &truth);
    write(&dir.join("sample_submission.csv"), &sample);
    write(&dir.join("leaderboard.csv"), &board);
    community(dir);
}

/// Binary classification bundle scored by AUC with a `target` in {0, 1}.
pub fn toy_binary(dir: &Path, n_rows: usize, seed_value: u64) {
    let mut rng = seed::rng(seed::derive_seed(seed_value, "toy_binary"));
    let n_test = (n_rows / 2).max(6);
    let label = |x1: f64, x2: f64, u: f64| u8::from(x1 + 0.5 * x2 + 0.3 * (u - 0.5) > 0.75);
    let mut train = String::from("id,x1,x2,target\n");
    for i in 0..n_rows {
        let (x1, x2, u): (f64, f64, f64) = (rng.random(), rng.random(), rng.random());
        train.push_str(&format!("id{i:04},{x1:.6},{x2:.6},{}\n", label(x1, x2, u)));
    }
    let mut test = String::from("id,x1,x2\n");
    let mut truth = String::from("id,target\n");
    let mut sample = String::from("id,target\n");
    for i in 0..n_test {
        let (x1, x2, u): (f64, f64, f64) = (rng.random(), rng.random(), rng.random());
        let id = format!("t{i:04}");
        // alternate forced labels on the first two rows so both classes exist
        let y = match i {
            0 => 0,
            1 => 1,
            _ => label(x1, x2, u),
        };
        test.push_str(&format!("{id},{x1:.6},{x2:.6}\n"));
        truth.push_str(&format!("{id},{y}\n"));
        sample.push_str(&format!("{id},0.5\n"));
    }
    let mut board = String::from("rank,score\n");
    for r in 0..30 {
        board.push_str(&format!("{},{:.4}\n", r + 1, 0.99 - 0.01 * r as f64));
    }
    write(&dir.join("spec.json"), &spec_json(&format!("toy-binary-{seed_value}"), "auc", "higher_better"));
    write(&dir.join("data").join("train.csv"), &train);
    write(&dir.join("data").join("test.csv"), &test);
    write(&dir.join("grader").join("test_truth.csv"), &truth);
    write(&dir.join("sample_submission.csv"), &sample);
    write(&dir.join("leaderboard.csv"), &board);
    community(dir);
}

fn entry(role: Role, channel: &str, responses: Vec<String>) -> ScriptEntry {
    ScriptEntry {
        role: Some(role),
        contains: String::new(),
        channel: Some(channel.to_string()),
        responses,
    }
}

fn kernel_report(pipeline: &str) -> String {
    format!(
        "Pipeline: {pipeline}\nCode abstract: fit(train) -> predict(test)\nSummary:\n\
         - Feature handling:\nNovelty: 3\nFeasibility: 9\nEffectiveness: 6\nEfficiency: 8\nConfidence: 7\n\
         - Model:\nNovelty: 4\nFeasibility: 8\nEffectiveness: 7\nEfficiency: 7\nConfidence: 6\n\
         Weaknesses: no validation-driven tuning\n"
    )
}

fn cell(goal: &str, code: &str, files: Option<(&str, &str)>) -> String {
    let (v, s) = files.unwrap_or(("None", "None"));
    format!("<goal>{goal}</goal>\n<code>\n{code}\n</code>\n<validation_submission>{v}</validation_submission>\n<submission>{s}</submission>\n")
}

/// Script for the fake guest on a toy regression bundle: `iterations`
/// iterations of `n_drafts` agents each. Agent 0 submits train means, every
/// other agent a least-squares fit, so both kinds of run get published.
pub fn toy_script(iterations: u32, n_drafts: usize) -> Script {
    let mut entries = vec![
        entry(Role::Analyzer, "/analyze/", vec![kernel_report("linear model on the raw features")]),
        entry(
            Role::Analyzer,
            "/discussions",
            vec!["['standardize x1 and x2 before fitting', 'x1 carries most of the signal']".into()],
        ),
    ];
    for t in 1..=iterations {
        let paths: String = (0..4)
            .map(|p| {
                format!(
                    "===SOLUTION_PATH_{}===\nRound {t} option {p}\n- blend {p} regressors of round {t}\n- add feature {p} of round {t}\n",
                    p + 1
                )
            })
            .collect();
        entries.push(entry(Role::Proposer, &format!("t{t:03}/brainstorm"), vec![paths]));
        let refined: Vec<String> = (0..4)
            .map(|p| format!("'blend {p} regressors of round {t}'"))
            .chain(["'standardize x1 and x2 before fitting'".to_string()])
            .collect();
        entries.push(entry(Role::Proposer, &format!("t{t:03}/refine"), vec![format!("[{}]", refined.join(", "))]));
        let reference = if t == 1 {
            "kernel:linear-baseline".to_string()
        } else {
            format!("kernel:agora-t{:03}-d1", t - 1)
        };
        let drafts: Vec<String> = (0..n_drafts)
            .map(|d| match d {
                0 => format!("Baseline: predict the training mean.\nBuilds on {reference}.\n```\nmean(train.target)\n```"),
                _ => format!("Draft {d}: least squares on x1 and x2, following {reference}.\n```\nlstsq(X, y)\n```"),
            })
            .collect();
        entries.push(entry(Role::Coordinator, &format!("t{t:03}/drafts"), vec![drafts.join("\n===SEPARATOR===\n")]));
    }
    for d in 0..n_drafts {
        let cmd = if d == 0 { "predict_mean" } else { "predict_linear" };
        let cells = vec![
            cell("Look at the data", "print train and test are under ../input", None),
            cell(
                "Fit and write both submissions",
                &format!(
                    "{cmd} ../input/train.csv target ../input/validate.csv id val_pred.csv\n\
                     {cmd} ../input/train.csv target ../input/test.csv id submission.csv\n\
                     print wrote val_pred.csv and submission.csv"
                ),
                Some(("val_pred.csv", "submission.csv")),
            ),
            cell("Nothing left to try", "", None),
        ];
        entries.push(entry(Role::Coder, &format!("/agent{d}/coder"), cells));
        entries.push(entry(
            Role::Coder,
            &format!("/agent{d}/report"),
            vec![format!(
                "Pipeline: {cmd} on the split data\nSummary:\n- Predictor:\nNovelty: 2\nFeasibility: 10\nEffectiveness: {}\nEfficiency: 9\nConfidence: 8\nWeaknesses: no feature engineering yet\n",
                if d == 0 { 2 } else { 7 }
            )],
        ));
    }
    Script { entries }
}
