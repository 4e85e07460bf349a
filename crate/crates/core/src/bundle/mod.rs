//! Competition bundles: task description, data, grader, frozen leaderboard,
//! and community corpus, plus the train/validation split and grading.
//!
//! Layout of a bundle directory:
//!
//! ```text
//! spec.json               task description and metric
//! data/                   original competition data (train.csv, test.csv, ...)
//! grader/test_truth.csv   held-out test labels
//! sample_submission.csv
//! leaderboard.csv         rank,score
//! community/              artifact corpus
//! public/ private/        created by the split
//! ```

mod audit;
mod grade;
mod metric;
mod split;
mod table;

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::community::{self, CommunityError, RawCollection, Timestamp};
use crate::leaderboard::{FrozenLeaderboard, LeaderboardError, MedalRule};
use crate::num::Direction;

pub use audit::{audit_no_leakage, audit_tree, Violation};
pub use grade::{EvalReport, Grader, Submission, Target, Truth, EVAL_REPORT_KEYS};
pub use metric::{accuracy, auc, log_loss, mae, rmse, Metric, MetricError};
pub use split::{split_dataset, split_into, split_rows, SplitLayout, SplitManifest, SplitOptions};
pub use table::Table;

#[derive(Debug, Error)]
pub enum BundleError {
    #[error("{component} absent: {detail}")]
    Missing {
        component: &'static str,
        detail: String,
    },
    #[error("invalid competition spec: {0}")]
    Spec(String),
    #[error("unknown metric `{0}`")]
    UnknownMetric(String),
    #[error("csv error in {path}: {reason}")]
    Csv { path: String, reason: String },
    #[error("split: {0}")]
    Split(String),
    #[error(transparent)]
    Leaderboard(#[from] LeaderboardError),
    #[error(transparent)]
    Community(#[from] CommunityError),
    #[error("io error at {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub(crate) fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> BundleError + '_ {
    move |source| BundleError::Io {
        path: path.display().to_string(),
        source,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Difficulty {
    Low,
    Medium,
    High,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetricSpec {
    pub name: String,
    pub direction: Direction,
}

/// Contents of `spec.json`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompetitionSpec {
    pub slug: String,
    /// Inline description; when empty, `description.md` is read instead.
    #[serde(default)]
    pub description: String,
    pub metric: MetricSpec,
    pub deadline: Timestamp,
    pub difficulty: Difficulty,
    pub id_column: String,
    pub target_column: String,
    #[serde(default)]
    pub stratify_column: Option<String>,
}

/// A validated bundle. Read-only after load except for split materialization.
#[derive(Clone, Debug)]
pub struct CompetitionBundle {
    root: PathBuf,
    split_root: PathBuf,
    pub spec: CompetitionSpec,
    pub metric: Metric,
    pub leaderboard: FrozenLeaderboard<f64>,
    pub medal_rule: MedalRule,
    pub sample_header: Vec<String>,
}

fn missing(component: &'static str, path: &Path) -> BundleError {
    BundleError::Missing {
        component,
        detail: path.display().to_string(),
    }
}

/// Loads and validates the bundle at `path`.
pub fn load_bundle(path: &Path) -> Result<CompetitionBundle, BundleError> {
    let spec_path = path.join("spec.json");
    if !spec_path.is_file() {
        return Err(missing("task description", &spec_path));
    }
    let text = fs::read_to_string(&spec_path).map_err(io_err(&spec_path))?;
    let mut spec: CompetitionSpec =
        serde_json::from_str(&text).map_err(|e| BundleError::Spec(e.to_string()))?;
    if spec.description.trim().is_empty() {
        let md = path.join("description.md");
        if md.is_file() {
            spec.description = fs::read_to_string(&md).map_err(io_err(&md))?;
        }
    }
    if spec.description.trim().is_empty() {
        return Err(missing("task description", &path.join("description.md")));
    }
    if spec.slug.trim().is_empty() {
        return Err(BundleError::Spec("slug is empty".into()));
    }
    if spec.id_column.is_empty() || spec.target_column.is_empty() {
        return Err(BundleError::Spec("id_column and target_column are required".into()));
    }
    let metric = Metric::from_name(&spec.metric.name)
        .ok_or_else(|| BundleError::UnknownMetric(spec.metric.name.clone()))?;
    if metric.direction() != spec.metric.direction {
        return Err(BundleError::Spec(format!(
            "metric {} is {} but spec declares {}",
            metric.name(),
            metric.direction(),
            spec.metric.direction
        )));
    }

    for f in ["train.csv", "test.csv"] {
        let p = path.join("data").join(f);
        if !p.is_file() {
            return Err(missing("dataset", &p));
        }
    }
    let truth = path.join("grader").join("test_truth.csv");
    if !truth.is_file() {
        return Err(missing("grader", &truth));
    }
    let sample = path.join("sample_submission.csv");
    if !sample.is_file() {
        return Err(missing("grader", &sample));
    }
    let board_path = path.join("leaderboard.csv");
    if !board_path.is_file() {
        return Err(missing("leaderboard", &board_path));
    }
    let community_dir = path.join("community");
    if !community_dir.is_dir() {
        return Err(missing("community artifacts", &community_dir));
    }

    let leaderboard = FrozenLeaderboard::from_csv(&board_path, spec.metric.direction)?;
    let rule_path = path.join("medal_rule.json");
    let medal_rule = if rule_path.is_file() {
        MedalRule::load(&rule_path)?
    } else {
        MedalRule::default_rule()
    };
    let sample_header = Table::read(&sample)?.headers;
    if sample_header.len() < 2 {
        return Err(BundleError::Spec("sample submission needs an id and a value column".into()));
    }

    Ok(CompetitionBundle {
        root: path.to_path_buf(),
        split_root: path.to_path_buf(),
        spec,
        metric,
        leaderboard,
        medal_rule,
        sample_header,
    })
}

impl CompetitionBundle {
    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Directory holding `public/`, `private/`, and the split manifest.
    pub fn split_root(&self) -> &Path {
        &self.split_root
    }

    /// Redirects split output (and validation grading) to another directory,
    /// leaving the bundle itself untouched.
    pub fn with_split_root(mut self, dir: impl Into<PathBuf>) -> Self {
        self.split_root = dir.into();
        self
    }

    pub fn data_dir(&self) -> PathBuf {
        self.root.join("data")
    }

    pub fn public_dir(&self) -> PathBuf {
        self.split_root.join("public")
    }

    pub fn private_dir(&self) -> PathBuf {
        self.split_root.join("private")
    }

    pub fn community_dir(&self) -> PathBuf {
        self.root.join("community")
    }

    pub fn sample_submission(&self) -> PathBuf {
        self.root.join("sample_submission.csv")
    }

    pub fn test_truth(&self) -> PathBuf {
        self.root.join("grader").join("test_truth.csv")
    }

    pub fn validation_truth(&self) -> PathBuf {
        self.private_dir().join("validate.csv")
    }

    pub fn manifest_path(&self) -> PathBuf {
        self.split_root.join("split_manifest.json")
    }

    pub fn direction(&self) -> Direction {
        self.spec.metric.direction
    }

    pub fn load_community(&self) -> Result<RawCollection, BundleError> {
        Ok(community::load_corpus(&self.community_dir())?)
    }

    pub fn grader(&self) -> Grader {
        Grader {
            metric: self.metric,
            id_column: self.spec.id_column.clone(),
            target_column: self.spec.target_column.clone(),
            header: self.sample_header.clone(),
        }
    }

    pub fn truth_path(&self, target: Target) -> PathBuf {
        match target {
            Target::Validation => self.validation_truth(),
            Target::Test => self.test_truth(),
        }
    }

    /// Grades without side effects. Never fails; defects become the report.
    pub fn grade(&self, submission: &Submission, target: Target) -> EvalReport {
        let grader = self.grader();
        match grader.load_truth(&self.truth_path(target)) {
            Ok(truth) => grader.grade(&truth, submission),
            Err(e) => EvalReport::failure(format!("{target} truth unavailable: {e}")),
        }
    }

    /// Grades and writes `private/eval_report.json`.
    pub fn grade_and_record(&self, submission: &Submission, target: Target) -> EvalReport {
        let report = self.grade(submission, target);
        let path = self.private_dir().join("eval_report.json");
        if let Err(e) = fs::create_dir_all(self.private_dir()).and_then(|_| report.write(&path)) {
            tracing::warn!(path = %path.display(), error = %e, "could not record eval report");
        }
        report
    }

    /// Reads a submission file and grades it; unreadable files are defects.
    pub fn grade_file(&self, path: &Path, target: Target) -> EvalReport {
        match Submission::read(path, target) {
            Ok(sub) => self.grade(&sub, target),
            Err(e) => EvalReport::failure(e),
        }
    }

    pub fn split(&self, options: &SplitOptions) -> Result<SplitManifest, BundleError> {
        split_dataset(self, options)
    }

    pub fn audit(&self) -> Vec<Violation> {
        audit_no_leakage(self)
    }
}

/// A list of bundle directories, read from an index file with one relative
/// path per line (blank lines and `#` comments ignored).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BundleIndex {
    pub base: PathBuf,
    pub entries: Vec<PathBuf>,
}

impl BundleIndex {
    pub fn load(path: &Path) -> Result<Self, BundleError> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        let base = path.parent().unwrap_or(Path::new(".")).to_path_buf();
        let entries = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .map(PathBuf::from)
            .collect();
        Ok(Self { base, entries })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn paths(&self) -> impl Iterator<Item = PathBuf> + '_ {
        self.entries.iter().map(|e| self.base.join(e))
    }

    /// Loads every listed bundle, stopping at the first defect.
    pub fn load_all(&self) -> Result<Vec<CompetitionBundle>, BundleError> {
        self.paths().map(|p| load_bundle(&p)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;

    #[test]
    fn loads_complete_fixture() {
        let dir = tempfile::tempdir().unwrap();
        fixtures::toy_regression(dir.path(), 40, 7);
        let b = load_bundle(dir.path()).unwrap();
        assert_eq!(b.metric, Metric::Rmse);
        assert_eq!(b.sample_header, vec!["id", "target"]);
        assert!(!b.leaderboard.is_empty());
    }

    #[test]
    fn each_missing_component_is_named() {
        let cases = [
            ("leaderboard.csv", "leaderboard absent"),
            ("spec.json", "task description absent"),
            ("data/train.csv", "dataset absent"),
            ("grader/test_truth.csv", "grader absent"),
            ("community", "community artifacts absent"),
        ];
        for (victim, msg) in cases {
            let dir = tempfile::tempdir().unwrap();
            fixtures::toy_regression(dir.path(), 20, 1);
            let p = dir.path().join(victim);
            if p.is_dir() {
                fs::remove_dir_all(&p).unwrap();
            } else {
                fs::remove_file(&p).unwrap();
            }
            let err = load_bundle(dir.path()).unwrap_err().to_string();
            assert!(err.starts_with(msg), "{victim}: {err}");
        }
    }

    #[test]
    fn direction_mismatch_rejected() {
        let dir = tempfile::tempdir().unwrap();
        fixtures::toy_regression(dir.path(), 20, 1);
        let p = dir.path().join("spec.json");
        let text = fs::read_to_string(&p).unwrap().replace("lower_better", "higher_better");
        fs::write(&p, text).unwrap();
        assert!(matches!(load_bundle(dir.path()), Err(BundleError::Spec(_))));
    }

    #[test]
    fn index_of_75() {
        let dir = tempfile::tempdir().unwrap();
        let mut lines = String::from("# toy index\n");
        for i in 0..75 {
            let sub = dir.path().join(format!("c{i:02}"));
            fixtures::toy_regression(&sub, 12, i);
            lines.push_str(&format!("c{i:02}\n"));
        }
        fs::write(dir.path().join("index.txt"), lines).unwrap();
        let idx = BundleIndex::load(&dir.path().join("index.txt")).unwrap();
        assert_eq!(idx.len(), 75);
        assert_eq!(idx.load_all().unwrap().len(), 75);
    }
}
