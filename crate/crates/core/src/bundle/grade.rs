//! Submission grading and the `eval_report.json` contract.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{BundleError, Metric, Table};

/// Keys of `eval_report.json`, in file order.
pub const EVAL_REPORT_KEYS: [&str; 3] = ["score", "success", "message"];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Target {
    Validation,
    Test,
}

impl fmt::Display for Target {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Target::Validation => "validation",
            Target::Test => "test",
        })
    }
}

/// Outcome of grading. `success` holds exactly when `score` is present.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub score: Option<f64>,
    pub success: bool,
    pub message: String,
}

impl EvalReport {
    pub fn ok(score: f64) -> Self {
        if !score.is_finite() {
            return Self::failure(format!("metric produced non-finite score {score}"));
        }
        Self {
            score: Some(score),
            success: true,
            message: String::new(),
        }
    }

    pub fn failure(message: impl Into<String>) -> Self {
        let mut message = message.into();
        if message.is_empty() {
            message = "evaluation failed".into();
        }
        Self {
            score: None,
            success: false,
            message,
        }
    }

    /// Four-space indented JSON with the score printed to six decimals.
    pub fn to_json_string(&self) -> String {
        let score = match self.score {
            Some(s) if self.success => format!("{s:.6}"),
            _ => "null".into(),
        };
        let message = serde_json::to_string(&self.message).expect("string serializes");
        format!(
            "{{\n    \"score\": {score},\n    \"success\": {},\n    \"message\": {message}\n}}",
            self.success
        )
    }

    pub fn write(&self, path: &Path) -> std::io::Result<()> {
        fs::write(path, self.to_json_string())
    }

    /// Parses a report, requiring exactly the three keys with the right types
    /// and the success/score consistency rule.
    pub fn from_json(text: &str) -> Result<Self, String> {
        let value: serde_json::Value =
            serde_json::from_str(text).map_err(|e| format!("not valid JSON: {e}"))?;
        let obj = value.as_object().ok_or("report is not a JSON object")?;
        let keys: BTreeSet<&str> = obj.keys().map(String::as_str).collect();
        let expected: BTreeSet<&str> = EVAL_REPORT_KEYS.into_iter().collect();
        if keys != expected {
            return Err(format!("report keys {keys:?} differ from {expected:?}"));
        }
        let score = match &obj["score"] {
            serde_json::Value::Null => None,
            serde_json::Value::Number(n) => Some(n.as_f64().ok_or("score is not a float")?),
            other => return Err(format!("score has wrong type: {other}")),
        };
        let success = obj["success"].as_bool().ok_or("success is not a boolean")?;
        let message = obj["message"]
            .as_str()
            .ok_or("message is not a string")?
            .to_string();
        if success != score.is_some() {
            return Err("success must be true exactly when score is present".into());
        }
        if !success && message.is_empty() {
            return Err("failed report needs a message".into());
        }
        Ok(Self {
            score,
            success,
            message,
        })
    }

    pub fn read(path: &Path) -> Result<Self, String> {
        let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        Self::from_json(&text)
    }
}

/// A parsed submission file.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Submission {
    pub header: Vec<String>,
    /// `(id, value)` pairs in file order; the value is the second column.
    pub rows: Vec<(String, String)>,
    pub source: Target,
}

impl Submission {
    pub fn from_table(table: &Table, source: Target) -> Result<Self, String> {
        if table.headers.len() < 2 {
            return Err(format!(
                "submission needs an id and a value column, found {:?}",
                table.headers
            ));
        }
        Ok(Self {
            header: table.headers.clone(),
            rows: table
                .rows
                .iter()
                .map(|r| (r[0].trim().to_string(), r[1].clone()))
                .collect(),
            source,
        })
    }

    pub fn read(path: &Path, source: Target) -> Result<Self, String> {
        let table = Table::read(path).map_err(|e| format!("unreadable submission: {e}"))?;
        Self::from_table(&table, source)
    }
}

/// Ground-truth labels in file order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Truth {
    pub ids: Vec<String>,
    pub values: BTreeMap<String, String>,
}

/// Pure grading logic for one metric and submission format.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Grader {
    pub metric: Metric,
    pub id_column: String,
    pub target_column: String,
    /// Expected submission header.
    pub header: Vec<String>,
}

impl Grader {
    pub fn load_truth(&self, path: &Path) -> Result<Truth, BundleError> {
        let t = Table::read(path)?;
        let id = t.require(&self.id_column, path)?;
        let target = t.require(&self.target_column, path)?;
        let mut ids = Vec::with_capacity(t.len());
        let mut values = BTreeMap::new();
        for row in &t.rows {
            let key = row[id].trim().to_string();
            if values.insert(key.clone(), row[target].clone()).is_some() {
                return Err(BundleError::Csv {
                    path: path.display().to_string(),
                    reason: format!("duplicate id `{key}` in truth"),
                });
            }
            ids.push(key);
        }
        Ok(Truth { ids, values })
    }

    /// Grades `sub` against `truth`; the first defect found is reported.
    pub fn grade(&self, truth: &Truth, sub: &Submission) -> EvalReport {
        if sub.header != self.header {
            return EvalReport::failure(format!(
                "header mismatch: expected {:?}, found {:?}",
                self.header, sub.header
            ));
        }
        let mut seen: BTreeMap<&str, &str> = BTreeMap::new();
        for (id, value) in &sub.rows {
            if !truth.values.contains_key(id) {
                return EvalReport::failure(format!("unexpected id `{id}`"));
            }
            if seen.insert(id, value).is_some() {
                return EvalReport::failure(format!("duplicate id `{id}`"));
            }
        }
        let absent: Vec<&String> = truth.ids.iter().filter(|id| !seen.contains_key(id.as_str())).collect();
        if let Some(first) = absent.first() {
            return EvalReport::failure(format!(
                "missing {} id(s); first missing id `{first}`",
                absent.len()
            ));
        }
        let preds: Vec<&str> = truth.ids.iter().map(|id| seen[id.as_str()]).collect();
        let gold: Vec<&str> = truth.ids.iter().map(|id| truth.values[id].as_str()).collect();
        match self.metric.score::<f64>(&preds, &gold) {
            Ok(score) => EvalReport::ok(score),
            Err(e) => EvalReport::failure(e.to_string()),
        }
    }

    /// Reads both files and grades; every error becomes a failed report.
    pub fn grade_paths(&self, truth: &Path, submission: &Path, source: Target) -> EvalReport {
        let truth = match self.load_truth(truth) {
            Ok(t) => t,
            Err(e) => return EvalReport::failure(format!("{source} truth unavailable: {e}")),
        };
        match Submission::read(submission, source) {
            Ok(sub) => self.grade(&truth, &sub),
            Err(e) => EvalReport::failure(e),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grader(metric: Metric) -> Grader {
        Grader {
            metric,
            id_column: "id".into(),
            target_column: "target".into(),
            header: vec!["id".into(), "target".into()],
        }
    }

    fn truth(pairs: &[(&str, &str)]) -> Truth {
        Truth {
            ids: pairs.iter().map(|p| p.0.to_string()).collect(),
            values: pairs.iter().map(|p| (p.0.to_string(), p.1.to_string())).collect(),
        }
    }

    fn sub(pairs: &[(&str, &str)]) -> Submission {
        Submission {
            header: vec!["id".into(), "target".into()],
            rows: pairs.iter().map(|p| (p.0.to_string(), p.1.to_string())).collect(),
            source: Target::Validation,
        }
    }

    #[test]
    fn rmse_example_and_identity() {
        let g = grader(Metric::Rmse);
        let t = truth(&[("a", "1"), ("b", "2"), ("c", "3")]);
        let r = g.grade(&t, &sub(&[("c", "5"), ("a", "1"), ("b", "2")]));
        assert!(r.success);
        assert!((r.score.unwrap() - (4.0f64 / 3.0).sqrt()).abs() < 1e-12);
        let same = g.grade(&t, &sub(&[("a", "1"), ("b", "2"), ("c", "3")]));
        assert_eq!(same.score, Some(0.0));
    }

    #[test]
    fn defects_fail_without_score() {
        let g = grader(Metric::Rmse);
        let t = truth(&[("a", "1"), ("b", "2")]);
        let cases = [
            (sub(&[("a", "1")]), "missing"),
            (sub(&[("a", "1"), ("b", "2"), ("z", "3")]), "unexpected id `z`"),
            (sub(&[("a", "1"), ("a", "1")]), "duplicate id `a`"),
            (sub(&[("a", "1"), ("b", "two")]), "unparseable"),
        ];
        for (s, needle) in cases {
            let r = g.grade(&t, &s);
            assert!(!r.success && r.score.is_none());
            assert!(r.message.contains(needle), "{}", r.message);
        }
        let mut bad_header = sub(&[("a", "1"), ("b", "2")]);
        bad_header.header[1] = "pred".into();
        assert!(g.grade(&t, &bad_header).message.starts_with("header mismatch"));
    }

    #[test]
    fn report_json_shape() {
        let r = EvalReport::ok(1.0 / 3.0);
        let text = r.to_json_string();
        assert_eq!(
            text,
            "{\n    \"score\": 0.333333,\n    \"success\": true,\n    \"message\": \"\"\n}"
        );
        let back = EvalReport::from_json(&text).unwrap();
        assert!(back.success);
        let f = EvalReport::failure("bad \"row\"");
        let text = f.to_json_string();
        assert!(text.contains("\"score\": null"));
        assert_eq!(EvalReport::from_json(&text).unwrap(), f);
        assert!(EvalReport::from_json(r#"{"score": 1.0, "success": true}"#).is_err());
        assert!(EvalReport::from_json(r#"{"score": null, "success": true, "message": ""}"#).is_err());
    }

    #[test]
    fn non_finite_is_failure() {
        let r = EvalReport::ok(f64::NAN);
        assert!(!r.success);
        assert!(r.score.is_none());
    }
}
