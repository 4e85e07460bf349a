//! Global record of experimental runs and best-run selection.

use std::cmp::Ordering;
use std::path::PathBuf;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::LeaderboardError;
use crate::bundle::EvalReport;
use crate::num::Direction;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run_id: String,
    pub draft_id: String,
    pub iteration: u32,
    pub validation_score: Option<f64>,
    pub reports: Vec<EvalReport>,
    /// Best test-set submission produced by the run, if any.
    pub submission_path: Option<PathBuf>,
}

impl RunRecord {
    /// Has a successful validation grade with a finite score.
    pub fn is_graded(&self) -> bool {
        self.validation_score.is_some_and(f64::is_finite) && self.reports.iter().any(|r| r.success)
    }
}

/// Best validation score per direction; ties go to the earlier iteration,
/// then the smaller run id.
pub fn select_best_run(
    records: &[RunRecord],
    direction: Direction,
) -> Result<&RunRecord, LeaderboardError> {
    records
        .iter()
        .filter(|r| r.is_graded())
        .min_by(|a, b| {
            let (sa, sb) = (a.validation_score.unwrap(), b.validation_score.unwrap());
            direction
                .cmp_best_first(sa, sb)
                .then(a.iteration.cmp(&b.iteration))
                .then_with(|| a.run_id.cmp(&b.run_id))
        })
        .ok_or(LeaderboardError::NoValidRun)
}

/// Serialized appender shared by concurrently running agents.
#[derive(Debug, Default)]
pub struct RunRegistry {
    records: Mutex<Vec<RunRecord>>,
}

impl RunRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn append(&self, record: RunRecord) {
        self.records.lock().expect("registry poisoned").push(record);
    }

    /// Records sorted by (iteration, run id) so the view is independent of
    /// completion order.
    pub fn snapshot(&self) -> Vec<RunRecord> {
        let mut v = self.records.lock().expect("registry poisoned").clone();
        v.sort_by(|a, b| match a.iteration.cmp(&b.iteration) {
            Ordering::Equal => a.run_id.cmp(&b.run_id),
            o => o,
        });
        v
    }

    pub fn best(&self, direction: Direction) -> Result<RunRecord, LeaderboardError> {
        select_best_run(&self.snapshot(), direction).cloned()
    }

    pub fn len(&self) -> usize {
        self.records.lock().expect("registry poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(id: &str, it: u32, score: Option<f64>) -> RunRecord {
        RunRecord {
            run_id: id.into(),
            draft_id: "d".into(),
            iteration: it,
            validation_score: score,
            reports: vec![EvalReport {
                score,
                success: score.is_some(),
                message: if score.is_some() { String::new() } else { "failed".into() },
            }],
            submission_path: None,
        }
    }

    #[test]
    fn picks_best_and_breaks_ties() {
        let v = vec![rec("a", 1, Some(0.9)), rec("b", 1, Some(0.95))];
        assert_eq!(select_best_run(&v, Direction::HigherBetter).unwrap().run_id, "b");
        let tie = vec![rec("z", 2, Some(0.5)), rec("y", 1, Some(0.5)), rec("x", 1, Some(0.5))];
        assert_eq!(select_best_run(&tie, Direction::LowerBetter).unwrap().run_id, "x");
    }

    #[test]
    fn no_graded_record() {
        let v = vec![rec("a", 1, None)];
        let err = select_best_run(&v, Direction::HigherBetter).unwrap_err();
        assert_eq!(err.to_string(), "no valid run");
    }

    #[test]
    fn registry_is_order_independent() {
        let r = RunRegistry::new();
        std::thread::scope(|s| {
            for i in 0..8 {
                let r = &r;
                s.spawn(move || r.append(rec(&format!("r{i}"), i % 2, Some(i as f64))));
            }
        });
        let snap = r.snapshot();
        assert_eq!(snap.len(), 8);
        assert_eq!(snap[0].run_id, "r0");
        assert_eq!(r.best(Direction::HigherBetter).unwrap().run_id, "r7");
    }
}
