//! Comparisons against a frozen human leaderboard, medal assignment,
//! benchmark-level aggregation, and best-run selection.

mod aggregate;
mod medal;
mod runs;

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::num::{Direction, Scalar};

pub use aggregate::{aggregate, format_rate, CompetitionOutcome, Summary};
pub use medal::{Bracket, Cutoff, Medal, MedalCutoffs, MedalRule};
pub use runs::{select_best_run, RunRecord, RunRegistry};

#[derive(Debug, Error)]
pub enum LeaderboardError {
    #[error("leaderboard is empty")]
    Empty,
    #[error("leaderboard entry {index} has non-finite score")]
    NonFinite { index: usize },
    #[error("leaderboard file {path}: {reason}")]
    Parse { path: String, reason: String },
    #[error("medal rule: {0}")]
    Rule(String),
    #[error("no valid run")]
    NoValidRun,
    #[error("no competition outcomes to aggregate")]
    NoOutcomes,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Entry<T> {
    pub rank: usize,
    pub score: T,
}

/// Final standings of a finished competition. Entries are best-first with
/// dense ranks `1..=N`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrozenLeaderboard<T> {
    entries: Vec<Entry<T>>,
    direction: Direction,
}

impl<T: Scalar> FrozenLeaderboard<T> {
    /// Sorts `scores` best-first and assigns ranks.
    pub fn new(scores: Vec<T>, direction: Direction) -> Result<Self, LeaderboardError> {
        if scores.is_empty() {
            return Err(LeaderboardError::Empty);
        }
        if let Some(index) = scores.iter().position(|s| !s.is_finite()) {
            return Err(LeaderboardError::NonFinite { index });
        }
        let mut scores = scores;
        scores.sort_by(|a, b| direction.cmp_best_first(*a, *b));
        let entries = scores
            .into_iter()
            .enumerate()
            .map(|(i, score)| Entry { rank: i + 1, score })
            .collect();
        Ok(Self { entries, direction })
    }

    /// Reads a `rank,score` CSV. File order is not trusted; entries are re-sorted.
    pub fn from_csv(path: &Path, direction: Direction) -> Result<Self, LeaderboardError> {
        let parse_err = |reason: String| LeaderboardError::Parse {
            path: path.display().to_string(),
            reason,
        };
        let mut reader = csv::Reader::from_path(path).map_err(|e| parse_err(e.to_string()))?;
        let headers = reader.headers().map_err(|e| parse_err(e.to_string()))?.clone();
        let col = headers
            .iter()
            .position(|h| h.trim() == "score")
            .ok_or_else(|| parse_err("missing `score` column".into()))?;
        let mut scores = Vec::new();
        for (i, rec) in reader.records().enumerate() {
            let rec = rec.map_err(|e| parse_err(e.to_string()))?;
            let raw = rec.get(col).unwrap_or("").trim();
            let v: f64 = raw
                .parse()
                .map_err(|_| parse_err(format!("row {}: bad score `{raw}`", i + 1)))?;
            scores.push(T::lit(v));
        }
        Self::new(scores, direction)
    }

    pub fn entries(&self) -> &[Entry<T>] {
        &self.entries
    }

    pub fn direction(&self) -> Direction {
        self.direction
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Median score; mean of the two middle scores for even N.
    pub fn median(&self) -> T {
        let n = self.entries.len();
        if n % 2 == 1 {
            self.entries[n / 2].score
        } else {
            (self.entries[n / 2 - 1].score + self.entries[n / 2].score) / T::lit(2.0)
        }
    }

    /// Number of entries strictly worse than `score`.
    pub fn count_worse(&self, score: T) -> usize {
        self.entries
            .iter()
            .filter(|e| self.direction.is_better(score, e.score))
            .count()
    }

    /// Number of entries strictly better than `score`.
    pub fn count_better(&self, score: T) -> usize {
        self.entries
            .iter()
            .filter(|e| self.direction.is_better(e.score, score))
            .count()
    }

    /// Rank the score would earn if inserted: ties are placed optimistically.
    pub fn virtual_rank(&self, score: T) -> usize {
        1 + self.count_better(score)
    }

    /// Fraction of entries strictly worse than `score`; an absent score wins nothing.
    pub fn win_rate(&self, score: Option<T>) -> T {
        match score {
            Some(s) if !s.is_nan() => {
                T::from_usize(self.count_worse(s)).unwrap() / T::from_usize(self.len()).unwrap()
            }
            _ => T::zero(),
        }
    }

    pub fn above_median(&self, score: Option<T>) -> bool {
        match score {
            Some(s) if !s.is_nan() => self.direction.is_better(s, self.median()),
            _ => false,
        }
    }

    pub fn assign_medal(&self, score: Option<T>, rule: &MedalRule) -> Medal {
        match score {
            Some(s) if !s.is_nan() => rule.cutoffs(self.len()).medal_for(self.virtual_rank(s)),
            _ => Medal::None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn board(scores: &[f64], d: Direction) -> FrozenLeaderboard<f64> {
        FrozenLeaderboard::new(scores.to_vec(), d).unwrap()
    }

    #[test]
    fn win_rate_examples() {
        let b = board(&[0.9, 0.8, 0.7, 0.6], Direction::HigherBetter);
        assert_eq!(b.win_rate(Some(0.85)), 0.75);
        assert_eq!(b.win_rate(None), 0.0);
        let flat = board(&[0.5, 0.5, 0.5], Direction::HigherBetter);
        assert_eq!(flat.win_rate(Some(0.5)), 0.0);
    }

    #[test]
    fn empty_board_rejected() {
        assert!(matches!(
            FrozenLeaderboard::<f64>::new(vec![], Direction::HigherBetter),
            Err(LeaderboardError::Empty)
        ));
    }

    #[test]
    fn entries_sorted_and_ranked() {
        let b = board(&[3.0, 1.0, 2.0], Direction::LowerBetter);
        let ranks: Vec<(usize, f64)> = b.entries().iter().map(|e| (e.rank, e.score)).collect();
        assert_eq!(ranks, vec![(1, 1.0), (2, 2.0), (3, 3.0)]);
    }

    #[test]
    fn above_median_examples() {
        let b = board(&[1.0, 2.0, 3.0], Direction::LowerBetter);
        assert!(b.above_median(Some(1.5)));
        assert!(!b.above_median(Some(2.0)));
        assert!(!b.above_median(None));
        let even = board(&[1.0, 2.0, 3.0, 4.0], Direction::HigherBetter);
        assert_eq!(even.median(), 2.5);
        assert!(!even.above_median(Some(2.5)));
        assert!(even.above_median(Some(2.6)));
    }

    #[test]
    fn medal_examples() {
        let rule = MedalRule::default_rule();
        let b = board(&[0.9, 0.8, 0.7, 0.6, 0.5], Direction::HigherBetter);
        assert_eq!(b.assign_medal(Some(0.95), &rule), Medal::Gold);
        assert_eq!(b.assign_medal(Some(0.1), &rule), Medal::None);
        assert_eq!(b.assign_medal(None, &rule), Medal::None);
    }

    #[test]
    fn works_for_f32() {
        let b = FrozenLeaderboard::<f32>::new(vec![0.9, 0.8, 0.7, 0.6], Direction::HigherBetter).unwrap();
        assert_eq!(b.win_rate(Some(0.85)), 0.75);
    }

    #[test]
    fn csv_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("leaderboard.csv");
        std::fs::write(&p, "rank,score\n2,0.5\n1,0.7\n3,0.1\n").unwrap();
        let b = FrozenLeaderboard::<f64>::from_csv(&p, Direction::HigherBetter).unwrap();
        assert_eq!(b.entries()[0].score, 0.7);
        std::fs::write(&p, "rank,score\n1,abc\n").unwrap();
        assert!(FrozenLeaderboard::<f64>::from_csv(&p, Direction::HigherBetter).is_err());
    }
}
