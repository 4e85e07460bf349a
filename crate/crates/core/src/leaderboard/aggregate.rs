//! Benchmark-level summary across competitions.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{FrozenLeaderboard, LeaderboardError, Medal, MedalRule};
use crate::num::Scalar;

/// Result of one competition run, scored against its frozen leaderboard.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompetitionOutcome {
    pub slug: String,
    pub valid_submission: bool,
    pub score: Option<f64>,
    pub medal: Medal,
    pub above_median: bool,
    pub win_rate: f64,
}

impl CompetitionOutcome {
    /// Scores `score` against `board`; an invalid submission earns nothing.
    pub fn evaluate<T: Scalar>(
        slug: impl Into<String>,
        score: Option<T>,
        board: &FrozenLeaderboard<T>,
        rule: &MedalRule,
    ) -> Self {
        let score = score.filter(|s| s.is_finite());
        CompetitionOutcome {
            slug: slug.into(),
            valid_submission: score.is_some(),
            score: score.map(|s| s.to_f64_lossy()),
            medal: board.assign_medal(score, rule),
            above_median: board.above_median(score),
            win_rate: board.win_rate(score).to_f64_lossy(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub competitions: usize,
    pub valid_submission_rate: f64,
    pub any_medal_rate: f64,
    pub gold_rate: f64,
    pub silver_rate: f64,
    pub bronze_rate: f64,
    pub above_median_rate: f64,
    pub mean_win_rate: f64,
}

/// Percentage with two decimals, e.g. `36.00%`.
pub fn format_rate(rate: f64) -> String {
    format!("{:.2}%", rate * 100.0)
}

pub fn aggregate(outcomes: &[CompetitionOutcome]) -> Result<Summary, LeaderboardError> {
    if outcomes.is_empty() {
        return Err(LeaderboardError::NoOutcomes);
    }
    let n = outcomes.len() as f64;
    let rate = |pred: &dyn Fn(&CompetitionOutcome) -> bool| {
        outcomes.iter().filter(|o| pred(o)).count() as f64 / n
    };
    Ok(Summary {
        competitions: outcomes.len(),
        valid_submission_rate: rate(&|o| o.valid_submission),
        any_medal_rate: rate(&|o| o.valid_submission && o.medal.is_medal()),
        gold_rate: rate(&|o| o.valid_submission && o.medal == Medal::Gold),
        silver_rate: rate(&|o| o.valid_submission && o.medal == Medal::Silver),
        bronze_rate: rate(&|o| o.valid_submission && o.medal == Medal::Bronze),
        above_median_rate: rate(&|o| o.valid_submission && o.above_median),
        mean_win_rate: outcomes
            .iter()
            .map(|o| if o.valid_submission { o.win_rate } else { 0.0 })
            .sum::<f64>()
            / n,
    })
}

impl Summary {
    /// Plain-text table of the rates.
    pub fn render(&self) -> String {
        let mut out = String::new();
        let rows = [
            ("Valid Submission", self.valid_submission_rate),
            ("Above Median", self.above_median_rate),
            ("Win Rate", self.mean_win_rate),
            ("Gold", self.gold_rate),
            ("Silver", self.silver_rate),
            ("Bronze", self.bronze_rate),
            ("Any Medal", self.any_medal_rate),
        ];
        let _ = writeln!(out, "competitions: {}", self.competitions);
        for (name, r) in rows {
            let _ = writeln!(out, "{name:<18}{:>8}", format_rate(r));
        }
        out
    }
}
