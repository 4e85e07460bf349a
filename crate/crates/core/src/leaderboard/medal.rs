//! Medal cutoffs as a function of team count, loaded from a bracket table.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::LeaderboardError;

const DEFAULT_RULE: &str = include_str!("../../config/medal_rule.json");

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Medal {
    Gold,
    Silver,
    Bronze,
    None,
}

impl Medal {
    pub fn is_medal(self) -> bool {
        self != Medal::None
    }
}

impl fmt::Display for Medal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Medal::Gold => "gold",
            Medal::Silver => "silver",
            Medal::Bronze => "bronze",
            Medal::None => "none",
        })
    }
}

/// `max(min, fixed + floor(fraction * N))`, clamped to N.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Cutoff {
    #[serde(default)]
    pub fixed: u64,
    #[serde(default)]
    pub fraction: f64,
    #[serde(default)]
    pub min: u64,
}

impl Cutoff {
    pub fn resolve(&self, n: usize) -> usize {
        let scaled = (self.fraction * n as f64 + 1e-9).floor() as u64;
        let v = (self.fixed + scaled).max(self.min);
        (v as usize).min(n)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bracket {
    pub min_teams: usize,
    pub gold: Cutoff,
    pub silver: Cutoff,
    pub bronze: Cutoff,
}

/// Resolved rank cutoffs for one board size.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MedalCutoffs {
    pub gold: usize,
    pub silver: usize,
    pub bronze: usize,
}

impl MedalCutoffs {
    pub fn medal_for(&self, rank: usize) -> Medal {
        if rank <= self.gold {
            Medal::Gold
        } else if rank <= self.silver {
            Medal::Silver
        } else if rank <= self.bronze {
            Medal::Bronze
        } else {
            Medal::None
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MedalRule {
    pub brackets: Vec<Bracket>,
}

impl MedalRule {
    /// The rule shipped in `config/medal_rule.json`.
    pub fn default_rule() -> Self {
        Self::from_json(DEFAULT_RULE).expect("bundled medal rule is valid")
    }

    pub fn from_json(text: &str) -> Result<Self, LeaderboardError> {
        let rule: MedalRule =
            serde_json::from_str(text).map_err(|e| LeaderboardError::Rule(e.to_string()))?;
        rule.validate()?;
        Ok(rule)
    }

    pub fn load(path: &Path) -> Result<Self, LeaderboardError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| LeaderboardError::Rule(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    fn validate(&self) -> Result<(), LeaderboardError> {
        if self.brackets.is_empty() {
            return Err(LeaderboardError::Rule("no brackets".into()));
        }
        if self.brackets[0].min_teams > 1 {
            return Err(LeaderboardError::Rule("first bracket must start at 1 team".into()));
        }
        if self.brackets.windows(2).any(|w| w[0].min_teams >= w[1].min_teams) {
            return Err(LeaderboardError::Rule("brackets must be strictly increasing".into()));
        }
        Ok(())
    }

    /// Cutoffs for a board of `n` teams, forced monotone: gold ≤ silver ≤ bronze ≤ n.
    pub fn cutoffs(&self, n: usize) -> MedalCutoffs {
        let b = self
            .brackets
            .iter()
            .rev()
            .find(|b| b.min_teams <= n)
            .unwrap_or(&self.brackets[0]);
        let gold = b.gold.resolve(n);
        let silver = b.silver.resolve(n).max(gold);
        let bronze = b.bronze.resolve(n).max(silver);
        MedalCutoffs {
            gold,
            silver,
            bronze,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_table() {
        let r = MedalRule::default_rule();
        let c = |n| {
            let m = r.cutoffs(n);
            (m.gold, m.silver, m.bronze)
        };
        assert_eq!(c(1000), (12, 50, 100));
        assert_eq!(c(50), (5, 10, 20));
        assert_eq!(c(5), (1, 1, 2));
        assert_eq!(c(1), (1, 1, 1));
        assert_eq!(c(200), (10, 40, 80));
        assert_eq!(c(500), (11, 50, 100));
        assert_eq!(c(5000), (20, 250, 500));
    }

    #[test]
    fn boundary_rank_1000() {
        let c = MedalRule::default_rule().cutoffs(1000);
        assert_eq!(c.medal_for(100), Medal::Bronze);
        assert_eq!(c.medal_for(101), Medal::None);
        assert_eq!(c.medal_for(12), Medal::Gold);
        assert_eq!(c.medal_for(13), Medal::Silver);
    }

    #[test]
    fn invalid_rules_rejected() {
        assert!(MedalRule::from_json(r#"{"brackets": []}"#).is_err());
        assert!(MedalRule::from_json("nope").is_err());
    }
}
