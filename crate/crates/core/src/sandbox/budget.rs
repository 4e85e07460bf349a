//! Wall-clock and step budgets.

use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::SandboxError;

/// Serializes a `Duration` as fractional seconds.
pub mod secs {
    use serde::{Deserialize, Deserializer, Serializer};
    use std::time::Duration;

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(d.as_secs_f64())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        let v = f64::deserialize(d)?;
        Duration::try_from_secs_f64(v).map_err(serde::de::Error::custom)
    }
}

const HOUR: u64 = 3600;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Budget {
    #[serde(with = "secs")]
    pub run_wall: Duration,
    #[serde(with = "secs")]
    pub session_wall: Duration,
    #[serde(with = "secs")]
    pub cell_wall: Duration,
    pub max_steps: u32,
}

impl Default for Budget {
    fn default() -> Self {
        Self {
            run_wall: Duration::from_secs(24 * HOUR),
            session_wall: Duration::from_secs(5 * HOUR),
            cell_wall: Duration::from_secs(5 * HOUR),
            max_steps: 30,
        }
    }
}

impl Budget {
    pub fn validate(&self) -> Result<(), SandboxError> {
        let bad = |m: &str| Err(SandboxError::InvalidBudget(m.to_string()));
        if self.cell_wall.is_zero() || self.max_steps == 0 {
            return bad("all budgets must be positive");
        }
        if self.cell_wall > self.session_wall {
            return bad("cell_wall exceeds session_wall");
        }
        if self.session_wall > self.run_wall {
            return bad("session_wall exceeds run_wall");
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BudgetCheck {
    Within,
    SessionExhausted,
    RunExhausted,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct BudgetUsage {
    /// Sum of cell wall times in the session.
    pub session_elapsed: Duration,
    /// Wall clock since the run started.
    pub run_elapsed: Duration,
}

/// Pure budget check. Running out of run time dominates running out of
/// session time.
pub fn enforce_budgets(usage: BudgetUsage, budget: &Budget) -> BudgetCheck {
    if usage.run_elapsed >= budget.run_wall {
        BudgetCheck::RunExhausted
    } else if usage.session_elapsed >= budget.session_wall {
        BudgetCheck::SessionExhausted
    } else {
        BudgetCheck::Within
    }
}

/// Start of the run, shared by every session of the run.
#[derive(Clone, Copy, Debug)]
pub struct RunClock {
    origin: Instant,
}

impl RunClock {
    pub fn start() -> Self {
        Self { origin: Instant::now() }
    }

    /// A clock that has already been running for `elapsed`.
    pub fn started_ago(elapsed: Duration) -> Self {
        Self {
            origin: Instant::now().checked_sub(elapsed).unwrap_or_else(Instant::now),
        }
    }

    pub fn elapsed(&self) -> Duration {
        self.origin.elapsed()
    }
}

impl Default for RunClock {
    fn default() -> Self {
        Self::start()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn usage(session_mins: u64, run_mins: u64) -> BudgetUsage {
        BudgetUsage {
            session_elapsed: Duration::from_secs(session_mins * 60),
            run_elapsed: Duration::from_secs(run_mins * 60),
        }
    }

    #[test]
    fn boundaries() {
        let b = Budget::default();
        assert_eq!(enforce_budgets(usage(4 * 60 + 59, 300), &b), BudgetCheck::Within);
        assert_eq!(enforce_budgets(usage(5 * 60 + 1, 302), &b), BudgetCheck::SessionExhausted);
        assert_eq!(enforce_budgets(usage(10, 24 * 60 + 1), &b), BudgetCheck::RunExhausted);
    }

    #[test]
    fn ordering_invariant() {
        let mut b = Budget::default();
        assert!(b.validate().is_ok());
        b.cell_wall = Duration::from_secs(6 * HOUR);
        assert!(b.validate().is_err());
        b.cell_wall = Duration::ZERO;
        assert!(b.validate().is_err());
    }

    #[test]
    fn seconds_serde() {
        let b = Budget {
            cell_wall: Duration::from_millis(2500),
            ..Budget::default()
        };
        let v = serde_json::to_value(b).unwrap();
        assert_eq!(v["cell_wall"], 2.5);
        assert_eq!(serde_json::from_value::<Budget>(v).unwrap(), b);
    }
}
