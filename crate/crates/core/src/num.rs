//! Scalar abstraction for score arithmetic.
//!
//! Metric kernels and leaderboard math are written once over [`Scalar`] and
//! instantiated for `f32` and `f64`. Orchestration code works in `f64`.

use std::cmp::Ordering;
use std::fmt::{Debug, Display};

use num_traits::{Float, FromPrimitive, ToPrimitive};
use serde::{Deserialize, Serialize};

/// Floating point type usable as a competition score.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + Debug + Display + Default + Send + Sync + 'static
{
    /// Lossy conversion from an `f64` literal.
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("finite literal representable in scalar type")
    }

    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Which way a metric improves.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    HigherBetter,
    LowerBetter,
}

impl Direction {
    /// `true` when `a` is strictly better than `b`.
    pub fn is_better<T: PartialOrd>(self, a: T, b: T) -> bool {
        match self {
            Direction::HigherBetter => a > b,
            Direction::LowerBetter => a < b,
        }
    }

    /// Ordering that sorts the best value first. NaN sorts last.
    pub fn cmp_best_first<T: Scalar>(self, a: T, b: T) -> Ordering {
        match (a.is_nan(), b.is_nan()) {
            (true, true) => return Ordering::Equal,
            (true, false) => return Ordering::Greater,
            (false, true) => return Ordering::Less,
            _ => {}
        }
        let natural = a.partial_cmp(&b).unwrap_or(Ordering::Equal);
        match self {
            Direction::HigherBetter => natural.reverse(),
            Direction::LowerBetter => natural,
        }
    }

    pub fn flipped(self) -> Self {
        match self {
            Direction::HigherBetter => Direction::LowerBetter,
            Direction::LowerBetter => Direction::HigherBetter,
        }
    }
}

impl Display for Direction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Direction::HigherBetter => f.write_str("higher_better"),
            Direction::LowerBetter => f.write_str("lower_better"),
        }
    }
}
