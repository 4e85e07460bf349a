//! Registered competition metrics.
//!
//! The numeric kernels are generic over [`Scalar`] and accumulate in input
//! order, so a given input produces the same bits on every run.

use std::cmp::Ordering;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::num::{Direction, Scalar};

pub const LOG_LOSS_EPS: f64 = 1e-15;

#[derive(Debug, Error, PartialEq)]
pub enum MetricError {
    #[error("no rows to score")]
    Empty,
    #[error("prediction count {predictions} does not match truth count {truth}")]
    Length { predictions: usize, truth: usize },
    #[error("unparseable {which} value `{value}` at row {row}")]
    Unparseable {
        which: &'static str,
        row: usize,
        value: String,
    },
    #[error("truth label `{value}` at row {row} is not 0 or 1")]
    NonBinaryLabel { row: usize, value: String },
    #[error("probability {value} at row {row} is outside [0, 1]")]
    OutOfRange { row: usize, value: String },
    #[error("truth contains a single class; metric undefined")]
    SingleClass,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Rmse,
    Mae,
    Accuracy,
    Auc,
    LogLoss,
}

impl Metric {
    pub const ALL: [Metric; 5] = [
        Metric::Rmse,
        Metric::Mae,
        Metric::Accuracy,
        Metric::Auc,
        Metric::LogLoss,
    ];

    pub fn from_name(name: &str) -> Option<Self> {
        match name.trim().to_ascii_lowercase().as_str() {
            "rmse" => Some(Metric::Rmse),
            "mae" => Some(Metric::Mae),
            "accuracy" => Some(Metric::Accuracy),
            "auc" | "roc_auc" => Some(Metric::Auc),
            "log_loss" | "logloss" => Some(Metric::LogLoss),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Metric::Rmse => "rmse",
            Metric::Mae => "mae",
            Metric::Accuracy => "accuracy",
            Metric::Auc => "auc",
            Metric::LogLoss => "log_loss",
        }
    }

    pub fn direction(self) -> Direction {
        match self {
            Metric::Rmse | Metric::Mae | Metric::LogLoss => Direction::LowerBetter,
            Metric::Accuracy | Metric::Auc => Direction::HigherBetter,
        }
    }

    /// Scores string-valued predictions aligned row-by-row with `truth`.
    pub fn score<T: Scalar>(self, predictions: &[&str], truth: &[&str]) -> Result<T, MetricError> {
        if predictions.len() != truth.len() {
            return Err(MetricError::Length {
                predictions: predictions.len(),
                truth: truth.len(),
            });
        }
        match self {
            Metric::Rmse => rmse(&numbers(predictions, "prediction")?, &numbers(truth, "truth")?),
            Metric::Mae => mae(&numbers(predictions, "prediction")?, &numbers(truth, "truth")?),
            Metric::Accuracy => accuracy(predictions, truth),
            Metric::Auc => auc(&numbers(predictions, "prediction")?, &labels(truth)?),
            Metric::LogLoss => {
                let p: Vec<T> = numbers(predictions, "prediction")?;
                if let Some(row) = p.iter().position(|v| *v < T::zero() || *v > T::one()) {
                    return Err(MetricError::OutOfRange {
                        row: row + 1,
                        value: predictions[row].to_string(),
                    });
                }
                log_loss(&p, &labels(truth)?)
            }
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

fn parse_finite<T: Scalar>(raw: &str) -> Option<T> {
    raw.trim()
        .parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .and_then(T::from_f64)
}

fn numbers<T: Scalar>(values: &[&str], which: &'static str) -> Result<Vec<T>, MetricError> {
    values
        .iter()
        .enumerate()
        .map(|(i, v)| {
            parse_finite(v).ok_or_else(|| MetricError::Unparseable {
                which,
                row: i + 1,
                value: v.to_string(),
            })
        })
        .collect()
}

fn labels(values: &[&str]) -> Result<Vec<bool>, MetricError> {
    values
        .iter()
        .enumerate()
        .map(|(i, v)| match v.trim().parse::<f64>() {
            Ok(x) if x == 0.0 => Ok(false),
            Ok(x) if x == 1.0 => Ok(true),
            _ => Err(MetricError::NonBinaryLabel {
                row: i + 1,
                value: v.to_string(),
            }),
        })
        .collect()
}

fn check_len(a: usize, b: usize) -> Result<(), MetricError> {
    if a != b {
        return Err(MetricError::Length {
            predictions: a,
            truth: b,
        });
    }
    if a == 0 {
        return Err(MetricError::Empty);
    }
    Ok(())
}

fn count<T: Scalar>(n: usize) -> T {
    T::from_usize(n).expect("count representable")
}

pub fn rmse<T: Scalar>(pred: &[T], truth: &[T]) -> Result<T, MetricError> {
    check_len(pred.len(), truth.len())?;
    let sum = pred
        .iter()
        .zip(truth)
        .fold(T::zero(), |acc, (p, t)| acc + (*p - *t) * (*p - *t));
    Ok((sum / count(pred.len())).sqrt())
}

pub fn mae<T: Scalar>(pred: &[T], truth: &[T]) -> Result<T, MetricError> {
    check_len(pred.len(), truth.len())?;
    let sum = pred
        .iter()
        .zip(truth)
        .fold(T::zero(), |acc, (p, t)| acc + (*p - *t).abs());
    Ok(sum / count(pred.len()))
}

fn same_label(a: &str, b: &str) -> bool {
    let (a, b) = (a.trim(), b.trim());
    if a == b {
        return true;
    }
    match (a.parse::<f64>(), b.parse::<f64>()) {
        (Ok(x), Ok(y)) => x == y,
        _ => false,
    }
}

/// Fraction of exact label matches (numeric labels compare by value).
pub fn accuracy<T: Scalar>(pred: &[&str], truth: &[&str]) -> Result<T, MetricError> {
    check_len(pred.len(), truth.len())?;
    let hits = pred.iter().zip(truth).filter(|(p, t)| same_label(p, t)).count();
    Ok(count::<T>(hits) / count(pred.len()))
}

/// Area under the ROC curve via average ranks (ties share their mean rank).
pub fn auc<T: Scalar>(scores: &[T], labels: &[bool]) -> Result<T, MetricError> {
    check_len(scores.len(), labels.len())?;
    let n_pos = labels.iter().filter(|l| **l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(MetricError::SingleClass);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| {
        scores[a]
            .partial_cmp(&scores[b])
            .unwrap_or(Ordering::Equal)
            .then(a.cmp(&b))
    });
    let mut rank_sum_pos = T::zero();
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // ranks i+1 ..= j+1 share their mean
        let mean_rank = count::<T>(i + j + 2) / T::lit(2.0);
        let pos_in_group = order[i..=j].iter().filter(|&&k| labels[k]).count();
        rank_sum_pos = rank_sum_pos + mean_rank * count(pos_in_group);
        i = j + 1;
    }
    let np: T = count(n_pos);
    let nn: T = count(n_neg);
    Ok((rank_sum_pos - np * (np + T::one()) / T::lit(2.0)) / (np * nn))
}

/// Binary cross-entropy with probabilities clipped to `[eps, 1 - eps]`.
pub fn log_loss<T: Scalar>(probs: &[T], labels: &[bool]) -> Result<T, MetricError> {
    check_len(probs.len(), labels.len())?;
    let eps = T::lit(LOG_LOSS_EPS);
    let one = T::one();
    let sum = probs.iter().zip(labels).fold(T::zero(), |acc, (p, y)| {
        let p = p.max(eps).min(one - eps);
        acc + if *y { -p.ln() } else { -(one - p).ln() }
    });
    Ok(sum / count(probs.len()))
}
