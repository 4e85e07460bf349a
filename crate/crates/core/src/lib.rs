//! Engine for a community-augmented machine-learning engineering agent loop.
//!
//! The crate is organised by responsibility:
//!
//! - [`community`]: append-only artifact store with a dependency DAG.
//! - [`bundle`]: competition bundles, train/validation splits, leakage audit, grading.
//! - [`leaderboard`]: frozen leaderboards, medals, and aggregate reporting.
//! - [`llm`]: completion gateway, prompt templates, and response parsers.
//! - [`sandbox`]: sandboxed code-execution sessions over a framed wire protocol.
//! - [`roles`]: the analyzer, proposer, coordinator, coder, and evaluator roles.
//! - [`run`]: configuration, iteration driver, and replay.

pub mod community;
pub mod num;
pub mod seed;
pub mod text;
pub mod bundle;
pub mod fixtures;
pub mod leaderboard;
pub mod llm;
pub mod sandbox;
pub mod fsutil;
pub mod roles;
pub mod run;

/// Frozen leaderboard over `f64` scores.
pub type Leaderboard = leaderboard::FrozenLeaderboard<f64>;
/// Frozen leaderboard over `f32` scores.
pub type Leaderboard32 = leaderboard::FrozenLeaderboard<f32>;
