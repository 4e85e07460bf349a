//! Completion gateway: one interface over scripted, recorded, and live
//! backends, plus the prompt templates and the response grammars the roles
//! depend on.

mod gateway;
mod live;
pub mod parse;
mod replay;
mod scripted;
pub mod templates;

use std::fmt;
use std::ops::AddAssign;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use gateway::{CallRecord, Gateway};
pub use live::{LiveBackend, LiveConfig};
pub use parse::ParseError;
pub use replay::{verify_log, Divergence, ReplayBackend};
pub use scripted::{Script, ScriptEntry, ScriptedBackend};
pub use templates::Template;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Coordinator,
    Analyzer,
    Proposer,
    Coder,
    Evaluator,
    Monitor,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::Coordinator => "coordinator",
            Role::Analyzer => "analyzer",
            Role::Proposer => "proposer",
            Role::Coder => "coder",
            Role::Evaluator => "evaluator",
            Role::Monitor => "monitor",
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub role: Role,
    /// Logical caller, e.g. `coordinator` or `t1/agent-0`. Calls are numbered
    /// per channel so concurrent callers get stable identities.
    pub channel: String,
    pub prompt: String,
    pub max_tokens: u32,
    pub temperature: f64,
    pub seed: Option<u64>,
}

impl CompletionRequest {
    pub fn new(role: Role, channel: impl Into<String>, prompt: impl Into<String>) -> Self {
        Self {
            role,
            channel: channel.into(),
            prompt: prompt.into(),
            max_tokens: 4096,
            temperature: 0.0,
            seed: None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    Live,
    Scripted,
    Replay,
}

/// Token counts and estimated cost; adds component-wise.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TokenUsage {
    pub uncached_prompt: u64,
    pub cached_prompt: u64,
    pub completion: u64,
    pub cost: f64,
}

impl AddAssign for TokenUsage {
    fn add_assign(&mut self, o: Self) {
        self.uncached_prompt += o.uncached_prompt;
        self.cached_prompt += o.cached_prompt;
        self.completion += o.completion;
        self.cost += o.cost;
    }
}

impl TokenUsage {
    /// Rough count for backends that do not report usage: one token per
    /// four characters, rounded up.
    pub fn estimate(prompt: &str, completion: &str) -> Self {
        let toks = |s: &str| (s.chars().count() as u64).div_ceil(4);
        Self {
            uncached_prompt: toks(prompt),
            cached_prompt: 0,
            completion: toks(completion),
            cost: 0.0,
        }
    }
}

/// Prices in currency units per million tokens.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PriceTable {
    pub uncached_prompt: f64,
    pub cached_prompt: f64,
    pub completion: f64,
}

impl PriceTable {
    pub fn cost(&self, u: &TokenUsage) -> f64 {
        (u.uncached_prompt as f64 * self.uncached_prompt
            + u.cached_prompt as f64 * self.cached_prompt
            + u.completion as f64 * self.completion)
            / 1_000_000.0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompletionResponse {
    pub text: String,
    pub usage: TokenUsage,
    pub backend: BackendKind,
}

/// Position of a call in the log: the channel and its per-channel index.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct CallKey {
    pub channel: String,
    pub seq: u64,
}

/// What a backend hands back; usage is estimated when absent.
#[derive(Clone, Debug, PartialEq)]
pub struct BackendReply {
    pub text: String,
    pub usage: Option<TokenUsage>,
}

pub trait CompletionBackend: Send + Sync {
    fn kind(&self) -> BackendKind;
    fn complete(&self, req: &CompletionRequest, key: &CallKey) -> Result<BackendReply, LlmError>;
}

#[derive(Debug, Error)]
pub enum LlmError {
    #[error("empty prompt")]
    EmptyPrompt,
    #[error("no script entry matches {role} request on channel `{channel}`; prompt begins: {head:?}")]
    NoMatch {
        role: Role,
        channel: String,
        head: String,
    },
    #[error("{count} script entries match {role} request (entries {entries:?}); prompt begins: {head:?}")]
    AmbiguousMatch {
        role: Role,
        count: usize,
        entries: Vec<usize>,
        head: String,
    },
    #[error("script entry {entry} has no responses left for channel `{channel}`")]
    Exhausted { entry: usize, channel: String },
    #[error("template `{template}` is missing placeholder `{name}`")]
    MissingPlaceholder { template: String, name: String },
    #[error("transport failed after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("backend rejected request: {0}")]
    Rejected(String),
    #[error("replay has no recorded call {channel}#{seq}")]
    NotRecorded { channel: String, seq: u64 },
    #[error("divergence at call {index} ({channel}#{seq}): {reason}")]
    Diverged {
        index: usize,
        channel: String,
        seq: u64,
        reason: String,
    },
    #[error("backend configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error("io error at {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn usage_adds_componentwise() {
        let mut a = TokenUsage::estimate("abcde", "xy");
        assert_eq!((a.uncached_prompt, a.completion), (2, 1));
        a += TokenUsage {
            uncached_prompt: 1,
            cached_prompt: 2,
            completion: 3,
            cost: 0.5,
        };
        assert_eq!((a.uncached_prompt, a.cached_prompt, a.completion), (3, 2, 4));
        assert_eq!(a.cost, 0.5);
    }

    #[test]
    fn price_table_per_million() {
        let p = PriceTable {
            uncached_prompt: 1.1,
            cached_prompt: 0.275,
            completion: 4.4,
        };
        let u = TokenUsage {
            uncached_prompt: 1_000_000,
            cached_prompt: 0,
            completion: 500_000,
            cost: 0.0,
        };
        assert!((p.cost(&u) - 3.3).abs() < 1e-12);
    }
}
