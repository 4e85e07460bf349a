//! Append-only store of community artifacts.
//!
//! A [`CommunitySnapshot`] is an immutable view of the kernels, datasets, and
//! discussions visible at some point of a run, together with the dependency
//! graph between kernels and datasets. Snapshots are produced by
//! [`init_community`] from a raw corpus and then advanced one artifact at a
//! time by [`publish`]; older snapshots are never mutated.
//!
//! Discussions are stored and sampled but are not vertices of the graph.

mod corpus;
mod graph;
mod log;
mod snapshot;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use corpus::{load_corpus, scan_manifest, ArtifactMeta, RawArtifact, RawCollection};
pub use graph::{CycleError, DependencyGraph};
pub use log::{CommunityEvent, CommunityLog};
pub use snapshot::{
    dependency_closure, init_community, publish, sample_artifacts, CommunitySnapshot, InitParams,
    Sample, SamplingPolicy,
};

/// UTC seconds since the Unix epoch.
pub type Timestamp = i64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArtifactKind {
    Kernel,
    Dataset,
    Discussion,
}

impl ArtifactKind {
    fn as_str(self) -> &'static str {
        match self {
            ArtifactKind::Kernel => "kernel",
            ArtifactKind::Dataset => "dataset",
            ArtifactKind::Discussion => "discussion",
        }
    }
}

/// Identity of an artifact: its kind plus an opaque key unique within a store.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ArtifactId {
    pub kind: ArtifactKind,
    pub key: String,
}

impl ArtifactId {
    pub fn new(kind: ArtifactKind, key: impl Into<String>) -> Self {
        Self {
            kind,
            key: key.into(),
        }
    }

    pub fn kernel(key: impl Into<String>) -> Self {
        Self::new(ArtifactKind::Kernel, key)
    }

    pub fn dataset(key: impl Into<String>) -> Self {
        Self::new(ArtifactKind::Dataset, key)
    }

    pub fn discussion(key: impl Into<String>) -> Self {
        Self::new(ArtifactKind::Discussion, key)
    }
}

impl fmt::Display for ArtifactId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.kind.as_str(), self.key)
    }
}

impl FromStr for ArtifactId {
    type Err = CommunityError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (kind, key) = s
            .split_once(':')
            .ok_or_else(|| CommunityError::BadId(s.to_string()))?;
        let kind = match kind {
            "kernel" => ArtifactKind::Kernel,
            "dataset" => ArtifactKind::Dataset,
            "discussion" => ArtifactKind::Discussion,
            _ => return Err(CommunityError::BadId(s.to_string())),
        };
        if key.is_empty() {
            return Err(CommunityError::BadId(s.to_string()));
        }
        Ok(ArtifactId::new(kind, key))
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AuthorTier {
    #[default]
    None,
    Novice,
    Contributor,
    Expert,
    Master,
    Grandmaster,
}

/// A shared code notebook, optionally carrying a public leaderboard score.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Kernel {
    pub id: ArtifactId,
    pub author_tier: AuthorTier,
    pub votes: u64,
    pub public_score: Option<f64>,
    pub published_at: Timestamp,
    pub body: String,
    pub produced_files: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetFile {
    pub path: String,
    pub size: u64,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dataset {
    pub id: ArtifactId,
    pub published_at: Timestamp,
    pub manifest: Vec<DatasetFile>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Comment {
    pub author_tier: AuthorTier,
    pub text: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Discussion {
    pub id: ArtifactId,
    pub votes: u64,
    pub published_at: Timestamp,
    pub body: String,
    pub comments: Vec<Comment>,
}

/// Artifacts that may be published back into the community.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Publishable {
    Kernel(Kernel),
    Dataset(Dataset),
}

impl Publishable {
    pub fn id(&self) -> &ArtifactId {
        match self {
            Publishable::Kernel(k) => &k.id,
            Publishable::Dataset(d) => &d.id,
        }
    }

    pub fn published_at(&self) -> Timestamp {
        match self {
            Publishable::Kernel(k) => k.published_at,
            Publishable::Dataset(d) => d.published_at,
        }
    }
}

#[derive(Debug, Error)]
pub enum CommunityError {
    #[error("malformed artifact `{key}`: {reason}")]
    Malformed { key: String, reason: String },
    #[error("duplicate artifact id {0}")]
    Duplicate(ArtifactId),
    #[error("unknown artifact {0}")]
    Unknown(ArtifactId),
    #[error("unknown dependency {0}")]
    UnknownDependency(ArtifactId),
    #[error("dependency {dependency} is published after its consumer {consumer}")]
    TemporalOrder {
        consumer: ArtifactId,
        dependency: ArtifactId,
    },
    #[error(transparent)]
    Cycle(#[from] CycleError),
    #[error("cannot parse artifact id `{0}` (expected kind:key)")]
    BadId(String),
    #[error("dataset `{key}` file `{path}` does not match its manifest: {reason}")]
    DigestMismatch {
        key: String,
        path: String,
        reason: String,
    },
    #[error("community log: {0}")]
    Log(String),
    #[error("io error at {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("json error in {path}: {source}")]
    Json {
        path: String,
        #[source]
        source: serde_json::Error,
    },
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn id_display_roundtrip() {
        let id = ArtifactId::kernel("alice/unet-baseline");
        let parsed: ArtifactId = id.to_string().parse().unwrap();
        assert_eq!(parsed, id);
        assert!("notakind:x".parse::<ArtifactId>().is_err());
        assert!("kernel:".parse::<ArtifactId>().is_err());
    }
}
