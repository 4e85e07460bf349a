//! Durable, append-only record of community changes.
//!
//! Each event is one file `log/NNNNNN.json`; `index/NNNNNN.json` holds the
//! snapshot reached after that event so any version can be inspected without
//! replay. Replay from the log alone is still authoritative.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{publish, ArtifactId, CommunityError, CommunitySnapshot, Publishable};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum CommunityEvent {
    Init {
        snapshot: CommunitySnapshot,
    },
    Publish {
        artifact: Publishable,
        deps: BTreeSet<ArtifactId>,
        score: Option<f64>,
    },
}

#[derive(Debug)]
pub struct CommunityLog {
    root: PathBuf,
    next: u64,
}

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> CommunityError + '_ {
    move |source| CommunityError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CommunityError> {
    let text = serde_json::to_string_pretty(value).map_err(|source| CommunityError::Json {
        path: path.display().to_string(),
        source,
    })?;
    fs::write(path, text + "\n").map_err(io(path))
}

impl CommunityLog {
    /// Creates a fresh log under `root`, refusing to overwrite an existing one.
    pub fn create(root: &Path, initial: &CommunitySnapshot) -> Result<Self, CommunityError> {
        let log_dir = root.join("log");
        if log_dir.exists() && fs::read_dir(&log_dir).map_err(io(&log_dir))?.next().is_some() {
            return Err(CommunityError::Log(format!(
                "{} already contains events",
                log_dir.display()
            )));
        }
        fs::create_dir_all(&log_dir).map_err(io(&log_dir))?;
        let index = root.join("index");
        fs::create_dir_all(&index).map_err(io(&index))?;
        let mut log = CommunityLog {
            root: root.to_path_buf(),
            next: 0,
        };
        log.append(
            &CommunityEvent::Init {
                snapshot: initial.clone(),
            },
            initial,
        )?;
        Ok(log)
    }

    /// Opens an existing log for appending.
    pub fn open(root: &Path) -> Result<Self, CommunityError> {
        let next = Self::event_paths(root)?.len() as u64;
        if next == 0 {
            return Err(CommunityError::Log(format!("no events under {}", root.display())));
        }
        Ok(CommunityLog {
            root: root.to_path_buf(),
            next,
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn len(&self) -> u64 {
        self.next
    }

    pub fn is_empty(&self) -> bool {
        self.next == 0
    }

    fn append(
        &mut self,
        event: &CommunityEvent,
        after: &CommunitySnapshot,
    ) -> Result<(), CommunityError> {
        let name = format!("{:06}.json", self.next);
        write_json(&self.root.join("log").join(&name), event)?;
        write_json(&self.root.join("index").join(&name), after)?;
        self.next += 1;
        Ok(())
    }

    /// Publishes into `current`, records the event, and returns the new snapshot.
    pub fn publish(
        &mut self,
        current: &CommunitySnapshot,
        artifact: Publishable,
        deps: &BTreeSet<ArtifactId>,
        score: Option<f64>,
    ) -> Result<CommunitySnapshot, CommunityError> {
        let next = publish(current, artifact.clone(), deps, score)?;
        self.append(
            &CommunityEvent::Publish {
                artifact,
                deps: deps.clone(),
                score,
            },
            &next,
        )?;
        Ok(next)
    }

    fn event_paths(root: &Path) -> Result<Vec<PathBuf>, CommunityError> {
        let dir = root.join("log");
        if !dir.exists() {
            return Ok(Vec::new());
        }
        let mut paths: Vec<PathBuf> = fs::read_dir(&dir)
            .map_err(io(&dir))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "json"))
            .collect();
        paths.sort();
        Ok(paths)
    }

    pub fn events(root: &Path) -> Result<Vec<CommunityEvent>, CommunityError> {
        Self::event_paths(root)?
            .iter()
            .map(|p| {
                let text = fs::read_to_string(p).map_err(io(p))?;
                serde_json::from_str(&text).map_err(|source| CommunityError::Json {
                    path: p.display().to_string(),
                    source,
                })
            })
            .collect()
    }

    /// Rebuilds the snapshot with the given version by replaying events.
    pub fn replay_to(root: &Path, version: u64) -> Result<CommunitySnapshot, CommunityError> {
        let mut events = Self::events(root)?.into_iter();
        let mut snap = match events.next() {
            Some(CommunityEvent::Init { snapshot }) => snapshot,
            _ => return Err(CommunityError::Log("log does not start with init".into())),
        };
        while snap.version < version {
            match events.next() {
                Some(CommunityEvent::Publish {
                    artifact,
                    deps,
                    score,
                }) => snap = publish(&snap, artifact, &deps, score)?,
                Some(CommunityEvent::Init { .. }) => {
                    return Err(CommunityError::Log("init event in the middle of the log".into()))
                }
                None => {
                    return Err(CommunityError::Log(format!(
                        "version {version} not reached; log ends at {}",
                        snap.version
                    )))
                }
            }
        }
        Ok(snap)
    }

    /// Replays the whole log.
    pub fn replay_latest(root: &Path) -> Result<CommunitySnapshot, CommunityError> {
        Self::replay_to(root, u64::MAX).or_else(|_| {
            let n = Self::events(root)?.len() as u64;
            Self::replay_to(root, n.saturating_sub(1))
        })
    }
}

#[cfg(test)]
mod tests {
    use super::super::Kernel;
    use super::*;

    fn kernel(key: &str, t: i64) -> Publishable {
        Publishable::Kernel(Kernel {
            id: ArtifactId::kernel(key),
            author_tier: Default::default(),
            votes: 0,
            public_score: None,
            published_at: t,
            body: format!("body of {key}"),
            produced_files: vec![],
        })
    }

    #[test]
    fn replay_reconstructs_every_version() {
        let dir = tempfile::tempdir().unwrap();
        let s0 = CommunitySnapshot::empty();
        let mut log = CommunityLog::create(dir.path(), &s0).unwrap();
        let s1 = log.publish(&s0, kernel("a", 1), &BTreeSet::new(), Some(0.3)).unwrap();
        let s2 = log
            .publish(&s1, kernel("b", 2), &BTreeSet::from([ArtifactId::kernel("a")]), None)
            .unwrap();
        assert_eq!(CommunityLog::replay_to(dir.path(), 0).unwrap(), s0);
        assert_eq!(CommunityLog::replay_to(dir.path(), 1).unwrap(), s1);
        assert_eq!(CommunityLog::replay_to(dir.path(), 2).unwrap(), s2);
        assert_eq!(CommunityLog::replay_latest(dir.path()).unwrap(), s2);
        assert!(CommunityLog::replay_to(dir.path(), 3).is_err());
        assert_eq!(CommunityLog::open(dir.path()).unwrap().len(), 3);
        assert!(CommunityLog::create(dir.path(), &s0).is_err());
    }

    #[test]
    fn failed_publish_is_not_logged() {
        let dir = tempfile::tempdir().unwrap();
        let s0 = CommunitySnapshot::empty();
        let mut log = CommunityLog::create(dir.path(), &s0).unwrap();
        let bad = BTreeSet::from([ArtifactId::kernel("ghost")]);
        assert!(log.publish(&s0, kernel("x", 1), &bad, None).is_err());
        assert_eq!(log.len(), 1);
    }
}
