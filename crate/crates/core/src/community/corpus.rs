//! Ingestion of an artifact corpus from a directory.
//!
//! Layout: one `<stem>.json` metadata file per artifact. The text body is read
//! from `<stem>.txt` (or the file named by `payload`); a sibling directory
//! `<stem>/` (or `files_dir`) holds dataset files or kernel outputs.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{ArtifactKind, AuthorTier, Comment, CommunityError, DatasetFile, Timestamp};
use crate::seed::sha256_hex;

/// On-disk metadata for one artifact.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ArtifactMeta {
    pub kind: Option<ArtifactKind>,
    pub key: String,
    #[serde(default)]
    pub votes: i64,
    #[serde(default)]
    pub tier: AuthorTier,
    #[serde(default)]
    pub published_at: Option<Timestamp>,
    #[serde(default)]
    pub score: Option<f64>,
    /// Dependencies as `kind:key` strings.
    #[serde(default)]
    pub deps: Vec<String>,
    #[serde(default)]
    pub produced_files: Vec<String>,
    #[serde(default)]
    pub comments: Vec<Comment>,
    #[serde(default)]
    pub files: Vec<DatasetFile>,
    #[serde(default)]
    pub payload: Option<String>,
    #[serde(default)]
    pub files_dir: Option<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RawArtifact {
    pub meta: ArtifactMeta,
    pub body: String,
    /// Directory holding dataset files or kernel outputs, when present.
    pub files_path: Option<PathBuf>,
}

impl RawArtifact {
    pub fn new(meta: ArtifactMeta, body: impl Into<String>) -> Self {
        Self {
            meta,
            body: body.into(),
            files_path: None,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RawCollection {
    pub artifacts: Vec<RawArtifact>,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CommunityError + '_ {
    move |source| CommunityError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Reads every artifact in `dir`, verifying dataset digests against the bytes
/// on disk. Missing directories yield an empty collection.
pub fn load_corpus(dir: &Path) -> Result<RawCollection, CommunityError> {
    if !dir.exists() {
        return Ok(RawCollection::default());
    }
    let mut entries: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(io_err(dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    entries.sort();

    let mut artifacts = Vec::with_capacity(entries.len());
    for meta_path in entries {
        let text = fs::read_to_string(&meta_path).map_err(io_err(&meta_path))?;
        let mut meta: ArtifactMeta =
            serde_json::from_str(&text).map_err(|source| CommunityError::Json {
                path: meta_path.display().to_string(),
                source,
            })?;
        let stem = meta_path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();

        let body_path = dir.join(meta.payload.clone().unwrap_or_else(|| format!("{stem}.txt")));
        let body = if body_path.is_file() {
            fs::read_to_string(&body_path).map_err(io_err(&body_path))?
        } else {
            String::new()
        };

        let files_dir = dir.join(meta.files_dir.clone().unwrap_or_else(|| stem.clone()));
        let files_path = files_dir.is_dir().then_some(files_dir);

        if let Some(files_dir) = &files_path {
            match meta.kind {
                Some(ArtifactKind::Dataset) => {
                    if meta.files.is_empty() {
                        meta.files = scan_manifest(files_dir)?;
                    } else {
                        verify_manifest(&meta.key, files_dir, &meta.files)?;
                    }
                }
                Some(ArtifactKind::Kernel) if meta.produced_files.is_empty() => {
                    meta.produced_files = scan_manifest(files_dir)?
                        .into_iter()
                        .map(|f| f.path)
                        .collect();
                }
                _ => {}
            }
        }
        artifacts.push(RawArtifact {
            meta,
            body,
            files_path,
        });
    }
    Ok(RawCollection { artifacts })
}

fn walk(root: &Path, dir: &Path, out: &mut Vec<PathBuf>) -> Result<(), CommunityError> {
    let mut children: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(io_err(dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .collect();
    children.sort();
    for child in children {
        if child.is_dir() {
            walk(root, &child, out)?;
        } else {
            out.push(child.strip_prefix(root).unwrap_or(&child).to_path_buf());
        }
    }
    Ok(())
}

/// Builds a manifest (relative path, size, sha256) for every file under `dir`.
pub fn scan_manifest(dir: &Path) -> Result<Vec<DatasetFile>, CommunityError> {
    let mut rels = Vec::new();
    walk(dir, dir, &mut rels)?;
    rels.into_iter()
        .map(|rel| {
            let full = dir.join(&rel);
            let bytes = fs::read(&full).map_err(io_err(&full))?;
            Ok(DatasetFile {
                path: rel.to_string_lossy().replace('\\', "/"),
                size: bytes.len() as u64,
                sha256: sha256_hex(&bytes),
            })
        })
        .collect()
}

fn verify_manifest(key: &str, dir: &Path, files: &[DatasetFile]) -> Result<(), CommunityError> {
    for f in files {
        let full = dir.join(&f.path);
        let bytes = fs::read(&full).map_err(|e| CommunityError::DigestMismatch {
            key: key.to_string(),
            path: f.path.clone(),
            reason: e.to_string(),
        })?;
        if bytes.len() as u64 != f.size {
            return Err(CommunityError::DigestMismatch {
                key: key.to_string(),
                path: f.path.clone(),
                reason: format!("size {} != manifest {}", bytes.len(), f.size),
            });
        }
        let digest = sha256_hex(&bytes);
        if !digest.eq_ignore_ascii_case(&f.sha256) {
            return Err(CommunityError::DigestMismatch {
                key: key.to_string(),
                path: f.path.clone(),
                reason: "sha256 differs".into(),
            });
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn loads_kernels_and_verifies_datasets() {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path();
        fs::write(
            root.join("k1.json"),
            r#"{"kind":"kernel","key":"k1","votes":3,"published_at":100,"deps":["dataset:d1"]}"#,
        )
        .unwrap();
        fs::write(root.join("k1.txt"), "print('hi')").unwrap();
        fs::create_dir(root.join("d1")).unwrap();
        fs::write(root.join("d1/data.csv"), "a,b\n1,2\n").unwrap();
        let digest = sha256_hex(b"a,b\n1,2\n");
        fs::write(
            root.join("d1.json"),
            format!(
                r#"{{"kind":"dataset","key":"d1","published_at":50,"files":[{{"path":"data.csv","size":8,"sha256":"{digest}"}}]}}"#
            ),
        )
        .unwrap();

        let raw = load_corpus(root).unwrap();
        assert_eq!(raw.artifacts.len(), 2);
        let k1 = raw.artifacts.iter().find(|a| a.meta.key == "k1").unwrap();
        assert_eq!(k1.body, "print('hi')");

        fs::write(root.join("d1/data.csv"), "tampered").unwrap();
        let err = load_corpus(root).unwrap_err();
        assert!(matches!(err, CommunityError::DigestMismatch { .. }), "{err}");
    }

    #[test]
    fn missing_dir_is_empty() {
        let raw = load_corpus(Path::new("/definitely/not/here")).unwrap();
        assert!(raw.artifacts.is_empty());
    }
}
