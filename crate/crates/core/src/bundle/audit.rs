//! Leakage audit of the public side of a split.
//!
//! Links are resolved before anything is read. A file leaks when it links
//! into `private/`, is byte-identical to a private file, or is a CSV with a
//! column that reproduces the validation labels row for row.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{CompetitionBundle, Table};
use crate::seed::sha256_hex;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    /// Path relative to the split root.
    pub file: String,
    pub reason: String,
}

fn walk(dir: &Path, out: &mut Vec<PathBuf>) {
    let Ok(rd) = fs::read_dir(dir) else { return };
    let mut entries: Vec<PathBuf> = rd.filter_map(|e| e.ok().map(|e| e.path())).collect();
    entries.sort();
    for p in entries {
        match fs::symlink_metadata(&p) {
            Ok(m) if m.is_dir() => walk(&p, out),
            Ok(_) => out.push(p),
            Err(_) => {}
        }
    }
}

fn same_value(a: &str, b: &str) -> bool {
    let (a, b) = (a.trim(), b.trim());
    a == b
        || matches!((a.parse::<f64>(), b.parse::<f64>()), (Ok(x), Ok(y)) if x == y)
}

/// Name of the first column that matches every validation label present.
fn leaking_column(table: &Table, id_column: &str, labels: &BTreeMap<String, String>) -> Option<String> {
    let id = table.column(id_column)?;
    for (c, name) in table.headers.iter().enumerate() {
        if c == id {
            continue;
        }
        let mut matched = 0usize;
        let mut distinct: Vec<&str> = Vec::new();
        let mut all_match = true;
        for row in &table.rows {
            let Some(label) = labels.get(row[id].trim()) else { continue };
            if !same_value(&row[c], label) {
                all_match = false;
                break;
            }
            matched += 1;
            if !distinct.contains(&label.as_str()) {
                distinct.push(label);
            }
        }
        // a constant column cannot be told apart from a placeholder prediction
        if all_match && matched > 0 && distinct.len() >= 2 {
            return Some(name.clone());
        }
    }
    None
}

/// Audits `root/public` against `root/private/validate.csv`.
pub fn audit_tree(root: &Path, id_column: &str) -> Vec<Violation> {
    let public = root.join("public");
    let private = root.join("private");
    let private_canon = fs::canonicalize(&private).unwrap_or(private.clone());
    let rel = |p: &Path| {
        p.strip_prefix(root)
            .unwrap_or(p)
            .to_string_lossy()
            .replace('\\', "/")
    };

    let mut private_files = Vec::new();
    walk(&private, &mut private_files);
    let private_hashes: BTreeMap<String, String> = private_files
        .iter()
        .filter_map(|p| fs::read(p).ok().map(|b| (sha256_hex(&b), rel(p))))
        .collect();

    let labels: BTreeMap<String, String> = Table::read(&private.join("validate.csv"))
        .ok()
        .and_then(|t| {
            let id = t.column(id_column)?;
            let label = (0..t.headers.len()).find(|c| *c != id)?;
            Some(
                t.rows
                    .iter()
                    .map(|r| (r[id].trim().to_string(), r[label].clone()))
                    .collect(),
            )
        })
        .unwrap_or_default();

    let mut files = Vec::new();
    walk(&public, &mut files);
    let mut violations = Vec::new();
    for p in files {
        let file = rel(&p);
        let is_link = fs::symlink_metadata(&p).is_ok_and(|m| m.file_type().is_symlink());
        if is_link {
            match fs::canonicalize(&p) {
                Ok(target) if target.starts_with(&private_canon) => {
                    violations.push(Violation {
                        file,
                        reason: format!("links into private/ ({})", target.display()),
                    });
                    continue;
                }
                Ok(target) if target.is_dir() => continue,
                Ok(_) => {}
                Err(_) => continue,
            }
        }
        let Ok(bytes) = fs::read(&p) else { continue };
        if let Some(src) = private_hashes.get(&sha256_hex(&bytes)) {
            violations.push(Violation {
                file,
                reason: format!("identical to {src}"),
            });
            continue;
        }
        if p.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv")) {
            if let Ok(t) = Table::read(&p) {
                if let Some(col) = leaking_column(&t, id_column, &labels) {
                    violations.push(Violation {
                        file,
                        reason: format!("column `{col}` reproduces validation labels"),
                    });
                }
            }
        }
    }
    violations
}

pub fn audit_no_leakage(bundle: &CompetitionBundle) -> Vec<Violation> {
    audit_tree(bundle.split_root(), &bundle.spec.id_column)
}
