//! Train/validation split of the public training data.
//!
//! The split writes `public/` (the original data layout with `train.csv`
//! replaced by the training rows, plus label-free validation inputs and a
//! validation sample submission) and `private/validate.csv` with the held-out
//! labels. Files are copied, never linked.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use tracing::warn;

use super::{io_err, BundleError, CompetitionBundle, Table};
use crate::seed;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitOptions {
    /// Fraction of rows kept for training.
    pub ratio: f64,
    pub stratify_on: Option<String>,
    pub seed: u64,
}

impl Default for SplitOptions {
    fn default() -> Self {
        Self {
            ratio: 0.9,
            stratify_on: None,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub seed: u64,
    pub ratio: f64,
    pub train_rows: BTreeSet<String>,
    pub validation_inputs: BTreeSet<String>,
    /// Relative to the split root.
    pub validation_labels_location: String,
    pub stratified: bool,
    pub stratify_column: Option<String>,
    pub warnings: Vec<String>,
}

/// Row indices of a split, each list ascending.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RowSplit {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub warnings: Vec<String>,
}

fn target_count(ratio: f64, n: usize) -> usize {
    ((1.0 - ratio) * n as f64).round() as usize
}

/// Assigns `n` rows to train/validation. With `strata`, each class gets
/// `round((1 - ratio) * n_c)` validation rows; singleton classes stay in train.
pub fn split_rows(
    n: usize,
    strata: Option<&[String]>,
    ratio: f64,
    seed_value: u64,
) -> Result<RowSplit, BundleError> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(BundleError::Split(format!("ratio {ratio} outside (0, 1)")));
    }
    if n < 2 {
        return Err(BundleError::Split(format!("need at least 2 rows, found {n}")));
    }
    let mut validation = Vec::new();
    let mut warnings = Vec::new();
    match strata {
        None => {
            let mut idx: Vec<usize> = (0..n).collect();
            idx.shuffle(&mut seed::rng(seed::derive_seed(seed_value, "split")));
            let k = target_count(ratio, n).clamp(1, n - 1);
            validation.extend_from_slice(&idx[..k]);
        }
        Some(labels) => {
            if labels.len() != n {
                return Err(BundleError::Split("strata length differs from row count".into()));
            }
            let mut classes: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
            for (i, l) in labels.iter().enumerate() {
                classes.entry(l.as_str()).or_default().push(i);
            }
            for (label, mut members) in classes.clone() {
                if members.len() == 1 {
                    let msg = format!("class `{label}` has a single row; kept in train");
                    warn!("{msg}");
                    warnings.push(msg);
                    continue;
                }
                let k = target_count(ratio, members.len()).min(members.len() - 1);
                members.shuffle(&mut seed::rng(seed::derive_seed(
                    seed_value,
                    &format!("split/class/{label}"),
                )));
                validation.extend_from_slice(&members[..k]);
            }
            if validation.is_empty() {
                // every class rounded to zero: take one row from the largest class
                if let Some((label, members)) = classes
                    .iter()
                    .filter(|(_, m)| m.len() > 1)
                    .max_by(|a, b| a.1.len().cmp(&b.1.len()).then(b.0.cmp(a.0)))
                {
                    let mut members = members.clone();
                    members.shuffle(&mut seed::rng(seed::derive_seed(
                        seed_value,
                        &format!("split/class/{label}"),
                    )));
                    validation.push(members[0]);
                } else {
                    return Err(BundleError::Split("no class has two or more rows".into()));
                }
            }
        }
    }
    validation.sort_unstable();
    let vset: BTreeSet<usize> = validation.iter().copied().collect();
    let train = (0..n).filter(|i| !vset.contains(i)).collect();
    Ok(RowSplit {
        train,
        validation,
        warnings,
    })
}

/// Where a split reads from and writes to.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SplitLayout {
    pub data_dir: PathBuf,
    pub sample_submission: PathBuf,
    pub dest_root: PathBuf,
    pub id_column: String,
    pub target_column: String,
}

/// Splits `data_dir/train.csv` and materializes `public/` and `private/`
/// under `dest_root`, replacing any previous split there.
pub fn split_into(layout: &SplitLayout, options: &SplitOptions) -> Result<SplitManifest, BundleError> {
    let train_path = layout.data_dir.join("train.csv");
    let table = Table::read(&train_path)?;
    let id_col = table.require(&layout.id_column, &train_path)?;
    let target_col = table.require(&layout.target_column, &train_path)?;
    let strata: Option<Vec<String>> = match &options.stratify_on {
        Some(col) => {
            let c = table.require(col, &train_path)?;
            Some(table.rows.iter().map(|r| r[c].trim().to_string()).collect())
        }
        None => None,
    };
    let ids: Vec<String> = table.rows.iter().map(|r| r[id_col].trim().to_string()).collect();
    if ids.iter().collect::<BTreeSet<_>>().len() != ids.len() {
        return Err(BundleError::Split(format!("duplicate ids in {}", train_path.display())));
    }
    let rows = split_rows(table.len(), strata.as_deref(), options.ratio, options.seed)?;

    let public = layout.dest_root.join("public");
    let private = layout.dest_root.join("private");
    for d in [&public, &private] {
        if d.exists() {
            fs::remove_dir_all(d).map_err(io_err(d))?;
        }
    }
    crate::fsutil::copy_tree(&layout.data_dir, &public, &["train.csv"])
        .map_err(|(path, source)| io_err(&path)(source))?;
    fs::create_dir_all(&private).map_err(io_err(&private))?;

    table.select_rows(&rows.train).write(&public.join("train.csv"))?;
    let input_cols: Vec<usize> = (0..table.headers.len()).filter(|c| *c != target_col).collect();
    table
        .select_rows(&rows.validation)
        .select_columns(&input_cols)
        .write(&public.join("validate.csv"))?;
    table
        .select_rows(&rows.validation)
        .select_columns(&[id_col, target_col])
        .write(&private.join("validate.csv"))?;

    let sample = Table::read(&layout.sample_submission)?;
    let fill: Vec<String> = match sample.rows.first() {
        Some(r) => r[1..].to_vec(),
        None => vec!["0".to_string(); sample.headers.len().saturating_sub(1)],
    };
    let mut vsample = Table::new(sample.headers.clone());
    for &i in &rows.validation {
        let mut row = vec![ids[i].clone()];
        row.extend(fill.iter().cloned());
        vsample.rows.push(row);
    }
    vsample.write(&public.join("validate_sample_submission.csv"))?;
    let public_sample = public.join("sample_submission.csv");
    if !public_sample.exists() {
        fs::copy(&layout.sample_submission, &public_sample).map_err(io_err(&public_sample))?;
    }

    let manifest = SplitManifest {
        seed: options.seed,
        ratio: options.ratio,
        train_rows: rows.train.iter().map(|&i| ids[i].clone()).collect(),
        validation_inputs: rows.validation.iter().map(|&i| ids[i].clone()).collect(),
        validation_labels_location: "private/validate.csv".into(),
        stratified: options.stratify_on.is_some(),
        stratify_column: options.stratify_on.clone(),
        warnings: rows.warnings,
    };
    let mpath = layout.dest_root.join("split_manifest.json");
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&mpath, text + "\n").map_err(io_err(&mpath))?;
    Ok(manifest)
}

pub fn split_dataset(
    bundle: &CompetitionBundle,
    options: &SplitOptions,
) -> Result<SplitManifest, BundleError> {
    split_into(
        &SplitLayout {
            data_dir: bundle.data_dir(),
            sample_submission: bundle.sample_submission(),
            dest_root: bundle.split_root().to_path_buf(),
            id_column: bundle.spec.id_column.clone(),
            target_column: bundle.spec.target_column.clone(),
        },
        options,
    )
}

impl SplitManifest {
    pub fn load(path: &Path) -> Result<Self, BundleError> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        serde_json::from_str(&text).map_err(|e| BundleError::Split(format!("{}: {e}", path.display())))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bundle::load_bundle;
    use crate::fixtures;

    #[test]
    fn hundred_rows_ninety_ten() {
        let s = split_rows(100, None, 0.9, 1).unwrap();
        assert_eq!((s.train.len(), s.validation.len()), (90, 10));
    }

    #[test]
    fn single_class_stratified() {
        let labels = vec!["a".to_string(); 10];
        let s = split_rows(10, Some(&labels), 0.9, 3).unwrap();
        assert_eq!((s.train.len(), s.validation.len()), (9, 1));
    }

    #[test]
    fn two_balanced_classes() {
        let labels: Vec<String> = (0..100).map(|i| if i < 50 { "a" } else { "b" }.to_string()).collect();
        let s = split_rows(100, Some(&labels), 0.9, 9).unwrap();
        let a = s.validation.iter().filter(|&&i| i < 50).count();
        assert_eq!((a, s.validation.len() - a), (5, 5));
    }

    #[test]
    fn singleton_class_goes_to_train() {
        let mut labels = vec!["a".to_string(); 20];
        labels.push("lonely".into());
        let s = split_rows(21, Some(&labels), 0.9, 0).unwrap();
        assert!(s.train.contains(&20));
        assert_eq!(s.warnings.len(), 1);
    }

    #[test]
    fn bad_inputs() {
        assert!(split_rows(1, None, 0.9, 0).is_err());
        assert!(split_rows(10, None, 1.0, 0).is_err());
    }

    #[test]
    fn materialized_layout() {
        let dir = tempfile::tempdir().unwrap();
        fixtures::toy_regression(dir.path(), 50, 2);
        let b = load_bundle(dir.path()).unwrap();
        let m = b.split(&SplitOptions { seed: 5, ..Default::default() }).unwrap();
        assert_eq!(m.validation_inputs.len(), 5);
        assert!(m.train_rows.is_disjoint(&m.validation_inputs));
        let pub_v = Table::read(&b.public_dir().join("validate.csv")).unwrap();
        assert!(pub_v.column("target").is_none());
        let priv_v = Table::read(&b.private_dir().join("validate.csv")).unwrap();
        assert_eq!(priv_v.headers, vec!["id", "target"]);
        for f in ["test.csv", "train.csv", "validate_sample_submission.csv", "sample_submission.csv"] {
            assert!(b.public_dir().join(f).is_file(), "{f}");
        }
        let again = b.split(&SplitOptions { seed: 5, ..Default::default() }).unwrap();
        assert_eq!(again, m);
        assert_eq!(SplitManifest::load(&b.manifest_path()).unwrap(), m);
    }
}
