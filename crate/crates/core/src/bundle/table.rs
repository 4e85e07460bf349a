use std::path::Path;

use super::BundleError;

/// A CSV file held as strings: header plus rectangular rows.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Table {
    pub headers: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

fn csv_err(path: &Path, e: impl std::fmt::Display) -> BundleError {
    BundleError::Csv {
        path: path.display().to_string(),
        reason: e.to_string(),
    }
}

impl Table {
    pub fn new(headers: Vec<String>) -> Self {
        Self {
            headers,
            rows: Vec::new(),
        }
    }

    pub fn read(path: &Path) -> Result<Self, BundleError> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .from_path(path)
            .map_err(|e| csv_err(path, e))?;
        let headers: Vec<String> = reader
            .headers()
            .map_err(|e| csv_err(path, e))?
            .iter()
            .map(|h| h.trim().to_string())
            .collect();
        if headers.iter().all(|h| h.is_empty()) {
            return Err(csv_err(path, "missing header row"));
        }
        let mut rows = Vec::new();
        for rec in reader.records() {
            let rec = rec.map_err(|e| csv_err(path, e))?;
            rows.push(rec.iter().map(str::to_string).collect());
        }
        Ok(Self { headers, rows })
    }

    pub fn write(&self, path: &Path) -> Result<(), BundleError> {
        let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
        w.write_record(&self.headers).map_err(|e| csv_err(path, e))?;
        for row in &self.rows {
            w.write_record(row).map_err(|e| csv_err(path, e))?;
        }
        w.flush().map_err(|e| csv_err(path, e))
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.headers.iter().position(|h| h == name)
    }

    pub fn require(&self, name: &str, path: &Path) -> Result<usize, BundleError> {
        self.column(name)
            .ok_or_else(|| csv_err(path, format!("missing column `{name}`")))
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Copy keeping only the listed rows (in the given order).
    pub fn select_rows(&self, idx: &[usize]) -> Table {
        Table {
            headers: self.headers.clone(),
            rows: idx.iter().map(|&i| self.rows[i].clone()).collect(),
        }
    }

    /// Copy keeping only the listed columns.
    pub fn select_columns(&self, cols: &[usize]) -> Table {
        Table {
            headers: cols.iter().map(|&c| self.headers[c].clone()).collect(),
            rows: self
                .rows
                .iter()
                .map(|r| cols.iter().map(|&c| r[c].clone()).collect())
                .collect(),
        }
    }
}
