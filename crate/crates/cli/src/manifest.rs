//! Scan manifests: one CSV row per scan directory.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

pub const MANIFEST_FILE: &str = "manifest.csv";
pub const KEPT_MANIFEST_FILE: &str = "manifest_kept.csv";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRow {
    pub scan_id: String,
    pub subject_id: String,
    /// Scan directory, relative to the manifest's directory unless absolute.
    pub path: PathBuf,
    pub seed: Option<u64>,
    /// Simulated defect label, when known.
    pub defect: Option<String>,
    /// Standard deviation of the ground-truth HRV, when known.
    pub hrv_std: Option<f64>,
    /// Triage class, filled in by `qc`.
    pub quality: Option<String>,
}

#[derive(Debug, Clone)]
pub struct Manifest {
    /// Directory the row paths are relative to.
    pub base: PathBuf,
    pub rows: Vec<ManifestRow>,
}

impl Manifest {
    pub fn read(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(CliError::Data(format!("manifest {} not found", path.display())));
        }
        let mut reader = csv::Reader::from_path(path)?;
        let rows = reader.deserialize().collect::<Result<Vec<ManifestRow>, _>>()?;
        let mut ids: Vec<&str> = rows.iter().map(|r| r.scan_id.as_str()).collect();
        ids.sort_unstable();
        if let Some(w) = ids.windows(2).find(|w| w[0] == w[1]) {
            return Err(CliError::Data(format!("manifest {} lists scan {} twice", path.display(), w[0])));
        }
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(Self { base, rows })
    }

    pub fn scan_dir(&self, row: &ManifestRow) -> PathBuf {
        self.base.join(&row.path)
    }

    /// Writes the rows to `path`, re-expressing scan paths relative to the
    /// new manifest's directory when possible.
    pub fn write_rows(&self, rows: &[ManifestRow], path: &Path) -> Result<()> {
        let new_base = path.parent().unwrap_or(Path::new(""));
        let mut w = csv::Writer::from_path(path)?;
        for row in rows {
            let dir = self.scan_dir(row);
            let rel = if new_base == self.base {
                row.path.clone()
            } else {
                match dir.strip_prefix(new_base) {
                    Ok(rel) => rel.to_path_buf(),
                    Err(_) => std::path::absolute(&dir).map_err(|e| CliError::io(&dir, e))?,
                }
            };
            w.serialize(ManifestRow {
                path: rel,
                ..row.clone()
            })?;
        }
        w.flush().map_err(|e| CliError::io(path, e))
    }
}
