//! `windows`: per-scan sample counts, optionally materialising a cache.

use std::fs;
use std::path::Path;

use hrv_bold::dataset::{build_windows, content_digest, WindowCache, WindowSpec};
use serde::{Deserialize, Serialize};

use crate::data::load_all;
use crate::error::{CliError, Result};
use crate::manifest::Manifest;

pub const WINDOW_REPORT_FILE: &str = "windows.csv";
pub const CACHE_DIR: &str = "window_cache";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowCountRow {
    pub scan_id: String,
    pub n_frames: usize,
    pub n_windows: usize,
    pub first_target: Option<usize>,
    pub last_target: Option<usize>,
    pub cached: bool,
}

pub fn cmd_windows(manifest_path: &Path, spec: &WindowSpec, hrv_window_s: f64, out: &Path, cache: bool) -> Result<Vec<WindowCountRow>> {
    spec.validate()?;
    let manifest = Manifest::read(manifest_path)?;
    let scans = load_all(&manifest, hrv_window_s)?;
    fs::create_dir_all(out).map_err(|e| CliError::io(out, e))?;
    let store = WindowCache::new(out.join(CACHE_DIR));
    let mut rows = Vec::with_capacity(scans.len());
    for s in &scans {
        let mut targets = spec.target_frames(s.roi.n_frames());
        let first_target = targets.next();
        let last_target = targets.last().or(first_target);
        let n_windows = spec.window_count(s.roi.n_frames());
        let mut cached = false;
        if cache && n_windows > 0 {
            let digest = content_digest(&s.roi, &s.hrv);
            if store.load(&s.scan_id, spec, &digest)?.is_none() {
                let samples = build_windows(&s.scan_id, &s.roi, &s.hrv, spec)?;
                store.store(&samples, spec, &digest)?;
            }
            cached = true;
        }
        rows.push(WindowCountRow {
            scan_id: s.scan_id.clone(),
            n_frames: s.roi.n_frames(),
            n_windows,
            first_target,
            last_target,
            cached,
        });
    }
    let path = out.join(WINDOW_REPORT_FILE);
    let mut w = csv::Writer::from_path(&path)?;
    for r in &rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| CliError::io(&path, e))?;
    Ok(rows)
}
