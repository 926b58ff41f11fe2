//! Loading scans with their measured HRV.

use std::path::Path;

use hrv_bold::io::{read_meta, read_ppg, read_scan_ppg, read_scan_roi, HrvSeries, RoiMatrix};
use hrv_bold::ppg::extract_hrv;
use rayon::prelude::*;

use crate::error::{CliError, Result};
use crate::manifest::{Manifest, ManifestRow};
use crate::qc::CORRECTED_PPG_FILE;

#[derive(Debug, Clone)]
pub struct ScanData {
    pub scan_id: String,
    pub subject_id: String,
    pub roi: RoiMatrix,
    /// HRV extracted from the (spike-corrected, when available) PPG.
    pub hrv: HrvSeries,
}

/// Reads the ROI matrix and derives the measured HRV from the scan's PPG.
pub fn load_scan(dir: &Path, row: &ManifestRow, hrv_window_s: f64) -> Result<ScanData> {
    let meta = read_meta(dir)?;
    let roi = read_scan_roi(dir)?;
    let corrected = dir.join(CORRECTED_PPG_FILE);
    let ppg = match (corrected.exists(), meta.ppg_sample_rate_hz) {
        (true, Some(rate)) => read_ppg(&corrected, rate)?,
        _ => read_scan_ppg(dir)?.ok_or_else(|| CliError::Data(format!("scan {} has no PPG recording", row.scan_id)))?,
    };
    let hrv = extract_hrv(&ppg, meta.tr_seconds, roi.n_frames(), hrv_window_s)
        .map_err(|e| CliError::Data(format!("scan {}: HRV extraction failed: {e}", row.scan_id)))?;
    Ok(ScanData {
        scan_id: row.scan_id.clone(),
        subject_id: row.subject_id.clone(),
        roi,
        hrv,
    })
}

/// Loads every manifest row, in manifest order.
pub fn load_all(manifest: &Manifest, hrv_window_s: f64) -> Result<Vec<ScanData>> {
    manifest
        .rows
        .par_iter()
        .map(|r| load_scan(&manifest.scan_dir(r), r, hrv_window_s))
        .collect::<Vec<_>>()
        .into_iter()
        .collect()
}
