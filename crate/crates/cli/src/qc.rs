//! `qc`: triage every scan's PPG and keep the usable ones.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use hrv_bold::io::{read_scan_ppg, write_ppg};
use hrv_bold::ppg::{classify_quality, correct_spikes, QcDiagnostics, QcThresholds, QualityKind};
use hrv_bold::simulator::DefectKind;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};
use crate::manifest::{Manifest, ManifestRow, KEPT_MANIFEST_FILE};

pub const QC_FILE: &str = "qc.csv";
pub const QC_SUMMARY_FILE: &str = "qc_summary.json";
/// Spike-corrected PPG, written into the scan directory.
pub const CORRECTED_PPG_FILE: &str = "ppg_corrected.csv";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QcRow {
    pub scan_id: String,
    pub class: QualityKind,
    pub kept: bool,
    pub spike_fraction: Option<f64>,
    pub clip_fraction: Option<f64>,
    pub gap_fraction: Option<f64>,
    pub amplitude_ratio: Option<f64>,
    pub label: Option<String>,
    pub agrees_with_label: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QcSummary {
    pub n_scans: usize,
    pub n_kept: usize,
    pub counts: BTreeMap<QualityKind, usize>,
    /// Share of labelled scans whose class matches the label; `None` when
    /// no scan carries a defect label.
    pub label_accuracy: Option<f64>,
    pub n_labelled: usize,
}

impl QcSummary {
    pub fn line(&self) -> String {
        let counts: Vec<String> = self.counts.iter().map(|(k, c)| format!("{k} {c}")).collect();
        format!("kept {} of {} scans ({})", self.n_kept, self.n_scans, counts.join(", "))
    }
}

fn classify_row(manifest: &Manifest, row: &ManifestRow, th: &QcThresholds) -> Result<QcRow> {
    let dir = manifest.scan_dir(row);
    let (class, diagnostics): (QualityKind, Option<QcDiagnostics>) = match read_scan_ppg(&dir)? {
        None => (QualityKind::NoRecording, None),
        Some(ppg) => {
            let q = classify_quality(&ppg, th);
            if q.kind == QualityKind::CorrectableSpikes {
                let path = dir.join(CORRECTED_PPG_FILE);
                write_ppg(&path, &correct_spikes(&ppg, th))?;
            }
            (q.kind, Some(q.diagnostics))
        }
    };
    let agrees = match &row.defect {
        Some(label) => Some(label.parse::<DefectKind>()?.expected_quality() == class),
        None => None,
    };
    Ok(QcRow {
        scan_id: row.scan_id.clone(),
        class,
        kept: class.is_usable(),
        spike_fraction: diagnostics.map(|d| d.spike_fraction),
        clip_fraction: diagnostics.map(|d| d.clip_fraction),
        gap_fraction: diagnostics.map(|d| d.gap_fraction),
        amplitude_ratio: diagnostics.map(|d| d.amplitude_ratio),
        label: row.defect.clone(),
        agrees_with_label: agrees,
    })
}

pub struct QcOutput {
    pub rows: Vec<QcRow>,
    pub summary: QcSummary,
    pub kept_manifest: PathBuf,
}

/// Classifies every scan in `manifest_path`, writes `qc.csv`, the kept
/// manifest and a summary into `out`, and a corrected PPG next to every
/// scan with correctable spikes.
pub fn cmd_qc(manifest_path: &Path, th: &QcThresholds, out: &Path) -> Result<QcOutput> {
    th.validate()?;
    let manifest = Manifest::read(manifest_path)?;
    fs::create_dir_all(out).map_err(|e| CliError::io(out, e))?;
    let rows = manifest
        .rows
        .par_iter()
        .map(|r| classify_row(&manifest, r, th))
        .collect::<Vec<Result<QcRow>>>()
        .into_iter()
        .collect::<Result<Vec<_>>>()?;

    let path = out.join(QC_FILE);
    let mut w = csv::Writer::from_path(&path)?;
    for r in &rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| CliError::io(&path, e))?;

    let kept: Vec<ManifestRow> = manifest
        .rows
        .iter()
        .zip(&rows)
        .filter(|(_, q)| q.kept)
        .map(|(m, q)| ManifestRow {
            quality: Some(q.class.as_str().to_string()),
            ..m.clone()
        })
        .collect();
    let kept_manifest = out.join(KEPT_MANIFEST_FILE);
    manifest.write_rows(&kept, &kept_manifest)?;

    let mut counts = BTreeMap::new();
    for r in &rows {
        *counts.entry(r.class).or_insert(0) += 1;
    }
    let labelled: Vec<bool> = rows.iter().filter_map(|r| r.agrees_with_label).collect();
    let summary = QcSummary {
        n_scans: rows.len(),
        n_kept: kept.len(),
        counts,
        label_accuracy: (!labelled.is_empty())
            .then(|| labelled.iter().filter(|&&a| a).count() as f64 / labelled.len() as f64),
        n_labelled: labelled.len(),
    };
    let spath = out.join(QC_SUMMARY_FILE);
    fs::write(&spath, serde_json::to_string_pretty(&summary)?).map_err(|e| CliError::io(&spath, e))?;
    log::info!("{}", summary.line());
    Ok(QcOutput {
        rows,
        summary,
        kept_manifest,
    })
}
