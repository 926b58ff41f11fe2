//! Shared data model and on-disk scan format.
//!
//! A scan lives in one directory:
//!
//! ```text
//! <scan_id>/roi.csv    header of GROUP:name cells, one row per frame
//! <scan_id>/ppg.csv    optional, single column
//! <scan_id>/hrv.csv    optional, single column, one row per frame
//! <scan_id>/meta.json  ids, TR, PPG sample rate, presence flags
//! ```
//!
//! Reals are written with 17 significant digits so a write/read cycle is
//! bit-exact.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ppg::QualityClass;

pub const ROI_FILE: &str = "roi.csv";
pub const PPG_FILE: &str = "ppg.csv";
pub const HRV_FILE: &str = "hrv.csv";
pub const META_FILE: &str = "meta.json";

/// Default frame spacing used by the simulator and examples.
pub const DEFAULT_TR_SECONDS: f64 = 0.8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum RoiGroup {
    Cortical,
    Subcortical,
    WhiteMatter,
    Structural,
}

impl RoiGroup {
    pub const ALL: [RoiGroup; 4] = [
        RoiGroup::Cortical,
        RoiGroup::Subcortical,
        RoiGroup::WhiteMatter,
        RoiGroup::Structural,
    ];

    /// Column-header prefix.
    pub fn tag(self) -> &'static str {
        match self {
            RoiGroup::Cortical => "CTX",
            RoiGroup::Subcortical => "SUB",
            RoiGroup::WhiteMatter => "WM",
            RoiGroup::Structural => "STR",
        }
    }

    pub fn from_tag(tag: &str) -> Option<Self> {
        RoiGroup::ALL.into_iter().find(|g| g.tag() == tag)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoiChannel {
    pub name: String,
    pub group: RoiGroup,
}

impl RoiChannel {
    pub fn new(name: impl Into<String>, group: RoiGroup) -> Self {
        Self {
            name: name.into(),
            group,
        }
    }

    fn header(&self) -> String {
        format!("{}:{}", self.group.tag(), self.name)
    }

    fn parse_header(cell: &str) -> Option<Self> {
        let (tag, name) = cell.split_once(':')?;
        let group = RoiGroup::from_tag(tag.trim())?;
        let name = name.trim();
        if name.is_empty() {
            return None;
        }
        Some(Self::new(name, group))
    }
}

/// BOLD time series, one column per ROI, stored row-major (frame by frame).
#[derive(Debug, Clone, PartialEq)]
pub struct RoiMatrix {
    n_frames: usize,
    channels: Vec<RoiChannel>,
    values: Vec<f64>,
}

impl RoiMatrix {
    pub fn new(n_frames: usize, channels: Vec<RoiChannel>, values: Vec<f64>) -> Result<Self> {
        if values.len() != n_frames * channels.len() {
            return Err(Error::Shape(format!(
                "roi values length {} != {} frames x {} channels",
                values.len(),
                n_frames,
                channels.len()
            )));
        }
        let m = Self {
            n_frames,
            channels,
            values,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::with_capacity(self.channels.len());
        for ch in &self.channels {
            if !seen.insert(ch.name.as_str()) {
                return Err(Error::Invalid(format!("duplicate channel name {:?}", ch.name)));
            }
        }
        if let Some(i) = self.values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                file: ROI_FILE.into(),
                row: i / self.n_channels().max(1),
                column: i % self.n_channels().max(1),
            });
        }
        Ok(())
    }

    pub fn n_frames(&self) -> usize {
        self.n_frames
    }

    pub fn n_channels(&self) -> usize {
        self.channels.len()
    }

    pub fn channels(&self) -> &[RoiChannel] {
        &self.channels
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn row(&self, frame: usize) -> &[f64] {
        let c = self.n_channels();
        &self.values[frame * c..(frame + 1) * c]
    }

    /// Contiguous block of frames `[start, start + len)`.
    pub fn rows(&self, start: usize, len: usize) -> &[f64] {
        let c = self.n_channels();
        &self.values[start * c..(start + len) * c]
    }

    pub fn column(&self, channel: usize) -> Vec<f64> {
        (0..self.n_frames).map(|t| self.row(t)[channel]).collect()
    }

    pub fn get(&self, frame: usize, channel: usize) -> f64 {
        self.values[frame * self.n_channels() + channel]
    }

    /// Indices of channels belonging to `group`.
    pub fn channels_in(&self, group: RoiGroup) -> Vec<usize> {
        self.channels
            .iter()
            .enumerate()
            .filter(|(_, ch)| ch.group == group)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn group_counts(&self) -> BTreeMap<RoiGroup, usize> {
        let mut counts = BTreeMap::new();
        for ch in &self.channels {
            *counts.entry(ch.group).or_insert(0) += 1;
        }
        counts
    }

    /// New matrix holding only the given channels, in the given order.
    pub fn select_channels(&self, indices: &[usize]) -> Result<Self> {
        let c = self.n_channels();
        if let Some(&bad) = indices.iter().find(|&&i| i >= c) {
            return Err(Error::Shape(format!("channel index {bad} out of range {c}")));
        }
        let channels = indices.iter().map(|&i| self.channels[i].clone()).collect();
        let mut values = Vec::with_capacity(self.n_frames * indices.len());
        for t in 0..self.n_frames {
            let row = self.row(t);
            values.extend(indices.iter().map(|&i| row[i]));
        }
        Self::new(self.n_frames, channels, values)
    }
}

/// The four ROI input configurations compared in the ablation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum RoiLabel {
    DynamicPlusWM,
    DynamicOnly,
    StaticPlusWM,
    StructuralOnly,
}

impl RoiLabel {
    pub const ALL: [RoiLabel; 4] = [
        RoiLabel::DynamicPlusWM,
        RoiLabel::DynamicOnly,
        RoiLabel::StaticPlusWM,
        RoiLabel::StructuralOnly,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            RoiLabel::DynamicPlusWM => "DynamicPlusWM",
            RoiLabel::DynamicOnly => "DynamicOnly",
            RoiLabel::StaticPlusWM => "StaticPlusWM",
            RoiLabel::StructuralOnly => "StructuralOnly",
        }
    }
}

impl fmt::Display for RoiLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for RoiLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        RoiLabel::ALL
            .into_iter()
            .find(|l| l.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Invalid(format!("unknown ROI configuration {s:?}")))
    }
}

/// Channel-group composition of an input configuration.
///
/// `label` is `None` for ad-hoc compositions (e.g. reduced channel sets used
/// for quick experiments).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoiConfig {
    pub label: Option<RoiLabel>,
    pub group_counts: BTreeMap<RoiGroup, usize>,
}

pub fn make_roi_config(label: RoiLabel) -> RoiConfig {
    use RoiGroup::*;
    let counts: &[(RoiGroup, usize)] = match label {
        RoiLabel::DynamicPlusWM => &[(Cortical, 518), (Subcortical, 62), (WhiteMatter, 48)],
        RoiLabel::DynamicOnly => &[(Cortical, 518), (Subcortical, 62)],
        RoiLabel::StaticPlusWM => &[(Cortical, 360), (WhiteMatter, 48)],
        RoiLabel::StructuralOnly => &[(Structural, 69)],
    };
    RoiConfig {
        label: Some(label),
        group_counts: counts.iter().copied().collect(),
    }
}

impl RoiConfig {
    pub fn custom(group_counts: impl IntoIterator<Item = (RoiGroup, usize)>) -> Self {
        Self {
            label: None,
            group_counts: group_counts.into_iter().filter(|&(_, n)| n > 0).collect(),
        }
    }

    pub fn total(&self) -> usize {
        self.group_counts.values().sum()
    }

    pub fn count(&self, group: RoiGroup) -> usize {
        self.group_counts.get(&group).copied().unwrap_or(0)
    }

    /// Channel list with generated names, groups in canonical order.
    pub fn channels(&self) -> Vec<RoiChannel> {
        let mut out = Vec::with_capacity(self.total());
        for (&group, &n) in &self.group_counts {
            for i in 0..n {
                out.push(RoiChannel::new(format!("{}{:03}", group.tag(), i + 1), group));
            }
        }
        out
    }

    pub fn check_matrix(&self, roi: &RoiMatrix) -> Result<()> {
        if roi.n_channels() != self.total() {
            return Err(Error::Shape(format!(
                "matrix has {} channels, configuration {} expects {}",
                roi.n_channels(),
                self.label.map_or("custom", RoiLabel::as_str),
                self.total()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PpgSignal {
    pub sample_rate_hz: f64,
    pub values: Vec<f64>,
    #[serde(default)]
    pub quality: Option<QualityClass>,
}

impl PpgSignal {
    pub fn new(sample_rate_hz: f64, values: Vec<f64>) -> Self {
        Self {
            sample_rate_hz,
            values,
            quality: None,
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.values.len() as f64 / self.sample_rate_hz
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sample_rate_hz > 0.0 && self.sample_rate_hz.is_finite()) {
            return Err(Error::Invalid(format!(
                "ppg sample rate must be positive, got {}",
                self.sample_rate_hz
            )));
        }
        if let Some(i) = self.values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                file: PPG_FILE.into(),
                row: i,
                column: 0,
            });
        }
        Ok(())
    }
}

/// Frame-aligned HRV waveform in seconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HrvSeries(pub Vec<f64>);

impl HrvSeries {
    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(i) = self.0.iter().position(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::Invalid(format!(
                "hrv value {} at frame {i} is not a finite non-negative number",
                self.0[i]
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScanRecord {
    pub scan_id: String,
    pub subject_id: String,
    pub tr_seconds: f64,
    pub roi: RoiMatrix,
    pub ppg: Option<PpgSignal>,
    pub hrv: Option<HrvSeries>,
}

impl ScanRecord {
    pub fn validate(&self) -> Result<()> {
        if !(self.tr_seconds > 0.0 && self.tr_seconds.is_finite()) {
            return Err(Error::Invalid(format!(
                "tr_seconds must be positive, got {}",
                self.tr_seconds
            )));
        }
        if self.scan_id.is_empty() {
            return Err(Error::Invalid("empty scan_id".into()));
        }
        self.roi.validate()?;
        if let Some(ppg) = &self.ppg {
            ppg.validate()?;
        }
        if let Some(hrv) = &self.hrv {
            if hrv.len() != self.roi.n_frames() {
                return Err(Error::Invalid(format!(
                    "hrv length {} != roi frames {}",
                    hrv.len(),
                    self.roi.n_frames()
                )));
            }
            hrv.validate()?;
        }
        Ok(())
    }
}

/// Contents of `meta.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanMeta {
    pub scan_id: String,
    pub subject_id: String,
    pub tr_seconds: f64,
    pub ppg_sample_rate_hz: Option<f64>,
    pub ppg_present: bool,
    #[serde(default)]
    pub hrv_present: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ppg_quality: Option<QualityClass>,
}

pub(crate) fn fmt_real(v: f64) -> String {
    format!("{v:.16e}")
}

pub(crate) fn write_column(path: &Path, header: &str, values: &[f64]) -> Result<()> {
    let mut out = String::with_capacity(values.len() * 24 + header.len() + 1);
    out.push_str(header);
    out.push('\n');
    for v in values {
        out.push_str(&fmt_real(*v));
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub(crate) fn read_column(path: &Path, header: &str) -> Result<Vec<f64>> {
    let file = path
        .file_name()
        .map(|f| f.to_string_lossy().into_owned())
        .unwrap_or_default();
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h.trim() == header => {}
        other => {
            return Err(Error::format(
                file,
                format!("expected header {header:?}, found {other:?}"),
            ))
        }
    }
    let mut out = Vec::new();
    for (row, line) in lines.enumerate() {
        let cell = line.trim();
        if cell.contains(',') {
            return Err(Error::format(&file, format!("row {row} has more than one column")));
        }
        let v: f64 = cell
            .parse()
            .map_err(|_| Error::format(&file, format!("row {row}: cannot parse {cell:?}")))?;
        if !v.is_finite() {
            return Err(Error::NonFinite {
                file,
                row,
                column: 0,
            });
        }
        out.push(v);
    }
    Ok(out)
}

fn write_roi(path: &Path, roi: &RoiMatrix) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(roi.channels().iter().map(RoiChannel::header))?;
    for t in 0..roi.n_frames() {
        w.write_record(roi.row(t).iter().map(|&v| fmt_real(v)))?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

fn read_roi(path: &Path) -> Result<RoiMatrix> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_path(path)?;
    let channels = rdr
        .headers()?
        .iter()
        .map(|cell| {
            RoiChannel::parse_header(cell)
                .ok_or_else(|| Error::format(ROI_FILE, format!("bad channel header {cell:?}")))
        })
        .collect::<Result<Vec<_>>>()?;
    if channels.is_empty() {
        return Err(Error::format(ROI_FILE, "no channels"));
    }
    let n_ch = channels.len();
    let mut values = Vec::new();
    let mut n_frames = 0;
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec?;
        if rec.len() != n_ch {
            return Err(Error::format(
                ROI_FILE,
                format!("row {row} has {} cells, header has {n_ch} channels", rec.len()),
            ));
        }
        for (column, cell) in rec.iter().enumerate() {
            let v: f64 = cell.trim().parse().map_err(|_| {
                Error::format(ROI_FILE, format!("row {row}, column {column}: cannot parse {cell:?}"))
            })?;
            if !v.is_finite() {
                return Err(Error::NonFinite {
                    file: ROI_FILE.into(),
                    row,
                    column,
                });
            }
            values.push(v);
        }
        n_frames += 1;
    }
    RoiMatrix::new(n_frames, channels, values)
}

/// Writes a scan directory. The record is validated first; nothing is
/// written for an invalid record.
pub fn write_scan(record: &ScanRecord, dir: &Path) -> Result<()> {
    record.validate()?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_roi(&dir.join(ROI_FILE), &record.roi)?;
    if let Some(ppg) = &record.ppg {
        write_column(&dir.join(PPG_FILE), "ppg", &ppg.values)?;
    }
    if let Some(hrv) = &record.hrv {
        write_column(&dir.join(HRV_FILE), "hrv", hrv.values())?;
    }
    let meta = ScanMeta {
        scan_id: record.scan_id.clone(),
        subject_id: record.subject_id.clone(),
        tr_seconds: record.tr_seconds,
        ppg_sample_rate_hz: record.ppg.as_ref().map(|p| p.sample_rate_hz),
        ppg_present: record.ppg.is_some(),
        hrv_present: record.hrv.is_some(),
        ppg_quality: record.ppg.as_ref().and_then(|p| p.quality.clone()),
    };
    let meta_path = dir.join(META_FILE);
    let json = serde_json::to_string_pretty(&meta)?;
    fs::write(&meta_path, json).map_err(|e| Error::io(&meta_path, e))
}

/// Writes a single-column PPG file.
pub fn write_ppg(path: &Path, ppg: &PpgSignal) -> Result<()> {
    ppg.validate()?;
    write_column(path, "ppg", &ppg.values)
}

/// Reads a single-column PPG file sampled at `sample_rate_hz`.
pub fn read_ppg(path: &Path, sample_rate_hz: f64) -> Result<PpgSignal> {
    let ppg = PpgSignal::new(sample_rate_hz, read_column(path, "ppg")?);
    ppg.validate()?;
    Ok(ppg)
}

/// The scan's PPG, or `None` when the scan has no recording (absent from
/// the metadata or the file is missing).
pub fn read_scan_ppg(dir: &Path) -> Result<Option<PpgSignal>> {
    let meta = read_meta(dir)?;
    let path = dir.join(PPG_FILE);
    match (meta.ppg_present, meta.ppg_sample_rate_hz) {
        (true, Some(rate)) if path.exists() => read_ppg(&path, rate).map(Some),
        _ => Ok(None),
    }
}

/// Reads the ROI matrix of a scan directory.
pub fn read_scan_roi(dir: &Path) -> Result<RoiMatrix> {
    read_roi(&dir.join(ROI_FILE))
}

pub fn read_meta(dir: &Path) -> Result<ScanMeta> {
    let meta_path = dir.join(META_FILE);
    if !meta_path.exists() {
        return Err(Error::SidecarNotFound(meta_path));
    }
    let text = fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::format(META_FILE, e.to_string()))
}

/// Loads and validates a scan directory.
pub fn read_scan(dir: &Path) -> Result<ScanRecord> {
    let meta = read_meta(dir)?;
    let roi = read_roi(&dir.join(ROI_FILE))?;
    let ppg = if meta.ppg_present {
        let rate = meta.ppg_sample_rate_hz.ok_or_else(|| {
            Error::format(META_FILE, "ppg_present is true but ppg_sample_rate_hz is missing")
        })?;
        let values = read_column(&dir.join(PPG_FILE), "ppg")?;
        Some(PpgSignal {
            sample_rate_hz: rate,
            values,
            quality: meta.ppg_quality.clone(),
        })
    } else {
        None
    };
    let hrv = if meta.hrv_present {
        Some(HrvSeries(read_column(&dir.join(HRV_FILE), "hrv")?))
    } else {
        None
    };
    let record = ScanRecord {
        scan_id: meta.scan_id,
        subject_id: meta.subject_id,
        tr_seconds: meta.tr_seconds,
        roi,
        ppg,
        hrv,
    };
    record.validate()?;
    Ok(record)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_record(with_ppg: bool) -> ScanRecord {
        let cfg = RoiConfig::custom([(RoiGroup::Cortical, 3), (RoiGroup::WhiteMatter, 2)]);
        let n = 7;
        let values = (0..n * 5).map(|i| (i as f64 * 0.37).sin() * 1e3 + 1.0 / 3.0).collect();
        let roi = RoiMatrix::new(n, cfg.channels(), values).unwrap();
        ScanRecord {
            scan_id: "scan-001".into(),
            subject_id: "sub-01".into(),
            tr_seconds: 0.8,
            roi,
            ppg: with_ppg.then(|| PpgSignal::new(400.0, vec![0.1, -2.5e-7, 3.0, std::f64::consts::PI])),
            hrv: Some(HrvSeries(vec![0.01, 0.02, 0.0, 0.05, 0.1, 1.0 / 7.0, 0.03])),
        }
    }

    #[test]
    fn roi_config_totals() {
        let totals: Vec<usize> = RoiLabel::ALL.iter().map(|&l| make_roi_config(l).total()).collect();
        assert_eq!(totals, vec![628, 580, 408, 69]);
        let dyn_wm = make_roi_config(RoiLabel::DynamicPlusWM);
        let dyn_only = make_roi_config(RoiLabel::DynamicOnly);
        assert_eq!(dyn_wm.total(), dyn_only.total() + 48);
        assert_eq!(make_roi_config(RoiLabel::StaticPlusWM).count(RoiGroup::Cortical), 360);
        assert_eq!(dyn_wm.count(RoiGroup::Subcortical), 62);
    }

    #[test]
    fn round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        for with_ppg in [true, false] {
            let rec = sample_record(with_ppg);
            let p = dir.path().join(format!("s{with_ppg}"));
            write_scan(&rec, &p).unwrap();
            assert_eq!(read_scan(&p).unwrap(), rec);
            assert_eq!(p.join(PPG_FILE).exists(), with_ppg);
            let meta = read_meta(&p).unwrap();
            assert_eq!(meta.ppg_present, with_ppg);
        }
    }

    #[test]
    fn missing_sidecar() {
        let dir = tempfile::tempdir().unwrap();
        let rec = sample_record(true);
        write_scan(&rec, dir.path()).unwrap();
        fs::remove_file(dir.path().join(META_FILE)).unwrap();
        let err = read_scan(dir.path()).unwrap_err();
        assert!(matches!(err, Error::SidecarNotFound(_)));
        assert!(err.to_string().contains("sidecar not found"));
    }

    #[test]
    fn nan_cell_is_located() {
        let dir = tempfile::tempdir().unwrap();
        write_scan(&sample_record(true), dir.path()).unwrap();
        let path = dir.path().join(ROI_FILE);
        let text = fs::read_to_string(&path).unwrap();
        let mut lines: Vec<String> = text.lines().map(String::from).collect();
        let mut cells: Vec<&str> = lines[3].split(',').collect();
        cells[4] = "NaN";
        lines[3] = cells.join(",");
        fs::write(&path, lines.join("\n")).unwrap();
        match read_scan(dir.path()).unwrap_err() {
            Error::NonFinite { row, column, .. } => assert_eq!((row, column), (2, 4)),
            e => panic!("unexpected error {e}"),
        }
    }

    #[test]
    fn ragged_row_rejected() {
        let dir = tempfile::tempdir().unwrap();
        write_scan(&sample_record(false), dir.path()).unwrap();
        let path = dir.path().join(ROI_FILE);
        let mut text = fs::read_to_string(&path).unwrap();
        text.push_str("1.0,2.0\n");
        fs::write(&path, text).unwrap();
        assert!(matches!(read_scan(dir.path()), Err(Error::Format { .. })));
    }

    #[test]
    fn negative_tr_rejected() {
        let dir = tempfile::tempdir().unwrap();
        write_scan(&sample_record(false), dir.path()).unwrap();
        let mut meta = read_meta(dir.path()).unwrap();
        meta.tr_seconds = -0.8;
        fs::write(dir.path().join(META_FILE), serde_json::to_string(&meta).unwrap()).unwrap();
        assert!(matches!(read_scan(dir.path()), Err(Error::Invalid(_))));
    }

    #[test]
    fn hrv_length_mismatch_rejected_before_write() {
        let dir = tempfile::tempdir().unwrap();
        let mut rec = sample_record(true);
        rec.hrv = Some(HrvSeries(vec![0.1; 3]));
        assert!(write_scan(&rec, &dir.path().join("x")).is_err());
        assert!(!dir.path().join("x").exists());
    }

    #[test]
    fn duplicate_channel_names_rejected() {
        let ch = vec![
            RoiChannel::new("a", RoiGroup::Cortical),
            RoiChannel::new("a", RoiGroup::WhiteMatter),
        ];
        assert!(RoiMatrix::new(1, ch, vec![0.0, 1.0]).is_err());
    }

    #[test]
    fn select_channels_keeps_order() {
        let rec = sample_record(false);
        let sub = rec.roi.select_channels(&[4, 0]).unwrap();
        assert_eq!(sub.n_channels(), 2);
        assert_eq!(sub.channels()[0].group, RoiGroup::WhiteMatter);
        for t in 0..rec.roi.n_frames() {
            assert_eq!(sub.row(t), &[rec.roi.get(t, 4), rec.roi.get(t, 0)]);
        }
    }
}
