//! Experiment configuration (JSON) and the resolved-run record.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use hrv_bold::dataset::WindowSpec;
use hrv_bold::io::RoiLabel;
use hrv_bold::nn::{ModelConfig, TrainHyper};
use hrv_bold::ppg::QcThresholds;
use hrv_bold::simulator::{BoldSimConfig, CardiacSimConfig, DefectKind, DEFAULT_HRV_WINDOW_S};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimulateConfig {
    pub n_scans: usize,
    pub scans_per_subject: usize,
    /// Template for every scan; the seed and modulation depth are set per scan.
    pub cardiac: CardiacSimConfig,
    /// Template for every scan; the seed is set per scan.
    pub bold: BoldSimConfig,
    /// Each scan's HR modulation depth (bpm) is drawn uniformly from this range.
    pub depth_range_bpm: [f64; 2],
    /// Proportion of scans per defect kind; must sum to 1.
    pub defect_mix: BTreeMap<DefectKind, f64>,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        Self {
            n_scans: 40,
            scans_per_subject: 1,
            cardiac: CardiacSimConfig::default(),
            bold: BoldSimConfig::default(),
            depth_range_bpm: [4.0, 12.0],
            defect_mix: [(DefectKind::None, 1.0)].into_iter().collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    /// Master seed; every stage derives its own seeds from it.
    pub seed: u64,
    /// Directory holding scan directories and manifests. Defaults to the
    /// output root.
    pub data_root: Option<PathBuf>,
    pub output_root: PathBuf,
    pub simulate: SimulateConfig,
    pub qc: QcThresholds,
    pub window: WindowSpec,
    /// Stride between training windows. Evaluation always uses every frame.
    pub train_window_stride: usize,
    /// `n_channels` and `window_len` are filled in from the data and window.
    pub model: ModelConfig,
    pub train: TrainHyper,
    pub k: usize,
    /// Keep all scans of a subject in one fold.
    pub subject_folds: bool,
    /// Share of each fold's training scans held out for early stopping.
    pub validation_fraction: f64,
    pub roi_labels: Vec<RoiLabel>,
    pub hrv_window_s: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            data_root: None,
            output_root: PathBuf::from("out"),
            simulate: SimulateConfig::default(),
            qc: QcThresholds::default(),
            window: WindowSpec::default(),
            train_window_stride: 1,
            model: ModelConfig::small(0),
            train: TrainHyper::default(),
            k: 10,
            subject_folds: false,
            validation_fraction: 0.1,
            roi_labels: RoiLabel::ALL.to_vec(),
            hrv_window_s: DEFAULT_HRV_WINDOW_S,
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|source| CliError::ConfigFile {
            path: path.to_path_buf(),
            source,
        })?;
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    pub fn data_root(&self) -> &Path {
        self.data_root.as_deref().unwrap_or(&self.output_root)
    }

    pub fn validate(&self) -> Result<()> {
        self.qc.validate()?;
        self.window.validate()?;
        self.train.validate()?;
        self.simulate.cardiac.validate()?;
        validate_mix(&self.simulate.defect_mix)?;
        let [lo, hi] = self.simulate.depth_range_bpm;
        if !(lo >= 0.0 && lo <= hi && hi.is_finite()) {
            return Err(CliError::Config(format!("depth_range_bpm must satisfy 0 <= lo <= hi, got [{lo}, {hi}]")));
        }
        if self.simulate.scans_per_subject == 0 {
            return Err(CliError::Config("scans_per_subject must be positive".into()));
        }
        if self.train_window_stride == 0 {
            return Err(CliError::Config("train_window_stride must be positive".into()));
        }
        if self.k < 2 {
            return Err(CliError::Config(format!("k must be at least 2, got {}", self.k)));
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return Err(CliError::Config(format!(
                "validation_fraction must lie in (0, 1), got {}",
                self.validation_fraction
            )));
        }
        if self.roi_labels.is_empty() {
            return Err(CliError::Config("roi_labels is empty".into()));
        }
        if !(self.hrv_window_s > 0.0) {
            return Err(CliError::Config(format!("hrv_window_s must be positive, got {}", self.hrv_window_s)));
        }
        Ok(())
    }
}

const MIX_TOLERANCE: f64 = 1e-9;

pub fn validate_mix(mix: &BTreeMap<DefectKind, f64>) -> Result<()> {
    if mix.values().any(|&p| !(p >= 0.0 && p.is_finite())) {
        return Err(CliError::Config(format!("defect_mix has a negative or non-finite proportion: {mix:?}")));
    }
    let total: f64 = mix.values().sum();
    if (total - 1.0).abs() > MIX_TOLERANCE {
        return Err(CliError::Config(format!("defect_mix proportions sum to {total}, expected 1")));
    }
    Ok(())
}

/// Written next to every command's outputs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunRecord {
    pub command: String,
    pub version: String,
    pub seed: u64,
    pub jobs: Option<usize>,
    pub config: ExperimentConfig,
    /// Named seeds derived from the master seed for this run.
    pub derived_seeds: BTreeMap<String, u64>,
}

impl RunRecord {
    pub fn new(command: &str, config: &ExperimentConfig, jobs: Option<usize>) -> Self {
        Self {
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            seed: config.seed,
            jobs,
            config: config.clone(),
            derived_seeds: BTreeMap::new(),
        }
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        let path = dir.join("run.json");
        fs::write(&path, serde_json::to_string_pretty(self)?).map_err(|e| CliError::io(&path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_is_valid_and_round_trips() {
        let cfg = ExperimentConfig::default();
        cfg.validate().unwrap();
        let json = serde_json::to_string(&cfg).unwrap();
        let back: ExperimentConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn partial_json_fills_defaults() {
        let cfg: ExperimentConfig = serde_json::from_str(r#"{"seed": 7, "k": 5, "simulate": {"n_scans": 12}}"#).unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.k, 5);
        assert_eq!(cfg.simulate.n_scans, 12);
        assert_eq!(cfg.window, WindowSpec::default());
    }

    #[test]
    fn mix_must_sum_to_one() {
        let mut mix = BTreeMap::new();
        mix.insert(DefectKind::None, 0.5);
        mix.insert(DefectKind::Clipping, 0.4);
        assert!(matches!(validate_mix(&mix), Err(CliError::Config(_))));
        mix.insert(DefectKind::Gaps, 0.1);
        validate_mix(&mix).unwrap();
        mix.insert(DefectKind::Gaps, -0.1);
        assert!(validate_mix(&mix).is_err());
    }

    #[test]
    fn defect_mix_uses_kind_names_as_keys() {
        let cfg: SimulateConfig = serde_json::from_str(r#"{"defect_mix": {"None": 0.5, "Clipping": 0.5}}"#).unwrap();
        assert_eq!(cfg.defect_mix[&DefectKind::Clipping], 0.5);
    }
}
