//! `train-cv`: k-fold training and held-out evaluation.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::time::Instant;

use hrv_bold::dataset::{assign_folds, assign_folds_grouped, build_windows, fit_normalizer, FoldAssignment, Normalizer, WindowSample, WindowSpec};
use hrv_bold::io::{HrvSeries, RoiMatrix};
use hrv_bold::metrics::{evaluate_scan, mae, mse, variability_accuracy_analysis, write_scan_metrics_csv, ScanEvaluation, VariabilityAnalysis};
use hrv_bold::nn::{predict_scan, save_checkpoint, train, Checkpoint, ModelConfig, TrainHyper};
use hrv_bold::rng::{derive_seed, rng_from_seed};
use hrv_bold::stats;
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::data::{load_all, ScanData};
use crate::error::{CliError, Result};
use crate::manifest::Manifest;

pub const REPORT_FILE: &str = "report.json";
pub const TIMINGS_FILE: &str = "timings.json";
pub const SCAN_METRICS_FILE: &str = "scan_metrics.csv";
pub const SCATTER_FILE: &str = "hrv_std_vs_r.csv";
pub const PREDICTIONS_DIR: &str = "predictions";
pub const FOLDS_DIR: &str = "folds";
pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const TRAIN_REPORT_FILE: &str = "train_report.json";

/// Means of the per-scan metrics; Pearson r averages only defined values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricMeans {
    pub mae: f64,
    pub mse: f64,
    pub pearson_r: Option<f64>,
    pub dtw: f64,
    /// MAE and MSE in units of the training-set target standard deviation.
    pub standardized_mae: f64,
    pub standardized_mse: f64,
    pub n_scans: usize,
    pub n_undefined_r: usize,
}

impl MetricMeans {
    fn of(scans: &[&ScanResult]) -> Self {
        let col = |f: &dyn Fn(&ScanResult) -> f64| stats::mean(&scans.iter().map(|s| f(s)).collect::<Vec<_>>());
        let rs: Vec<f64> = scans.iter().filter_map(|s| s.evaluation.pearson_r).collect();
        Self {
            mae: col(&|s| s.evaluation.mae),
            mse: col(&|s| s.evaluation.mse),
            pearson_r: (!rs.is_empty()).then(|| stats::mean(&rs)),
            dtw: col(&|s| s.evaluation.dtw),
            standardized_mae: col(&|s| s.standardized_mae),
            standardized_mse: col(&|s| s.standardized_mse),
            n_scans: scans.len(),
            n_undefined_r: scans.len() - rs.len(),
        }
    }

    /// Mean of per-group means.
    fn of_groups(groups: &[MetricMeans]) -> Self {
        let col = |f: &dyn Fn(&MetricMeans) -> f64| stats::mean(&groups.iter().map(f).collect::<Vec<_>>());
        let rs: Vec<f64> = groups.iter().filter_map(|g| g.pearson_r).collect();
        Self {
            mae: col(&|g| g.mae),
            mse: col(&|g| g.mse),
            pearson_r: (!rs.is_empty()).then(|| stats::mean(&rs)),
            dtw: col(&|g| g.dtw),
            standardized_mae: col(&|g| g.standardized_mae),
            standardized_mse: col(&|g| g.standardized_mse),
            n_scans: groups.iter().map(|g| g.n_scans).sum(),
            n_undefined_r: groups.iter().map(|g| g.n_undefined_r).sum(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanResult {
    pub fold: usize,
    pub evaluation: ScanEvaluation,
    pub standardized_mae: f64,
    pub standardized_mse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub fold: usize,
    pub test_scans: Vec<String>,
    pub validation_scans: Vec<String>,
    pub n_fit_scans: usize,
    pub n_train_windows: usize,
    pub n_validation_windows: usize,
    pub init_seed: u64,
    pub train_seed: u64,
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub stopped_early: bool,
    pub means: MetricMeans,
}

/// Deterministic summary of a cross-validation run; timings live in a
/// separate file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub complete: bool,
    pub error: Option<String>,
    pub seed: u64,
    pub k: usize,
    pub n_scans: usize,
    pub n_channels: usize,
    pub param_count: usize,
    pub window: WindowSpec,
    pub train_window_stride: usize,
    pub model: ModelConfig,
    pub hyper: TrainHyper,
    pub folds: Vec<FoldResult>,
    /// Sorted by scan id; each scan appears once, from the fold that held it out.
    pub scans: Vec<ScanResult>,
    pub mean_across_scans: Option<MetricMeans>,
    pub mean_across_folds: Option<MetricMeans>,
    pub variability: Option<VariabilityAnalysis>,
}

impl CvReport {
    pub fn evaluations(&self) -> Vec<ScanEvaluation> {
        self.scans.iter().map(|s| s.evaluation.clone()).collect()
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let path = dir.join(REPORT_FILE);
        let text = fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

struct FoldOutcome {
    result: FoldResult,
    scans: Vec<ScanResult>,
    wall_time_s: f64,
}

/// Folds over the scans, by scan or by subject, from the master seed.
pub fn fold_assignment(cfg: &ExperimentConfig, scans: &[ScanData]) -> Result<FoldAssignment> {
    let seed = derive_seed(cfg.seed, "folds", 0);
    let fa = if cfg.subject_folds {
        let items: Vec<(&str, &str)> = scans.iter().map(|s| (s.scan_id.as_str(), s.subject_id.as_str())).collect();
        assign_folds_grouped(&items, cfg.k, seed)?
    } else {
        let ids: Vec<&str> = scans.iter().map(|s| s.scan_id.as_str()).collect();
        assign_folds(&ids, cfg.k, seed)?
    };
    Ok(fa)
}

/// Splits a fold's training scans into (fit, validation).
pub fn validation_split(train_ids: &[&str], fraction: f64, seed: u64) -> (Vec<String>, Vec<String>) {
    let mut ids: Vec<String> = train_ids.iter().map(|s| s.to_string()).collect();
    ids.sort();
    ids.shuffle(&mut rng_from_seed(seed));
    let n_val = ((fraction * ids.len() as f64).round() as usize).clamp(1, ids.len().saturating_sub(1).max(1));
    let fit = ids.split_off(n_val);
    let mut val = ids;
    let mut fit = fit;
    val.sort();
    fit.sort();
    (fit, val)
}

fn standardized(normalizer: &Normalizer, roi: &RoiMatrix, hrv: &HrvSeries) -> Result<(RoiMatrix, HrvSeries)> {
    Ok((normalizer.apply_matrix(roi)?, HrvSeries(normalizer.apply_hrv(hrv))))
}

fn windows_of<'a>(ids: &'a [String], z: &'a [(RoiMatrix, HrvSeries)], spec: &WindowSpec) -> Result<Vec<WindowSample<'a>>> {
    let mut all = Vec::new();
    for (id, (roi, hrv)) in ids.iter().zip(z) {
        all.extend(build_windows(id, roi, hrv, spec)?);
    }
    Ok(all)
}

/// Scan split and input statistics of one fold, before training.
#[derive(Debug, Clone, PartialEq)]
pub struct FoldPlan {
    pub fold: usize,
    pub test_ids: Vec<String>,
    pub fit_ids: Vec<String>,
    pub validation_ids: Vec<String>,
    /// Fitted on the fit scans' training windows only.
    pub normalizer: Normalizer,
}

fn train_spec(cfg: &ExperimentConfig) -> WindowSpec {
    WindowSpec {
        stride: cfg.train_window_stride,
        ..cfg.window
    }
}

/// Splits a fold's scans and fits its normalizer. Test scans are never read.
pub fn plan_fold(cfg: &ExperimentConfig, fa: &FoldAssignment, by_id: &BTreeMap<&str, &ScanData>, fold: usize) -> Result<FoldPlan> {
    let test_ids: Vec<String> = fa.test_ids(fold).iter().map(|s| s.to_string()).collect();
    let train_ids = fa.train_ids(fold);
    let (fit_ids, validation_ids) = validation_split(&train_ids, cfg.validation_fraction, derive_seed(cfg.seed, "validation", fold as u64));
    if fit_ids.is_empty() || validation_ids.is_empty() {
        return Err(CliError::Config(format!(
            "fold {fold}: {} training scans cannot be split into fit and validation sets",
            train_ids.len()
        )));
    }
    let spec = train_spec(cfg);
    let mut raw_fit = Vec::new();
    for id in &fit_ids {
        let s = by_id
            .get(id.as_str())
            .ok_or_else(|| CliError::Data(format!("scan {id} is not loaded")))?;
        raw_fit.extend(build_windows(id, &s.roi, &s.hrv, &spec)?);
    }
    let normalizer = fit_normalizer(&raw_fit)?;
    Ok(FoldPlan {
        fold,
        test_ids,
        fit_ids,
        validation_ids,
        normalizer,
    })
}

fn run_fold(cfg: &ExperimentConfig, fa: &FoldAssignment, by_id: &BTreeMap<&str, &ScanData>, fold: usize, out: &Path) -> Result<FoldOutcome> {
    let started = Instant::now();
    let FoldPlan {
        test_ids,
        fit_ids,
        validation_ids: val_ids,
        normalizer,
        ..
    } = plan_fold(cfg, fa, by_id, fold)?;
    let train_spec = train_spec(cfg);

    let z_fit = fit_ids
        .iter()
        .map(|id| standardized(&normalizer, &by_id[id.as_str()].roi, &by_id[id.as_str()].hrv))
        .collect::<Result<Vec<_>>>()?;
    let z_val = val_ids
        .iter()
        .map(|id| standardized(&normalizer, &by_id[id.as_str()].roi, &by_id[id.as_str()].hrv))
        .collect::<Result<Vec<_>>>()?;
    let train_set = windows_of(&fit_ids, &z_fit, &train_spec)?;
    let val_set = windows_of(&val_ids, &z_val, &train_spec)?;

    let n_channels = by_id.values().next().map_or(0, |s| s.roi.n_channels());
    let init_seed = derive_seed(cfg.seed, "init", fold as u64);
    let train_seed = derive_seed(cfg.seed, "train", fold as u64);
    let model_cfg = ModelConfig {
        n_channels,
        window_len: cfg.window.window_len,
        seed: init_seed,
        ..cfg.model.clone()
    };
    log::info!(
        "fold {fold}: {} fit / {} validation / {} test scans, {} training windows",
        fit_ids.len(),
        val_ids.len(),
        test_ids.len(),
        train_set.len()
    );
    let (params, report) = train(&model_cfg, &cfg.train, &train_set, &val_set, train_seed)
        .map_err(|e| match e {
            hrv_bold::Error::Divergence(msg) => hrv_bold::Error::Divergence(format!("fold {fold}: {msg}")),
            other => other,
        })?;

    let fold_dir = out.join(FOLDS_DIR).join(format!("fold_{fold:02}"));
    fs::create_dir_all(&fold_dir).map_err(|e| CliError::io(&fold_dir, e))?;
    save_checkpoint(
        &Checkpoint {
            config: model_cfg.clone(),
            hyper: cfg.train.clone(),
            normalizer: Some(normalizer.clone()),
            params: params.clone(),
        },
        &fold_dir.join(CHECKPOINT_FILE),
    )?;
    let rpath = fold_dir.join(TRAIN_REPORT_FILE);
    fs::write(&rpath, serde_json::to_string_pretty(&report)?).map_err(|e| CliError::io(&rpath, e))?;

    let pred_dir = out.join(PREDICTIONS_DIR);
    fs::create_dir_all(&pred_dir).map_err(|e| CliError::io(&pred_dir, e))?;
    let mut scans = Vec::with_capacity(test_ids.len());
    for id in &test_ids {
        let s = by_id[id.as_str()];
        let pred = predict_scan(&params, &model_cfg, &s.roi, &cfg.window, &normalizer)?;
        let evaluation = evaluate_scan(id, &pred, s.hrv.values(), None)?;
        let (zp, zm): (Vec<f64>, Vec<f64>) = pred
            .iter()
            .zip(s.hrv.values())
            .filter_map(|(p, &m)| p.map(|p| (normalizer.target(p), normalizer.target(m))))
            .unzip();
        write_predictions(&pred_dir.join(format!("{id}.csv")), &pred, s.hrv.values())?;
        scans.push(ScanResult {
            fold,
            evaluation,
            standardized_mae: mae(&zp, &zm)?,
            standardized_mse: mse(&zp, &zm)?,
        });
    }
    let means = MetricMeans::of(&scans.iter().collect::<Vec<_>>());
    let (n_train_windows, n_validation_windows) = (train_set.len(), val_set.len());
    drop((train_set, val_set));
    Ok(FoldOutcome {
        result: FoldResult {
            fold,
            test_scans: test_ids,
            validation_scans: val_ids,
            n_fit_scans: fit_ids.len(),
            n_train_windows,
            n_validation_windows,
            init_seed,
            train_seed,
            epochs_run: report.epochs.len(),
            best_epoch: report.best_epoch,
            best_val_loss: report.best_val_loss,
            stopped_early: report.stopped_early,
            means,
        },
        scans,
        wall_time_s: started.elapsed().as_secs_f64(),
    })
}

fn write_predictions(path: &Path, pred: &[Option<f64>], measured: &[f64]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["frame", "measured", "predicted"])?;
    for (t, (p, m)) in pred.iter().zip(measured).enumerate() {
        w.write_record([t.to_string(), format!("{m:.10e}"), p.map_or_else(String::new, |p| format!("{p:.10e}"))])?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

/// Runs every fold (in parallel) on already-loaded scans and writes the
/// report, per-scan metrics, checkpoints and predictions under `out`. When
/// a fold fails, a partial report with the completed folds is written
/// before the error is returned.
pub fn run_cv(cfg: &ExperimentConfig, scans: &[ScanData], out: &Path) -> Result<CvReport> {
    cfg.validate()?;
    if scans.is_empty() {
        return Err(CliError::Data("no scans to train on".into()));
    }
    let n_channels = scans[0].roi.n_channels();
    if let Some(s) = scans.iter().find(|s| s.roi.channels() != scans[0].roi.channels()) {
        return Err(CliError::Data(format!(
            "scan {} has a different channel set from scan {}",
            s.scan_id, scans[0].scan_id
        )));
    }
    let model_cfg = ModelConfig {
        n_channels,
        window_len: cfg.window.window_len,
        ..cfg.model.clone()
    };
    model_cfg.validate()?;
    let fa = fold_assignment(cfg, scans)?;
    let by_id: BTreeMap<&str, &ScanData> = scans.iter().map(|s| (s.scan_id.as_str(), s)).collect();
    fs::create_dir_all(out).map_err(|e| CliError::io(out, e))?;

    let outcomes: Vec<Result<FoldOutcome>> = (0..fa.k).into_par_iter().map(|f| run_fold(cfg, &fa, &by_id, f, out)).collect();

    let mut folds = Vec::new();
    let mut results = Vec::new();
    let mut timings = BTreeMap::new();
    let mut first_error = None;
    for (f, o) in outcomes.into_iter().enumerate() {
        match o {
            Ok(o) => {
                timings.insert(format!("fold_{f:02}"), o.wall_time_s);
                folds.push(o.result);
                results.extend(o.scans);
            }
            Err(e) => {
                log::error!("fold {f} failed: {e}");
                first_error.get_or_insert(e);
            }
        }
    }
    results.sort_by(|a, b| a.evaluation.scan_id.cmp(&b.evaluation.scan_id));
    let complete = first_error.is_none();
    let evals: Vec<ScanEvaluation> = results.iter().map(|s| s.evaluation.clone()).collect();
    let variability = if complete { Some(variability_accuracy_analysis(&evals)?) } else { None };
    let report = CvReport {
        complete,
        error: first_error.as_ref().map(|e| e.to_string()),
        seed: cfg.seed,
        k: fa.k,
        n_scans: scans.len(),
        n_channels,
        param_count: model_cfg.param_count()?,
        window: cfg.window,
        train_window_stride: cfg.train_window_stride,
        model: model_cfg,
        hyper: cfg.train.clone(),
        mean_across_scans: (!results.is_empty()).then(|| MetricMeans::of(&results.iter().collect::<Vec<_>>())),
        mean_across_folds: (!folds.is_empty()).then(|| MetricMeans::of_groups(&folds.iter().map(|f| f.means.clone()).collect::<Vec<_>>())),
        folds,
        scans: results,
        variability,
    };
    let path = out.join(REPORT_FILE);
    fs::write(&path, serde_json::to_string_pretty(&report)?).map_err(|e| CliError::io(&path, e))?;
    let tpath = out.join(TIMINGS_FILE);
    fs::write(&tpath, serde_json::to_string_pretty(&timings)?).map_err(|e| CliError::io(&tpath, e))?;
    if let Some(e) = first_error {
        return Err(e);
    }
    write_scan_metrics_csv(&evals, &out.join(SCAN_METRICS_FILE))?;
    if let Some(v) = &report.variability {
        v.write_scatter_csv(&out.join(SCATTER_FILE))?;
    }
    Ok(report)
}

pub fn cmd_train_cv(cfg: &ExperimentConfig, manifest_path: &Path, out: &Path) -> Result<CvReport> {
    cfg.validate()?;
    let manifest = Manifest::read(manifest_path)?;
    if cfg.k > manifest.rows.len() {
        return Err(CliError::Config(format!(
            "k = {} exceeds the {} scans in {}",
            cfg.k,
            manifest.rows.len(),
            manifest_path.display()
        )));
    }
    let scans = load_all(&manifest, cfg.hrv_window_s)?;
    run_cv(cfg, &scans, out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn validation_split_is_disjoint_and_seeded() {
        let ids: Vec<String> = (0..36).map(|i| format!("s{i:02}")).collect();
        let refs: Vec<&str> = ids.iter().map(String::as_str).collect();
        let (fit, val) = validation_split(&refs, 0.1, 5);
        assert_eq!(val.len(), 4);
        assert_eq!(fit.len() + val.len(), 36);
        assert!(val.iter().all(|v| !fit.contains(v)));
        assert_eq!(validation_split(&refs, 0.1, 5), (fit, val));
    }

    #[test]
    fn validation_split_keeps_one_of_each() {
        let (fit, val) = validation_split(&["a", "b"], 0.1, 0);
        assert_eq!((fit.len(), val.len()), (1, 1));
    }
}
