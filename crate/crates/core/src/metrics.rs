//! Accuracy metrics, per-scan evaluation, paired testing and configuration
//! comparison.

use std::collections::BTreeMap;
use std::fs;
use std::ops::Range;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::stats;

/// Largest number of non-zero differences handled by the exact signed-rank
/// distribution.
pub const EXACT_WILCOXON_MAX_N: usize = 25;
pub const MIN_PAIRED_N: usize = 6;

fn check_pair(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::Shape(format!("length mismatch: {} vs {}", a.len(), b.len())));
    }
    if a.is_empty() {
        return Err(Error::Invalid("empty sequences".into()));
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(Error::Invalid("non-finite value in metric input".into()));
    }
    Ok(())
}

pub fn mae(pred: &[f64], truth: &[f64]) -> Result<f64> {
    check_pair(pred, truth)?;
    Ok(pred.iter().zip(truth).map(|(p, t)| (p - t).abs()).sum::<f64>() / pred.len() as f64)
}

pub fn mse(pred: &[f64], truth: &[f64]) -> Result<f64> {
    check_pair(pred, truth)?;
    Ok(pred.iter().zip(truth).map(|(p, t)| (p - t) * (p - t)).sum::<f64>() / pred.len() as f64)
}

/// Sample correlation, `None` when either series is constant.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<Option<f64>> {
    check_pair(x, y)?;
    if x.len() < 2 {
        return Err(Error::Invalid("pearson needs at least 2 points".into()));
    }
    let (mx, my) = (stats::mean(x), stats::mean(y));
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return Ok(None);
    }
    Ok(Some((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0)))
}

/// Pearson correlation of average ranks.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<Option<f64>> {
    check_pair(x, y)?;
    pearson(&stats::ranks(x), &stats::ranks(y))
}

/// Unconstrained dynamic time warping with absolute-difference cost and
/// steps (1,0), (0,1), (1,1). Keeps one row over the shorter series.
pub fn dtw(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.is_empty() || y.is_empty() {
        return Err(Error::Invalid("dtw needs non-empty sequences".into()));
    }
    let (long, short) = if x.len() >= y.len() { (x, y) } else { (y, x) };
    let mut row = vec![0.0; short.len()];
    let mut acc = 0.0;
    for (j, s) in short.iter().enumerate() {
        acc += (long[0] - s).abs();
        row[j] = acc;
    }
    for l in &long[1..] {
        let mut diag = row[0];
        row[0] += (l - short[0]).abs();
        for j in 1..short.len() {
            let up = row[j];
            row[j] = (l - short[j]).abs() + up.min(row[j - 1]).min(diag);
            diag = up;
        }
    }
    Ok(row[short.len() - 1])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanEvaluation {
    pub scan_id: String,
    pub n_frames: usize,
    pub mae: f64,
    pub mse: f64,
    /// `None` when the prediction or the measurement is constant.
    pub pearson_r: Option<f64>,
    pub dtw: f64,
    /// Standard deviation of the measured HRV over the evaluated frames.
    pub hrv_std: f64,
}

/// Scores the frames where a prediction exists (and that fall inside
/// `frame_range`, when given).
pub fn evaluate_scan(scan_id: &str, pred: &[Option<f64>], measured: &[f64], frame_range: Option<Range<usize>>) -> Result<ScanEvaluation> {
    if pred.len() != measured.len() {
        return Err(Error::Shape(format!(
            "scan {scan_id}: {} predictions for {} measured frames",
            pred.len(),
            measured.len()
        )));
    }
    let range = frame_range.unwrap_or(0..pred.len());
    let (p, m): (Vec<f64>, Vec<f64>) = range
        .filter(|&t| t < pred.len())
        .filter_map(|t| pred[t].map(|v| (v, measured[t])))
        .unzip();
    if p.is_empty() {
        return Err(Error::Invalid(format!("scan {scan_id}: no overlapping frames to evaluate")));
    }
    Ok(ScanEvaluation {
        scan_id: scan_id.to_string(),
        n_frames: p.len(),
        mae: mae(&p, &m)?,
        mse: mse(&p, &m)?,
        pearson_r: if p.len() >= 2 { pearson(&p, &m)? } else { None },
        dtw: dtw(&p, &m)?,
        hrv_std: stats::pop_std(&m),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Mae,
    Mse,
    PearsonR,
    Dtw,
}

impl Metric {
    pub const ALL: [Metric; 4] = [Metric::Mae, Metric::Mse, Metric::PearsonR, Metric::Dtw];

    pub fn as_str(self) -> &'static str {
        match self {
            Metric::Mae => "mae",
            Metric::Mse => "mse",
            Metric::PearsonR => "pearson_r",
            Metric::Dtw => "dtw",
        }
    }

    pub fn of(self, e: &ScanEvaluation) -> Option<f64> {
        match self {
            Metric::Mae => Some(e.mae),
            Metric::Mse => Some(e.mse),
            Metric::PearsonR => e.pearson_r,
            Metric::Dtw => Some(e.dtw),
        }
    }

    pub fn higher_is_better(self) -> bool {
        self == Metric::PearsonR
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScatterPoint {
    pub scan_id: String,
    pub hrv_std: f64,
    pub pearson_r: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariabilityAnalysis {
    pub n_scans: usize,
    /// Scans dropped because their correlation is undefined.
    pub n_excluded: usize,
    /// Least-squares slope of r on hrv_std; `None` if hrv_std is constant.
    pub slope: Option<f64>,
    pub correlation: Option<f64>,
    pub spearman: Option<f64>,
    pub points: Vec<ScatterPoint>,
}

/// Relates per-scan HRV variability to reconstruction accuracy.
pub fn variability_accuracy_analysis(evals: &[ScanEvaluation]) -> Result<VariabilityAnalysis> {
    let mut points: Vec<ScatterPoint> = evals
        .iter()
        .filter_map(|e| {
            e.pearson_r.map(|r| ScatterPoint {
                scan_id: e.scan_id.clone(),
                hrv_std: e.hrv_std,
                pearson_r: r,
            })
        })
        .collect();
    if points.is_empty() {
        return Err(Error::Invalid("every scan has an undefined correlation".into()));
    }
    if points.len() < 3 {
        return Err(Error::Invalid(format!(
            "variability analysis needs at least 3 scans with defined r, got {}",
            points.len()
        )));
    }
    points.sort_by(|a, b| a.scan_id.cmp(&b.scan_id));
    let x: Vec<f64> = points.iter().map(|p| p.hrv_std).collect();
    let y: Vec<f64> = points.iter().map(|p| p.pearson_r).collect();
    let mx = stats::mean(&x);
    let my = stats::mean(&y);
    let sxx: f64 = x.iter().map(|v| (v - mx) * (v - mx)).sum();
    let sxy: f64 = x.iter().zip(&y).map(|(a, b)| (a - mx) * (b - my)).sum();
    Ok(VariabilityAnalysis {
        n_scans: points.len(),
        n_excluded: evals.len() - points.len(),
        slope: (sxx > 0.0).then(|| sxy / sxx),
        correlation: pearson(&x, &y)?,
        spearman: spearman(&x, &y)?,
        points,
    })
}

impl VariabilityAnalysis {
    pub fn write_scatter_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["scan_id", "hrv_std", "pearson_r"])?;
        for p in &self.points {
            w.write_record([p.scan_id.clone(), format!("{:.10}", p.hrv_std), format!("{:.10}", p.pearson_r)])?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    /// The first sample tends to be larger.
    AGreater,
    BGreater,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestMethod {
    Exact,
    NormalApprox,
    AllZero,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairedTest {
    pub n: usize,
    /// Pairs with zero difference, dropped before ranking.
    pub n_zero: usize,
    /// Sum of ranks of positive differences `a - b`.
    pub w_plus: f64,
    pub p_value: f64,
    pub median_difference: f64,
    pub direction: Direction,
    pub method: TestMethod,
}

/// Two-sided Wilcoxon signed-rank test on `a - b`.
///
/// Zero differences are dropped and tied magnitudes get average ranks. With
/// at most 25 remaining pairs the p-value comes from the exact null
/// distribution (enumerated over doubled ranks so ties stay integral);
/// otherwise from the normal approximation with tie and continuity
/// corrections.
pub fn paired_test(a: &[f64], b: &[f64]) -> Result<PairedTest> {
    check_pair(a, b)?;
    if a.len() < MIN_PAIRED_N {
        return Err(Error::Invalid(format!(
            "paired test needs at least {MIN_PAIRED_N} pairs, got {}",
            a.len()
        )));
    }
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let median_difference = stats::median(&diffs);
    let nonzero: Vec<f64> = diffs.iter().copied().filter(|d| *d != 0.0).collect();
    let n = nonzero.len();
    let n_zero = diffs.len() - n;
    if n == 0 {
        return Ok(PairedTest {
            n,
            n_zero,
            w_plus: 0.0,
            p_value: 1.0,
            median_difference,
            direction: Direction::None,
            method: TestMethod::AllZero,
        });
    }
    let magnitudes: Vec<f64> = nonzero.iter().map(|d| d.abs()).collect();
    let ranks = stats::ranks(&magnitudes);
    let w_plus: f64 = nonzero.iter().zip(&ranks).filter(|(d, _)| **d > 0.0).map(|(_, r)| r).sum();
    let mean = (n * (n + 1)) as f64 / 4.0;
    let direction = if w_plus > mean {
        Direction::AGreater
    } else if w_plus < mean {
        Direction::BGreater
    } else {
        Direction::None
    };
    let (p_value, method) = if n <= EXACT_WILCOXON_MAX_N {
        (exact_signed_rank_p(&ranks, w_plus), TestMethod::Exact)
    } else {
        (normal_signed_rank_p(&ranks, w_plus), TestMethod::NormalApprox)
    };
    Ok(PairedTest {
        n,
        n_zero,
        w_plus,
        p_value,
        median_difference,
        direction,
        method,
    })
}

/// Two-sided exact p-value: twice the smaller tail of the null distribution
/// of the positive-rank sum, capped at 1.
pub fn exact_signed_rank_p(ranks: &[f64], w_plus: f64) -> f64 {
    let doubled: Vec<usize> = ranks.iter().map(|r| (2.0 * r).round() as usize).collect();
    let total: usize = doubled.iter().sum();
    // counts[s] = number of sign assignments whose doubled positive sum is s
    let mut counts = vec![0.0f64; total + 1];
    counts[0] = 1.0;
    let mut reach = 0;
    for &r in &doubled {
        for s in (0..=reach).rev() {
            if counts[s] != 0.0 {
                counts[s + r] += counts[s];
            }
        }
        reach += r;
    }
    let w = (2.0 * w_plus).round() as usize;
    let all = 2f64.powi(ranks.len() as i32);
    let lower: f64 = counts[..=w].iter().sum::<f64>() / all;
    let upper: f64 = counts[w..].iter().sum::<f64>() / all;
    (2.0 * lower.min(upper)).min(1.0)
}

fn normal_signed_rank_p(ranks: &[f64], w_plus: f64) -> f64 {
    let n = ranks.len() as f64;
    let mean = n * (n + 1.0) / 4.0;
    let mut tie_term = 0.0;
    let sorted = stats::sorted_copy(ranks);
    let mut i = 0;
    while i < sorted.len() {
        let j = sorted[i..].iter().take_while(|&&r| r == sorted[i]).count();
        let t = j as f64;
        tie_term += t * t * t - t;
        i += j;
    }
    let var = n * (n + 1.0) * (2.0 * n + 1.0) / 24.0 - tie_term / 48.0;
    if var <= 0.0 {
        return 1.0;
    }
    let z = ((w_plus - mean).abs() - 0.5).max(0.0) / var.sqrt();
    let normal = Normal::new(0.0, 1.0).expect("standard normal");
    (2.0 * (1.0 - normal.cdf(z))).min(1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub mean: f64,
    pub median: f64,
    /// Scans with an undefined value (only possible for `pearson_r`).
    pub n_undefined: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigComparison {
    pub labels: Vec<String>,
    pub scan_ids: Vec<String>,
    pub improvement_definition: String,
    /// `summary[label][metric]`.
    pub summary: BTreeMap<String, BTreeMap<Metric, MetricSummary>>,
    /// Configuration with the highest mean r.
    pub best: String,
    /// `(mean r_best - mean r_other) / mean r_other * 100` for each other label.
    pub improvement_pct: BTreeMap<String, f64>,
    /// `p_values[metric][i][j]`: Wilcoxon p between labels i and j (matched
    /// scans with defined values); `None` when fewer than 6 pairs remain.
    pub p_values: BTreeMap<Metric, Vec<Vec<Option<f64>>>>,
    /// Per-scan table: `per_scan[label]` sorted by scan id.
    pub per_scan: BTreeMap<String, Vec<ScanEvaluation>>,
}

pub const IMPROVEMENT_DEFINITION: &str =
    "improvement % = (mean r of best configuration - mean r of other) / mean r of other * 100, on the matched scan set";

/// Aggregates per-configuration evaluations over a common scan set.
pub fn compare_configs(evals: &BTreeMap<String, Vec<ScanEvaluation>>) -> Result<ConfigComparison> {
    if evals.is_empty() {
        return Err(Error::Invalid("no configurations to compare".into()));
    }
    let mut per_scan: BTreeMap<String, Vec<ScanEvaluation>> = BTreeMap::new();
    for (label, list) in evals {
        let mut sorted = list.clone();
        sorted.sort_by(|a, b| a.scan_id.cmp(&b.scan_id));
        per_scan.insert(label.clone(), sorted);
    }
    let labels: Vec<String> = per_scan.keys().cloned().collect();
    let scan_ids: Vec<String> = per_scan[&labels[0]].iter().map(|e| e.scan_id.clone()).collect();
    for (label, list) in &per_scan {
        let ids: Vec<&str> = list.iter().map(|e| e.scan_id.as_str()).collect();
        if ids != scan_ids.iter().map(String::as_str).collect::<Vec<_>>() {
            return Err(Error::Invalid(format!(
                "configuration {label} was evaluated on a different scan set"
            )));
        }
    }

    let mut summary = BTreeMap::new();
    for (label, list) in &per_scan {
        let mut by_metric = BTreeMap::new();
        for m in Metric::ALL {
            let vals: Vec<f64> = list.iter().filter_map(|e| m.of(e)).collect();
            by_metric.insert(
                m,
                MetricSummary {
                    mean: stats::mean(&vals),
                    median: stats::median(&vals),
                    n_undefined: list.len() - vals.len(),
                },
            );
        }
        summary.insert(label.clone(), by_metric);
    }

    // mean r on scans where every configuration has a defined r
    let matched: Vec<usize> = (0..scan_ids.len())
        .filter(|&i| per_scan.values().all(|l| l[i].pearson_r.is_some()))
        .collect();
    let matched_mean_r: BTreeMap<&str, f64> = per_scan
        .iter()
        .map(|(label, l)| {
            let v: Vec<f64> = matched.iter().map(|&i| l[i].pearson_r.unwrap()).collect();
            (label.as_str(), stats::mean(&v))
        })
        .collect();
    let best = labels
        .iter()
        .max_by(|a, b| matched_mean_r[a.as_str()].total_cmp(&matched_mean_r[b.as_str()]).then(b.cmp(a)))
        .unwrap()
        .clone();
    let improvement_pct = labels
        .iter()
        .filter(|l| **l != best)
        .map(|l| {
            let other = matched_mean_r[l.as_str()];
            (l.clone(), (matched_mean_r[best.as_str()] - other) / other * 100.0)
        })
        .collect();

    let mut p_values = BTreeMap::new();
    for m in Metric::ALL {
        let k = labels.len();
        let mut matrix = vec![vec![Some(1.0); k]; k];
        for i in 0..k {
            for j in i + 1..k {
                let (a, b): (Vec<f64>, Vec<f64>) = per_scan[&labels[i]]
                    .iter()
                    .zip(&per_scan[&labels[j]])
                    .filter_map(|(x, y)| Some((m.of(x)?, m.of(y)?)))
                    .unzip();
                let p = if a.len() >= MIN_PAIRED_N {
                    Some(paired_test(&a, &b)?.p_value)
                } else {
                    None
                };
                matrix[i][j] = p;
                matrix[j][i] = p;
            }
        }
        p_values.insert(m, matrix);
    }

    Ok(ConfigComparison {
        labels,
        scan_ids,
        improvement_definition: IMPROVEMENT_DEFINITION.to_string(),
        summary,
        best,
        improvement_pct,
        p_values,
        per_scan,
    })
}

impl ConfigComparison {
    /// One CSV per metric (`violin_<metric>.csv`) with per-scan values per
    /// configuration, plus `violin_markers.csv` holding each distribution's
    /// median and mean.
    pub fn write_violin_data(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut written = Vec::new();
        for m in Metric::ALL {
            let path = dir.join(format!("violin_{}.csv", m.as_str()));
            let mut w = csv::Writer::from_path(&path)?;
            w.write_record(["config", "scan_id", "value"])?;
            for (label, list) in &self.per_scan {
                for e in list {
                    if let Some(v) = m.of(e) {
                        w.write_record([label.as_str(), e.scan_id.as_str(), &format!("{v:.10}")])?;
                    }
                }
            }
            w.flush().map_err(|e| Error::io(&path, e))?;
            written.push(path);
        }
        let path = dir.join("violin_markers.csv");
        let mut w = csv::Writer::from_path(&path)?;
        w.write_record(["config", "metric", "median", "mean", "n_undefined"])?;
        for (label, by_metric) in &self.summary {
            for (m, s) in by_metric {
                w.write_record([
                    label.clone(),
                    m.as_str().to_string(),
                    format!("{:.10}", s.median),
                    format!("{:.10}", s.mean),
                    s.n_undefined.to_string(),
                ])?;
            }
        }
        w.flush().map_err(|e| Error::io(&path, e))?;
        written.push(path);
        Ok(written)
    }
}

/// Writes per-scan metrics as CSV, sorted by scan id.
pub fn write_scan_metrics_csv(evals: &[ScanEvaluation], path: &Path) -> Result<()> {
    let mut sorted: Vec<&ScanEvaluation> = evals.iter().collect();
    sorted.sort_by(|a, b| a.scan_id.cmp(&b.scan_id));
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["scan_id", "n_frames", "mae", "mse", "pearson_r", "dtw", "hrv_std"])?;
    for e in sorted {
        w.write_record([
            e.scan_id.clone(),
            e.n_frames.to_string(),
            format!("{:.10}", e.mae),
            format!("{:.10}", e.mse),
            e.pearson_r.map_or_else(|| "undefined".to_string(), |r| format!("{r:.10}")),
            format!("{:.10}", e.dtw),
            format!("{:.10}", e.hrv_std),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
