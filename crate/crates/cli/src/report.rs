//! `report`: SVG plots and a markdown summary from earlier outputs.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use hrv_bold::metrics::Metric;

use crate::compare::{ComparisonOutput, COMPARISON_FILE};
use crate::error::{CliError, Result};
use crate::svg::{line_plot, scatter_plot, violin_plot, Series};
use crate::train_cv::{CvReport, PREDICTIONS_DIR, REPORT_FILE};

/// Default output directories of `train-cv` and `compare-rois` under `--out`.
pub const CV_DIR: &str = "cv";
pub const COMPARE_DIR: &str = "compare";
pub const REPORT_DIR: &str = "report";
pub const SUMMARY_FILE: &str = "summary.md";
pub const SCATTER_SVG: &str = "scatter_hrv_std_vs_r.svg";

#[derive(Debug, Clone, PartialEq)]
pub struct ReportOutput {
    pub dir: PathBuf,
    pub files: Vec<PathBuf>,
}

fn write(path: PathBuf, text: &str, files: &mut Vec<PathBuf>) -> Result<()> {
    fs::write(&path, text).map_err(|e| CliError::io(&path, e))?;
    files.push(path);
    Ok(())
}

fn read_predictions(path: &Path) -> Result<Vec<(f64, f64, Option<f64>)>> {
    let mut r = csv::Reader::from_path(path)?;
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let num = |i: usize| -> Result<Option<f64>> {
            let cell = rec.get(i).unwrap_or("");
            if cell.is_empty() {
                return Ok(None);
            }
            cell.parse()
                .map(Some)
                .map_err(|_| CliError::Data(format!("{}: cannot parse {cell:?}", path.display())))
        };
        let frame = num(0)?.ok_or_else(|| CliError::Data(format!("{}: missing frame", path.display())))?;
        let measured = num(1)?.ok_or_else(|| CliError::Data(format!("{}: missing measurement", path.display())))?;
        rows.push((frame, measured, num(2)?));
    }
    Ok(rows)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "undefined".to_string(), |v| format!("{v:.4}"))
}

fn cv_section(root: &Path, report: &CvReport, dir: &Path, files: &mut Vec<PathBuf>, md: &mut String) -> Result<()> {
    let pred_dir = root.join(PREDICTIONS_DIR);
    let missing: Vec<String> = report
        .scans
        .iter()
        .map(|s| format!("{PREDICTIONS_DIR}/{}.csv", s.evaluation.scan_id))
        .filter(|p| !root.join(p).exists())
        .collect();
    if !missing.is_empty() {
        return Err(CliError::MissingArtifacts {
            root: root.to_path_buf(),
            missing,
        });
    }
    for s in &report.scans {
        let id = &s.evaluation.scan_id;
        let rows = read_predictions(&pred_dir.join(format!("{id}.csv")))?;
        let measured = Series {
            name: "measured",
            points: rows.iter().map(|r| (r.0, Some(r.1))).collect(),
        };
        let predicted = Series {
            name: "reconstructed",
            points: rows.iter().map(|r| (r.0, r.2)).collect(),
        };
        let title = format!("{id} (r = {})", fmt_opt(s.evaluation.pearson_r));
        let svg = line_plot(&title, "frame", "HRV (s)", &[measured, predicted]);
        write(dir.join(format!("overlay_{id}.svg")), &svg, files)?;
    }
    if let Some(v) = &report.variability {
        let pts: Vec<(f64, f64)> = v.points.iter().map(|p| (p.hrv_std, p.pearson_r)).collect();
        let fit = v.slope.map(|b| {
            let n = pts.len() as f64;
            let (mx, my) = pts.iter().fold((0.0, 0.0), |a, p| (a.0 + p.0 / n, a.1 + p.1 / n));
            (b, my - b * mx)
        });
        let svg = scatter_plot("HRV variability vs reconstruction accuracy", "std of measured HRV (s)", "Pearson r", &pts, fit);
        write(dir.join(SCATTER_SVG), &svg, files)?;
    }

    let _ = writeln!(md, "## Cross-validation\n");
    let _ = writeln!(
        md,
        "{} scans, {} folds, {} channels, {} parameters, seed {}.\n",
        report.n_scans, report.k, report.n_channels, report.param_count, report.seed
    );
    if !report.complete {
        let _ = writeln!(md, "**Incomplete run:** {}\n", report.error.as_deref().unwrap_or("unknown error"));
    }
    let _ = writeln!(md, "| grouping | MAE | MSE | Pearson r | DTW | std. MAE | std. MSE |");
    let _ = writeln!(md, "|---|---|---|---|---|---|---|");
    for (name, m) in [("across scans", &report.mean_across_scans), ("across folds", &report.mean_across_folds)] {
        if let Some(m) = m {
            let _ = writeln!(
                md,
                "| {name} | {:.5} | {:.3e} | {} | {:.4} | {:.4} | {:.4} |",
                m.mae,
                m.mse,
                fmt_opt(m.pearson_r),
                m.dtw,
                m.standardized_mae,
                m.standardized_mse
            );
        }
    }
    if let Some(v) = &report.variability {
        let _ = writeln!(
            md,
            "\nHRV variability vs accuracy over {} scans ({} without a defined r): Spearman {}, Pearson {}, slope {}.",
            v.n_scans,
            v.n_excluded,
            fmt_opt(v.spearman),
            fmt_opt(v.correlation),
            fmt_opt(v.slope)
        );
    }
    let _ = writeln!(md);
    Ok(())
}

fn compare_section(c: &ComparisonOutput, dir: &Path, files: &mut Vec<PathBuf>, md: &mut String) -> Result<()> {
    let cmp = &c.comparison;
    for m in Metric::ALL {
        let groups: Vec<(String, Vec<f64>)> = cmp
            .labels
            .iter()
            .map(|l| (l.clone(), cmp.per_scan[l].iter().filter_map(|e| m.of(e)).collect()))
            .collect();
        let svg = violin_plot(&format!("{} by ROI configuration", m.as_str()), m.as_str(), &groups);
        write(dir.join(format!("violin_{}.svg", m.as_str())), &svg, files)?;
    }
    let _ = writeln!(md, "## ROI configurations\n");
    let _ = writeln!(md, "> {}\n", c.note);
    let _ = writeln!(md, "| configuration | channels | mean r | median r | mean MAE | mean DTW |");
    let _ = writeln!(md, "|---|---|---|---|---|---|");
    for l in &cmp.labels {
        let s = &cmp.summary[l];
        let _ = writeln!(
            md,
            "| {l} | {} | {:.4} | {:.4} | {:.5} | {:.4} |",
            c.channel_counts.get(l).copied().unwrap_or(0),
            s[&Metric::PearsonR].mean,
            s[&Metric::PearsonR].median,
            s[&Metric::Mae].mean,
            s[&Metric::Dtw].mean
        );
    }
    let _ = writeln!(md, "\nBest by mean r: {}. {}.", cmp.best, cmp.improvement_definition);
    for (l, pct) in &cmp.improvement_pct {
        let _ = writeln!(md, "- vs {l}: {pct:+.2}%");
    }
    if let Some(w) = &c.wm_effect {
        let p = w.test.as_ref().map_or_else(|| "n/a".to_string(), |t| format!("{:.4}", t.p_value));
        let _ = writeln!(
            md,
            "\nWhite matter: mean r {:.4} with vs {:.4} without, Wilcoxon p = {p}.",
            w.mean_r_with_wm, w.mean_r_without_wm
        );
    }
    let _ = writeln!(md);
    Ok(())
}

fn has_artifacts(dir: &Path) -> bool {
    dir.join(REPORT_FILE).exists() || dir.join(COMPARISON_FILE).exists()
}

/// Renders a report for `root` itself when it holds a cross-validation
/// report or a ROI comparison, otherwise for each of its `cv/` and
/// `compare/` subdirectories that does.
pub fn cmd_report(root: &Path) -> Result<Vec<ReportOutput>> {
    let dirs: Vec<PathBuf> = if has_artifacts(root) {
        vec![root.to_path_buf()]
    } else {
        [CV_DIR, COMPARE_DIR].iter().map(|d| root.join(d)).filter(|d| has_artifacts(d)).collect()
    };
    if dirs.is_empty() {
        let missing = [
            REPORT_FILE.to_string(),
            COMPARISON_FILE.to_string(),
            format!("{CV_DIR}/{REPORT_FILE}"),
            format!("{COMPARE_DIR}/{COMPARISON_FILE}"),
        ];
        return Err(CliError::MissingArtifacts {
            root: root.to_path_buf(),
            missing: missing.to_vec(),
        });
    }
    dirs.iter().map(|d| render_dir(d)).collect()
}

/// Renders plots and `summary.md` into `<root>/report/`.
pub fn render_dir(root: &Path) -> Result<ReportOutput> {
    let cv_path = root.join(REPORT_FILE);
    let cmp_path = root.join(COMPARISON_FILE);
    let dir = root.join(REPORT_DIR);
    fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
    let mut files = Vec::new();
    let mut md = String::from("# HRV reconstruction report\n\n");
    if cv_path.exists() {
        let report = CvReport::read(root)?;
        cv_section(root, &report, &dir, &mut files, &mut md)?;
    }
    if cmp_path.exists() {
        let text = fs::read_to_string(&cmp_path).map_err(|e| CliError::io(&cmp_path, e))?;
        let c: ComparisonOutput = serde_json::from_str(&text)?;
        compare_section(&c, &dir, &mut files, &mut md)?;
    }
    write(dir.join(SUMMARY_FILE), &md, &mut files)?;
    Ok(ReportOutput { dir, files })
}
