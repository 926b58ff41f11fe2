//! `compare-rois`: cross-validation once per ROI configuration.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use hrv_bold::io::{make_roi_config, RoiGroup, RoiLabel, RoiMatrix};
use hrv_bold::metrics::{compare_configs, ConfigComparison, Metric, PairedTest};
use hrv_bold::rng::{derive_seed, rng_from_seed};
use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::data::{load_all, ScanData};
use crate::error::{CliError, Result};
use crate::manifest::Manifest;
use crate::train_cv::run_cv;

pub const COMPARISON_FILE: &str = "comparison.json";
pub const CHANNELS_FILE: &str = "channels.json";

pub const ATLAS_NOTE: &str = "StaticPlusWM and StructuralOnly are seeded channel subsamples with the channel counts of \
the static and structural atlases, drawn from the simulated dynamic channels. This comparison measures the effect of \
channel count and white-matter inclusion, not of atlas identity.";

/// `k` of `pool` chosen with `seed`, in ascending order.
fn subsample(pool: &[usize], k: usize, seed: u64) -> Vec<usize> {
    let mut picked: Vec<usize> = sample(&mut rng_from_seed(seed), pool.len(), k.min(pool.len()))
        .into_iter()
        .map(|i| pool[i])
        .collect();
    picked.sort_unstable();
    picked
}

/// Rounds `count * num / den` to the nearest integer.
fn scaled(count: usize, num: usize, den: usize) -> usize {
    (count * num + den / 2) / den
}

/// Channel indices of `roi` to feed a model for `label`. `roi` must carry
/// the cortical, subcortical and white-matter groups. Subsample sizes keep
/// the reference atlases' proportions, which gives their exact counts on a
/// full-size matrix.
pub fn select_roi_channels(roi: &RoiMatrix, label: RoiLabel, seed: u64) -> Result<Vec<usize>> {
    use RoiGroup::*;
    let ctx = roi.channels_in(Cortical);
    let sub = roi.channels_in(Subcortical);
    let wm = roi.channels_in(WhiteMatter);
    if ctx.is_empty() || sub.is_empty() || wm.is_empty() {
        return Err(CliError::Data(format!(
            "ROI comparison needs cortical, subcortical and white-matter channels, found {:?}",
            roi.group_counts()
        )));
    }
    let dynamic: Vec<usize> = ctx.iter().chain(&sub).copied().collect();
    let full = make_roi_config(RoiLabel::DynamicPlusWM);
    let full_dynamic = full.count(Cortical) + full.count(Subcortical);
    let seed = derive_seed(seed, "channels", label as u64);
    let mut picked = match label {
        RoiLabel::DynamicPlusWM => dynamic.iter().chain(&wm).copied().collect(),
        RoiLabel::DynamicOnly => dynamic,
        RoiLabel::StaticPlusWM => {
            let n = scaled(dynamic.len(), make_roi_config(label).count(Cortical), full_dynamic);
            let mut v = subsample(&dynamic, n, seed);
            v.extend(&wm);
            v
        }
        RoiLabel::StructuralOnly => {
            let all: Vec<usize> = dynamic.iter().chain(&wm).copied().collect();
            let target = scaled(all.len(), make_roi_config(label).total(), full.total()).max(1);
            stratified(&[ctx, sub, wm], target, seed)
        }
    };
    picked.sort_unstable();
    Ok(picked)
}

/// `target` indices split across groups in proportion to their sizes
/// (largest remainder), sampled within each group.
fn stratified(groups: &[Vec<usize>], target: usize, seed: u64) -> Vec<usize> {
    let total: usize = groups.iter().map(Vec::len).sum();
    let exact: Vec<f64> = groups.iter().map(|g| target as f64 * g.len() as f64 / total as f64).collect();
    let mut counts: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let mut order: Vec<usize> = (0..groups.len()).collect();
    order.sort_by(|&a, &b| (exact[b] - exact[b].floor()).total_cmp(&(exact[a] - exact[a].floor())).then(a.cmp(&b)));
    let short = target - counts.iter().sum::<usize>();
    for &i in order.iter().take(short) {
        counts[i] += 1;
    }
    groups
        .iter()
        .zip(counts)
        .enumerate()
        .flat_map(|(gi, (g, c))| subsample(g, c, derive_seed(seed, "group", gi as u64)))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WmEffect {
    pub mean_r_with_wm: f64,
    pub mean_r_without_wm: f64,
    pub test: Option<PairedTest>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonOutput {
    pub note: String,
    pub channel_counts: BTreeMap<String, usize>,
    /// DynamicPlusWM against DynamicOnly on per-scan Pearson r.
    pub wm_effect: Option<WmEffect>,
    pub comparison: ConfigComparison,
}

fn wm_effect(c: &ConfigComparison) -> Result<Option<WmEffect>> {
    let (Some(with), Some(without)) = (
        c.per_scan.get(RoiLabel::DynamicPlusWM.as_str()),
        c.per_scan.get(RoiLabel::DynamicOnly.as_str()),
    ) else {
        return Ok(None);
    };
    let (a, b): (Vec<f64>, Vec<f64>) = with
        .iter()
        .zip(without)
        .filter_map(|(x, y)| Some((x.pearson_r?, y.pearson_r?)))
        .unzip();
    let test = if a.len() >= hrv_bold::metrics::MIN_PAIRED_N {
        Some(hrv_bold::metrics::paired_test(&a, &b)?)
    } else {
        None
    };
    Ok(Some(WmEffect {
        mean_r_with_wm: c.summary[RoiLabel::DynamicPlusWM.as_str()][&Metric::PearsonR].mean,
        mean_r_without_wm: c.summary[RoiLabel::DynamicOnly.as_str()][&Metric::PearsonR].mean,
        test,
    }))
}

pub struct CompareResult {
    pub output: ComparisonOutput,
    pub violin_files: Vec<PathBuf>,
}

/// Runs cross-validation for every configured ROI label on channel subsets
/// of the same scans, then compares the configurations.
pub fn run_compare(cfg: &ExperimentConfig, scans: &[ScanData], out: &Path) -> Result<CompareResult> {
    cfg.validate()?;
    let first = scans.first().ok_or_else(|| CliError::Data("no scans to compare on".into()))?;
    fs::create_dir_all(out).map_err(|e| CliError::io(out, e))?;
    let mut evals = BTreeMap::new();
    let mut channel_names = BTreeMap::new();
    let mut channel_counts = BTreeMap::new();
    for &label in &cfg.roi_labels {
        let idx = select_roi_channels(&first.roi, label, cfg.seed)?;
        let subset = scans
            .iter()
            .map(|s| {
                Ok(ScanData {
                    roi: s.roi.select_channels(&idx)?,
                    ..s.clone()
                })
            })
            .collect::<Result<Vec<_>>>()?;
        log::info!("{label}: {} channels", idx.len());
        let report = run_cv(cfg, &subset, &out.join(label.as_str()))?;
        evals.insert(label.as_str().to_string(), report.evaluations());
        channel_counts.insert(label.as_str().to_string(), idx.len());
        let names: Vec<String> = idx.iter().map(|&i| first.roi.channels()[i].name.clone()).collect();
        channel_names.insert(label.as_str().to_string(), names);
    }
    let comparison = compare_configs(&evals)?;
    let output = ComparisonOutput {
        note: ATLAS_NOTE.to_string(),
        channel_counts,
        wm_effect: wm_effect(&comparison)?,
        comparison,
    };
    let path = out.join(COMPARISON_FILE);
    fs::write(&path, serde_json::to_string_pretty(&output)?).map_err(|e| CliError::io(&path, e))?;
    let cpath = out.join(CHANNELS_FILE);
    fs::write(&cpath, serde_json::to_string_pretty(&channel_names)?).map_err(|e| CliError::io(&cpath, e))?;
    let violin_files = output.comparison.write_violin_data(out)?;
    Ok(CompareResult { output, violin_files })
}

pub fn cmd_compare_rois(cfg: &ExperimentConfig, manifest_path: &Path, out: &Path) -> Result<CompareResult> {
    cfg.validate()?;
    let manifest = Manifest::read(manifest_path)?;
    let scans = load_all(&manifest, cfg.hrv_window_s)?;
    run_compare(cfg, &scans, out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use hrv_bold::io::RoiConfig;

    fn roi(counts: &[(RoiGroup, usize)]) -> RoiMatrix {
        let cfg = RoiConfig::custom(counts.iter().copied());
        let ch = cfg.channels();
        RoiMatrix::new(1, ch.clone(), vec![0.0; ch.len()]).unwrap()
    }

    #[test]
    fn full_matrix_gives_reference_counts() {
        use RoiGroup::*;
        let m = roi(&[(Cortical, 518), (Subcortical, 62), (WhiteMatter, 48)]);
        let count = |l| select_roi_channels(&m, l, 1).unwrap().len();
        assert_eq!(count(RoiLabel::DynamicPlusWM), 628);
        assert_eq!(count(RoiLabel::DynamicOnly), 580);
        assert_eq!(count(RoiLabel::StaticPlusWM), 408);
        assert_eq!(count(RoiLabel::StructuralOnly), 69);
        let wm = m.channels_in(WhiteMatter);
        let dyn_only = select_roi_channels(&m, RoiLabel::DynamicOnly, 1).unwrap();
        assert!(dyn_only.iter().all(|i| !wm.contains(i)));
        let st = select_roi_channels(&m, RoiLabel::StaticPlusWM, 1).unwrap();
        assert!(wm.iter().all(|i| st.contains(i)));
    }

    #[test]
    fn structural_subsample_spans_groups() {
        use RoiGroup::*;
        let m = roi(&[(Cortical, 518), (Subcortical, 62), (WhiteMatter, 48)]);
        let picked = select_roi_channels(&m, RoiLabel::StructuralOnly, 4).unwrap();
        for g in [Cortical, Subcortical, WhiteMatter] {
            let members = m.channels_in(g);
            assert!(picked.iter().any(|i| members.contains(i)), "{g:?} missing");
        }
    }

    #[test]
    fn subsets_are_seeded() {
        use RoiGroup::*;
        let m = roi(&[(Cortical, 40), (Subcortical, 8), (WhiteMatter, 16)]);
        for l in RoiLabel::ALL {
            assert_eq!(select_roi_channels(&m, l, 9).unwrap(), select_roi_channels(&m, l, 9).unwrap());
        }
        assert_ne!(
            select_roi_channels(&m, RoiLabel::StaticPlusWM, 9).unwrap(),
            select_roi_channels(&m, RoiLabel::StaticPlusWM, 10).unwrap()
        );
    }

    #[test]
    fn missing_groups_are_rejected() {
        let m = roi(&[(RoiGroup::Structural, 10)]);
        assert!(matches!(select_roi_channels(&m, RoiLabel::DynamicOnly, 0), Err(CliError::Data(_))));
    }
}
