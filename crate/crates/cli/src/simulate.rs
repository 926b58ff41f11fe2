//! `simulate`: synthetic scan directories plus a manifest.

use std::fs;
use std::path::{Path, PathBuf};

use hrv_bold::io::write_scan;
use hrv_bold::rng::{derive_seed, rng_from_seed};
use hrv_bold::simulator::{simulate_scan, BoldSimConfig, CardiacSimConfig, DefectKind, DefectSpec, ScanIds};
use hrv_bold::stats;
use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;

use crate::config::{validate_mix, ExperimentConfig, SimulateConfig};
use crate::error::{CliError, Result};
use crate::manifest::{Manifest, ManifestRow, MANIFEST_FILE};

pub const SCANS_DIR: &str = "scans";

pub fn scan_id(index: usize) -> String {
    format!("scan_{index:04}")
}

/// Splits `n` scans over the mix with largest-remainder rounding; ties go
/// to the kind listed first.
pub fn defect_counts(sim: &SimulateConfig) -> Result<Vec<(DefectKind, usize)>> {
    validate_mix(&sim.defect_mix)?;
    let n = sim.n_scans;
    let mut counts: Vec<(DefectKind, usize, f64)> = sim
        .defect_mix
        .iter()
        .map(|(&k, &p)| {
            let exact = p * n as f64;
            (k, exact.floor() as usize, exact - exact.floor())
        })
        .collect();
    let assigned: usize = counts.iter().map(|c| c.1).sum();
    let mut order: Vec<usize> = (0..counts.len()).collect();
    order.sort_by(|&a, &b| counts[b].2.total_cmp(&counts[a].2).then(a.cmp(&b)));
    for &i in order.iter().take(n.saturating_sub(assigned)) {
        counts[i].1 += 1;
    }
    Ok(counts.into_iter().map(|(k, c, _)| (k, c)).collect())
}

/// Defect kind of each scan index, in a seeded order.
pub fn defect_assignment(sim: &SimulateConfig, master_seed: u64) -> Result<Vec<DefectKind>> {
    let mut kinds: Vec<DefectKind> = defect_counts(sim)?
        .into_iter()
        .flat_map(|(k, c)| std::iter::repeat_n(k, c))
        .collect();
    kinds.shuffle(&mut rng_from_seed(derive_seed(master_seed, "defects", 0)));
    Ok(kinds)
}

pub struct SimulateSummary {
    pub manifest: PathBuf,
    pub rows: Vec<ManifestRow>,
}

/// Simulates `cfg.simulate.n_scans` scans with seeds `seed + index` under
/// `<out>/scans/` and writes `<out>/manifest.csv`.
pub fn cmd_simulate(cfg: &ExperimentConfig, out: &Path) -> Result<SimulateSummary> {
    cfg.validate()?;
    let sim = &cfg.simulate;
    if sim.n_scans == 0 {
        return Err(CliError::Config("simulate.n_scans must be positive".into()));
    }
    let kinds = defect_assignment(sim, cfg.seed)?;
    let scans_dir = out.join(SCANS_DIR);
    fs::create_dir_all(&scans_dir).map_err(|e| CliError::io(&scans_dir, e))?;
    let rows: Vec<Result<ManifestRow>> = kinds
        .par_iter()
        .enumerate()
        .map(|(i, &kind)| {
            let seed = cfg.seed.wrapping_add(i as u64);
            let [lo, hi] = sim.depth_range_bpm;
            let depth = if hi > lo {
                rng_from_seed(derive_seed(seed, "depth", 0)).random_range(lo..hi)
            } else {
                lo
            };
            let cardiac = CardiacSimConfig {
                seed,
                hr_modulation_depth: depth,
                ..sim.cardiac.clone()
            };
            let bold = BoldSimConfig {
                seed: derive_seed(seed, "bold", 0),
                ..sim.bold.clone()
            };
            let ids = ScanIds {
                scan_id: scan_id(i),
                subject_id: format!("sub_{:04}", i / sim.scans_per_subject),
            };
            let record = simulate_scan(&cardiac, &bold, &DefectSpec::default_for(kind), &ids)?;
            let hrv_std = record.hrv.as_ref().map(|h| stats::pop_std(h.values()));
            let rel = PathBuf::from(SCANS_DIR).join(&ids.scan_id);
            write_scan(&record, &out.join(&rel))?;
            Ok(ManifestRow {
                scan_id: ids.scan_id,
                subject_id: ids.subject_id,
                path: rel,
                seed: Some(seed),
                defect: Some(kind.as_str().to_string()),
                hrv_std,
                quality: None,
            })
        })
        .collect();
    let rows = rows.into_iter().collect::<Result<Vec<_>>>()?;
    let manifest = Manifest {
        base: out.to_path_buf(),
        rows,
    };
    let path = out.join(MANIFEST_FILE);
    manifest.write_rows(&manifest.rows, &path)?;
    log::info!("simulated {} scans into {}", manifest.rows.len(), scans_dir.display());
    Ok(SimulateSummary {
        manifest: path,
        rows: manifest.rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mix(pairs: &[(DefectKind, f64)], n: usize) -> SimulateConfig {
        SimulateConfig {
            n_scans: n,
            defect_mix: pairs.iter().copied().collect(),
            ..Default::default()
        }
    }

    #[test]
    fn counts_sum_to_n() {
        let sim = mix(&[(DefectKind::None, 1.0 / 3.0), (DefectKind::Gaps, 1.0 / 3.0), (DefectKind::Clipping, 1.0 / 3.0)], 10);
        let counts = defect_counts(&sim).unwrap();
        assert_eq!(counts.iter().map(|c| c.1).sum::<usize>(), 10);
        assert!(counts.iter().all(|c| c.1 == 3 || c.1 == 4));
    }

    #[test]
    fn exact_proportions_are_kept() {
        let sim = mix(&[(DefectKind::None, 0.5), (DefectKind::Gaps, 0.25), (DefectKind::Clipping, 0.25)], 8);
        let counts = defect_counts(&sim).unwrap();
        assert_eq!(
            counts,
            vec![(DefectKind::None, 4), (DefectKind::Clipping, 2), (DefectKind::Gaps, 2)]
        );
    }

    #[test]
    fn assignment_is_seeded() {
        let sim = mix(&[(DefectKind::None, 0.5), (DefectKind::Gaps, 0.5)], 20);
        let a = defect_assignment(&sim, 1).unwrap();
        assert_eq!(a, defect_assignment(&sim, 1).unwrap());
        assert_ne!(a, defect_assignment(&sim, 2).unwrap());
    }

    #[test]
    fn bad_mix_is_rejected() {
        let sim = mix(&[(DefectKind::None, 0.7)], 10);
        assert!(matches!(defect_counts(&sim), Err(CliError::Config(_))));
    }
}
