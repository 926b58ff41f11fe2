//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each and
//! exits non-zero if any failed.
//!
//! `cargo test --release -p hrv-bold-cli --test acceptance`
//!
//! Criteria 6 to 8 train many models; set `ACCEPTANCE_ONLY=1,2,9` to run a
//! subset.

use hrv_bold::dataset::{assign_folds, build_windows, WindowSpec};
use hrv_bold::io::{HrvSeries, RoiConfig, RoiGroup, RoiMatrix};
use hrv_bold::metrics::{dtw, paired_test, spearman, Metric, TestMethod};
use hrv_bold::nn::{check_gradients, init_params, Activation, ConvBlock, Model, ModelConfig, Pool};
use hrv_bold::ppg::{classify_quality, correct_spikes, extract_hrv, QcThresholds};
use hrv_bold::rng::{normal, rng_from_seed};
use hrv_bold::simulator::{
    clean_pulse_train, gen_beat_times, simulate_scan, synth_ppg, BoldSimConfig, CardiacSimConfig, DefectKind, DefectSpec, ScanIds, DEFAULT_HRV_WINDOW_S, PPG_NOISE_STD,
};
use hrv_bold_cli::compare::cmd_compare_rois;
use hrv_bold_cli::data::ScanData;
use hrv_bold_cli::qc::cmd_qc;
use hrv_bold_cli::simulate::cmd_simulate;
use hrv_bold_cli::train_cv::{cmd_train_cv, fold_assignment, plan_fold, CvReport, REPORT_FILE};
use hrv_bold_cli::ExperimentConfig;
use anyhow::{anyhow, Context};
use rand::Rng;
use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

/// Pass flag and the measured numbers.
type Outcome = anyhow::Result<(bool, String)>;

fn check(cond: bool, detail: String) -> Outcome {
    Ok((cond, detail))
}

fn acceptance_config() -> ExperimentConfig {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/acceptance.json");
    ExperimentConfig::load(&path).expect("configs/acceptance.json")
}

// 1 -------------------------------------------------------------------------

fn tiny_config(seed: u64) -> ModelConfig {
    let mut rng = rng_from_seed(seed);
    let n_blocks = rng.random_range(1..=2);
    let conv_blocks = (0..n_blocks)
        .map(|b| {
            let pool = if b == 0 && rng.random_bool(0.5) { Pool::Max2 } else { Pool::None };
            ConvBlock::new(rng.random_range(1..=3), [1, 3, 5][rng.random_range(0..3)], rng.random_range(1..=2), pool)
        })
        .collect();
    ModelConfig {
        n_channels: rng.random_range(1..=3),
        window_len: rng.random_range(8..=12),
        conv_blocks,
        gru_hidden: rng.random_range(1..=4),
        dense_hidden: rng.random_range(1..=4),
        activation: if seed % 2 == 0 { Activation::ReLU } else { Activation::Tanh },
        seed,
    }
}

fn criterion_1() -> Outcome {
    let started = Instant::now();
    let mut n_configs = 0;
    let mut worst_by_tensor: BTreeMap<String, f64> = BTreeMap::new();
    for seed in 0.. {
        if n_configs == 24 {
            break;
        }
        let cfg = tiny_config(seed);
        // some random stacks shrink the sequence below two steps
        let Ok(model) = Model::new(cfg.clone()) else { continue };
        n_configs += 1;
        // zero biases put ReLU pre-activations exactly on the kink, where
        // the central difference sees half a slope; move off it
        let mut params = init_params(&cfg)?;
        let mut rng = rng_from_seed(seed + 1000);
        for v in params.values.iter_mut() {
            *v += 0.1 * normal(&mut rng);
        }
        let inputs: Vec<Vec<f64>> = (0..3).map(|_| (0..model.input_len()).map(|_| normal(&mut rng)).collect()).collect();
        let batch: Vec<(&[f64], f64)> = inputs.iter().map(|x| (x.as_slice(), normal(&mut rng))).collect();
        for (name, range) in cfg.tensor_ranges()? {
            let r = check_gradients(&model, &params, &batch, 1e-5, range)?;
            // conv0.weight -> conv, gru.bias -> gru, ...
            let layer: String = name.chars().take_while(|c| c.is_ascii_alphabetic()).collect();
            let w = worst_by_tensor.entry(layer).or_insert(0.0);
            *w = w.max(r.max_rel_error);
        }
    }
    let worst = worst_by_tensor.values().cloned().fold(0.0, f64::max);
    let elapsed = started.elapsed();
    let per_layer: Vec<String> = worst_by_tensor.iter().map(|(k, v)| format!("{k} {v:.1e}")).collect();
    check(
        worst < 1e-4 && elapsed < Duration::from_secs(60),
        format!("{n_configs} configs, max rel err {worst:.2e} ({}), {:.1} s", per_layer.join(", "), elapsed.as_secs_f64()),
    )
}

// 2 -------------------------------------------------------------------------

fn brute_dtw(x: &[f64], y: &[f64], i: usize, j: usize) -> f64 {
    let c = (x[i] - y[j]).abs();
    if i == 0 && j == 0 {
        return c;
    }
    let mut best = f64::INFINITY;
    if i > 0 {
        best = best.min(brute_dtw(x, y, i - 1, j));
    }
    if j > 0 {
        best = best.min(brute_dtw(x, y, i, j - 1));
    }
    if i > 0 && j > 0 {
        best = best.min(brute_dtw(x, y, i - 1, j - 1));
    }
    c + best
}

fn criterion_2() -> Outcome {
    let mut rng = rng_from_seed(2);
    let mut mismatches = 0;
    for _ in 0..1000 {
        let x: Vec<f64> = (0..rng.random_range(1..=6)).map(|_| rng.random_range(-5..=5) as f64).collect();
        let y: Vec<f64> = (0..rng.random_range(1..=6)).map(|_| rng.random_range(-5..=5) as f64).collect();
        let got = dtw(&x, &y)?;
        if got != brute_dtw(&x, &y, x.len() - 1, y.len() - 1) {
            mismatches += 1;
        }
    }
    check(mismatches == 0, format!("1000 pairs, {mismatches} mismatches"))
}

// 3 -------------------------------------------------------------------------

fn criterion_3() -> Outcome {
    let bold = BoldSimConfig {
        roi_config: RoiConfig::custom([(RoiGroup::Cortical, 2)]),
        ..Default::default()
    };
    let (mut good, mut total, mut worst) = (0usize, 0usize, 0.0f64);
    for i in 0..50u64 {
        let cardiac = CardiacSimConfig {
            seed: 3000 + i,
            hr_modulation_depth: 4.0 + (i % 9) as f64,
            ..Default::default()
        };
        let ids = ScanIds {
            scan_id: format!("scan_{i:02}"),
            subject_id: format!("sub_{i:02}"),
        };
        let rec = simulate_scan(&cardiac, &bold, &DefectSpec::None, &ids)?;
        let ppg = rec.ppg.as_ref().context("no ppg")?;
        let truth = rec.hrv.as_ref().context("no ground truth")?;
        let got = extract_hrv(ppg, cardiac.tr_seconds, cardiac.duration_frames, DEFAULT_HRV_WINDOW_S)?;
        for (g, t) in got.values().iter().zip(truth.values()) {
            let err = (g - t).abs();
            worst = worst.max(err);
            good += (err < 0.01) as usize;
            total += 1;
        }
    }
    let frac = good as f64 / total as f64;
    check(
        frac >= 0.99,
        format!("50 scans, {:.3}% of {total} frames within 0.01 s (worst {worst:.4} s)", 100.0 * frac),
    )
}

// 4 -------------------------------------------------------------------------

fn criterion_4() -> Outcome {
    let th = QcThresholds::default();
    let mut correct = 0;
    let mut confusions = Vec::new();
    for i in 0..100u64 {
        let kind = DefectKind::ALL[i as usize % DefectKind::ALL.len()];
        let cardiac = CardiacSimConfig {
            duration_frames: 200,
            seed: 4000 + i,
            hr_modulation_depth: 4.0 + (i % 9) as f64,
            ..Default::default()
        };
        let beats = gen_beat_times(&cardiac)?;
        let ppg = synth_ppg(&beats, cardiac.ppg_sample_rate_hz, cardiac.duration_s(), &DefectSpec::default_for(kind), i)?;
        let got = classify_quality(&ppg, &th).kind;
        if got == kind.expected_quality() {
            correct += 1;
        } else {
            confusions.push(format!("{kind}->{got:?}"));
        }
    }
    let accuracy = correct as f64 / 100.0;

    // spike restoration at the injected positions, against the waveform
    // before noise and spikes; the per-sample noise itself is unrecoverable
    let (mut worst, mut worst_noisy) = (0.0f64, 0.0f64);
    for i in 0..20u64 {
        let cardiac = CardiacSimConfig {
            duration_frames: 200,
            seed: 4500 + i,
            ..Default::default()
        };
        let beats = gen_beat_times(&cardiac)?;
        let fs = cardiac.ppg_sample_rate_hz;
        let clean = synth_ppg(&beats, fs, cardiac.duration_s(), &DefectSpec::None, i)?;
        let waveform = clean_pulse_train(&beats, fs, clean.values.len());
        let spiked = synth_ppg(&beats, fs, cardiac.duration_s(), &DefectSpec::default_for(DefectKind::CorrectableSpikes), i)?;
        let fixed = correct_spikes(&spiked, &th);
        for k in 0..clean.values.len() {
            if clean.values[k] != spiked.values[k] {
                worst = worst.max((fixed.values[k] - waveform[k]).abs());
                worst_noisy = worst_noisy.max((fixed.values[k] - clean.values[k]).abs());
            }
        }
    }
    let bound = 3.0 * PPG_NOISE_STD;
    check(
        accuracy >= 0.95 && worst <= bound,
        format!(
            "triage accuracy {:.0}% on 100 signals{}; spike restoration max err {worst:.4} (bound {bound}; {worst_noisy:.4} against the noisy trace)",
            100.0 * accuracy,
            if confusions.is_empty() { String::new() } else { format!(" [{}]", confusions.join(" ")) }
        ),
    )
}

// 5 -------------------------------------------------------------------------

fn criterion_5() -> Outcome {
    let n_frames = 120;
    let spec = WindowSpec::default();
    let roi = RoiMatrix::new(
        n_frames,
        RoiConfig::custom([(RoiGroup::Cortical, 1)]).channels(),
        (0..n_frames).map(|t| t as f64).collect(),
    )
    ?;
    let ramp = HrvSeries((0..n_frames).map(|t| t as f64).collect());
    let windows = build_windows("ramp", &roi, &ramp, &spec)?;
    let ramp_ok = windows.iter().all(|w| w.target == w.input[0] + 9.0);

    let mut rng = rng_from_seed(5);
    let mut formula_mismatch = 0;
    for _ in 0..200 {
        let n = rng.random_range(0..300);
        let window_len = rng.random_range(1..=80);
        let stride = rng.random_range(1..=10);
        let spec = WindowSpec {
            window_len,
            target_offset: rng.random_range(0..window_len),
            stride,
        };
        let enumerated = (0..).map(|i| i * stride).take_while(|s| s + window_len <= n).count();
        if spec.window_count(n) != enumerated {
            formula_mismatch += 1;
        }
    }
    check(
        ramp_ok && formula_mismatch == 0,
        format!(
            "ramp: {} windows, target = start + 9 {}; 200 triples, {formula_mismatch} count mismatches",
            windows.len(),
            if ramp_ok { "everywhere" } else { "VIOLATED" }
        ),
    )
}

// 6, 7 ----------------------------------------------------------------------

struct EndToEnd {
    report: CvReport,
    elapsed: Duration,
    identical: bool,
}

fn simulate_and_triage(cfg: &ExperimentConfig, dir: &Path) -> anyhow::Result<PathBuf> {
    cmd_simulate(cfg, dir)?;
    let qc = cmd_qc(&dir.join("manifest.csv"), &cfg.qc, dir)?;
    Ok(qc.kept_manifest)
}

fn end_to_end() -> anyhow::Result<EndToEnd> {
    let cfg = acceptance_config();
    let tmp = tempfile::tempdir()?;
    let started = Instant::now();
    let manifest = simulate_and_triage(&cfg, tmp.path())?;
    let report = cmd_train_cv(&cfg, &manifest, &tmp.path().join("cv"))?;
    let elapsed = started.elapsed();

    // rerun from scratch with the same master seed
    let again = tmp.path().join("rerun");
    let manifest = simulate_and_triage(&cfg, &again)?;
    cmd_train_cv(&cfg, &manifest, &again.join("cv"))?;
    let a = std::fs::read(tmp.path().join("cv").join(REPORT_FILE))?;
    let b = std::fs::read(again.join("cv").join(REPORT_FILE))?;
    Ok(EndToEnd {
        report,
        elapsed,
        identical: a == b,
    })
}

fn criterion_6(run: &anyhow::Result<EndToEnd>) -> Outcome {
    let run = run.as_ref().map_err(|e| anyhow!("{e:#}"))?;
    let means = run.report.mean_across_scans.as_ref().context("no held-out scans")?;
    let r = means.pearson_r.context("mean r undefined")?;
    let minutes = run.elapsed.as_secs_f64() / 60.0;
    check(
        r >= 0.6 && minutes <= 15.0 && run.identical && run.report.complete,
        format!(
            "{} scans, k={}, {} channels: mean r {r:.3}, MAE {:.4} s, {minutes:.1} min on {} threads, rerun report {}",
            run.report.n_scans,
            run.report.k,
            run.report.n_channels,
            means.mae,
            rayon::current_num_threads(),
            if run.identical { "byte-identical" } else { "DIFFERS" }
        ),
    )
}

fn criterion_7(run: &anyhow::Result<EndToEnd>) -> Outcome {
    let run = run.as_ref().map_err(|e| anyhow!("{e:#}"))?;
    let evals = run.report.evaluations();
    let (std, r): (Vec<f64>, Vec<f64>) = evals.iter().filter_map(|e| e.pearson_r.map(|r| (e.hrv_std, r))).unzip();
    let rho = spearman(&std, &r)?.context("spearman undefined")?;
    let lo = std.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = std.iter().cloned().fold(0.0, f64::max);
    check(
        rho > 0.0,
        format!("spearman(hrv_std, r) = {rho:.3} over {} scans, hrv_std {lo:.4}..{hi:.4} s", r.len()),
    )
}

// 8 -------------------------------------------------------------------------

fn criterion_8() -> Outcome {
    // four ten-fold cross-validations on the criterion-6 corpus
    let cfg = acceptance_config();
    let tmp = tempfile::tempdir()?;
    let manifest = simulate_and_triage(&cfg, tmp.path())?;
    let res = cmd_compare_rois(&cfg, &manifest, &tmp.path().join("compare"))?;
    let wm = res.output.wm_effect.as_ref().context("no DynamicPlusWM/DynamicOnly pair")?;
    let test = wm.test.as_ref().context("paired test not reported")?;
    let means: Vec<String> = res
        .output
        .comparison
        .summary
        .iter()
        .map(|(k, m)| format!("{k} {:.3}", m[&Metric::PearsonR].mean))
        .collect();
    check(
        wm.mean_r_with_wm >= wm.mean_r_without_wm,
        format!(
            "mean r with WM {:.3} vs without {:.3}, Wilcoxon p = {:.4} ({})",
            wm.mean_r_with_wm,
            wm.mean_r_without_wm,
            test.p_value,
            means.join(", ")
        ),
    )
}

// 9 -------------------------------------------------------------------------

fn average_ranks(v: &[f64]) -> Vec<f64> {
    v.iter()
        .map(|&x| {
            let below = v.iter().filter(|&&y| y < x).count() as f64;
            let equal = v.iter().filter(|&&y| y == x).count() as f64;
            below + (equal + 1.0) / 2.0
        })
        .collect()
}

fn enumerated_p(d: &[f64]) -> f64 {
    let d: Vec<f64> = d.iter().copied().filter(|v| *v != 0.0).collect();
    if d.is_empty() {
        return 1.0;
    }
    let ranks = average_ranks(&d.iter().map(|v| v.abs()).collect::<Vec<_>>());
    let w: f64 = d.iter().zip(&ranks).filter(|(x, _)| **x > 0.0).map(|(_, r)| r).sum();
    let total = 1u64 << d.len();
    let (mut lo, mut hi) = (0u64, 0u64);
    for mask in 0..total {
        let s: f64 = (0..d.len()).filter(|i| mask >> i & 1 == 1).map(|i| ranks[i]).sum();
        lo += (s <= w + 1e-9) as u64;
        hi += (s >= w - 1e-9) as u64;
    }
    (2.0 * lo.min(hi) as f64 / total as f64).min(1.0)
}

fn criterion_9() -> Outcome {
    let mut rng = rng_from_seed(9);
    let mut worst = 0.0f64;
    for case in 0..200 {
        let n = rng.random_range(6..=12);
        let a: Vec<f64> = (0..n).map(|_| rng.random_range(0..8) as f64 * 0.5).collect();
        let b: Vec<f64> = if case % 2 == 0 {
            (0..n).map(|_| rng.random_range(0..8) as f64 * 0.5).collect()
        } else {
            (0..n).map(|_| normal(&mut rng)).collect()
        };
        let d: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x - y).collect();
        let got = paired_test(&a, &b)?;
        worst = worst.max((got.p_value - enumerated_p(&d)).abs());
    }
    let mut shift_ok = true;
    for n in 6..=12usize {
        let b: Vec<f64> = (0..n).map(|_| normal(&mut rng)).collect();
        let a: Vec<f64> = b.iter().map(|v| v + 0.5).collect();
        let t = paired_test(&a, &b)?;
        shift_ok &= t.method == TestMethod::Exact && (t.p_value - 2.0 / (1u64 << n) as f64).abs() < 1e-15;
    }
    check(
        worst < 1e-12 && shift_ok,
        format!("200 cases, max |p - enumerated| {worst:.1e}; shifted pairs give 2/2^n for n = 6..12: {shift_ok}"),
    )
}

// 10 ------------------------------------------------------------------------

fn criterion_10() -> Outcome {
    let ids: Vec<String> = (0..352).map(|i| format!("scan_{i:03}")).collect();
    let fa = assign_folds(&ids, 10, 10)?;
    let mut sizes = fa.sizes();
    sizes.sort_unstable();
    let mut seen = BTreeSet::new();
    let mut overlap = 0;
    for f in 0..10 {
        for id in fa.test_ids(f) {
            overlap += !seen.insert(id.to_string()) as usize;
        }
    }
    let partition_ok = sizes == [35, 35, 35, 35, 35, 35, 35, 35, 36, 36] && overlap == 0 && seen.len() == 352;

    // normalizer of every fold with the test scans' contents replaced
    let mut cfg = acceptance_config();
    cfg.k = 5;
    let scans: Vec<ScanData> = (0..15)
        .map(|i| {
            let mut rng = rng_from_seed(100 + i);
            let c = 3;
            let n = 90;
            let channels = RoiConfig::custom([(RoiGroup::Cortical, c)]).channels();
            ScanData {
                scan_id: format!("scan_{i:02}"),
                subject_id: format!("sub_{i:02}"),
                roi: RoiMatrix::new(n, channels, (0..n * c).map(|_| normal(&mut rng)).collect()).unwrap(),
                hrv: HrvSeries((0..n).map(|_| 0.05 + 0.01 * normal(&mut rng)).collect()),
            }
        })
        .collect();
    let fa = fold_assignment(&cfg, &scans)?;
    let mut identical = true;
    for fold in 0..cfg.k {
        let test: BTreeSet<&str> = fa.test_ids(fold).into_iter().collect();
        let altered: Vec<ScanData> = scans
            .iter()
            .map(|s| {
                let mut s = s.clone();
                if test.contains(s.scan_id.as_str()) {
                    let scaled: Vec<f64> = s.roi.values().iter().map(|v| 1e3 * v + 7.0).collect();
                    s.roi = RoiMatrix::new(s.roi.n_frames(), s.roi.channels().to_vec(), scaled).unwrap();
                    s.hrv = HrvSeries(s.hrv.values().iter().map(|v| 10.0 * v).collect());
                }
                s
            })
            .collect();
        let plan = |data: &[ScanData]| -> anyhow::Result<Vec<u8>> {
            let by_id: BTreeMap<&str, &ScanData> = data.iter().map(|s| (s.scan_id.as_str(), s)).collect();
            let p = plan_fold(&cfg, &fa, &by_id, fold)?;
            Ok(serde_json::to_vec(&p.normalizer)?)
        };
        let without: Vec<ScanData> = scans.iter().filter(|s| !test.contains(s.scan_id.as_str())).cloned().collect();
        let reference = plan(&scans)?;
        identical &= reference == plan(&altered)? && reference == plan(&without)?;
    }
    check(
        partition_ok && identical,
        format!(
            "352 ids: sizes {:?}, {overlap} overlaps, {} covered; normalizer bytes independent of test scans: {identical}",
            sizes,
            seen.len()
        ),
    )
}

fn main() {
    let only: Option<BTreeSet<u32>> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|s| s.split(',').filter_map(|t| t.trim().parse().ok()).collect());
    let wanted = |n: u32| only.as_ref().is_none_or(|o| o.contains(&n));

    let mut failed = 0;
    let mut report = |n: u32, outcome: Outcome| {
        let (pass, detail) = outcome.unwrap_or_else(|e| (false, format!("error: {e:#}")));
        failed += !pass as usize;
        println!("acceptance {n:>2}: {}  {detail}", if pass { "PASS" } else { "FAIL" });
    };
    let cheap: [(u32, fn() -> Outcome); 7] = [
        (1, criterion_1),
        (2, criterion_2),
        (3, criterion_3),
        (4, criterion_4),
        (5, criterion_5),
        (9, criterion_9),
        (10, criterion_10),
    ];
    for (n, f) in cheap {
        if wanted(n) {
            report(n, f());
        }
    }
    if wanted(6) || wanted(7) {
        let run = end_to_end();
        if wanted(6) {
            report(6, criterion_6(&run));
        }
        if wanted(7) {
            report(7, criterion_7(&run));
        }
    }
    if wanted(8) {
        report(8, criterion_8());
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
