//! PPG quality triage, spike correction, beat detection and HRV extraction.
//!
//! Signals fall into one of seven quality classes. Only `Clean` and
//! `CorrectableSpikes` (after [`correct_spikes`]) are usable as training
//! targets; the rest are discarded.

pub mod filter;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{HrvSeries, PpgSignal};
use crate::simulator::{hrv_from_beats, BeatTimes};
use crate::stats;

pub use filter::{bandpass_zero_phase, estimate_period, PeriodEstimate};

/// Cardiac pass band in Hz (30 to 180 bpm).
pub const CARDIAC_BAND_HZ: (f64, f64) = (0.5, 3.0);
/// Beat-period search range in seconds.
pub const PERIOD_RANGE_S: (f64, f64) = (60.0 / 180.0, 60.0 / 30.0);
/// Minimum autocorrelation peak for a signal to count as rhythmic.
pub const MIN_RHYTHM_STRENGTH: f64 = 0.2;

// Pulse template: asymmetric Gaussian, unit peak.
pub const PULSE_PEAK_S: f64 = 0.15;
const PULSE_RISE_SIGMA_S: f64 = 0.05;
const PULSE_DECAY_SIGMA_S: f64 = 0.15;
pub const PULSE_SUPPORT_S: f64 = PULSE_PEAK_S + 4.0 * PULSE_DECAY_SIGMA_S;

/// One pulse as a function of time since the beat, zero outside its support.
pub fn pulse_template(tau: f64) -> f64 {
    if !(0.0..=PULSE_SUPPORT_S).contains(&tau) {
        return 0.0;
    }
    let d = tau - PULSE_PEAK_S;
    let sigma = if d < 0.0 {
        PULSE_RISE_SIGMA_S
    } else {
        PULSE_DECAY_SIGMA_S
    };
    (-0.5 * d * d / (sigma * sigma)).exp()
}

/// Robust amplitude (p95 - p5) of a noise-free unit pulse train with the
/// given period.
pub fn template_train_amplitude(period_s: f64, fs: f64) -> f64 {
    let period_s = period_s.max(0.1);
    let n_beats = 12;
    let n = (n_beats as f64 * period_s * fs) as usize;
    let x: Vec<f64> = (0..n)
        .map(|i| {
            let t = i as f64 / fs;
            let phase = t % period_s;
            // contributions of this and the two preceding pulses
            (0..3)
                .map(|k| pulse_template(phase + k as f64 * period_s))
                .sum()
        })
        .collect();
    let s = stats::sorted_copy(&x);
    stats::percentile_sorted(&s, 95.0) - stats::percentile_sorted(&s, 5.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum QualityKind {
    Clean,
    CorrectableSpikes,
    UncorrectableSpikes,
    Clipping,
    Gaps,
    LowAmplitude,
    NoRecording,
}

impl QualityKind {
    pub const ALL: [QualityKind; 7] = [
        QualityKind::Clean,
        QualityKind::CorrectableSpikes,
        QualityKind::UncorrectableSpikes,
        QualityKind::Clipping,
        QualityKind::Gaps,
        QualityKind::LowAmplitude,
        QualityKind::NoRecording,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            QualityKind::Clean => "Clean",
            QualityKind::CorrectableSpikes => "CorrectableSpikes",
            QualityKind::UncorrectableSpikes => "UncorrectableSpikes",
            QualityKind::Clipping => "Clipping",
            QualityKind::Gaps => "Gaps",
            QualityKind::LowAmplitude => "LowAmplitude",
            QualityKind::NoRecording => "NoRecording",
        }
    }

    /// Usable for training (after spike correction where needed).
    pub fn is_usable(self) -> bool {
        matches!(self, QualityKind::Clean | QualityKind::CorrectableSpikes)
    }
}

impl fmt::Display for QualityKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for QualityKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        QualityKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::Invalid(format!("unknown quality class {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QcDiagnostics {
    pub spike_fraction: f64,
    pub clip_fraction: f64,
    pub gap_fraction: f64,
    pub amplitude_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QualityClass {
    pub kind: QualityKind,
    pub diagnostics: QcDiagnostics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QcThresholds {
    pub spike_z: f64,
    pub max_correctable_spike_fraction: f64,
    pub clip_fraction: f64,
    pub gap_fraction: f64,
    pub min_amplitude_ratio: f64,
    pub zero_fraction_for_norec: f64,
    /// Constant runs shorter than this (seconds) do not count as gaps.
    pub min_gap_run_s: f64,
    /// Peak amplitude of a nominal pulse in recording units.
    pub reference_amplitude: f64,
}

impl Default for QcThresholds {
    fn default() -> Self {
        Self {
            spike_z: 6.0,
            max_correctable_spike_fraction: 0.02,
            clip_fraction: 0.05,
            gap_fraction: 0.05,
            min_amplitude_ratio: 0.1,
            zero_fraction_for_norec: 0.98,
            min_gap_run_s: 1.0,
            reference_amplitude: 1.0,
        }
    }
}

impl QcThresholds {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("spike_z", self.spike_z),
            ("min_amplitude_ratio", self.min_amplitude_ratio),
            ("min_gap_run_s", self.min_gap_run_s),
            ("reference_amplitude", self.reference_amplitude),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Invalid(format!("{name} must be positive, got {v}")));
            }
        }
        let fractions = [
            ("max_correctable_spike_fraction", self.max_correctable_spike_fraction),
            ("clip_fraction", self.clip_fraction),
            ("gap_fraction", self.gap_fraction),
            ("zero_fraction_for_norec", self.zero_fraction_for_norec),
        ];
        for (name, v) in fractions {
            if !(v > 0.0 && v < 1.0) {
                return Err(Error::Invalid(format!("{name} must lie in (0, 1), got {v}")));
            }
        }
        Ok(())
    }
}

/// Runs of exactly repeated consecutive values, as (start, len), len >= 2.
fn constant_runs(x: &[f64]) -> Vec<(usize, usize)> {
    let mut runs = Vec::new();
    let mut start = 0;
    for i in 1..=x.len() {
        if i == x.len() || x[i] != x[start] {
            if i - start >= 2 {
                runs.push((start, i - start));
            }
            start = i;
        }
    }
    runs
}

/// Per-sample spike flags: robust z (median/MAD) of the deviation of each
/// sample from the midpoint of its neighbours.
fn spike_mask(x: &[f64], spike_z: f64) -> Vec<bool> {
    let n = x.len();
    if n < 3 {
        return vec![false; n];
    }
    let mut e = Vec::with_capacity(n);
    e.push(x[0] - x[1]);
    for i in 1..n - 1 {
        e.push(x[i] - 0.5 * (x[i - 1] + x[i + 1]));
    }
    e.push(x[n - 1] - x[n - 2]);
    let center = stats::median(&e);
    let mut scale = 1.4826 * stats::mad(&e, center);
    if scale <= 0.0 {
        // more than half the residuals identical; fall back to mean deviation
        scale = 1.2533 * e.iter().map(|v| (v - center).abs()).sum::<f64>() / n as f64;
    }
    if scale <= 0.0 {
        return vec![false; n];
    }
    e.iter().map(|v| ((v - center) / scale).abs() >= spike_z).collect()
}

/// Classifies a PPG trace. First matching rule wins:
/// NoRecording, Gaps, Clipping, LowAmplitude, then the spike classes.
pub fn classify_quality(ppg: &PpgSignal, th: &QcThresholds) -> QualityClass {
    let x = &ppg.values;
    let n = x.len();
    if n == 0 {
        return QualityClass {
            kind: QualityKind::NoRecording,
            diagnostics: QcDiagnostics {
                spike_fraction: 1.0,
                clip_fraction: 1.0,
                gap_fraction: 1.0,
                amplitude_ratio: 1.0,
            },
        };
    }
    let fs = ppg.sample_rate_hz;
    let nf = n as f64;
    let mut diag = QcDiagnostics {
        spike_fraction: 0.0,
        clip_fraction: 0.0,
        gap_fraction: 0.0,
        amplitude_ratio: 0.0,
    };
    let verdict = |kind, diagnostics| QualityClass { kind, diagnostics };

    let runs = constant_runs(x);
    let zero_frac = x.iter().filter(|&&v| v == 0.0).count() as f64 / nf;
    let flat_frac = runs.iter().map(|r| r.1).sum::<usize>() as f64 / nf;
    if n == 1 || zero_frac.max(flat_frac) >= th.zero_fraction_for_norec {
        diag.gap_fraction = zero_frac.max(flat_frac);
        return verdict(QualityKind::NoRecording, diag);
    }

    let min_run = ((th.min_gap_run_s * fs).ceil() as usize).max(2);
    let gap_runs: Vec<usize> = runs.iter().map(|r| r.1).filter(|&len| len >= min_run).collect();
    let longest = gap_runs.iter().copied().max().unwrap_or(0);
    diag.gap_fraction = gap_runs.iter().sum::<usize>() as f64 / nf;
    if longest as f64 > th.gap_fraction * nf || diag.gap_fraction >= th.gap_fraction {
        return verdict(QualityKind::Gaps, diag);
    }

    let (lo, hi) = x
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let tol = 1e-3 * (hi - lo);
    let near_rail = x.iter().filter(|&&v| v >= hi - tol || v <= lo + tol).count();
    diag.clip_fraction = near_rail as f64 / nf;
    if diag.clip_fraction >= th.clip_fraction {
        return verdict(QualityKind::Clipping, diag);
    }

    let sorted = stats::sorted_copy(x);
    let robust_amp = stats::percentile_sorted(&sorted, 95.0) - stats::percentile_sorted(&sorted, 5.0);
    let filtered = bandpass_zero_phase(x, fs, CARDIAC_BAND_HZ.0, CARDIAC_BAND_HZ.1);
    let period = estimate_period(&filtered, fs, PERIOD_RANGE_S.0, PERIOD_RANGE_S.1)
        .filter(|p| p.strength >= MIN_RHYTHM_STRENGTH)
        .map_or(0.8, |p| p.period_s);
    let expected = th.reference_amplitude * template_train_amplitude(period, fs);
    diag.amplitude_ratio = robust_amp / expected;
    if diag.amplitude_ratio < th.min_amplitude_ratio {
        return verdict(QualityKind::LowAmplitude, diag);
    }

    let spikes = spike_mask(x, th.spike_z).iter().filter(|&&s| s).count();
    diag.spike_fraction = spikes as f64 / nf;
    let kind = if spikes == 0 {
        QualityKind::Clean
    } else if diag.spike_fraction <= th.max_correctable_spike_fraction {
        QualityKind::CorrectableSpikes
    } else {
        QualityKind::UncorrectableSpikes
    };
    verdict(kind, diag)
}

const SPIKE_DILATION: usize = 2;

fn interpolate_flagged(x: &mut [f64], mask: &[bool]) {
    let n = x.len();
    let mut i = 0;
    while i < n {
        if !mask[i] {
            i += 1;
            continue;
        }
        let start = i;
        while i < n && mask[i] {
            i += 1;
        }
        let left = start.checked_sub(1);
        let right = (i < n).then_some(i);
        match (left, right) {
            (Some(l), Some(r)) => {
                let (a, b) = (x[l], x[r]);
                let span = (r - l) as f64;
                for k in start..i {
                    x[k] = a + (b - a) * (k - l) as f64 / span;
                }
            }
            (Some(l), None) => {
                let v = x[l];
                x[start..i].fill(v);
            }
            (None, Some(r)) => {
                let v = x[r];
                x[start..i].fill(v);
            }
            (None, None) => {}
        }
    }
}

/// Replaces spike samples (dilated by two samples each side) by linear
/// interpolation between the nearest unflagged neighbours; runs touching the
/// ends hold the nearest valid value. Repeats until no sample is flagged, so
/// the result is a fixed point.
pub fn correct_spikes(ppg: &PpgSignal, th: &QcThresholds) -> PpgSignal {
    let mut out = ppg.clone();
    let n = out.values.len();
    for _ in 0..16 {
        let raw = spike_mask(&out.values, th.spike_z);
        if !raw.iter().any(|&s| s) {
            break;
        }
        let mut mask = vec![false; n];
        for (i, _) in raw.iter().enumerate().filter(|(_, &s)| s) {
            let lo = i.saturating_sub(SPIKE_DILATION);
            let hi = (i + SPIKE_DILATION).min(n - 1);
            mask[lo..=hi].fill(true);
        }
        interpolate_flagged(&mut out.values, &mask);
    }
    out
}

/// Finds pulse peaks and returns their times in seconds.
///
/// Band-passes to the cardiac band, estimates the beat period from the
/// autocorrelation, then keeps local maxima with prominence at least 0.3 of
/// the robust amplitude and separated by at least 0.6 periods (taller peaks
/// win). Each peak is then re-timed by correlating the raw trace with the
/// pulse template (sub-sample, parabolic), which removes the shift the
/// band-pass introduces on asymmetric pulses.
pub fn detect_peaks(ppg: &PpgSignal) -> Result<BeatTimes> {
    ppg.validate()?;
    let fs = ppg.sample_rate_hz;
    let y = bandpass_zero_phase(&ppg.values, fs, CARDIAC_BAND_HZ.0, CARDIAC_BAND_HZ.1);
    let est = estimate_period(&y, fs, PERIOD_RANGE_S.0, PERIOD_RANGE_S.1)
        .ok_or(Error::NoCardiacRhythm(0.0))?;
    if est.strength < MIN_RHYTHM_STRENGTH {
        return Err(Error::NoCardiacRhythm(est.strength));
    }
    let period_samples = est.period_s * fs;
    let sorted = stats::sorted_copy(&y);
    let robust_amp = stats::percentile_sorted(&sorted, 95.0) - stats::percentile_sorted(&sorted, 5.0);
    let min_prominence = 0.3 * robust_amp;
    let min_distance = (0.6 * period_samples).max(1.0);
    let wlen = (2.0 * period_samples).ceil() as usize;

    let n = y.len();
    let mut candidates: Vec<usize> = (1..n.saturating_sub(1))
        .filter(|&i| y[i] > y[i - 1] && y[i] >= y[i + 1])
        .filter(|&i| prominence(&y, i, wlen) >= min_prominence)
        .collect();

    // greedy suppression, tallest first
    let mut order: Vec<usize> = (0..candidates.len()).collect();
    order.sort_by(|&a, &b| y[candidates[b]].total_cmp(&y[candidates[a]]).then(a.cmp(&b)));
    let mut keep = vec![true; candidates.len()];
    for &k in &order {
        if !keep[k] {
            continue;
        }
        let p = candidates[k] as f64;
        for j in (0..k).rev() {
            if p - (candidates[j] as f64) >= min_distance {
                break;
            }
            keep[j] = false;
        }
        for j in k + 1..candidates.len() {
            if (candidates[j] as f64) - p >= min_distance {
                break;
            }
            keep[j] = false;
        }
    }
    let mut idx = 0;
    candidates.retain(|_| {
        let k = keep[idx];
        idx += 1;
        k
    });

    let search = ((0.25 * period_samples).round() as usize).max(1);
    let template = zero_mean_template(fs);
    let mut times: Vec<f64> = candidates
        .iter()
        .map(|&i| refine_peak(&ppg.values, &template, i, search, fs))
        .collect();
    times.dedup_by(|b, a| *b - *a <= 0.5 / fs);
    BeatTimes::new(times)
}

/// Pulse template sampled at `fs` with its mean removed, so correlating
/// against it ignores baseline offsets.
fn zero_mean_template(fs: f64) -> Vec<f64> {
    let len = (PULSE_SUPPORT_S * fs).ceil() as usize + 1;
    let mut p: Vec<f64> = (0..len).map(|k| pulse_template(k as f64 / fs)).collect();
    let m = stats::mean(&p);
    p.iter_mut().for_each(|v| *v -= m);
    p
}

/// Refines a band-pass peak estimate by correlating the raw trace with the
/// pulse template around it. Returns the template-aligned pulse peak time.
fn refine_peak(x: &[f64], template: &[f64], peak: usize, search: usize, fs: f64) -> f64 {
    let offset = (PULSE_PEAK_S * fs).round() as i64;
    let guess = peak as i64 - offset;
    let score = |onset: i64| -> f64 {
        template
            .iter()
            .enumerate()
            .map(|(k, &p)| {
                let i = onset + k as i64;
                if i >= 0 && (i as usize) < x.len() {
                    p * x[i as usize]
                } else {
                    0.0
                }
            })
            .sum()
    };
    let lo = guess - search as i64;
    let hi = guess + search as i64;
    let scores: Vec<f64> = (lo - 1..=hi + 1).map(score).collect();
    let best = (1..scores.len() - 1)
        .max_by(|&a, &b| scores[a].total_cmp(&scores[b]).then(b.cmp(&a)))
        .unwrap_or(1);
    let (a, b, c) = (scores[best - 1], scores[best], scores[best + 1]);
    let denom = a - 2.0 * b + c;
    let delta = if denom < 0.0 { 0.5 * (a - c) / denom } else { 0.0 };
    let onset = (lo - 1 + best as i64) as f64 + delta.clamp(-0.5, 0.5);
    onset / fs + PULSE_PEAK_S
}

/// Peak prominence restricted to `wlen` samples either side.
fn prominence(y: &[f64], peak: usize, wlen: usize) -> f64 {
    let h = y[peak];
    let lo_bound = peak.saturating_sub(wlen);
    let hi_bound = (peak + wlen).min(y.len() - 1);
    let mut left_min = h;
    for i in (lo_bound..peak).rev() {
        if y[i] > h {
            break;
        }
        left_min = left_min.min(y[i]);
    }
    let mut right_min = h;
    for &v in &y[peak + 1..=hi_bound] {
        if v > h {
            break;
        }
        right_min = right_min.min(v);
    }
    h - left_min.max(right_min)
}

/// Frame-aligned HRV from a measured PPG trace; same definition as the
/// simulator's ground truth.
pub fn extract_hrv(ppg: &PpgSignal, tr_seconds: f64, n_frames: usize, window_s: f64) -> Result<HrvSeries> {
    let beats = detect_peaks(ppg)?;
    hrv_from_beats(&beats, tr_seconds, n_frames, window_s)
}
