//! Synthetic paired BOLD / PPG / HRV scans.
//!
//! Heart rate follows a smooth random trajectory (three sinusoids plus
//! per-beat Gaussian jitter, clipped to 40-180 bpm); beats come from
//! integrate-and-fire over it. HRV is the windowed standard deviation of
//! inter-beat intervals on the frame grid. BOLD channels are the z-scored HRV
//! convolved with a double-gamma response kernel, lagged per ROI group, mixed
//! with slow drift and white noise. Everything is a pure function of the
//! configuration and its seeds.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{HrvSeries, PpgSignal, RoiConfig, RoiGroup, RoiMatrix, ScanRecord, DEFAULT_TR_SECONDS};
use crate::ppg::{pulse_template, PULSE_SUPPORT_S};
use crate::rng::{derive_seed, normal, rng_from_seed};
use crate::stats;

pub const HR_CLIP_BPM: (f64, f64) = (40.0, 180.0);
/// HRV window used for ground truth and measured targets.
pub const DEFAULT_HRV_WINDOW_S: f64 = 6.0;
pub const DEFAULT_PPG_RATE_HZ: f64 = 400.0;
/// PPG noise floor as a fraction of the unit pulse peak.
pub const PPG_NOISE_STD: f64 = 0.02;
/// Response-kernel support in seconds.
pub const KERNEL_SUPPORT_S: f64 = 42.0;

const INTEGRATION_STEP_S: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CardiacSimConfig {
    pub duration_frames: usize,
    pub tr_seconds: f64,
    pub mean_hr_bpm: f64,
    /// Peak modulation of the smooth HR component, bpm.
    pub hr_modulation_depth: f64,
    pub hr_modulation_timescale_s: f64,
    /// Standard deviation of the per-beat HR jitter, bpm.
    pub hr_jitter_bpm: f64,
    pub ppg_sample_rate_hz: f64,
    pub seed: u64,
}

impl Default for CardiacSimConfig {
    fn default() -> Self {
        Self {
            duration_frames: 400,
            tr_seconds: DEFAULT_TR_SECONDS,
            mean_hr_bpm: 80.0,
            hr_modulation_depth: 8.0,
            hr_modulation_timescale_s: 30.0,
            hr_jitter_bpm: 0.5,
            ppg_sample_rate_hz: DEFAULT_PPG_RATE_HZ,
            seed: 0,
        }
    }
}

impl CardiacSimConfig {
    pub fn duration_s(&self) -> f64 {
        self.duration_frames as f64 * self.tr_seconds
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tr_seconds > 0.0) {
            return Err(Error::Invalid(format!("tr_seconds must be positive, got {}", self.tr_seconds)));
        }
        if !(50.0..=150.0).contains(&self.mean_hr_bpm) {
            return Err(Error::Invalid(format!(
                "mean_hr_bpm must lie in [50, 150], got {}",
                self.mean_hr_bpm
            )));
        }
        if !(self.hr_modulation_depth >= 0.0) || !(self.hr_jitter_bpm >= 0.0) {
            return Err(Error::Invalid("modulation depth and jitter must be non-negative".into()));
        }
        if !(self.hr_modulation_timescale_s > 0.0) {
            return Err(Error::Invalid("hr_modulation_timescale_s must be positive".into()));
        }
        if !(self.ppg_sample_rate_hz >= 50.0) {
            return Err(Error::Invalid(format!(
                "ppg sample rate must be at least 50 Hz, got {}",
                self.ppg_sample_rate_hz
            )));
        }
        Ok(())
    }
}

/// Strictly increasing beat times in seconds from scan start.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeatTimes(Vec<f64>);

impl BeatTimes {
    pub fn new(times: Vec<f64>) -> Result<Self> {
        if times.iter().any(|t| !t.is_finite()) {
            return Err(Error::Invalid("non-finite beat time".into()));
        }
        if times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Invalid("beat times must be strictly increasing".into()));
        }
        Ok(Self(times))
    }

    pub fn times(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn intervals(&self) -> Vec<f64> {
        self.0.windows(2).map(|w| w[1] - w[0]).collect()
    }

    pub fn shifted(&self, dt: f64) -> Self {
        Self(self.0.iter().map(|t| t + dt).collect())
    }
}

/// Smooth heart-rate trajectory without jitter.
struct HrTrajectory {
    mean: f64,
    components: [(f64, f64, f64); 3], // amplitude bpm, period s, phase
}

impl HrTrajectory {
    fn sample(cfg: &CardiacSimConfig, rng: &mut impl Rng) -> Self {
        let scales = [0.7, 1.0, 1.45];
        let weights: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.5..1.0));
        let total: f64 = weights.iter().sum();
        let components = std::array::from_fn(|i| {
            let period = cfg.hr_modulation_timescale_s * scales[i] * rng.random_range(0.85..1.15);
            let phase = rng.random_range(0.0..2.0 * PI);
            (cfg.hr_modulation_depth * weights[i] / total, period, phase)
        });
        Self {
            mean: cfg.mean_hr_bpm,
            components,
        }
    }

    fn at(&self, t: f64) -> f64 {
        self.mean
            + self
                .components
                .iter()
                .map(|&(a, p, ph)| a * (2.0 * PI * t / p + ph).sin())
                .sum::<f64>()
    }
}

/// Beat times by integrate-and-fire over the instantaneous heart rate.
///
/// The first beat fires at t = 0; a beat fires whenever the integrated phase
/// (in beats) crosses the next integer. Jitter is redrawn at every beat and
/// held until the next one.
pub fn gen_beat_times(cfg: &CardiacSimConfig) -> Result<BeatTimes> {
    cfg.validate()?;
    if cfg.duration_frames == 0 {
        return BeatTimes::new(Vec::new());
    }
    let duration = cfg.duration_s();
    let mut rng = rng_from_seed(derive_seed(cfg.seed, "cardiac", 0));
    let traj = HrTrajectory::sample(cfg, &mut rng);
    let mut jitter = cfg.hr_jitter_bpm * normal(&mut rng);

    let steps = (duration / INTEGRATION_STEP_S).round() as usize;
    let dt = duration / steps as f64;
    let mut beats = vec![0.0];
    let mut phase = 0.0;
    let mut next = 1.0;
    const EPS: f64 = 1e-9;
    for k in 0..steps {
        let t0 = k as f64 * dt;
        let hr = (traj.at(t0 + 0.5 * dt) + jitter).clamp(HR_CLIP_BPM.0, HR_CLIP_BPM.1);
        let rate = hr / 60.0;
        let new_phase = phase + rate * dt;
        // at most one crossing per step since rate * dt << 1
        if new_phase >= next - EPS {
            let frac = ((next - phase) / (new_phase - phase)).clamp(0.0, 1.0);
            let t = (t0 + frac * dt).min(duration);
            if t > *beats.last().unwrap() {
                beats.push(t);
            }
            next += 1.0;
            jitter = cfg.hr_jitter_bpm * normal(&mut rng);
        }
        phase = new_phase;
    }
    BeatTimes::new(beats)
}

/// Frame-aligned HRV: population standard deviation of the inter-beat
/// intervals whose midpoints fall within `window_s / 2` of each frame time
/// `k * tr`. Frames with fewer than two qualifying intervals copy the nearest
/// computable frame (earlier frame on ties).
pub fn hrv_from_beats(beats: &BeatTimes, tr_seconds: f64, n_frames: usize, window_s: f64) -> Result<HrvSeries> {
    if !(window_s > 0.0) || !(tr_seconds > 0.0) {
        return Err(Error::Invalid("window_s and tr_seconds must be positive".into()));
    }
    if n_frames == 0 {
        return Err(Error::Invalid("n_frames must be at least 1".into()));
    }
    if beats.len() < 3 {
        return Err(Error::InsufficientBeats(beats.len()));
    }
    let t = beats.times();
    let ibis: Vec<f64> = beats.intervals();
    let mids: Vec<f64> = t.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect();

    let half = 0.5 * window_s;
    let mut values: Vec<Option<f64>> = Vec::with_capacity(n_frames);
    let (mut lo, mut hi) = (0usize, 0usize);
    for k in 0..n_frames {
        let c = k as f64 * tr_seconds;
        while lo < mids.len() && mids[lo] < c - half {
            lo += 1;
        }
        hi = hi.max(lo);
        while hi < mids.len() && mids[hi] <= c + half {
            hi += 1;
        }
        values.push((hi - lo >= 2).then(|| stats::pop_std(&ibis[lo..hi])));
    }

    let computable: Vec<usize> = (0..n_frames).filter(|&k| values[k].is_some()).collect();
    if computable.is_empty() {
        return Err(Error::Invalid(format!(
            "no frame has two beat intervals within a {window_s} s window"
        )));
    }
    let mut out = Vec::with_capacity(n_frames);
    let mut j = 0;
    for k in 0..n_frames {
        while j + 1 < computable.len() && computable[j + 1] <= k {
            j += 1;
        }
        let src = if computable[j] >= k || j + 1 == computable.len() {
            computable[j]
        } else {
            let (a, b) = (computable[j], computable[j + 1]);
            if k - a <= b - k {
                a
            } else {
                b
            }
        };
        out.push(values[src].unwrap());
    }
    Ok(HrvSeries(out))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum DefectKind {
    None,
    CorrectableSpikes,
    UncorrectableSpikes,
    Clipping,
    Gaps,
    LowAmplitude,
    NoRecording,
}

impl DefectKind {
    pub const ALL: [DefectKind; 7] = [
        DefectKind::None,
        DefectKind::CorrectableSpikes,
        DefectKind::UncorrectableSpikes,
        DefectKind::Clipping,
        DefectKind::Gaps,
        DefectKind::LowAmplitude,
        DefectKind::NoRecording,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            DefectKind::None => "None",
            DefectKind::CorrectableSpikes => "CorrectableSpikes",
            DefectKind::UncorrectableSpikes => "UncorrectableSpikes",
            DefectKind::Clipping => "Clipping",
            DefectKind::Gaps => "Gaps",
            DefectKind::LowAmplitude => "LowAmplitude",
            DefectKind::NoRecording => "NoRecording",
        }
    }

    /// The quality class a correct triage should assign.
    pub fn expected_quality(self) -> crate::ppg::QualityKind {
        use crate::ppg::QualityKind as Q;
        match self {
            DefectKind::None => Q::Clean,
            DefectKind::CorrectableSpikes => Q::CorrectableSpikes,
            DefectKind::UncorrectableSpikes => Q::UncorrectableSpikes,
            DefectKind::Clipping => Q::Clipping,
            DefectKind::Gaps => Q::Gaps,
            DefectKind::LowAmplitude => Q::LowAmplitude,
            DefectKind::NoRecording => Q::NoRecording,
        }
    }
}

impl fmt::Display for DefectKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DefectKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        DefectKind::ALL
            .into_iter()
            .find(|k| k.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Invalid(format!("unknown defect kind {s:?}")))
    }
}

/// A PPG defect and its intensity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum DefectSpec {
    None,
    /// Isolated single-sample spikes, height in multiples of the signal MAD.
    CorrectableSpikes { count: usize, height_mad: f64 },
    /// Spikes covering `fraction` of the samples.
    UncorrectableSpikes { fraction: f64, height_mad: f64 },
    /// Top `fraction` of samples flattened at the rail.
    Clipping { fraction: f64 },
    /// `fraction` of the trace zeroed in `segments` disjoint stretches.
    Gaps { fraction: f64, segments: usize },
    LowAmplitude { scale: f64 },
    NoRecording,
}

impl DefectSpec {
    /// Representative intensity for each kind.
    pub fn default_for(kind: DefectKind) -> Self {
        match kind {
            DefectKind::None => DefectSpec::None,
            DefectKind::CorrectableSpikes => DefectSpec::CorrectableSpikes {
                count: 5,
                height_mad: 20.0,
            },
            DefectKind::UncorrectableSpikes => DefectSpec::UncorrectableSpikes {
                fraction: 0.03,
                height_mad: 20.0,
            },
            DefectKind::Clipping => DefectSpec::Clipping { fraction: 0.15 },
            DefectKind::Gaps => DefectSpec::Gaps {
                fraction: 0.2,
                segments: 2,
            },
            DefectKind::LowAmplitude => DefectSpec::LowAmplitude { scale: 0.02 },
            DefectKind::NoRecording => DefectSpec::NoRecording,
        }
    }

    pub fn kind(&self) -> DefectKind {
        match self {
            DefectSpec::None => DefectKind::None,
            DefectSpec::CorrectableSpikes { .. } => DefectKind::CorrectableSpikes,
            DefectSpec::UncorrectableSpikes { .. } => DefectKind::UncorrectableSpikes,
            DefectSpec::Clipping { .. } => DefectKind::Clipping,
            DefectSpec::Gaps { .. } => DefectKind::Gaps,
            DefectSpec::LowAmplitude { .. } => DefectKind::LowAmplitude,
            DefectSpec::NoRecording => DefectKind::NoRecording,
        }
    }
}

/// Noise-free pulse train: one unit template per beat.
pub fn clean_pulse_train(beats: &BeatTimes, sample_rate_hz: f64, n: usize) -> Vec<f64> {
    let mut x = vec![0.0; n];
    for &b in beats.times() {
        let first = ((b * sample_rate_hz).ceil().max(0.0)) as usize;
        let last = (((b + PULSE_SUPPORT_S) * sample_rate_hz).floor().max(0.0) as usize).min(n.saturating_sub(1));
        for (i, v) in x.iter_mut().enumerate().take(last + 1).skip(first) {
            *v += pulse_template(i as f64 / sample_rate_hz - b);
        }
    }
    x
}

/// Synthetic PPG: pulse template per beat, 2% Gaussian noise, then the
/// requested defect.
pub fn synth_ppg(beats: &BeatTimes, sample_rate_hz: f64, duration_s: f64, defect: &DefectSpec, seed: u64) -> Result<PpgSignal> {
    if !(sample_rate_hz >= 50.0) {
        return Err(Error::Invalid(format!(
            "ppg sample rate must be at least 50 Hz, got {sample_rate_hz}"
        )));
    }
    let n = (duration_s * sample_rate_hz).round().max(0.0) as usize;
    let mut x = clean_pulse_train(beats, sample_rate_hz, n);
    let mut rng = rng_from_seed(derive_seed(seed, "ppg-noise", 0));
    for v in x.iter_mut() {
        *v += PPG_NOISE_STD * normal(&mut rng);
    }
    apply_defect(&mut x, defect, derive_seed(seed, "ppg-defect", 0));
    Ok(PpgSignal::new(sample_rate_hz, x))
}

fn apply_defect(x: &mut [f64], defect: &DefectSpec, seed: u64) {
    let n = x.len();
    if n == 0 {
        return;
    }
    let mut rng = rng_from_seed(seed);
    let spike_unit = || {
        let m = stats::median(x);
        stats::mad(x, m).max(1e-6)
    };
    match *defect {
        DefectSpec::None => {}
        DefectSpec::CorrectableSpikes { count, height_mad } => {
            let h = height_mad * spike_unit();
            // positions spread over equal segments so spikes stay isolated
            let seg = n / count.max(1);
            for k in 0..count.min(n) {
                let lo = k * seg + seg / 4;
                let hi = (k * seg + 3 * seg / 4).max(lo + 1);
                let i = rng.random_range(lo..hi).min(n - 1);
                let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
                x[i] += sign * h;
            }
        }
        DefectSpec::UncorrectableSpikes { fraction, height_mad } => {
            let h = height_mad * spike_unit();
            let count = ((fraction * n as f64).round() as usize).min(n);
            for _ in 0..count {
                let i = rng.random_range(0..n);
                let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
                x[i] += sign * h * rng.random_range(0.5..1.5);
            }
        }
        DefectSpec::Clipping { fraction } => {
            let sorted = stats::sorted_copy(x);
            let rail = stats::percentile_sorted(&sorted, 100.0 * (1.0 - fraction));
            x.iter_mut().for_each(|v| *v = v.min(rail));
        }
        DefectSpec::Gaps { fraction, segments } => {
            let segments = segments.max(1);
            let total = ((fraction * n as f64).round() as usize).min(n);
            let len = total / segments;
            let slot = n / segments;
            for k in 0..segments {
                let slack = slot.saturating_sub(len);
                let start = k * slot + if slack > 0 { rng.random_range(0..slack) } else { 0 };
                let end = (start + len).min(n);
                x[start..end].fill(0.0);
            }
        }
        DefectSpec::LowAmplitude { scale } => x.iter_mut().for_each(|v| *v *= scale),
        DefectSpec::NoRecording => x.fill(0.0),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BoldSimConfig {
    pub roi_config: RoiConfig,
    /// Per-channel signal std over noise std, at unit gain.
    pub snr: f64,
    pub coupling_gain_by_group: BTreeMap<RoiGroup, f64>,
    pub coupling_lag_s_by_group: BTreeMap<RoiGroup, f64>,
    pub drift_amplitude: f64,
    /// Per-channel mixing weights are drawn uniformly from `[-m, m]`.
    pub mixing_spread: f64,
    /// HRV standard deviation (s) at which the coupled signal has unit
    /// variance before the kernel; scans with more variable HRV carry a
    /// proportionally stronger BOLD signal.
    pub hrv_reference_std_s: f64,
    /// Std of a nuisance series shared by all channels of a group, in units
    /// of the per-channel noise std. Groups draw independent series.
    pub shared_noise_by_group: BTreeMap<RoiGroup, f64>,
    pub seed: u64,
}

impl Default for BoldSimConfig {
    fn default() -> Self {
        use RoiGroup::*;
        Self {
            roi_config: crate::io::make_roi_config(crate::io::RoiLabel::DynamicPlusWM),
            snr: 1.0,
            coupling_gain_by_group: [(Cortical, 1.0), (Subcortical, 0.8), (WhiteMatter, 1.0), (Structural, 0.8)]
                .into_iter()
                .collect(),
            coupling_lag_s_by_group: [(Cortical, 3.0), (Subcortical, 3.0), (WhiteMatter, 7.0), (Structural, 4.0)]
                .into_iter()
                .collect(),
            drift_amplitude: 0.3,
            mixing_spread: 0.5,
            hrv_reference_std_s: 0.01,
            shared_noise_by_group: [(Cortical, 0.5), (Subcortical, 0.5), (WhiteMatter, 0.5), (Structural, 0.5)]
                .into_iter()
                .collect(),
            seed: 0,
        }
    }
}

/// Double-gamma response: gamma(5, 1) positive lobe peaking at 4 s minus
/// 0.35 x gamma(13, 1) undershoot peaking at 12 s; zero outside [0, 42] s.
pub fn response_kernel(t: f64) -> f64 {
    if !(0.0..=KERNEL_SUPPORT_S).contains(&t) {
        return 0.0;
    }
    let gamma_pdf = |shape: i32, t: f64| -> f64 {
        let log_fact: f64 = (1..shape).map(|k| (k as f64).ln()).sum();
        if t == 0.0 {
            return 0.0;
        }
        ((shape - 1) as f64 * t.ln() - t - log_fact).exp()
    };
    gamma_pdf(5, t) - 0.35 * gamma_pdf(13, t)
}

/// Kernel sampled on the frame grid, delayed by `lag_s`, scaled to unit
/// energy (sum of squares 1).
pub fn discretize_kernel(tr_seconds: f64, lag_s: f64) -> Vec<f64> {
    let len = ((KERNEL_SUPPORT_S + lag_s) / tr_seconds).floor() as usize + 1;
    let mut k: Vec<f64> = (0..len).map(|j| response_kernel(j as f64 * tr_seconds - lag_s)).collect();
    let energy = k.iter().map(|v| v * v).sum::<f64>().sqrt();
    if energy > 0.0 {
        k.iter_mut().for_each(|v| *v /= energy);
    }
    k
}

/// Causal convolution on the frame grid with zeros before the first frame.
pub fn convolve_causal(x: &[f64], kernel: &[f64]) -> Vec<f64> {
    (0..x.len())
        .map(|t| {
            kernel
                .iter()
                .enumerate()
                .take(t + 1)
                .map(|(j, &k)| k * x[t - j])
                .sum()
        })
        .collect()
}

fn zscore(x: &[f64]) -> Vec<f64> {
    let m = stats::mean(x);
    let s = stats::pop_std(x);
    if s > 0.0 {
        x.iter().map(|v| (v - m) / s).collect()
    } else {
        vec![0.0; x.len()]
    }
}

/// Synthetic BOLD channels driven by the HRV series.
///
/// Channel `i` of group `g`:
/// `gain_g * (1 + m_i) * u_g(t) + shared_g(t) + drift_i(t) + noise_i(t)`
/// where `u_g` is the demeaned HRV divided by `hrv_reference_std_s`,
/// convolved with the unit-energy kernel delayed by `lag_g`. The noise std is
/// `std(r) / snr` with `r` the undelayed response to the z-scored HRV, so
/// `snr` is the per-channel SNR at unit gain for a scan whose HRV std equals
/// the reference. `shared_g` is kernel-filtered white noise common to the
/// group.
pub fn synth_bold(hrv: &HrvSeries, cfg: &BoldSimConfig, tr_seconds: f64) -> Result<RoiMatrix> {
    if !(cfg.snr > 0.0) {
        return Err(Error::Invalid(format!("snr must be positive, got {}", cfg.snr)));
    }
    if !(cfg.hrv_reference_std_s > 0.0) {
        return Err(Error::Invalid("hrv_reference_std_s must be positive".into()));
    }
    if !(tr_seconds > 0.0) {
        return Err(Error::Invalid("tr_seconds must be positive".into()));
    }
    let n = hrv.len();
    let base_kernel = discretize_kernel(tr_seconds, 0.0);
    let reference = convolve_causal(&zscore(hrv.values()), &base_kernel);
    let ref_std = stats::pop_std(&reference);
    let noise_std = if ref_std > 0.0 { ref_std } else { 1.0 } / cfg.snr;
    let mean = stats::mean(hrv.values());
    let drive: Vec<f64> = hrv
        .values()
        .iter()
        .map(|v| (v - mean) / cfg.hrv_reference_std_s)
        .collect();

    let mut responses = BTreeMap::new();
    for (gi, &group) in cfg.roi_config.group_counts.keys().enumerate() {
        let gain = *cfg
            .coupling_gain_by_group
            .get(&group)
            .ok_or_else(|| Error::Invalid(format!("no coupling gain for group {group:?}")))?;
        let lag = *cfg
            .coupling_lag_s_by_group
            .get(&group)
            .ok_or_else(|| Error::Invalid(format!("no coupling lag for group {group:?}")))?;
        if !(lag >= 0.0) {
            return Err(Error::Invalid(format!("negative lag for group {group:?}")));
        }
        let u = convolve_causal(&drive, &discretize_kernel(tr_seconds, lag));
        let shared_scale = cfg.shared_noise_by_group.get(&group).copied().unwrap_or(0.0);
        let shared = if shared_scale > 0.0 {
            let mut rng = rng_from_seed(derive_seed(cfg.seed, "bold-shared", gi as u64));
            let white: Vec<f64> = (0..n).map(|_| normal(&mut rng)).collect();
            zscore(&convolve_causal(&white, &base_kernel))
                .into_iter()
                .map(|v| v * shared_scale * noise_std)
                .collect()
        } else {
            vec![0.0; n]
        };
        responses.insert(group, (gain, u, shared));
    }

    let channels = cfg.roi_config.channels();
    let n_ch = channels.len();
    let mut values = vec![0.0; n * n_ch];
    for (c, ch) in channels.iter().enumerate() {
        let (gain, u, shared) = &responses[&ch.group];
        let mut rng = rng_from_seed(derive_seed(cfg.seed, "bold-channel", c as u64));
        let mix = if cfg.mixing_spread > 0.0 {
            rng.random_range(-cfg.mixing_spread..=cfg.mixing_spread)
        } else {
            0.0
        };
        let weight = gain * (1.0 + mix);
        let drift_period = rng.random_range(100.0..300.0);
        let drift_phase = rng.random_range(0.0..2.0 * PI);
        for t in 0..n {
            let time = t as f64 * tr_seconds;
            let drift = cfg.drift_amplitude * (2.0 * PI * time / drift_period + drift_phase).cos();
            values[t * n_ch + c] = weight * u[t] + shared[t] + drift + noise_std * normal(&mut rng);
        }
    }
    RoiMatrix::new(n, channels, values)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScanIds {
    pub scan_id: String,
    pub subject_id: String,
}

/// One full synthetic scan: beats, ground-truth HRV (6 s window), PPG with
/// the requested defect, and BOLD.
pub fn simulate_scan(cardiac: &CardiacSimConfig, bold: &BoldSimConfig, defect: &DefectSpec, ids: &ScanIds) -> Result<ScanRecord> {
    let beats = gen_beat_times(cardiac)?;
    let hrv = hrv_from_beats(&beats, cardiac.tr_seconds, cardiac.duration_frames, DEFAULT_HRV_WINDOW_S)?;
    let ppg = synth_ppg(
        &beats,
        cardiac.ppg_sample_rate_hz,
        cardiac.duration_s(),
        defect,
        derive_seed(cardiac.seed, "ppg", 0),
    )?;
    let roi = synth_bold(&hrv, bold, cardiac.tr_seconds)?;
    let record = ScanRecord {
        scan_id: ids.scan_id.clone(),
        subject_id: ids.subject_id.clone(),
        tr_seconds: cardiac.tr_seconds,
        roi,
        ppg: Some(ppg),
        hrv: Some(hrv),
    };
    record.validate()?;
    Ok(record)
}
