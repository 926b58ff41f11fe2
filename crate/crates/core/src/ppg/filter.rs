//! Zero-phase first-order filtering and autocorrelation period estimation.

/// First-order IIR section `y[n] = b0 x[n] + b1 x[n-1] - a1 y[n-1]`.
#[derive(Debug, Clone, Copy)]
struct FirstOrder {
    b0: f64,
    b1: f64,
    a1: f64,
}

impl FirstOrder {
    // Bilinear transform with frequency prewarping.
    fn lowpass(cutoff_hz: f64, fs: f64) -> Self {
        let k = (std::f64::consts::PI * cutoff_hz / fs).tan();
        let norm = 1.0 / (1.0 + k);
        Self {
            b0: k * norm,
            b1: k * norm,
            a1: (k - 1.0) * norm,
        }
    }

    fn highpass(cutoff_hz: f64, fs: f64) -> Self {
        let k = (std::f64::consts::PI * cutoff_hz / fs).tan();
        let norm = 1.0 / (1.0 + k);
        Self {
            b0: norm,
            b1: -norm,
            a1: (k - 1.0) * norm,
        }
    }

    /// In-place pass, state initialised to the steady state of a constant
    /// input equal to the first sample.
    fn run(&self, x: &mut [f64]) {
        let Some(&first) = x.first() else { return };
        let dc_gain = (self.b0 + self.b1) / (1.0 + self.a1);
        let mut x_prev = first;
        let mut y_prev = dc_gain * first;
        for v in x.iter_mut() {
            let y = self.b0 * *v + self.b1 * x_prev - self.a1 * y_prev;
            x_prev = *v;
            y_prev = y;
            *v = y;
        }
    }

    fn run_zero_phase(&self, x: &mut [f64]) {
        self.run(x);
        x.reverse();
        self.run(x);
        x.reverse();
    }
}

/// Zero-phase band-pass built from a forward-backward first-order high-pass
/// followed by a forward-backward first-order low-pass.
///
/// The input is extended by odd reflection at both ends (up to `pad_s`
/// seconds) to suppress start-up transients.
pub fn bandpass_zero_phase(x: &[f64], fs: f64, low_hz: f64, high_hz: f64) -> Vec<f64> {
    let n = x.len();
    if n < 2 {
        return vec![0.0; n];
    }
    let pad = ((2.0 * fs) as usize).min(n - 1);
    let mut ext = Vec::with_capacity(n + 2 * pad);
    let (a, b) = (x[0], x[n - 1]);
    ext.extend((1..=pad).rev().map(|i| 2.0 * a - x[i]));
    ext.extend_from_slice(x);
    ext.extend((1..=pad).map(|i| 2.0 * b - x[n - 1 - i]));

    FirstOrder::highpass(low_hz, fs).run_zero_phase(&mut ext);
    FirstOrder::lowpass(high_hz, fs).run_zero_phase(&mut ext);
    ext[pad..pad + n].to_vec()
}

/// Outcome of searching the autocorrelation for a dominant period.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PeriodEstimate {
    pub period_s: f64,
    /// Normalised autocorrelation at the chosen lag.
    pub strength: f64,
}

/// Estimates the dominant period of a band-passed signal from its biased,
/// normalised autocorrelation over lags `[min_period_s, max_period_s]`.
///
/// The signal is decimated to roughly 50 Hz first. The chosen lag is the
/// strongest local maximum, replaced by the shortest local maximum reaching
/// 60% of it so that a multiple of the true period is not returned (an
/// alternating rhythm correlates best at twice its mean period). Returns
/// the best candidate even when weak; callers threshold `strength`.
const SHORTER_PEAK_RATIO: f64 = 0.6;

pub fn estimate_period(y: &[f64], fs: f64, min_period_s: f64, max_period_s: f64) -> Option<PeriodEstimate> {
    let step = ((fs / 50.0).floor() as usize).max(1);
    let d: Vec<f64> = y.iter().step_by(step).copied().collect();
    let dfs = fs / step as f64;
    let n = d.len();
    let lag_min = ((min_period_s * dfs).floor() as usize).max(1);
    let lag_max = ((max_period_s * dfs).ceil() as usize).min(n.saturating_sub(2));
    if lag_max <= lag_min + 1 {
        return None;
    }
    let mean = d.iter().sum::<f64>() / n as f64;
    let c: Vec<f64> = d.iter().map(|v| v - mean).collect();
    let energy: f64 = c.iter().map(|v| v * v).sum();
    if energy <= 0.0 {
        return None;
    }
    let ac: Vec<f64> = (lag_min - 1..=lag_max + 1)
        .map(|lag| c[..n - lag].iter().zip(&c[lag..]).map(|(a, b)| a * b).sum::<f64>() / energy)
        .collect();
    // ac[i] is the value at lag `lag_min - 1 + i`
    let peaks: Vec<usize> = (1..ac.len() - 1)
        .filter(|&i| ac[i] > ac[i - 1] && ac[i] >= ac[i + 1])
        .collect();
    let &best = peaks.iter().max_by(|&&a, &&b| ac[a].total_cmp(&ac[b]))?;
    let chosen = peaks
        .iter()
        .copied()
        .find(|&i| ac[i] >= SHORTER_PEAK_RATIO * ac[best])
        .unwrap_or(best);
    // parabolic refinement of the lag
    let (ym, y0, yp) = (ac[chosen - 1], ac[chosen], ac[chosen + 1]);
    let denom = ym - 2.0 * y0 + yp;
    let delta = if denom < 0.0 { 0.5 * (ym - yp) / denom } else { 0.0 };
    let lag = (lag_min - 1 + chosen) as f64 + delta.clamp(-0.5, 0.5);
    Some(PeriodEstimate {
        period_s: lag / dfs,
        strength: y0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn passband_sine_keeps_phase_and_amplitude() {
        let fs = 200.0;
        let x: Vec<f64> = (0..4000).map(|i| (2.0 * PI * 1.2 * i as f64 / fs).sin()).collect();
        let y = bandpass_zero_phase(&x, fs, 0.5, 3.0);
        // interior: zero phase means the maxima stay put
        let interior = 1000..3000;
        let argmax_x = interior.clone().max_by(|&a, &b| x[a].total_cmp(&x[b])).unwrap();
        let argmax_y = interior.clone().max_by(|&a, &b| y[a].total_cmp(&y[b])).unwrap();
        assert!((argmax_x as i64 - argmax_y as i64).abs() <= 1);
        let amp = y[interior].iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(amp > 0.5 && amp < 1.0, "amp {amp}");
    }

    #[test]
    fn removes_dc() {
        let y = bandpass_zero_phase(&vec![5.0; 2000], 100.0, 0.5, 3.0);
        assert!(y.iter().all(|v| v.abs() < 1e-9));
    }

    #[test]
    fn period_of_sine() {
        let fs = 400.0;
        let x: Vec<f64> = (0..40000).map(|i| (2.0 * PI * i as f64 / fs / 0.8).sin()).collect();
        let est = estimate_period(&x, fs, 0.33, 2.0).unwrap();
        assert!((est.period_s - 0.8).abs() < 0.01, "{est:?}");
        assert!(est.strength > 0.9);
    }
}
