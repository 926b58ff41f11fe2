//! Sliding-window samples, normalisation and scan-level fold assignment.
//!
//! A window of `window_len` frames starting at frame `s` is paired with the
//! HRV value at frame `s + target_offset`. The defaults (65 frames, offset
//! 9) put the target at the tenth frame of the window, so the input carries
//! 9 frames of past and 55 frames of future BOLD context.
//!
//! Windows borrow their rows from the ROI matrix (rows are contiguous in the
//! row-major layout), so building windows costs no copies.

use std::borrow::Cow;
use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::io::{HrvSeries, RoiMatrix};
use crate::rng::rng_from_seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(default)]
pub struct WindowSpec {
    pub window_len: usize,
    pub target_offset: usize,
    pub stride: usize,
}

impl Default for WindowSpec {
    fn default() -> Self {
        Self {
            window_len: 65,
            target_offset: 9,
            stride: 1,
        }
    }
}

impl WindowSpec {
    pub fn validate(&self) -> Result<()> {
        if self.window_len == 0 || self.target_offset >= self.window_len {
            return Err(Error::Invalid(format!(
                "target_offset {} must lie in [0, window_len {})",
                self.target_offset, self.window_len
            )));
        }
        if self.stride == 0 {
            return Err(Error::Invalid("stride must be at least 1".into()));
        }
        Ok(())
    }

    /// `floor((n_frames - window_len) / stride) + 1`, or 0 when too short.
    pub fn window_count(&self, n_frames: usize) -> usize {
        if n_frames < self.window_len {
            0
        } else {
            (n_frames - self.window_len) / self.stride + 1
        }
    }

    /// Frames that receive a prediction: `target_offset + w * stride`.
    pub fn target_frames(&self, n_frames: usize) -> impl Iterator<Item = usize> + '_ {
        (0..self.window_count(n_frames)).map(move |w| w * self.stride + self.target_offset)
    }

    /// Short stable digest used to key window caches.
    pub fn hash_hex(&self) -> String {
        let mut h = Sha256::new();
        h.update(format!("{}/{}/{}", self.window_len, self.target_offset, self.stride));
        h.finalize().iter().take(8).map(|b| format!("{b:02x}")).collect()
    }
}

/// One `[window_len x n_channels]` input slab (time-major) and its target.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowSample<'a> {
    pub scan_id: Cow<'a, str>,
    pub target_frame: usize,
    pub n_channels: usize,
    pub input: Cow<'a, [f64]>,
    pub target: f64,
}

impl WindowSample<'_> {
    pub fn window_len(&self) -> usize {
        self.input.len() / self.n_channels.max(1)
    }

    pub fn into_owned(self) -> WindowSample<'static> {
        WindowSample {
            scan_id: Cow::Owned(self.scan_id.into_owned()),
            target_frame: self.target_frame,
            n_channels: self.n_channels,
            input: Cow::Owned(self.input.into_owned()),
            target: self.target,
        }
    }
}

/// Builds every window of a scan. Returns an empty list (and logs) when the
/// scan is shorter than one window.
pub fn build_windows<'a>(scan_id: &'a str, roi: &'a RoiMatrix, hrv: &HrvSeries, spec: &WindowSpec) -> Result<Vec<WindowSample<'a>>> {
    spec.validate()?;
    if roi.n_frames() != hrv.len() {
        return Err(Error::Shape(format!(
            "scan {scan_id}: roi has {} frames but hrv has {}",
            roi.n_frames(),
            hrv.len()
        )));
    }
    let count = spec.window_count(roi.n_frames());
    if count == 0 {
        log::info!(
            "scan {scan_id}: {} frames is shorter than one {}-frame window",
            roi.n_frames(),
            spec.window_len
        );
    }
    Ok((0..count)
        .map(|w| {
            let start = w * spec.stride;
            let target_frame = start + spec.target_offset;
            WindowSample {
                scan_id: Cow::Borrowed(scan_id),
                target_frame,
                n_channels: roi.n_channels(),
                input: Cow::Borrowed(roi.rows(start, spec.window_len)),
                target: hrv.values()[target_frame],
            }
        })
        .collect())
}

/// Per-channel and target z-scoring statistics fitted on training data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub channel_mean: Vec<f64>,
    pub channel_std: Vec<f64>,
    pub target_mean: f64,
    pub target_std: f64,
}

// Spread indistinguishable from rounding noise on values of this size.
fn negligible(sd: f64, mean: f64) -> bool {
    !(sd.is_finite() && sd > 1e-12 * mean.abs().max(f64::MIN_POSITIVE))
}

/// Fits channel statistics pooled over every time step of every training
/// window, and target statistics over the training targets. Zero-variance
/// channels get std 1 with a warning.
pub fn fit_normalizer(samples: &[WindowSample<'_>]) -> Result<Normalizer> {
    if samples.len() < 2 {
        return Err(Error::Invalid(format!(
            "need at least 2 samples to fit a normalizer, got {}",
            samples.len()
        )));
    }
    let c = samples[0].n_channels;
    if samples.iter().any(|s| s.n_channels != c || s.input.len() % c.max(1) != 0) {
        return Err(Error::Shape("samples disagree on channel count".into()));
    }
    let mut count = 0usize;
    let mut sum = vec![0.0; c];
    for s in samples {
        for row in s.input.chunks_exact(c) {
            for (acc, v) in sum.iter_mut().zip(row) {
                *acc += v;
            }
            count += 1;
        }
    }
    let mean: Vec<f64> = sum.iter().map(|s| s / count as f64).collect();
    let mut sq = vec![0.0; c];
    for s in samples {
        for row in s.input.chunks_exact(c) {
            for ((acc, v), m) in sq.iter_mut().zip(row).zip(&mean) {
                *acc += (v - m) * (v - m);
            }
        }
    }
    let std: Vec<f64> = sq
        .iter()
        .enumerate()
        .map(|(ch, s)| {
            let sd = (s / count as f64).sqrt();
            if !negligible(sd, mean[ch]) {
                sd
            } else {
                log::warn!("channel {ch} has zero variance in the training pool; using std 1");
                1.0
            }
        })
        .collect();

    let n = samples.len() as f64;
    let target_mean = samples.iter().map(|s| s.target).sum::<f64>() / n;
    let target_var = samples.iter().map(|s| (s.target - target_mean).powi(2)).sum::<f64>() / n;
    let target_std = if !negligible(target_var.sqrt(), target_mean) {
        target_var.sqrt()
    } else {
        log::warn!("training targets have zero variance; using std 1");
        1.0
    };
    Ok(Normalizer {
        channel_mean: mean,
        channel_std: std,
        target_mean,
        target_std,
    })
}

impl Normalizer {
    pub fn identity(n_channels: usize) -> Self {
        Self {
            channel_mean: vec![0.0; n_channels],
            channel_std: vec![1.0; n_channels],
            target_mean: 0.0,
            target_std: 1.0,
        }
    }

    pub fn n_channels(&self) -> usize {
        self.channel_mean.len()
    }

    fn check(&self, n_channels: usize) -> Result<()> {
        if n_channels != self.n_channels() {
            return Err(Error::Shape(format!(
                "normalizer fitted on {} channels, got {n_channels}",
                self.n_channels()
            )));
        }
        Ok(())
    }

    fn transform_rows(&self, data: &[f64]) -> Vec<f64> {
        let c = self.n_channels();
        let mut out = Vec::with_capacity(data.len());
        for row in data.chunks_exact(c) {
            out.extend(
                row.iter()
                    .zip(&self.channel_mean)
                    .zip(&self.channel_std)
                    .map(|((v, m), s)| (v - m) / s),
            );
        }
        out
    }

    pub fn target(&self, y: f64) -> f64 {
        (y - self.target_mean) / self.target_std
    }

    pub fn inverse_target(&self, z: f64) -> f64 {
        z * self.target_std + self.target_mean
    }

    /// Standardises a whole ROI matrix. Windows built from the result equal
    /// the standardised windows of the original.
    pub fn apply_matrix(&self, roi: &RoiMatrix) -> Result<RoiMatrix> {
        self.check(roi.n_channels())?;
        RoiMatrix::new(roi.n_frames(), roi.channels().to_vec(), self.transform_rows(roi.values()))
    }

    pub fn apply_hrv(&self, hrv: &HrvSeries) -> Vec<f64> {
        hrv.values().iter().map(|&y| self.target(y)).collect()
    }
}

/// Standardises inputs and targets with the fitted statistics.
pub fn apply_normalizer<'a>(n: &Normalizer, samples: &[WindowSample<'a>]) -> Result<Vec<WindowSample<'a>>> {
    samples
        .iter()
        .map(|s| {
            n.check(s.n_channels)?;
            Ok(WindowSample {
                scan_id: s.scan_id.clone(),
                target_frame: s.target_frame,
                n_channels: s.n_channels,
                input: Cow::Owned(n.transform_rows(&s.input)),
                target: n.target(s.target),
            })
        })
        .collect()
}

/// Undoes [`apply_normalizer`].
pub fn invert_normalizer<'a>(n: &Normalizer, samples: &[WindowSample<'a>]) -> Result<Vec<WindowSample<'a>>> {
    samples
        .iter()
        .map(|s| {
            n.check(s.n_channels)?;
            let c = s.n_channels;
            let mut input = Vec::with_capacity(s.input.len());
            for row in s.input.chunks_exact(c) {
                input.extend(
                    row.iter()
                        .zip(&n.channel_mean)
                        .zip(&n.channel_std)
                        .map(|((v, m), sd)| v * sd + m),
                );
            }
            Ok(WindowSample {
                scan_id: s.scan_id.clone(),
                target_frame: s.target_frame,
                n_channels: c,
                input: Cow::Owned(input),
                target: n.inverse_target(s.target),
            })
        })
        .collect()
}

/// Scan-to-fold map.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldAssignment {
    pub k: usize,
    pub folds: BTreeMap<String, usize>,
}

impl FoldAssignment {
    pub fn fold_of(&self, scan_id: &str) -> Option<usize> {
        self.folds.get(scan_id).copied()
    }

    pub fn test_ids(&self, fold: usize) -> Vec<&str> {
        self.folds
            .iter()
            .filter(|(_, &f)| f == fold)
            .map(|(s, _)| s.as_str())
            .collect()
    }

    pub fn train_ids(&self, fold: usize) -> Vec<&str> {
        self.folds
            .iter()
            .filter(|(_, &f)| f != fold)
            .map(|(s, _)| s.as_str())
            .collect()
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &f in self.folds.values() {
            sizes[f] += 1;
        }
        sizes
    }
}

fn check_fold_count(k: usize, n: usize) -> Result<()> {
    if k < 2 {
        return Err(Error::Invalid(format!("k = {k} leaves no held-out data; need k >= 2")));
    }
    if k > n {
        return Err(Error::Invalid(format!("k = {k} exceeds the number of scans ({n})")));
    }
    Ok(())
}

/// Shuffles the (sorted) scan ids with `seed` and deals them round-robin into
/// `k` folds.
pub fn assign_folds<S: AsRef<str>>(scan_ids: &[S], k: usize, seed: u64) -> Result<FoldAssignment> {
    let unique: BTreeSet<&str> = scan_ids.iter().map(AsRef::as_ref).collect();
    if unique.len() != scan_ids.len() {
        return Err(Error::Invalid("duplicate scan ids".into()));
    }
    check_fold_count(k, unique.len())?;
    let mut ids: Vec<&str> = unique.into_iter().collect();
    ids.shuffle(&mut rng_from_seed(seed));
    let folds = ids
        .into_iter()
        .enumerate()
        .map(|(i, id)| (id.to_string(), i % k))
        .collect();
    Ok(FoldAssignment { k, folds })
}

/// Fold assignment that keeps all scans of one group (e.g. subject)
/// together. Groups are shuffled and each goes to the currently smallest
/// fold.
pub fn assign_folds_grouped<S: AsRef<str>, G: AsRef<str>>(items: &[(S, G)], k: usize, seed: u64) -> Result<FoldAssignment> {
    let mut groups: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    let mut seen = BTreeSet::new();
    for (scan, group) in items {
        if !seen.insert(scan.as_ref()) {
            return Err(Error::Invalid("duplicate scan ids".into()));
        }
        groups.entry(group.as_ref()).or_default().push(scan.as_ref());
    }
    check_fold_count(k, groups.len())?;
    let mut order: Vec<&str> = groups.keys().copied().collect();
    order.shuffle(&mut rng_from_seed(seed));
    let mut sizes = vec![0usize; k];
    let mut folds = BTreeMap::new();
    for g in order {
        let target = (0..k).min_by_key(|&f| (sizes[f], f)).unwrap();
        for scan in &groups[g] {
            folds.insert(scan.to_string(), target);
        }
        sizes[target] += groups[g].len();
    }
    Ok(FoldAssignment { k, folds })
}

const CACHE_MAGIC: &[u8; 8] = b"HRVWIN01";

/// On-disk cache of a scan's materialised windows, keyed by scan id and
/// window-spec digest. A content digest of the source data guards against
/// stale entries.
#[derive(Debug, Clone)]
pub struct WindowCache {
    root: PathBuf,
}

pub fn content_digest(roi: &RoiMatrix, hrv: &HrvSeries) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update((roi.n_frames() as u64).to_le_bytes());
    for ch in roi.channels() {
        h.update(ch.name.as_bytes());
        h.update([0u8]);
    }
    for v in roi.values().iter().chain(hrv.values()) {
        h.update(v.to_le_bytes());
    }
    h.finalize().into()
}

impl WindowCache {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn path_for(&self, scan_id: &str, spec: &WindowSpec) -> PathBuf {
        self.root.join(format!("{scan_id}-{}.win", spec.hash_hex()))
    }

    pub fn store(&self, samples: &[WindowSample<'_>], spec: &WindowSpec, digest: &[u8; 32]) -> Result<PathBuf> {
        let scan_id = samples
            .first()
            .map(|s| s.scan_id.to_string())
            .ok_or_else(|| Error::Invalid("nothing to cache".into()))?;
        fs::create_dir_all(&self.root).map_err(|e| Error::io(&self.root, e))?;
        let path = self.path_for(&scan_id, spec);
        let c = samples[0].n_channels;
        let mut buf = Vec::new();
        buf.extend_from_slice(CACHE_MAGIC);
        buf.extend_from_slice(digest);
        for v in [spec.window_len, spec.target_offset, spec.stride, samples.len(), c] {
            buf.extend_from_slice(&(v as u64).to_le_bytes());
        }
        for s in samples {
            buf.extend_from_slice(&(s.target_frame as u64).to_le_bytes());
            buf.extend_from_slice(&s.target.to_le_bytes());
            for v in s.input.iter() {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        let mut f = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
        f.write_all(&buf).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }

    /// Cached windows, or `None` when absent or built from different data.
    pub fn load(&self, scan_id: &str, spec: &WindowSpec, digest: &[u8; 32]) -> Result<Option<Vec<WindowSample<'static>>>> {
        let path = self.path_for(scan_id, spec);
        if !path.exists() {
            return Ok(None);
        }
        let mut bytes = Vec::new();
        fs::File::open(&path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| Error::io(&path, e))?;
        let bad = || Error::format(path.display().to_string(), "truncated or corrupt window cache");
        let mut cur = bytes.as_slice();
        let mut take = |n: usize| -> Result<&[u8]> {
            if cur.len() < n {
                return Err(bad());
            }
            let (head, tail) = cur.split_at(n);
            cur = tail;
            Ok(head)
        };
        if take(8)? != CACHE_MAGIC {
            return Err(bad());
        }
        if take(32)? != digest {
            return Ok(None);
        }
        let mut u = || -> Result<usize> { Ok(u64::from_le_bytes(take(8)?.try_into().unwrap()) as usize) };
        let header = [u()?, u()?, u()?, u()?, u()?];
        if header[..3] != [spec.window_len, spec.target_offset, spec.stride] {
            return Ok(None);
        }
        let (count, c) = (header[3], header[4]);
        let mut out = Vec::with_capacity(count);
        for _ in 0..count {
            let target_frame = u64::from_le_bytes(take(8)?.try_into().unwrap()) as usize;
            let target = f64::from_le_bytes(take(8)?.try_into().unwrap());
            let raw = take(8 * spec.window_len * c)?;
            let input = raw
                .chunks_exact(8)
                .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
                .collect();
            out.push(WindowSample {
                scan_id: Cow::Owned(scan_id.to_string()),
                target_frame,
                n_channels: c,
                input: Cow::Owned(input),
                target,
            });
        }
        Ok(Some(out))
    }

    pub fn root(&self) -> &Path {
        &self.root
    }
}
