//! Mini-batch training with early stopping, and per-scan inference.

use std::time::Instant;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{init_params, opt_step, Model, ModelConfig, ModelParams, OptimState};
use crate::dataset::{build_windows, Normalizer, WindowSample, WindowSpec};
use crate::error::{Error, Result};
use crate::io::{HrvSeries, RoiMatrix};
use crate::rng::{derive_seed, rng_from_seed};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainHyper {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    /// Minimum validation-loss improvement that resets the patience counter.
    pub min_delta: f64,
}

impl Default for TrainHyper {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            batch_size: 64,
            max_epochs: 100,
            patience: 10,
            min_delta: 1e-5,
        }
    }
}

impl TrainHyper {
    pub fn validate(&self) -> Result<()> {
        let ok = self.learning_rate > 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.epsilon > 0.0
            && self.batch_size > 0
            && self.max_epochs > 0
            && self.min_delta >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Invalid(format!("invalid training hyper-parameters: {self:?}")))
        }
    }

    fn optimizer(&self, n_params: usize) -> OptimState {
        OptimState {
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.epsilon,
            ..OptimState::new(n_params, self.learning_rate)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochLog>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub stopped_early: bool,
    pub seed: u64,
    pub init_seed: u64,
    pub hyper: TrainHyper,
    pub wall_time_s: f64,
}

fn as_batch<'s>(samples: &'s [WindowSample<'_>]) -> Vec<(&'s [f64], f64)> {
    samples.iter().map(|s| (&*s.input, s.target)).collect()
}

/// Fits a fresh model (initialised from `cfg.seed`) on standardised
/// samples. Batches are reshuffled every epoch from `seed`. Returns the
/// parameters with the lowest validation loss.
pub fn train(cfg: &ModelConfig, hyper: &TrainHyper, train: &[WindowSample<'_>], val: &[WindowSample<'_>], seed: u64) -> Result<(ModelParams, TrainReport)> {
    hyper.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(Error::Invalid(format!(
            "training needs non-empty splits (train {}, validation {})",
            train.len(),
            val.len()
        )));
    }
    let model = Model::new(cfg.clone())?;
    let started = Instant::now();
    let train_set = as_batch(train);
    let val_set = as_batch(val);
    let mut params = init_params(cfg)?;
    let mut opt = hyper.optimizer(params.len());
    let mut best = (params.clone(), f64::INFINITY, 0usize);
    let mut since_best = 0;
    let mut epochs = Vec::new();
    let mut stopped_early = false;
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    for epoch in 1..=hyper.max_epochs {
        order.shuffle(&mut rng_from_seed(derive_seed(seed, "epoch", epoch as u64)));
        let mut weighted = 0.0;
        for idx in order.chunks(hyper.batch_size) {
            let batch: Vec<(&[f64], f64)> = idx.iter().map(|&i| train_set[i]).collect();
            let (loss, grad) = model.loss_and_grad(&params, &batch).map_err(|e| match e {
                Error::Divergence(msg) => Error::Divergence(format!("epoch {epoch}: {msg}")),
                other => other,
            })?;
            weighted += loss * batch.len() as f64;
            opt_step(&mut params, &grad, &mut opt);
        }
        let train_loss = weighted / train_set.len() as f64;
        let val_loss = model.loss(&params, &val_set)?;
        if !val_loss.is_finite() || !params.all_finite() {
            return Err(Error::Divergence(format!(
                "epoch {epoch}: validation loss {val_loss}"
            )));
        }
        log::debug!("epoch {epoch}: train {train_loss:.6} val {val_loss:.6}");
        epochs.push(EpochLog {
            epoch,
            train_loss,
            val_loss,
        });
        if val_loss < best.1 - hyper.min_delta {
            best = (params.clone(), val_loss, epoch);
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= hyper.patience {
                stopped_early = true;
                break;
            }
        }
    }
    let (best_params, best_val_loss, best_epoch) = best;
    let report = TrainReport {
        epochs,
        best_epoch,
        best_val_loss,
        stopped_early,
        seed,
        init_seed: cfg.seed,
        hyper: hyper.clone(),
        wall_time_s: started.elapsed().as_secs_f64(),
    };
    Ok((best_params, report))
}

/// Predicts HRV (seconds) for every target frame of a scan; frames outside
/// the predictable range are `None`.
pub fn predict_scan(params: &ModelParams, cfg: &ModelConfig, roi: &RoiMatrix, spec: &WindowSpec, normalizer: &Normalizer) -> Result<Vec<Option<f64>>> {
    spec.validate()?;
    if spec.window_len != cfg.window_len {
        return Err(Error::Shape(format!(
            "window length {} does not match the model's {}",
            spec.window_len, cfg.window_len
        )));
    }
    if roi.n_frames() < spec.window_len {
        return Err(Error::Shape(format!(
            "scan has {} frames, fewer than one {}-frame window",
            roi.n_frames(),
            spec.window_len
        )));
    }
    let model = Model::new(cfg.clone())?;
    let z = normalizer.apply_matrix(roi)?;
    let dummy = HrvSeries(vec![0.0; roi.n_frames()]);
    let windows = build_windows("", &z, &dummy, spec)?;
    let preds: Vec<Result<(usize, f64)>> = windows
        .par_iter()
        .map(|w| Ok((w.target_frame, normalizer.inverse_target(model.predict(params, &w.input)?))))
        .collect();
    let mut out = vec![None; roi.n_frames()];
    for p in preds {
        let (frame, y) = p?;
        out[frame] = Some(y);
    }
    Ok(out)
}
