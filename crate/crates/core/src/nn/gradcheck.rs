//! Central-difference verification of analytic gradients.

use super::{Model, ModelParams};
use crate::error::Result;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    pub checked: usize,
    pub max_rel_error: f64,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

/// `|a - n| / max(1e-8, |a| + |n|)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-8)
}

/// Compares the analytic batch-MSE gradient with central differences of
/// step `h` on each parameter in `indices`.
///
/// The loss difference is accumulated per sample as
/// `(p+ - p-)(p+ + p- - 2y)`, which equals `e+^2 - e-^2` exactly in real
/// arithmetic but avoids subtracting two rounded O(1) losses.
pub fn check_gradients(model: &Model, params: &ModelParams, batch: &[(&[f64], f64)], h: f64, indices: impl IntoIterator<Item = usize>) -> Result<GradCheck> {
    let (_, grad) = model.loss_and_grad(params, batch)?;
    let mut probe = params.clone();
    let mut report = GradCheck {
        checked: 0,
        max_rel_error: 0.0,
        worst_index: 0,
        analytic: 0.0,
        numeric: 0.0,
    };
    for i in indices {
        let orig = probe.values[i];
        probe.values[i] = orig + h;
        let up = predictions(model, &probe, batch)?;
        probe.values[i] = orig - h;
        let down = predictions(model, &probe, batch)?;
        probe.values[i] = orig;
        let diff: f64 = up
            .iter()
            .zip(&down)
            .zip(batch)
            .map(|((pu, pd), (_, y))| (pu - pd) * (pu + pd - 2.0 * y))
            .sum();
        let numeric = diff / (batch.len() as f64 * 2.0 * h);
        let err = relative_error(grad[i], numeric);
        report.checked += 1;
        if err > report.max_rel_error || report.checked == 1 {
            report.max_rel_error = err;
            report.worst_index = i;
            report.analytic = grad[i];
            report.numeric = numeric;
        }
    }
    Ok(report)
}

fn predictions(model: &Model, params: &ModelParams, batch: &[(&[f64], f64)]) -> Result<Vec<f64>> {
    batch.iter().map(|(x, _)| model.predict(params, x)).collect()
}
