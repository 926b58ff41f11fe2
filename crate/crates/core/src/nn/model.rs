//! Forward pass with cached activations and exact backpropagation.

use rayon::prelude::*;

use super::{Layout, ModelConfig, ModelParams, Pool};
use crate::error::{Error, Result};

/// Samples per gradient chunk. Chunks are reduced in index order, so the
/// result does not depend on the thread count.
const GRAD_CHUNK: usize = 8;

/// A config with its parameter layout resolved.
#[derive(Debug, Clone)]
pub struct Model {
    cfg: ModelConfig,
    pub(crate) layout: Layout,
}

#[derive(Debug, Clone)]
struct BlockCache {
    /// Post-activation conv output, `[len_conv][filters]`.
    act: Vec<f64>,
    /// Flat index into `act` chosen by each pooled output.
    argmax: Vec<usize>,
    /// Block output, `[len_out][filters]` (equals `act` without pooling).
    out: Vec<f64>,
}

/// Everything backward needs from one forward evaluation.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    blocks: Vec<BlockCache>,
    /// Hidden state entering each step, `[seq_len][H]`.
    h_prev: Vec<f64>,
    z: Vec<f64>,
    r: Vec<f64>,
    n: Vec<f64>,
    h_final: Vec<f64>,
    dense: Vec<f64>,
    pub prediction: f64,
}

impl ForwardCache {
    /// Output of conv block `b`, `[len_out][filters]`.
    pub fn block_output(&self, b: usize) -> &[f64] {
        &self.blocks[b].out
    }

    /// Hidden states after every GRU step.
    pub fn hidden_states(&self) -> impl Iterator<Item = f64> + '_ {
        self.h_prev[self.h_final.len()..].iter().chain(&self.h_final).copied()
    }
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

impl Model {
    pub fn new(cfg: ModelConfig) -> Result<Self> {
        let layout = Layout::new(&cfg)?;
        Ok(Self { cfg, layout })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn param_count(&self) -> usize {
        self.layout.total
    }

    pub fn input_len(&self) -> usize {
        self.cfg.window_len * self.cfg.n_channels
    }

    fn check(&self, params: &ModelParams, input: &[f64]) -> Result<()> {
        if params.len() != self.layout.total {
            return Err(Error::Shape(format!(
                "expected {} parameters, got {}",
                self.layout.total,
                params.len()
            )));
        }
        if input.len() != self.input_len() {
            return Err(Error::Shape(format!(
                "input has {} values, model expects {} x {}",
                input.len(),
                self.cfg.window_len,
                self.cfg.n_channels
            )));
        }
        Ok(())
    }

    pub fn predict(&self, params: &ModelParams, input: &[f64]) -> Result<f64> {
        Ok(self.forward(params, input)?.prediction)
    }

    /// Forward pass over a `[window_len][n_channels]` input.
    pub fn forward(&self, params: &ModelParams, input: &[f64]) -> Result<ForwardCache> {
        self.check(params, input)?;
        let p = &params.values;
        let act = self.cfg.activation;
        let mut blocks: Vec<BlockCache> = Vec::with_capacity(self.layout.conv.len());
        for cl in &self.layout.conv {
            let x: &[f64] = blocks.last().map_or(input, |b| &b.out);
            let w = &p[cl.w.clone()];
            let bias = &p[cl.b.clone()];
            let (cin, k, f) = (cl.in_ch, cl.kernel, cl.filters);
            let pad = (k - 1) / 2;
            let mut a = bias.repeat(cl.len_conv);
            for t in 0..cl.len_conv {
                let centre = t * cl.stride;
                let row = &mut a[t * f..(t + 1) * f];
                for kk in 0..k {
                    let Some(idx) = (centre + kk).checked_sub(pad).filter(|&i| i < cl.len_in) else {
                        continue;
                    };
                    let xrow = &x[idx * cin..(idx + 1) * cin];
                    for (fi, acc) in row.iter_mut().enumerate() {
                        *acc += dot(&w[(fi * k + kk) * cin..(fi * k + kk + 1) * cin], xrow);
                    }
                }
                for v in row.iter_mut() {
                    *v = act.apply(*v);
                }
            }
            let (argmax, out) = match cl.pool {
                Pool::None => (Vec::new(), a.clone()),
                Pool::Max2 => {
                    let mut argmax = Vec::with_capacity(cl.len_out * f);
                    let mut out = Vec::with_capacity(cl.len_out * f);
                    for t in 0..cl.len_out {
                        for fi in 0..f {
                            let i0 = 2 * t * f + fi;
                            let i1 = i0 + f;
                            let best = if a[i1] > a[i0] { i1 } else { i0 };
                            argmax.push(best);
                            out.push(a[best]);
                        }
                    }
                    (argmax, out)
                }
            };
            blocks.push(BlockCache { act: a, argmax, out });
        }

        let l = &self.layout;
        let (h, ni, len) = (l.hidden, l.gru_in, l.seq_len);
        let seq: &[f64] = blocks.last().map_or(input, |b| &b.out);
        let gw = &p[l.gru_w.clone()];
        let gu = &p[l.gru_u.clone()];
        let gb = &p[l.gru_b.clone()];
        let mut state = vec![0.0; h];
        let mut h_prev = Vec::with_capacity(len * h);
        let (mut zs, mut rs, mut ns) = (Vec::with_capacity(len * h), Vec::with_capacity(len * h), Vec::with_capacity(len * h));
        let mut rh = vec![0.0; h];
        let mut z = vec![0.0; h];
        for t in 0..len {
            let x = &seq[t * ni..(t + 1) * ni];
            h_prev.extend_from_slice(&state);
            for j in 0..h {
                let zr = gb[j] + dot(&gw[j * ni..(j + 1) * ni], x) + dot(&gu[j * h..(j + 1) * h], &state);
                let rr = gb[h + j]
                    + dot(&gw[(h + j) * ni..(h + j + 1) * ni], x)
                    + dot(&gu[(h + j) * h..(h + j + 1) * h], &state);
                z[j] = sigmoid(zr);
                let r = sigmoid(rr);
                rs.push(r);
                rh[j] = r * state[j];
            }
            zs.extend_from_slice(&z);
            for j in 0..h {
                let c = gb[2 * h + j]
                    + dot(&gw[(2 * h + j) * ni..(2 * h + j + 1) * ni], x)
                    + dot(&gu[(2 * h + j) * h..(2 * h + j + 1) * h], &rh);
                ns.push(c.tanh());
            }
            let n_t = &ns[t * h..];
            for j in 0..h {
                state[j] = (1.0 - z[j]) * state[j] + z[j] * n_t[j];
            }
        }

        let dw = &p[l.dense_w.clone()];
        let db = &p[l.dense_b.clone()];
        let dense: Vec<f64> = (0..l.dense)
            .map(|i| act.apply(db[i] + dot(&dw[i * h..(i + 1) * h], &state)))
            .collect();
        let prediction = p[l.head_b.start] + dot(&p[l.head_w.clone()], &dense);
        let cache = ForwardCache {
            blocks,
            h_prev,
            z: zs,
            r: rs,
            n: ns,
            h_final: state,
            dense,
            prediction,
        };
        // open interval in exact arithmetic; tanh rounds to +-1 for large inputs
        debug_assert!(cache.hidden_states().all(|v| v.abs() <= 1.0));
        Ok(cache)
    }

    /// Adds `d_pred * d(prediction)/d(params)` into `grad`.
    pub fn backward(&self, params: &ModelParams, input: &[f64], cache: &ForwardCache, d_pred: f64, grad: &mut [f64]) {
        let p = &params.values;
        let l = &self.layout;
        let act = self.cfg.activation;
        let (h, ni, len, nd) = (l.hidden, l.gru_in, l.seq_len, l.dense);

        grad[l.head_b.start] += d_pred;
        axpy(d_pred, &cache.dense, &mut grad[l.head_w.clone()]);
        let head_w = &p[l.head_w.clone()];
        let mut dh = vec![0.0; h];
        for i in 0..nd {
            let g = d_pred * head_w[i] * act.derivative_from_output(cache.dense[i]);
            if g == 0.0 {
                continue;
            }
            grad[l.dense_b.start + i] += g;
            axpy(g, &cache.h_final, &mut grad[l.dense_w.start + i * h..l.dense_w.start + (i + 1) * h]);
            axpy(g, &p[l.dense_w.start + i * h..l.dense_w.start + (i + 1) * h], &mut dh);
        }

        let seq: &[f64] = cache.blocks.last().map_or(input, |b| &b.out);
        let gw = &p[l.gru_w.clone()];
        let gu = &p[l.gru_u.clone()];
        let mut dseq = vec![0.0; len * ni];
        let mut da = vec![0.0; 3 * h];
        let mut d_rh = vec![0.0; h];
        let mut rh = vec![0.0; h];
        for t in (0..len).rev() {
            let x = &seq[t * ni..(t + 1) * ni];
            let hp = &cache.h_prev[t * h..(t + 1) * h];
            let z = &cache.z[t * h..(t + 1) * h];
            let r = &cache.r[t * h..(t + 1) * h];
            let n = &cache.n[t * h..(t + 1) * h];
            let mut dh_prev: Vec<f64> = (0..h).map(|j| dh[j] * (1.0 - z[j])).collect();
            for j in 0..h {
                da[j] = dh[j] * (n[j] - hp[j]) * z[j] * (1.0 - z[j]);
                da[2 * h + j] = dh[j] * z[j] * (1.0 - n[j] * n[j]);
                rh[j] = r[j] * hp[j];
            }
            // candidate path through U_n (r * h)
            d_rh.fill(0.0);
            for j in 0..h {
                let g = da[2 * h + j];
                if g != 0.0 {
                    axpy(g, &gu[(2 * h + j) * h..(2 * h + j + 1) * h], &mut d_rh);
                }
            }
            for j in 0..h {
                da[h + j] = d_rh[j] * hp[j] * r[j] * (1.0 - r[j]);
                dh_prev[j] += d_rh[j] * r[j];
            }
            let dx = &mut dseq[t * ni..(t + 1) * ni];
            for row in 0..3 * h {
                let g = da[row];
                if g == 0.0 {
                    continue;
                }
                grad[l.gru_b.start + row] += g;
                axpy(g, x, &mut grad[l.gru_w.start + row * ni..l.gru_w.start + (row + 1) * ni]);
                axpy(g, &gw[row * ni..(row + 1) * ni], dx);
                let hsrc: &[f64] = if row >= 2 * h { &rh } else { hp };
                axpy(g, hsrc, &mut grad[l.gru_u.start + row * h..l.gru_u.start + (row + 1) * h]);
                if row < 2 * h {
                    axpy(g, &gu[row * h..(row + 1) * h], &mut dh_prev);
                }
            }
            dh = dh_prev;
        }

        let mut d_out = dseq;
        for (b, cl) in l.conv.iter().enumerate().rev() {
            let bc = &cache.blocks[b];
            let f = cl.filters;
            let mut d_act = match cl.pool {
                Pool::None => d_out,
                Pool::Max2 => {
                    let mut d = vec![0.0; cl.len_conv * f];
                    for (g, &i) in d_out.iter().zip(&bc.argmax) {
                        d[i] += g;
                    }
                    d
                }
            };
            for (g, &a) in d_act.iter_mut().zip(&bc.act) {
                *g *= act.derivative_from_output(a);
            }
            let x: &[f64] = if b == 0 { input } else { &cache.blocks[b - 1].out };
            let need_dx = b > 0;
            let mut dx = if need_dx { vec![0.0; cl.len_in * cl.in_ch] } else { Vec::new() };
            let (cin, k) = (cl.in_ch, cl.kernel);
            let pad = (k - 1) / 2;
            let w = &p[cl.w.clone()];
            for t in 0..cl.len_conv {
                let centre = t * cl.stride;
                for fi in 0..f {
                    let g = d_act[t * f + fi];
                    if g != 0.0 {
                        grad[cl.b.start + fi] += g;
                    }
                }
                for kk in 0..k {
                    let Some(idx) = (centre + kk).checked_sub(pad).filter(|&i| i < cl.len_in) else {
                        continue;
                    };
                    let xrow = &x[idx * cin..(idx + 1) * cin];
                    for fi in 0..f {
                        let g = d_act[t * f + fi];
                        if g == 0.0 {
                            continue;
                        }
                        let off = (fi * k + kk) * cin;
                        axpy(g, xrow, &mut grad[cl.w.start + off..cl.w.start + off + cin]);
                        if need_dx {
                            axpy(g, &w[off..off + cin], &mut dx[idx * cin..(idx + 1) * cin]);
                        }
                    }
                }
            }
            d_out = dx;
        }
    }

    /// Mean squared error over `batch` and its exact gradient.
    ///
    /// Per-sample work runs in parallel; partial sums are combined in a
    /// fixed order.
    pub fn loss_and_grad(&self, params: &ModelParams, batch: &[(&[f64], f64)]) -> Result<(f64, Vec<f64>)> {
        if batch.is_empty() {
            return Err(Error::Invalid("empty batch".into()));
        }
        let scale = 1.0 / batch.len() as f64;
        let partials: Vec<Result<(f64, Vec<f64>)>> = batch
            .par_chunks(GRAD_CHUNK)
            .map(|chunk| {
                let mut grad = vec![0.0; self.layout.total];
                let mut sq = 0.0;
                for &(input, target) in chunk {
                    let cache = self.forward(params, input)?;
                    let err = cache.prediction - target;
                    sq += err * err;
                    self.backward(params, input, &cache, 2.0 * err * scale, &mut grad);
                }
                Ok((sq, grad))
            })
            .collect();
        let mut total = 0.0;
        let mut grad = vec![0.0; self.layout.total];
        for part in partials {
            let (sq, g) = part?;
            total += sq;
            axpy(1.0, &g, &mut grad);
        }
        let loss = total * scale;
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            let targets: Vec<f64> = batch.iter().map(|b| b.1).collect();
            return Err(Error::Divergence(format!(
                "non-finite loss {loss} on a batch of {} (target range {:.4e}..{:.4e})",
                batch.len(),
                targets.iter().copied().fold(f64::INFINITY, f64::min),
                targets.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            )));
        }
        Ok((loss, grad))
    }

    /// Mean squared error without gradients.
    pub fn loss(&self, params: &ModelParams, batch: &[(&[f64], f64)]) -> Result<f64> {
        if batch.is_empty() {
            return Err(Error::Invalid("empty batch".into()));
        }
        let sq: Vec<Result<f64>> = batch
            .par_chunks(GRAD_CHUNK)
            .map(|chunk| {
                chunk.iter().try_fold(0.0, |acc, &(input, target)| {
                    let e = self.predict(params, input)? - target;
                    Ok(acc + e * e)
                })
            })
            .collect();
        let mut total = 0.0;
        for s in sq {
            total += s?;
        }
        Ok(total / batch.len() as f64)
    }
}

/// Single forward evaluation; builds the layout on each call.
pub fn forward(params: &ModelParams, cfg: &ModelConfig, input: &[f64]) -> Result<f64> {
    Model::new(cfg.clone())?.predict(params, input)
}
