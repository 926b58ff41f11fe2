//! 1D-CNN + GRU regressor trained from scratch.
//!
//! Parameters live in one flat `Vec<f64>`; a layout maps each tensor to a
//! range of it. Tensor layouts, in order:
//!
//! - conv block `b`: kernel `[filters][kernel][in_ch]`, bias `[filters]`
//! - GRU: input weights `[3H][I]`, hidden weights `[3H][H]`, bias `[3H]`,
//!   gate rows ordered update, reset, candidate
//! - dense: weights `[D][H]`, bias `[D]`; head: weights `[D]`, bias `[1]`

mod checkpoint;
mod gradcheck;
mod model;
mod optim;
mod train;

use std::ops::Range;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{derive_seed, rng_from_seed};

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_VERSION};
pub use gradcheck::{check_gradients, relative_error, GradCheck};
pub use model::{forward, ForwardCache, Model};
pub use optim::{opt_step, OptimState};
pub use train::{predict_scan, train, EpochLog, TrainHyper, TrainReport};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    ReLU,
    Tanh,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::ReLU => x.max(0.0),
            Activation::Tanh => x.tanh(),
        }
    }

    /// Derivative expressed through the activation's output.
    #[inline]
    pub fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::ReLU => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - y * y,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Pool {
    None,
    Max2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvBlock {
    pub filters: usize,
    pub kernel_size: usize,
    pub stride: usize,
    pub pool: Pool,
}

impl ConvBlock {
    pub fn new(filters: usize, kernel_size: usize, stride: usize, pool: Pool) -> Self {
        Self {
            filters,
            kernel_size,
            stride,
            pool,
        }
    }
}

/// `n_channels` is normally filled in from the data at training time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub n_channels: usize,
    pub window_len: usize,
    pub conv_blocks: Vec<ConvBlock>,
    pub gru_hidden: usize,
    pub dense_hidden: usize,
    pub activation: Activation,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::new(0)
    }
}

impl ModelConfig {
    /// Two conv blocks (64 and 32 filters, max-pool after the first), GRU 64,
    /// dense 32, ReLU.
    pub fn new(n_channels: usize) -> Self {
        Self {
            n_channels,
            window_len: 65,
            conv_blocks: vec![ConvBlock::new(64, 5, 1, Pool::Max2), ConvBlock::new(32, 3, 1, Pool::None)],
            gru_hidden: 64,
            dense_hidden: 32,
            activation: Activation::ReLU,
            seed: 0,
        }
    }

    /// Reduced model for single-core runs: a 1x1 channel-mixing block with 4
    /// filters, then 8 filters of width 5 at stride 2 with max-pooling, so
    /// the GRU sees 16 steps. GRU 8, dense 8.
    pub fn small(n_channels: usize) -> Self {
        Self {
            conv_blocks: vec![ConvBlock::new(4, 1, 1, Pool::None), ConvBlock::new(8, 5, 2, Pool::Max2)],
            gru_hidden: 8,
            dense_hidden: 8,
            ..Self::new(n_channels)
        }
    }

    pub fn validate(&self) -> Result<()> {
        Layout::new(self).map(|_| ())
    }

    /// Name and flat range of every parameter tensor, in storage order.
    pub fn tensor_ranges(&self) -> Result<Vec<(String, Range<usize>)>> {
        Ok(Layout::new(self)?.named())
    }

    /// Number of trainable scalars, counted from the shapes directly.
    pub fn param_count(&self) -> Result<usize> {
        Ok(Layout::new(self)?.total)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct ConvLayout {
    pub w: Range<usize>,
    pub b: Range<usize>,
    pub in_ch: usize,
    pub filters: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pool: Pool,
    pub len_in: usize,
    pub len_conv: usize,
    pub len_out: usize,
}

/// Offsets of every tensor in the flat parameter vector, plus the temporal
/// shapes the config implies.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Layout {
    pub conv: Vec<ConvLayout>,
    pub seq_len: usize,
    pub gru_in: usize,
    pub hidden: usize,
    pub dense: usize,
    pub gru_w: Range<usize>,
    pub gru_u: Range<usize>,
    pub gru_b: Range<usize>,
    pub dense_w: Range<usize>,
    pub dense_b: Range<usize>,
    pub head_w: Range<usize>,
    pub head_b: Range<usize>,
    pub total: usize,
}

impl Layout {
    pub fn new(cfg: &ModelConfig) -> Result<Self> {
        if cfg.n_channels == 0 || cfg.window_len == 0 {
            return Err(Error::Invalid("model needs at least one channel and one time step".into()));
        }
        if cfg.gru_hidden == 0 || cfg.dense_hidden == 0 {
            return Err(Error::Invalid("gru_hidden and dense_hidden must be positive".into()));
        }
        let mut offset = 0;
        let mut take = |n: usize| {
            let r = offset..offset + n;
            offset += n;
            r
        };
        let mut conv = Vec::new();
        let (mut len, mut ch) = (cfg.window_len, cfg.n_channels);
        for (i, b) in cfg.conv_blocks.iter().enumerate() {
            if b.filters == 0 || b.stride == 0 || b.kernel_size % 2 == 0 {
                return Err(Error::Invalid(format!(
                    "conv block {i}: need filters > 0, stride > 0 and an odd kernel (got {b:?})"
                )));
            }
            let len_conv = len.div_ceil(b.stride);
            let len_out = match b.pool {
                Pool::None => len_conv,
                Pool::Max2 => len_conv / 2,
            };
            conv.push(ConvLayout {
                w: take(b.filters * b.kernel_size * ch),
                b: take(b.filters),
                in_ch: ch,
                filters: b.filters,
                kernel: b.kernel_size,
                stride: b.stride,
                pool: b.pool,
                len_in: len,
                len_conv,
                len_out,
            });
            len = len_out;
            ch = b.filters;
        }
        if len < 2 {
            return Err(Error::Invalid(format!(
                "conv/pool stack leaves {len} time steps; the GRU needs at least 2"
            )));
        }
        let h = cfg.gru_hidden;
        let d = cfg.dense_hidden;
        let gru_w = take(3 * h * ch);
        let gru_u = take(3 * h * h);
        let gru_b = take(3 * h);
        let dense_w = take(d * h);
        let dense_b = take(d);
        let head_w = take(d);
        let head_b = take(1);
        Ok(Self {
            conv,
            seq_len: len,
            gru_in: ch,
            hidden: h,
            dense: d,
            gru_w,
            gru_u,
            gru_b,
            dense_w,
            dense_b,
            head_w,
            head_b,
            total: offset,
        })
    }

    fn named(&self) -> Vec<(String, Range<usize>)> {
        let mut v = Vec::new();
        for (i, c) in self.conv.iter().enumerate() {
            v.push((format!("conv{i}.weight"), c.w.clone()));
            v.push((format!("conv{i}.bias"), c.b.clone()));
        }
        v.extend([
            ("gru.input_weight".to_string(), self.gru_w.clone()),
            ("gru.hidden_weight".to_string(), self.gru_u.clone()),
            ("gru.bias".to_string(), self.gru_b.clone()),
            ("dense.weight".to_string(), self.dense_w.clone()),
            ("dense.bias".to_string(), self.dense_b.clone()),
            ("head.weight".to_string(), self.head_w.clone()),
            ("head.bias".to_string(), self.head_b.clone()),
        ]);
        v
    }

    /// Weight tensors with their fan-in; biases are everything else.
    fn weight_tensors(&self) -> Vec<(Range<usize>, usize)> {
        let mut v: Vec<_> = self
            .conv
            .iter()
            .map(|c| (c.w.clone(), c.in_ch * c.kernel))
            .collect();
        v.push((self.gru_w.clone(), self.gru_in));
        v.push((self.gru_u.clone(), self.hidden));
        v.push((self.dense_w.clone(), self.hidden));
        v.push((self.head_w.clone(), self.dense));
        v
    }
}

/// Flat parameter vector; see the module docs for the layout.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub values: Vec<f64>,
}

impl ModelParams {
    pub fn zeros(cfg: &ModelConfig) -> Result<Self> {
        Ok(Self {
            values: vec![0.0; cfg.param_count()?],
        })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

/// Weights uniform in `[-sqrt(1/fan_in), sqrt(1/fan_in)]`, biases zero.
/// Each tensor draws from its own stream derived from `cfg.seed`.
pub fn init_params(cfg: &ModelConfig) -> Result<ModelParams> {
    let layout = Layout::new(cfg)?;
    let mut values = vec![0.0; layout.total];
    for (i, (range, fan_in)) in layout.weight_tensors().into_iter().enumerate() {
        let bound = (1.0 / fan_in as f64).sqrt();
        let mut rng = rng_from_seed(derive_seed(cfg.seed, "init", i as u64));
        for v in &mut values[range] {
            *v = rng.random_range(-bound..=bound);
        }
    }
    Ok(ModelParams { values })
}

#[cfg(test)]
mod tests {
    use super::*;

    // Independent walk over the architecture to count scalars.
    fn shape_walk_count(cfg: &ModelConfig) -> usize {
        let mut ch = cfg.n_channels;
        let mut total = 0;
        for b in &cfg.conv_blocks {
            total += b.filters * ch * b.kernel_size + b.filters;
            ch = b.filters;
        }
        let h = cfg.gru_hidden;
        for _gate in 0..3 {
            total += h * ch + h * h + h;
        }
        total += cfg.dense_hidden * h + cfg.dense_hidden;
        total + cfg.dense_hidden + 1
    }

    #[test]
    fn param_count_matches_shape_walk() {
        for cfg in [
            ModelConfig::new(628),
            ModelConfig::new(69),
            ModelConfig::small(64),
            ModelConfig {
                conv_blocks: vec![ConvBlock::new(3, 7, 2, Pool::Max2)],
                ..ModelConfig::small(5)
            },
        ] {
            assert_eq!(cfg.param_count().unwrap(), shape_walk_count(&cfg));
        }
    }

    #[test]
    fn default_sequence_length() {
        let l = Layout::new(&ModelConfig::new(10)).unwrap();
        assert_eq!(l.conv[0].len_conv, 65);
        assert_eq!(l.conv[0].len_out, 32);
        assert_eq!(l.seq_len, 32);
        let small = Layout::new(&ModelConfig::small(64)).unwrap();
        assert_eq!(small.conv[1].len_conv, 33);
        assert_eq!(small.seq_len, 16);
    }

    #[test]
    fn invalid_configs_rejected() {
        let even = ModelConfig {
            conv_blocks: vec![ConvBlock::new(4, 4, 1, Pool::None)],
            ..ModelConfig::small(3)
        };
        assert!(even.validate().is_err());
        let too_short = ModelConfig {
            window_len: 3,
            conv_blocks: vec![ConvBlock::new(4, 3, 1, Pool::Max2)],
            ..ModelConfig::small(3)
        };
        assert!(too_short.validate().is_err());
    }

    #[test]
    fn init_is_deterministic_with_zero_biases() {
        let cfg = ModelConfig::small(12);
        let a = init_params(&cfg).unwrap();
        assert_eq!(a, init_params(&cfg).unwrap());
        let l = Layout::new(&cfg).unwrap();
        let mut biases: Vec<Range<usize>> = l.conv.iter().map(|c| c.b.clone()).collect();
        biases.extend([l.gru_b.clone(), l.dense_b.clone(), l.head_b.clone()]);
        for r in biases {
            assert!(a.values[r].iter().all(|&v| v == 0.0));
        }
        let other = init_params(&ModelConfig { seed: 1, ..cfg }).unwrap();
        assert_ne!(a, other);
    }

    #[test]
    fn init_weights_within_bound_and_centred() {
        let cfg = ModelConfig::new(628);
        let p = init_params(&cfg).unwrap();
        let l = Layout::new(&cfg).unwrap();
        let (range, fan_in) = l.weight_tensors()[0].clone();
        let w = &p.values[range];
        let bound = (1.0 / fan_in as f64).sqrt();
        assert!(w.iter().all(|v| v.abs() <= bound));
        let n = w.len() as f64;
        let mean = w.iter().sum::<f64>() / n;
        // uniform(-b, b) has std b / sqrt(3)
        let sigma = bound / 3f64.sqrt();
        assert!(mean.abs() < 3.0 * sigma / n.sqrt(), "mean {mean}");
    }
}
