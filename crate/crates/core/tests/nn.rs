use hrv_bold::dataset::{Normalizer, WindowSample, WindowSpec};
use hrv_bold::io::{RoiConfig, RoiGroup, RoiMatrix};
use hrv_bold::nn::*;
use hrv_bold::rng::{normal, rng_from_seed};
use rand::Rng;
use std::borrow::Cow;

fn random_vec(n: usize, scale: f64, seed: u64) -> Vec<f64> {
    let mut rng = rng_from_seed(seed);
    (0..n).map(|_| scale * normal(&mut rng)).collect()
}

fn tiny(activation: Activation, seed: u64) -> ModelConfig {
    ModelConfig {
        n_channels: 3,
        window_len: 8,
        conv_blocks: vec![ConvBlock::new(2, 3, 1, Pool::None)],
        gru_hidden: 4,
        dense_hidden: 4,
        activation,
        seed,
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Straight transcription of the model equations with explicit indexing,
/// sharing nothing with the library beyond the documented parameter order.
fn reference_forward(cfg: &ModelConfig, p: &[f64], x: &[Vec<f64>]) -> f64 {
    let act = |v: f64| match cfg.activation {
        Activation::ReLU => v.max(0.0),
        Activation::Tanh => v.tanh(),
    };
    let mut cur: Vec<Vec<f64>> = x.to_vec();
    let mut off = 0;
    for b in &cfg.conv_blocks {
        let cin = cur[0].len();
        let (f, k) = (b.filters, b.kernel_size);
        let w = |fi: usize, kk: usize, c: usize| p[off + fi * k * cin + kk * cin + c];
        let bias_off = off + f * k * cin;
        let t_in = cur.len();
        let t_conv = (t_in + b.stride - 1) / b.stride;
        let mut out = vec![vec![0.0; f]; t_conv];
        for t in 0..t_conv {
            for fi in 0..f {
                let mut s = p[bias_off + fi];
                for kk in 0..k {
                    let src = (t * b.stride + kk) as i64 - ((k - 1) / 2) as i64;
                    if src < 0 || src >= t_in as i64 {
                        continue;
                    }
                    for c in 0..cin {
                        s += w(fi, kk, c) * cur[src as usize][c];
                    }
                }
                out[t][fi] = act(s);
            }
        }
        if b.pool == Pool::Max2 {
            out = (0..t_conv / 2)
                .map(|t| (0..f).map(|fi| out[2 * t][fi].max(out[2 * t + 1][fi])).collect())
                .collect();
        }
        off = bias_off + f;
        cur = out;
    }
    let ni = cur[0].len();
    let h = cfg.gru_hidden;
    let wi = off;
    let wh = wi + 3 * h * ni;
    let bb = wh + 3 * h * h;
    let gate = |g: usize, j: usize, xv: &[f64], hv: &[f64]| -> f64 {
        let mut s = p[bb + g * h + j];
        for i in 0..ni {
            s += p[wi + (g * h + j) * ni + i] * xv[i];
        }
        for i in 0..h {
            s += p[wh + (g * h + j) * h + i] * hv[i];
        }
        s
    };
    let mut state = vec![0.0; h];
    for xt in &cur {
        let z: Vec<f64> = (0..h).map(|j| sigmoid(gate(0, j, xt, &state))).collect();
        let r: Vec<f64> = (0..h).map(|j| sigmoid(gate(1, j, xt, &state))).collect();
        let rh: Vec<f64> = (0..h).map(|j| r[j] * state[j]).collect();
        let n: Vec<f64> = (0..h).map(|j| gate(2, j, xt, &rh).tanh()).collect();
        state = (0..h).map(|j| (1.0 - z[j]) * state[j] + z[j] * n[j]).collect();
    }
    let d = cfg.dense_hidden;
    let dw = bb + 3 * h;
    let db = dw + d * h;
    let hw = db + d;
    let hb = hw + d;
    let mut y = p[hb];
    for i in 0..d {
        let mut s = p[db + i];
        for j in 0..h {
            s += p[dw + i * h + j] * state[j];
        }
        y += p[hw + i] * act(s);
    }
    assert_eq!(hb + 1, p.len());
    y
}

fn rows(x: &[f64], c: usize) -> Vec<Vec<f64>> {
    x.chunks(c).map(|r| r.to_vec()).collect()
}

#[test]
fn forward_matches_hand_rolled_reference() {
    for (seed, act) in [(1, Activation::Tanh), (2, Activation::ReLU)] {
        let cfg = tiny(act, seed);
        let params = ModelParams {
            values: random_vec(cfg.param_count().unwrap(), 0.7, seed + 10),
        };
        let x = random_vec(24, 1.0, seed + 20);
        let got = forward(&params, &cfg, &x).unwrap();
        let want = reference_forward(&cfg, &params.values, &rows(&x, 3));
        assert!((got - want).abs() < 1e-10, "{got} vs {want}");
    }
    // strided, pooled two-block stack
    let cfg = ModelConfig {
        n_channels: 2,
        window_len: 17,
        conv_blocks: vec![ConvBlock::new(3, 5, 2, Pool::Max2), ConvBlock::new(2, 1, 1, Pool::None)],
        gru_hidden: 3,
        dense_hidden: 2,
        activation: Activation::Tanh,
        seed: 0,
    };
    let params = ModelParams {
        values: random_vec(cfg.param_count().unwrap(), 0.7, 5),
    };
    let x = random_vec(34, 1.0, 6);
    let got = forward(&params, &cfg, &x).unwrap();
    let want = reference_forward(&cfg, &params.values, &rows(&x, 2));
    assert!((got - want).abs() < 1e-10);
}

#[test]
fn zero_params_predict_zero() {
    let cfg = ModelConfig::small(5);
    let params = ModelParams::zeros(&cfg).unwrap();
    let x = random_vec(65 * 5, 3.0, 1);
    assert_eq!(forward(&params, &cfg, &x).unwrap(), 0.0);
}

#[test]
fn delta_kernel_selects_channel() {
    let cfg = ModelConfig {
        n_channels: 3,
        window_len: 4,
        conv_blocks: vec![ConvBlock::new(1, 1, 1, Pool::None)],
        gru_hidden: 1,
        dense_hidden: 1,
        activation: Activation::ReLU,
        seed: 0,
    };
    let ranges = cfg.tensor_ranges().unwrap();
    let conv_w = ranges.iter().find(|(n, _)| n == "conv0.weight").unwrap().1.clone();
    let mut params = ModelParams::zeros(&cfg).unwrap();
    params.values[conv_w.start + 1] = 1.0;
    let model = Model::new(cfg).unwrap();
    let x: Vec<f64> = (0..12).map(|i| i as f64 * 0.5).collect();
    let cache = model.forward(&params, &x).unwrap();
    let selected: Vec<f64> = x.chunks(3).map(|r| r[1]).collect();
    assert_eq!(cache.block_output(0), selected.as_slice());
}

#[test]
fn gru_states_bounded() {
    let cfg = ModelConfig {
        activation: Activation::Tanh,
        ..ModelConfig::small(4)
    };
    let model = Model::new(cfg.clone()).unwrap();
    for seed in 0..5 {
        let params = ModelParams {
            values: random_vec(model.param_count(), 1.5, seed),
        };
        let cache = model.forward(&params, &random_vec(65 * 4, 2.0, seed + 100)).unwrap();
        assert!(cache.hidden_states().all(|v| v > -1.0 && v < 1.0));
    }
}

#[test]
fn gradients_match_finite_differences() {
    for seed in 0..20u64 {
        for act in [Activation::Tanh, Activation::ReLU] {
            let cfg = tiny(act, seed);
            let model = Model::new(cfg.clone()).unwrap();
            let params = init_params(&cfg).unwrap();
            let inputs: Vec<Vec<f64>> = (0..3).map(|i| random_vec(24, 1.0, seed * 10 + i)).collect();
            let batch: Vec<(&[f64], f64)> = inputs.iter().zip([0.3, -0.5, 1.1]).map(|(x, y)| (x.as_slice(), y)).collect();
            let report = check_gradients(&model, &params, &batch, 1e-5, 0..model.param_count()).unwrap();
            assert!(report.max_rel_error < 1e-4, "seed {seed} {act:?}: {report:?}");
        }
    }
}

#[test]
fn exact_fit_has_zero_gradient() {
    let cfg = tiny(Activation::Tanh, 3);
    let model = Model::new(cfg.clone()).unwrap();
    let params = init_params(&cfg).unwrap();
    let inputs: Vec<Vec<f64>> = (0..4).map(|i| random_vec(24, 1.0, i)).collect();
    let batch: Vec<(&[f64], f64)> = inputs
        .iter()
        .map(|x| (x.as_slice(), model.predict(&params, x).unwrap()))
        .collect();
    let (loss, grad) = model.loss_and_grad(&params, &batch).unwrap();
    assert_eq!(loss, 0.0);
    assert!(grad.iter().all(|g| g.abs() < 1e-12));
}

#[test]
fn duplicated_sample_has_same_gradient() {
    let cfg = tiny(Activation::Tanh, 4);
    let model = Model::new(cfg.clone()).unwrap();
    let params = init_params(&cfg).unwrap();
    let x = random_vec(24, 1.0, 9);
    let (l1, g1) = model.loss_and_grad(&params, &[(&x, 0.7)]).unwrap();
    let (l2, g2) = model.loss_and_grad(&params, &[(&x, 0.7), (&x, 0.7)]).unwrap();
    assert!((l1 - l2).abs() < 1e-15);
    for (a, b) in g1.iter().zip(&g2) {
        assert!((a - b).abs() <= 1e-15 * a.abs().max(1.0));
    }
}

#[test]
fn full_batch_adam_decreases_loss() {
    let cfg = ModelConfig {
        n_channels: 4,
        window_len: 16,
        conv_blocks: vec![ConvBlock::new(4, 3, 1, Pool::Max2)],
        gru_hidden: 6,
        dense_hidden: 4,
        activation: Activation::Tanh,
        seed: 2,
    };
    let model = Model::new(cfg.clone()).unwrap();
    let mut params = init_params(&cfg).unwrap();
    let inputs: Vec<Vec<f64>> = (0..32).map(|i| random_vec(64, 1.0, 50 + i)).collect();
    let targets: Vec<f64> = inputs.iter().map(|x| x[5] * 0.5 - x[17] * 0.3).collect();
    let batch: Vec<(&[f64], f64)> = inputs.iter().map(Vec::as_slice).zip(targets).collect();
    let mut opt = OptimState::new(params.len(), 1e-3);
    let mut prev = model.loss(&params, &batch).unwrap();
    let mut decreases = 0;
    for _ in 0..200 {
        let (_, g) = model.loss_and_grad(&params, &batch).unwrap();
        opt_step(&mut params, &g, &mut opt);
        let now = model.loss(&params, &batch).unwrap();
        if now < prev {
            decreases += 1;
        }
        prev = now;
    }
    assert!(decreases >= 190, "{decreases}/200 steps decreased the loss");
}

fn owned_samples(inputs: &[Vec<f64>], targets: &[f64], c: usize) -> Vec<WindowSample<'static>> {
    inputs
        .iter()
        .zip(targets)
        .enumerate()
        .map(|(i, (x, &y))| WindowSample {
            scan_id: Cow::Owned("synthetic".into()),
            target_frame: i,
            n_channels: c,
            input: Cow::Owned(x.clone()),
            target: y,
        })
        .collect()
}

#[test]
fn learns_constant_zero_target() {
    let cfg = ModelConfig {
        window_len: 16,
        conv_blocks: vec![ConvBlock::new(4, 3, 1, Pool::Max2)],
        ..ModelConfig::small(3)
    };
    let inputs: Vec<Vec<f64>> = (0..256).map(|i| random_vec(48, 1.0, i)).collect();
    let train_set = owned_samples(&inputs[..200], &[0.0; 200], 3);
    let val_set = owned_samples(&inputs[200..], &[0.0; 56], 3);
    let hyper = TrainHyper {
        learning_rate: 1e-2,
        max_epochs: 5,
        ..Default::default()
    };
    let (_, report) = train(&cfg, &hyper, &train_set, &val_set, 1).unwrap();
    assert!(report.best_val_loss <= 1e-4, "{report:?}");
}

#[test]
fn learns_delayed_moving_average() {
    // target: mean of channel 0 over steps 10..14 of a 24-step window
    let cfg = ModelConfig {
        n_channels: 1,
        window_len: 24,
        conv_blocks: vec![ConvBlock::new(4, 5, 1, Pool::None)],
        gru_hidden: 8,
        dense_hidden: 8,
        activation: Activation::Tanh,
        seed: 3,
    };
    let mut rng = rng_from_seed(77);
    let inputs: Vec<Vec<f64>> = (0..1200).map(|_| (0..24).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
    let targets: Vec<f64> = inputs.iter().map(|x| x[10..15].iter().sum::<f64>() / 5.0 * 2.0).collect();
    let train_set = owned_samples(&inputs[..1000], &targets[..1000], 1);
    let val_set = owned_samples(&inputs[1000..], &targets[1000..], 1);
    let hyper = TrainHyper {
        learning_rate: 3e-3,
        batch_size: 32,
        max_epochs: 50,
        ..Default::default()
    };
    let (params, report) = train(&cfg, &hyper, &train_set, &val_set, 4).unwrap();
    let model = Model::new(cfg).unwrap();
    let preds: Vec<f64> = val_set.iter().map(|s| model.predict(&params, &s.input).unwrap()).collect();
    let r = pearson(&preds, &targets[1000..]);
    assert!(r > 0.95, "r = {r}, epochs {}", report.epochs.len());
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

#[test]
fn training_is_deterministic() {
    let cfg = ModelConfig {
        window_len: 12,
        conv_blocks: vec![ConvBlock::new(3, 3, 1, Pool::None)],
        ..ModelConfig::small(2)
    };
    let inputs: Vec<Vec<f64>> = (0..150).map(|i| random_vec(24, 1.0, i)).collect();
    let targets: Vec<f64> = inputs.iter().map(|x| x[3]).collect();
    let tr = owned_samples(&inputs[..120], &targets[..120], 2);
    let va = owned_samples(&inputs[120..], &targets[120..], 2);
    let hyper = TrainHyper {
        max_epochs: 4,
        ..Default::default()
    };
    let (p1, r1) = train(&cfg, &hyper, &tr, &va, 8).unwrap();
    let (p2, r2) = train(&cfg, &hyper, &tr, &va, 8).unwrap();
    assert_eq!(p1, p2);
    assert_eq!(r1.epochs, r2.epochs);
    let (p3, _) = train(&cfg, &hyper, &tr, &va, 9).unwrap();
    assert_ne!(p1, p3);
}

fn roi(n_frames: usize, c: usize, seed: u64) -> RoiMatrix {
    let cfg = RoiConfig::custom([(RoiGroup::Cortical, c)]);
    RoiMatrix::new(n_frames, cfg.channels(), random_vec(n_frames * c, 1.0, seed)).unwrap()
}

#[test]
fn predict_scan_covers_target_frames() {
    let cfg = ModelConfig::small(3);
    let params = init_params(&cfg).unwrap();
    let spec = WindowSpec::default();
    let norm = Normalizer::identity(3);
    let one = predict_scan(&params, &cfg, &roi(65, 3, 1), &spec, &norm).unwrap();
    assert_eq!(one.iter().filter(|p| p.is_some()).count(), 1);
    assert!(one[9].is_some());

    let preds = predict_scan(&params, &cfg, &roi(150, 3, 2), &spec, &norm).unwrap();
    let present: Vec<usize> = (0..150).filter(|&t| preds[t].is_some()).collect();
    assert_eq!(present.len(), 150 - 64);
    assert_eq!(present.first(), Some(&9));
    assert_eq!(present.last(), Some(&(150 - 56)));

    let other = init_params(&ModelConfig { seed: 99, ..cfg.clone() }).unwrap();
    let preds2 = predict_scan(&other, &cfg, &roi(150, 3, 2), &spec, &norm).unwrap();
    assert_ne!(preds, preds2);
    assert!(predict_scan(&params, &cfg, &roi(64, 3, 1), &spec, &norm).is_err());
}
