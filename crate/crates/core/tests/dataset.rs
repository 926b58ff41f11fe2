use hrv_bold::dataset::{apply_normalizer, assign_folds, build_windows, fit_normalizer, invert_normalizer, Normalizer, WindowSpec};
use hrv_bold::io::{HrvSeries, RoiChannel, RoiGroup, RoiMatrix};
use hrv_bold::rng::{normal, rng_from_seed};
use proptest::prelude::*;

fn matrix(n_frames: usize, n_channels: usize, seed: u64) -> RoiMatrix {
    let mut rng = rng_from_seed(seed);
    let channels = (0..n_channels).map(|c| RoiChannel::new(format!("CTX{c:03}"), RoiGroup::Cortical)).collect();
    let values = (0..n_frames * n_channels).map(|_| 3.0 + 2.0 * normal(&mut rng)).collect();
    RoiMatrix::new(n_frames, channels, values).unwrap()
}

fn ramp(n: usize) -> HrvSeries {
    HrvSeries((0..n).map(|t| t as f64).collect())
}

proptest! {
    #[test]
    fn window_count_matches_enumeration(n in 0usize..400, len in 1usize..80, stride in 1usize..12) {
        let spec = WindowSpec { window_len: len, target_offset: 0, stride };
        let enumerated = (0..).map(|i| i * stride).take_while(|s| s + len <= n).count();
        prop_assert_eq!(spec.window_count(n), enumerated);
    }

    #[test]
    fn targets_sit_at_offset(n in 65usize..200, stride in 1usize..5) {
        let spec = WindowSpec { stride, ..WindowSpec::default() };
        let roi = matrix(n, 2, 1);
        let w = build_windows("s", &roi, &ramp(n), &spec).unwrap();
        prop_assert_eq!(w.len(), spec.window_count(n));
        for (i, s) in w.iter().enumerate() {
            prop_assert_eq!(s.target_frame, i * stride + 9);
            prop_assert_eq!(s.target, (i * stride + 9) as f64);
        }
    }
}

#[test]
fn window_count_examples() {
    let spec = WindowSpec::default();
    assert_eq!(spec.window_count(65), 1);
    assert_eq!(spec.window_count(64), 0);
    assert_eq!(spec.window_count(100), 36);
    assert_eq!(spec.target_frames(100).collect::<Vec<_>>(), (9..45).collect::<Vec<_>>());
    assert_eq!(spec.window_count(478), 414);
}

#[test]
fn short_scan_gives_no_windows() {
    let roi = matrix(40, 3, 2);
    assert!(build_windows("s", &roi, &ramp(40), &WindowSpec::default()).unwrap().is_empty());
}

#[test]
fn normalizer_round_trip() {
    let roi = matrix(120, 4, 3);
    let hrv = HrvSeries((0..120).map(|t| 0.01 + 1e-4 * t as f64).collect());
    let w = build_windows("s", &roi, &hrv, &WindowSpec::default()).unwrap();
    let n = fit_normalizer(&w).unwrap();
    let back = invert_normalizer(&n, &apply_normalizer(&n, &w).unwrap()).unwrap();
    for (a, b) in w.iter().zip(&back) {
        assert!((a.target - b.target).abs() < 1e-12);
        for (x, y) in a.input.iter().zip(b.input.iter()) {
            assert!((x - y).abs() < 1e-12);
        }
    }
    let id = Normalizer::identity(4);
    assert_eq!(apply_normalizer(&id, &w).unwrap(), w);
}

#[test]
fn standardised_matrix_equals_standardised_windows() {
    let roi = matrix(90, 3, 4);
    let hrv = ramp(90);
    let spec = WindowSpec::default();
    let w = build_windows("s", &roi, &hrv, &spec).unwrap();
    let n = fit_normalizer(&w).unwrap();
    let z = n.apply_matrix(&roi).unwrap();
    let zw = build_windows("s", &z, &hrv, &spec).unwrap();
    let aw = apply_normalizer(&n, &w).unwrap();
    for (a, b) in zw.iter().zip(&aw) {
        assert_eq!(a.input, b.input);
    }
}

#[test]
fn folds_for_352_scans() {
    let ids: Vec<String> = (0..352).map(|i| format!("scan_{i:04}")).collect();
    let fa = assign_folds(&ids, 10, 99).unwrap();
    let mut sizes = fa.sizes();
    sizes.sort_unstable();
    assert_eq!(sizes, [vec![35; 8], vec![36; 2]].concat());
    let mut seen: Vec<&str> = (0..10).flat_map(|f| fa.test_ids(f)).collect();
    seen.sort_unstable();
    assert_eq!(seen, ids.iter().map(String::as_str).collect::<Vec<_>>());
    for f in 0..10 {
        let test = fa.test_ids(f);
        assert!(fa.train_ids(f).iter().all(|t| !test.contains(t)));
        assert_eq!(fa.train_ids(f).len() + test.len(), 352);
    }
    assert_eq!(assign_folds(&ids, 10, 99).unwrap(), fa);
    assert!(assign_folds(&ids, 1, 0).is_err());
    assert!(assign_folds(&ids[..5], 6, 0).is_err());
}
