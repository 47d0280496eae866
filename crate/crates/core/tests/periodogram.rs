mod common;

use std::f64::consts::PI;

use common::*;
use isac_atr::periodogram::*;
use isac_atr::pgm::decode_pgm;
use isac_atr::radio::{RadioConfig, TddPattern};
use isac_atr::waveform::*;
use ndarray::Array2;
use num_complex::Complex64;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn scene(scatterers: Vec<Scatterer>, snr_db: f64, seed: u64) -> Scene {
    Scene {
        class_id: 0,
        scatterers,
        snr_db,
        seed,
    }
}

fn circular_gap(a: usize, b: usize, len: usize) -> usize {
    let d = a.abs_diff(b);
    d.min(len - d)
}

#[test]
fn fast_transform_matches_double_sum() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for &(n, m, f) in &[(64, 64, 0), (5, 7, 0), (12, 10, 1), (6, 9, 2)] {
        let h = random_matrix(&mut rng, n, m);
        let p = compute_periodogram(&channel(h.clone()), f).unwrap();
        let (np, mp) = padded_dims(n, m, f);
        let direct = direct_periodogram(&h, np, mp);
        let dev = max_rel_dev(&p.data, &direct);
        assert!(dev <= 1e-9, "{}x{} F={}: {}", n, m, f, dev);
    }
}

#[test]
fn constant_channel_maps_to_dc() {
    let p = compute_periodogram(&channel(Array2::from_elem((4, 4), Complex64::new(1.0, 0.0))), 0).unwrap();
    for ((n, m), z) in p.data.indexed_iter() {
        let want = if (n, m) == (0, 0) { 1.0 } else { 0.0 };
        assert!((z - Complex64::new(want, 0.0)).norm() < 1e-15);
    }
}

#[test]
fn single_target_peak_lands_on_predicted_bin() {
    let cfg = RadioConfig::desk();
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    for i in 0..100 {
        let target = Scatterer::new(rng.random_range(1.0..50.0), rng.random_range(-15.0..15.0), 1.0, rng.random_range(-PI..PI));
        let h = simulate(&scene(vec![target], 20.0, i), &cfg).unwrap();
        let p = compute_periodogram(&h, 0).unwrap();
        let (n0, m0) = p.expected_bin(target.range_m, target.velocity_mps);
        let (n, m) = p.peak();
        assert!(
            circular_gap(n, n0, p.rows()) <= 1 && circular_gap(m, m0, p.cols()) <= 1,
            "target {:?}: peak ({}, {}) expected ({}, {})",
            target,
            n,
            m,
            n0,
            m0
        );
    }
}

#[test]
fn tdd_mask_adds_doppler_sidelobes_but_keeps_peak() {
    let cfg = RadioConfig::desk();
    let period = cfg.tdd.period_symbols;
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for _ in 0..20 {
        let target = Scatterer::new(rng.random_range(2.0..45.0), rng.random_range(-10.0..10.0), 1.0, 0.0);
        let clean = synthesize_channel(&scene(vec![target], f64::INFINITY, 0), &cfg).unwrap();
        let masked = apply_tdd_mask(clean.clone()).unwrap();
        let pc = compute_periodogram(&clean, 0).unwrap();
        let pm = compute_periodogram(&masked, 0).unwrap();
        assert_eq!(pc.peak(), pm.peak());
        let (n, m) = pm.peak();
        let spacing = pm.cols() / period;
        for j in 1..period {
            // Replica strength is the DFT of one period of the downlink mask;
            // it vanishes at some indices (j = 4 for the 8/6 pattern).
            let comb: Complex64 = (0..cfg.tdd.dl_symbols)
                .map(|l| Complex64::from_polar(1.0, -2.0 * PI * (l * j) as f64 / period as f64))
                .sum();
            if comb.norm() < 1e-9 {
                continue;
            }
            let mj = (m + j * spacing) % pm.cols();
            assert!(pm.data[[n, mj]].norm() > pc.data[[n, mj]].norm(), "replica {} of {:?}", j, target);
        }
    }
}

#[test]
fn padding_factor_scales_image_sides() {
    let h = channel(Array2::from_elem((64, 64), Complex64::new(1.0, 0.0)));
    let p0 = compute_periodogram(&h, 0).unwrap();
    let p2 = compute_periodogram(&h, 2).unwrap();
    assert_eq!((p2.rows(), p2.cols()), (4 * p0.rows(), 4 * p0.cols()));
    assert_eq!(padded_dims(1584, 1120, 0), (2048, 2048));
    assert_eq!(padded_dims(64, 64, 0), (64, 64));
    assert_eq!(padded_dims(100, 3, 1), (256, 8));
}

#[test]
fn feature_argmax_follows_periodogram_peak() {
    let cfg = RadioConfig::desk();
    let h = simulate(&scene(vec![Scatterer::new(17.0, -2.3, 1.0, 0.4)], 25.0, 3), &cfg).unwrap();
    let p = compute_periodogram(&h, 0).unwrap();
    let t = extract_features(&p, FeatureMode::Db);
    let mag = t.channel(0);
    let best = (0..mag.len()).fold(0, |b, i| if mag[i] > mag[b] { i } else { b });
    let (n, m) = p.peak();
    assert_eq!(best, n * p.cols() + center_doppler(m, p.cols()));
    assert!(t.channel(1).iter().all(|v| (-1.0..=1.0).contains(v)));
    let mean: f64 = mag.iter().map(|&v| v as f64).sum::<f64>() / mag.len() as f64;
    let var: f64 = mag.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / mag.len() as f64;
    assert!(mean.abs() < 1e-5 && (var - 1.0).abs() < 1e-4);
}

#[test]
fn zero_doppler_symmetric_tensor_survives_flip() {
    let (rows, cols) = (4, 8);
    let mut t = extract_features(&compute_periodogram(&channel(Array2::zeros((rows, cols))), 0).unwrap(), FeatureMode::Raw);
    for n in 0..rows {
        for m in 0..cols / 2 {
            let v = (n * 10 + m) as f32;
            t.data[n * cols + m] = v;
            t.data[n * cols + cols - 1 - m] = v;
        }
    }
    assert_eq!(hflip(&t), t);
}

#[test]
fn rendered_image_puts_target_brightest() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = RadioConfig::desk();
    let h = simulate(&scene(vec![Scatterer::new(9.0, 3.1, 1.0, 0.0)], 30.0, 5), &cfg).unwrap();
    let p = compute_periodogram(&h, 1).unwrap();
    let path = dir.path().join("p.pgm");
    render(&p, &path).unwrap();
    let (w, hgt, px) = decode_pgm(&std::fs::read(&path).unwrap()).unwrap();
    assert_eq!((w, hgt), (p.cols(), p.rows()));
    let (n, m) = p.peak();
    assert_eq!(px[n * w + center_doppler(m, w)], 255);
    assert_eq!(*px.iter().max().unwrap(), 255);

    let zero = compute_periodogram(&channel(Array2::zeros((8, 8))), 0).unwrap();
    render(&zero, &path).unwrap();
    let (_, _, px) = decode_pgm(&std::fs::read(&path).unwrap()).unwrap();
    assert!(px.iter().all(|&g| g == 0));
}

fn matrix(max_n: usize, max_m: usize) -> impl Strategy<Value = Array2<Complex64>> {
    (1..=max_n, 1..=max_m, any::<u64>()).prop_map(|(n, m, seed)| random_matrix(&mut ChaCha8Rng::seed_from_u64(seed), n, m))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(50))]

    #[test]
    fn parseval_holds(h in matrix(24, 24), f in 0u32..=2) {
        let p = compute_periodogram(&channel(h.clone()), f).unwrap();
        let lhs = p.energy();
        let rhs = energy(&h) / (p.rows() * p.cols()) as f64;
        prop_assert!((lhs - rhs).abs() <= 1e-9 * rhs);
    }

    #[test]
    fn delay_shift_theorem(log_n in 1u32..6, log_m in 1u32..5, seed in any::<u64>(), shift in 0usize..64) {
        let (n, m) = (1usize << log_n, 1usize << log_m);
        let n0 = shift % n;
        let h = random_matrix(&mut ChaCha8Rng::seed_from_u64(seed), n, m);
        let shifted = Array2::from_shape_fn((n, m), |(k, l)| h[[k, l]] * Complex64::from_polar(1.0, 2.0 * PI * (k * n0) as f64 / n as f64));
        let p = compute_periodogram(&channel(h), 0).unwrap();
        let q = compute_periodogram(&channel(shifted), 0).unwrap();
        let scale = p.data.iter().map(|z| z.norm()).fold(0.0, f64::max);
        // The +j delay kernel moves the map n0 bins towards zero delay.
        for ((nn, mm), z) in q.data.indexed_iter() {
            let src = p.data[[(nn + n0) % n, mm]];
            prop_assert!((z.norm() - src.norm()).abs() <= 1e-9 * scale);
        }
    }

    #[test]
    fn real_channel_has_conjugate_symmetric_magnitude(n in 1usize..20, m in 1usize..20, f in 0u32..=1, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let h = Array2::from_shape_fn((n, m), |_| Complex64::new(rng.random_range(-1.0..1.0), 0.0));
        let p = compute_periodogram(&channel(h), f).unwrap();
        let (np, mp) = (p.rows(), p.cols());
        let scale = p.data.iter().map(|z| z.norm()).fold(0.0, f64::max);
        for ((nn, mm), z) in p.data.indexed_iter() {
            let mirror = p.data[[(np - nn) % np, (mp - mm) % mp]];
            prop_assert!((z.norm() - mirror.norm()).abs() <= 1e-9 * scale.max(1e-300));
        }
    }

    #[test]
    fn flip_is_an_involution_and_mirrors_columns(h in matrix(8, 16), raw in any::<bool>()) {
        let mode = if raw { FeatureMode::Raw } else { FeatureMode::Db };
        let t = extract_features(&compute_periodogram(&channel(h), 0).unwrap(), mode);
        let f = hflip(&t);
        prop_assert_eq!(hflip(&f), t.clone());
        for c in 0..2 {
            for n in 0..t.rows {
                for m in 0..t.cols {
                    prop_assert_eq!(f.at(n, m, c).to_bits(), t.at(n, t.cols - 1 - m, c).to_bits());
                }
            }
        }
    }
}

#[test]
fn masked_desk_frame_keeps_uplink_structure() {
    // The desk TDD pattern is a scaled copy of the full-scale one.
    let desk = RadioConfig::desk();
    assert_eq!(desk.tdd, TddPattern::DESK);
    assert_eq!(desk.symbols % desk.tdd.period_symbols, 0);
}
