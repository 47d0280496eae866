use isac_atr::dataset::{class_weights, generate_dataset, stratified_split, DatasetManifest};
use isac_atr::model::{evaluate, DetectorConfig};
use isac_atr::search::{
    ledger_csv, median_loss, rank_trials, run_search, sample_config, SearchOptions, SearchSpace, TrialStatus,
};
use isac_atr::seed::rng_for;
use isac_atr::Error;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Counts per set element must sit within 3 sigma of n/k, and the
/// chi-square statistic below the 0.999 quantile for k-1 degrees of freedom.
fn check_uniform<T: PartialEq + std::fmt::Debug>(draws: &[T], set: &[T]) {
    let n = draws.len() as f64;
    let k = set.len() as f64;
    let p = 1.0 / k;
    let sigma = (n * p * (1.0 - p)).sqrt();
    let mut chi2 = 0.0;
    for v in set {
        let c = draws.iter().filter(|d| *d == v).count() as f64;
        assert!((c - n * p).abs() < 3.0 * sigma, "{:?}: {} of {}", v, c, n);
        chi2 += (c - n * p).powi(2) / (n * p);
    }
    assert_eq!(draws.iter().filter(|d| !set.contains(d)).count(), 0);
    // 0.999 quantiles for 1 and 2 degrees of freedom.
    let crit = if set.len() == 2 { 10.83 } else { 13.82 };
    assert!(chi2 < crit, "chi-square {} for {:?}", chi2, set);
}

#[test]
fn sampled_fields_are_uniform_over_their_sets() {
    let space = SearchSpace::default();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let cfgs: Vec<DetectorConfig> = (0..10_000).map(|_| sample_config(&space, 0, &mut rng).unwrap()).collect();
    let field = |f: fn(&DetectorConfig) -> usize| cfgs.iter().map(f).collect::<Vec<_>>();
    check_uniform(&field(|c| c.blocks), &[2, 3, 4]);
    check_uniform(&field(|c| c.kernel), &[7, 5, 3]);
    check_uniform(&field(|c| c.conv_stride), &[2, 1]);
    check_uniform(&field(|c| c.out_channels), &[16, 8, 4]);
    check_uniform(&field(|c| c.pool_kernel), &[2, 1]);
    check_uniform(&field(|c| c.pool_stride), &[2, 1]);
    check_uniform(&field(|c| c.hidden), &[16, 32, 64]);
    let drops: Vec<u64> = cfgs.iter().map(|c| c.dropout.to_bits()).collect();
    check_uniform(&drops, &[0.8f64.to_bits(), 0.5f64.to_bits()]);
}

#[test]
fn first_kernel_follows_padding_factor() {
    let space = SearchSpace::default();
    for (f, k) in [(0, 3), (1, 5), (2, 7)] {
        let mut rng = ChaCha8Rng::seed_from_u64(f as u64);
        for _ in 0..200 {
            let c = sample_config(&space, f, &mut rng).unwrap();
            assert_eq!(c.first_kernel, k);
            assert_eq!(c.padding_factor, f);
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    assert!(sample_config(&space, 3, &mut rng).is_err());
}

#[test]
fn fixed_seed_gives_identical_sequence() {
    let space = SearchSpace::default();
    let draw = |seed| {
        let mut rng = rng_for(seed, 5, 0);
        (0..50).map(|_| sample_config(&space, 1, &mut rng).unwrap()).collect::<Vec<_>>()
    };
    assert_eq!(draw(3), draw(3));
    assert_ne!(draw(3), draw(4));
}

#[test]
fn empty_space_list_is_rejected() {
    let space = SearchSpace {
        hidden: vec![],
        ..SearchSpace::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    assert!(matches!(sample_config(&space, 0, &mut rng), Err(Error::Config(_))));
}

fn tiny_split() -> (isac_atr::dataset::Dataset, isac_atr::dataset::Dataset, Vec<f64>) {
    let mut m = DatasetManifest::with_counts(&[5; 8]);
    m.radio = m.radio.with_dims(16, 16);
    m.radio.tdd.period_symbols = 8;
    m.seed = 4;
    let data = generate_dataset(&m).unwrap();
    let (train, test) = stratified_split(&data, 0.8, 4).unwrap();
    let w = class_weights(&train).unwrap();
    (train, test, w)
}

#[test]
fn single_trial_wins_trivially() {
    let (train, test, w) = tiny_split();
    let opts = SearchOptions {
        trials: 1,
        epochs: 1,
        injected: vec![DetectorConfig::optimized(0).unwrap()],
        ..SearchOptions::default()
    };
    let out = run_search(&SearchSpace::default(), &train, &test, &w, &opts).unwrap();
    assert_eq!(out.ranking, vec![0]);
    assert_eq!(out.best().status, TrialStatus::Ok);
    let r = evaluate(&out.best_model, &test, &w).unwrap();
    assert!((r.mean_loss - out.best().test_loss).abs() < 1e-6);
}

#[test]
fn small_search_is_reproducible_and_ranked() {
    let (train, test, w) = tiny_split();
    let opts = SearchOptions {
        trials: 6,
        epochs: 2,
        seed: 9,
        ..SearchOptions::default()
    };
    let a = run_search(&SearchSpace::default(), &train, &test, &w, &opts).unwrap();
    let b = run_search(&SearchSpace::default(), &train, &test, &w, &opts).unwrap();
    assert_eq!(ledger_csv(&a.trials), ledger_csv(&b.trials));
    assert!(a.best_model.same_state(&b.best_model));
    assert_eq!(a.ranking, rank_trials(&a.trials));
    let best = a.best().test_loss;
    for t in a.trials.iter().filter(|t| t.status == TrialStatus::Ok) {
        assert!(best <= t.test_loss);
    }
    assert!(best <= median_loss(&a.trials).unwrap());
    let seeds: std::collections::HashSet<u64> = a.trials.iter().map(|t| t.seed).collect();
    assert_eq!(seeds.len(), a.trials.len());
}

#[test]
fn all_infeasible_search_fails() {
    let (train, test, w) = tiny_split();
    // Four strided blocks cannot fit a 16x16 map.
    let space = SearchSpace {
        blocks: vec![4],
        conv_strides: vec![2],
        pool_strides: vec![2],
        pool_kernels: vec![2],
        ..SearchSpace::default()
    };
    let opts = SearchOptions {
        trials: 3,
        epochs: 1,
        ..SearchOptions::default()
    };
    assert!(matches!(run_search(&space, &train, &test, &w, &opts), Err(Error::SearchFailed(_))));
}

#[test]
fn over_budget_configs_are_recorded_infeasible() {
    let (train, test, w) = tiny_split();
    let opts = SearchOptions {
        trials: 2,
        epochs: 1,
        mac_budget: Some(1),
        injected: vec![DetectorConfig::optimized(0).unwrap()],
        ..SearchOptions::default()
    };
    let err = run_search(&SearchSpace::default(), &train, &test, &w, &opts).unwrap_err();
    assert!(matches!(err, Error::SearchFailed(_)));
    let opts = SearchOptions {
        mac_budget: None,
        ..opts
    };
    let out = run_search(&SearchSpace::default(), &train, &test, &w, &opts).unwrap();
    assert_eq!(out.trials[0].config, DetectorConfig::optimized(0).unwrap());
    assert_eq!(out.trials[0].status, TrialStatus::Ok);
    assert!(out.trials[0].macs > 1);
}
