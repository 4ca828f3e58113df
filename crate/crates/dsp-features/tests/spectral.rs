use dsp_features::{
    ascm_weight, coherence, gcc_phat, ngcc_phat, AscmMode, Complex64, CorrelationFeature,
    FeatureError, FilterBank, PerFilterAggregate, WelchConfig, WelchSpectra, Window, welch_psd,
};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn white(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| StandardNormal.sample(&mut rng)).collect()
}

/// Signal length giving exactly `segments` half-overlapping 256-sample segments.
fn len_for_segments(segments: usize) -> usize {
    256 + 128 * (segments - 1)
}

#[test]
fn white_noise_psd_is_flat_at_twice_the_variance() {
    // one-sided density of unit-variance white noise, per unit normalized frequency
    let expected = 2.0;
    let cfg = WelchConfig::default();
    let n = len_for_segments(40);
    let mut per_bin = vec![0.0; cfg.num_bins()];
    let seeds = 50;
    for seed in 0..seeds {
        let x = white(n, seed);
        let w = welch_psd(&x, &x, &cfg).unwrap();
        assert_eq!(w.num_segments, 40);
        assert!(w.psd_ii.iter().all(|v| *v >= 0.0));
        let interior = &w.psd_ii[1..cfg.num_bins() - 1];
        let mean = interior.iter().sum::<f64>() / interior.len() as f64;
        assert!((mean - expected).abs() / expected < 0.2, "seed {seed}: {mean}");
        for (acc, v) in per_bin.iter_mut().zip(&w.psd_ii) {
            *acc += v / seeds as f64;
        }
    }
    for v in &per_bin[1..cfg.num_bins() - 1] {
        assert!((v - expected).abs() / expected < 0.2, "{v}");
    }
}

#[test]
fn rectangular_window_matches_periodogram_oracle() {
    let cfg = WelchConfig {
        segment_len: 8,
        overlap: 0,
        window: Window::Rectangular,
    };
    let x = white(16, 4);
    let y = white(16, 5);
    let w = welch_psd(&x, &y, &cfg).unwrap();
    // direct two-segment average of X conj(Y), one-sided, divided by segment length
    for k in 0..5 {
        let mut acc = Complex64::new(0.0, 0.0);
        for seg in 0..2 {
            let spec = |s: &[f64]| -> Complex64 {
                (0..8)
                    .map(|t| {
                        let ph = -2.0 * std::f64::consts::PI * (k * t) as f64 / 8.0;
                        Complex64::new(ph.cos(), ph.sin()) * s[seg * 8 + t]
                    })
                    .sum()
            };
            acc += spec(&x) * spec(&y).conj();
        }
        let side = if k == 0 || k == 4 { 1.0 } else { 2.0 };
        let expected = acc * (side / 8.0 / 2.0);
        assert!((w.csd_ij[k] - expected).norm() < 1e-12);
    }
}

#[test]
fn identical_and_scaled_channels_are_fully_coherent() {
    let x = white(4096, 1);
    let doubled: Vec<f64> = x.iter().map(|v| 2.0 * v).collect();
    let cfg = WelchConfig::default();
    for other in [&x, &doubled] {
        let c = coherence(&welch_psd(&x, other, &cfg).unwrap()).unwrap();
        assert!(c.values.iter().all(|v| (v - 1.0).abs() < 1e-9));
    }
    let same = welch_psd(&x, &x, &cfg).unwrap();
    for k in 0..same.psd_ii.len() {
        assert_eq!(same.csd_ij[k].re, same.psd_ii[k]);
    }
}

#[test]
fn independent_noise_has_low_coherence() {
    let n = len_for_segments(64);
    for seed in 0..100 {
        let w = welch_psd(&white(n, seed), &white(n, seed + 1000), &WelchConfig::default()).unwrap();
        assert_eq!(w.num_segments, 64);
        let c = coherence(&w).unwrap();
        assert!(c.mean() < 0.2, "seed {seed}: {}", c.mean());
    }
}

#[test]
fn silent_channel_has_no_coherence() {
    let x = white(1024, 3);
    let w = welch_psd(&x, &vec![0.0; 1024], &WelchConfig::default()).unwrap();
    assert!(matches!(coherence(&w), Err(FeatureError::DegenerateSignal(_))));
}

#[test]
fn hand_weighted_pairs() {
    let tau = 3;
    let lags: Vec<i64> = (-3..=3).collect();
    let f1 = CorrelationFeature { pair: (0, 1), values: vec![0.1, 0.2, 0.3, 0.9, 0.3, 0.2, 0.1], lags: lags.clone() };
    let f2 = CorrelationFeature { pair: (0, 2), values: vec![-0.5, 0.0, 0.5, 1.0, 0.25, 0.0, -0.25], lags };
    let profile = |pair, c: f64| {
        coherence(&WelchSpectra {
            pair,
            config: WelchConfig::default(),
            num_segments: 2,
            psd_ii: vec![1.0; 4],
            psd_jj: vec![1.0; 4],
            csd_ij: vec![Complex64::new(c.sqrt(), 0.0); 4],
        })
        .unwrap()
    };
    let cs = [profile((0, 1), 0.9), profile((0, 2), 0.1)];
    let w = ascm_weight(&[f1.clone(), f2.clone()], &cs, 1.0, AscmMode::Sum).unwrap();
    for k in 0..=2 * tau {
        let expected = 0.9 * f1.values[k] + 0.1 * f2.values[k];
        assert!((w.values[k] - expected).abs() < 1e-12);
    }
    assert_eq!(w.pair_weights.len(), 2);

    let single = ascm_weight(&[f1.clone()], &cs[..1], 2.0, AscmMode::Sum).unwrap();
    for k in 0..=2 * tau {
        assert!((single.values[k] - 0.81 * f1.values[k]).abs() < 1e-12);
    }
}

fn pairs_of(channels: &[Vec<f64>], tau: usize, bank: &FilterBank) -> (Vec<CorrelationFeature>, Vec<dsp_features::CoherenceProfile>) {
    let cfg = WelchConfig::default();
    let mut features = Vec::new();
    let mut profiles = Vec::new();
    for i in 0..channels.len() {
        for j in i + 1..channels.len() {
            features.push(ngcc_phat(&channels[i], &channels[j], bank, tau).unwrap().with_pair(i, j));
            profiles.push(coherence(&welch_psd(&channels[i], &channels[j], &cfg).unwrap().with_pair(i, j)).unwrap());
        }
    }
    (features, profiles)
}

#[test]
fn spectral_aggregate_matches_pairwise_route() {
    let base = white(1300, 77);
    let channels: Vec<Vec<f64>> = (0..4)
        .map(|m| {
            let noise = white(1200, 500 + m as u64);
            (0..1200).map(|t| base[t + 10 * m] + 0.3 * (m as f64) * noise[t]).collect()
        })
        .collect();
    let bank = {
        let mut b = FilterBank::mel(6, 16_000).unwrap();
        b.set_weights(&[0.3, -0.2, 0.5, 1.1, 0.0, 0.7]).unwrap();
        b
    };
    let refs: Vec<&[f64]> = channels.iter().map(|c| c.as_slice()).collect();
    for mode in [AscmMode::Sum, AscmMode::Mean] {
        let agg = PerFilterAggregate::compute(&refs, &[0, 1, 2, 3], &bank, 40, &WelchConfig::default(), 1.5, mode).unwrap();
        let fast = agg.combine(bank.weights()).unwrap();
        let (features, profiles) = pairs_of(&channels, 40, &bank);
        let direct = ascm_weight(&features, &profiles, 1.5, mode).unwrap();
        assert_eq!(agg.pair_weights, direct.pair_weights);
        for (a, b) in fast.iter().zip(&direct.values) {
            assert!((a - b).abs() < 1e-9, "{a} vs {b}");
        }
    }
}

#[test]
fn aggregate_orients_pairs_by_id() {
    let x = white(1024, 1);
    let shifted: Vec<f64> = std::iter::repeat(0.0).take(6).chain(x[..1018].iter().copied()).collect();
    let bank = FilterBank::all_pass();
    let cfg = WelchConfig::default();
    let forward = PerFilterAggregate::compute(&[&x, &shifted], &[2, 5], &bank, 10, &cfg, 0.0, AscmMode::Sum).unwrap();
    let swapped = PerFilterAggregate::compute(&[&shifted, &x], &[5, 2], &bank, 10, &cfg, 0.0, AscmMode::Sum).unwrap();
    assert_eq!(forward.pair_weights[0].0, (2, 5));
    assert_eq!(swapped.pair_weights[0].0, (2, 5));
    for (a, b) in forward.rows[0].iter().zip(&swapped.rows[0]) {
        assert!((a - b).abs() < 1e-12);
    }
    let plain = gcc_phat(&x, &shifted, 10).unwrap();
    for (a, b) in forward.rows[0].iter().zip(&plain.values) {
        assert!((a - b).abs() < 1e-9);
    }
}

#[test]
fn precomputed_weights_restrict_to_a_channel_subset() {
    let channels: Vec<Vec<f64>> = (0..4).map(|m| white(900, 40 + m)).collect();
    let refs: Vec<&[f64]> = channels.iter().map(|c| c.as_slice()).collect();
    let cfg = WelchConfig::default();
    let bank = FilterBank::mel(3, 16_000).unwrap();
    let all = dsp_features::coherence_pair_weights(&refs, &[0, 1, 2, 3], &cfg, 1.0).unwrap();
    assert_eq!(all.len(), 6);
    let subset = [refs[0], refs[2], refs[3]];
    let direct = PerFilterAggregate::compute(&subset, &[0, 2, 3], &bank, 20, &cfg, 1.0, AscmMode::Mean).unwrap();
    let reused = PerFilterAggregate::from_pair_weights(&subset, &[0, 2, 3], &bank, 20, &all, 1.0, AscmMode::Mean).unwrap();
    assert_eq!(direct, reused);
    assert!(matches!(
        PerFilterAggregate::from_pair_weights(&subset, &[0, 2, 3], &bank, 20, &all[..1], 1.0, AscmMode::Mean),
        Err(FeatureError::Alignment(_))
    ));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn coherence_is_bounded_and_gain_invariant(seed in any::<u64>(), mix in 0.0f64..1.0, g1 in 0.01f64..100.0, g2 in 0.01f64..100.0) {
        let a = white(1500, seed);
        let b = white(1500, seed ^ 0xABCD);
        let y: Vec<f64> = a.iter().zip(&b).map(|(u, v)| mix * u + (1.0 - mix) * v).collect();
        let cfg = WelchConfig::default();
        let c = coherence(&welch_psd(&a, &y, &cfg).unwrap()).unwrap();
        prop_assert!(c.values.iter().all(|v| *v >= 0.0 && *v <= 1.0 + 1e-9));
        let ga: Vec<f64> = a.iter().map(|v| g1 * v).collect();
        let gy: Vec<f64> = y.iter().map(|v| g2 * v).collect();
        let scaled = coherence(&welch_psd(&ga, &gy, &cfg).unwrap()).unwrap();
        for (u, v) in c.values.iter().zip(&scaled.values) {
            prop_assert!((u - v).abs() < 1e-9);
        }
        let own = coherence(&welch_psd(&a, &a, &cfg).unwrap()).unwrap();
        prop_assert!(own.values.iter().all(|v| (v - 1.0).abs() < 1e-9));
    }

    #[test]
    fn weighting_is_linear_in_features(
        v1 in prop::collection::vec(-1.0f64..1.0, 9),
        v2 in prop::collection::vec(-1.0f64..1.0, 9),
        u1 in prop::collection::vec(-1.0f64..1.0, 9),
        s in -3.0f64..3.0,
        c in 0.0f64..1.0,
        alpha in 0.0f64..3.0,
    ) {
        let lags: Vec<i64> = (-4..=4).collect();
        let feat = |pair, values: Vec<f64>| CorrelationFeature { pair, values, lags: lags.clone() };
        let prof = |pair| coherence(&WelchSpectra {
            pair,
            config: WelchConfig::default(),
            num_segments: 2,
            psd_ii: vec![1.0; 3],
            psd_jj: vec![1.0; 3],
            csd_ij: vec![Complex64::new(c.sqrt(), 0.0); 3],
        }).unwrap();
        let profiles = [prof((0, 1)), prof((1, 2))];
        let run = |a: Vec<f64>| ascm_weight(&[feat((0, 1), a), feat((1, 2), v2.clone())], &profiles, alpha, AscmMode::Sum).unwrap().values;
        let combo: Vec<f64> = v1.iter().zip(&u1).map(|(a, b)| a + s * b).collect();
        let lhs = run(combo);
        let base = run(v1.clone());
        let zero = run(vec![0.0; 9]);
        let other = run(u1.clone());
        for k in 0..9 {
            let rhs = base[k] + s * (other[k] - zero[k]);
            prop_assert!((lhs[k] - rhs).abs() < 1e-12);
        }
    }
}
