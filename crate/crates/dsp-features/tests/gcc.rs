use dsp_features::{
    dft, estimate_tdoa, gcc_phat, idft, idft_real, ngcc_phat, ngcc_phat_responses, Complex64,
    FeatureError, FilterBank, FilterResponse,
};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn white(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| StandardNormal.sample(&mut rng)).collect()
}

/// `(s_i, s_j)` of length `n` with `s_j[t] = s_i[t - d]`, both cut from one
/// longer noise stream so neither has zero padding.
fn shifted_pair(n: usize, d: i64, pad: usize, seed: u64) -> (Vec<f64>, Vec<f64>) {
    let x = white(n + 2 * pad, seed);
    let start_j = (pad as i64 - d) as usize;
    (x[pad..pad + n].to_vec(), x[start_j..start_j + n].to_vec())
}

fn naive_dft(x: &[f64]) -> Vec<Complex64> {
    let n = x.len();
    (0..n)
        .map(|k| {
            x.iter()
                .enumerate()
                .map(|(t, v)| {
                    let phase = -2.0 * std::f64::consts::PI * (k * t % n) as f64 / n as f64;
                    Complex64::new(v * phase.cos(), v * phase.sin())
                })
                .sum()
        })
        .collect()
}

/// Normalized time-domain cross-correlation peak over `-tau..=tau`.
fn time_domain_peak(s_i: &[f64], s_j: &[f64], tau: i64) -> i64 {
    let n = s_i.len() as i64;
    let mut best = (f64::NEG_INFINITY, 0);
    for lag in -tau..=tau {
        let (mut dot, mut ei, mut ej) = (0.0, 0.0, 0.0);
        for t in 0..n {
            let u = t + lag;
            if (0..n).contains(&u) {
                dot += s_i[t as usize] * s_j[u as usize];
                ei += s_i[t as usize].powi(2);
                ej += s_j[u as usize].powi(2);
            }
        }
        let r = dot / (ei * ej).sqrt();
        if r > best.0 {
            best = (r, lag);
        }
    }
    best.1
}

#[test]
fn dft_matches_direct_summation() {
    let x = white(37, 11);
    let fast = dft(&x).unwrap();
    let slow = naive_dft(&x);
    for (a, b) in fast.iter().zip(&slow) {
        assert!((a - b).norm() < 1e-9, "{a} vs {b}");
    }
}

#[test]
fn parseval_holds() {
    for n in [1, 2, 15, 64, 100] {
        let x = white(n, n as u64);
        let time: f64 = x.iter().map(|v| v * v).sum();
        let freq: f64 = naive_dft(&x).iter().map(|v| v.norm_sqr()).sum::<f64>() / n as f64;
        let fast: f64 = dft(&x).unwrap().iter().map(|v| v.norm_sqr()).sum::<f64>() / n as f64;
        assert!((time - freq).abs() <= 1e-9 * time.max(1.0));
        assert!((time - fast).abs() <= 1e-9 * time.max(1.0));
    }
}

#[test]
fn self_correlation_peaks_at_zero_lag() {
    let x = white(1024, 2);
    let f = gcc_phat(&x, &x, 50).unwrap();
    assert_eq!(f.lags.len(), 101);
    assert_eq!(f.lags.first(), Some(&-50));
    assert!(f.lags.windows(2).all(|w| w[1] > w[0]));
    assert_eq!(estimate_tdoa(&f, 16_000.0), 0.0);
}

#[test]
fn shifted_noise_agrees_with_time_domain_oracle() {
    for (seed, d) in [(1u64, 7i64), (2, -13), (3, 0), (4, 25), (5, -25)] {
        let (s_i, s_j) = shifted_pair(800, d, 30, seed);
        let oracle = time_domain_peak(&s_i, &s_j, 25);
        assert_eq!(oracle, d);
        let f = gcc_phat(&s_i, &s_j, 25).unwrap();
        assert_eq!(estimate_tdoa(&f, 1.0) as i64, oracle);
    }
}

#[test]
fn forward_shift_gives_exact_delay_in_seconds() {
    let (s_i, s_j) = shifted_pair(4096, 37, 64, 9);
    let f = gcc_phat(&s_i, &s_j, 64).unwrap();
    assert_eq!(estimate_tdoa(&f, 16_000.0), 37.0 / 16_000.0);
}

#[test]
fn unrelated_noise_peaks_are_much_lower_than_matched_peaks() {
    let (mut matched, mut unrelated) = (0.0, 0.0);
    let seeds = 120;
    for seed in 0..seeds {
        let (s_i, s_j) = shifted_pair(1024, 5, 16, seed);
        let other = white(1024, 10_000 + seed);
        let peak = |v: Vec<f64>| v.into_iter().fold(f64::NEG_INFINITY, f64::max);
        matched += peak(gcc_phat(&s_i, &s_j, 16).unwrap().values);
        unrelated += peak(gcc_phat(&s_i, &other, 16).unwrap().values);
    }
    assert!(unrelated < 0.5 * matched, "{unrelated} vs {matched}");
}

#[test]
fn silent_channel_is_rejected() {
    let x = white(128, 1);
    assert!(matches!(
        gcc_phat(&[0.0; 128], &x, 8),
        Err(FeatureError::DegenerateSignal(_))
    ));
    let bank = FilterBank::mel(4, 16_000).unwrap();
    assert!(matches!(
        ngcc_phat(&x, &[0.0; 128], &bank, 8),
        Err(FeatureError::DegenerateSignal(_))
    ));
}

#[test]
fn all_pass_bank_reduces_to_gcc_phat() {
    let (s_i, s_j) = shifted_pair(700, -4, 10, 21);
    let plain = gcc_phat(&s_i, &s_j, 10).unwrap();
    let filtered = ngcc_phat(&s_i, &s_j, &FilterBank::all_pass(), 10).unwrap();
    for (a, b) in plain.values.iter().zip(&filtered.values) {
        assert!((a - b).abs() < 1e-9);
    }
}

#[test]
fn filter_responses_combine_linearly() {
    let (s_i, s_j) = shifted_pair(512, 3, 10, 8);
    let low = FilterResponse::Triangle { lo: 0.0, center: 0.1, hi: 0.25 };
    let high = FilterResponse::Triangle { lo: 0.15, center: 0.3, hi: 0.5 };
    let (a, b) = (0.7, -1.3);
    let pair = FilterBank::new(vec![low.clone(), high.clone()], vec![a, b]).unwrap();
    let combined = ngcc_phat(&s_i, &s_j, &pair, 10).unwrap();
    let only_low = ngcc_phat(&s_i, &s_j, &FilterBank::new(vec![low], vec![1.0]).unwrap(), 10).unwrap();
    let only_high = ngcc_phat(&s_i, &s_j, &FilterBank::new(vec![high], vec![1.0]).unwrap(), 10).unwrap();
    for k in 0..combined.values.len() {
        let expected = a * only_low.values[k] + b * only_high.values[k];
        assert!((combined.values[k] - expected).abs() < 1e-9);
    }
    assert_eq!(ngcc_phat_responses(&s_i, &s_j, &pair, 10).unwrap().len(), 2);
}

#[test]
fn phat_spectrum_has_unit_magnitude() {
    // an impulse pair: every bin of the normalized cross-spectrum is a pure phase
    let mut s_i = vec![0.0; 64];
    let mut s_j = vec![0.0; 64];
    s_i[3] = 1.0;
    s_j[10] = 2.0;
    let f = gcc_phat(&s_i, &s_j, 20).unwrap();
    let peak = estimate_tdoa(&f, 1.0);
    assert_eq!(peak, 7.0);
    // a unit-magnitude linear-phase spectrum inverts to a unit impulse
    assert!((f.values[20 + 7] - 1.0).abs() < 1e-9);
    assert!(f.values.iter().enumerate().all(|(k, v)| k == 27 || v.abs() < 1e-9));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn inverse_undoes_forward(seed in any::<u64>(), n in 1usize..300) {
        let x = white(n, seed);
        let back = idft_real(&dft(&x).unwrap()).unwrap();
        for (a, b) in x.iter().zip(&back) {
            prop_assert!((a - b).abs() < 1e-9);
        }
        let imag = idft(&dft(&x).unwrap()).unwrap();
        prop_assert!(imag.iter().all(|v| v.im.abs() < 1e-9));
    }

    #[test]
    fn integer_shift_is_recovered_exactly(seed in any::<u64>(), tau in 4usize..40, frac in -1.0f64..=1.0) {
        let d = (frac * tau as f64).round() as i64;
        let (s_i, s_j) = shifted_pair(16 * tau, d, tau, seed);
        let f = gcc_phat(&s_i, &s_j, tau).unwrap();
        prop_assert_eq!(estimate_tdoa(&f, 1.0) as i64, d);
    }

    #[test]
    fn swapping_channels_reverses_lags(seed in any::<u64>(), d in -10i64..=10) {
        let (s_i, s_j) = shifted_pair(400, d, 12, seed);
        let forward = gcc_phat(&s_i, &s_j, 12).unwrap();
        let backward = gcc_phat(&s_j, &s_i, 12).unwrap().reversed();
        for (a, b) in forward.values.iter().zip(&backward.values) {
            prop_assert!((a - b).abs() < 1e-9);
        }
    }
}
