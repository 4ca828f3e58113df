use crate::coherence::{coherence, CoherenceProfile};
use crate::error::{FeatureError, FeatureResult};
use crate::filterbank::FilterBank;
use crate::fourier::{real_fft_padded, Complex64};
use crate::gcc::{check_not_silent, crop_lags, fft_len_for, lag_grid, phat_cross_spectrum, CorrelationFeature};
use crate::welch::{segment_spectra, WelchConfig, WelchSpectra};

/// How the weighted pair features are combined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AscmMode {
    /// Plain weighted sum over pairs.
    #[default]
    Sum,
    /// Weighted sum divided by the number of pairs.
    Mean,
}

impl AscmMode {
    fn normalizer(self, pairs: usize) -> f64 {
        match self {
            AscmMode::Sum => 1.0,
            AscmMode::Mean if pairs > 0 => 1.0 / pairs as f64,
            AscmMode::Mean => 0.0,
        }
    }
}

/// Coherence-weighted combination of pair correlation features.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedTdoaFeature {
    pub values: Vec<f64>,
    pub lags: Vec<i64>,
    pub alpha: f64,
    pub mode: AscmMode,
    pub pair_weights: Vec<((usize, usize), f64)>,
}

/// `(mean over frequency of c_ij)^alpha`.
pub fn pair_weight(profile: &CoherenceProfile, alpha: f64) -> f64 {
    profile.mean().clamp(0.0, 1.0).powf(alpha)
}

fn check_alpha(alpha: f64) -> FeatureResult<()> {
    if alpha.is_finite() && alpha >= 0.0 {
        Ok(())
    } else {
        Err(FeatureError::Shape(format!("alpha must be finite and >= 0, got {alpha}")))
    }
}

/// Sums pair features, each scaled by its pair's mean coherence raised to
/// `alpha`. Feature `k` must belong to the same pair as profile `k`.
pub fn ascm_weight(
    features: &[CorrelationFeature],
    coherences: &[CoherenceProfile],
    alpha: f64,
    mode: AscmMode,
) -> FeatureResult<WeightedTdoaFeature> {
    check_alpha(alpha)?;
    if features.len() != coherences.len() {
        return Err(FeatureError::Alignment(format!(
            "{} features but {} coherence profiles",
            features.len(),
            coherences.len()
        )));
    }
    let first = features
        .first()
        .ok_or_else(|| FeatureError::Alignment("no pairs to weight".into()))?;
    let mut values = vec![0.0; first.values.len()];
    let mut pair_weights = Vec::with_capacity(features.len());
    for (f, c) in features.iter().zip(coherences) {
        if f.pair != c.pair {
            return Err(FeatureError::Alignment(format!(
                "feature pair {:?} does not match coherence pair {:?}",
                f.pair, c.pair
            )));
        }
        if f.lags != first.lags {
            return Err(FeatureError::Alignment(format!(
                "pair {:?} uses a different lag grid",
                f.pair
            )));
        }
        let w = pair_weight(c, alpha);
        for (v, x) in values.iter_mut().zip(&f.values) {
            *v += w * x;
        }
        pair_weights.push((f.pair, w));
    }
    let norm = mode.normalizer(features.len());
    values.iter_mut().for_each(|v| *v *= norm);
    Ok(WeightedTdoaFeature {
        values,
        lags: first.lags.clone(),
        alpha,
        mode,
        pair_weights,
    })
}

/// Per-filter coherence-weighted aggregates over every channel pair.
///
/// Row `p` equals the weighted feature built from filter `p` alone, so
/// `combine(w)` matches [`ascm_weight`] over filterbank features with
/// combination weights `w`. Since both weighting steps are linear, the pair
/// sum is taken on the PHAT spectra and only one inverse transform per filter
/// is needed.
#[derive(Debug, Clone, PartialEq)]
pub struct PerFilterAggregate {
    pub rows: Vec<Vec<f64>>,
    pub lags: Vec<i64>,
    pub alpha: f64,
    pub mode: AscmMode,
    pub pair_weights: Vec<((usize, usize), f64)>,
}

/// Coherence weight of every unordered channel pair, each oriented from the
/// smaller id to the larger one.
pub fn coherence_pair_weights(
    channels: &[&[f64]],
    ids: &[usize],
    welch: &WelchConfig,
    alpha: f64,
) -> FeatureResult<Vec<((usize, usize), f64)>> {
    check_alpha(alpha)?;
    check_channels(channels, ids)?;
    let segments = channels
        .iter()
        .map(|c| segment_spectra(c, welch))
        .collect::<FeatureResult<Vec<_>>>()?;
    let mut out = Vec::new();
    for a in 0..channels.len() {
        for b in a + 1..channels.len() {
            let (i, j) = if ids[a] <= ids[b] { (a, b) } else { (b, a) };
            let welch_ij = WelchSpectra::from_segments(&segments[i], &segments[j], welch).with_pair(ids[i], ids[j]);
            out.push(((ids[i], ids[j]), pair_weight(&coherence(&welch_ij)?, alpha)));
        }
    }
    Ok(out)
}

fn check_channels(channels: &[&[f64]], ids: &[usize]) -> FeatureResult<usize> {
    if channels.len() != ids.len() {
        return Err(FeatureError::Alignment(format!(
            "{} channels but {} ids",
            channels.len(),
            ids.len()
        )));
    }
    let len = channels.first().map_or(0, |c| c.len());
    if channels.iter().any(|c| c.len() != len) {
        return Err(FeatureError::Shape("channels differ in length".into()));
    }
    for c in channels {
        check_not_silent(c)?;
    }
    Ok(len)
}

impl PerFilterAggregate {
    /// Aggregates every unordered channel pair. `ids` labels the channels; each
    /// pair is oriented from the smaller id to the larger one. Fewer than two
    /// channels give all-zero rows.
    pub fn compute(
        channels: &[&[f64]],
        ids: &[usize],
        bank: &FilterBank,
        tau_max: usize,
        welch: &WelchConfig,
        alpha: f64,
        mode: AscmMode,
    ) -> FeatureResult<Self> {
        let weights = if channels.len() < 2 {
            check_alpha(alpha)?;
            Vec::new()
        } else {
            coherence_pair_weights(channels, ids, welch, alpha)?
        };
        Self::from_pair_weights(channels, ids, bank, tau_max, &weights, alpha, mode)
    }

    /// As [`PerFilterAggregate::compute`], with the pair weights supplied.
    /// `pair_weights` may cover more channels than given; every pair of the
    /// given channels must be present.
    pub fn from_pair_weights(
        channels: &[&[f64]],
        ids: &[usize],
        bank: &FilterBank,
        tau_max: usize,
        pair_weights: &[((usize, usize), f64)],
        alpha: f64,
        mode: AscmMode,
    ) -> FeatureResult<Self> {
        check_alpha(alpha)?;
        let lags = lag_grid(tau_max);
        if channels.len() < 2 {
            if channels.len() != ids.len() {
                return Err(FeatureError::Alignment(format!(
                    "{} channels but {} ids",
                    channels.len(),
                    ids.len()
                )));
            }
            return Ok(Self {
                rows: vec![vec![0.0; lags.len()]; bank.len()],
                lags,
                alpha,
                mode,
                pair_weights: Vec::new(),
            });
        }
        let len = check_channels(channels, ids)?;
        if tau_max >= len {
            return Err(FeatureError::Shape(format!(
                "tau_max {tau_max} must be below the signal length {len}"
            )));
        }

        let nfft = fft_len_for(len);
        let spectra: Vec<Vec<Complex64>> = channels.iter().map(|c| real_fft_padded(c, nfft)).collect();
        let mut accumulated = vec![Complex64::new(0.0, 0.0); nfft];
        let mut used = Vec::new();
        for a in 0..channels.len() {
            for b in a + 1..channels.len() {
                let (i, j) = if ids[a] <= ids[b] { (a, b) } else { (b, a) };
                let key = (ids[i], ids[j]);
                let w = pair_weights
                    .iter()
                    .find(|(p, _)| *p == key)
                    .map(|(_, w)| *w)
                    .ok_or_else(|| FeatureError::Alignment(format!("no weight for pair {key:?}")))?;
                for (acc, c) in accumulated.iter_mut().zip(phat_cross_spectrum(&spectra[i], &spectra[j])) {
                    *acc += c * w;
                }
                used.push((key, w));
            }
        }
        let norm = mode.normalizer(used.len());
        let rows = (0..bank.len())
            .map(|p| {
                let filtered = accumulated
                    .iter()
                    .enumerate()
                    .map(|(k, c)| c * (bank.bin_gain(p, k, nfft) * norm))
                    .collect();
                crop_lags(filtered, tau_max)
            })
            .collect();
        Ok(Self {
            rows,
            lags,
            alpha,
            mode,
            pair_weights: used,
        })
    }

    pub fn num_filters(&self) -> usize {
        self.rows.len()
    }

    pub fn feature_len(&self) -> usize {
        self.lags.len()
    }

    /// `sum_p weights[p] * rows[p]`.
    pub fn combine(&self, weights: &[f64]) -> FeatureResult<Vec<f64>> {
        if weights.len() != self.rows.len() {
            return Err(FeatureError::Alignment(format!(
                "{} weights for {} filters",
                weights.len(),
                self.rows.len()
            )));
        }
        let mut out = vec![0.0; self.lags.len()];
        for (row, w) in self.rows.iter().zip(weights) {
            for (o, r) in out.iter_mut().zip(row) {
                *o += w * r;
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::welch::WelchConfig;

    fn profile(pair: (usize, usize), value: f64) -> CoherenceProfile {
        let spectra = WelchSpectra {
            pair,
            config: WelchConfig::default(),
            num_segments: 2,
            psd_ii: vec![1.0; 3],
            psd_jj: vec![1.0; 3],
            csd_ij: vec![Complex64::new(value.sqrt(), 0.0); 3],
        };
        coherence(&spectra).unwrap()
    }

    fn feature(pair: (usize, usize), values: Vec<f64>) -> CorrelationFeature {
        let tau = values.len() / 2;
        CorrelationFeature {
            pair,
            values,
            lags: lag_grid(tau),
        }
    }

    #[test]
    fn alpha_zero_is_plain_sum() {
        let f = vec![feature((0, 1), vec![1.0, 2.0, 3.0]), feature((0, 2), vec![0.5, 0.0, -1.0])];
        let c = vec![profile((0, 1), 0.3), profile((0, 2), 0.0)];
        let w = ascm_weight(&f, &c, 0.0, AscmMode::Sum).unwrap();
        assert_eq!(w.values, vec![1.5, 2.0, 2.0]);
        let m = ascm_weight(&f, &c, 0.0, AscmMode::Mean).unwrap();
        assert_eq!(m.values, vec![0.75, 1.0, 1.0]);
    }

    #[test]
    fn mismatched_pairs_are_rejected() {
        let f = vec![feature((0, 1), vec![1.0, 2.0, 3.0])];
        let c = vec![profile((1, 2), 0.3)];
        assert!(matches!(
            ascm_weight(&f, &c, 1.0, AscmMode::Sum),
            Err(FeatureError::Alignment(_))
        ));
        assert!(matches!(
            ascm_weight(&f, &[], 1.0, AscmMode::Sum),
            Err(FeatureError::Alignment(_))
        ));
        assert!(ascm_weight(&f, &[profile((0, 1), 0.3)], -1.0, AscmMode::Sum).is_err());
    }

    #[test]
    fn single_channel_aggregate_is_zero() {
        let x: Vec<f64> = (0..600).map(|n| (n as f64 * 0.37).sin()).collect();
        let agg = PerFilterAggregate::compute(
            &[&x],
            &[3],
            &FilterBank::mel(4, 16_000).unwrap(),
            10,
            &WelchConfig::default(),
            1.0,
            AscmMode::Sum,
        )
        .unwrap();
        assert_eq!(agg.num_filters(), 4);
        assert!(agg.rows.iter().flatten().all(|v| *v == 0.0));
        assert!(agg.combine(&[1.0; 3]).is_err());
    }
}
