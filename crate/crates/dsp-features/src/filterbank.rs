use crate::error::{FeatureError, FeatureResult};

/// Frequency response of one filter, on normalized frequency
/// (cycles per sample, `0..=0.5`).
#[derive(Debug, Clone, PartialEq)]
pub enum FilterResponse {
    AllPass,
    /// Triangle rising from `lo` to 1 at `center` and back to 0 at `hi`.
    Triangle { lo: f64, center: f64, hi: f64 },
}

impl FilterResponse {
    pub fn gain(&self, freq: f64) -> f64 {
        match *self {
            FilterResponse::AllPass => 1.0,
            FilterResponse::Triangle { lo, center, hi } => {
                if freq <= lo || freq >= hi {
                    0.0
                } else if freq <= center {
                    (freq - lo) / (center - lo)
                } else {
                    (hi - freq) / (hi - center)
                }
            }
        }
    }
}

/// Bank of `P` filters applied to the phase-normalized cross-spectrum, with
/// one combination weight per filter.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterBank {
    filters: Vec<FilterResponse>,
    weights: Vec<f64>,
    pub trainable: bool,
}

fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

impl FilterBank {
    pub fn new(filters: Vec<FilterResponse>, weights: Vec<f64>) -> FeatureResult<Self> {
        if filters.is_empty() {
            return Err(FeatureError::InvalidFilterBank("need at least one filter".into()));
        }
        if filters.len() != weights.len() {
            return Err(FeatureError::InvalidFilterBank(format!(
                "{} filters but {} weights",
                filters.len(),
                weights.len()
            )));
        }
        for f in &filters {
            if let FilterResponse::Triangle { lo, center, hi } = *f {
                if !(lo.is_finite() && hi.is_finite() && lo >= 0.0 && lo < center && center < hi) {
                    return Err(FeatureError::InvalidFilterBank(format!(
                        "triangle edges must satisfy 0 <= lo < center < hi, got {lo} {center} {hi}"
                    )));
                }
            }
        }
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(FeatureError::InvalidFilterBank("non-finite weight".into()));
        }
        Ok(Self {
            filters,
            weights,
            trainable: false,
        })
    }

    /// A single all-pass filter with weight 1; reduces to plain GCC-PHAT.
    pub fn all_pass() -> Self {
        Self::new(vec![FilterResponse::AllPass], vec![1.0]).expect("valid bank")
    }

    /// `count` triangular filters evenly spaced on the mel scale between
    /// 50 Hz and Nyquist, each weighted `1 / count`.
    pub fn mel(count: usize, sample_rate: u32) -> FeatureResult<Self> {
        if count == 0 {
            return Err(FeatureError::InvalidFilterBank("need at least one filter".into()));
        }
        let fs = sample_rate as f64;
        let lo = hz_to_mel(50.0_f64.min(fs / 4.0));
        let hi = hz_to_mel(fs / 2.0);
        let edges: Vec<f64> = (0..count + 2)
            .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (count + 1) as f64) / fs)
            .collect();
        let filters = edges
            .windows(3)
            .map(|w| FilterResponse::Triangle {
                lo: w[0],
                center: w[1],
                hi: w[2],
            })
            .collect();
        Self::new(filters, vec![1.0 / count as f64; count])
    }

    pub fn len(&self) -> usize {
        self.filters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.filters.is_empty()
    }

    pub fn filters(&self) -> &[FilterResponse] {
        &self.filters
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn set_weights(&mut self, weights: &[f64]) -> FeatureResult<()> {
        if weights.len() != self.filters.len() || weights.iter().any(|w| !w.is_finite()) {
            return Err(FeatureError::InvalidFilterBank(format!(
                "expected {} finite weights",
                self.filters.len()
            )));
        }
        self.weights = weights.to_vec();
        Ok(())
    }

    /// Gain of filter `p` at DFT bin `k` of an `nfft`-point transform. Negative
    /// frequency bins mirror the positive ones so filtered spectra stay Hermitian.
    pub fn bin_gain(&self, p: usize, k: usize, nfft: usize) -> f64 {
        let folded = k.min(nfft - k);
        self.filters[p].gain(folded as f64 / nfft as f64)
    }
}
