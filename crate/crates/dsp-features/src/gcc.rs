use crate::error::{FeatureError, FeatureResult};
use crate::filterbank::FilterBank;
use crate::fourier::{inverse_plan, real_fft_padded, Complex64};

/// Bins whose cross-spectrum magnitude is below this fraction of the largest
/// magnitude are divided by the floor instead of their own magnitude.
pub const PHAT_FLOOR: f64 = 1e-12;

/// Correlation response of one microphone pair over integer lags
/// `-tau_max..=tau_max`. A positive lag means the second channel lags the first.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationFeature {
    pub pair: (usize, usize),
    pub values: Vec<f64>,
    pub lags: Vec<i64>,
}

impl CorrelationFeature {
    pub fn tau_max(&self) -> usize {
        self.values.len() / 2
    }

    pub fn with_pair(mut self, i: usize, j: usize) -> Self {
        self.pair = (i, j);
        self
    }

    /// The same response seen from the other channel's side.
    pub fn reversed(&self) -> Self {
        let mut values = self.values.clone();
        values.reverse();
        Self {
            pair: (self.pair.1, self.pair.0),
            values,
            lags: self.lags.clone(),
        }
    }
}

pub(crate) fn lag_grid(tau_max: usize) -> Vec<i64> {
    (-(tau_max as i64)..=tau_max as i64).collect()
}

pub(crate) fn fft_len_for(n: usize) -> usize {
    (2 * n).next_power_of_two()
}

pub(crate) fn check_pair(s_i: &[f64], s_j: &[f64], tau_max: usize) -> FeatureResult<()> {
    if s_i.len() != s_j.len() {
        return Err(FeatureError::Shape(format!(
            "channels differ in length: {} vs {}",
            s_i.len(),
            s_j.len()
        )));
    }
    if s_i.is_empty() {
        return Err(FeatureError::Shape("empty channels".into()));
    }
    if tau_max >= s_i.len() {
        return Err(FeatureError::Shape(format!(
            "tau_max {tau_max} must be below the signal length {}",
            s_i.len()
        )));
    }
    check_not_silent(s_i)?;
    check_not_silent(s_j)
}

pub(crate) fn check_not_silent(s: &[f64]) -> FeatureResult<()> {
    if s.iter().all(|v| *v == 0.0) {
        return Err(FeatureError::DegenerateSignal(
            "all-zero channel has no phase".into(),
        ));
    }
    if s.iter().any(|v| !v.is_finite()) {
        return Err(FeatureError::DegenerateSignal("non-finite samples".into()));
    }
    Ok(())
}

/// `conj(X_i) X_j / |conj(X_i) X_j|` with the magnitude floored at
/// [`PHAT_FLOOR`] times the largest magnitude.
pub(crate) fn phat_cross_spectrum(x_i: &[Complex64], x_j: &[Complex64]) -> Vec<Complex64> {
    let mut cross: Vec<Complex64> = x_i.iter().zip(x_j).map(|(a, b)| a.conj() * b).collect();
    let peak = cross.iter().map(|c| c.norm()).fold(0.0, f64::max);
    let floor = PHAT_FLOOR * peak;
    for c in cross.iter_mut() {
        let mag = c.norm().max(floor);
        if mag > 0.0 {
            *c /= mag;
        }
    }
    cross
}

/// Inverse transform of a lag-domain spectrum, cropped to `-tau_max..=tau_max`.
pub(crate) fn crop_lags(mut spectrum: Vec<Complex64>, tau_max: usize) -> Vec<f64> {
    let nfft = spectrum.len();
    inverse_plan(nfft).process(&mut spectrum);
    let scale = 1.0 / nfft as f64;
    (-(tau_max as i64)..=tau_max as i64)
        .map(|lag| spectrum[lag.rem_euclid(nfft as i64) as usize].re * scale)
        .collect()
}

/// Generalized cross-correlation with phase transform.
///
/// The cross-spectrum of the two zero-padded channels is normalized to unit
/// magnitude per bin and transformed back to lags.
pub fn gcc_phat(s_i: &[f64], s_j: &[f64], tau_max: usize) -> FeatureResult<CorrelationFeature> {
    check_pair(s_i, s_j, tau_max)?;
    let nfft = fft_len_for(s_i.len());
    let cross = phat_cross_spectrum(&real_fft_padded(s_i, nfft), &real_fft_padded(s_j, nfft));
    Ok(CorrelationFeature {
        pair: (0, 1),
        values: crop_lags(cross, tau_max),
        lags: lag_grid(tau_max),
    })
}

/// One PHAT response per filter of `bank`, unweighted.
pub fn ngcc_phat_responses(
    s_i: &[f64],
    s_j: &[f64],
    bank: &FilterBank,
    tau_max: usize,
) -> FeatureResult<Vec<CorrelationFeature>> {
    check_pair(s_i, s_j, tau_max)?;
    let nfft = fft_len_for(s_i.len());
    let cross = phat_cross_spectrum(&real_fft_padded(s_i, nfft), &real_fft_padded(s_j, nfft));
    Ok((0..bank.len())
        .map(|p| {
            let filtered = cross
                .iter()
                .enumerate()
                .map(|(k, c)| c * bank.bin_gain(p, k, nfft))
                .collect();
            CorrelationFeature {
                pair: (0, 1),
                values: crop_lags(filtered, tau_max),
                lags: lag_grid(tau_max),
            }
        })
        .collect())
}

/// Filterbank GCC-PHAT: the weighted sum of per-filter PHAT responses.
pub fn ngcc_phat(
    s_i: &[f64],
    s_j: &[f64],
    bank: &FilterBank,
    tau_max: usize,
) -> FeatureResult<CorrelationFeature> {
    let responses = ngcc_phat_responses(s_i, s_j, bank, tau_max)?;
    let mut values = vec![0.0; 2 * tau_max + 1];
    for (resp, w) in responses.iter().zip(bank.weights()) {
        for (v, r) in values.iter_mut().zip(&resp.values) {
            *v += w * r;
        }
    }
    Ok(CorrelationFeature {
        pair: (0, 1),
        values,
        lags: lag_grid(tau_max),
    })
}

/// Peak-picked delay in seconds. Ties go to the smaller `|lag|`, then to the
/// negative lag.
pub fn estimate_tdoa(feature: &CorrelationFeature, sample_rate: f64) -> f64 {
    let mut best: Option<(f64, i64)> = None;
    for (v, lag) in feature.values.iter().zip(&feature.lags) {
        let better = match best {
            None => true,
            Some((bv, bl)) => *v > bv || (*v == bv && lag.abs() < bl.abs()),
        };
        if better {
            best = Some((*v, *lag));
        }
    }
    best.map_or(0.0, |(_, lag)| lag as f64 / sample_rate)
}
