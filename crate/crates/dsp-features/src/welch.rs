use std::f64::consts::PI;

use crate::error::{FeatureError, FeatureResult};
use crate::fourier::{real_fft_padded, Complex64};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Window {
    #[default]
    Hann,
    Rectangular,
}

impl Window {
    /// Periodic window coefficients.
    pub fn coefficients(self, len: usize) -> Vec<f64> {
        match self {
            Window::Rectangular => vec![1.0; len],
            Window::Hann => (0..len)
                .map(|n| 0.5 - 0.5 * (2.0 * PI * n as f64 / len as f64).cos())
                .collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WelchConfig {
    pub segment_len: usize,
    pub overlap: usize,
    pub window: Window,
}

impl Default for WelchConfig {
    fn default() -> Self {
        Self {
            segment_len: 256,
            overlap: 128,
            window: Window::Hann,
        }
    }
}

impl WelchConfig {
    pub fn num_segments(&self, len: usize) -> usize {
        if self.segment_len == 0 || len < self.segment_len || self.overlap >= self.segment_len {
            return 0;
        }
        1 + (len - self.segment_len) / (self.segment_len - self.overlap)
    }

    pub fn num_bins(&self) -> usize {
        self.segment_len / 2 + 1
    }

    fn validate(&self, len: usize) -> FeatureResult<()> {
        if self.segment_len == 0 || self.segment_len > len {
            return Err(FeatureError::Shape(format!(
                "segment length {} must be in 1..={len}",
                self.segment_len
            )));
        }
        if self.overlap >= self.segment_len {
            return Err(FeatureError::Shape(format!(
                "overlap {} must be below the segment length {}",
                self.overlap, self.segment_len
            )));
        }
        let segments = self.num_segments(len);
        if segments < 2 {
            return Err(FeatureError::InsufficientData(format!(
                "{segments} Welch segment(s); coherence needs at least 2"
            )));
        }
        Ok(())
    }

    /// Per-bin factor turning `|X|^2` of a windowed segment into a one-sided
    /// density in units of power per (cycle / sample).
    fn density_scale(&self, bin: usize) -> f64 {
        let power: f64 = self
            .window
            .coefficients(self.segment_len)
            .iter()
            .map(|w| w * w)
            .sum();
        let one_sided = if bin == 0 || (self.segment_len % 2 == 0 && bin == self.segment_len / 2) {
            1.0
        } else {
            2.0
        };
        one_sided / power
    }
}

/// Windowed one-sided spectra of every Welch segment of a signal.
pub(crate) fn segment_spectra(signal: &[f64], config: &WelchConfig) -> FeatureResult<Vec<Vec<Complex64>>> {
    config.validate(signal.len())?;
    let window = config.window.coefficients(config.segment_len);
    let step = config.segment_len - config.overlap;
    let bins = config.num_bins();
    Ok((0..config.num_segments(signal.len()))
        .map(|s| {
            let seg: Vec<f64> = signal[s * step..s * step + config.segment_len]
                .iter()
                .zip(&window)
                .map(|(x, w)| x * w)
                .collect();
            let mut spec = real_fft_padded(&seg, config.segment_len);
            spec.truncate(bins);
            spec
        })
        .collect())
}

/// Averaged auto and cross spectra of a channel pair.
#[derive(Debug, Clone, PartialEq)]
pub struct WelchSpectra {
    pub pair: (usize, usize),
    pub config: WelchConfig,
    pub num_segments: usize,
    pub psd_ii: Vec<f64>,
    pub psd_jj: Vec<f64>,
    /// Cross spectrum `E[X_i conj(X_j)]`.
    pub csd_ij: Vec<Complex64>,
}

impl WelchSpectra {
    pub fn with_pair(mut self, i: usize, j: usize) -> Self {
        self.pair = (i, j);
        self
    }

    /// Frequency of `bin` in Hz.
    pub fn bin_frequency(&self, bin: usize, sample_rate: f64) -> f64 {
        bin as f64 * sample_rate / self.config.segment_len as f64
    }

    pub(crate) fn from_segments(
        seg_i: &[Vec<Complex64>],
        seg_j: &[Vec<Complex64>],
        config: &WelchConfig,
    ) -> Self {
        let bins = config.num_bins();
        let count = seg_i.len() as f64;
        let mut psd_ii = vec![0.0; bins];
        let mut psd_jj = vec![0.0; bins];
        let mut csd_ij = vec![Complex64::new(0.0, 0.0); bins];
        for (a, b) in seg_i.iter().zip(seg_j) {
            for k in 0..bins {
                psd_ii[k] += a[k].norm_sqr();
                psd_jj[k] += b[k].norm_sqr();
                csd_ij[k] += a[k] * b[k].conj();
            }
        }
        for k in 0..bins {
            let scale = config.density_scale(k) / count;
            psd_ii[k] *= scale;
            psd_jj[k] *= scale;
            csd_ij[k] *= scale;
        }
        Self {
            pair: (0, 1),
            config: *config,
            num_segments: seg_i.len(),
            psd_ii,
            psd_jj,
            csd_ij,
        }
    }
}

/// Welch estimate of the auto and cross power spectral densities of two
/// equal-length channels.
pub fn welch_psd(s_i: &[f64], s_j: &[f64], config: &WelchConfig) -> FeatureResult<WelchSpectra> {
    if s_i.len() != s_j.len() {
        return Err(FeatureError::Shape(format!(
            "channels differ in length: {} vs {}",
            s_i.len(),
            s_j.len()
        )));
    }
    let seg_i = segment_spectra(s_i, config)?;
    let seg_j = segment_spectra(s_j, config)?;
    Ok(WelchSpectra::from_segments(&seg_i, &seg_j, config))
}
