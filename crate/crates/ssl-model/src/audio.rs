use std::f64::consts::PI;

use dsp_features::dft;
use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::config::ModelConfig;
use crate::error::{ModelError, ModelResult};

/// Magnitudes are clamped to this before the logarithm, so silence maps to a
/// finite embedding.
pub const LOG_FLOOR: f64 = 1e-8;

/// Stand-in for a pretrained audio encoder: log-magnitude STFT, mean-pooled
/// over frames, centered on a fixed reference level and projected to
/// `embed_dim` by a seeded matrix with orthonormal rows. Nothing here is
/// trained.
#[derive(Debug, Clone, PartialEq)]
pub struct FrozenAudioEncoder {
    frame: usize,
    hop: usize,
    window: Vec<f64>,
    /// `embed_dim x bins`, orthonormal rows.
    projection: Vec<f64>,
    embed_dim: usize,
    reference_level: f64,
}

/// `embed_dim x bins` matrix with orthonormal rows from the QR factor of a
/// seeded Gaussian matrix.
pub fn orthonormal_projection(embed_dim: usize, bins: usize, seed: u64) -> ModelResult<Vec<f64>> {
    if embed_dim == 0 || embed_dim > bins {
        return Err(ModelError::Config(format!(
            "cannot build {embed_dim} orthonormal rows in {bins} dimensions"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let g = DMatrix::<f64>::from_fn(bins, embed_dim, |_, _| StandardNormal.sample(&mut rng));
    let q = g.qr().q();
    let mut out = vec![0.0; embed_dim * bins];
    for r in 0..embed_dim {
        for c in 0..bins {
            out[r * bins + c] = q[(c, r)];
        }
    }
    Ok(out)
}

impl FrozenAudioEncoder {
    pub fn new(config: &ModelConfig) -> ModelResult<Self> {
        let projection = orthonormal_projection(config.embed_dim, config.stft_bins(), config.encoder_seed)?;
        Self::with_projection(config, projection)
    }

    /// Rebuilds the encoder around a stored projection.
    pub fn with_projection(config: &ModelConfig, projection: Vec<f64>) -> ModelResult<Self> {
        let frame = config.stft_frame;
        if projection.len() != config.embed_dim * config.stft_bins() {
            return Err(ModelError::Shape(format!(
                "projection has {} entries, expected {}",
                projection.len(),
                config.embed_dim * config.stft_bins()
            )));
        }
        // periodic Hann
        let window: Vec<f64> = (0..frame)
            .map(|n| 0.5 - 0.5 * (2.0 * PI * n as f64 / frame as f64).cos())
            .collect();
        // level of unit-variance white noise heard through 1/(4 pi r) at r = 1 m
        let energy: f64 = window.iter().map(|w| w * w).sum();
        let reference_level = (energy.sqrt() / (4.0 * PI)).ln();
        Ok(Self {
            frame,
            hop: config.stft_hop,
            window,
            projection,
            embed_dim: config.embed_dim,
            reference_level,
        })
    }

    pub fn projection(&self) -> &[f64] {
        &self.projection
    }

    pub fn embed_dim(&self) -> usize {
        self.embed_dim
    }

    pub fn num_bins(&self) -> usize {
        self.frame / 2 + 1
    }

    /// Mean over frames of `ln(max(|X|, LOG_FLOOR))`, minus the reference level.
    pub fn pooled_log_spectrum(&self, samples: &[f64]) -> ModelResult<Vec<f64>> {
        if samples.len() < self.frame {
            return Err(ModelError::Shape(format!(
                "{} samples is shorter than one frame of {}",
                samples.len(),
                self.frame
            )));
        }
        let bins = self.num_bins();
        let frames = (samples.len() - self.frame) / self.hop + 1;
        let mut pooled = vec![0.0; bins];
        let mut buf = vec![0.0; self.frame];
        for f in 0..frames {
            let start = f * self.hop;
            for (k, b) in buf.iter_mut().enumerate() {
                *b = samples[start + k] * self.window[k];
            }
            let spectrum = dft(&buf)?;
            for (p, x) in pooled.iter_mut().zip(&spectrum[..bins]) {
                *p += x.norm().max(LOG_FLOOR).ln();
            }
        }
        let scale = 1.0 / frames as f64;
        Ok(pooled.into_iter().map(|p| p * scale - self.reference_level).collect())
    }

    /// `embed_dim`-dimensional audio embedding of one channel.
    pub fn encode(&self, samples: &[f64]) -> ModelResult<Vec<f64>> {
        let z = self.pooled_log_spectrum(samples)?;
        let bins = z.len();
        Ok((0..self.embed_dim)
            .map(|r| {
                self.projection[r * bins..(r + 1) * bins]
                    .iter()
                    .zip(&z)
                    .map(|(a, b)| a * b)
                    .sum()
            })
            .collect())
    }
}
