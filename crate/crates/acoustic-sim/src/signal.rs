use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SignalKind {
    #[default]
    WhiteNoise,
    Tone,
    /// Resonant second-order autoregressive process with a slow syllabic envelope.
    SpeechLikeAr,
}

/// Generates `len` samples of the requested kind, scaled to unit RMS.
///
/// Samples are rounded to `f32`, the precision recordings are stored at.
pub fn generate_signal(kind: SignalKind, len: usize, sample_rate: u32, seed: u64) -> Vec<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let fs = sample_rate as f64;
    let raw: Vec<f64> = match kind {
        SignalKind::WhiteNoise => (0..len).map(|_| StandardNormal.sample(&mut rng)).collect(),
        SignalKind::Tone => {
            let freq = rng.random_range(200.0..2000.0_f64).min(0.45 * fs);
            let phase = rng.random_range(0.0..2.0 * PI);
            (0..len)
                .map(|n| (2.0 * PI * freq * n as f64 / fs + phase).sin())
                .collect()
        }
        SignalKind::SpeechLikeAr => {
            let formant = rng.random_range(300.0..3000.0_f64).min(0.45 * fs);
            let radius = rng.random_range(0.95..0.99);
            let a1 = 2.0 * radius * (2.0 * PI * formant / fs).cos();
            let a2 = -radius * radius;
            let rate = rng.random_range(3.0..6.0);
            let env_phase = rng.random_range(0.0..2.0 * PI);
            let (mut y1, mut y2) = (0.0, 0.0);
            (0..len)
                .map(|n| {
                    let e: f64 = StandardNormal.sample(&mut rng);
                    let y = a1 * y1 + a2 * y2 + e;
                    y2 = y1;
                    y1 = y;
                    let env = 0.6 + 0.4 * (2.0 * PI * rate * n as f64 / fs + env_phase).sin();
                    env * y
                })
                .collect()
        }
    };
    let rms = (raw.iter().map(|v| v * v).sum::<f64>() / len.max(1) as f64).sqrt();
    let scale = if rms > 0.0 { 1.0 / rms } else { 0.0 };
    raw.into_iter().map(|v| (v * scale) as f32).collect()
}
