use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{SimError, SimResult};
use crate::geometry::Scene;
use crate::rir::generate_rir;

/// Multichannel recording of a scene, one channel per microphone in scene order.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneRecording {
    pub scene: Scene,
    pub channels: Vec<Vec<f32>>,
    pub noise_std: f64,
    pub rng_seed: u64,
}

impl SceneRecording {
    pub fn num_samples(&self) -> usize {
        self.channels.first().map_or(0, Vec::len)
    }

    pub fn sample_rate(&self) -> u32 {
        self.scene.room.sample_rate
    }

    pub fn channel_f64(&self, index: usize) -> Vec<f64> {
        self.channels[index].iter().map(|v| *v as f64).collect()
    }
}

/// Noiseless superposition of every source convolved with its impulse
/// response to each microphone, truncated to `num_samples`.
///
/// This is the full-precision mixture that [`render_mixture`] quantizes.
pub fn mix_sources(scene: &Scene, num_samples: usize) -> SimResult<Vec<Vec<f64>>> {
    scene.validate()?;
    if scene.mics.is_empty() {
        return Err(SimError::Shape("scene has no microphones".into()));
    }
    if num_samples == 0 {
        return Err(SimError::Shape("recordings need at least one sample".into()));
    }
    for s in &scene.sources {
        if s.signal.len() != num_samples {
            return Err(SimError::Shape(format!(
                "source {} has {} samples, expected {num_samples}",
                s.id,
                s.signal.len()
            )));
        }
    }

    let mut channels = vec![vec![0.0; num_samples]; scene.mics.len()];
    for (channel, mic) in channels.iter_mut().zip(&scene.mics) {
        for source in &scene.sources {
            let rir = generate_rir(&scene.room, &source.position, &mic.position)?;
            for (delay, gain) in rir.nonzero_taps() {
                if delay >= num_samples {
                    continue;
                }
                for (out, s) in channel[delay..].iter_mut().zip(&source.signal) {
                    *out += gain * *s as f64;
                }
            }
        }
    }
    Ok(channels)
}

/// Renders the noisy multichannel recording of a scene.
///
/// Each channel is the source mixture plus i.i.d. Gaussian noise of standard
/// deviation `noise_std`, rounded to `f32`. Output depends only on the inputs
/// and `seed`.
pub fn render_mixture(
    scene: &Scene,
    num_samples: usize,
    noise_std: f64,
    seed: u64,
) -> SimResult<SceneRecording> {
    if !(noise_std.is_finite() && noise_std >= 0.0) {
        return Err(SimError::Shape(format!(
            "noise std must be finite and non-negative, got {noise_std}"
        )));
    }
    let clean = mix_sources(scene, num_samples)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, noise_std).expect("validated noise std");
    let channels = clean
        .into_iter()
        .map(|channel| {
            channel
                .into_iter()
                .map(|v| {
                    let w = if noise_std > 0.0 { noise.sample(&mut rng) } else { 0.0 };
                    (v + w) as f32
                })
                .collect()
        })
        .collect();
    Ok(SceneRecording {
        scene: scene.clone(),
        channels,
        noise_std,
        rng_seed: seed,
    })
}
