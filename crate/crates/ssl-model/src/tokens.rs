use acoustic_sim::{SceneRecording, Vec3};
use dsp_features::{coherence_pair_weights, WelchConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::audio::FrozenAudioEncoder;
use crate::config::{ModelConfig, Scenario};
use crate::error::{ModelError, ModelResult};

#[derive(Debug, Clone, PartialEq)]
pub struct MicInput {
    pub id: usize,
    /// Ground truth; hidden from the network when the position is unknown.
    pub position: Vec3,
    pub position_known: bool,
    pub audio: Vec<f64>,
    /// Frozen audio embedding of `audio`.
    pub embedding: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SourceInput {
    pub id: usize,
    /// Ground truth; an input only when `position_known`.
    pub position: Vec3,
    pub position_known: bool,
    pub signal_known: bool,
    /// Frozen audio embedding of the emitted signal.
    pub embedding: Vec<f64>,
}

/// One scene prepared for the network: per-microphone tokens, one token per
/// source, and the coherence weight of every microphone pair.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneInput {
    pub scenario: Scenario,
    pub mics: Vec<MicInput>,
    pub sources: Vec<SourceInput>,
    pub pair_weights: Vec<((usize, usize), f64)>,
}

impl SceneInput {
    pub fn from_recording(
        recording: &SceneRecording,
        scenario: Scenario,
        encoder: &FrozenAudioEncoder,
        config: &ModelConfig,
    ) -> ModelResult<Self> {
        let scene = &recording.scene;
        if scenario.has_faulty_mics() && scene.mics.iter().all(|m| m.known_position) {
            return Err(ModelError::Config(format!(
                "scenario {scenario} needs at least one microphone with unknown position"
            )));
        }
        let mut mics = Vec::with_capacity(scene.mics.len());
        for (i, m) in scene.mics.iter().enumerate() {
            let audio = recording.channel_f64(i);
            let embedding = encoder.encode(&audio)?;
            mics.push(MicInput {
                id: m.id,
                position: m.position,
                position_known: m.known_position,
                audio,
                embedding,
            });
        }
        let mut sources = Vec::with_capacity(scene.sources.len());
        for s in &scene.sources {
            let signal: Vec<f64> = s.signal.iter().map(|v| *v as f64).collect();
            sources.push(SourceInput {
                id: s.id,
                position: s.position,
                position_known: scenario.source_position_known(),
                signal_known: scenario.source_signal_known(),
                embedding: encoder.encode(&signal)?,
            });
        }
        let channels: Vec<&[f64]> = mics.iter().map(|m| m.audio.as_slice()).collect();
        let ids: Vec<usize> = mics.iter().map(|m| m.id).collect();
        let pair_weights = if channels.len() >= 2 {
            coherence_pair_weights(&channels, &ids, &WelchConfig::default(), config.alpha)?
        } else {
            Vec::new()
        };
        Ok(Self {
            scenario,
            mics,
            sources,
            pair_weights,
        })
    }

    pub fn num_tokens(&self) -> usize {
        self.mics.len() + self.sources.len()
    }

    /// Sources whose positions the network must predict, in token order.
    pub fn predicted_sources(&self) -> Vec<usize> {
        (0..self.sources.len()).filter(|k| !self.sources[*k].position_known).collect()
    }
}

/// Per-microphone mask flags for one forward pass.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenMask {
    pub audio_masked: Vec<bool>,
    pub position_masked: Vec<bool>,
}

impl TokenMask {
    /// Only the scenario-forced masks: unknown microphone positions.
    pub fn scenario_only(scene: &SceneInput) -> Self {
        Self {
            audio_masked: vec![false; scene.mics.len()],
            position_masked: scene.mics.iter().map(|m| !m.position_known).collect(),
        }
    }

    pub fn audio_masked_mics(&self) -> Vec<usize> {
        (0..self.audio_masked.len()).filter(|i| self.audio_masked[*i]).collect()
    }

    pub fn position_masked_mics(&self) -> Vec<usize> {
        (0..self.position_masked.len()).filter(|i| self.position_masked[*i]).collect()
    }
}

/// Scenario masks plus an independent audio mask on each microphone token
/// with probability `mask_ratio`. If every microphone would lose its audio,
/// one chosen at random keeps it.
pub fn apply_mask(scene: &SceneInput, mask_ratio: f64, seed: u64) -> ModelResult<TokenMask> {
    if !(0.0..1.0).contains(&mask_ratio) {
        return Err(ModelError::Config(format!("mask_ratio {mask_ratio} must lie in [0, 1)")));
    }
    let mut mask = TokenMask::scenario_only(scene);
    if mask_ratio == 0.0 || scene.mics.is_empty() {
        return Ok(mask);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for m in mask.audio_masked.iter_mut() {
        *m = rng.random_bool(mask_ratio);
    }
    if mask.audio_masked.iter().all(|m| *m) {
        let keep = rng.random_range(0..scene.mics.len());
        log::debug!("every microphone audio-masked; keeping token {keep}");
        mask.audio_masked[keep] = false;
    }
    Ok(mask)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scene(m: usize, faulty: &[usize]) -> SceneInput {
        SceneInput {
            scenario: Scenario::Default,
            mics: (0..m)
                .map(|i| MicInput {
                    id: i,
                    position: [i as f64, 1.0, 1.0],
                    position_known: !faulty.contains(&i),
                    audio: vec![0.0; 4],
                    embedding: vec![0.0; 2],
                })
                .collect(),
            sources: vec![],
            pair_weights: vec![],
        }
    }

    #[test]
    fn zero_ratio_masks_nothing() {
        let m = apply_mask(&scene(5, &[]), 0.0, 1).unwrap();
        assert!(m.audio_masked.iter().chain(&m.position_masked).all(|v| !v));
    }

    #[test]
    fn faulty_mics_are_always_position_masked() {
        for seed in 0..20 {
            let m = apply_mask(&scene(5, &[3]), 0.5, seed).unwrap();
            assert_eq!(m.position_masked_mics(), vec![3]);
        }
    }

    #[test]
    fn some_audio_always_survives() {
        for seed in 0..200 {
            let m = apply_mask(&scene(2, &[]), 0.99, seed).unwrap();
            assert!(m.audio_masked.iter().any(|v| !v));
        }
        assert!(apply_mask(&scene(2, &[]), 1.0, 0).is_err());
    }

    #[test]
    fn ratio_is_respected_on_average() {
        let s = scene(10, &[]);
        let masked: usize = (0..400)
            .map(|seed| apply_mask(&s, 0.3, seed).unwrap().audio_masked_mics().len())
            .sum();
        let rate = masked as f64 / 4000.0;
        assert!((rate - 0.3).abs() < 0.03, "{rate}");
    }
}
