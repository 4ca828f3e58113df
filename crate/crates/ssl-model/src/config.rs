use acoustic_sim::{RoomSpec, Vec3};
use dsp_features::AscmMode;
use serde::{Deserialize, Serialize};

use crate::error::{ModelError, ModelResult};

/// Pair-sum normalization of the coherence-weighted TDOA aggregate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AggregateMode {
    Sum,
    Mean,
}

impl From<AggregateMode> for AscmMode {
    fn from(m: AggregateMode) -> Self {
        match m {
            AggregateMode::Sum => AscmMode::Sum,
            AggregateMode::Mean => AscmMode::Mean,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub embed_dim: usize,
    pub num_heads: usize,
    /// Transformer blocks in the masked encoder.
    pub num_blocks: usize,
    pub num_decoder_blocks: usize,
    /// Attention weights kept per query in the sparse cross-attention.
    pub top_t: usize,
    pub mask_ratio: f64,
    pub lambda_sound: f64,
    pub lambda_mloc: f64,
    pub lambda_sloc: f64,
    pub num_sources: usize,
    /// Filterbank size `P` of the TDOA stream.
    pub num_filters: usize,
    /// Coherence exponent of the pair weights.
    pub alpha: f64,
    pub aggregate_mode: AggregateMode,
    /// Hidden width of the transformer MLPs as a multiple of `embed_dim`.
    pub mlp_ratio: usize,
    pub stft_frame: usize,
    pub stft_hop: usize,
    /// Seed of the frozen audio projection.
    pub encoder_seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            embed_dim: 128,
            num_heads: 4,
            num_blocks: 4,
            num_decoder_blocks: 1,
            top_t: 4,
            mask_ratio: 0.3,
            lambda_sound: 1.0,
            lambda_mloc: 1.0,
            lambda_sloc: 1.0,
            num_sources: 1,
            num_filters: 8,
            alpha: 1.0,
            aggregate_mode: AggregateMode::Mean,
            mlp_ratio: 2,
            stft_frame: 256,
            stft_hop: 128,
            encoder_seed: 0x5EED_A0D1,
        }
    }
}

impl ModelConfig {
    pub fn head_dim(&self) -> usize {
        self.embed_dim / self.num_heads.max(1)
    }

    pub fn stft_bins(&self) -> usize {
        self.stft_frame / 2 + 1
    }

    pub fn validate(&self) -> ModelResult<()> {
        let fail = |m: String| Err(ModelError::Config(m));
        if self.embed_dim == 0 || self.num_heads == 0 || self.embed_dim % self.num_heads != 0 {
            return fail(format!(
                "embed_dim {} must be a positive multiple of num_heads {}",
                self.embed_dim, self.num_heads
            ));
        }
        if self.top_t == 0 {
            return fail("top_t must be at least 1".into());
        }
        if !(0.0..1.0).contains(&self.mask_ratio) {
            return fail(format!("mask_ratio {} must lie in [0, 1)", self.mask_ratio));
        }
        for (name, v) in [
            ("lambda_sound", self.lambda_sound),
            ("lambda_mloc", self.lambda_mloc),
            ("lambda_sloc", self.lambda_sloc),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return fail(format!("{name} must be finite and non-negative, got {v}"));
            }
        }
        if self.num_sources == 0 || self.num_sources > 3 {
            return fail(format!(
                "num_sources {} outside 1..=3 (assignment enumerates K! permutations)",
                self.num_sources
            ));
        }
        if self.num_filters == 0 {
            return fail("num_filters must be at least 1".into());
        }
        if !(self.alpha.is_finite() && self.alpha >= 0.0) {
            return fail(format!("alpha must be finite and non-negative, got {}", self.alpha));
        }
        if self.mlp_ratio == 0 {
            return fail("mlp_ratio must be at least 1".into());
        }
        if self.stft_hop == 0 || self.stft_frame < 2 {
            return fail("stft_frame must be at least 2 and stft_hop positive".into());
        }
        if self.embed_dim > self.stft_bins() {
            return fail(format!(
                "embed_dim {} exceeds the {} spectrogram bins the frozen projection can keep orthonormal",
                self.embed_dim,
                self.stft_bins()
            ));
        }
        Ok(())
    }
}

/// What the network sees of each scene: fixed by the recording setup, not
/// learned.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputSpec {
    /// Microphone token budget.
    pub num_mics: usize,
    pub signal_len: usize,
    pub room: RoomSpec,
}

impl InputSpec {
    pub fn validate(&self, config: &ModelConfig) -> ModelResult<()> {
        self.room.validate()?;
        if self.num_mics == 0 {
            return Err(ModelError::Config("num_mics must be at least 1".into()));
        }
        if self.signal_len < config.stft_frame {
            return Err(ModelError::Config(format!(
                "signal_len {} is shorter than one STFT frame ({})",
                self.signal_len, config.stft_frame
            )));
        }
        Ok(())
    }

    pub fn tau_max(&self) -> usize {
        self.room.max_lag_samples().min(self.signal_len - 1)
    }

    pub fn feature_len(&self) -> usize {
        2 * self.tau_max() + 1
    }

    pub fn center(&self) -> Vec3 {
        self.room.center()
    }

    pub fn half_extent(&self) -> Vec3 {
        let d = self.room.dimensions;
        [0.5 * d[0], 0.5 * d[1], 0.5 * d[2]]
    }

    /// Room coordinates mapped to `[-1, 1]` per axis.
    pub fn normalize(&self, p: &Vec3) -> [f64; 3] {
        let c = self.center();
        let h = self.half_extent();
        [(p[0] - c[0]) / h[0], (p[1] - c[1]) / h[1], (p[2] - c[2]) / h[2]]
    }
}

/// Which targets are hidden from the network in an experiment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    /// Source signals known, source positions predicted.
    #[default]
    Default,
    /// Source signals and positions unknown.
    UnknownSourceSignal,
    /// Faulty microphone positions and the source (signal and position) unknown.
    #[serde(rename = "faulty_mic_scene_A", alias = "faulty_mic_scene_a")]
    FaultyMicSceneA,
    /// Faulty microphone positions unknown; the source is a known anchor.
    #[serde(rename = "faulty_mic_scene_B", alias = "faulty_mic_scene_b")]
    FaultyMicSceneB,
    /// As `Default` with several sources.
    MultiSource,
}

impl Scenario {
    pub const ALL: [Scenario; 5] = [
        Scenario::Default,
        Scenario::UnknownSourceSignal,
        Scenario::FaultyMicSceneA,
        Scenario::FaultyMicSceneB,
        Scenario::MultiSource,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Scenario::Default => "default",
            Scenario::UnknownSourceSignal => "unknown_source_signal",
            Scenario::FaultyMicSceneA => "faulty_mic_scene_A",
            Scenario::FaultyMicSceneB => "faulty_mic_scene_B",
            Scenario::MultiSource => "multi_source",
        }
    }

    pub fn source_signal_known(self) -> bool {
        matches!(self, Scenario::Default | Scenario::MultiSource | Scenario::FaultyMicSceneB)
    }

    pub fn source_position_known(self) -> bool {
        self == Scenario::FaultyMicSceneB
    }

    pub fn has_faulty_mics(self) -> bool {
        matches!(self, Scenario::FaultyMicSceneA | Scenario::FaultyMicSceneB)
    }
}

impl std::str::FromStr for Scenario {
    type Err = ModelError;

    fn from_str(s: &str) -> ModelResult<Self> {
        Scenario::ALL
            .into_iter()
            .find(|v| v.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| ModelError::Config(format!("unknown scenario `{s}`")))
    }
}

impl std::fmt::Display for Scenario {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        ModelConfig::default().validate().unwrap();
        assert_eq!(ModelConfig::default().head_dim(), 32);
    }

    #[test]
    fn rejects_bad_values() {
        for bad in [
            ModelConfig { num_heads: 3, ..ModelConfig::default() },
            ModelConfig { top_t: 0, ..ModelConfig::default() },
            ModelConfig { mask_ratio: 1.0, ..ModelConfig::default() },
            ModelConfig { lambda_sloc: -1.0, ..ModelConfig::default() },
            ModelConfig { num_sources: 4, ..ModelConfig::default() },
            ModelConfig { embed_dim: 256, num_heads: 4, ..ModelConfig::default() },
        ] {
            assert!(bad.validate().is_err(), "{bad:?}");
        }
    }

    #[test]
    fn scenario_names_round_trip() {
        for s in Scenario::ALL {
            assert_eq!(s.name().parse::<Scenario>().unwrap(), s);
        }
        assert!("scene_c".parse::<Scenario>().is_err());
    }

    #[test]
    fn normalization_maps_room_to_unit_box() {
        let spec = InputSpec {
            num_mics: 4,
            signal_len: 1024,
            room: RoomSpec::default(),
        };
        assert_eq!(spec.normalize(&[0.0, 0.0, 0.0]), [-1.0, -1.0, -1.0]);
        assert_eq!(spec.normalize(&[7.0, 8.0, 2.0]), [1.0, 1.0, 1.0]);
        assert_eq!(spec.normalize(&[3.5, 4.0, 1.0]), [0.0, 0.0, 0.0]);
    }
}
