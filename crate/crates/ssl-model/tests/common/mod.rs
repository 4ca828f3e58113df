#![allow(dead_code)]

use acoustic_sim::{render_mixture, sample_scene, RoomSpec, SignalKind};
use ssl_model::{FrozenAudioEncoder, InputSpec, ModelConfig, Scenario, SceneInput, SslModel};

pub const SIGNAL_LEN: usize = 1024;

pub fn small_config(num_sources: usize) -> ModelConfig {
    ModelConfig {
        embed_dim: 16,
        num_heads: 2,
        num_blocks: 1,
        num_decoder_blocks: 1,
        top_t: 2,
        num_sources,
        num_filters: 4,
        stft_frame: 64,
        stft_hop: 32,
        mlp_ratio: 2,
        ..ModelConfig::default()
    }
}

pub fn room() -> RoomSpec {
    RoomSpec {
        dimensions: [5.0, 4.0, 3.0],
        ..RoomSpec::default()
    }
}

pub fn input(num_mics: usize) -> InputSpec {
    InputSpec {
        num_mics,
        signal_len: SIGNAL_LEN,
        room: room(),
    }
}

pub fn model(num_mics: usize, num_sources: usize, seed: u64) -> SslModel {
    SslModel::new(small_config(num_sources), input(num_mics), seed).unwrap()
}

pub fn scene_with(
    num_mics: usize,
    num_sources: usize,
    faulty: usize,
    scenario: Scenario,
    seed: u64,
    config: &ModelConfig,
) -> SceneInput {
    let layout = sample_scene(&room(), num_mics, num_sources, faulty, seed).unwrap();
    let scene = layout.with_signals(SignalKind::WhiteNoise, SIGNAL_LEN, seed ^ 0x5eed);
    let rec = render_mixture(&scene, SIGNAL_LEN, 1e-3, seed.wrapping_add(7)).unwrap();
    let encoder = FrozenAudioEncoder::new(config).unwrap();
    SceneInput::from_recording(&rec, scenario, &encoder, config).unwrap()
}

pub fn scene(num_mics: usize, seed: u64) -> SceneInput {
    scene_with(num_mics, 1, 0, Scenario::Default, seed, &small_config(1))
}
