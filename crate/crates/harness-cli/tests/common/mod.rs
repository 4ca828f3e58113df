#![allow(dead_code)]

use acoustic_sim::{Vec3};
use harness_cli::{ExperimentConfig, Method, TargetKind, TrialRecord};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use ssl_model::ModelConfig;

/// A configuration small enough to train and evaluate in seconds.
pub fn tiny_config() -> ExperimentConfig {
    ExperimentConfig {
        num_mics: 6,
        train_scenes: 6,
        val_scenes: 2,
        test_scenes: 5,
        signal_len: 1024,
        room: acoustic_sim::RoomSpec {
            dimensions: [4.0, 3.5, 2.5],
            ..acoustic_sim::RoomSpec::default()
        },
        bootstrap_resamples: 50,
        model: ModelConfig {
            embed_dim: 8,
            num_heads: 2,
            num_blocks: 1,
            num_decoder_blocks: 1,
            top_t: 2,
            num_filters: 2,
            stft_frame: 64,
            stft_hop: 32,
            mlp_ratio: 2,
            ..ModelConfig::default()
        },
        train: ssl_model::TrainConfig {
            epochs: 2,
            batch_size: 3,
            ..ssl_model::TrainConfig::default()
        },
        ..ExperimentConfig::default()
    }
}

pub fn random_point(rng: &mut ChaCha8Rng) -> Vec3 {
    [rng.random_range(0.0..5.0), rng.random_range(0.0..5.0), rng.random_range(0.0..3.0)]
}

/// Records for `trials` scenes of two methods, with about one failure in ten.
pub fn random_records(seed: u64, trials: usize) -> Vec<TrialRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for method in [Method::Neural, Method::Multilat] {
        for trial in 0..trials {
            let targets: &[TargetKind] = if method == Method::Neural {
                &[TargetKind::Source, TargetKind::FaultyMic]
            } else {
                &[TargetKind::Source]
            };
            for (id, kind) in targets.iter().enumerate() {
                let truth = random_point(&mut rng);
                let failed = rng.random_range(0..10) == 0;
                let prediction = (!failed).then(|| {
                    let spread = rng.random_range(0.0..0.6);
                    [truth[0] + rng.random_range(-spread..=spread), truth[1], truth[2] - spread / 2.0]
                });
                out.push(TrialRecord {
                    trial,
                    method,
                    target: *kind,
                    target_id: id,
                    prediction,
                    truth,
                    failure: failed.then(|| "injected".to_string()),
                });
            }
        }
    }
    out
}
