use std::path::Path;

use acoustic_sim::{read_dataset, render_mixture, sample_scene, write_dataset, SceneRecording};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::error::{HarnessError, HarnessResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    fn salt(self) -> u64 {
        match self {
            Split::Train => 0x7452_4149_4e00_0000,
            Split::Val => 0x5641_4c00_0000_0000,
            Split::Test => 0x5445_5354_0000_0000,
        }
    }

    pub fn count(self, config: &ExperimentConfig) -> usize {
        match self {
            Split::Train => config.train_scenes,
            Split::Val => config.val_scenes,
            Split::Test => config.test_scenes,
        }
    }

    pub fn file_name(self) -> String {
        format!("{}.ssl3d", self.name())
    }
}

/// SplitMix64 finalizer; decorrelates neighbouring seeds.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of scene `index` in `split`. It does not depend on the microphone
/// count, so runs that differ only in M draw the same scenes.
pub fn scene_seed(data_seed: u64, split: Split, index: usize) -> u64 {
    mix(mix(data_seed ^ split.salt()) ^ index as u64)
}

/// Renders one scene: `layout_mics` microphones and K sources drawn in the
/// room, the first M microphones kept, U of them flagged faulty.
pub fn generate_recording(config: &ExperimentConfig, split: Split, index: usize) -> HarnessResult<SceneRecording> {
    let seed = scene_seed(config.seeds.data, split, index);
    let mut layout = sample_scene(&config.room, config.layout_mic_count(), config.num_sources, 0, seed)?;
    layout.mics.truncate(config.num_mics);
    let mut rng = ChaCha8Rng::seed_from_u64(mix(seed ^ 0xFA01));
    for i in sample(&mut rng, config.num_mics, config.num_faulty) {
        layout.mics[i].known_position = false;
    }
    let scene = layout.with_signals(config.signal_kind, config.signal_len, mix(seed ^ 0x5160));
    Ok(render_mixture(&scene, config.signal_len, config.noise_std, mix(seed ^ 0x0015E))?)
}

pub fn generate_split(config: &ExperimentConfig, split: Split) -> HarnessResult<Vec<SceneRecording>> {
    (0..split.count(config)).map(|i| generate_recording(config, split, i)).collect()
}

/// Reads `dir/<split>.ssl3d` if present, else generates the split.
pub fn load_or_generate(config: &ExperimentConfig, split: Split, dir: Option<&Path>) -> HarnessResult<Vec<SceneRecording>> {
    if let Some(dir) = dir {
        let path = dir.join(split.file_name());
        if path.exists() {
            let data = read_dataset(&path)?;
            check_loaded(config, split, &data)?;
            return Ok(data);
        }
    }
    generate_split(config, split)
}

fn check_loaded(config: &ExperimentConfig, split: Split, data: &[SceneRecording]) -> HarnessResult<()> {
    if data.len() != split.count(config) {
        return Err(HarnessError::Config(format!(
            "{} split has {} scenes; the config asks for {}",
            split.name(),
            data.len(),
            split.count(config)
        )));
    }
    if let Some(r) = data.iter().find(|r| r.scene.mics.len() != config.num_mics || r.num_samples() != config.signal_len) {
        return Err(HarnessError::Config(format!(
            "stored scene has {} microphones and {} samples; the config asks for {} and {}",
            r.scene.mics.len(),
            r.num_samples(),
            config.num_mics,
            config.signal_len
        )));
    }
    Ok(())
}

/// Writes every split to `dir/<split>.ssl3d`.
pub fn write_splits(config: &ExperimentConfig, dir: &Path) -> HarnessResult<Vec<(Split, usize)>> {
    std::fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
    let mut counts = Vec::new();
    for split in Split::ALL {
        let data = generate_split(config, split)?;
        write_dataset(&data, dir.join(split.file_name()))?;
        counts.push((split, data.len()));
    }
    Ok(counts)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ExperimentConfig {
        ExperimentConfig {
            num_mics: 5,
            layout_mics: Some(8),
            signal_len: 1024,
            room: acoustic_sim::RoomSpec {
                dimensions: [4.0, 3.0, 2.5],
                ..Default::default()
            },
            ..ExperimentConfig::default()
        }
    }

    #[test]
    fn splits_are_disjoint_and_seeded() {
        let c = small();
        let a = generate_recording(&c, Split::Test, 0).unwrap();
        assert_eq!(a, generate_recording(&c, Split::Test, 0).unwrap());
        assert_ne!(a.scene.sources[0].position, generate_recording(&c, Split::Train, 0).unwrap().scene.sources[0].position);
    }

    #[test]
    fn mic_count_keeps_sources_and_prefix() {
        let five = small();
        let eight = ExperimentConfig { num_mics: 8, ..small() };
        let a = generate_recording(&five, Split::Test, 3).unwrap();
        let b = generate_recording(&eight, Split::Test, 3).unwrap();
        assert_eq!(a.scene.sources[0].position, b.scene.sources[0].position);
        assert_eq!(a.scene.mics[..], b.scene.mics[..5]);
    }

    #[test]
    fn faulty_count_is_exact() {
        let c = ExperimentConfig {
            scenario: ssl_model::Scenario::FaultyMicSceneA,
            num_faulty: 2,
            ..small()
        };
        for i in 0..5 {
            let r = generate_recording(&c, Split::Val, i).unwrap();
            assert_eq!(r.scene.mics.iter().filter(|m| !m.known_position).count(), 2);
        }
    }
}
