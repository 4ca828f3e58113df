use rand::seq::index::sample as sample_indices;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{SimError, SimResult};
use crate::geometry::{distance, MicSpec, RoomSpec, Scene, SourceSpec, Vec3};
use crate::signal::{generate_signal, SignalKind};

/// Minimum distance from any wall for sampled positions, meters.
pub const WALL_MARGIN: f64 = 0.10;
/// Minimum distance between any two sampled positions, meters.
pub const MIN_SEPARATION: f64 = 0.10;

const MAX_ATTEMPTS_PER_POINT: usize = 10_000;

/// Sampled positions for one scene, before source signals are attached.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneLayout {
    pub room: RoomSpec,
    pub mics: Vec<MicSpec>,
    pub source_positions: Vec<Vec3>,
}

impl SceneLayout {
    /// Attaches a unit-RMS signal of `kind` to every source. Source `k` uses
    /// the signal seed `seed + k`.
    pub fn with_signals(&self, kind: SignalKind, num_samples: usize, seed: u64) -> Scene {
        let sources = self
            .source_positions
            .iter()
            .enumerate()
            .map(|(k, p)| SourceSpec {
                id: k,
                position: *p,
                kind,
                signal: generate_signal(kind, num_samples, self.room.sample_rate, seed.wrapping_add(k as u64)),
            })
            .collect();
        Scene {
            room: self.room.clone(),
            mics: self.mics.clone(),
            sources,
        }
    }
}

/// Draws `num_mics` microphones and `num_sources` sources uniformly inside
/// the room, keeping [`WALL_MARGIN`] from the walls and [`MIN_SEPARATION`]
/// between all points. Exactly `num_faulty` microphones, chosen at random,
/// are flagged as having unknown position.
pub fn sample_scene(
    room: &RoomSpec,
    num_mics: usize,
    num_sources: usize,
    num_faulty: usize,
    seed: u64,
) -> SimResult<SceneLayout> {
    room.validate()?;
    if num_mics == 0 || num_sources == 0 {
        return Err(SimError::Sampling(format!(
            "need at least one microphone and one source, got M={num_mics} K={num_sources}"
        )));
    }
    if num_faulty > num_mics {
        return Err(SimError::Sampling(format!(
            "cannot flag {num_faulty} of {num_mics} microphones as faulty"
        )));
    }
    if room.dimensions.iter().any(|d| *d <= 2.0 * WALL_MARGIN) {
        return Err(SimError::Sampling(format!(
            "room {:?} leaves no interior after the {WALL_MARGIN} m wall margin",
            room.dimensions
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut placed: Vec<Vec3> = Vec::with_capacity(num_mics + num_sources);
    for _ in 0..num_mics + num_sources {
        let point = (0..MAX_ATTEMPTS_PER_POINT)
            .map(|_| {
                let mut p = [0.0; 3];
                for (x, d) in p.iter_mut().zip(room.dimensions) {
                    *x = rng.random_range(WALL_MARGIN..d - WALL_MARGIN);
                }
                p
            })
            .find(|p| placed.iter().all(|q| distance(p, q) >= MIN_SEPARATION))
            .ok_or_else(|| {
                SimError::Sampling(format!(
                    "could not place point {} after {MAX_ATTEMPTS_PER_POINT} attempts",
                    placed.len()
                ))
            })?;
        placed.push(point);
    }

    let faulty = sample_indices(&mut rng, num_mics, num_faulty).into_vec();
    let mics = placed[..num_mics]
        .iter()
        .enumerate()
        .map(|(id, p)| MicSpec {
            id,
            position: *p,
            known_position: !faulty.contains(&id),
        })
        .collect();

    Ok(SceneLayout {
        room: room.clone(),
        mics,
        source_positions: placed[num_mics..].to_vec(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eleven_known_mics() {
        let room = RoomSpec::default();
        let layout = sample_scene(&room, 11, 1, 0, 3).unwrap();
        assert_eq!(layout.mics.len(), 11);
        assert_eq!(layout.source_positions.len(), 1);
        assert!(layout.mics.iter().all(|m| m.known_position));
        let all: Vec<Vec3> = layout
            .mics
            .iter()
            .map(|m| m.position)
            .chain(layout.source_positions.iter().copied())
            .collect();
        for (i, p) in all.iter().enumerate() {
            for axis in 0..3 {
                assert!(p[axis] >= WALL_MARGIN && p[axis] <= room.dimensions[axis] - WALL_MARGIN);
            }
            for q in &all[i + 1..] {
                assert!(distance(p, q) >= MIN_SEPARATION);
            }
        }
    }

    #[test]
    fn single_faulty_mic() {
        let layout = sample_scene(&RoomSpec::default(), 1, 1, 1, 9).unwrap();
        assert!(!layout.mics[0].known_position);
    }

    #[test]
    fn exact_faulty_count_and_determinism() {
        let room = RoomSpec::default();
        let a = sample_scene(&room, 8, 2, 3, 42).unwrap();
        let b = sample_scene(&room, 8, 2, 3, 42).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.mics.iter().filter(|m| !m.known_position).count(), 3);
        assert_ne!(a, sample_scene(&room, 8, 2, 3, 43).unwrap());
    }

    #[test]
    fn infeasible_packing_fails() {
        let room = RoomSpec {
            dimensions: [0.3, 0.3, 0.3],
            ..RoomSpec::default()
        };
        assert!(matches!(
            sample_scene(&room, 20, 1, 0, 0),
            Err(SimError::Sampling(_))
        ));
        assert!(matches!(
            sample_scene(&RoomSpec::default(), 2, 1, 3, 0),
            Err(SimError::Sampling(_))
        ));
    }
}
