//! Synthetic 3D acoustic scenes.
//!
//! Rooms are shoebox enclosures; impulse responses come from the
//! image-source method and recordings are the noisy superposition of every
//! source convolved with its source-to-microphone response.

mod dataset;
mod error;
mod geometry;
mod render;
mod rir;
mod sampling;
mod signal;

pub use dataset::{read_dataset, write_dataset, FORMAT_MAGIC, FORMAT_VERSION};
pub use error::{SimError, SimResult};
pub use geometry::{distance, DelayInterpolation, MicSpec, RoomSpec, Scene, SourceSpec, Vec3};
pub use render::{mix_sources, render_mixture, SceneRecording};
pub use rir::{generate_rir, ImpulseResponse};
pub use sampling::{sample_scene, SceneLayout, MIN_SEPARATION, WALL_MARGIN};
pub use signal::{generate_signal, SignalKind};
