//! Three-stream sound source localizer.
//!
//! Each scene becomes one token per microphone followed by one per source.
//! An acoustic stream carries frozen spectrogram embeddings, a coordinate
//! stream carries encoded positions plus a coherence-weighted TDOA embedding,
//! and a masked transformer reconstructs whatever was hidden: microphone
//! audio, microphone positions and source positions.

mod audio;
mod config;
mod error;
mod layers;
mod loss;
mod model;
mod tokens;
mod train;

pub use audio::{orthonormal_projection, FrozenAudioEncoder, LOG_FLOOR};
pub use config::{AggregateMode, InputSpec, ModelConfig, Scenario};
pub use error::{ModelError, ModelResult};
pub use layers::{Attention, Block, Init, LayerNorm, Linear, Mlp2};
pub use loss::{
    best_source_permutation, loss_on_tape, match_by_distance, permutations, source_localization_loss, total_loss,
    LossBreakdown, MAX_MATCHED_SOURCES,
};
pub use model::{ForwardPass, Prediction, SslModel, FILTER_WEIGHTS_PARAM, PROJECTION_PARAM};
pub use tokens::{apply_mask, MicInput, SceneInput, SourceInput, TokenMask};
pub use train::{evaluation_loss, scene_loss, train, EpochLog, TrainConfig, TrainReport};
