//! Coordinate-stream signal features.
//!
//! Pairwise GCC-PHAT correlation responses (optionally through a bank of
//! band filters), Welch cross/auto spectra, magnitude-squared coherence and
//! the coherence-weighted aggregate of all pair responses. Peak picking for
//! classical TDOA solvers lives here too.

mod ascm;
mod coherence;
mod error;
mod filterbank;
mod fourier;
mod gcc;
mod welch;

pub use ascm::{ascm_weight, coherence_pair_weights, pair_weight, AscmMode, PerFilterAggregate, WeightedTdoaFeature};
pub use coherence::{coherence, CoherenceProfile};
pub use error::{FeatureError, FeatureResult};
pub use filterbank::{FilterBank, FilterResponse};
pub use fourier::{dft, dft_complex, idft, idft_real, Complex64};
pub use gcc::{
    estimate_tdoa, gcc_phat, ngcc_phat, ngcc_phat_responses, CorrelationFeature, PHAT_FLOOR,
};
pub use welch::{welch_psd, WelchConfig, WelchSpectra, Window};
