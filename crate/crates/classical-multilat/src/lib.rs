//! Classical TDOA source localization: closed-form trilateration, linear least
//! squares on squared range differences, and damped Gauss-Newton refinement
//! with an optional Huber loss, chained behind GCC-PHAT delay estimates.

mod error;
mod lls;
mod measurement;
mod pipeline;
mod solve;
mod trilateration;

pub use error::{MultilatError, MultilatResult};
pub use lls::lls_squared_range;
pub use measurement::TdoaMeasurementSet;
pub use pipeline::{localize_pipeline, PipelineConfig};
pub use solve::{gauss_newton_refine, position_error, solve, RobustLoss, SolveResult, SolverConfig};
pub use trilateration::{anchor_volume, trilaterate_closed_form, Trilateration};
