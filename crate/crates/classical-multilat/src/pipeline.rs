use acoustic_sim::SceneRecording;
use dsp_features::{estimate_tdoa, gcc_phat};

use crate::error::{MultilatError, MultilatResult};
use crate::measurement::TdoaMeasurementSet;
use crate::solve::{solve, SolveResult, SolverConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    /// Microphone id used as the delay reference; falls back to the first
    /// known-position mic when absent.
    pub reference_id: usize,
    pub solver: SolverConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            reference_id: 0,
            solver: SolverConfig::default(),
        }
    }
}

/// GCC-PHAT delays of every known-position mic against the reference, then
/// [`solve`]. Mics with unknown positions are ignored. The assumed delay noise
/// is the integer-lag quantization std `1 / (fs sqrt 12)`.
pub fn localize_pipeline(recording: &SceneRecording, config: &PipelineConfig) -> MultilatResult<SolveResult> {
    let scene = &recording.scene;
    let known: Vec<usize> = (0..scene.mics.len()).filter(|i| scene.mics[*i].known_position).collect();
    if known.len() < 5 {
        return Err(MultilatError::DegenerateGeometry(format!(
            "{} known-position microphones; at least 5 are needed",
            known.len()
        )));
    }
    let reference = known
        .iter()
        .position(|i| scene.mics[*i].id == config.reference_id)
        .unwrap_or(0);
    let fs = scene.room.sample_rate as f64;
    let tau_max = scene.room.max_lag_samples().min(recording.num_samples().saturating_sub(1));
    let channels: Vec<Vec<f64>> = known.iter().map(|i| recording.channel_f64(*i)).collect();
    let mut delays = vec![0.0; known.len()];
    for k in 0..known.len() {
        if k == reference {
            continue;
        }
        let feature = gcc_phat(&channels[reference], &channels[k], tau_max)?;
        delays[k] = estimate_tdoa(&feature, fs);
    }
    let meas = TdoaMeasurementSet::new(
        reference,
        delays,
        known.iter().map(|i| scene.mics[*i].position).collect(),
        1.0 / (fs * 12f64.sqrt()),
        scene.room.speed_of_sound,
    )?;
    let mut solver = config.solver.clone();
    solver.bounds.get_or_insert(scene.room.dimensions);
    solve(&meas, &solver)
}
