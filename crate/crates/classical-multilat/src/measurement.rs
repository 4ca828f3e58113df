use acoustic_sim::{distance, Vec3};

use crate::error::{MultilatError, MultilatResult};

/// Delays of every microphone relative to a reference microphone.
///
/// `delays[i]` is the arrival time at mic `i` minus the arrival time at the
/// reference, so the reference entry is 0.
#[derive(Debug, Clone, PartialEq)]
pub struct TdoaMeasurementSet {
    pub reference: usize,
    pub delays: Vec<f64>,
    pub mic_positions: Vec<Vec3>,
    /// Assumed Gaussian delay noise std, seconds.
    pub noise_std: f64,
    pub speed_of_sound: f64,
}

impl TdoaMeasurementSet {
    pub fn new(
        reference: usize,
        delays: Vec<f64>,
        mic_positions: Vec<Vec3>,
        noise_std: f64,
        speed_of_sound: f64,
    ) -> MultilatResult<Self> {
        if delays.len() != mic_positions.len() {
            return Err(MultilatError::Shape(format!(
                "{} delays for {} microphones",
                delays.len(),
                mic_positions.len()
            )));
        }
        if reference >= delays.len() {
            return Err(MultilatError::Shape(format!(
                "reference {reference} out of range for {} microphones",
                delays.len()
            )));
        }
        if delays[reference] != 0.0 {
            return Err(MultilatError::Shape(format!(
                "reference delay must be 0, got {}",
                delays[reference]
            )));
        }
        if !(speed_of_sound.is_finite() && speed_of_sound > 0.0) || !(noise_std.is_finite() && noise_std >= 0.0) {
            return Err(MultilatError::InvalidConfig(
                "speed of sound must be positive and noise std non-negative".into(),
            ));
        }
        if delays.iter().chain(mic_positions.iter().flatten()).any(|v| !v.is_finite()) {
            return Err(MultilatError::Shape("non-finite delay or position".into()));
        }
        Ok(Self {
            reference,
            delays,
            mic_positions,
            noise_std,
            speed_of_sound,
        })
    }

    /// Noiseless delays of a point source at `source`.
    pub fn from_source(
        mic_positions: Vec<Vec3>,
        source: &Vec3,
        reference: usize,
        speed_of_sound: f64,
    ) -> MultilatResult<Self> {
        let r0 = mic_positions
            .get(reference)
            .map(|m| distance(m, source))
            .ok_or_else(|| MultilatError::Shape("reference out of range".into()))?;
        let delays = mic_positions
            .iter()
            .enumerate()
            .map(|(i, m)| if i == reference { 0.0 } else { (distance(m, source) - r0) / speed_of_sound })
            .collect();
        Self::new(reference, delays, mic_positions, 0.0, speed_of_sound)
    }

    pub fn num_mics(&self) -> usize {
        self.mic_positions.len()
    }

    /// Indices of the non-reference microphones, in measurement order.
    pub fn measured(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.num_mics()).filter(move |i| *i != self.reference)
    }

    /// Delay residuals (predicted minus measured, seconds) at `position`.
    pub fn residuals(&self, position: &Vec3) -> Vec<f64> {
        let r0 = distance(&self.mic_positions[self.reference], position);
        self.measured()
            .map(|i| (distance(&self.mic_positions[i], position) - r0) / self.speed_of_sound - self.delays[i])
            .collect()
    }

    pub fn residual_rms(&self, position: &Vec3) -> f64 {
        let r = self.residuals(position);
        if r.is_empty() {
            return 0.0;
        }
        (r.iter().map(|v| v * v).sum::<f64>() / r.len() as f64).sqrt()
    }

    /// Microphones whose range difference `|delay * c|` exceeds their distance
    /// to the reference by more than `slack` meters; no source can produce such
    /// a delay.
    pub fn physicality_violations(&self, slack: f64) -> Vec<usize> {
        let reference = &self.mic_positions[self.reference];
        self.measured()
            .filter(|i| {
                (self.delays[*i] * self.speed_of_sound).abs() > distance(reference, &self.mic_positions[*i]) + slack
            })
            .collect()
    }
}
