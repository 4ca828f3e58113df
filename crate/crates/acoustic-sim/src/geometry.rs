use serde::{Deserialize, Serialize};

use crate::error::{SimError, SimResult};
use crate::signal::SignalKind;

/// Cartesian position in meters.
pub type Vec3 = [f64; 3];

pub fn distance(a: &Vec3, b: &Vec3) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

/// How propagation delays that fall between samples are placed on the tap grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DelayInterpolation {
    /// Each image contributes one tap at the nearest sample.
    #[default]
    Nearest,
    /// Each image contributes a Hann-windowed sinc kernel of the given half width.
    Sinc { half_width: usize },
}

/// Shoebox room with one corner at the origin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoomSpec {
    pub dimensions: Vec3,
    /// Energy absorption per wall, ordered `[x=0, x=Lx, y=0, y=Ly, z=0, z=Lz]`.
    pub wall_absorption: [f64; 6],
    pub speed_of_sound: f64,
    pub sample_rate: u32,
    pub max_reflection_order: u32,
    #[serde(default)]
    pub delay_interpolation: DelayInterpolation,
}

impl Default for RoomSpec {
    fn default() -> Self {
        Self {
            dimensions: [7.0, 8.0, 2.0],
            wall_absorption: [0.5; 6],
            speed_of_sound: 343.0,
            sample_rate: 16_000,
            max_reflection_order: 1,
            delay_interpolation: DelayInterpolation::Nearest,
        }
    }
}

impl RoomSpec {
    pub fn validate(&self) -> SimResult<()> {
        if self.dimensions.iter().any(|d| !(d.is_finite() && *d > 0.0)) {
            return Err(SimError::InvalidRoom(format!(
                "dimensions must be positive, got {:?}",
                self.dimensions
            )));
        }
        if self
            .wall_absorption
            .iter()
            .any(|a| !(0.0..=1.0).contains(a))
        {
            return Err(SimError::InvalidRoom(format!(
                "wall absorption must lie in [0, 1], got {:?}",
                self.wall_absorption
            )));
        }
        if !(self.speed_of_sound.is_finite() && self.speed_of_sound > 0.0) {
            return Err(SimError::InvalidRoom(format!(
                "speed of sound must be positive, got {}",
                self.speed_of_sound
            )));
        }
        if self.sample_rate == 0 {
            return Err(SimError::InvalidRoom("sample rate must be positive".into()));
        }
        if let DelayInterpolation::Sinc { half_width } = self.delay_interpolation {
            if half_width == 0 {
                return Err(SimError::InvalidRoom("sinc half width must be >= 1".into()));
            }
        }
        Ok(())
    }

    /// True when `p` lies strictly inside the room.
    pub fn contains(&self, p: &Vec3) -> bool {
        p.iter()
            .zip(self.dimensions.iter())
            .all(|(x, d)| x.is_finite() && *x > 0.0 && x < d)
    }

    pub fn center(&self) -> Vec3 {
        [
            self.dimensions[0] / 2.0,
            self.dimensions[1] / 2.0,
            self.dimensions[2] / 2.0,
        ]
    }

    pub fn diagonal(&self) -> f64 {
        distance(&[0.0; 3], &self.dimensions)
    }

    /// Amplitude reflection coefficient of each wall, `sqrt(1 - absorption)`.
    pub fn reflection_coefficients(&self) -> [f64; 6] {
        self.wall_absorption.map(|a| (1.0 - a).max(0.0).sqrt())
    }

    /// Largest lag (in samples) any physical path difference inside the room can produce.
    pub fn max_lag_samples(&self) -> usize {
        (self.diagonal() / self.speed_of_sound * self.sample_rate as f64).ceil() as usize
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MicSpec {
    pub id: usize,
    pub position: Vec3,
    /// `false` marks a faulty microphone whose position must be estimated.
    pub known_position: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceSpec {
    pub id: usize,
    pub position: Vec3,
    pub kind: SignalKind,
    /// Emitted samples, stored at recording precision.
    #[serde(skip)]
    pub signal: Vec<f32>,
}

/// Everything needed to render a recording.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Scene {
    pub room: RoomSpec,
    pub mics: Vec<MicSpec>,
    pub sources: Vec<SourceSpec>,
}

impl Scene {
    pub fn validate(&self) -> SimResult<()> {
        self.room.validate()?;
        for m in &self.mics {
            if !self.room.contains(&m.position) {
                return Err(SimError::Geometry(format!(
                    "microphone {} at {:?} is outside the room",
                    m.id, m.position
                )));
            }
        }
        for s in &self.sources {
            if !self.room.contains(&s.position) {
                return Err(SimError::Geometry(format!(
                    "source {} at {:?} is outside the room",
                    s.id, s.position
                )));
            }
            if s.signal.iter().any(|v| !v.is_finite()) {
                return Err(SimError::Shape(format!(
                    "source {} has non-finite samples",
                    s.id
                )));
            }
        }
        Ok(())
    }
}
