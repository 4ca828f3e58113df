use std::f64::consts::PI;

use crate::error::{SimError, SimResult};
use crate::geometry::{distance, DelayInterpolation, RoomSpec, Vec3};

/// Sources closer than this to a microphone are rejected.
const MIN_DIRECT_DISTANCE: f64 = 1e-3;

/// Room impulse response from one source to one microphone.
#[derive(Debug, Clone, PartialEq)]
pub struct ImpulseResponse {
    pub taps: Vec<f64>,
    pub source_id: usize,
    pub mic_id: usize,
}

impl ImpulseResponse {
    pub fn with_ids(mut self, source_id: usize, mic_id: usize) -> Self {
        self.source_id = source_id;
        self.mic_id = mic_id;
        self
    }

    pub fn first_nonzero(&self) -> Option<usize> {
        self.taps.iter().position(|t| *t != 0.0)
    }

    pub fn energy(&self) -> f64 {
        self.taps.iter().map(|t| t * t).sum()
    }

    /// `(index, value)` for every nonzero tap.
    pub fn nonzero_taps(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.taps
            .iter()
            .enumerate()
            .filter(|(_, t)| **t != 0.0)
            .map(|(i, t)| (i, *t))
    }
}

/// One mirrored copy of the source and the product of wall reflection
/// coefficients along its path.
#[derive(Debug, Clone, Copy)]
struct Image {
    distance: f64,
    gain: f64,
}

fn enumerate_images(room: &RoomSpec, source: &Vec3, mic: &Vec3) -> Vec<Image> {
    let order = room.max_reflection_order as i64;
    let beta = room.reflection_coefficients();
    let mut images = Vec::new();

    // Per axis, an image index (n, q) mirrors the source q times about the
    // near wall and translates it by 2nL; it hits the near wall |n - q| times
    // and the far wall |n| times.
    for nx in -order..=order {
        for ny in -order..=order {
            for nz in -order..=order {
                for q in 0..8u8 {
                    let qs = [(q & 1) as i64, ((q >> 1) & 1) as i64, ((q >> 2) & 1) as i64];
                    let ns = [nx, ny, nz];
                    let mut hits = 0;
                    let mut gain = 1.0;
                    let mut pos = [0.0; 3];
                    for axis in 0..3 {
                        let near = (ns[axis] - qs[axis]).unsigned_abs();
                        let far = ns[axis].unsigned_abs();
                        hits += near + far;
                        gain *= beta[2 * axis].powi(near as i32) * beta[2 * axis + 1].powi(far as i32);
                        pos[axis] = (1 - 2 * qs[axis]) as f64 * source[axis]
                            + 2.0 * ns[axis] as f64 * room.dimensions[axis];
                    }
                    if hits > order as u64 || gain == 0.0 {
                        continue;
                    }
                    images.push(Image {
                        distance: distance(&pos, mic),
                        gain,
                    });
                }
            }
        }
    }
    images
}

fn hann_sinc(x: f64, half_width: usize) -> f64 {
    let span = half_width as f64 + 1.0;
    if x.abs() >= span {
        return 0.0;
    }
    let window = 0.5 * (1.0 + (PI * x / span).cos());
    let sinc = if x == 0.0 { 1.0 } else { (PI * x).sin() / (PI * x) };
    window * sinc
}

/// Image-source impulse response from `source` to `mic`.
///
/// Every image path up to the room's reflection order contributes
/// `(product of reflection coefficients) / (4 pi d)` at delay `d / c * fs`.
pub fn generate_rir(room: &RoomSpec, source: &Vec3, mic: &Vec3) -> SimResult<ImpulseResponse> {
    room.validate()?;
    if !room.contains(source) {
        return Err(SimError::Geometry(format!(
            "source {source:?} is not strictly inside the room"
        )));
    }
    if !room.contains(mic) {
        return Err(SimError::Geometry(format!(
            "microphone {mic:?} is not strictly inside the room"
        )));
    }
    let direct = distance(source, mic);
    if direct < MIN_DIRECT_DISTANCE {
        return Err(SimError::DegenerateGeometry(format!(
            "source and microphone are {direct:.2e} m apart"
        )));
    }

    let samples_per_meter = room.sample_rate as f64 / room.speed_of_sound;
    let mut taps: Vec<f64> = Vec::new();
    let mut add = |index: usize, value: f64| {
        if index >= taps.len() {
            taps.resize(index + 1, 0.0);
        }
        taps[index] += value;
    };

    for image in enumerate_images(room, source, mic) {
        let amplitude = image.gain / (4.0 * PI * image.distance);
        let delay = image.distance * samples_per_meter;
        match room.delay_interpolation {
            DelayInterpolation::Nearest => add(delay.round() as usize, amplitude),
            DelayInterpolation::Sinc { half_width } => {
                let center = delay.round() as i64;
                let lo = (center - half_width as i64).max(0);
                for k in lo..=center + half_width as i64 {
                    let w = hann_sinc(k as f64 - delay, half_width);
                    if w != 0.0 {
                        add(k as usize, amplitude * w);
                    }
                }
            }
        }
    }

    Ok(ImpulseResponse {
        taps,
        source_id: 0,
        mic_id: 0,
    })
}
