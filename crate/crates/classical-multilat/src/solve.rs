use acoustic_sim::{distance, Vec3};
use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{MultilatError, MultilatResult};
use crate::lls::lls_squared_range;
use crate::measurement::TdoaMeasurementSet;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RobustLoss {
    #[default]
    None,
    Huber,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    pub max_iterations: usize,
    /// Convergence threshold on the position step, meters.
    pub tol: f64,
    pub robust_loss: RobustLoss,
    /// Huber threshold in seconds; `None` means twice the assumed noise std.
    pub huber_delta: Option<f64>,
    /// Random starting points tried when the linear initialization fails.
    pub initializations: usize,
    pub seed: u64,
    /// Box `[0, bounds]` holding the source, used for restarts.
    pub bounds: Option<Vec3>,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            max_iterations: 100,
            tol: 1e-10,
            robust_loss: RobustLoss::None,
            huber_delta: None,
            initializations: 5,
            seed: 0,
            bounds: None,
        }
    }
}

impl SolverConfig {
    pub fn robust() -> Self {
        Self {
            robust_loss: RobustLoss::Huber,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> MultilatResult<()> {
        if !(self.tol.is_finite() && self.tol > 0.0) {
            return Err(MultilatError::InvalidConfig(format!("tol must be positive, got {}", self.tol)));
        }
        if self.max_iterations == 0 {
            return Err(MultilatError::InvalidConfig("max_iterations must be at least 1".into()));
        }
        if let Some(d) = self.huber_delta {
            if !(d.is_finite() && d > 0.0) {
                return Err(MultilatError::InvalidConfig(format!("huber_delta must be positive, got {d}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveResult {
    pub position: Vec3,
    /// RMS of delay residuals, seconds.
    pub residual_rms: f64,
    pub converged: bool,
    pub iterations_used: usize,
    /// Final IRLS weight of each non-reference measurement; all 1 without a
    /// robust loss.
    pub weights: Vec<f64>,
    /// Objective value at the start and after every accepted step.
    pub cost_history: Vec<f64>,
}

impl SolveResult {
    pub fn final_cost(&self) -> f64 {
        self.cost_history.last().copied().unwrap_or(f64::INFINITY)
    }
}

/// Range-difference residuals (meters) and their gradients at `x`.
fn linearize(meas: &TdoaMeasurementSet, x: &Vector3<f64>) -> (Vec<f64>, Vec<Vector3<f64>>) {
    let c = meas.speed_of_sound;
    let unit = |m: &Vec3| {
        let d = x - Vector3::new(m[0], m[1], m[2]);
        let n = d.norm();
        (n, if n > 0.0 { d / n } else { Vector3::zeros() })
    };
    let (r0, u0) = unit(&meas.mic_positions[meas.reference]);
    meas.measured()
        .map(|i| {
            let (ri, ui) = unit(&meas.mic_positions[i]);
            (ri - r0 - c * meas.delays[i], ui - u0)
        })
        .unzip()
}

struct Objective {
    /// Huber threshold in meters; infinite for plain least squares.
    delta: f64,
}

impl Objective {
    fn rho(&self, e: f64) -> f64 {
        let a = e.abs();
        if a <= self.delta {
            0.5 * e * e
        } else {
            self.delta * (a - 0.5 * self.delta)
        }
    }

    fn weight(&self, e: f64) -> f64 {
        let a = e.abs();
        if a <= self.delta {
            1.0
        } else {
            self.delta / a
        }
    }

    fn cost(&self, meas: &TdoaMeasurementSet, x: &Vector3<f64>) -> f64 {
        linearize(meas, x).0.iter().map(|e| self.rho(*e)).sum()
    }
}

fn objective(meas: &TdoaMeasurementSet, config: &SolverConfig) -> Objective {
    let delta = match config.robust_loss {
        RobustLoss::None => f64::INFINITY,
        RobustLoss::Huber => {
            let seconds = config.huber_delta.unwrap_or(2.0 * meas.noise_std);
            if seconds > 0.0 {
                seconds * meas.speed_of_sound
            } else {
                f64::INFINITY
            }
        }
    };
    Objective { delta }
}

/// Damped Gauss-Newton (Levenberg-Marquardt) on delay residuals, with Huber
/// iteratively reweighted least squares in robust mode. Only steps that do not
/// increase the objective are accepted.
pub fn gauss_newton_refine(meas: &TdoaMeasurementSet, initial: &Vec3, config: &SolverConfig) -> MultilatResult<SolveResult> {
    config.validate()?;
    if initial.iter().any(|v| !v.is_finite()) {
        return Err(MultilatError::Shape(format!("initial point {initial:?} is not finite")));
    }
    let obj = objective(meas, config);
    let mut x = Vector3::new(initial[0], initial[1], initial[2]);
    let mut cost = obj.cost(meas, &x);
    let mut history = vec![cost];
    let mut lambda = 1e-3;
    let mut converged = false;
    let mut iterations = 0;

    'outer: for it in 1..=config.max_iterations {
        iterations = it;
        let (e, grads) = linearize(meas, &x);
        let mut h = Matrix3::zeros();
        let mut g = Vector3::zeros();
        for (ei, ji) in e.iter().zip(&grads) {
            let w = obj.weight(*ei);
            h += w * ji * ji.transpose();
            g += w * *ei * ji;
        }
        let max_diag = h.diagonal().max();
        let floor = (1e-12 * max_diag).max(1e-300);
        for _ in 0..30 {
            let mut damped = h;
            for k in 0..3 {
                damped[(k, k)] += lambda * h[(k, k)].max(floor);
            }
            let Some(step) = damped.lu().solve(&(-g)) else {
                lambda *= 10.0;
                continue;
            };
            let candidate = x + step;
            let new_cost = obj.cost(meas, &candidate);
            if new_cost.is_finite() && new_cost <= cost {
                x = candidate;
                cost = new_cost;
                history.push(cost);
                lambda = (lambda / 10.0).max(1e-12);
                if step.norm() < config.tol {
                    converged = true;
                    break 'outer;
                }
                continue 'outer;
            }
            lambda *= 10.0;
        }
        break;
    }

    let position = [x[0], x[1], x[2]];
    let (e, _) = linearize(meas, &x);
    Ok(SolveResult {
        position,
        residual_rms: meas.residual_rms(&position),
        converged,
        iterations_used: iterations,
        weights: e.iter().map(|v| obj.weight(*v)).collect(),
        cost_history: history,
    })
}

fn search_box(meas: &TdoaMeasurementSet, config: &SolverConfig) -> (Vec3, Vec3) {
    if let Some(b) = config.bounds {
        return ([0.0; 3], b);
    }
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for m in &meas.mic_positions {
        for k in 0..3 {
            lo[k] = lo[k].min(m[k]);
            hi[k] = hi[k].max(m[k]);
        }
    }
    (lo, hi)
}

fn restart_points(meas: &TdoaMeasurementSet, config: &SolverConfig) -> Vec<Vec3> {
    let (lo, hi) = search_box(meas, config);
    let center = [0.5 * (lo[0] + hi[0]), 0.5 * (lo[1] + hi[1]), 0.5 * (lo[2] + hi[2])];
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut starts = vec![center];
    for _ in 0..config.initializations {
        starts.push(std::array::from_fn(|k| {
            if hi[k] > lo[k] {
                rng.random_range(lo[k]..hi[k])
            } else {
                lo[k]
            }
        }));
    }
    starts
}

/// Linear initialization followed by refinement.
///
/// The refinement also starts from the search-box center and
/// `config.initializations` random points, keeping the lowest objective, when
/// the linear step fails or a robust loss is active. A gross outlier corrupts
/// the unweighted linear solution and the Huber objective is not convex, so
/// the linear start alone can settle in a wrong basin.
pub fn solve(meas: &TdoaMeasurementSet, config: &SolverConfig) -> MultilatResult<SolveResult> {
    config.validate()?;
    let linear = lls_squared_range(meas).ok();
    let mut starts = Vec::new();
    if let Some(init) = &linear {
        starts.push(init.position);
    }
    if linear.is_none() || config.robust_loss != RobustLoss::None {
        starts.extend(restart_points(meas, config));
    }
    let mut best: Option<SolveResult> = None;
    for s in starts {
        let r = gauss_newton_refine(meas, &s, config)?;
        if best.as_ref().map_or(true, |b| r.final_cost() < b.final_cost()) {
            best = Some(r);
        }
    }
    best.ok_or_else(|| MultilatError::DegenerateGeometry("no starting point".into()))
}

/// Euclidean distance between a solution and a reference point, meters.
pub fn position_error(result: &SolveResult, truth: &Vec3) -> f64 {
    distance(&result.position, truth)
}
