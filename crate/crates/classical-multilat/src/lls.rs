use nalgebra::{DMatrix, DVector};

use crate::error::{MultilatError, MultilatResult};
use crate::measurement::TdoaMeasurementSet;
use crate::solve::SolveResult;

/// Singular values below this fraction of the largest count as zero.
const RANK_TOL: f64 = 1e-9;

/// Linear least squares on squared range differences.
///
/// With `R0` the source distance to the reference mic `m0` and
/// `d_i = c * tau_i`, squaring `|x - m_i| = R0 + d_i` and subtracting
/// `|x - m0|^2 = R0^2` gives one equation per non-reference mic, linear in the
/// unknowns `(x, R0)`:
///
/// `2 (m_i - m0) . x + 2 d_i R0 = |m_i|^2 - |m0|^2 - d_i^2`
///
/// The minimum-norm solution is used, so when every `d_i` is zero `R0` drops
/// out and `x` is the point equidistant from all mics.
pub fn lls_squared_range(meas: &TdoaMeasurementSet) -> MultilatResult<SolveResult> {
    let rows = meas.num_mics().saturating_sub(1);
    if rows < 4 {
        return Err(MultilatError::DegenerateGeometry(format!(
            "{} microphones give {rows} range differences; at least 4 are needed",
            meas.num_mics()
        )));
    }
    let m0 = meas.mic_positions[meas.reference];
    let norm2 = |p: &[f64; 3]| p.iter().map(|v| v * v).sum::<f64>();
    let mut a = DMatrix::zeros(rows, 4);
    let mut b = DVector::zeros(rows);
    for (row, i) in meas.measured().enumerate() {
        let mi = meas.mic_positions[i];
        let di = meas.delays[i] * meas.speed_of_sound;
        for k in 0..3 {
            a[(row, k)] = 2.0 * (mi[k] - m0[k]);
        }
        a[(row, 3)] = 2.0 * di;
        b[row] = norm2(&mi) - norm2(&m0) - di * di;
    }

    let spatial = a.columns(0, 3).into_owned().svd(false, false);
    let smax = spatial.singular_values.max();
    if smax == 0.0 || spatial.singular_values.min() <= RANK_TOL * smax {
        return Err(MultilatError::DegenerateGeometry(
            "microphone offsets from the reference do not span 3D".into(),
        ));
    }
    let svd = a.svd(true, true);
    let eps = RANK_TOL * svd.singular_values.max();
    let x = svd
        .solve(&b, eps)
        .map_err(|e| MultilatError::DegenerateGeometry(e.to_string()))?;
    let position = [x[0], x[1], x[2]];
    if position.iter().any(|v| !v.is_finite()) {
        return Err(MultilatError::DegenerateGeometry("non-finite least-squares solution".into()));
    }
    Ok(SolveResult {
        position,
        residual_rms: meas.residual_rms(&position),
        converged: true,
        iterations_used: 0,
        weights: vec![1.0; rows],
        cost_history: Vec::new(),
    })
}
