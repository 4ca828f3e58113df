use acoustic_sim::{distance, Vec3};
use nalgebra::{DMatrix, DVector, Matrix3, Vector3};

use crate::error::{MultilatError, MultilatResult};

/// Range residuals above this (meters, relative to the anchor spread) mean the
/// ranges admit no common point.
const CONSISTENCY_TOL: f64 = 1e-6;
/// Singular values below this fraction of the largest count as zero.
const RANK_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct Trilateration {
    pub position: Vec3,
    /// The mirror root when only three anchors are given.
    pub alternate: Option<Vec3>,
    /// Both roots lie inside the bounds (or no bounds were given), so the
    /// choice of `position` is arbitrary.
    pub ambiguous: bool,
}

fn v(p: &Vec3) -> Vector3<f64> {
    Vector3::new(p[0], p[1], p[2])
}

fn arr(p: &Vector3<f64>) -> Vec3 {
    [p[0], p[1], p[2]]
}

fn inside(p: &Vec3, bounds: &Vec3) -> bool {
    (0..3).all(|k| p[k] >= 0.0 && p[k] <= bounds[k])
}

fn spread(anchors: &[Vec3]) -> f64 {
    anchors
        .iter()
        .flat_map(|a| anchors.iter().map(move |b| distance(a, b)))
        .fold(0.0, f64::max)
        .max(1.0)
}

fn check_consistent(position: &Vec3, ranges: &[f64], anchors: &[Vec3]) -> MultilatResult<()> {
    let residual = ranges
        .iter()
        .zip(anchors)
        .map(|(r, a)| (distance(position, a) - r).abs())
        .fold(0.0, f64::max);
    if residual > CONSISTENCY_TOL * spread(anchors) {
        return Err(MultilatError::NoSolution { residual });
    }
    Ok(())
}

/// Position from absolute distances to known anchors.
///
/// With four or more anchors the squared-range differences form a linear
/// system whose solution is checked against every range. With three anchors
/// there are two mirror roots about the anchor plane; the one inside `bounds`
/// (a box from the origin) is returned.
pub fn trilaterate_closed_form(ranges: &[f64], anchors: &[Vec3], bounds: Option<&Vec3>) -> MultilatResult<Trilateration> {
    if ranges.len() != anchors.len() {
        return Err(MultilatError::Shape(format!(
            "{} ranges for {} anchors",
            ranges.len(),
            anchors.len()
        )));
    }
    if ranges.iter().any(|r| !(r.is_finite() && *r >= 0.0)) {
        return Err(MultilatError::Shape("ranges must be finite and non-negative".into()));
    }
    match anchors.len() {
        0..=2 => Err(MultilatError::DegenerateGeometry(format!(
            "{} anchors cannot fix a point in 3D",
            anchors.len()
        ))),
        3 => three_anchor(ranges, anchors, bounds),
        _ => linear(ranges, anchors),
    }
}

fn linear(ranges: &[f64], anchors: &[Vec3]) -> MultilatResult<Trilateration> {
    let a0 = v(&anchors[0]);
    let n = anchors.len() - 1;
    let mut a = DMatrix::zeros(n, 3);
    let mut b = DVector::zeros(n);
    for i in 1..anchors.len() {
        let ai = v(&anchors[i]);
        let row = 2.0 * (ai - a0);
        for k in 0..3 {
            a[(i - 1, k)] = row[k];
        }
        b[i - 1] = ai.norm_squared() - a0.norm_squared() - ranges[i].powi(2) + ranges[0].powi(2);
    }
    let svd = a.svd(true, true);
    let smax = svd.singular_values.max();
    if svd.singular_values.iter().any(|s| *s <= RANK_TOL * smax) {
        return Err(MultilatError::DegenerateGeometry("anchors are coplanar".into()));
    }
    let x = svd
        .solve(&b, RANK_TOL * smax)
        .map_err(|e| MultilatError::DegenerateGeometry(e.to_string()))?;
    let position = [x[0], x[1], x[2]];
    check_consistent(&position, ranges, anchors)?;
    Ok(Trilateration {
        position,
        alternate: None,
        ambiguous: false,
    })
}

fn three_anchor(ranges: &[f64], anchors: &[Vec3], bounds: Option<&Vec3>) -> MultilatResult<Trilateration> {
    let (p1, p2, p3) = (v(&anchors[0]), v(&anchors[1]), v(&anchors[2]));
    let d = (p2 - p1).norm();
    if d == 0.0 {
        return Err(MultilatError::DegenerateGeometry("coincident anchors".into()));
    }
    let ex = (p2 - p1) / d;
    let i = ex.dot(&(p3 - p1));
    let ey_raw = p3 - p1 - i * ex;
    let j = ey_raw.norm();
    if j <= RANK_TOL * d.max(1.0) {
        return Err(MultilatError::DegenerateGeometry("anchors are collinear".into()));
    }
    let ey = ey_raw / j;
    let ez = ex.cross(&ey);
    let (r1, r2, r3) = (ranges[0], ranges[1], ranges[2]);
    let x = (r1 * r1 - r2 * r2 + d * d) / (2.0 * d);
    let y = (r1 * r1 - r3 * r3 + i * i + j * j) / (2.0 * j) - i * x / j;
    let z2 = r1 * r1 - x * x - y * y;
    let scale = spread(anchors);
    if z2 < -CONSISTENCY_TOL * scale * scale {
        return Err(MultilatError::NoSolution {
            residual: (-z2).sqrt(),
        });
    }
    let z = z2.max(0.0).sqrt();
    let base = p1 + x * ex + y * ey;
    let up = arr(&(base + z * ez));
    let down = arr(&(base - z * ez));
    let (position, alternate, ambiguous) = match bounds {
        Some(b) if inside(&down, b) && !inside(&up, b) => (down, up, false),
        Some(b) if inside(&up, b) && !inside(&down, b) => (up, down, false),
        _ => (up, down, z > 0.0),
    };
    Ok(Trilateration {
        position,
        alternate: Some(alternate),
        ambiguous,
    })
}

/// Plain 3x3 determinant of the anchor differences; zero means coplanar.
pub fn anchor_volume(anchors: &[Vec3; 4]) -> f64 {
    let m = Matrix3::from_columns(&[
        v(&anchors[1]) - v(&anchors[0]),
        v(&anchors[2]) - v(&anchors[0]),
        v(&anchors[3]) - v(&anchors[0]),
    ]);
    m.determinant() / 6.0
}
