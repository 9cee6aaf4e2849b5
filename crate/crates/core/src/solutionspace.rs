//! Geometry of fused solutions in RGB space.
//!
//! Three globally adjusted pixel values `X`, `Y`, `Z` span the set of colors a
//! single-channel fusion can reach. Without constraints any color is a linear
//! combination of a nonsingular basis; with confidence values restricted to
//! [0, 1] the reachable set shrinks to the parallelepiped
//! `S = { w1·X + w2·Y + w3·Z : w ∈ [0,1]^3 }`, and the deviation of a target
//! color is its Euclidean distance to `S`.

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RgbPoint {
    pub r: f64,
    pub g: f64,
    pub b: f64,
}

impl RgbPoint {
    pub const fn new(r: f64, g: f64, b: f64) -> Self {
        RgbPoint { r, g, b }
    }

    pub fn to_vector(self) -> Vector3<f64> {
        Vector3::new(self.r, self.g, self.b)
    }

    pub fn from_vector(v: Vector3<f64>) -> Self {
        RgbPoint::new(v.x, v.y, v.z)
    }

    pub fn distance(self, other: RgbPoint) -> f64 {
        (self.to_vector() - other.to_vector()).norm()
    }

    pub fn is_finite(self) -> bool {
        self.r.is_finite() && self.g.is_finite() && self.b.is_finite()
    }
}

impl std::str::FromStr for RgbPoint {
    type Err = String;

    /// `r,g,b`
    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        let parts: Vec<f64> = s
            .split(',')
            .map(|t| t.trim().parse::<f64>().map_err(|e| format!("`{}`: {e}", t.trim())))
            .collect::<std::result::Result<_, _>>()?;
        match parts[..] {
            [r, g, b] if parts.iter().all(|v| v.is_finite()) => Ok(RgbPoint::new(r, g, b)),
            [_, _, _] => Err("point components must be finite".into()),
            _ => Err(format!("expected three components, got {}", parts.len())),
        }
    }
}

/// Sum of Euclidean distances from `anchor` to each target.
pub fn deviation_sum(anchor: RgbPoint, targets: &[RgbPoint]) -> f64 {
    targets.iter().map(|&t| anchor.distance(t)).sum()
}

fn basis_matrix(x: RgbPoint, y: RgbPoint, z: RgbPoint) -> Matrix3<f64> {
    Matrix3::from_columns(&[x.to_vector(), y.to_vector(), z.to_vector()])
}

/// Relative determinant threshold below which a basis counts as singular.
const SINGULAR_TOLERANCE: f64 = 1e-12;

/// Weights `w` with `w1·x + w2·y + w3·z = d`.
pub fn solve_basis_weights(
    x: RgbPoint,
    y: RgbPoint,
    z: RgbPoint,
    d: RgbPoint,
) -> Result<[f64; 3]> {
    let basis = basis_matrix(x, y, z);
    let determinant = basis.determinant();
    let scale = basis.column(0).norm() * basis.column(1).norm() * basis.column(2).norm();
    if !(determinant.abs() > SINGULAR_TOLERANCE * scale) {
        return Err(Error::SingularBasis { determinant });
    }
    let w = basis
        .lu()
        .solve(&d.to_vector())
        .ok_or(Error::SingularBasis { determinant })?;
    Ok([w.x, w.y, w.z])
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Projection {
    pub point: RgbPoint,
    pub weights: [f64; 3],
    pub distance: f64,
}

const MAX_ITERATIONS: usize = 500;
const STEP_TOLERANCE: f64 = 1e-10;
const BOUND_SLACK: f64 = 1e-9;

/// Nearest point to `d` in the box-weighted span of `x`, `y`, `z`.
///
/// Runs projected gradient with exact line search on the box-constrained
/// least-squares problem, then solves the reduced system on the active set it
/// identified. If the result does not satisfy the first-order conditions
/// (possible for badly conditioned bases), every face of the box is checked.
pub fn project_constrained(x: RgbPoint, y: RgbPoint, z: RgbPoint, d: RgbPoint) -> Projection {
    let basis = basis_matrix(x, y, z);
    let target = d.to_vector();
    let hessian = basis.transpose() * basis;
    let linear = basis.transpose() * target;
    let objective = |w: &Vector3<f64>| 0.5 * (basis * w - target).norm_squared();

    let mut w = Vector3::repeat(0.5);
    let step = 1.0 / hessian.trace().max(f64::MIN_POSITIVE);
    for _ in 0..MAX_ITERATIONS {
        let grad = hessian * w - linear;
        let trial = (w - grad * step).map(|v| v.clamp(0.0, 1.0));
        let dir = trial - w;
        let curvature = dir.dot(&(hessian * dir));
        let slope = grad.dot(&dir);
        if slope >= 0.0 {
            break;
        }
        let t = if curvature > 0.0 {
            (-slope / curvature).min(1.0)
        } else {
            1.0
        };
        let next = (w + dir * t).map(|v| v.clamp(0.0, 1.0));
        let moved = (next - w).amax();
        w = next;
        if moved < STEP_TOLERANCE {
            break;
        }
    }

    let free: [bool; 3] =
        std::array::from_fn(|i| w[i] > BOUND_SLACK && w[i] < 1.0 - BOUND_SLACK);
    let fixed = w.map(|v| if v >= 0.5 { 1.0 } else { 0.0 });
    if let Some(polished) = solve_face(&hessian, &linear, free, &fixed) {
        if objective(&polished) <= objective(&w) {
            w = polished;
        }
    }

    let scale = 1.0 + hessian.amax() + linear.amax();
    if kkt_violation_of(&hessian, &linear, &w) > 1e-9 * scale {
        w = enumerate_faces(&hessian, &linear, &objective).unwrap_or(w);
    }

    let point = basis * w;
    Projection {
        point: RgbPoint::from_vector(point),
        weights: [w.x, w.y, w.z],
        distance: (point - target).norm(),
    }
}

/// Minimize over the face where `free` coordinates vary and the rest are
/// pinned to `fixed`. Returns `None` when the face minimizer leaves the box.
fn solve_face(
    hessian: &Matrix3<f64>,
    linear: &Vector3<f64>,
    free: [bool; 3],
    fixed: &Vector3<f64>,
) -> Option<Vector3<f64>> {
    let idx: Vec<usize> = (0..3).filter(|&i| free[i]).collect();
    let mut w = *fixed;
    for &i in &idx {
        w[i] = 0.0;
    }
    if idx.is_empty() {
        return Some(w);
    }
    let k = idx.len();
    let reduced = DMatrix::from_fn(k, k, |a, b| hessian[(idx[a], idx[b])]);
    let rhs = DVector::from_fn(k, |a, _| {
        let i = idx[a];
        linear[i] - (0..3).filter(|&j| !free[j]).map(|j| hessian[(i, j)] * w[j]).sum::<f64>()
    });
    let pinv = reduced.pseudo_inverse(1e-14 * (1.0 + hessian.amax())).ok()?;
    let sol = pinv * rhs;
    for (a, &i) in idx.iter().enumerate() {
        if !(-BOUND_SLACK..=1.0 + BOUND_SLACK).contains(&sol[a]) {
            return None;
        }
        w[i] = sol[a].clamp(0.0, 1.0);
    }
    Some(w)
}

fn enumerate_faces(
    hessian: &Matrix3<f64>,
    linear: &Vector3<f64>,
    objective: &impl Fn(&Vector3<f64>) -> f64,
) -> Option<Vector3<f64>> {
    let mut best: Option<(f64, Vector3<f64>)> = None;
    // Each coordinate is pinned at 0, pinned at 1, or free.
    for code in 0..27usize {
        let states = [code % 3, (code / 3) % 3, code / 9];
        let free = states.map(|s| s == 2);
        let fixed = Vector3::from_fn(|i, _| if states[i] == 1 { 1.0 } else { 0.0 });
        if let Some(w) = solve_face(hessian, linear, free, &fixed) {
            let f = objective(&w);
            if best.is_none_or(|(bf, _)| f < bf) {
                best = Some((f, w));
            }
        }
    }
    best.map(|(_, w)| w)
}

fn kkt_violation_of(hessian: &Matrix3<f64>, linear: &Vector3<f64>, w: &Vector3<f64>) -> f64 {
    let grad = hessian * w - linear;
    (0..3)
        .map(|i| {
            if w[i] <= BOUND_SLACK {
                (-grad[i]).max(0.0)
            } else if w[i] >= 1.0 - BOUND_SLACK {
                grad[i].max(0.0)
            } else {
                grad[i].abs()
            }
        })
        .fold(0.0, f64::max)
}

/// Largest violation of the first-order optimality conditions for `weights`
/// as a minimizer of the distance from the weighted basis to `d`.
///
/// Interior weights need a zero gradient component; weights at 0 need a
/// nonnegative one and weights at 1 a nonpositive one.
pub fn kkt_violation(
    x: RgbPoint,
    y: RgbPoint,
    z: RgbPoint,
    d: RgbPoint,
    weights: [f64; 3],
) -> f64 {
    let basis = basis_matrix(x, y, z);
    let hessian = basis.transpose() * basis;
    let linear = basis.transpose() * d.to_vector();
    kkt_violation_of(&hessian, &linear, &Vector3::from(weights))
}
