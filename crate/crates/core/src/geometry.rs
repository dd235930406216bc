//! Conversion between internal placement coordinates (distance, angle,
//! dihedral relative to a focal atom and its two nearest neighbors) and
//! Cartesian positions, plus rigid-alignment RMSD.
//!
//! Conventions:
//! - With a single reference atom the new atom is placed along the fixed
//!   global direction (1, 0, 0).
//! - With two reference atoms the new atom is placed in a fixed reference
//!   half-plane through the focal -> neighbor axis.
//! - With three reference atoms the dihedral angle is measured between the
//!   plane (x, focal, n1) and the plane (focal, n1, n2), with the sign
//!   given by a right-handed atan2 convention about the focal -> n1 axis.
//!
//! The angle `alpha` has its vertex at the *new* atom: it is the angle
//! between the lines from the new atom to the focal atom and to the focal
//! atom's nearest neighbor.

use nalgebra::{Matrix3, RealField};
use num_traits::Float;
use thiserror::Error;

use crate::chem::Canvas;
use crate::scalar::Scalar;
use crate::vec3::Vector3;

/// Below this separation two reference points are considered coincident.
const DEGENERATE_EPS: f64 = 1e-8;

#[derive(Debug, Error, PartialEq, Eq, Clone)]
pub enum GeometryError {
    #[error("focal index {focal} out of range for canvas of {n_atoms} atoms")]
    InvalidFocal { focal: usize, n_atoms: usize },
    #[error("degenerate local frame: {0}")]
    DegenerateFrame(&'static str),
    #[error("canvases differ in size or element multiset")]
    ShapeMismatch,
}

/// Local reference frame for a placement: the focal atom plus up to two
/// nearest neighbors.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalFrame<F> {
    pub focal_position: Vector3<F>,
    pub neighbor1_position: Vector3<F>,
    pub neighbor2_position: Vector3<F>,
    /// Number of reference atoms actually present (1, 2, or 3).
    pub arity: usize,
}

impl<F: Scalar> LocalFrame<F> {
    pub fn single(focal: Vector3<F>) -> Self {
        LocalFrame {
            focal_position: focal,
            neighbor1_position: Vector3::zeros(),
            neighbor2_position: Vector3::zeros(),
            arity: 1,
        }
    }

    pub fn pair(focal: Vector3<F>, n1: Vector3<F>) -> Self {
        LocalFrame {
            focal_position: focal,
            neighbor1_position: n1,
            neighbor2_position: Vector3::zeros(),
            arity: 2,
        }
    }

    pub fn triple(focal: Vector3<F>, n1: Vector3<F>, n2: Vector3<F>) -> Self {
        LocalFrame {
            focal_position: focal,
            neighbor1_position: n1,
            neighbor2_position: n2,
            arity: 3,
        }
    }
}

/// Internal coordinates measured for an existing point relative to a frame.
/// Components beyond the frame's arity are `None`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InternalCoords<F> {
    pub d: F,
    pub alpha: Option<F>,
    pub abs_psi: Option<F>,
    pub kappa: Option<i8>,
}

/// Build the local frame for `focal`: the focal atom plus its two nearest
/// other atoms by Euclidean distance. Ties are broken by lower canvas
/// index so frames are reproducible.
pub fn local_frame<F: Scalar>(
    canvas: &Canvas<F>,
    focal: usize,
) -> Result<LocalFrame<F>, GeometryError> {
    let n = canvas.len();
    if focal >= n {
        return Err(GeometryError::InvalidFocal { focal, n_atoms: n });
    }
    let xf = canvas.atom(focal).position;
    let mut others: Vec<(usize, F)> = (0..n)
        .filter(|&i| i != focal)
        .map(|i| (i, canvas.atom(i).position.distance(&xf)))
        .collect();
    others.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap().then(a.0.cmp(&b.0)));
    match others.len() {
        0 => Ok(LocalFrame::single(xf)),
        1 => Ok(LocalFrame::pair(xf, canvas.atom(others[0].0).position)),
        _ => Ok(LocalFrame::triple(
            xf,
            canvas.atom(others[0].0).position,
            canvas.atom(others[1].0).position,
        )),
    }
}

/// Unit vector perpendicular to `u`, chosen by a fixed global convention.
fn reference_perpendicular<F: Scalar>(u: Vector3<F>) -> Vector3<F> {
    let eps = F::from_f64_c(DEGENERATE_EPS);
    // Project +y out of the axis; fall back to +z near parallelism.
    let y = Vector3::new(F::zero(), F::one(), F::zero());
    let candidate = y - u.scale(u.dot(&y));
    if let Some(w) = candidate.normalized(eps) {
        return w;
    }
    let z = Vector3::new(F::zero(), F::zero(), F::one());
    (z - u.scale(u.dot(&z))).normalized(eps).expect("axis cannot be parallel to both y and z")
}

struct Resolved<F> {
    position: Vector3<F>,
    /// True when the requested (d, alpha) pair was geometrically infeasible
    /// and the placement was clamped to the nearest feasible configuration.
    clamped: bool,
}

fn resolve<F: Scalar>(
    frame: &LocalFrame<F>,
    d: F,
    alpha: F,
    abs_psi: F,
    kappa: i8,
) -> Result<Resolved<F>, GeometryError> {
    let eps = F::from_f64_c(DEGENERATE_EPS);
    let xf = frame.focal_position;
    if frame.arity == 1 {
        let e = Vector3::new(F::one(), F::zero(), F::zero());
        return Ok(Resolved { position: xf + e.scale(d), clamped: false });
    }

    let axis_vec = frame.neighbor1_position - xf;
    let axis_len = axis_vec.norm();
    if axis_len < eps {
        return Err(GeometryError::DegenerateFrame("focal and first neighbor coincide"));
    }
    let u = axis_vec.scale(F::one() / axis_len);

    // Triangle (x, x_f, x_n1): known side |x - x_f| = d, side |x_f - x_n1|,
    // and angle alpha at the vertex x. Law of sines gives the angle at n1;
    // the acute solution is taken and the argument clamped to 1 when the
    // triangle is infeasible.
    let mut clamped = false;
    let mut sin_n1 = d * alpha.sin() / axis_len;
    if sin_n1 > F::one() {
        sin_n1 = F::one();
        clamped = true;
    }
    let theta_n1 = sin_n1.asin();
    let mut theta_f = F::PI() - alpha - theta_n1;
    if theta_f < F::zero() {
        theta_f = F::zero();
        clamped = true;
    }

    // In-plane perpendicular: fixed global convention for two references,
    // dihedral-controlled for three.
    let w = if frame.arity == 2 {
        reference_perpendicular(u)
    } else {
        let mut r = frame.neighbor2_position - xf;
        let mut r_perp = r - u.scale(u.dot(&r));
        if r_perp.norm() < eps {
            if (frame.neighbor2_position - frame.neighbor1_position).norm() < eps {
                return Err(GeometryError::DegenerateFrame("neighbors coincide"));
            }
            // Collinear reference atoms: the dihedral plane is undefined, so
            // perturb the reference direction by a fixed perpendicular.
            r = r + reference_perpendicular(u).scale(F::from_f64_c(1e-3));
            r_perp = r - u.scale(u.dot(&r));
        }
        let r_hat = r_perp.normalized(eps).unwrap();
        let v = u.cross(&r_hat);
        let psi = F::from_f64_c(kappa as f64) * abs_psi;
        r_hat.scale(psi.cos()) + v.scale(psi.sin())
    };

    let position = xf + u.scale(d * theta_f.cos()) + w.scale(d * theta_f.sin());
    Ok(Resolved { position, clamped })
}

/// Map internal coordinates to a Cartesian position relative to `frame`.
///
/// Infeasible (d, alpha) combinations are clamped to the nearest feasible
/// placement rather than erroring; use [`position_from_internal_checked`]
/// to observe the clamp.
pub fn position_from_internal<F: Scalar>(
    frame: &LocalFrame<F>,
    d: F,
    alpha: F,
    abs_psi: F,
    kappa: i8,
) -> Result<Vector3<F>, GeometryError> {
    resolve(frame, d, alpha, abs_psi, kappa).map(|r| r.position)
}

/// As [`position_from_internal`], also reporting whether the requested
/// angle constraint had to be clamped.
pub fn position_from_internal_checked<F: Scalar>(
    frame: &LocalFrame<F>,
    d: F,
    alpha: F,
    abs_psi: F,
    kappa: i8,
) -> Result<(Vector3<F>, bool), GeometryError> {
    resolve(frame, d, alpha, abs_psi, kappa).map(|r| (r.position, r.clamped))
}

/// Measure the internal coordinates of an existing point `x` relative to a
/// frame. Inverse of [`position_from_internal`] for non-degenerate frames.
pub fn internal_from_position<F: Scalar>(
    frame: &LocalFrame<F>,
    x: Vector3<F>,
) -> Result<InternalCoords<F>, GeometryError> {
    let eps = F::from_f64_c(DEGENERATE_EPS);
    let xf = frame.focal_position;
    let to_f = xf - x;
    let d = to_f.norm();
    if d < eps {
        return Err(GeometryError::DegenerateFrame("point coincides with focal atom"));
    }
    if frame.arity == 1 {
        return Ok(InternalCoords { d, alpha: None, abs_psi: None, kappa: None });
    }

    let axis_vec = frame.neighbor1_position - xf;
    let axis_len = axis_vec.norm();
    if axis_len < eps {
        return Err(GeometryError::DegenerateFrame("focal and first neighbor coincide"));
    }
    let to_n1 = frame.neighbor1_position - x;
    let n1_dist = to_n1.norm();
    if n1_dist < eps {
        return Err(GeometryError::DegenerateFrame("point coincides with first neighbor"));
    }
    let cos_alpha =
        (to_f.dot(&to_n1) / (d * n1_dist)).max(-F::one()).min(F::one());
    let alpha = cos_alpha.acos();
    if frame.arity == 2 {
        return Ok(InternalCoords { d, alpha: Some(alpha), abs_psi: None, kappa: None });
    }

    let u = axis_vec.scale(F::one() / axis_len);
    let mut r = frame.neighbor2_position - xf;
    let mut r_perp = r - u.scale(u.dot(&r));
    if r_perp.norm() < eps {
        if (frame.neighbor2_position - frame.neighbor1_position).norm() < eps {
            return Err(GeometryError::DegenerateFrame("neighbors coincide"));
        }
        r = r + reference_perpendicular(u).scale(F::from_f64_c(1e-3));
        r_perp = r - u.scale(u.dot(&r));
    }
    let r_hat = r_perp.normalized(eps).unwrap();
    let v = u.cross(&r_hat);

    let a = x - xf;
    let a_perp = a - u.scale(u.dot(&a));
    if a_perp.norm() < eps {
        // On the axis: the dihedral is ill-defined; report zero.
        return Ok(InternalCoords { d, alpha: Some(alpha), abs_psi: Some(F::zero()), kappa: Some(1) });
    }
    let psi = a_perp.dot(&v).atan2(a_perp.dot(&r_hat));
    let kappa = if psi < F::zero() { -1 } else { 1 };
    Ok(InternalCoords { d, alpha: Some(alpha), abs_psi: Some(psi.abs()), kappa: Some(kappa) })
}

/// Minimal RMSD between two canvases over all proper rigid alignments
/// (Kabsch). Correspondence is by canvas index.
pub fn kabsch_rmsd<F: Scalar + RealField>(
    canvas_a: &Canvas<F>,
    canvas_b: &Canvas<F>,
) -> Result<F, GeometryError> {
    let n = canvas_a.len();
    if n != canvas_b.len() || n == 0 {
        return Err(GeometryError::ShapeMismatch);
    }
    let mut elems_a: Vec<_> = canvas_a.elements().collect();
    let mut elems_b: Vec<_> = canvas_b.elements().collect();
    elems_a.sort();
    elems_b.sort();
    if elems_a != elems_b {
        return Err(GeometryError::ShapeMismatch);
    }

    let ca = canvas_a.centroid();
    let cb = canvas_b.centroid();
    let a: Vec<Vector3<F>> = canvas_a.positions().map(|p| p - ca).collect();
    let b: Vec<Vector3<F>> = canvas_b.positions().map(|p| p - cb).collect();

    // Cross-covariance H = sum_i a_i b_i^T.
    let mut h = Matrix3::<F>::zeros();
    for (pa, pb) in a.iter().zip(&b) {
        for i in 0..3 {
            for j in 0..3 {
                h[(i, j)] += pa[i] * pb[j];
            }
        }
    }
    let svd = h.svd(true, true);
    let u = svd.u.unwrap();
    let v_t = svd.v_t.unwrap();
    let d = (v_t.transpose() * u.transpose()).determinant();
    let mut s = Matrix3::<F>::identity();
    if d < F::zero() {
        s[(2, 2)] = -F::one();
    }
    let r = v_t.transpose() * s * u.transpose();

    let mut ssd = F::zero();
    for (pa, pb) in a.iter().zip(&b) {
        for i in 0..3 {
            let rai = r[(i, 0)] * pa[0] + r[(i, 1)] * pa[1] + r[(i, 2)] * pa[2];
            let diff = rai - pb[i];
            ssd += diff * diff;
        }
    }
    Ok(Float::sqrt(ssd / F::from_f64_c(n as f64)))
}
