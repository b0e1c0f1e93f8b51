//! Quaternion helpers shared by kinematics, retargeting and reward code.
//!
//! Everything operates on `nalgebra::UnitQuaternion<f64>`. Quaternion sign is
//! canonicalized to a non-negative scalar part before any distance is taken.

use nalgebra::{Quaternion, Unit, UnitQuaternion, Vector3};

pub type Quat = UnitQuaternion<f64>;
pub type Vec3 = Vector3<f64>;

/// Flips `q` onto the hemisphere with `w >= 0`.
pub fn canonicalize(q: Quat) -> Quat {
    if q.w < 0.0 {
        UnitQuaternion::new_unchecked(-q.into_inner())
    } else {
        q
    }
}

/// Re-projects onto the unit sphere and canonicalizes the sign.
pub fn renormalize(q: Quat) -> Quat {
    canonicalize(UnitQuaternion::new_normalize(q.into_inner()))
}

pub fn from_axis_angle(axis: &Vec3, angle: f64) -> Quat {
    UnitQuaternion::from_axis_angle(&Unit::new_normalize(*axis), angle)
}

/// Logarithm map: the rotation vector (axis times angle, angle in `[0, pi]`).
pub fn log_map(q: &Quat) -> Vec3 {
    let q = canonicalize(*q);
    let v = q.imag();
    let s = v.norm();
    if s < 1e-12 {
        // first-order expansion around the identity
        return v * (2.0 / q.w.max(1e-300));
    }
    let angle = 2.0 * s.atan2(q.w);
    v * (angle / s)
}

/// Exponential map, inverse of [`log_map`].
pub fn exp_map(rotvec: &Vec3) -> Quat {
    let angle = rotvec.norm();
    if angle < 1e-12 {
        let q = Quaternion::new(1.0, 0.5 * rotvec.x, 0.5 * rotvec.y, 0.5 * rotvec.z);
        return UnitQuaternion::new_normalize(q);
    }
    UnitQuaternion::from_axis_angle(&Unit::new_unchecked(rotvec / angle), angle)
}

/// Geodesic angle between two rotations, in `[0, pi]`.
pub fn geodesic(a: &Quat, b: &Quat) -> f64 {
    log_map(&(a.inverse() * b)).norm()
}

/// Normalized-sum mean of rotations.
///
/// Every input is sign-aligned with the first before summing. For inputs that
/// all lie within a geodesic ball around the identity the mean stays inside
/// that ball, and the mean of identical rotations is that rotation.
pub fn mean(quats: &[Quat]) -> Quat {
    assert!(!quats.is_empty(), "mean of an empty rotation set");
    let reference = quats[0].into_inner();
    let mut acc = Quaternion::new(0.0, 0.0, 0.0, 0.0);
    for q in quats {
        let q = q.into_inner();
        if q.dot(&reference) < 0.0 {
            acc -= q;
        } else {
            acc += q;
        }
    }
    renormalize(UnitQuaternion::new_normalize(acc))
}

pub fn to_wxyz(q: &Quat) -> [f64; 4] {
    [q.w, q.i, q.j, q.k]
}

/// Builds a unit quaternion from `[w, x, y, z]`, rejecting entries that are
/// not unit norm within `tol`.
pub fn from_wxyz(v: [f64; 4], tol: f64) -> Option<Quat> {
    if v.iter().any(|x| !x.is_finite()) {
        return None;
    }
    let q = Quaternion::new(v[0], v[1], v[2], v[3]);
    let err = (q.norm() - 1.0).abs();
    if err > tol {
        return None;
    }
    if err <= crate::skeleton::UNIT_TOL {
        // already unit within the pose tolerance: keep the exact values
        return Some(UnitQuaternion::new_unchecked(q));
    }
    Some(UnitQuaternion::new_normalize(q))
}
