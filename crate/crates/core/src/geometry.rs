//! Small rigid-motion helpers shared by the trajectory, selection and
//! rendering code.
//!
//! Cameras follow the OpenCV convention: +x right, +y down, +z forward.
//! Rotations are stored world→camera, so the rows of the rotation matrix
//! are the camera axes expressed in world coordinates.

use nalgebra::{Matrix3, Rotation3, Unit, UnitQuaternion, Vector3};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

pub type Vec3 = Vector3<f64>;
pub type Quat = UnitQuaternion<f64>;

/// World→camera rotation for a camera at `position` looking at `target`.
///
/// Returns `None` when the viewing direction is degenerate (target coincides
/// with the position). When the view direction is parallel to `up` a
/// secondary up axis is chosen so the result is always a proper rotation.
pub fn look_at_rotation(position: &Vec3, target: &Vec3, up: &Vec3) -> Option<Quat> {
    let delta = target - position;
    let dist = delta.norm();
    if !dist.is_finite() || dist <= 1e-12 * (1.0 + position.norm()) {
        return None;
    }
    let forward = delta / dist;
    let mut right = forward.cross(up);
    if right.norm() < 1e-9 {
        let alt = if forward.x.abs() < 0.9 { Vec3::x() } else { Vec3::y() };
        right = forward.cross(&alt);
    }
    let right = right.normalize();
    let down = forward.cross(&right);
    Some(rotation_from_axes(&right, &down, &forward))
}

/// Builds the world→camera rotation whose rows are the given camera axes.
pub fn rotation_from_axes(right: &Vec3, down: &Vec3, forward: &Vec3) -> Quat {
    let m = Matrix3::from_rows(&[right.transpose(), down.transpose(), forward.transpose()]);
    UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(m))
}

/// Spherical linear interpolation along the shortest arc. `t = 0` gives `a`,
/// `t = 1` gives `b` exactly.
pub fn slerp(a: &Quat, b: &Quat, t: f64) -> Quat {
    if t == 0.0 {
        return *a;
    }
    if t == 1.0 {
        return *b;
    }
    let qa = a.quaternion().coords;
    let mut qb = b.quaternion().coords;
    let mut cos = qa.dot(&qb);
    if cos < 0.0 {
        qb = -qb;
        cos = -cos;
    }
    let coords = if cos > 1.0 - 1e-12 {
        qa * (1.0 - t) + qb * t
    } else {
        let theta = cos.min(1.0).acos();
        let sin = theta.sin();
        qa * (((1.0 - t) * theta).sin() / sin) + qb * ((t * theta).sin() / sin)
    };
    UnitQuaternion::from_quaternion(nalgebra::Quaternion::from(coords))
}

/// Geodesic angle in radians between two rotations.
pub fn rotation_angle(a: &Quat, b: &Quat) -> f64 {
    // atan2 form stays accurate for nearly equal rotations
    let rel = (a.inverse() * b).into_inner();
    2.0 * rel.imag().norm().atan2(rel.w.abs())
}

/// Uniformly distributed direction on the unit sphere.
pub fn random_unit_vector<R: Rng + ?Sized>(rng: &mut R) -> Unit<Vec3> {
    loop {
        let v = Vec3::new(
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
        );
        let n = v.norm();
        if n > 1e-9 {
            return Unit::new_unchecked(v / n);
        }
    }
}

/// Linear-interpolated quantile of already sorted values (`q` in [0, 1]).
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn look_at_points_forward_axis_at_target() {
        let pos = Vec3::new(1.0, 2.0, 3.0);
        let target = Vec3::new(-2.0, 0.5, 4.0);
        let q = look_at_rotation(&pos, &target, &Vec3::z()).unwrap();
        let forward = q.inverse() * Vec3::z();
        let dir = (target - pos).normalize();
        assert!((forward.dot(&dir) - 1.0).abs() < 1e-12);
        // down axis has a negative component along world up
        let down = q.inverse() * Vec3::y();
        assert!(down.z < 0.0);
    }

    #[test]
    fn look_at_handles_vertical_view() {
        let q = look_at_rotation(&Vec3::zeros(), &Vec3::new(0.0, 0.0, -5.0), &Vec3::z()).unwrap();
        let forward = q.inverse() * Vec3::z();
        assert!((forward - Vec3::new(0.0, 0.0, -1.0)).norm() < 1e-12);
        assert!(look_at_rotation(&Vec3::zeros(), &Vec3::zeros(), &Vec3::z()).is_none());
    }

    #[test]
    fn slerp_bisects_angle() {
        let a = Quat::identity();
        let b = Quat::from_axis_angle(&Vec3::y_axis(), 1.0);
        let m = slerp(&a, &b, 0.5);
        assert!((rotation_angle(&a, &m) - 0.5).abs() < 1e-12);
        // antipodal representation of b takes the same short path
        let b_neg = UnitQuaternion::new_unchecked(-b.into_inner());
        let m2 = slerp(&a, &b_neg, 0.5);
        assert!(rotation_angle(&m, &m2) < 1e-12);
    }

    #[test]
    fn quantile_interpolates() {
        let v = [0.0, 1.0, 2.0, 3.0];
        assert_eq!(quantile_sorted(&v, 0.0), 0.0);
        assert_eq!(quantile_sorted(&v, 1.0), 3.0);
        assert!((quantile_sorted(&v, 0.5) - 1.5).abs() < 1e-15);
    }
}
