//! Quaternion and Euler-angle helpers.
//!
//! Quaternions are scalar-first `[w, x, y, z]` Hamilton quaternions that map
//! body-frame vectors into the inertial frame. Euler angles use the intrinsic
//! x-y-z (roll, pitch, yaw) sequence, i.e. `R = Rx(roll) * Ry(pitch) * Rz(yaw)`.

use nalgebra::{Matrix3, Matrix4x3, Quaternion, UnitQuaternion, Vector3};

use crate::error::{invalid, Result};

/// Maximum allowed deviation of `|q|` from one before a quaternion is rejected.
pub const UNIT_TOLERANCE: f64 = 1e-6;

pub fn check_unit(q: &Quaternion<f64>) -> Result<()> {
    let n = q.norm();
    if !n.is_finite() || (n - 1.0).abs() > UNIT_TOLERANCE {
        return Err(invalid(format!("quaternion norm {n} is not unit")));
    }
    Ok(())
}

/// Scalar-first constructor.
pub fn quat(w: f64, x: f64, y: f64, z: f64) -> Quaternion<f64> {
    Quaternion::new(w, x, y, z)
}

pub fn to_wxyz(q: &Quaternion<f64>) -> [f64; 4] {
    [q.w, q.i, q.j, q.k]
}

/// Rotation matrix R(q) taking body-frame vectors to the inertial frame.
///
/// The quaternion is normalized first, so intermediate integrator stages may
/// pass slightly non-unit values.
pub fn rotation_matrix(q: &Quaternion<f64>) -> Matrix3<f64> {
    UnitQuaternion::from_quaternion(*q).to_rotation_matrix().into_inner()
}

/// The 4x3 kinematic matrix with `q_dot = 0.5 * omega_matrix(q) * w_body`.
pub fn kinematic_matrix(q: &Quaternion<f64>) -> Matrix4x3<f64> {
    let (qw, qx, qy, qz) = (q.w, q.i, q.j, q.k);
    Matrix4x3::new(
        -qx, -qy, -qz, //
        qw, -qz, qy, //
        qz, qw, -qx, //
        -qy, qx, qw,
    )
}

fn axis_quat(axis: usize, angle: f64) -> Quaternion<f64> {
    let (s, c) = (0.5 * angle).sin_cos();
    let mut v = [0.0; 3];
    v[axis] = s;
    quat(c, v[0], v[1], v[2])
}

/// Intrinsic x-y-z Euler angles (radians) to a unit quaternion.
pub fn from_euler_xyz(roll: f64, pitch: f64, yaw: f64) -> Quaternion<f64> {
    let q = axis_quat(0, roll) * axis_quat(1, pitch) * axis_quat(2, yaw);
    q.normalize()
}

/// Inverse of [`from_euler_xyz`]. Pitch is returned in `[-pi/2, pi/2]`.
pub fn to_euler_xyz(q: &Quaternion<f64>) -> Vector3<f64> {
    let r = rotation_matrix(q);
    let pitch = r[(0, 2)].clamp(-1.0, 1.0).asin();
    let roll = (-r[(1, 2)]).atan2(r[(2, 2)]);
    let yaw = (-r[(0, 1)]).atan2(r[(0, 0)]);
    Vector3::new(roll, pitch, yaw)
}

pub fn from_euler_deg(deg: [f64; 3]) -> Quaternion<f64> {
    from_euler_xyz(deg[0].to_radians(), deg[1].to_radians(), deg[2].to_radians())
}

pub fn to_euler_deg(q: &Quaternion<f64>) -> Vector3<f64> {
    to_euler_xyz(q).map(f64::to_degrees)
}

/// Wrap an angle in degrees to `(-180, 180]`.
pub fn wrap_deg(a: f64) -> f64 {
    let mut x = (a + 180.0).rem_euclid(360.0) - 180.0;
    if x == -180.0 {
        x = 180.0;
    }
    x
}

/// Error quaternion `q_des * q^-1`, sign-canonicalized to a non-negative scalar part.
pub fn error_quaternion(q_des: &Quaternion<f64>, q: &Quaternion<f64>) -> Quaternion<f64> {
    let e = q_des * q.conjugate() / q.norm_squared();
    if e.w < 0.0 {
        -e
    } else {
        e
    }
}

/// Rotation angle (radians) of a canonicalized error quaternion.
pub fn error_angle(e: &Quaternion<f64>) -> f64 {
    let v = e.imag().norm();
    2.0 * v.atan2(e.w.abs())
}
