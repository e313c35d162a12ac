//! Rigid-body 6-DOF propagation of the chaser.
//!
//! Translation is the exact zero-order-hold solution of the double integrator.
//! Rotation integrates quaternion kinematics and Euler's equations with
//! fixed-step RK4, renormalizing the quaternion after every substep. The torque
//! command is held constant in the inertial frame across the sample and mapped
//! into the body frame at every integrator stage.

use nalgebra::{Matrix3, Matrix4x3, Quaternion, SymmetricEigen, Vector3, Vector4};
use serde::{Deserialize, Serialize};

use crate::attitude::{self, check_unit, rotation_matrix};
use crate::error::{invalid, Result};

pub type Vec3 = Vector3<f64>;

/// Number of state components in the flat representation `[r, v, q, w]`.
pub const STATE_DIM: usize = 13;

/// Default RK4 substeps per sample period.
pub const DEFAULT_SUBSTEPS: usize = 50;

/// Chaser center-of-mass state in the target-centered inertial frame.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ChaserState {
    /// Position (m, inertial).
    pub r: Vec3,
    /// Velocity (m/s, inertial).
    pub v: Vec3,
    /// Attitude quaternion, body to inertial, scalar first.
    pub q: Quaternion<f64>,
    /// Angular velocity (rad/s, body frame).
    pub w: Vec3,
}

impl ChaserState {
    pub fn new(r: Vec3, v: Vec3, q: Quaternion<f64>, w: Vec3) -> Self {
        Self { r, v, q, w }
    }

    pub fn to_array(&self) -> [f64; STATE_DIM] {
        [
            self.r.x, self.r.y, self.r.z, self.v.x, self.v.y, self.v.z, self.q.w, self.q.i,
            self.q.j, self.q.k, self.w.x, self.w.y, self.w.z,
        ]
    }

    pub fn from_array(a: &[f64; STATE_DIM]) -> Self {
        Self {
            r: Vec3::new(a[0], a[1], a[2]),
            v: Vec3::new(a[3], a[4], a[5]),
            q: Quaternion::new(a[6], a[7], a[8], a[9]),
            w: Vec3::new(a[10], a[11], a[12]),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|x| x.is_finite())
    }
}

/// Per-axis actuator bounds.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ActuatorLimits {
    pub force: Vec3,
    pub torque: Vec3,
}

/// Thrust and torque command, both in the inertial frame, always within limits.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ControlAction {
    force: Vec3,
    torque: Vec3,
}

impl ControlAction {
    /// Builds an action, clamping every component to `±limit`.
    pub fn clamped(force: Vec3, torque: Vec3, limits: &ActuatorLimits) -> Self {
        let clamp = |x: f64, lim: f64| x.clamp(-lim, lim);
        Self {
            force: force.zip_map(&limits.force, clamp),
            torque: torque.zip_map(&limits.torque, clamp),
        }
    }

    pub fn zero() -> Self {
        Self { force: Vec3::zeros(), torque: Vec3::zeros() }
    }

    pub fn force(&self) -> Vec3 {
        self.force
    }

    pub fn torque(&self) -> Vec3 {
        self.torque
    }

    /// `[F; L]` as a flat 6-vector.
    pub fn to_array(&self) -> [f64; 6] {
        [self.force.x, self.force.y, self.force.z, self.torque.x, self.torque.y, self.torque.z]
    }
}

/// Mass and inertia of the chaser.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MassProperties {
    mass: f64,
    inertia: Matrix3<f64>,
    inertia_inv: Matrix3<f64>,
}

impl MassProperties {
    pub fn new(mass: f64, inertia: Matrix3<f64>) -> Result<Self> {
        if !(mass.is_finite() && mass > 0.0) {
            return Err(invalid(format!("mass must be positive, got {mass}")));
        }
        if (inertia - inertia.transpose()).abs().max() > 1e-12 {
            return Err(invalid("inertia tensor is not symmetric"));
        }
        let eig = SymmetricEigen::new(inertia);
        if eig.eigenvalues.iter().any(|&l| !(l > 0.0)) {
            return Err(invalid("inertia tensor is not positive definite"));
        }
        let inertia_inv = inertia
            .try_inverse()
            .ok_or_else(|| invalid("inertia tensor is singular"))?;
        Ok(Self { mass, inertia, inertia_inv })
    }

    pub fn mass(&self) -> f64 {
        self.mass
    }

    pub fn inertia(&self) -> &Matrix3<f64> {
        &self.inertia
    }
}

/// Kinematic matrix `Omega(q)` with `q_dot = 0.5 * Omega(q) * w`, validated for unit norm.
pub fn omega_matrix(q: &Quaternion<f64>) -> Result<Matrix4x3<f64>> {
    check_unit(q)?;
    Ok(attitude::kinematic_matrix(q))
}

/// Inertial force expressed in the body frame, `R(q)^T F`.
pub fn body_force(q: &Quaternion<f64>, force: &Vec3) -> Result<Vec3> {
    check_unit(q)?;
    Ok(rotation_matrix(q).transpose() * force)
}

/// Frame in which the body rate is taken before crossing with the port lever arm.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PortRateFrame {
    /// Rotate the body rate into the inertial frame first.
    #[default]
    Inertial,
    /// Use the body-frame rate components directly.
    Body,
}

/// Chaser docking-port position and velocity relative to the target port.
pub fn relative_port_state(state: &ChaserState, r_c: &Vec3, r_t: &Vec3) -> (Vec3, Vec3) {
    relative_port_state_in(state, r_c, r_t, PortRateFrame::Inertial)
}

pub fn relative_port_state_in(
    state: &ChaserState,
    r_c: &Vec3,
    r_t: &Vec3,
    frame: PortRateFrame,
) -> (Vec3, Vec3) {
    let rot = rotation_matrix(&state.q);
    let arm = rot * r_c;
    let r_p = state.r + arm - r_t;
    let w = match frame {
        PortRateFrame::Inertial => rot * state.w,
        PortRateFrame::Body => state.w,
    };
    let v_p = state.v + w.cross(&arm);
    (r_p, v_p)
}

fn rotational_rates(
    q: &Quaternion<f64>,
    w: &Vec3,
    torque_inertial: &Vec3,
    props: &MassProperties,
) -> (Vector4<f64>, Vec3) {
    let q_dot = 0.5 * attitude::kinematic_matrix(q) * w;
    let torque_body = rotation_matrix(q).transpose() * torque_inertial;
    let w_dot = props.inertia_inv * (torque_body - w.cross(&(props.inertia * w)));
    (q_dot, w_dot)
}

fn add_scaled(q: &Quaternion<f64>, dq: &Vector4<f64>, h: f64) -> Quaternion<f64> {
    // Vector4 rows follow the kinematic matrix: [w, x, y, z].
    Quaternion::new(q.w + h * dq[0], q.i + h * dq[1], q.j + h * dq[2], q.k + h * dq[3])
}

/// Propagates one sample period with the default substep count.
pub fn step(state: &ChaserState, action: &ControlAction, props: &MassProperties, dt: f64) -> ChaserState {
    step_with_substeps(state, action, props, dt, DEFAULT_SUBSTEPS)
}

pub fn step_with_substeps(
    state: &ChaserState,
    action: &ControlAction,
    props: &MassProperties,
    dt: f64,
    substeps: usize,
) -> ChaserState {
    let accel = action.force() / props.mass;
    let r = state.r + state.v * dt + accel * (0.5 * dt * dt);
    let v = state.v + accel * dt;

    let torque = action.torque();
    let h = dt / substeps.max(1) as f64;
    let mut q = state.q;
    let mut w = state.w;
    for _ in 0..substeps.max(1) {
        let (k1q, k1w) = rotational_rates(&q, &w, &torque, props);
        let (k2q, k2w) =
            rotational_rates(&add_scaled(&q, &k1q, 0.5 * h), &(w + k1w * (0.5 * h)), &torque, props);
        let (k3q, k3w) =
            rotational_rates(&add_scaled(&q, &k2q, 0.5 * h), &(w + k2w * (0.5 * h)), &torque, props);
        let (k4q, k4w) = rotational_rates(&add_scaled(&q, &k3q, h), &(w + k3w * h), &torque, props);
        let dq = (k1q + 2.0 * k2q + 2.0 * k3q + k4q) / 6.0;
        q = add_scaled(&q, &dq, h).normalize();
        w += (k1w + 2.0 * k2w + 2.0 * k3w + k4w) * (h / 6.0);
    }
    ChaserState { r, v, q, w }
}
