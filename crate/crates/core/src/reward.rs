//! Shaping penalty `r1` and terminal docking bonus `r2`.

use nalgebra::{Matrix3, Matrix6, Quaternion, Vector6};
use serde::{Deserialize, Serialize};
use std::f64::consts::FRAC_PI_2;

use crate::attitude::{check_unit, error_quaternion};
use crate::dynamics::{ChaserState, ControlAction, Vec3};
use crate::error::{Error, Result};

/// Reward coefficients as stored in config files (diagonal weights).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RewardConfig {
    pub m_diag: [f64; 3],
    pub q_diag: [f64; 6],
    pub p_diag: [f64; 6],
    pub collision_coeff: f64,
    pub docking_bonus: f64,
    pub gamma1: f64,
    pub gamma2: f64,
    /// Desired body rate (deg/s).
    #[serde(default)]
    pub w_des_degps: [f64; 3],
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self {
            m_diag: [2e5; 3],
            q_diag: [20.0; 6],
            p_diag: [10e-6, 10e-6, 10e-6, 1.11e-6, 1.11e-6, 1.11e-6],
            collision_coeff: 10.0,
            docking_bonus: 1000.0,
            gamma1: 0.98,
            gamma2: 0.995,
            w_des_degps: [0.0; 3],
        }
    }
}

impl RewardConfig {
    pub fn build(&self, q_des: Quaternion<f64>) -> Result<RewardWeights> {
        RewardWeights::new(
            Matrix3::from_diagonal(&Vec3::from(self.m_diag)),
            Matrix6::from_diagonal(&Vector6::from(self.q_diag)),
            Matrix6::from_diagonal(&Vector6::from(self.p_diag)),
            self.collision_coeff,
            self.docking_bonus,
            self.gamma1,
            self.gamma2,
            q_des,
            Vec3::from(self.w_des_degps).map(f64::to_radians),
        )
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RewardWeights {
    pub m: Matrix3<f64>,
    pub q: Matrix6<f64>,
    pub p: Matrix6<f64>,
    pub collision_coeff: f64,
    pub docking_bonus: f64,
    pub gamma1: f64,
    pub gamma2: f64,
    pub q_des: Quaternion<f64>,
    pub w_des: Vec3,
}

impl RewardWeights {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        m: Matrix3<f64>,
        q: Matrix6<f64>,
        p: Matrix6<f64>,
        collision_coeff: f64,
        docking_bonus: f64,
        gamma1: f64,
        gamma2: f64,
        q_des: Quaternion<f64>,
        w_des: Vec3,
    ) -> Result<Self> {
        let bad = |msg: &str| Err(Error::Config(format!("reward: {msg}")));
        if m.cholesky().is_none() || q.cholesky().is_none() || p.cholesky().is_none() {
            return bad("M, Q and P must be positive definite");
        }
        if !(collision_coeff > 0.0 && docking_bonus > 0.0) {
            return bad("collision and docking coefficients must be positive");
        }
        if !(0.0 < gamma1 && gamma1 < gamma2 && gamma2 < 1.0) {
            return bad("need 0 < gamma1 < gamma2 < 1");
        }
        check_unit(&q_des).map_err(|e| Error::Config(format!("reward: q_des: {e}")))?;
        Ok(Self { m, q, p, collision_coeff, docking_bonus, gamma1, gamma2, q_des, w_des })
    }
}

/// `[2 q_err_v; w - w_des]` with `q_err = q_des * q^-1` taken on the short arc.
pub fn attitude_error(q: &Quaternion<f64>, w: &Vec3, weights: &RewardWeights) -> Result<Vector6<f64>> {
    check_unit(q)?;
    let e = error_quaternion(&weights.q_des, q);
    let dw = w - weights.w_des;
    Ok(Vector6::new(2.0 * e.i, 2.0 * e.j, 2.0 * e.k, dw.x, dw.y, dw.z))
}

/// Individual shaping penalties, each `<= 0`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RewardTerms {
    pub lqr: f64,
    pub attitude: f64,
    pub control: f64,
    pub collision: f64,
}

impl RewardTerms {
    pub fn total(&self) -> f64 {
        self.lqr + self.attitude + self.control + self.collision
    }

    pub fn add(&mut self, other: &RewardTerms) {
        self.lqr += other.lqr;
        self.attitude += other.attitude;
        self.control += other.control;
        self.collision += other.collision;
    }
}

/// `c * sin(pi/2 * |r_p| / r_col)`, with the ratio saturated at one.
pub fn collision_penalty(r_p_norm: f64, r_col: f64, coeff: f64) -> f64 {
    let ratio = if r_col > 0.0 { (r_p_norm / r_col).clamp(0.0, 1.0) } else { 1.0 };
    coeff * (FRAC_PI_2 * ratio).sin()
}

#[allow(clippy::too_many_arguments)]
pub fn shaping_terms(
    state: &ChaserState,
    action: &ControlAction,
    accel_actual: &Vec3,
    accel_ref: &Vec3,
    collided: bool,
    r_p_norm: f64,
    r_col: f64,
    weights: &RewardWeights,
) -> Result<RewardTerms> {
    let da = accel_actual - accel_ref;
    let alpha = attitude_error(&state.q, &state.w, weights)?;
    let u = Vector6::from(action.to_array());
    Ok(RewardTerms {
        lqr: -(da.transpose() * weights.m * da)[0],
        attitude: -(alpha.transpose() * weights.q * alpha)[0],
        control: -(u.transpose() * weights.p * u)[0],
        collision: if collided { -collision_penalty(r_p_norm, r_col, weights.collision_coeff) } else { 0.0 },
    })
}

/// The shaping reward `r1`.
#[allow(clippy::too_many_arguments)]
pub fn shaping_reward(
    state: &ChaserState,
    action: &ControlAction,
    accel_actual: &Vec3,
    accel_ref: &Vec3,
    collided: bool,
    r_p_norm: f64,
    r_col: f64,
    weights: &RewardWeights,
) -> Result<f64> {
    Ok(shaping_terms(state, action, accel_actual, accel_ref, collided, r_p_norm, r_col, weights)?.total())
}

/// The terminal bonus `r2`.
pub fn terminal_bonus(dock_success: bool, weights: &RewardWeights) -> f64 {
    if dock_success {
        weights.docking_bonus
    } else {
        0.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attitude::{from_euler_deg, quat};
    use crate::dynamics::ActuatorLimits;
    use approx::assert_abs_diff_eq;

    fn weights() -> RewardWeights {
        RewardConfig::default().build(from_euler_deg([-60.0, 0.0, 0.0])).unwrap()
    }

    fn at_goal(w: &RewardWeights) -> ChaserState {
        ChaserState::new(Vec3::zeros(), Vec3::zeros(), w.q_des, w.w_des)
    }

    #[test]
    fn zero_error_at_goal() {
        let w = weights();
        let a = attitude_error(&w.q_des, &w.w_des, &w).unwrap();
        assert_eq!(a, Vector6::zeros());
    }

    #[test]
    fn one_degree_roll_error() {
        let w = weights();
        let q = w.q_des * from_euler_deg([1.0, 0.0, 0.0]);
        let a = attitude_error(&q, &w.w_des, &w).unwrap();
        let mag = Vec3::new(a[0], a[1], a[2]).norm();
        assert_abs_diff_eq!(mag, 0.017453, epsilon = 1e-6);
    }

    #[test]
    fn rate_error_passthrough() {
        let w = weights();
        let a = attitude_error(&w.q_des, &(w.w_des + Vec3::new(0.1, -0.2, 0.3)), &w).unwrap();
        assert_eq!([a[3], a[4], a[5]], [0.1, -0.2, 0.3]);
    }

    #[test]
    fn double_cover_is_invisible() {
        let w = weights();
        let q = from_euler_deg([20.0, 170.0, -5.0]);
        let rate = Vec3::new(0.01, 0.02, -0.03);
        assert_eq!(attitude_error(&q, &rate, &w).unwrap(), attitude_error(&(-q), &rate, &w).unwrap());
    }

    #[test]
    fn non_unit_quaternion_rejected() {
        assert!(attitude_error(&quat(2.0, 0.0, 0.0, 0.0), &Vec3::zeros(), &weights()).is_err());
    }

    #[test]
    fn perfect_tracking_is_zero() {
        let w = weights();
        let a = Vec3::new(0.01, 0.0, 0.0);
        let r = shaping_reward(&at_goal(&w), &ControlAction::zero(), &a, &a, false, 1.0, 4.9, &w).unwrap();
        assert_eq!(r, 0.0);
    }

    #[test]
    fn control_only_penalty() {
        let w = weights();
        let lim = ActuatorLimits { force: Vec3::repeat(790.8), torque: Vec3::repeat(2534.91) };
        let act = ControlAction::clamped(Vec3::new(100.0, -200.0, 300.0), Vec3::new(1000.0, 0.0, -50.0), &lim);
        let r = shaping_reward(&at_goal(&w), &act, &Vec3::zeros(), &Vec3::zeros(), false, 0.0, 4.9, &w).unwrap();
        let expect = -(1e-5 * (100.0f64.powi(2) + 200.0f64.powi(2) + 300.0f64.powi(2))
            + 1.11e-6 * (1000.0f64.powi(2) + 50.0f64.powi(2)));
        assert_abs_diff_eq!(r, expect, epsilon = 1e-12);
    }

    #[test]
    fn collision_at_max_distance_costs_c() {
        let w = weights();
        let r_col = 4.949747468305833;
        let t = shaping_terms(&at_goal(&w), &ControlAction::zero(), &Vec3::zeros(), &Vec3::zeros(), true, r_col, r_col, &w)
            .unwrap();
        assert_abs_diff_eq!(t.collision, -10.0, epsilon = 1e-12);
        let none = shaping_terms(&at_goal(&w), &ControlAction::zero(), &Vec3::zeros(), &Vec3::zeros(), false, r_col, r_col, &w)
            .unwrap();
        assert_eq!(none.collision, 0.0);
    }

    #[test]
    fn collision_penalty_saturates() {
        assert_eq!(collision_penalty(10.0, 5.0, 10.0), 10.0);
        assert_eq!(collision_penalty(0.0, 5.0, 10.0), 0.0);
    }

    #[test]
    fn bonus() {
        let w = weights();
        assert_eq!(terminal_bonus(true, &w), 1000.0);
        assert_eq!(terminal_bonus(false, &w), 0.0);
        let mut cfg = RewardConfig::default();
        cfg.docking_bonus = 42.0;
        let w2 = cfg.build(w.q_des).unwrap();
        assert_eq!(terminal_bonus(true, &w2), 42.0);
    }

    #[test]
    fn weight_validation() {
        let q = from_euler_deg([-60.0, 0.0, 0.0]);
        let mut cfg = RewardConfig::default();
        cfg.gamma1 = 0.999;
        assert!(cfg.build(q).is_err());
        let mut cfg = RewardConfig::default();
        cfg.m_diag[1] = 0.0;
        assert!(cfg.build(q).is_err());
    }
}
