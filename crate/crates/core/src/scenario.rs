//! The transposition-and-docking scenario: geometry, actuator limits, docking
//! conditions, initial-condition sampling, and collision detection.

use nalgebra::Matrix3;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::attitude::{self, from_euler_deg, rotation_matrix, to_euler_deg, wrap_deg};
use crate::dynamics::{
    relative_port_state_in, ActuatorLimits, ChaserState, MassProperties, PortRateFrame, Vec3,
    DEFAULT_SUBSTEPS,
};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MassPropertiesConfig {
    pub mass_kg: f64,
    /// Row-major body-frame inertia tensor.
    pub inertia_kgm2: [[f64; 3]; 3],
    /// Marks values that are not sourced from mission documents.
    #[serde(default)]
    pub placeholder: bool,
}

impl MassPropertiesConfig {
    pub fn build(&self) -> Result<MassProperties> {
        let j = Matrix3::from_fn(|i, k| self.inertia_kgm2[i][k]);
        MassProperties::new(self.mass_kg, j)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DockingConditions {
    pub r_p_tol_m: f64,
    pub v_px_goal_mps: f64,
    pub v_px_lo_mps: f64,
    pub v_px_hi_mps: f64,
    pub v_yz_tol_mps: f64,
    pub euler_goal_deg: [f64; 3],
    pub euler_tol_deg: f64,
    pub w_tol_degps: f64,
}

impl DockingConditions {
    pub fn goal_quaternion(&self) -> nalgebra::Quaternion<f64> {
        from_euler_deg(self.euler_goal_deg)
    }

    fn validate(&self) -> Result<()> {
        if !(self.v_px_lo_mps < self.v_px_goal_mps && self.v_px_goal_mps < self.v_px_hi_mps) {
            return Err(Error::Config("docking: need v_px_lo < v_px_goal < v_px_hi".into()));
        }
        for (name, v) in [
            ("r_p_tol_m", self.r_p_tol_m),
            ("v_yz_tol_mps", self.v_yz_tol_mps),
            ("euler_tol_deg", self.euler_tol_deg),
            ("w_tol_degps", self.w_tol_degps),
        ] {
            if !(v > 0.0) {
                return Err(Error::Config(format!("docking: {name} must be positive")));
            }
        }
        Ok(())
    }
}

/// Box of initial conditions: every component uniform in `center ± halfwidth`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InitialConditionRange {
    pub r_center_m: [f64; 3],
    pub r_halfwidth_m: [f64; 3],
    pub v_center_mps: [f64; 3],
    pub v_halfwidth_mps: [f64; 3],
    pub euler_center_deg: [f64; 3],
    pub euler_halfwidth_deg: [f64; 3],
    pub w_center_degps: [f64; 3],
    pub w_halfwidth_degps: [f64; 3],
}

impl InitialConditionRange {
    fn validate(&self, name: &str) -> Result<()> {
        let hw = [self.r_halfwidth_m, self.v_halfwidth_mps, self.euler_halfwidth_deg, self.w_halfwidth_degps];
        if hw.iter().flatten().any(|&h| !(h >= 0.0)) {
            return Err(Error::Config(format!("{name}: halfwidths must be non-negative")));
        }
        Ok(())
    }

    /// Builds a state from position, velocity, Euler angles (deg), and body rate (deg/s).
    pub fn state_from(r: [f64; 3], v: [f64; 3], euler_deg: [f64; 3], w_degps: [f64; 3]) -> ChaserState {
        ChaserState::new(
            Vec3::from(r),
            Vec3::from(v),
            from_euler_deg(euler_deg),
            Vec3::from(w_degps).map(f64::to_radians),
        )
    }

    pub fn center_state(&self) -> ChaserState {
        Self::state_from(self.r_center_m, self.v_center_mps, self.euler_center_deg, self.w_center_degps)
    }

    /// The `2^7` combinations of range extremes for `r_x, v_x, v_y, v_z, w_x, w_y, w_z`,
    /// everything else at its center. Bit `k` of the index selects the upper
    /// extreme of the k-th variable in that order.
    pub fn corner_cases(&self) -> Vec<ChaserState> {
        (0..128u32)
            .map(|bits| {
                let pick = |k: u32, c: f64, h: f64| if bits >> k & 1 == 1 { c + h } else { c - h };
                let mut r = self.r_center_m;
                r[0] = pick(0, r[0], self.r_halfwidth_m[0]);
                let mut v = self.v_center_mps;
                for i in 0..3 {
                    v[i] = pick(1 + i as u32, v[i], self.v_halfwidth_mps[i]);
                }
                let mut w = self.w_center_degps;
                for i in 0..3 {
                    w[i] = pick(4 + i as u32, w[i], self.w_halfwidth_degps[i]);
                }
                Self::state_from(r, v, self.euler_center_deg, w)
            })
            .collect()
    }
}

impl Default for MassPropertiesConfig {
    fn default() -> Self {
        ScenarioConfig::apollo().mass_properties
    }
}

impl Default for DockingConditions {
    fn default() -> Self {
        ScenarioConfig::apollo().docking
    }
}

/// Defaults to the Apollo testing range.
impl Default for InitialConditionRange {
    fn default() -> Self {
        ScenarioConfig::apollo().ic_test
    }
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self::apollo()
    }
}

/// Uniform draw from `center ± halfwidth`. Draw order is r, v, Euler, w (x, y, z each).
pub fn sample_initial_condition<R: Rng + ?Sized>(range: &InitialConditionRange, rng: &mut R) -> ChaserState {
    let mut draw = |c: [f64; 3], h: [f64; 3]| {
        let mut out = [0.0; 3];
        for i in 0..3 {
            let u: f64 = rng.random();
            out[i] = c[i] + h[i] * (2.0 * u - 1.0);
        }
        out
    };
    let r = draw(range.r_center_m, range.r_halfwidth_m);
    let v = draw(range.v_center_mps, range.v_halfwidth_mps);
    let e = draw(range.euler_center_deg, range.euler_halfwidth_deg);
    let w = draw(range.w_center_degps, range.w_halfwidth_degps);
    InitialConditionRange::state_from(r, v, e, w)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioConfig {
    pub f_max_n: [f64; 3],
    pub l_max_nm: [f64; 3],
    /// Chaser port in the chaser body frame.
    pub r_c_m: [f64; 3],
    /// Target port in the inertial frame.
    pub r_t_m: [f64; 3],
    pub box_y_m: f64,
    pub box_z_m: f64,
    pub box_depth_x_m: f64,
    pub dt_s: f64,
    pub t_limit_train_s: f64,
    pub t_limit_test_s: f64,
    #[serde(default = "default_substeps")]
    pub rk4_substeps: usize,
    #[serde(default)]
    pub port_rate_frame: PortRateFrame,
    pub mass_properties: MassPropertiesConfig,
    pub docking: DockingConditions,
    pub ic_test: InitialConditionRange,
    pub ic_train: InitialConditionRange,
}

fn default_substeps() -> usize {
    DEFAULT_SUBSTEPS
}

impl ScenarioConfig {
    /// Actuator limits, port geometry, docking conditions, and initial-condition
    /// ranges of the Apollo transposition-and-docking maneuver. The mass
    /// properties are placeholders.
    pub fn apollo() -> Self {
        Self {
            f_max_n: [790.80; 3],
            l_max_nm: [2534.91; 3],
            r_c_m: [4.479, 0.0, 0.0],
            r_t_m: [-3.250, 0.0, 0.0],
            box_y_m: 7.0,
            box_z_m: 7.0,
            box_depth_x_m: 7.0,
            dt_s: 1.0,
            t_limit_train_s: 150.0,
            t_limit_test_s: 250.0,
            rk4_substeps: DEFAULT_SUBSTEPS,
            port_rate_frame: PortRateFrame::Inertial,
            mass_properties: MassPropertiesConfig {
                mass_kg: 30000.0,
                inertia_kgm2: [[88000.0, 0.0, 0.0], [0.0, 113000.0, 0.0], [0.0, 0.0, 113000.0]],
                placeholder: true,
            },
            docking: DockingConditions {
                r_p_tol_m: 0.15,
                v_px_goal_mps: 0.1,
                v_px_lo_mps: 0.05,
                v_px_hi_mps: 0.15,
                v_yz_tol_mps: 0.1,
                euler_goal_deg: [-60.0, 0.0, 0.0],
                euler_tol_deg: 5.0,
                w_tol_degps: 0.75,
            },
            ic_test: InitialConditionRange {
                r_center_m: [-20.0, 0.0, 0.0],
                r_halfwidth_m: [2.0; 3],
                v_center_mps: [0.0; 3],
                v_halfwidth_mps: [0.1; 3],
                euler_center_deg: [0.0, 180.0, 0.0],
                euler_halfwidth_deg: [20.0; 3],
                w_center_degps: [0.0; 3],
                w_halfwidth_degps: [5.0; 3],
            },
            ic_train: InitialConditionRange {
                r_center_m: [-20.0, 0.0, 0.0],
                r_halfwidth_m: [4.0; 3],
                v_center_mps: [0.0; 3],
                v_halfwidth_mps: [0.2; 3],
                euler_center_deg: [0.0, 180.0, 0.0],
                euler_halfwidth_deg: [40.0; 3],
                w_center_degps: [0.0; 3],
                w_halfwidth_degps: [10.0; 3],
            },
        }
    }

    /// The Apollo scenario with a narrowed initial-condition box (r ±1 m,
    /// v ±0.05 m/s, attitude ±10°, rate ±2 deg/s) used for both training and testing.
    pub fn reduced() -> Self {
        let mut s = Self::apollo();
        s.ic_test.r_halfwidth_m = [1.0; 3];
        s.ic_test.v_halfwidth_mps = [0.05; 3];
        s.ic_test.euler_halfwidth_deg = [10.0; 3];
        s.ic_test.w_halfwidth_degps = [2.0; 3];
        s.ic_train = s.ic_test.clone();
        s
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::Config(format!("scenario: {name} must be positive, got {v}")))
            }
        };
        for i in 0..3 {
            positive("f_max_n", self.f_max_n[i])?;
            positive("l_max_nm", self.l_max_nm[i])?;
        }
        positive("box_y_m", self.box_y_m)?;
        positive("box_z_m", self.box_z_m)?;
        positive("box_depth_x_m", self.box_depth_x_m)?;
        positive("dt_s", self.dt_s)?;
        positive("t_limit_train_s", self.t_limit_train_s)?;
        positive("t_limit_test_s", self.t_limit_test_s)?;
        if self.t_limit_test_s < self.t_limit_train_s {
            return Err(Error::Config("scenario: t_limit_test_s must be >= t_limit_train_s".into()));
        }
        if self.rk4_substeps == 0 {
            return Err(Error::Config("scenario: rk4_substeps must be >= 1".into()));
        }
        self.mass_properties.build().map_err(|e| Error::Config(format!("mass_properties: {e}")))?;
        self.docking.validate()?;
        self.ic_test.validate("ic_test")?;
        self.ic_train.validate("ic_train")?;
        Ok(())
    }

    pub fn limits(&self) -> ActuatorLimits {
        ActuatorLimits { force: Vec3::from(self.f_max_n), torque: Vec3::from(self.l_max_nm) }
    }

    pub fn r_c(&self) -> Vec3 {
        Vec3::from(self.r_c_m)
    }

    pub fn r_t(&self) -> Vec3 {
        Vec3::from(self.r_t_m)
    }

    pub fn port_state(&self, state: &ChaserState) -> (Vec3, Vec3) {
        relative_port_state_in(state, &self.r_c(), &self.r_t(), self.port_rate_frame)
    }

    /// Center-of-mass position that puts the chaser port on the target port at the goal attitude.
    pub fn docked_position(&self) -> Vec3 {
        self.r_t() - rotation_matrix(&self.docking.goal_quaternion()) * self.r_c()
    }

    /// Episode step limit for training or testing.
    pub fn max_steps(&self, testing: bool) -> usize {
        let t = if testing { self.t_limit_test_s } else { self.t_limit_train_s };
        (t / self.dt_s).round() as usize
    }
}

/// Outcome of a docking check with the measured quantities.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DockingReport {
    pub success: bool,
    pub position_ok: bool,
    pub axial_velocity_ok: bool,
    pub lateral_velocity_ok: bool,
    pub attitude_ok: bool,
    pub rate_ok: bool,
    pub r_p: Vec3,
    pub v_p: Vec3,
    pub euler_deg: Vec3,
    pub w_degps: Vec3,
}

pub fn check_docking(state: &ChaserState, cfg: &ScenarioConfig) -> DockingReport {
    let d = &cfg.docking;
    let (r_p, v_p) = cfg.port_state(state);
    let euler_deg = to_euler_deg(&state.q);
    let w_degps = state.w.map(f64::to_degrees);

    let position_ok = r_p.iter().all(|x| x.abs() <= d.r_p_tol_m);
    let axial_velocity_ok = v_p.x >= d.v_px_lo_mps && v_p.x <= d.v_px_hi_mps;
    let lateral_velocity_ok = v_p.y.abs() <= d.v_yz_tol_mps && v_p.z.abs() <= d.v_yz_tol_mps;
    let attitude_ok =
        (0..3).all(|i| wrap_deg(euler_deg[i] - d.euler_goal_deg[i]).abs() <= d.euler_tol_deg);
    let rate_ok = w_degps.iter().all(|x| x.abs() <= d.w_tol_degps);

    DockingReport {
        success: position_ok && axial_velocity_ok && lateral_velocity_ok && attitude_ok && rate_ok,
        position_ok,
        axial_velocity_ok,
        lateral_velocity_ok,
        attitude_ok,
        rate_ok,
        r_p,
        v_p,
        euler_deg,
        w_degps,
    }
}

/// Whether the chaser port point is strictly inside the target's collision box
/// (and the state is not a successful dock), plus `|r_p|` for penalty scaling.
pub fn check_collision(state: &ChaserState, cfg: &ScenarioConfig) -> (bool, f64) {
    let (r_p, _) = cfg.port_state(state);
    let port = state.r + rotation_matrix(&state.q) * cfg.r_c();
    let face = cfg.r_t_m[0];
    let inside = port.x > face
        && port.x < face + cfg.box_depth_x_m
        && port.y.abs() < 0.5 * cfg.box_y_m
        && port.z.abs() < 0.5 * cfg.box_z_m;
    let collided = inside && !check_docking(state, cfg).success;
    (collided, r_p.norm())
}

/// Distance from the target port to the farthest point of the box front face.
pub fn max_collision_distance(cfg: &ScenarioConfig) -> f64 {
    (0.5 * cfg.box_y_m).hypot(0.5 * cfg.box_z_m)
}

/// Goal attitude as a quaternion (re-exported for reward construction).
pub fn goal_attitude(cfg: &ScenarioConfig) -> nalgebra::Quaternion<f64> {
    attitude::from_euler_deg(cfg.docking.euler_goal_deg)
}
