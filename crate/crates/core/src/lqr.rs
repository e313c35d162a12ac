//! Translational LQR reference used inside the shaping reward.
//!
//! The plant is the continuous double integrator `[r; v]' = A [r; v] + B a`
//! per axis. The gain solves the continuous algebraic Riccati equation by
//! Kleinman-Newton iteration: each step solves a Lyapunov equation for the
//! current closed loop and recomputes `K = R^-1 B^T P`.

use nalgebra::{DMatrix, DVector, Matrix3, Matrix6, SMatrix, Vector6};
use serde::{Deserialize, Serialize};

use crate::dynamics::Vec3;
use crate::error::{invalid, Error, Result};

pub type Gain = SMatrix<f64, 3, 6>;
type Input = SMatrix<f64, 6, 3>;

const MAX_ITERATIONS: usize = 200;
const RESIDUAL_TOL: f64 = 1e-10;

fn plant() -> (Matrix6<f64>, Input) {
    let mut a = Matrix6::zeros();
    let mut b = Input::zeros();
    for i in 0..3 {
        a[(i, i + 3)] = 1.0;
        b[(i + 3, i)] = 1.0;
    }
    (a, b)
}

#[derive(Clone, Debug, PartialEq)]
pub struct LqrDesign {
    /// Maps `[r - origin; v]` to commanded acceleration.
    pub gain: Gain,
    /// Riccati solution that generated `gain`.
    pub riccati: Matrix6<f64>,
    pub q_weight: Matrix6<f64>,
    pub r_weight: Matrix3<f64>,
    /// Center-of-mass position that docks the chaser at the goal attitude.
    pub target_position: Vec3,
    /// Regulator origin relative to `target_position`.
    pub origin_offset: Vec3,
}

impl LqrDesign {
    pub fn with_origin(mut self, target_position: Vec3, origin_offset: Vec3) -> Self {
        self.target_position = target_position;
        self.origin_offset = origin_offset;
        self
    }

    pub fn closed_loop(&self) -> Matrix6<f64> {
        let (a, b) = plant();
        a - b * self.gain
    }

    /// `|A^T P + P A - P B R^-1 B^T P + Q|_inf`.
    pub fn riccati_residual(&self) -> f64 {
        riccati_residual(&self.riccati, &self.q_weight, &self.r_weight)
    }

    pub fn is_stable(&self) -> bool {
        self.closed_loop().complex_eigenvalues().iter().all(|l| l.re < 0.0)
    }
}

fn riccati_residual(p: &Matrix6<f64>, q: &Matrix6<f64>, r: &Matrix3<f64>) -> f64 {
    let (a, b) = plant();
    let r_inv = r.try_inverse().unwrap_or_else(Matrix3::zeros);
    let res = a.transpose() * p + p * a - p * b * r_inv * b.transpose() * p + q;
    res.abs().max()
}

/// Solves `Ac^T P + P Ac + W = 0` through the Kronecker form.
fn solve_lyapunov(ac: &Matrix6<f64>, w: &Matrix6<f64>) -> Result<Matrix6<f64>> {
    let n = 6;
    let at = ac.transpose();
    let mut big = DMatrix::<f64>::zeros(n * n, n * n);
    // vec(At P + P Ac) = (I kron At + Ac^T kron I) vec(P), column-major vec.
    for j in 0..n {
        for i in 0..n {
            let row = j * n + i;
            for k in 0..n {
                big[(row, j * n + k)] += at[(i, k)];
                big[(row, k * n + i)] += ac[(k, j)];
            }
        }
    }
    let rhs = DVector::from_iterator(n * n, w.iter().map(|x| -x));
    let sol = big
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Numerical("Lyapunov system is singular".into()))?;
    let p = Matrix6::from_column_slice(sol.as_slice());
    Ok(0.5 * (p + p.transpose()))
}

fn is_positive_definite(m: &Matrix3<f64>) -> bool {
    (m - m.transpose()).abs().max() <= 1e-12 * m.abs().max().max(1.0) && m.cholesky().is_some()
}

fn is_positive_semidefinite(m: &Matrix6<f64>) -> bool {
    if (m - m.transpose()).abs().max() > 1e-12 * m.abs().max().max(1.0) {
        return false;
    }
    let scale = m.abs().max().max(f64::MIN_POSITIVE);
    m.symmetric_eigenvalues().iter().all(|&l| l >= -1e-12 * scale)
}

/// Continuous-time LQR gain for the 3-axis double integrator.
pub fn design_gain(q_weight: &Matrix6<f64>, r_weight: &Matrix3<f64>) -> Result<LqrDesign> {
    if !is_positive_definite(r_weight) {
        return Err(invalid("R must be symmetric positive definite"));
    }
    if !is_positive_semidefinite(q_weight) {
        return Err(invalid("Q must be symmetric positive semidefinite"));
    }
    let (a, b) = plant();
    let r_inv = r_weight.try_inverse().ok_or_else(|| invalid("R is singular"))?;

    // Any PD-gain stabilizes the double integrator.
    let mut gain = Gain::zeros();
    for i in 0..3 {
        gain[(i, i)] = 1.0;
        gain[(i, i + 3)] = 2.0;
    }
    let mut p = Matrix6::zeros();
    for iter in 0..MAX_ITERATIONS {
        let ac = a - b * gain;
        let w = q_weight + gain.transpose() * r_weight * gain;
        let next = solve_lyapunov(&ac, &w)?;
        if !next.iter().all(|x| x.is_finite()) {
            return Err(Error::Numerical("Riccati iterate is not finite".into()));
        }
        let change = (next - p).abs().max();
        p = next;
        gain = r_inv * b.transpose() * p;
        let residual = riccati_residual(&p, q_weight, r_weight);
        if iter > 0 && residual < RESIDUAL_TOL && change <= 1e-9 * p.abs().max() {
            let design = LqrDesign {
                gain,
                riccati: p,
                q_weight: *q_weight,
                r_weight: *r_weight,
                target_position: Vec3::zeros(),
                origin_offset: Vec3::zeros(),
            };
            if !design.is_stable() {
                return Err(Error::Numerical("LQR closed loop is not Hurwitz (is (A, Q) detectable?)".into()));
            }
            return Ok(design);
        }
    }
    Err(Error::Numerical(format!("Kleinman iteration did not converge in {MAX_ITERATIONS} iterations")))
}

/// Reference acceleration `-K [r - target - offset; v]`.
pub fn reference_accel(design: &LqrDesign, r: &Vec3, v: &Vec3) -> Vec3 {
    let e = r - design.target_position - design.origin_offset;
    let x = Vector6::new(e.x, e.y, e.z, v.x, v.y, v.z);
    -(design.gain * x)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReferenceTrajectory {
    pub time: Vec<f64>,
    pub r: Vec<Vec3>,
    pub v: Vec<Vec3>,
    /// Reference acceleration applied over `[t_k, t_k + dt)`; the final entry is
    /// the command at the last sample.
    pub accel: Vec<Vec3>,
    /// First sample time with every axis of the port error within tolerance.
    pub arrival: Option<f64>,
}

impl ReferenceTrajectory {
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["t", "r_x", "r_y", "r_z", "v_x", "v_y", "v_z", "a_x", "a_y", "a_z"])?;
        for k in 0..self.time.len() {
            let (r, v, a) = (self.r[k], self.v[k], self.accel[k]);
            let row = [self.time[k], r.x, r.y, r.z, v.x, v.y, v.z, a.x, a.y, a.z];
            w.write_record(row.iter().map(|x| x.to_string()))?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Closed-loop double-integrator rollout under the reference acceleration with
/// zero-order hold at `dt`.
pub fn simulate_reference(
    design: &LqrDesign,
    r0: Vec3,
    v0: Vec3,
    dt: f64,
    t_max: f64,
    position_tol: f64,
) -> ReferenceTrajectory {
    let steps = (t_max / dt).round() as usize;
    let mut traj = ReferenceTrajectory {
        time: Vec::with_capacity(steps + 1),
        r: Vec::with_capacity(steps + 1),
        v: Vec::with_capacity(steps + 1),
        accel: Vec::with_capacity(steps + 1),
        arrival: None,
    };
    let (mut r, mut v) = (r0, v0);
    for k in 0..=steps {
        let t = k as f64 * dt;
        let a = reference_accel(design, &r, &v);
        traj.time.push(t);
        traj.r.push(r);
        traj.v.push(v);
        traj.accel.push(a);
        if traj.arrival.is_none() && (r - design.target_position).iter().all(|e| e.abs() <= position_tol) {
            traj.arrival = Some(t);
        }
        r += v * dt + a * (0.5 * dt * dt);
        v += a * dt;
    }
    traj
}

/// Weights and targets for the automated arrival-time tuner.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LqrSettings {
    /// Diagonal of the base state weight `[pos x3, vel x3]`. The lateral position
    /// weights are much stiffer than the axial one so that cross-track errors are
    /// removed well before the approach along x completes.
    pub q_base_diag: [f64; 6],
    pub r_diag: [f64; 3],
    /// Multiplier applied to the position block of `q_base_diag`.
    pub position_scale: f64,
    pub origin_offset_m: [f64; 3],
    pub target_arrival_s: f64,
    pub arrival_tol_s: f64,
}

impl Default for LqrSettings {
    fn default() -> Self {
        Self {
            q_base_diag: [1e-6, 5e-4, 5e-4, 1e-4, 1e-4, 1e-4],
            r_diag: [1.0; 3],
            position_scale: 0.2241,
            origin_offset_m: [3.0, 0.0, 0.0],
            target_arrival_s: 105.0,
            arrival_tol_s: 2.0,
        }
    }
}

impl LqrSettings {
    pub fn weights(&self, position_scale: f64) -> (Matrix6<f64>, Matrix3<f64>) {
        let mut d = self.q_base_diag;
        for x in d.iter_mut().take(3) {
            *x *= position_scale;
        }
        (Matrix6::from_diagonal(&Vector6::from(d)), Matrix3::from_diagonal(&Vec3::from(self.r_diag)))
    }

    pub fn design(&self, position_scale: f64, target_position: Vec3) -> Result<LqrDesign> {
        let (q, r) = self.weights(position_scale);
        Ok(design_gain(&q, &r)?.with_origin(target_position, Vec3::from(self.origin_offset_m)))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TuningStep {
    pub position_scale: f64,
    pub arrival_s: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct TuningResult {
    pub design: LqrDesign,
    pub position_scale: f64,
    pub arrival_s: f64,
    pub trace: Vec<TuningStep>,
}

/// Bisects the position-weight scale (in log space) until the nominal reference
/// arrives within `target ± tol`.
pub fn tune_position_scale(
    settings: &LqrSettings,
    target_position: Vec3,
    r0: Vec3,
    v0: Vec3,
    dt: f64,
    t_max: f64,
    position_tol: f64,
) -> Result<TuningResult> {
    let arrival = |scale: f64| -> Result<(LqrDesign, Option<f64>)> {
        let design = settings.design(scale, target_position)?;
        let a = simulate_reference(&design, r0, v0, dt, t_max, position_tol).arrival;
        Ok((design, a))
    };
    let (target, tol) = (settings.target_arrival_s, settings.arrival_tol_s);
    let mut trace = Vec::new();
    let (mut lo, mut hi) = (-12.0_f64, 12.0_f64); // log10 bounds; larger scale arrives sooner
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let scale = 10f64.powf(mid);
        let (design, a) = arrival(scale)?;
        trace.push(TuningStep { position_scale: scale, arrival_s: a });
        match a {
            Some(t) if (t - target).abs() <= tol => {
                return Ok(TuningResult { design, position_scale: scale, arrival_s: t, trace });
            }
            Some(t) if t < target => hi = mid,
            _ => lo = mid,
        }
        if hi - lo < 1e-12 {
            break;
        }
    }
    let log = trace
        .iter()
        .map(|s| format!("scale={:e} arrival={:?}", s.position_scale, s.arrival_s))
        .collect::<Vec<_>>()
        .join("; ");
    Err(Error::Numerical(format!("LQR tuner did not reach {target}±{tol} s: {log}")))
}

/// On-disk form of a tuned design (JSON). Matrices are row-major nested arrays.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GainFile {
    pub position_scale: f64,
    pub arrival_s: f64,
    pub target_arrival_s: f64,
    pub gain: Vec<Vec<f64>>,
    pub riccati: Vec<Vec<f64>>,
    pub q_weight: Vec<Vec<f64>>,
    pub r_weight: Vec<Vec<f64>>,
    pub target_position_m: [f64; 3],
    pub origin_offset_m: [f64; 3],
    pub riccati_residual: f64,
    pub trace: Vec<TuningStep>,
}

fn rows<const R: usize, const C: usize>(m: &SMatrix<f64, R, C>) -> Vec<Vec<f64>> {
    (0..R).map(|i| (0..C).map(|j| m[(i, j)]).collect()).collect()
}

fn from_rows<const R: usize, const C: usize>(v: &[Vec<f64>], name: &str) -> Result<SMatrix<f64, R, C>> {
    if v.len() != R || v.iter().any(|r| r.len() != C) {
        return Err(invalid(format!("gain file: {name} must be {R}x{C}")));
    }
    Ok(SMatrix::from_fn(|i, j| v[i][j]))
}

/// Residual a loaded Riccati solution may show before it is rejected.
pub const LOAD_RESIDUAL_TOL: f64 = 1e-8;

impl GainFile {
    pub fn from_tuning(res: &TuningResult, target_arrival_s: f64) -> Self {
        let d = &res.design;
        Self {
            position_scale: res.position_scale,
            arrival_s: res.arrival_s,
            target_arrival_s,
            gain: rows(&d.gain),
            riccati: rows(&d.riccati),
            q_weight: rows(&d.q_weight),
            r_weight: rows(&d.r_weight),
            target_position_m: d.target_position.into(),
            origin_offset_m: d.origin_offset.into(),
            riccati_residual: d.riccati_residual(),
            trace: res.trace.clone(),
        }
    }

    /// Rebuilds the design and re-checks the Riccati residual, closed-loop
    /// stability, and consistency of the stored gain with `R^-1 B^T P`.
    pub fn to_design(&self) -> Result<LqrDesign> {
        let d = LqrDesign {
            gain: from_rows(&self.gain, "gain")?,
            riccati: from_rows(&self.riccati, "riccati")?,
            q_weight: from_rows(&self.q_weight, "q_weight")?,
            r_weight: from_rows(&self.r_weight, "r_weight")?,
            target_position: Vec3::from(self.target_position_m),
            origin_offset: Vec3::from(self.origin_offset_m),
        };
        let scale = d.riccati.abs().max().max(1.0);
        if !(d.riccati_residual() <= LOAD_RESIDUAL_TOL * scale) {
            return Err(Error::Numerical(format!("gain file: Riccati residual {:e} too large", d.riccati_residual())));
        }
        let (_, b) = plant();
        let r_inv = d.r_weight.try_inverse().ok_or_else(|| Error::Numerical("gain file: R is singular".into()))?;
        let k = r_inv * b.transpose() * d.riccati;
        if (k - d.gain).abs().max() > 1e-9 * k.abs().max().max(1.0) {
            return Err(Error::Numerical("gain file: gain does not match the Riccati solution".into()));
        }
        if !d.is_stable() {
            return Err(Error::Numerical("gain file: closed loop is not stable".into()));
        }
        Ok(d)
    }
}
