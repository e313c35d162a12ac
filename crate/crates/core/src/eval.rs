//! Monte Carlo testing of a frozen policy, per-trajectory statistics, and
//! trajectory CSV export/import.

use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};

use crate::attitude::{error_angle, error_quaternion, to_euler_deg, to_wxyz};
use crate::dynamics::{ChaserState, ControlAction, Vec3, STATE_DIM};
use crate::env::DockingEnv;
use crate::error::{invalid, Error, Result};
use crate::ppo::{rollout, rollout_from, trial_rng, Agent, EpisodeRecord, Termination, ACTION_DIM};
use crate::reward::RewardTerms;
use crate::scenario::{check_docking, ScenarioConfig};

/// Summary of one test trajectory. Port quantities are taken at the final state.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryStats {
    pub time_s: f64,
    /// `sqrt(r_py^2 + r_pz^2)` at the final state (m).
    pub cross_track_pos_m: f64,
    /// `sqrt(v_py^2 + v_pz^2)` at the final state (m/s).
    pub cross_track_vel_mps: f64,
    pub final_vx_mps: f64,
    /// Axis-angle magnitude of the final attitude error (deg).
    pub final_att_err_deg: f64,
    /// Norm of the final body-rate error (deg/s).
    pub final_rate_err_degps: f64,
    /// Time integral of `sum |F_i|` (N s, reported in N for 1 s samples).
    pub thrust_total_n: f64,
    pub torque_total_nm: f64,
    pub docked: bool,
    pub collided: bool,
}

/// Names of the numeric fields in [`TrajectoryStats::values`] order.
pub const STAT_FIELDS: [&str; 8] = [
    "time_s",
    "cross_track_pos_m",
    "cross_track_vel_mps",
    "final_vx_mps",
    "final_att_err_deg",
    "final_rate_err_degps",
    "thrust_total_n",
    "torque_total_nm",
];

impl TrajectoryStats {
    pub fn values(&self) -> [f64; 8] {
        [
            self.time_s,
            self.cross_track_pos_m,
            self.cross_track_vel_mps,
            self.final_vx_mps,
            self.final_att_err_deg,
            self.final_rate_err_degps,
            self.thrust_total_n,
            self.torque_total_nm,
        ]
    }
}

/// Per-axis L1 time integral of the force and torque commands.
pub fn expenditure(ep: &EpisodeRecord, dt: f64) -> (f64, f64) {
    let mut thrust = 0.0;
    let mut torque = 0.0;
    for a in &ep.actions {
        thrust += a.force().abs().sum() * dt;
        torque += a.torque().abs().sum() * dt;
    }
    (thrust, torque)
}

pub fn trajectory_stats(ep: &EpisodeRecord, env: &DockingEnv) -> TrajectoryStats {
    let cfg = &env.scenario;
    let fin = &ep.final_state;
    let (r_p, v_p) = cfg.port_state(fin);
    let e = error_quaternion(&env.weights.q_des, &fin.q);
    let (thrust, torque) = expenditure(ep, ep.dt);
    TrajectoryStats {
        time_s: ep.duration(),
        cross_track_pos_m: r_p.y.hypot(r_p.z),
        cross_track_vel_mps: v_p.y.hypot(v_p.z),
        final_vx_mps: v_p.x,
        final_att_err_deg: error_angle(&e).to_degrees(),
        final_rate_err_degps: (fin.w - env.weights.w_des).norm().to_degrees(),
        thrust_total_n: thrust,
        torque_total_nm: torque,
        docked: ep.docked(),
        collided: ep.collided,
    }
}

/// Mean and max of every statistic over a set of trials.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub count: usize,
    pub mean: Vec<f64>,
    pub max: Vec<f64>,
}

impl Aggregate {
    pub fn of<'a>(trials: impl Iterator<Item = &'a TrajectoryStats>) -> Self {
        let mut count = 0;
        let mut sum = [0.0; 8];
        let mut max = [f64::NEG_INFINITY; 8];
        for t in trials {
            count += 1;
            for (k, v) in t.values().iter().enumerate() {
                sum[k] += v;
                max[k] = max[k].max(*v);
            }
        }
        if count == 0 {
            return Self { count, mean: Vec::new(), max: Vec::new() };
        }
        Self { count, mean: sum.iter().map(|s| s / count as f64).collect(), max: max.to_vec() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloReport {
    pub master_seed: u64,
    pub fields: Vec<String>,
    pub trials: usize,
    pub docked: usize,
    pub collided: usize,
    /// `None` when no trials were run.
    pub success_fraction: Option<f64>,
    pub all_trials: Aggregate,
    pub successful_trials: Aggregate,
}

impl MonteCarloReport {
    /// Aggregates are always recomputed from the trial list, so reports over
    /// concatenated trial ranges equal a report over the union.
    pub fn from_trials(master_seed: u64, trials: &[TrajectoryStats]) -> Self {
        let docked = trials.iter().filter(|t| t.docked).count();
        Self {
            master_seed,
            fields: STAT_FIELDS.iter().map(|s| (*s).to_string()).collect(),
            trials: trials.len(),
            docked,
            collided: trials.iter().filter(|t| t.collided).count(),
            success_fraction: (!trials.is_empty()).then(|| docked as f64 / trials.len() as f64),
            all_trials: Aggregate::of(trials.iter()),
            successful_trials: Aggregate::of(trials.iter().filter(|t| t.docked)),
        }
    }
}

/// Deterministic test episodes for trials `first..first + count`, initial
/// conditions drawn from the testing range.
pub fn test_episodes(agent: &Agent, env: &DockingEnv, master_seed: u64, first: u64, count: usize) -> Result<Vec<EpisodeRecord>> {
    let max_steps = env.scenario.max_steps(true);
    (first..first + count as u64)
        .into_par_iter()
        .map(|k| rollout(agent, env, &env.scenario.ic_test, max_steps, false, &mut trial_rng(master_seed, k)))
        .collect()
}

pub fn monte_carlo_trials(agent: &Agent, env: &DockingEnv, master_seed: u64, first: u64, count: usize) -> Result<Vec<TrajectoryStats>> {
    Ok(test_episodes(agent, env, master_seed, first, count)?.iter().map(|ep| trajectory_stats(ep, env)).collect())
}

pub fn monte_carlo(agent: &Agent, env: &DockingEnv, n: usize, master_seed: u64) -> Result<MonteCarloReport> {
    let trials = monte_carlo_trials(agent, env, master_seed, 0, n)?;
    Ok(MonteCarloReport::from_trials(master_seed, &trials))
}

/// Deterministic policy episode from a given initial state (testing time limit).
pub fn test_episode_from(agent: &Agent, env: &DockingEnv, initial: ChaserState) -> Result<EpisodeRecord> {
    rollout_from::<ChaCha8Rng>(agent, env, initial, env.scenario.max_steps(true), None)
}

/// Episode driven by an arbitrary state-feedback controller. Log-probabilities
/// and value estimates are recorded as zero.
pub fn controller_episode<F>(env: &DockingEnv, initial: ChaserState, max_steps: usize, mut controller: F) -> Result<EpisodeRecord>
where
    F: FnMut(&ChaserState) -> ControlAction,
{
    let mut ep = EpisodeRecord {
        dt: env.scenario.dt_s,
        states: Vec::new(),
        obs: Vec::new(),
        raw_actions: Vec::new(),
        actions: Vec::new(),
        logp: Vec::new(),
        r1: Vec::new(),
        r2: Vec::new(),
        values: Vec::new(),
        terms: Vec::new(),
        final_state: initial,
        termination: Termination::TimeLimit,
        collided: false,
    };
    let (f_max, l_max) = (env.scenario.limits().force, env.scenario.limits().torque);
    let mut state = initial;
    for _ in 0..max_steps {
        let action = controller(&state);
        let tr = env.transition(&state, &action)?;
        let mut raw = [0.0; ACTION_DIM];
        for i in 0..3 {
            raw[i] = action.force()[i] / f_max[i];
            raw[i + 3] = action.torque()[i] / l_max[i];
        }
        ep.states.push(state);
        ep.obs.push(state.to_array());
        ep.raw_actions.push(raw);
        ep.actions.push(action);
        ep.logp.push(0.0);
        ep.values.push(0.0);
        ep.r1.push(tr.r1);
        ep.r2.push(tr.r2);
        ep.terms.push(tr.terms);
        ep.collided |= tr.collided;
        state = tr.next;
        if tr.docked {
            ep.termination = Termination::Docked;
            break;
        }
    }
    ep.final_state = state;
    Ok(ep)
}

/// Translation-only controller commanding `m * a_ref` with zero torque.
pub fn lqr_controller(env: &DockingEnv) -> impl FnMut(&ChaserState) -> ControlAction + '_ {
    let limits = env.scenario.limits();
    move |s: &ChaserState| ControlAction::clamped(env.reference_accel(s) * env.props.mass(), Vec3::zeros(), &limits)
}

const EXPORT_HEADER: [&str; 34] = [
    "t", "r_x", "r_y", "r_z", "v_x", "v_y", "v_z", "q_w", "q_x", "q_y", "q_z", "roll_deg", "pitch_deg", "yaw_deg",
    "w_x", "w_y", "w_z", "f_x", "f_y", "f_z", "l_x", "l_y", "l_z", "rp_x", "rp_y", "rp_z", "vp_x", "vp_y", "vp_z",
    "r1", "r2", "cum_reward", "docked", "collided",
];

/// Writes one row per sample time including the final state (`len + 1` rows).
/// Command and reward columns are empty on the final row. Angular rates are rad/s.
pub fn export_trajectory<W: Write>(ep: &EpisodeRecord, cfg: &ScenarioConfig, out: W) -> Result<()> {
    let docked_final = check_docking(&ep.final_state, cfg).success;
    if ep.docked() && !docked_final {
        return Err(Error::Numerical("episode marked docked but final state fails the docking check".into()));
    }
    let mut w = csv::Writer::from_writer(out);
    w.write_record(EXPORT_HEADER)?;
    let mut cum = 0.0;
    for k in 0..=ep.len() {
        let s = if k < ep.len() { &ep.states[k] } else { &ep.final_state };
        let (rp, vp) = cfg.port_state(s);
        let e = to_euler_deg(&s.q);
        let q = to_wxyz(&s.q);
        let mut row: Vec<String> = Vec::with_capacity(EXPORT_HEADER.len());
        row.push((k as f64 * ep.dt).to_string());
        for x in s.r.iter().chain(s.v.iter()).chain(q.iter()).chain(e.iter()).chain(s.w.iter()) {
            row.push(x.to_string());
        }
        if k < ep.len() {
            let a = &ep.actions[k];
            cum += ep.r1[k] + ep.r2[k];
            for x in a.force().iter().chain(a.torque().iter()) {
                row.push(x.to_string());
            }
            for x in rp.iter().chain(vp.iter()) {
                row.push(x.to_string());
            }
            row.push(ep.r1[k].to_string());
            row.push(ep.r2[k].to_string());
        } else {
            row.extend(std::iter::repeat_n(String::new(), 6));
            for x in rp.iter().chain(vp.iter()) {
                row.push(x.to_string());
            }
            row.push(String::new());
            row.push(String::new());
        }
        row.push(cum.to_string());
        let last = k == ep.len();
        row.push(u8::from(last && ep.docked()).to_string());
        row.push(u8::from(last && ep.collided).to_string());
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Contents of an exported trajectory file.
#[derive(Clone, Debug, PartialEq)]
pub struct ImportedTrajectory {
    pub time: Vec<f64>,
    /// `len + 1` states including the final one.
    pub states: Vec<ChaserState>,
    pub actions: Vec<ControlAction>,
    pub r1: Vec<f64>,
    pub r2: Vec<f64>,
    pub docked: bool,
    pub collided: bool,
}

impl ImportedTrajectory {
    /// True when states, commands, and rewards equal those of `ep` exactly.
    pub fn matches(&self, ep: &EpisodeRecord) -> bool {
        let mut states = ep.states.clone();
        states.push(ep.final_state);
        self.states == states
            && self.actions == ep.actions
            && self.r1 == ep.r1
            && self.r2 == ep.r2
            && self.docked == ep.docked()
            && self.collided == ep.collided
    }
}

pub fn import_trajectory<R: Read>(input: R, cfg: &ScenarioConfig) -> Result<ImportedTrajectory> {
    let mut rd = csv::Reader::from_reader(input);
    let header = rd.headers()?.clone();
    if header.iter().ne(EXPORT_HEADER.iter().copied()) {
        return Err(invalid("trajectory file has an unexpected header"));
    }
    let limits = cfg.limits();
    let mut out = ImportedTrajectory {
        time: Vec::new(),
        states: Vec::new(),
        actions: Vec::new(),
        r1: Vec::new(),
        r2: Vec::new(),
        docked: false,
        collided: false,
    };
    for rec in rd.records() {
        let rec = rec?;
        let num = |i: usize| -> Result<f64> {
            rec[i].parse::<f64>().map_err(|e| invalid(format!("column {}: {e}", EXPORT_HEADER[i])))
        };
        out.time.push(num(0)?);
        let mut a = [0.0; STATE_DIM];
        for (j, col) in [1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 14, 15, 16].iter().enumerate() {
            a[j] = num(*col)?;
        }
        out.states.push(ChaserState::from_array(&a));
        if !rec[17].is_empty() {
            let f = Vec3::new(num(17)?, num(18)?, num(19)?);
            let l = Vec3::new(num(20)?, num(21)?, num(22)?);
            out.actions.push(ControlAction::clamped(f, l, &limits));
            out.r1.push(num(29)?);
            out.r2.push(num(30)?);
        }
        out.docked = &rec[32] == "1";
        out.collided = &rec[33] == "1";
    }
    if out.states.len() != out.actions.len() + 1 {
        return Err(invalid("trajectory file must hold one more state row than command rows"));
    }
    Ok(out)
}

/// Per-trial rows for a CSV summary.
pub fn write_trials_csv<W: Write>(trials: &[TrajectoryStats], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["trial"];
    header.extend(STAT_FIELDS);
    header.extend(["docked", "collided"]);
    w.write_record(&header)?;
    for (k, t) in trials.iter().enumerate() {
        let mut row = vec![k.to_string()];
        row.extend(t.values().iter().map(f64::to_string));
        row.push(u8::from(t.docked).to_string());
        row.push(u8::from(t.collided).to_string());
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Shaping-term totals of an episode, for reporting.
pub fn episode_terms(ep: &EpisodeRecord) -> RewardTerms {
    ep.term_totals()
}
