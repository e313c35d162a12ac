//! One-sample transition of the docking task: propagate, score, and check termination.

use crate::dynamics::{step_with_substeps, ChaserState, ControlAction, MassProperties, Vec3};
use crate::error::Result;
use crate::lqr::{reference_accel, LqrDesign};
use crate::reward::{shaping_terms, terminal_bonus, RewardTerms, RewardWeights};
use crate::scenario::{check_collision, check_docking, max_collision_distance, ScenarioConfig};

/// Everything needed to simulate and score an episode.
#[derive(Clone, Debug)]
pub struct DockingEnv {
    pub scenario: ScenarioConfig,
    pub props: MassProperties,
    pub weights: RewardWeights,
    pub lqr: LqrDesign,
    pub r_col: f64,
}

#[derive(Clone, Copy, Debug)]
pub struct Transition {
    pub next: ChaserState,
    pub terms: RewardTerms,
    pub r1: f64,
    pub r2: f64,
    pub docked: bool,
    pub collided: bool,
}

impl DockingEnv {
    pub fn new(scenario: ScenarioConfig, weights: RewardWeights, lqr: LqrDesign) -> Result<Self> {
        scenario.validate()?;
        let props = scenario.mass_properties.build()?;
        let r_col = max_collision_distance(&scenario);
        Ok(Self { scenario, props, weights, lqr, r_col })
    }

    pub fn reference_accel(&self, state: &ChaserState) -> Vec3 {
        reference_accel(&self.lqr, &state.r, &state.v)
    }

    /// Applies `action` for one sample. Tracking, attitude, and control terms are
    /// scored at the current state; the collision term and docking bonus are
    /// scored at the resulting state.
    pub fn transition(&self, state: &ChaserState, action: &ControlAction) -> Result<Transition> {
        let cfg = &self.scenario;
        let next = step_with_substeps(state, action, &self.props, cfg.dt_s, cfg.rk4_substeps);
        let docked = check_docking(&next, cfg).success;
        let (collided, r_p_norm) = check_collision(&next, cfg);
        let accel = action.force() / self.props.mass();
        let accel_ref = self.reference_accel(state);
        let terms = shaping_terms(state, action, &accel, &accel_ref, collided, r_p_norm, self.r_col, &self.weights)?;
        Ok(Transition {
            next,
            terms,
            r1: terms.total(),
            r2: terminal_bonus(docked, &self.weights),
            docked,
            collided,
        })
    }
}
