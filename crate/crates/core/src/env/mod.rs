//! 2D point-mass navigation: plant, scenes, scripted expert and rollouts.

pub mod demos;
pub mod geometry;
pub mod planner;
pub mod plant;
pub mod rollout;
pub mod scene;
pub mod trajectory;

pub use demos::{generate_demos, sample_demo, sample_eval_scenes, sample_solvable, Demo};
pub use geometry::{blocking_obstacle, clearance, pass_side, score_geometry, ScoreParams, Side};
pub use planner::{expert_plan, plan_full, ExpertPlan, PlannerParams};
pub use plant::{step, Action, PlantParams, PointMassState};
pub use rollout::{rollout, Controller, EpisodeResult, ExpertReplay, NullController};
pub use scene::{sample_scene, Obstacle, Scene, SceneFamily, SceneParams};
pub use trajectory::{action_range, normalized_state, Context, Trajectory};

use crate::error::{DnkError, Result};

pub const STATE_DIM: usize = 4;
pub const ACTION_DIM: usize = 2;
pub const STEP_DIM: usize = STATE_DIM + ACTION_DIM;
/// Maximum number of obstacles encoded in a context.
pub const K_OBS: usize = 3;
pub const CTX_DIM: usize = STATE_DIM + 2 + 3 * K_OBS;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EnvConfig {
    pub plant: PlantParams,
    pub planner: PlannerParams,
    pub score: ScoreParams,
    pub scenes: SceneParams,
    pub horizon: usize,
    pub r_goal: f64,
    pub max_steps: usize,
    /// Probability that a demo window starts at the plan's first step.
    pub p_offset_zero: f64,
    /// Share of demos drawn from the bimodal scene family.
    pub bimodal_fraction: f64,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            plant: PlantParams::default(),
            planner: PlannerParams::default(),
            score: ScoreParams::default(),
            scenes: SceneParams::default(),
            horizon: 16,
            r_goal: 0.05,
            max_steps: 100,
            p_offset_zero: 0.3,
            bimodal_fraction: 0.3,
        }
    }
}

impl EnvConfig {
    pub fn traj_dim(&self) -> usize {
        self.horizon * STEP_DIM
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(DnkError::InvalidArgument(m));
        let p = &self.plant;
        if !(p.dt > 0.0 && p.damping >= 0.0 && p.damping * p.dt < 1.0 && p.a_max > 0.0 && p.v_max > 0.0) {
            return bad("plant parameters out of range".into());
        }
        if self.horizon == 0 || self.max_steps < self.horizon {
            return bad(format!("need 0 < horizon <= max_steps, got {} and {}", self.horizon, self.max_steps));
        }
        if !(self.r_goal > 0.0) {
            return bad("r_goal must be positive".into());
        }
        for (name, v) in [("p_offset_zero", self.p_offset_zero), ("bimodal_fraction", self.bimodal_fraction)] {
            if !(0.0..=1.0).contains(&v) {
                return bad(format!("{name} must be a probability, got {v}"));
            }
        }
        let pl = &self.planner;
        if !(pl.spacing > 0.0 && pl.cruise_speed > 0.0 && pl.accel > 0.0 && pl.arc_step > 0.0) {
            return bad("planner parameters must be positive".into());
        }
        if pl.delta_safe != self.scenes.delta_safe {
            return bad("planner and scene sampler disagree on delta_safe".into());
        }
        let s = &self.score;
        if s.kappa_c < 0.0 || s.kappa_u < 0.0 || s.kappa_g < 0.0 || s.c_sat < 0.0 {
            return bad("selector weights must be non-negative".into());
        }
        self.scenes.validate()
    }
}
