use std::time::Instant;

use super::planner::ExpertPlan;
use super::plant::{step, Action, PointMassState};
use super::scene::Scene;
use super::EnvConfig;
use crate::error::{DnkError, Result};

/// Anything that maps the measured state to one action per tick.
pub trait Controller {
    fn act(&mut self, state: &PointMassState, scene: &Scene) -> Result<Action>;
}

#[derive(Clone, Debug)]
pub struct EpisodeResult {
    /// Shaped return before normalisation.
    pub raw_return: f64,
    pub success: bool,
    pub collided: bool,
    pub steps: usize,
    /// Visited states, starting with the initial state.
    pub states: Vec<PointMassState>,
    pub actions: Vec<Action>,
    /// Wall-clock duration of each controller call.
    pub latencies_ms: Vec<f64>,
    pub final_distance: f64,
    /// Set when the controller failed; the episode ends at that tick.
    pub failure: Option<String>,
}

impl EpisodeResult {
    pub fn normalized_return(&self, expert_mean: f64) -> f64 {
        self.raw_return / expert_mean
    }
}

/// Runs one episode from `scene.start`.
///
/// Each tick earns `dt * (d0 - |p - goal| - kappa_u * |a|^2)` where `d0` is
/// the initial goal distance. Reaching the goal earns `dt * d0` for each
/// remaining tick up to `max_steps`; a collision, leaving the workspace or a
/// controller error ends the episode with nothing further.
pub fn rollout(scene: &Scene, controller: &mut dyn Controller, cfg: &EnvConfig) -> Result<EpisodeResult> {
    let dt = cfg.plant.dt;
    let dist = |p: [f64; 2]| (p[0] - scene.goal[0]).hypot(p[1] - scene.goal[1]);
    let d0 = dist(scene.start.pos);
    let mut state = scene.start;
    let mut res = EpisodeResult {
        raw_return: 0.0,
        success: false,
        collided: false,
        steps: 0,
        states: vec![state],
        actions: Vec::new(),
        latencies_ms: Vec::new(),
        final_distance: d0,
        failure: None,
    };
    for k in 0..cfg.max_steps {
        let t0 = Instant::now();
        let a = match controller.act(&state, scene) {
            Ok(a) => a,
            Err(e) => {
                res.failure = Some(e.to_string());
                break;
            }
        };
        res.latencies_ms.push(t0.elapsed().as_secs_f64() * 1e3);
        let a = a.clipped(cfg.plant.a_max);
        state = step(&state, &a, &cfg.plant);
        if !state.is_finite() {
            return Err(DnkError::NonFinite("rollout state"));
        }
        res.states.push(state);
        res.actions.push(a);
        res.steps = k + 1;
        let d = dist(state.pos);
        res.final_distance = d;
        if scene.in_collision(state.pos) || !scene.in_workspace(state.pos) {
            res.collided = true;
            break;
        }
        res.raw_return += dt * (d0 - d - cfg.score.kappa_u * a.norm_sq());
        if d <= cfg.r_goal {
            res.success = true;
            res.raw_return += dt * d0 * (cfg.max_steps - k - 1) as f64;
            break;
        }
    }
    Ok(res)
}

/// Open-loop replay of a precomputed expert plan.
pub struct ExpertReplay {
    plan: ExpertPlan,
    tick: usize,
}

impl ExpertReplay {
    pub fn new(plan: ExpertPlan) -> Self {
        Self { plan, tick: 0 }
    }
}

impl Controller for ExpertReplay {
    fn act(&mut self, _state: &PointMassState, _scene: &Scene) -> Result<Action> {
        let a = self.plan.actions.get(self.tick).copied().unwrap_or_default();
        self.tick += 1;
        Ok(a)
    }
}

/// Always commands zero acceleration.
pub struct NullController;

impl Controller for NullController {
    fn act(&mut self, _state: &PointMassState, _scene: &Scene) -> Result<Action> {
        Ok(Action::default())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::demos::sample_solvable;
    use crate::env::scene::SceneFamily;
    use crate::numkit::Rng64;

    #[test]
    fn expert_replay_succeeds() {
        let cfg = EnvConfig::default();
        for i in 0..100 {
            let mut rng = Rng64::seeded(11, i);
            let fam = if i % 2 == 0 { SceneFamily::Navigation } else { SceneFamily::Bimodal };
            let (scene, plan) = sample_solvable(&cfg, fam, &mut rng).unwrap();
            let r = rollout(&scene, &mut ExpertReplay::new(plan), &cfg).unwrap();
            assert!(r.success, "scene {i}: final distance {}", r.final_distance);
            assert!(r.final_distance <= cfg.r_goal);
            assert_eq!(r.latencies_ms.len(), r.steps);
        }
    }

    struct Failing;

    impl Controller for Failing {
        fn act(&mut self, _state: &PointMassState, _scene: &Scene) -> Result<Action> {
            Err(DnkError::Planner("no candidates".into()))
        }
    }

    #[test]
    fn controller_error_is_a_failed_episode() {
        let cfg = EnvConfig::default();
        let scene = Scene::new(PointMassState::at_rest([-1.0, 0.0]), [1.0, 0.0], vec![], 2.0).unwrap();
        let r = rollout(&scene, &mut Failing, &cfg).unwrap();
        assert!(!r.success);
        assert_eq!(r.steps, 0);
        assert!(r.failure.unwrap().contains("no candidates"));
    }

    #[test]
    fn null_controller_times_out() {
        let cfg = EnvConfig::default();
        let scene = Scene::new(PointMassState::at_rest([-1.0, 0.0]), [1.0, 0.0], vec![], 2.0).unwrap();
        let r = rollout(&scene, &mut NullController, &cfg).unwrap();
        assert!(!r.success && !r.collided);
        assert_eq!(r.steps, cfg.max_steps);
        assert!(r.raw_return.abs() < 1e-12);
    }
}
