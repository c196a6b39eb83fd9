use super::planner::{plan_full, ExpertPlan};
use super::scene::{sample_scene, Scene, SceneFamily};
use super::trajectory::{Context, Trajectory};
use super::EnvConfig;
use crate::error::{DnkError, Result};
use crate::numkit::Rng64;

/// One expert window with the scene and context it was cut from.
#[derive(Clone, Debug)]
pub struct Demo {
    pub scene: Scene,
    pub traj: Trajectory,
    pub context: Context,
    pub offset: usize,
}

const MAX_DEMO_ATTEMPTS: usize = 64;

/// Draws a scene the expert can solve with the required clearance, together
/// with its full plan.
pub fn sample_solvable(cfg: &EnvConfig, family: SceneFamily, rng: &mut Rng64) -> Result<(Scene, ExpertPlan)> {
    for _ in 0..MAX_DEMO_ATTEMPTS {
        let scene = sample_scene(&cfg.scenes, family, rng)?;
        let Ok(plan) = plan_full(&scene, &scene.start, cfg.max_steps, &cfg.plant, &cfg.planner, rng) else {
            continue;
        };
        if plan.clearance(&scene) < cfg.planner.delta_safe / 2.0 {
            continue;
        }
        return Ok((scene, plan));
    }
    Err(DnkError::Planner(format!("no solvable scene in {MAX_DEMO_ATTEMPTS} draws")))
}

pub fn sample_demo(cfg: &EnvConfig, family: SceneFamily, rng: &mut Rng64) -> Result<Demo> {
    let (scene, plan) = sample_solvable(cfg, family, rng)?;
    let h = cfg.horizon;
    let last = plan.len() - h;
    let offset = if rng.bernoulli(cfg.p_offset_zero) {
        0
    } else {
        rng.below(last + 1)
    };
    let traj = plan.window(offset, h)?;
    let context = Context::new(traj.state(0), &scene);
    Ok(Demo {
        scene,
        traj,
        context,
        offset,
    })
}

/// `count` demonstrations; demo `i` draws from stream `i` of `seed`, and is
/// from the bimodal family with probability `cfg.bimodal_fraction`.
pub fn generate_demos(cfg: &EnvConfig, count: usize, seed: u64) -> Result<Vec<Demo>> {
    cfg.validate()?;
    (0..count)
        .map(|i| {
            let mut rng = Rng64::seeded(seed, i as u64);
            let family = if rng.bernoulli(cfg.bimodal_fraction) {
                SceneFamily::Bimodal
            } else {
                SceneFamily::Navigation
            };
            sample_demo(cfg, family, &mut rng)
        })
        .collect()
}

/// Held-out evaluation scenes the expert solves; scene `i` uses stream `i`.
pub fn sample_eval_scenes(cfg: &EnvConfig, family: SceneFamily, count: usize, seed: u64) -> Result<Vec<Scene>> {
    (0..count)
        .map(|i| {
            let mut rng = Rng64::seeded(seed, i as u64);
            sample_solvable(cfg, family, &mut rng).map(|(s, _)| s)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::geometry::clearance;

    #[test]
    fn demos_are_collision_free_with_margin() {
        let cfg = EnvConfig::default();
        let demos = generate_demos(&cfg, 300, 7).unwrap();
        for d in &demos {
            assert_eq!(d.traj.horizon(), cfg.horizon);
            assert!(clearance(&d.traj, &d.scene) >= cfg.planner.delta_safe / 2.0);
            assert_eq!(d.context.state, d.traj.state(0));
        }
        assert!(demos.iter().any(|d| d.offset == 0));
        assert!(demos.iter().any(|d| d.offset > 0));
    }

    #[test]
    fn demos_are_deterministic() {
        let cfg = EnvConfig::default();
        let a = generate_demos(&cfg, 20, 3).unwrap();
        let b = generate_demos(&cfg, 20, 3).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.traj, y.traj);
            assert_eq!(x.scene, y.scene);
        }
    }
}
