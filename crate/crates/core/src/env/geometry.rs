use super::scene::{Obstacle, Scene};
use super::trajectory::Trajectory;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScoreParams {
    pub kappa_c: f64,
    pub kappa_u: f64,
    pub kappa_g: f64,
    pub c_sat: f64,
}

impl Default for ScoreParams {
    fn default() -> Self {
        Self {
            kappa_c: 20.0,
            kappa_u: 0.05,
            kappa_g: 2.0,
            c_sat: 0.3,
        }
    }
}

/// Minimum signed distance between the trajectory's sampled positions and
/// the obstacle surfaces (workspace boundary when the scene is empty).
pub fn clearance(traj: &Trajectory, scene: &Scene) -> f64 {
    traj.positions()
        .map(|p| scene.point_clearance(p))
        .fold(f64::INFINITY, f64::min)
}

/// Selector score: saturated clearance reward minus control effort and
/// terminal goal error. Higher is better.
pub fn score_geometry(traj: &Trajectory, scene: &Scene, w: &ScoreParams) -> f64 {
    let c = clearance(traj, scene).min(w.c_sat);
    let effort: f64 = (0..traj.horizon()).map(|k| traj.action(k).norm_sq()).sum();
    let p = traj.position(traj.horizon() - 1);
    let dg = (p[0] - scene.goal[0]).powi(2) + (p[1] - scene.goal[1]).powi(2);
    w.kappa_c * c - w.kappa_u * effort - w.kappa_g * dg
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Side {
    Left,
    Right,
}

/// Signed area of `p` relative to the directed line `a -> b`.
pub fn cross_side(a: [f64; 2], b: [f64; 2], p: [f64; 2]) -> f64 {
    (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0])
}

/// Side of the start-goal line on which a path of positions passes
/// `obstacle`, judged at its closest approach.
pub fn pass_side(positions: &[[f64; 2]], start: [f64; 2], goal: [f64; 2], obstacle: &Obstacle) -> Side {
    let closest = positions
        .iter()
        .copied()
        .min_by(|a, b| obstacle.distance(*a).total_cmp(&obstacle.distance(*b)))
        .unwrap_or(start);
    if cross_side(start, goal, closest) > 0.0 {
        Side::Left
    } else {
        Side::Right
    }
}

/// Shortest distance from `c` to the segment `a-b`.
pub fn point_segment_distance(a: [f64; 2], b: [f64; 2], c: [f64; 2]) -> f64 {
    let ab = [b[0] - a[0], b[1] - a[1]];
    let len2 = ab[0] * ab[0] + ab[1] * ab[1];
    let t = if len2 > 0.0 {
        (((c[0] - a[0]) * ab[0] + (c[1] - a[1]) * ab[1]) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let q = [a[0] + t * ab[0], a[1] + t * ab[1]];
    (c[0] - q[0]).hypot(c[1] - q[1])
}

/// The unique obstacle crossing the start-goal segment, if exactly one does.
pub fn blocking_obstacle(scene: &Scene) -> Option<&Obstacle> {
    let mut hits = scene
        .obstacles
        .iter()
        .filter(|o| point_segment_distance(scene.start.pos, scene.goal, o.center) < o.radius);
    let first = hits.next()?;
    if hits.next().is_some() {
        None
    } else {
        Some(first)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::plant::{Action, PointMassState};

    fn line_traj(from: [f64; 2], to: [f64; 2], n: usize) -> Trajectory {
        let steps: Vec<_> = (0..n)
            .map(|k| {
                let t = k as f64 / (n - 1) as f64;
                let p = [from[0] + t * (to[0] - from[0]), from[1] + t * (to[1] - from[1])];
                (PointMassState::at_rest(p), Action::default())
            })
            .collect();
        Trajectory::from_steps(&steps).unwrap()
    }

    fn scene(obs: Vec<Obstacle>, goal: [f64; 2]) -> Scene {
        Scene::new(PointMassState::at_rest([-1.0, 0.0]), goal, obs, 2.0).unwrap()
    }

    #[test]
    fn clearance_of_straight_line_past_obstacle() {
        let s = scene(vec![Obstacle { center: [0.0, 0.5], radius: 0.2 }], [1.0, 0.0]);
        let t = line_traj([-1.0, 0.0], [1.0, 0.0], 21);
        assert!((clearance(&t, &s) - 0.3).abs() < 1e-12);
    }

    #[test]
    fn clearance_on_surface_is_zero() {
        let s = scene(vec![Obstacle { center: [0.0, 0.5], radius: 0.5 }], [1.0, 0.0]);
        let t = line_traj([-1.0, 0.0], [1.0, 0.0], 21);
        assert!(clearance(&t, &s).abs() < 1e-12);
    }

    #[test]
    fn clearance_without_obstacles_is_boundary_distance() {
        let s = scene(vec![], [1.0, 0.0]);
        let t = line_traj([-1.0, 0.0], [1.0, 0.0], 3);
        assert!((clearance(&t, &s) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn more_effort_scores_lower() {
        let s = scene(vec![], [1.0, 0.0]);
        let t = line_traj([-1.0, 0.0], [1.0, 0.0], 5);
        let mut u = t.clone();
        u.set_step(2, &t.state(2), &Action::new(0.5, 0.0));
        let w = ScoreParams::default();
        assert!(score_geometry(&u, &s, &w) < score_geometry(&t, &s, &w));
    }

    #[test]
    fn colliding_scores_below_clear() {
        let s = scene(vec![Obstacle { center: [0.0, 0.5], radius: 0.2 }], [1.0, 0.0]);
        let w = ScoreParams { kappa_c: 100.0, ..Default::default() };
        let clear = line_traj([-1.0, 0.0], [1.0, 0.0], 21);
        let hit = line_traj([-1.0, 0.5], [1.0, 0.0], 21);
        // same effort (zero) and same terminal point
        assert!(score_geometry(&hit, &s, &w) < score_geometry(&clear, &s, &w));
    }

    #[test]
    fn stationary_at_goal_scores_saturated_clearance() {
        let s = Scene::new(PointMassState::at_rest([0.0, 0.0]), [0.0, 0.0], vec![], 2.0).unwrap();
        let t = line_traj([0.0, 0.0], [0.0, 0.0], 4);
        let w = ScoreParams::default();
        assert_eq!(score_geometry(&t, &s, &w), w.kappa_c * w.c_sat);
    }

    #[test]
    fn side_classification() {
        let o = Obstacle { center: [0.0, 0.0], radius: 0.3 };
        let up = [[-1.0, 0.0], [0.0, 0.5], [1.0, 0.0]];
        let down = [[-1.0, 0.0], [0.0, -0.5], [1.0, 0.0]];
        assert_eq!(pass_side(&up, [-1.0, 0.0], [1.0, 0.0], &o), Side::Left);
        assert_eq!(pass_side(&down, [-1.0, 0.0], [1.0, 0.0], &o), Side::Right);
    }
}
