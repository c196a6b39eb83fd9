use super::plant::PointMassState;
use super::K_OBS;
use crate::error::{DnkError, Result};
use crate::numkit::Rng64;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Obstacle {
    pub center: [f64; 2],
    pub radius: f64,
}

impl Obstacle {
    /// Signed distance from `p` to the obstacle surface.
    pub fn distance(&self, p: [f64; 2]) -> f64 {
        (p[0] - self.center[0]).hypot(p[1] - self.center[1]) - self.radius
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Scene {
    pub start: PointMassState,
    pub goal: [f64; 2],
    pub obstacles: Vec<Obstacle>,
    /// Half-width of the square workspace `[-bound, bound]^2`.
    pub bound: f64,
}

impl Scene {
    pub fn new(start: PointMassState, goal: [f64; 2], obstacles: Vec<Obstacle>, bound: f64) -> Result<Self> {
        if obstacles.len() > K_OBS {
            return Err(DnkError::InvalidArgument(format!(
                "{} obstacles exceeds the maximum of {K_OBS}",
                obstacles.len()
            )));
        }
        for o in &obstacles {
            if !(o.radius > 0.0) {
                return Err(DnkError::InvalidArgument(format!("obstacle radius {} must be positive", o.radius)));
            }
            if o.distance(start.pos) <= 0.0 || o.distance(goal) <= 0.0 {
                return Err(DnkError::InvalidArgument("start or goal lies inside an obstacle".into()));
            }
        }
        Ok(Self {
            start,
            goal,
            obstacles,
            bound,
        })
    }

    /// Signed distance from `p` to the nearest obstacle, or to the workspace
    /// boundary when there are no obstacles.
    pub fn point_clearance(&self, p: [f64; 2]) -> f64 {
        if self.obstacles.is_empty() {
            (self.bound - p[0].abs()).min(self.bound - p[1].abs())
        } else {
            self.obstacles
                .iter()
                .map(|o| o.distance(p))
                .fold(f64::INFINITY, f64::min)
        }
    }

    pub fn in_collision(&self, p: [f64; 2]) -> bool {
        self.obstacles.iter().any(|o| o.distance(p) <= 0.0)
    }

    pub fn in_workspace(&self, p: [f64; 2]) -> bool {
        p[0].abs() <= self.bound && p[1].abs() <= self.bound
    }
}

/// Which scene distribution to draw from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SceneFamily {
    /// General goal reaching with a blocking obstacle (with probability
    /// `p_blocking`) and random distractors.
    Navigation,
    /// A single obstacle centred on the start-goal segment with room on both
    /// sides, so left and right detours are equally valid.
    Bimodal,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SceneParams {
    pub bound: f64,
    /// Starts and goals are drawn from `[-region, region]^2`.
    pub region: f64,
    pub min_start_goal: f64,
    pub p_blocking: f64,
    pub max_extra: usize,
    pub blocking_radius: (f64, f64),
    pub extra_radius: (f64, f64),
    pub blocking_offset: f64,
    pub start_speed_max: f64,
    /// Required free space around starts and goals beyond the inflated radius.
    pub endpoint_margin: f64,
    /// Obstacle inflation used by the planner; scenes keep inflated obstacles apart.
    pub delta_safe: f64,
}

impl Default for SceneParams {
    fn default() -> Self {
        Self {
            bound: 2.0,
            region: 1.7,
            min_start_goal: 2.0,
            p_blocking: 0.8,
            max_extra: 2,
            blocking_radius: (0.25, 0.4),
            extra_radius: (0.15, 0.3),
            blocking_offset: 0.15,
            start_speed_max: 0.5,
            endpoint_margin: 0.1,
            delta_safe: 0.15,
        }
    }
}

impl SceneParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(DnkError::InvalidArgument(m.to_string()));
        if !(self.bound > 0.0 && self.region > 0.0 && self.region < self.bound) {
            return bad("scene region must lie inside the workspace");
        }
        if !(self.min_start_goal > 0.0 && self.min_start_goal < 2.0 * std::f64::consts::SQRT_2 * self.region) {
            return bad("min_start_goal is not attainable inside the region");
        }
        if !(0.0..=1.0).contains(&self.p_blocking) {
            return bad("p_blocking must be a probability");
        }
        if self.max_extra + 1 > K_OBS {
            return bad("max_extra + 1 exceeds the obstacle capacity");
        }
        for (lo, hi) in [self.blocking_radius, self.extra_radius] {
            if !(lo > 0.0 && lo <= hi) {
                return bad("radius ranges must satisfy 0 < lo <= hi");
            }
        }
        if self.start_speed_max < 0.0 || self.delta_safe < 0.0 || self.endpoint_margin < 0.0 {
            return bad("speeds and margins must be non-negative");
        }
        Ok(())
    }
}

const MAX_SCENE_TRIES: usize = 10_000;

pub fn sample_scene(params: &SceneParams, family: SceneFamily, rng: &mut Rng64) -> Result<Scene> {
    params.validate()?;
    for _ in 0..MAX_SCENE_TRIES {
        if let Some(s) = try_scene(params, family, rng) {
            return Ok(s);
        }
    }
    Err(DnkError::InvalidArgument("scene parameters admit no valid scene".into()))
}

fn try_scene(p: &SceneParams, family: SceneFamily, rng: &mut Rng64) -> Option<Scene> {
    let (start, goal) = match family {
        SceneFamily::Navigation => {
            let r = p.region;
            let s = [rng.uniform_range(-r, r), rng.uniform_range(-r, r)];
            let g = [rng.uniform_range(-r, r), rng.uniform_range(-r, r)];
            (s, g)
        }
        SceneFamily::Bimodal => {
            // Left-to-right crossing, randomly mirrored, near the centre line.
            let s = [rng.uniform_range(-1.6, -1.2), rng.uniform_range(-0.6, 0.6)];
            let g = [rng.uniform_range(1.2, 1.6), rng.uniform_range(-0.6, 0.6)];
            if rng.bernoulli(0.5) {
                (g, s)
            } else {
                (s, g)
            }
        }
    };
    let seg = [goal[0] - start[0], goal[1] - start[1]];
    let len = seg[0].hypot(seg[1]);
    if len < p.min_start_goal {
        return None;
    }
    let u = [seg[0] / len, seg[1] / len];
    let n = [-u[1], u[0]];

    let mut obstacles = Vec::new();
    let blocking = match family {
        SceneFamily::Bimodal => true,
        SceneFamily::Navigation => rng.bernoulli(p.p_blocking),
    };
    if blocking {
        let (t, off, radius) = match family {
            SceneFamily::Bimodal => (
                rng.uniform_range(0.4, 0.6),
                rng.uniform_range(-0.03, 0.03),
                rng.uniform_range(0.3, 0.4),
            ),
            SceneFamily::Navigation => (
                rng.uniform_range(0.3, 0.7),
                rng.uniform_range(-p.blocking_offset, p.blocking_offset),
                rng.uniform_range(p.blocking_radius.0, p.blocking_radius.1),
            ),
        };
        let center = [
            start[0] + t * seg[0] + off * n[0],
            start[1] + t * seg[1] + off * n[1],
        ];
        obstacles.push(Obstacle { center, radius });
    }
    if family == SceneFamily::Navigation {
        let extra = rng.below(p.max_extra + 1);
        for _ in 0..extra {
            let r = p.bound - 0.2;
            obstacles.push(Obstacle {
                center: [rng.uniform_range(-r, r), rng.uniform_range(-r, r)],
                radius: rng.uniform_range(p.extra_radius.0, p.extra_radius.1),
            });
        }
    }

    let inflated = |o: &Obstacle| o.radius + p.delta_safe;
    for (i, o) in obstacles.iter().enumerate() {
        for q in [start, goal] {
            if o.distance(q) < p.delta_safe + p.endpoint_margin {
                return None;
            }
        }
        // keep room for a detour between the obstacle and the wall
        let reach = o.center[0].abs().max(o.center[1].abs()) + inflated(o);
        if reach > p.bound - 0.05 && family == SceneFamily::Bimodal {
            return None;
        }
        if o.center[0].abs() + o.radius > p.bound || o.center[1].abs() + o.radius > p.bound {
            return None;
        }
        for other in &obstacles[..i] {
            let d = (o.center[0] - other.center[0]).hypot(o.center[1] - other.center[1]);
            if d < inflated(o) + inflated(other) + 0.1 {
                return None;
            }
        }
    }

    let speed = rng.uniform_range(0.0, p.start_speed_max);
    let angle = rng.uniform_range(-std::f64::consts::PI, std::f64::consts::PI);
    let vel = if family == SceneFamily::Bimodal {
        [0.0, 0.0]
    } else {
        [speed * angle.cos(), speed * angle.sin()]
    };
    Scene::new(PointMassState { pos: start, vel }, goal, obstacles, p.bound).ok()
}
