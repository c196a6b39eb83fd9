//! Scripted expert: tangent-waypoint detours, cubic B-spline smoothing,
//! trapezoidal timing and a feed-forward tracking controller.

use super::geometry::{point_segment_distance, Side};
use super::plant::{step, Action, PlantParams, PointMassState};
use super::scene::{Obstacle, Scene};
use super::trajectory::Trajectory;
use crate::error::{DnkError, Result};
use crate::numkit::Rng64;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PlannerParams {
    /// Obstacle inflation used when routing.
    pub delta_safe: f64,
    /// Target spacing of B-spline control points along the path (m).
    pub spacing: f64,
    pub cruise_speed: f64,
    pub accel: f64,
    /// Maximum angle covered by one polygon edge around an obstacle (rad).
    pub arc_step: f64,
    /// Extra steps appended after the reference reaches the goal.
    pub hold_steps: usize,
    pub wall_margin: f64,
    pub max_detours: usize,
    pub kp: f64,
    pub kd: f64,
}

impl Default for PlannerParams {
    fn default() -> Self {
        Self {
            delta_safe: 0.15,
            spacing: 0.1,
            cruise_speed: 1.0,
            accel: 0.7,
            arc_step: 0.25,
            hold_steps: 15,
            wall_margin: 0.05,
            max_detours: 16,
            kp: 4.0,
            kd: 4.0,
        }
    }
}

/// A full expert execution from a start state, at least `min_steps` long.
#[derive(Clone, Debug)]
pub struct ExpertPlan {
    /// `states[k]` is the state before `actions[k]`; one more state than actions.
    pub states: Vec<PointMassState>,
    pub actions: Vec<Action>,
    pub waypoints: Vec<[f64; 2]>,
    /// Detour side taken for each inserted detour, relative to the segment it replaced.
    pub sides: Vec<Side>,
}

impl ExpertPlan {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    /// `h` consecutive steps starting at `offset`.
    pub fn window(&self, offset: usize, h: usize) -> Result<Trajectory> {
        if offset + h > self.len() {
            return Err(DnkError::InvalidArgument(format!(
                "window {offset}+{h} exceeds plan length {}",
                self.len()
            )));
        }
        let steps: Vec<_> = (offset..offset + h)
            .map(|k| (self.states[k], self.actions[k]))
            .collect();
        Trajectory::from_steps(&steps)
    }

    pub fn positions(&self) -> Vec<[f64; 2]> {
        self.states.iter().map(|s| s.pos).collect()
    }

    pub fn clearance(&self, scene: &Scene) -> f64 {
        self.states
            .iter()
            .map(|s| scene.point_clearance(s.pos))
            .fold(f64::INFINITY, f64::min)
    }
}

/// First `h` steps of an expert plan from `start`.
pub fn expert_plan(
    scene: &Scene,
    start: &PointMassState,
    h: usize,
    plant: &PlantParams,
    params: &PlannerParams,
    rng: &mut Rng64,
) -> Result<Trajectory> {
    plan_full(scene, start, h, plant, params, rng)?.window(0, h)
}

pub fn plan_full(
    scene: &Scene,
    start: &PointMassState,
    min_steps: usize,
    plant: &PlantParams,
    params: &PlannerParams,
    rng: &mut Rng64,
) -> Result<ExpertPlan> {
    if !start.is_finite() {
        return Err(DnkError::Planner("start state is not finite".into()));
    }
    let (waypoints, sides) = route(scene, start.pos, params, rng)?;
    let ctrl = resample_polyline(&waypoints, params.spacing);
    let spline = BSpline::new(ctrl);
    let table = ArcTable::new(&spline);

    let tangent = spline.start_direction();
    let v_along = start.vel[0] * tangent[0] + start.vel[1] * tangent[1];
    let profile = SpeedProfile::new(table.total(), v_along.max(0.0), params.cruise_speed, params.accel);
    let n_ref = (profile.duration() / plant.dt).ceil() as usize;
    let total = (n_ref + params.hold_steps).max(min_steps);

    let refs: Vec<[f64; 2]> = (0..total + 2)
        .map(|k| spline.eval(table.param_at(profile.distance_at(k as f64 * plant.dt))))
        .collect();
    let keep = 1.0 - plant.damping * plant.dt;
    let vref = |k: usize| {
        [
            (refs[k + 1][0] - refs[k][0]) / plant.dt,
            (refs[k + 1][1] - refs[k][1]) / plant.dt,
        ]
    };

    let mut states = Vec::with_capacity(total + 1);
    let mut actions = Vec::with_capacity(total);
    states.push(*start);
    for k in 0..total {
        let s = states[k];
        let (v0, v1) = (vref(k), vref(k + 1));
        let mut acc = [0.0; 2];
        for d in 0..2 {
            let ff = (v1[d] - keep * v0[d]) / plant.dt;
            acc[d] = ff + params.kp * (refs[k][d] - s.pos[d]) + params.kd * (v0[d] - s.vel[d]);
        }
        let a = Action { acc }.clipped(plant.a_max);
        states.push(step(&s, &a, plant));
        actions.push(a);
    }
    if states.iter().any(|s| !s.is_finite()) {
        return Err(DnkError::Planner("tracking produced a non-finite state".into()));
    }
    Ok(ExpertPlan {
        states,
        actions,
        waypoints,
        sides,
    })
}

/// Piecewise-linear route from `start` to the scene goal that keeps every
/// segment outside the inflated obstacles.
pub fn route(
    scene: &Scene,
    start: [f64; 2],
    params: &PlannerParams,
    rng: &mut Rng64,
) -> Result<(Vec<[f64; 2]>, Vec<Side>)> {
    let goal = scene.goal;
    // Inflation shrinks near an endpoint that already sits inside the
    // inflated disc, but never below the true radius.
    let mut radii = Vec::with_capacity(scene.obstacles.len());
    for o in &scene.obstacles {
        let near = o.distance(start).min(o.distance(goal)) + o.radius;
        let r = (o.radius + params.delta_safe).min(0.98 * near);
        if r <= o.radius {
            return Err(DnkError::Planner("start or goal is inside an obstacle".into()));
        }
        radii.push(r);
    }

    let mut path = vec![start, goal];
    let mut sides = Vec::new();
    for _ in 0..=params.max_detours {
        let Some((seg, j)) = first_hit(&path, &scene.obstacles, &radii) else {
            return Ok((path, sides));
        };
        if sides.len() == params.max_detours {
            break;
        }
        let (a, b) = (path[seg], path[seg + 1]);
        let feasible = |pts: &Vec<[f64; 2]>| {
            pts.iter().all(|p| {
                p[0].abs() <= scene.bound - params.wall_margin
                    && p[1].abs() <= scene.bound - params.wall_margin
                    && scene
                        .obstacles
                        .iter()
                        .zip(&radii)
                        .enumerate()
                        .all(|(k, (o, r))| k == j || dist(*p, o.center) >= *r)
            })
        };
        let obs = &scene.obstacles[j];
        let left = detour(a, b, obs, radii[j], Side::Left, params.arc_step).filter(feasible);
        let right = detour(a, b, obs, radii[j], Side::Right, params.arc_step).filter(feasible);
        let (pts, side) = match (left, right) {
            (Some(l), Some(r)) => {
                if rng.bernoulli(0.5) {
                    (l, Side::Left)
                } else {
                    (r, Side::Right)
                }
            }
            (Some(l), None) => (l, Side::Left),
            (None, Some(r)) => (r, Side::Right),
            (None, None) => {
                return Err(DnkError::Planner(format!("no feasible detour around obstacle {j}")));
            }
        };
        path.splice(seg + 1..seg + 1, pts);
        sides.push(side);
    }
    Err(DnkError::Planner("detour budget exhausted".into()))
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

// Earliest segment crossing an inflated obstacle; within a segment, the
// obstacle met first along its direction.
fn first_hit(path: &[[f64; 2]], obstacles: &[Obstacle], radii: &[f64]) -> Option<(usize, usize)> {
    for (i, w) in path.windows(2).enumerate() {
        let (a, b) = (w[0], w[1]);
        let d = [b[0] - a[0], b[1] - a[1]];
        let mut best: Option<(f64, usize)> = None;
        for (j, (o, r)) in obstacles.iter().zip(radii).enumerate() {
            if point_segment_distance(a, b, o.center) < r - 1e-9 {
                let t = (o.center[0] - a[0]) * d[0] + (o.center[1] - a[1]) * d[1];
                if best.map_or(true, |(bt, _)| t < bt) {
                    best = Some((t, j));
                }
            }
        }
        if let Some((_, j)) = best {
            return Some((i, j));
        }
    }
    None
}

/// Waypoints wrapping the disc `(obs.center, r)` on one side of `a -> b`:
/// the vertices of a polygon circumscribed about the arc between the two
/// tangent points, so every edge stays outside the disc.
fn detour(a: [f64; 2], b: [f64; 2], obs: &Obstacle, r: f64, side: Side, arc_step: f64) -> Option<Vec<[f64; 2]>> {
    let len = dist(a, b);
    if len == 0.0 {
        return None;
    }
    let u = [(b[0] - a[0]) / len, (b[1] - a[1]) / len];
    let n = match side {
        Side::Left => [-u[1], u[0]],
        Side::Right => [u[1], -u[0]],
    };
    let c = obs.center;
    let local = |p: [f64; 2]| {
        let w = [p[0] - c[0], p[1] - c[1]];
        (w[0] * u[0] + w[1] * u[1], w[0] * n[0] + w[1] * n[1])
    };
    let tangent_angle = |p: [f64; 2]| -> Option<f64> {
        let (x, y) = local(p);
        let d = x.hypot(y);
        if d <= r {
            return None;
        }
        let phi = y.atan2(x);
        let alpha = (r / d).acos();
        let (t1, t2) = (phi + alpha, phi - alpha);
        let pick = if t1.sin() >= t2.sin() { t1 } else { t2 };
        Some(pick.sin().atan2(pick.cos()))
    };
    let ta = tangent_angle(a)?;
    let tb = tangent_angle(b)?;
    let sweep = (ta - tb).max(0.0);
    let m = ((sweep / arc_step).ceil() as usize).max(1);
    let delta = sweep / m as f64;
    let rho = r / (0.5 * delta).cos();
    let pts = (0..m)
        .map(|j| {
            let th = ta - (j as f64 + 0.5) * delta;
            let (ct, st) = (th.cos(), th.sin());
            [
                c[0] + rho * (ct * u[0] + st * n[0]),
                c[1] + rho * (ct * u[1] + st * n[1]),
            ]
        })
        .collect();
    Some(pts)
}

/// Points spaced evenly (at most `spacing` apart) along a polyline,
/// including both endpoints; at least four points.
pub fn resample_polyline(path: &[[f64; 2]], spacing: f64) -> Vec<[f64; 2]> {
    let seg_len: Vec<f64> = path.windows(2).map(|w| dist(w[0], w[1])).collect();
    let total: f64 = seg_len.iter().sum();
    let m = ((total / spacing).ceil() as usize).max(3);
    let mut out = Vec::with_capacity(m + 1);
    let mut seg = 0;
    let mut acc = 0.0;
    for j in 0..=m {
        let s = total * j as f64 / m as f64;
        while seg + 1 < seg_len.len() && acc + seg_len[seg] < s {
            acc += seg_len[seg];
            seg += 1;
        }
        let (a, b) = (path[seg], path[(seg + 1).min(path.len() - 1)]);
        let t = if seg_len.is_empty() || seg_len[seg] == 0.0 {
            0.0
        } else {
            ((s - acc) / seg_len[seg]).clamp(0.0, 1.0)
        };
        out.push([a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])]);
    }
    *out.last_mut().expect("m >= 3") = *path.last().expect("non-empty path");
    out
}

/// Clamped uniform cubic B-spline evaluated by de Boor's recursion.
#[derive(Clone, Debug)]
pub struct BSpline {
    ctrl: Vec<[f64; 2]>,
    knots: Vec<f64>,
}

impl BSpline {
    /// Needs at least four control points.
    pub fn new(ctrl: Vec<[f64; 2]>) -> Self {
        assert!(ctrl.len() >= 4, "cubic B-spline needs 4 control points");
        let n = ctrl.len();
        let inner = (n - 3) as f64;
        let knots = (0..n + 4)
            .map(|i| ((i as f64) - 3.0).clamp(0.0, inner))
            .collect();
        Self { ctrl, knots }
    }

    /// Parameter domain is `[0, domain_end]`.
    pub fn domain_end(&self) -> f64 {
        (self.ctrl.len() - 3) as f64
    }

    pub fn eval(&self, u: f64) -> [f64; 2] {
        const P: usize = 3;
        let n = self.ctrl.len();
        let u = u.clamp(0.0, self.domain_end());
        let mut k = P;
        while k + 1 < n && self.knots[k + 1] <= u {
            k += 1;
        }
        let mut d: [[f64; 2]; P + 1] = [[0.0; 2]; P + 1];
        for (j, dj) in d.iter_mut().enumerate() {
            *dj = self.ctrl[j + k - P];
        }
        for r in 1..=P {
            for j in (r..=P).rev() {
                let lo = self.knots[j + k - P];
                let hi = self.knots[j + 1 + k - r];
                let alpha = if hi > lo { (u - lo) / (hi - lo) } else { 0.0 };
                for c in 0..2 {
                    d[j][c] = (1.0 - alpha) * d[j - 1][c] + alpha * d[j][c];
                }
            }
        }
        d[P]
    }

    /// Unit direction of the curve at its start (towards the goal if the
    /// curve is degenerate).
    pub fn start_direction(&self) -> [f64; 2] {
        let a = self.ctrl[0];
        for q in &self.ctrl[1..] {
            let l = dist(a, *q);
            if l > 1e-12 {
                return [(q[0] - a[0]) / l, (q[1] - a[1]) / l];
            }
        }
        [0.0, 0.0]
    }
}

/// Cumulative chord-length table for arc-length reparameterisation.
#[derive(Clone, Debug)]
pub struct ArcTable {
    us: Vec<f64>,
    cum: Vec<f64>,
}

impl ArcTable {
    pub fn new(spline: &BSpline) -> Self {
        let samples = 16 * spline.domain_end() as usize + 1;
        let us: Vec<f64> = (0..samples)
            .map(|i| spline.domain_end() * i as f64 / (samples - 1) as f64)
            .collect();
        let mut cum = Vec::with_capacity(samples);
        let mut prev = spline.eval(0.0);
        let mut acc = 0.0;
        for &u in &us {
            let p = spline.eval(u);
            acc += dist(prev, p);
            cum.push(acc);
            prev = p;
        }
        Self { us, cum }
    }

    pub fn total(&self) -> f64 {
        *self.cum.last().expect("non-empty table")
    }

    /// Spline parameter at arc length `s` (clamped to the curve).
    pub fn param_at(&self, s: f64) -> f64 {
        if s <= 0.0 {
            return 0.0;
        }
        if s >= self.total() {
            return *self.us.last().expect("non-empty table");
        }
        let i = self.cum.partition_point(|&c| c < s).max(1);
        let (c0, c1) = (self.cum[i - 1], self.cum[i]);
        let t = if c1 > c0 { (s - c0) / (c1 - c0) } else { 0.0 };
        self.us[i - 1] + t * (self.us[i] - self.us[i - 1])
    }
}

/// Trapezoidal (or triangular) speed profile covering `length` from an
/// initial speed down to rest.
#[derive(Clone, Copy, Debug)]
pub struct SpeedProfile {
    v0: f64,
    vp: f64,
    acc: f64,
    dec: f64,
    t1: f64,
    t2: f64,
    t3: f64,
    d1: f64,
    d2: f64,
    length: f64,
}

impl SpeedProfile {
    pub fn new(length: f64, v_start: f64, cruise: f64, accel: f64) -> Self {
        let v0 = v_start.min(cruise);
        if length <= 0.0 {
            return Self { v0: 0.0, vp: 0.0, acc: accel, dec: accel, t1: 0.0, t2: 0.0, t3: 0.0, d1: 0.0, d2: 0.0, length: 0.0 };
        }
        // Too fast to stop in time: brake harder over the whole length.
        if v0 * v0 / (2.0 * accel) >= length {
            let dec = v0 * v0 / (2.0 * length);
            return Self { v0, vp: v0, acc: accel, dec, t1: 0.0, t2: 0.0, t3: v0 / dec, d1: 0.0, d2: 0.0, length };
        }
        let vp = cruise.min(((2.0 * accel * length + v0 * v0) / 2.0).sqrt()).max(v0);
        let d1 = (vp * vp - v0 * v0) / (2.0 * accel);
        let d3 = vp * vp / (2.0 * accel);
        let d2 = (length - d1 - d3).max(0.0);
        Self {
            v0,
            vp,
            acc: accel,
            dec: accel,
            t1: (vp - v0) / accel,
            t2: if vp > 0.0 { d2 / vp } else { 0.0 },
            t3: vp / accel,
            d1,
            d2,
            length,
        }
    }

    pub fn duration(&self) -> f64 {
        self.t1 + self.t2 + self.t3
    }

    pub fn distance_at(&self, t: f64) -> f64 {
        if t <= 0.0 {
            return 0.0;
        }
        if t < self.t1 {
            return self.v0 * t + 0.5 * self.acc * t * t;
        }
        let t = t - self.t1;
        if t < self.t2 {
            return self.d1 + self.vp * t;
        }
        let t = t - self.t2;
        if t < self.t3 {
            return (self.d1 + self.d2 + self.vp * t - 0.5 * self.dec * t * t).min(self.length);
        }
        self.length
    }
}
