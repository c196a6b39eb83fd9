#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct PointMassState {
    pub pos: [f64; 2],
    pub vel: [f64; 2],
}

impl PointMassState {
    pub fn at_rest(pos: [f64; 2]) -> Self {
        Self { pos, vel: [0.0; 2] }
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.pos[0], self.pos[1], self.vel[0], self.vel[1]]
    }

    pub fn from_slice(s: &[f64]) -> Self {
        Self {
            pos: [s[0], s[1]],
            vel: [s[2], s[3]],
        }
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct Action {
    pub acc: [f64; 2],
}

impl Action {
    pub fn new(ax: f64, ay: f64) -> Self {
        Self { acc: [ax, ay] }
    }

    pub fn clipped(&self, a_max: f64) -> Self {
        // NaN maps to zero so a malformed command cannot poison the state.
        let c = |v: f64| if v.is_nan() { 0.0 } else { v.clamp(-a_max, a_max) };
        Self {
            acc: [c(self.acc[0]), c(self.acc[1])],
        }
    }

    pub fn norm_sq(&self) -> f64 {
        self.acc[0] * self.acc[0] + self.acc[1] * self.acc[1]
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PlantParams {
    pub dt: f64,
    pub damping: f64,
    pub a_max: f64,
    pub v_max: f64,
}

impl Default for PlantParams {
    fn default() -> Self {
        Self {
            dt: 0.1,
            damping: 0.1,
            a_max: 1.0,
            v_max: 2.0,
        }
    }
}

impl PlantParams {
    /// Euclidean Lipschitz constant of [`step`] in the state for a fixed action.
    pub fn lipschitz_bound(&self) -> f64 {
        1.0 + self.dt
    }
}

/// One Euler step of the damped double integrator. The position advances
/// with the old velocity; the new velocity is speed-clipped to `v_max`.
pub fn step(state: &PointMassState, action: &Action, p: &PlantParams) -> PointMassState {
    let a = action.clipped(p.a_max);
    let keep = 1.0 - p.damping * p.dt;
    let pos = [
        state.pos[0] + state.vel[0] * p.dt,
        state.pos[1] + state.vel[1] * p.dt,
    ];
    let mut vel = [
        keep * state.vel[0] + a.acc[0] * p.dt,
        keep * state.vel[1] + a.acc[1] * p.dt,
    ];
    let speed = vel[0].hypot(vel[1]);
    if speed > p.v_max {
        let s = p.v_max / speed;
        vel = [vel[0] * s, vel[1] * s];
    }
    PointMassState { pos, vel }
}
