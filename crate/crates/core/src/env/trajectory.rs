use super::plant::{Action, PointMassState};
use super::scene::Scene;
use super::{CTX_DIM, K_OBS, STATE_DIM, STEP_DIM};
use crate::error::{DnkError, Result};

/// Divisors mapping one physical `(state, action)` block to unit scale.
/// Powers of two, so normalising and de-normalising are exact.
pub const STEP_SCALE: [f64; STEP_DIM] = [2.0, 2.0, 2.0, 2.0, 1.0, 1.0];
/// Divisor for lengths (positions, goal, obstacle geometry) in the context.
pub const LENGTH_SCALE: f64 = 2.0;

/// `H` steps of `(state, action)` stored flat as `H x (m + n)`, states
/// first within each step. Values are in physical units.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    horizon: usize,
    data: Vec<f64>,
}

impl Trajectory {
    pub fn zeros(horizon: usize) -> Self {
        Self {
            horizon,
            data: vec![0.0; horizon * STEP_DIM],
        }
    }

    pub fn from_flat(horizon: usize, data: Vec<f64>) -> Result<Self> {
        if horizon == 0 {
            return Err(DnkError::InvalidArgument("horizon must be positive".into()));
        }
        if data.len() != horizon * STEP_DIM {
            return Err(DnkError::dim("Trajectory::from_flat", horizon * STEP_DIM, data.len()));
        }
        Ok(Self { horizon, data })
    }

    pub fn from_steps(steps: &[(PointMassState, Action)]) -> Result<Self> {
        let mut t = Self::zeros(steps.len());
        if steps.is_empty() {
            return Err(DnkError::Empty("Trajectory::from_steps"));
        }
        for (k, (s, a)) in steps.iter().enumerate() {
            t.set_step(k, s, a);
        }
        Ok(t)
    }

    pub fn to_steps(&self) -> Vec<(PointMassState, Action)> {
        (0..self.horizon).map(|k| (self.state(k), self.action(k))).collect()
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn flat(&self) -> &[f64] {
        &self.data
    }

    pub fn into_flat(self) -> Vec<f64> {
        self.data
    }

    pub fn state(&self, k: usize) -> PointMassState {
        PointMassState::from_slice(&self.data[k * STEP_DIM..k * STEP_DIM + STATE_DIM])
    }

    pub fn action(&self, k: usize) -> Action {
        let o = k * STEP_DIM + STATE_DIM;
        Action::new(self.data[o], self.data[o + 1])
    }

    pub fn position(&self, k: usize) -> [f64; 2] {
        [self.data[k * STEP_DIM], self.data[k * STEP_DIM + 1]]
    }

    pub fn positions(&self) -> impl Iterator<Item = [f64; 2]> + '_ {
        (0..self.horizon).map(move |k| self.position(k))
    }

    pub fn set_step(&mut self, k: usize, s: &PointMassState, a: &Action) {
        let o = k * STEP_DIM;
        self.data[o..o + STATE_DIM].copy_from_slice(&s.to_array());
        self.data[o + STATE_DIM..o + STEP_DIM].copy_from_slice(&a.acc);
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Unit-scale flat vector used by the networks.
    pub fn to_normalized(&self) -> Vec<f64> {
        self.data
            .iter()
            .enumerate()
            .map(|(i, v)| v / STEP_SCALE[i % STEP_DIM])
            .collect()
    }

    pub fn from_normalized(horizon: usize, v: &[f64]) -> Result<Self> {
        if v.len() != horizon * STEP_DIM {
            return Err(DnkError::dim("Trajectory::from_normalized", horizon * STEP_DIM, v.len()));
        }
        let data = v
            .iter()
            .enumerate()
            .map(|(i, x)| x * STEP_SCALE[i % STEP_DIM])
            .collect();
        Self::from_flat(horizon, data)
    }
}

/// Flat index range of the action block of step `k`.
pub fn action_range(k: usize) -> std::ops::Range<usize> {
    k * STEP_DIM + STATE_DIM..(k + 1) * STEP_DIM
}

/// Normalised first-state block; these are the entries held fixed by
/// conditioning.
pub fn normalized_state(s: &PointMassState) -> [f64; STATE_DIM] {
    let a = s.to_array();
    [a[0] / STEP_SCALE[0], a[1] / STEP_SCALE[1], a[2] / STEP_SCALE[2], a[3] / STEP_SCALE[3]]
}

/// Observation and task description fed to every network.
#[derive(Clone, Debug, PartialEq)]
pub struct Context {
    pub state: PointMassState,
    pub goal: [f64; 2],
    /// `(center_x, center_y, radius)` per obstacle, zero-padded to `K_OBS`.
    pub obstacles: [[f64; 3]; K_OBS],
}

impl Context {
    pub fn new(state: PointMassState, scene: &Scene) -> Self {
        let mut obstacles = [[0.0; 3]; K_OBS];
        for (slot, o) in obstacles.iter_mut().zip(&scene.obstacles) {
            *slot = [o.center[0], o.center[1], o.radius];
        }
        Self {
            state,
            goal: scene.goal,
            obstacles,
        }
    }

    /// Normalised feature vector of length `CTX_DIM`.
    pub fn to_vector(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(CTX_DIM);
        v.extend_from_slice(&normalized_state(&self.state));
        v.push(self.goal[0] / LENGTH_SCALE);
        v.push(self.goal[1] / LENGTH_SCALE);
        for o in &self.obstacles {
            v.extend(o.iter().map(|x| x / LENGTH_SCALE));
        }
        debug_assert_eq!(v.len(), CTX_DIM);
        v
    }

    pub fn from_vector(v: &[f64]) -> Result<Self> {
        if v.len() != CTX_DIM {
            return Err(DnkError::dim("Context::from_vector", CTX_DIM, v.len()));
        }
        let state = PointMassState::from_slice(&[
            v[0] * STEP_SCALE[0],
            v[1] * STEP_SCALE[1],
            v[2] * STEP_SCALE[2],
            v[3] * STEP_SCALE[3],
        ]);
        let goal = [v[4] * LENGTH_SCALE, v[5] * LENGTH_SCALE];
        let mut obstacles = [[0.0; 3]; K_OBS];
        for (j, o) in obstacles.iter_mut().enumerate() {
            for (c, x) in o.iter_mut().enumerate() {
                *x = v[6 + 3 * j + c] * LENGTH_SCALE;
            }
        }
        Ok(Self {
            state,
            goal,
            obstacles,
        })
    }
}
