use crate::env::{normalized_state, Context, STATE_DIM, STEP_DIM};
use crate::error::{DnkError, Result};
use crate::numkit::Rng64;

/// Number of leading trajectory entries fixed by conditioning (the first
/// state block).
pub const FIXED_LEN: usize = STATE_DIM;

/// Trajectory-shaped starting noise with the first state block pinned to
/// the observed state. All values are in normalised units.
#[derive(Clone, Debug, PartialEq)]
pub struct ConditionedPrior {
    pub values: Vec<f64>,
    pub fixed_mask: Vec<bool>,
    /// Normalised context features (see [`Context::to_vector`]).
    pub context: Vec<f64>,
    pub lambda: f64,
}

impl ConditionedPrior {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Overwrites the fixed entries of `x` with this prior's values.
    pub fn impose(&self, x: &mut [f64]) {
        for ((v, &m), p) in x.iter_mut().zip(&self.fixed_mask).zip(&self.values) {
            if m {
                *v = *p;
            }
        }
    }
}

pub fn fixed_mask(horizon: usize) -> Vec<bool> {
    (0..horizon * STEP_DIM).map(|i| i < FIXED_LEN).collect()
}

/// Draws `lambda * xi` for the free entries and pins the first state block.
pub fn make_conditioned_prior(ctx: &Context, lambda: f64, horizon: usize, rng: &mut Rng64) -> Result<ConditionedPrior> {
    if !(lambda > 0.0) {
        return Err(DnkError::InvalidArgument(format!("temperature must be positive, got {lambda}")));
    }
    let d = horizon * STEP_DIM;
    let s = normalized_state(&ctx.state);
    let values = (0..d)
        .map(|i| if i < FIXED_LEN { s[i] } else { lambda * rng.normal() })
        .collect();
    Ok(ConditionedPrior {
        values,
        fixed_mask: fixed_mask(horizon),
        context: ctx.to_vector(),
        lambda,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{PointMassState, Scene};

    fn ctx() -> Context {
        let scene = Scene::new(PointMassState { pos: [-1.0, 0.3], vel: [0.1, 0.2] }, [1.0, 0.0], vec![], 2.0).unwrap();
        Context::new(scene.start, &scene)
    }

    #[test]
    fn fixed_entries_match_state() {
        let p = make_conditioned_prior(&ctx(), 0.5, 16, &mut Rng64::seeded(0, 0)).unwrap();
        assert_eq!(&p.values[..FIXED_LEN], &normalized_state(&ctx().state));
        assert_eq!(p.fixed_mask.iter().filter(|m| **m).count(), FIXED_LEN);
        assert_eq!(p.len(), 16 * STEP_DIM);
    }

    #[test]
    fn temperature_scales_spread() {
        let c = ctx();
        let mut rng = Rng64::seeded(4, 0);
        let mut xs = Vec::with_capacity(100_000);
        while xs.len() < 100_000 {
            let p = make_conditioned_prior(&c, 0.5, 16, &mut rng).unwrap();
            xs.extend_from_slice(&p.values[FIXED_LEN..]);
        }
        xs.truncate(100_000);
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let sd = (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
        assert!((0.49..=0.51).contains(&sd), "sd {sd}");
    }

    #[test]
    fn same_seed_same_prior() {
        let a = make_conditioned_prior(&ctx(), 0.7, 8, &mut Rng64::seeded(9, 2)).unwrap();
        let b = make_conditioned_prior(&ctx(), 0.7, 8, &mut Rng64::seeded(9, 2)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn non_positive_temperature_is_rejected() {
        assert!(make_conditioned_prior(&ctx(), 0.0, 8, &mut Rng64::seeded(0, 0)).is_err());
    }
}
