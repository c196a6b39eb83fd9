use crate::error::{DnkError, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 3e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Bias-corrected adaptive-moment optimizer over a list of parameter blocks.
#[derive(Clone, Debug)]
pub struct AdamState {
    pub config: AdamConfig,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: u64,
}

impl AdamState {
    /// Creates zeroed moments shaped like `block_lens`.
    pub fn new(config: AdamConfig, block_lens: &[usize]) -> Self {
        Self {
            config,
            m: block_lens.iter().map(|&n| vec![0.0; n]).collect(),
            v: block_lens.iter().map(|&n| vec![0.0; n]).collect(),
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn first_moments(&self) -> &[Vec<f64>] {
        &self.m
    }

    pub fn second_moments(&self) -> &[Vec<f64>] {
        &self.v
    }

    /// Applies one update. `params` and `grads` are parallel lists of blocks.
    /// Nothing is modified when a gradient is non-finite.
    pub fn step(&mut self, params: &mut [&mut [f64]], grads: &[&[f64]]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(DnkError::dim("adam blocks", self.m.len(), params.len().min(grads.len())));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.len() != self.m[i].len() || g.len() != self.m[i].len() {
                return Err(DnkError::dim("adam block length", self.m[i].len(), p.len()));
            }
        }
        if grads.iter().any(|g| g.iter().any(|x| !x.is_finite())) {
            return Err(DnkError::NonFinite("adam gradient"));
        }

        self.t += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let bc1 = 1.0 - beta1.powi(self.t as i32);
        let bc2 = 1.0 - beta2.powi(self.t as i32);
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for j in 0..p.len() {
                let gj = g[j];
                m[j] = beta1 * m[j] + (1.0 - beta1) * gj;
                v[j] = beta2 * v[j] + (1.0 - beta2) * gj * gj;
                let mhat = m[j] / bc1;
                let vhat = v[j] / bc2;
                p[j] -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }

    /// Discards accumulated moments (used after a divergence rollback).
    pub fn reset(&mut self) {
        for b in self.m.iter_mut().chain(self.v.iter_mut()) {
            b.iter_mut().for_each(|x| *x = 0.0);
        }
        self.t = 0;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params() {
        let mut s = AdamState::new(AdamConfig::default(), &[3]);
        let mut p = vec![1.0, -2.0, 0.5];
        let before = p.clone();
        s.step(&mut [p.as_mut_slice()], &[&[0.0, 0.0, 0.0]]).unwrap();
        assert_eq!(p, before);
        assert_eq!(s.steps(), 1);
        assert!(s.first_moments()[0].iter().all(|&m| m == 0.0));
    }

    // First-step closed form: m̂ = g, v̂ = g², update = -lr·g/(|g|+eps).
    #[test]
    fn first_step_closed_form() {
        let cfg = AdamConfig { lr: 1e-2, ..Default::default() };
        let mut s = AdamState::new(cfg, &[3]);
        let g = [0.3, -4.0, 1e-3];
        let mut p = vec![0.0; 3];
        s.step(&mut [p.as_mut_slice()], &[&g]).unwrap();
        for (pj, gj) in p.iter().zip(g) {
            let want = -cfg.lr * gj / (gj.abs() + cfg.eps);
            assert!((pj - want).abs() < 1e-15);
            assert!((pj + cfg.lr * gj.signum()).abs() < 1e-7);
        }
    }

    #[test]
    fn reruns_are_bitwise_identical() {
        let run = || {
            let mut s = AdamState::new(AdamConfig::default(), &[2, 1]);
            let mut a = vec![0.1, 0.2];
            let mut b = vec![-0.3];
            for k in 0..5 {
                let ga = [k as f64 * 0.1, -0.7];
                let gb = [0.25];
                s.step(&mut [a.as_mut_slice(), b.as_mut_slice()], &[&ga, &gb]).unwrap();
            }
            (a, b)
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn non_finite_gradient_is_rejected_without_update() {
        let mut s = AdamState::new(AdamConfig::default(), &[1]);
        let mut p = vec![1.0];
        assert!(s.step(&mut [p.as_mut_slice()], &[&[f64::NAN]]).is_err());
        assert_eq!(p, vec![1.0]);
        assert_eq!(s.steps(), 0);
    }

    #[test]
    fn minimises_a_quadratic() {
        let mut s = AdamState::new(AdamConfig { lr: 0.05, ..Default::default() }, &[2]);
        let mut p = vec![3.0, -2.0];
        for _ in 0..2000 {
            let g = [2.0 * p[0], 2.0 * p[1]];
            s.step(&mut [p.as_mut_slice()], &[&g]).unwrap();
        }
        assert!(p.iter().all(|x| x.abs() < 1e-3), "{p:?}");
    }
}
