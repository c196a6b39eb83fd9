use crate::error::{DnkError, Result};

/// Variance schedule `beta_k` with cumulative products `alpha_bar_k`.
/// Steps are indexed `1..=n` as in the usual notation.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseSchedule {
    beta: Vec<f64>,
    alpha_bar: Vec<f64>,
    sigma: Vec<f64>,
}

impl NoiseSchedule {
    /// Linear ramp from `beta_start` to `beta_end` over `n` steps.
    pub fn linear(n: usize, beta_start: f64, beta_end: f64) -> Result<Self> {
        if n == 0 {
            return Err(DnkError::InvalidArgument("schedule needs at least one step".into()));
        }
        if !(0.0 < beta_start && beta_start <= beta_end && beta_end < 1.0) {
            return Err(DnkError::InvalidArgument(format!(
                "need 0 < beta_start <= beta_end < 1, got {beta_start}, {beta_end}"
            )));
        }
        let betas = (0..n)
            .map(|i| {
                if n == 1 {
                    beta_start
                } else {
                    beta_start + (beta_end - beta_start) * i as f64 / (n - 1) as f64
                }
            })
            .collect();
        Self::from_betas(betas)
    }

    pub fn from_betas(beta: Vec<f64>) -> Result<Self> {
        if beta.is_empty() {
            return Err(DnkError::Empty("NoiseSchedule::from_betas"));
        }
        if beta.iter().any(|b| !(0.0 < *b && *b < 1.0)) {
            return Err(DnkError::InvalidArgument("every beta must lie in (0, 1)".into()));
        }
        let mut alpha_bar = Vec::with_capacity(beta.len());
        let mut acc = 1.0;
        for b in &beta {
            acc *= 1.0 - b;
            alpha_bar.push(acc);
        }
        let sigma = beta.iter().map(|b| b.sqrt()).collect();
        Ok(Self {
            beta,
            alpha_bar,
            sigma,
        })
    }

    pub fn n(&self) -> usize {
        self.beta.len()
    }

    pub fn beta(&self, k: usize) -> f64 {
        self.beta[k - 1]
    }

    pub fn alpha_bar(&self, k: usize) -> f64 {
        self.alpha_bar[k - 1]
    }

    /// Reverse-step standard deviation `sqrt(beta_k)`.
    pub fn sigma(&self, k: usize) -> f64 {
        self.sigma[k - 1]
    }

    pub fn betas(&self) -> &[f64] {
        &self.beta
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bar
    }
}

/// `sqrt(abar_k) * tau0 + sqrt(1 - abar_k) * eps`, elementwise.
pub fn forward_noise(tau0: &[f64], k: usize, eps: &[f64], sched: &NoiseSchedule) -> Result<Vec<f64>> {
    if k == 0 || k > sched.n() {
        return Err(DnkError::InvalidArgument(format!("step {k} outside 1..={}", sched.n())));
    }
    if eps.len() != tau0.len() {
        return Err(DnkError::dim("forward_noise eps", tau0.len(), eps.len()));
    }
    let ab = sched.alpha_bar(k);
    let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
    Ok(tau0.iter().zip(eps).map(|(x, e)| a * x + b * e).collect())
}

/// Number of sinusoidal timestep features.
pub const TIME_FEATURES: usize = 8;

/// `sin` and `cos` of `pi * 2^j * k / n` for `j = 0..4`.
pub fn time_embedding(k: usize, n: usize) -> [f64; TIME_FEATURES] {
    let x = k as f64 / n as f64;
    let mut out = [0.0; TIME_FEATURES];
    for j in 0..TIME_FEATURES / 2 {
        let w = std::f64::consts::PI * (1u32 << j) as f64 * x;
        out[2 * j] = w.sin();
        out[2 * j + 1] = w.cos();
    }
    out
}
