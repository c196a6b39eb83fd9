use super::rng::Rng64;
use crate::error::{DnkError, Result};

/// Mini-batch optimisation settings shared by every trainer.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainOptions {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    /// Learning rate reached at the last epoch by a cosine ramp; `None` keeps
    /// `lr` constant.
    pub lr_final: Option<f64>,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            epochs: 200,
            batch_size: 64,
            lr: 3e-4,
            seed: 0,
            lr_final: None,
        }
    }
}

impl TrainOptions {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(DnkError::InvalidArgument("batch_size must be positive".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(DnkError::InvalidArgument(format!("learning rate {} must be positive", self.lr)));
        }
        if let Some(f) = self.lr_final {
            if !(f > 0.0 && f.is_finite()) {
                return Err(DnkError::InvalidArgument(format!("final learning rate {f} must be positive")));
            }
        }
        Ok(())
    }

    /// Learning rate for `epoch` (0-based).
    pub fn lr_at(&self, epoch: usize) -> f64 {
        match self.lr_final {
            None => self.lr,
            Some(f) if self.epochs > 1 => {
                let t = epoch.min(self.epochs - 1) as f64 / (self.epochs - 1) as f64;
                f + 0.5 * (self.lr - f) * (1.0 + (std::f64::consts::PI * t).cos())
            }
            Some(_) => self.lr,
        }
    }
}

/// Shuffled index batches covering `0..n` once; the last batch may be short.
pub fn epoch_batches(n: usize, batch_size: usize, rng: &mut Rng64) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..n).collect();
    rng.shuffle(&mut idx);
    idx.chunks(batch_size).map(|c| c.to_vec()).collect()
}
