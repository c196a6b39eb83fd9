//! One-step student: encoder, latent transition (factorised dynamic Koopman
//! layer or a single static matrix) and decoder.

mod loss;
mod train;

pub use loss::{loss_total, loss_with_latent_target, Batch, LossBreakdown, LossWeights, StudentGrads, TransitionGrads};
pub use train::{evaluate_mse, train_student, StudentReport};

use crate::diffusion::ConditionedPrior;
use crate::env::{Trajectory, CTX_DIM, STEP_DIM};
use crate::error::{DnkError, Result};
use crate::numkit::{Activation, Layer, Matrix, Mlp, MlpCache, Rng64, Trans};
use crate::numkit::gemm;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Variant {
    Fdk,
    Kdm,
}

impl Variant {
    pub fn tag(self) -> &'static str {
        match self {
            Variant::Fdk => "fdk",
            Variant::Kdm => "kdm",
        }
    }

    pub fn from_tag(tag: &str) -> Option<Self> {
        match tag {
            "fdk" => Some(Variant::Fdk),
            "kdm" => Some(Variant::Kdm),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StudentConfig {
    pub latent: usize,
    /// Encoder and decoder hidden width as a multiple of `latent`.
    pub width_mult: usize,
    pub depth: usize,
    pub activation: Activation,
    pub variant: Variant,
    /// Scale of the off-diagonal noise in the initial `P`.
    pub init_noise: f64,
}

impl Default for StudentConfig {
    fn default() -> Self {
        Self {
            latent: 64,
            width_mult: 4,
            depth: 2,
            activation: Activation::SmoothRelu,
            variant: Variant::Fdk,
            init_noise: 1e-3,
        }
    }
}

/// Latent transition. For FDK, `z0 = P ((Q z1) * gamma(z1))`; for KDM,
/// `z0 = A z1`.
#[derive(Clone, Debug, PartialEq)]
pub enum Transition {
    Fdk { p: Matrix, q: Matrix, gamma: Mlp },
    Kdm { a: Matrix },
}

impl Transition {
    pub fn variant(&self) -> Variant {
        match self {
            Transition::Fdk { .. } => Variant::Fdk,
            Transition::Kdm { .. } => Variant::Kdm,
        }
    }

    pub fn latent(&self) -> usize {
        match self {
            Transition::Fdk { p, .. } => p.rows(),
            Transition::Kdm { a } => a.rows(),
        }
    }

    /// Applies the transition to a batch of latents (one per row).
    pub fn apply(&self, z: &Matrix) -> Result<Matrix> {
        Ok(self.apply_cached(z)?.0)
    }

    pub(crate) fn apply_cached(&self, z: &Matrix) -> Result<(Matrix, TransitionCache)> {
        let l = self.latent();
        if z.cols() != l {
            return Err(DnkError::dim("transition input", l, z.cols()));
        }
        let b = z.rows();
        let mut out = Matrix::zeros(b, l);
        match self {
            Transition::Fdk { p, q, gamma } => {
                let mut u = Matrix::zeros(b, l);
                gemm(1.0, z, Trans::No, q, Trans::Yes, 0.0, &mut u)?;
                let (g, gcache) = gamma.forward_cached(z)?;
                let mut v = u.clone();
                for (x, gv) in v.data_mut().iter_mut().zip(g.data()) {
                    *x *= gv;
                }
                gemm(1.0, &v, Trans::No, p, Trans::Yes, 0.0, &mut out)?;
                out.ensure_finite("fdk transition")?;
                Ok((out, TransitionCache::Fdk { u, g, v, gcache }))
            }
            Transition::Kdm { a } => {
                gemm(1.0, z, Trans::No, a, Trans::Yes, 0.0, &mut out)?;
                out.ensure_finite("kdm transition")?;
                Ok((out, TransitionCache::Kdm))
            }
        }
    }

    /// Per-sample operator `K(z) = P diag(gamma(z)) Q` (or `A`).
    pub fn operator(&self, z: &[f64]) -> Result<Matrix> {
        match self {
            Transition::Fdk { p, q, gamma } => {
                let g = gamma.forward(z)?;
                let l = g.len();
                let mut gq = q.clone();
                for i in 0..l {
                    gq.row_mut(i).iter_mut().for_each(|x| *x *= g[i]);
                }
                p.matmul(&gq)
            }
            Transition::Kdm { a } => Ok(a.clone()),
        }
    }

    /// Modal gains for a batch of latents; `None` for KDM.
    pub fn gains(&self, z: &Matrix) -> Result<Option<Matrix>> {
        match self {
            Transition::Fdk { gamma, .. } => Ok(Some(gamma.forward_batch(z)?)),
            Transition::Kdm { .. } => Ok(None),
        }
    }
}

pub(crate) enum TransitionCache {
    Fdk { u: Matrix, g: Matrix, v: Matrix, gcache: MlpCache },
    Kdm,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Student {
    pub encoder: Mlp,
    pub transition: Transition,
    pub decoder: Mlp,
    pub horizon: usize,
}

/// How many times each stage ran during one call.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct StageCounts {
    pub encoder: usize,
    pub transition: usize,
    pub decoder: usize,
}

fn identity_with_noise(l: usize, scale: f64, rng: &mut Rng64) -> Matrix {
    let mut m = Matrix::identity(l);
    for i in 0..l {
        for j in 0..l {
            if i != j {
                m[(i, j)] = scale * rng.normal();
            }
        }
    }
    m
}

impl Student {
    pub fn new(cfg: &StudentConfig, horizon: usize, rng: &mut Rng64) -> Result<Self> {
        if cfg.latent == 0 || cfg.width_mult == 0 || cfg.depth == 0 || horizon == 0 {
            return Err(DnkError::InvalidArgument("student dimensions must be positive".into()));
        }
        let d = horizon * STEP_DIM;
        let l = cfg.latent;
        let w = cfg.width_mult * l;
        let mut enc = vec![d + CTX_DIM];
        enc.extend(std::iter::repeat(w).take(cfg.depth));
        enc.push(l);
        let mut dec = vec![l];
        dec.extend(std::iter::repeat(w).take(cfg.depth));
        dec.push(d);
        let encoder = Mlp::init(&enc, cfg.activation, rng)?;
        let decoder = Mlp::init(&dec, cfg.activation, rng)?;
        let transition = match cfg.variant {
            Variant::Fdk => {
                let p = identity_with_noise(l, cfg.init_noise, rng);
                let q = p.inverse()?;
                let mut gamma = Mlp::init(&[l, 2 * l, l], Activation::Tanh, rng)?;
                let head: &mut Layer = gamma.layers_mut().last_mut().expect("two layers");
                head.weight.data_mut().iter_mut().for_each(|x| *x = 0.0);
                head.bias.iter_mut().for_each(|x| *x = 1.0);
                Transition::Fdk { p, q, gamma }
            }
            Variant::Kdm => Transition::Kdm { a: Matrix::identity(l) },
        };
        Self::from_parts(encoder, transition, decoder, horizon)
    }

    pub fn from_parts(encoder: Mlp, transition: Transition, decoder: Mlp, horizon: usize) -> Result<Self> {
        let d = horizon * STEP_DIM;
        let l = transition.latent();
        if encoder.input_dim() != d + CTX_DIM {
            return Err(DnkError::dim("encoder input", d + CTX_DIM, encoder.input_dim()));
        }
        if encoder.output_dim() != l || decoder.input_dim() != l {
            return Err(DnkError::dim("latent width", l, encoder.output_dim()));
        }
        if decoder.output_dim() != d {
            return Err(DnkError::dim("decoder output", d, decoder.output_dim()));
        }
        if let Transition::Fdk { p, q, gamma } = &transition {
            if p.shape() != (l, l) || q.shape() != (l, l) || gamma.input_dim() != l || gamma.output_dim() != l {
                return Err(DnkError::dim("fdk parameters", l, q.rows()));
            }
        }
        Ok(Self {
            encoder,
            transition,
            decoder,
            horizon,
        })
    }

    pub fn latent(&self) -> usize {
        self.transition.latent()
    }

    pub fn variant(&self) -> Variant {
        self.transition.variant()
    }

    pub fn traj_dim(&self) -> usize {
        self.horizon * STEP_DIM
    }

    pub fn num_params(&self) -> usize {
        self.param_slices().iter().map(|s| s.len()).sum()
    }

    /// Encoder, transition (`P, Q, gamma` or `A`), decoder.
    pub fn param_slices(&self) -> Vec<&[f64]> {
        let mut out = self.encoder.param_slices();
        match &self.transition {
            Transition::Fdk { p, q, gamma } => {
                out.push(p.data());
                out.push(q.data());
                out.extend(gamma.param_slices());
            }
            Transition::Kdm { a } => out.push(a.data()),
        }
        out.extend(self.decoder.param_slices());
        out
    }

    pub fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = self.encoder.param_slices_mut();
        match &mut self.transition {
            Transition::Fdk { p, q, gamma } => {
                out.push(p.data_mut());
                out.push(q.data_mut());
                out.extend(gamma.param_slices_mut());
            }
            Transition::Kdm { a } => out.push(a.data_mut()),
        }
        out.extend(self.decoder.param_slices_mut());
        out
    }

    /// Encoder input rows `[trajectory | context]`.
    pub fn encoder_input(&self, trajs: &Matrix, ctx: &Matrix) -> Result<Matrix> {
        if trajs.cols() != self.traj_dim() || ctx.cols() != CTX_DIM || trajs.rows() != ctx.rows() {
            return Err(DnkError::dim("student encoder input", self.traj_dim() + CTX_DIM, trajs.cols() + ctx.cols()));
        }
        trajs.hcat(ctx)
    }

    pub fn encode(&self, trajs: &Matrix, ctx: &Matrix) -> Result<Matrix> {
        self.encoder.forward_batch(&self.encoder_input(trajs, ctx)?)
    }

    /// One encoder, one transition and one decoder pass over the whole
    /// batch, with the stage counts of the call.
    pub fn forward_counted(&self, priors: &Matrix, ctx: &Matrix) -> Result<(Matrix, StageCounts)> {
        let z1 = self.encode(priors, ctx)?;
        let z0 = self.transition.apply(&z1)?;
        let out = self.decoder.forward_batch(&z0)?;
        Ok((
            out,
            StageCounts {
                encoder: 1,
                transition: 1,
                decoder: 1,
            },
        ))
    }

    /// Predicted clean trajectories (normalised units), one row per prior.
    pub fn forward_batch(&self, priors: &Matrix, ctx: &Matrix) -> Result<Matrix> {
        Ok(self.forward_counted(priors, ctx)?.0)
    }

    pub fn forward_priors(&self, priors: &[ConditionedPrior]) -> Result<Matrix> {
        if priors.is_empty() {
            return Err(DnkError::Empty("student forward"));
        }
        let x = Matrix::from_rows(&priors.iter().map(|p| p.values.as_slice()).collect::<Vec<_>>())?;
        let c = Matrix::from_rows(&priors.iter().map(|p| p.context.as_slice()).collect::<Vec<_>>())?;
        self.forward_batch(&x, &c)
    }

    pub fn forward(&self, prior: &ConditionedPrior) -> Result<Trajectory> {
        let out = self.forward_priors(std::slice::from_ref(prior))?;
        Trajectory::from_normalized(self.horizon, out.row(0))
    }
}
