use super::{Student, Transition, TransitionCache};
use crate::distill_data::DistillPair;
use crate::env::{CTX_DIM, STATE_DIM, STEP_DIM};
use crate::error::{DnkError, Result};
use crate::numkit::{gemm, Matrix, MlpGrads, Trans};

/// Coefficients of the six loss terms and the action-block weights.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub rec: f64,
    pub lat: f64,
    pub pred: f64,
    pub act: f64,
    pub spec: f64,
    pub inv: f64,
    /// Weight of the first action block in the action loss.
    pub w_first: f64,
    /// Weight of every later action block.
    pub w_tail: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            rec: 0.8,
            lat: 0.2,
            pred: 1.0,
            act: 1.0,
            spec: 0.01,
            inv: 1.0,
            w_first: 1.5,
            w_tail: 0.6,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [self.rec, self.lat, self.pred, self.act, self.spec, self.inv, self.w_first, self.w_tail];
        if all.iter().any(|w| !(*w >= 0.0 && w.is_finite())) {
            return Err(DnkError::InvalidArgument("loss weights must be non-negative".into()));
        }
        Ok(())
    }

    /// Only the named term switched on (coefficient 1), others zero.
    pub fn only(term: &str) -> Option<Self> {
        let zero = Self {
            rec: 0.0,
            lat: 0.0,
            pred: 0.0,
            act: 0.0,
            spec: 0.0,
            inv: 0.0,
            ..Self::default()
        };
        Some(match term {
            "rec" => Self { rec: 1.0, ..zero },
            "lat" => Self { lat: 1.0, ..zero },
            "pred" => Self { pred: 1.0, ..zero },
            "act" => Self { act: 1.0, ..zero },
            "spec" => Self { spec: 1.0, ..zero },
            "inv" => Self { inv: 1.0, ..zero },
            _ => return None,
        })
    }
}

/// Unweighted value of every term and the weighted total.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossBreakdown {
    pub rec: f64,
    pub lat: f64,
    pub pred: f64,
    pub act: f64,
    pub spec: f64,
    pub inv: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn scaled(&self, s: f64) -> Self {
        Self {
            rec: self.rec * s,
            lat: self.lat * s,
            pred: self.pred * s,
            act: self.act * s,
            spec: self.spec * s,
            inv: self.inv * s,
            total: self.total * s,
        }
    }

    pub fn add(&mut self, o: &Self) {
        self.rec += o.rec;
        self.lat += o.lat;
        self.pred += o.pred;
        self.act += o.act;
        self.spec += o.spec;
        self.inv += o.inv;
        self.total += o.total;
    }
}

/// A training batch in normalised units.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub priors: Matrix,
    pub ctx: Matrix,
    pub targets: Matrix,
    pub weights: Vec<f64>,
}

impl Batch {
    pub fn from_pairs<'a>(pairs: impl IntoIterator<Item = &'a DistillPair>) -> Result<Self> {
        let pairs: Vec<&DistillPair> = pairs.into_iter().collect();
        if pairs.is_empty() {
            return Err(DnkError::Empty("student batch"));
        }
        Ok(Self {
            priors: Matrix::from_rows(&pairs.iter().map(|p| p.prior.values.as_slice()).collect::<Vec<_>>())?,
            ctx: Matrix::from_rows(&pairs.iter().map(|p| p.prior.context.as_slice()).collect::<Vec<_>>())?,
            targets: Matrix::from_rows(&pairs.iter().map(|p| p.target.as_slice()).collect::<Vec<_>>())?,
            weights: pairs.iter().map(|p| p.weight).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum TransitionGrads {
    Fdk { p: Matrix, q: Matrix, gamma: MlpGrads },
    Kdm { a: Matrix },
}

/// Gradients laid out like [`Student::param_slices`].
#[derive(Clone, Debug, PartialEq)]
pub struct StudentGrads {
    pub encoder: MlpGrads,
    pub transition: TransitionGrads,
    pub decoder: MlpGrads,
}

impl StudentGrads {
    pub fn zeros(model: &Student) -> Self {
        let l = model.latent();
        Self {
            encoder: model.encoder.zero_grads(),
            transition: match &model.transition {
                Transition::Fdk { gamma, .. } => TransitionGrads::Fdk {
                    p: Matrix::zeros(l, l),
                    q: Matrix::zeros(l, l),
                    gamma: gamma.zero_grads(),
                },
                Transition::Kdm { .. } => TransitionGrads::Kdm { a: Matrix::zeros(l, l) },
            },
            decoder: model.decoder.zero_grads(),
        }
    }

    pub fn slices(&self) -> Vec<&[f64]> {
        let mut out = self.encoder.slices();
        match &self.transition {
            TransitionGrads::Fdk { p, q, gamma } => {
                out.push(p.data());
                out.push(q.data());
                out.extend(gamma.slices());
            }
            TransitionGrads::Kdm { a } => out.push(a.data()),
        }
        out.extend(self.decoder.slices());
        out
    }

    pub fn is_finite(&self) -> bool {
        self.slices().iter().all(|s| s.iter().all(|v| v.is_finite()))
    }
}

fn action_weight(j: usize, w: &LossWeights) -> f64 {
    let (step, within) = (j / STEP_DIM, j % STEP_DIM);
    match (within >= STATE_DIM, step) {
        (false, _) => 0.0,
        (true, 0) => w.w_first,
        (true, _) => w.w_tail,
    }
}

/// Weighted six-term objective and its gradients for every parameter.
pub fn loss_total(model: &Student, batch: &Batch, w: &LossWeights) -> Result<(LossBreakdown, StudentGrads)> {
    loss_with_latent_target(model, batch, w, None)
}

/// As [`loss_total`], but with the latent-alignment target given explicitly
/// instead of encoded from the teacher targets by the current encoder.
/// Gradients never flow into the latent target in either case.
pub fn loss_with_latent_target(
    model: &Student,
    batch: &Batch,
    w: &LossWeights,
    latent_target: Option<&Matrix>,
) -> Result<(LossBreakdown, StudentGrads)> {
    w.validate()?;
    let b = batch.len();
    let d = model.traj_dim();
    let l = model.latent();
    if b == 0 {
        return Err(DnkError::Empty("loss_total"));
    }
    if batch.priors.shape() != (b, d) || batch.targets.shape() != (b, d) || batch.ctx.shape() != (b, CTX_DIM) {
        return Err(DnkError::dim("student batch", b * d, batch.priors.rows() * batch.priors.cols()));
    }
    let bf = b as f64;

    let (z1, enc_prior) = model.encoder.forward_cached(&model.encoder_input(&batch.priors, &batch.ctx)?)?;
    let (z0, tcache) = model.transition.apply_cached(&z1)?;
    let (pred, dec_pred) = model.decoder.forward_cached(&z0)?;
    let (zt, enc_target) = model.encoder.forward_cached(&model.encoder_input(&batch.targets, &batch.ctx)?)?;
    let (rec, dec_rec) = model.decoder.forward_cached(&zt)?;
    let lat_target = latent_target.unwrap_or(&zt);
    if lat_target.shape() != (b, l) {
        return Err(DnkError::dim("latent target", b * l, lat_target.rows() * lat_target.cols()));
    }

    let mut terms = LossBreakdown::default();
    let mut g_pred = Matrix::zeros(b, d);
    let mut g_rec = Matrix::zeros(b, d);
    let mut g_z0 = Matrix::zeros(b, l);
    for i in 0..b {
        let wi = batch.weights[i];
        let t = batch.targets.row(i);
        let (p, r) = (pred.row(i), rec.row(i));
        let gp = g_pred.row_mut(i);
        for j in 0..d {
            let e = p[j] - t[j];
            let aw = action_weight(j, w);
            terms.pred += wi * e * e / bf;
            terms.act += wi * aw * e * e / bf;
            gp[j] = 2.0 * wi * e * (w.pred + w.act * aw) / bf;
        }
        let gr = g_rec.row_mut(i);
        for j in 0..d {
            let e = r[j] - t[j];
            terms.rec += wi * e * e / bf;
            gr[j] = 2.0 * wi * e * w.rec / bf;
        }
        let gz = g_z0.row_mut(i);
        for k in 0..l {
            let e = z0[(i, k)] - lat_target[(i, k)];
            terms.lat += wi * e * e / bf;
            gz[k] = 2.0 * wi * e * w.lat / bf;
        }
    }

    let mut grads = StudentGrads::zeros(model);
    let dz0 = model.decoder.backward(&dec_pred, &g_pred, &mut grads.decoder)?;
    g_z0.add_assign(&dz0)?;
    let dz1 = match (&model.transition, &tcache, &mut grads.transition) {
        (Transition::Fdk { p, q, gamma }, TransitionCache::Fdk { u, g, v, gcache }, TransitionGrads::Fdk { p: gp, q: gq, gamma: gg }) => {
            let lf = l as f64;
            for &gv in g.data() {
                terms.spec += (gv.abs() - 1.0).max(0.0) / (bf * lf);
            }
            let mut r = p.matmul(q)?;
            for k in 0..l {
                r[(k, k)] -= 1.0;
            }
            terms.inv = r.frobenius_sq();

            gemm(1.0, &g_z0, Trans::Yes, v, Trans::No, 1.0, gp)?;
            gemm(2.0 * w.inv, &r, Trans::No, q, Trans::Yes, 1.0, gp)?;
            let mut dv = Matrix::zeros(b, l);
            gemm(1.0, &g_z0, Trans::No, p, Trans::No, 0.0, &mut dv)?;
            let mut du = dv.clone();
            let mut dg = dv;
            for idx in 0..b * l {
                let gv = g.data()[idx];
                let hinge = if gv.abs() > 1.0 { gv.signum() * w.spec / (bf * lf) } else { 0.0 };
                du.data_mut()[idx] *= gv;
                dg.data_mut()[idx] = dg.data()[idx] * u.data()[idx] + hinge;
            }
            gemm(1.0, &du, Trans::Yes, &z1, Trans::No, 1.0, gq)?;
            gemm(2.0 * w.inv, p, Trans::Yes, &r, Trans::No, 1.0, gq)?;
            let mut dz1 = Matrix::zeros(b, l);
            gemm(1.0, &du, Trans::No, q, Trans::No, 0.0, &mut dz1)?;
            dz1.add_assign(&gamma.backward(gcache, &dg, gg)?)?;
            dz1
        }
        (Transition::Kdm { a }, TransitionCache::Kdm, TransitionGrads::Kdm { a: ga }) => {
            gemm(1.0, &g_z0, Trans::Yes, &z1, Trans::No, 1.0, ga)?;
            let mut dz1 = Matrix::zeros(b, l);
            gemm(1.0, &g_z0, Trans::No, a, Trans::No, 0.0, &mut dz1)?;
            dz1
        }
        _ => unreachable!("cache and gradients follow the model variant"),
    };
    model.encoder.backward(&enc_prior, &dz1, &mut grads.encoder)?;
    let dzt = model.decoder.backward(&dec_rec, &g_rec, &mut grads.decoder)?;
    model.encoder.backward(&enc_target, &dzt, &mut grads.encoder)?;

    terms.total = w.rec * terms.rec
        + w.lat * terms.lat
        + w.pred * terms.pred
        + w.act * terms.act
        + w.spec * terms.spec
        + w.inv * terms.inv;
    if !terms.total.is_finite() || !grads.is_finite() {
        return Err(DnkError::NonFinite("student loss"));
    }
    Ok((terms, grads))
}
