use std::time::{Duration, Instant};

use super::prior::{make_conditioned_prior, ConditionedPrior, FIXED_LEN};
use super::schedule::{time_embedding, NoiseSchedule, TIME_FEATURES};
use crate::env::{Action, Context, Scene, Trajectory, CTX_DIM, STEP_DIM};
use crate::error::{DnkError, Result};
use crate::numkit::{epoch_batches, Activation, AdamConfig, AdamState, Matrix, Mlp, MlpGrads, Rng64, TrainOptions};
use crate::quality::Selector;

/// Reverse-step rule used by [`reverse_sample_batch`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Sampler {
    /// Ancestral DDPM step with noise `eta * sigma_k`; `eta = 1` is the
    /// standard sampler, `eta = 0` keeps only the posterior mean.
    Ancestral { eta: f64 },
    /// Deterministic implicit step through the predicted clean trajectory,
    /// `x_{k-1} = sqrt(abar_{k-1}) x0_hat + sqrt(1 - abar_{k-1}) eps_hat`.
    Implicit,
}

impl Sampler {
    pub fn tag(self) -> String {
        match self {
            Sampler::Ancestral { eta } => format!("ancestral:{eta}"),
            Sampler::Implicit => "implicit".into(),
        }
    }

    pub fn from_tag(tag: &str) -> Option<Self> {
        if tag == "implicit" {
            return Some(Sampler::Implicit);
        }
        let eta: f64 = tag.strip_prefix("ancestral:")?.parse().ok()?;
        (eta >= 0.0 && eta.is_finite()).then_some(Sampler::Ancestral { eta })
    }

    fn validate(self) -> Result<()> {
        match self {
            Sampler::Ancestral { eta } if !(eta >= 0.0 && eta.is_finite()) => {
                Err(DnkError::InvalidArgument(format!("sampler eta {eta} must be non-negative")))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TeacherConfig {
    pub n_steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    pub hidden: usize,
    pub depth: usize,
    pub activation: Activation,
    pub sampler: Sampler,
}

impl Default for TeacherConfig {
    fn default() -> Self {
        Self {
            n_steps: 20,
            beta_start: 1e-4,
            beta_end: 0.4,
            hidden: 256,
            depth: 3,
            activation: Activation::SmoothRelu,
            sampler: Sampler::Implicit,
        }
    }
}

/// Noise-prediction network `eps(tau_k, k, c)` with its schedule.
#[derive(Clone, Debug)]
pub struct Teacher {
    pub net: Mlp,
    pub sched: NoiseSchedule,
    pub horizon: usize,
    pub sampler: Sampler,
}

/// One clean training example in normalised units.
#[derive(Clone, Debug, PartialEq)]
pub struct TeacherExample {
    pub traj: Vec<f64>,
    pub ctx: Vec<f64>,
}

impl Teacher {
    /// Random hidden layers; the output layer starts at zero so the initial
    /// noise prediction is exactly zero.
    pub fn new(cfg: &TeacherConfig, horizon: usize, rng: &mut Rng64) -> Result<Self> {
        if cfg.depth == 0 || cfg.hidden == 0 {
            return Err(DnkError::InvalidArgument("teacher needs at least one hidden layer".into()));
        }
        let d = horizon * STEP_DIM;
        let mut widths = vec![d + TIME_FEATURES + CTX_DIM];
        widths.extend(std::iter::repeat(cfg.hidden).take(cfg.depth));
        widths.push(d);
        let mut net = Mlp::init(&widths, cfg.activation, rng)?;
        if let Some(last) = net.layers_mut().last_mut() {
            last.weight.data_mut().iter_mut().for_each(|w| *w = 0.0);
        }
        Self::from_parts(net, NoiseSchedule::linear(cfg.n_steps, cfg.beta_start, cfg.beta_end)?, horizon, cfg.sampler)
    }

    pub fn from_parts(net: Mlp, sched: NoiseSchedule, horizon: usize, sampler: Sampler) -> Result<Self> {
        sampler.validate()?;
        let d = horizon * STEP_DIM;
        if net.input_dim() != d + TIME_FEATURES + CTX_DIM {
            return Err(DnkError::dim("teacher input", d + TIME_FEATURES + CTX_DIM, net.input_dim()));
        }
        if net.output_dim() != d {
            return Err(DnkError::dim("teacher output", d, net.output_dim()));
        }
        Ok(Self {
            net,
            sched,
            horizon,
            sampler,
        })
    }

    pub fn traj_dim(&self) -> usize {
        self.horizon * STEP_DIM
    }

    fn input(&self, xk: &Matrix, ks: &[usize], ctx: &Matrix) -> Result<Matrix> {
        let d = self.traj_dim();
        if xk.cols() != d || ctx.cols() != CTX_DIM || xk.rows() != ks.len() || ctx.rows() != ks.len() {
            return Err(DnkError::dim("teacher batch", d, xk.cols()));
        }
        let width = d + TIME_FEATURES + CTX_DIM;
        let mut x = Matrix::zeros(ks.len(), width);
        for (i, &k) in ks.iter().enumerate() {
            let row = x.row_mut(i);
            row[..d].copy_from_slice(xk.row(i));
            row[d..d + TIME_FEATURES].copy_from_slice(&time_embedding(k, self.sched.n()));
            row[d + TIME_FEATURES..].copy_from_slice(ctx.row(i));
        }
        Ok(x)
    }

    pub fn predict_eps(&self, xk: &Matrix, ks: &[usize], ctx: &Matrix) -> Result<Matrix> {
        self.net.forward_batch(&self.input(xk, ks, ctx)?)
    }
}

/// Noise-prediction loss on one batch and its parameter gradients.
///
/// `x0` holds clean trajectories, `eps` the noise (its fixed entries are
/// ignored). Fixed entries stay clean in the noised input and do not enter
/// the loss, which is the per-sample squared error summed over free entries
/// and averaged over the batch.
pub fn ddpm_loss(teacher: &Teacher, x0: &Matrix, ctx: &Matrix, ks: &[usize], eps: &Matrix) -> Result<(f64, MlpGrads)> {
    let (b, d) = x0.shape();
    if eps.shape() != (b, d) {
        return Err(DnkError::dim("ddpm_loss eps", b * d, eps.rows() * eps.cols()));
    }
    if ks.iter().any(|&k| k == 0 || k > teacher.sched.n()) {
        return Err(DnkError::InvalidArgument("diffusion step out of range".into()));
    }
    let mut xk = x0.clone();
    for (i, &k) in ks.iter().enumerate() {
        let ab = teacher.sched.alpha_bar(k);
        let (sa, sb) = (ab.sqrt(), (1.0 - ab).sqrt());
        let e = eps.row(i);
        for (j, v) in xk.row_mut(i).iter_mut().enumerate().skip(FIXED_LEN) {
            *v = sa * *v + sb * e[j];
        }
    }
    let (out, cache) = teacher.net.forward_cached(&teacher.input(&xk, ks, ctx)?)?;
    let mut up = Matrix::zeros(b, d);
    let mut loss = 0.0;
    for i in 0..b {
        for j in FIXED_LEN..d {
            let r = out[(i, j)] - eps[(i, j)];
            loss += r * r;
            up[(i, j)] = 2.0 * r / b as f64;
        }
    }
    loss /= b as f64;
    if !loss.is_finite() {
        return Err(DnkError::NonFinite("ddpm loss"));
    }
    let mut grads = teacher.net.zero_grads();
    teacher.net.backward(&cache, &up, &mut grads)?;
    Ok((loss, grads))
}

/// Trains the noise predictor; returns the mean loss of every epoch.
pub fn train_teacher(teacher: &mut Teacher, data: &[TeacherExample], opts: &TrainOptions) -> Result<Vec<f64>> {
    opts.validate()?;
    if data.is_empty() {
        return Err(DnkError::Empty("train_teacher"));
    }
    let d = teacher.traj_dim();
    for ex in data {
        if ex.traj.len() != d || ex.ctx.len() != CTX_DIM {
            return Err(DnkError::dim("teacher example", d + CTX_DIM, ex.traj.len() + ex.ctx.len()));
        }
    }
    let mut rng = Rng64::seeded(opts.seed, 0);
    let blocks: Vec<usize> = teacher.net.param_slices().iter().map(|s| s.len()).collect();
    let mut adam = AdamState::new(AdamConfig { lr: opts.lr, ..Default::default() }, &blocks);
    let mut curve = Vec::with_capacity(opts.epochs);
    for epoch in 0..opts.epochs {
        adam.config.lr = opts.lr_at(epoch);
        let mut total = 0.0;
        for batch in epoch_batches(data.len(), opts.batch_size, &mut rng) {
            let b = batch.len();
            let mut x0 = Matrix::zeros(b, d);
            let mut ctx = Matrix::zeros(b, CTX_DIM);
            let mut eps = Matrix::zeros(b, d);
            let mut ks = Vec::with_capacity(b);
            for (i, &idx) in batch.iter().enumerate() {
                x0.row_mut(i).copy_from_slice(&data[idx].traj);
                ctx.row_mut(i).copy_from_slice(&data[idx].ctx);
                ks.push(1 + rng.below(teacher.sched.n()));
                rng.fill_normal(&mut eps.row_mut(i)[FIXED_LEN..]);
            }
            let (loss, grads) = ddpm_loss(teacher, &x0, &ctx, &ks, &eps).map_err(|e| DnkError::Diverged {
                epoch,
                detail: e.to_string(),
            })?;
            adam.step(&mut teacher.net.param_slices_mut(), &grads.slices())?;
            total += loss * b as f64;
        }
        curve.push(total / data.len() as f64);
    }
    Ok(curve)
}

/// Reverse diffusion from a batch of priors. Row `i` draws its step noise
/// from `rngs[i]` (only the ancestral sampler with `eta > 0` draws), so rows
/// never interact.
pub fn reverse_sample_batch(teacher: &Teacher, priors: &[ConditionedPrior], rngs: &mut [Rng64]) -> Result<Matrix> {
    let d = teacher.traj_dim();
    if priors.is_empty() {
        return Err(DnkError::Empty("reverse_sample_batch"));
    }
    if rngs.len() != priors.len() {
        return Err(DnkError::dim("reverse_sample_batch rngs", priors.len(), rngs.len()));
    }
    let b = priors.len();
    let mut x = Matrix::zeros(b, d);
    let mut ctx = Matrix::zeros(b, CTX_DIM);
    for (i, p) in priors.iter().enumerate() {
        if p.len() != d || p.context.len() != CTX_DIM {
            return Err(DnkError::dim("prior length", d, p.len()));
        }
        x.row_mut(i).copy_from_slice(&p.values);
        ctx.row_mut(i).copy_from_slice(&p.context);
    }
    let sched = &teacher.sched;
    for k in (1..=sched.n()).rev() {
        let ks = vec![k; b];
        let eps = teacher.predict_eps(&x, &ks, &ctx)?;
        let beta = sched.beta(k);
        let ab = sched.alpha_bar(k);
        let ab_prev = if k > 1 { sched.alpha_bar(k - 1) } else { 1.0 };
        let inv_sqrt_alpha = 1.0 / (1.0 - beta).sqrt();
        let coef = beta / (1.0 - ab).sqrt();
        let noise = match teacher.sampler {
            Sampler::Ancestral { eta } if k > 1 => eta * sched.sigma(k),
            _ => 0.0,
        };
        for i in 0..b {
            let e = eps.row(i);
            let row = x.row_mut(i);
            match teacher.sampler {
                Sampler::Ancestral { .. } => {
                    for j in 0..d {
                        row[j] = inv_sqrt_alpha * (row[j] - coef * e[j]);
                    }
                }
                Sampler::Implicit => {
                    for j in 0..d {
                        let x0 = (row[j] - (1.0 - ab).sqrt() * e[j]) / ab.sqrt();
                        row[j] = ab_prev.sqrt() * x0 + (1.0 - ab_prev).sqrt() * e[j];
                    }
                }
            }
            if noise > 0.0 {
                for v in row[FIXED_LEN..].iter_mut() {
                    *v += noise * rngs[i].normal();
                }
            }
            priors[i].impose(row);
        }
        if !x.is_finite() {
            return Err(DnkError::NonFinite("reverse diffusion state"));
        }
    }
    Ok(x)
}

/// Single-prior convenience wrapper around [`reverse_sample_batch`].
pub fn reverse_sample(teacher: &Teacher, prior: &ConditionedPrior, rng: &mut Rng64) -> Result<Vec<f64>> {
    let mut rngs = [rng.clone()];
    let out = reverse_sample_batch(teacher, std::slice::from_ref(prior), &mut rngs)?;
    *rng = rngs[0].clone();
    Ok(out.into_vec())
}

/// Priors and step-noise streams for `n_cand` candidates; candidate `i`
/// uses stream `i` of `seed`.
pub fn candidate_priors(
    ctx: &Context,
    horizon: usize,
    n_cand: usize,
    lambda: f64,
    seed: u64,
) -> Result<(Vec<ConditionedPrior>, Vec<Rng64>)> {
    let mut priors = Vec::with_capacity(n_cand);
    let mut rngs = Vec::with_capacity(n_cand);
    for i in 0..n_cand {
        let mut rng = Rng64::seeded(seed, i as u64);
        priors.push(make_conditioned_prior(ctx, lambda, horizon, &mut rng)?);
        rngs.push(rng);
    }
    Ok((priors, rngs))
}

#[derive(Clone, Debug)]
pub struct TeacherDecision {
    pub action: Action,
    pub best: usize,
    pub candidates: Vec<Trajectory>,
    pub scores: Vec<f64>,
    pub elapsed: Duration,
}

/// Multistep reference policy: sample `n_cand` trajectories, rank them and
/// return the first action of the best one.
#[allow(clippy::too_many_arguments)]
pub fn teacher_decision(
    teacher: &Teacher,
    ctx: &Context,
    scene: &Scene,
    n_cand: usize,
    lambda: f64,
    selector: &Selector,
    seed: u64,
) -> Result<TeacherDecision> {
    if n_cand == 0 {
        return Err(DnkError::InvalidArgument("n_cand must be positive".into()));
    }
    let t0 = Instant::now();
    let (priors, mut rngs) = candidate_priors(ctx, teacher.horizon, n_cand, lambda, seed)?;
    let out = reverse_sample_batch(teacher, &priors, &mut rngs)?;
    let candidates = (0..n_cand)
        .map(|i| Trajectory::from_normalized(teacher.horizon, out.row(i)))
        .collect::<Result<Vec<_>>>()?;
    let scores = selector.score(&candidates, ctx, scene)?;
    let best = argmax(&scores);
    let action = candidates[best].action(0);
    Ok(TeacherDecision {
        action,
        best,
        candidates,
        scores,
        elapsed: t0.elapsed(),
    })
}

/// Index of the largest score; ties go to the lowest index.
pub fn argmax(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, s) in scores.iter().enumerate() {
        if *s > scores[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{PointMassState, ScoreParams};
    use crate::numkit::{flatten, grad_check, unflatten_into};

    fn small(h: usize, seed: u64) -> Teacher {
        let cfg = TeacherConfig { hidden: 16, depth: 2, ..Default::default() };
        let mut t = Teacher::new(&cfg, h, &mut Rng64::seeded(seed, 0)).unwrap();
        // non-zero output layer so every gradient path is active
        let mut rng = Rng64::seeded(seed, 1);
        for w in t.net.layers_mut().last_mut().unwrap().weight.data_mut() {
            *w = 0.2 * rng.normal();
        }
        t
    }

    fn ctx() -> (Context, Scene) {
        let scene = Scene::new(PointMassState::at_rest([-1.0, 0.2]), [1.0, 0.0], vec![], 2.0).unwrap();
        (Context::new(scene.start, &scene), scene)
    }

    #[test]
    fn ddpm_gradients_match_finite_differences() {
        for seed in 0..5 {
            let t = small(2, seed);
            let d = t.traj_dim();
            let mut rng = Rng64::seeded(seed, 9);
            let x0 = Matrix::from_vec(3, d, (0..3 * d).map(|_| rng.normal()).collect()).unwrap();
            let c = Matrix::from_vec(3, CTX_DIM, (0..3 * CTX_DIM).map(|_| rng.normal()).collect()).unwrap();
            let eps = Matrix::from_vec(3, d, (0..3 * d).map(|_| rng.normal()).collect()).unwrap();
            let ks = [1, 7, 20];
            let (_, g) = ddpm_loss(&t, &x0, &c, &ks, &eps).unwrap();
            let p0 = flatten(&t.net.param_slices());
            let err = grad_check(&p0, &flatten(&g.slices()), 1e-6, |p| {
                let mut tt = t.clone();
                unflatten_into(&mut tt.net.param_slices_mut(), p);
                ddpm_loss(&tt, &x0, &c, &ks, &eps).unwrap().0
            })
            .unwrap();
            assert!(err < 1e-4, "seed {seed}: {err}");
        }
    }

    #[test]
    fn initial_loss_is_free_dimension() {
        let cfg = TeacherConfig { hidden: 32, depth: 2, ..Default::default() };
        let t = Teacher::new(&cfg, 16, &mut Rng64::seeded(0, 0)).unwrap();
        let d = t.traj_dim();
        let mut rng = Rng64::seeded(1, 0);
        let b = 256;
        let x0 = Matrix::from_vec(b, d, (0..b * d).map(|_| 0.3 * rng.normal()).collect()).unwrap();
        let c = Matrix::zeros(b, CTX_DIM);
        let eps = Matrix::from_vec(b, d, (0..b * d).map(|_| rng.normal()).collect()).unwrap();
        let ks: Vec<usize> = (0..b).map(|i| 1 + i % 20).collect();
        let (loss, _) = ddpm_loss(&t, &x0, &c, &ks, &eps).unwrap();
        let free = (d - FIXED_LEN) as f64;
        assert!((loss - free).abs() < 0.2 * free, "loss {loss} vs {free}");
    }

    #[test]
    fn zero_epochs_is_a_no_op() {
        let mut t = small(2, 0);
        let before = t.net.clone();
        let data = vec![TeacherExample { traj: vec![0.1; t.traj_dim()], ctx: vec![0.0; CTX_DIM] }];
        let curve = train_teacher(&mut t, &data, &TrainOptions { epochs: 0, ..Default::default() }).unwrap();
        assert!(curve.is_empty());
        assert_eq!(t.net, before);
    }

    #[test]
    fn overfits_a_single_trajectory() {
        let cfg = TeacherConfig { hidden: 64, depth: 2, ..Default::default() };
        let mut t = Teacher::new(&cfg, 4, &mut Rng64::seeded(0, 0)).unwrap();
        let mut rng = Rng64::seeded(5, 0);
        let ex = TeacherExample {
            traj: (0..t.traj_dim()).map(|_| 0.5 * rng.normal()).collect(),
            ctx: (0..CTX_DIM).map(|_| 0.5 * rng.normal()).collect(),
        };
        let data = vec![ex; 64];
        let opts = TrainOptions { epochs: 200, batch_size: 64, lr: 3e-3, seed: 3, lr_final: None };
        let curve = train_teacher(&mut t, &data, &opts).unwrap();
        assert!(curve[199] < 0.1 * curve[0], "{} -> {}", curve[0], curve[199]);
    }

    #[test]
    fn inpainting_and_zero_network_recursion() {
        let cfg = TeacherConfig { hidden: 8, depth: 1, sampler: Sampler::Ancestral { eta: 0.0 }, ..Default::default() };
        let mut t = Teacher::new(&cfg, 3, &mut Rng64::seeded(0, 0)).unwrap();
        for s in t.net.param_slices_mut() {
            s.iter_mut().for_each(|v| *v = 0.0);
        }
        let (c, _) = ctx();
        let mut rng = Rng64::seeded(2, 0);
        let prior = make_conditioned_prior(&c, 0.5, 3, &mut rng).unwrap();
        let out = reverse_sample(&t, &prior, &mut rng).unwrap();
        assert_eq!(&out[..FIXED_LEN], &prior.values[..FIXED_LEN]);
        let scale: f64 = t.sched.betas().iter().map(|b| (1.0 - b).sqrt()).product();
        for j in FIXED_LEN..out.len() {
            let want = prior.values[j] / scale;
            assert!((out[j] - want).abs() <= 1e-12 * want.abs().max(1.0));
        }
    }

    #[test]
    fn implicit_step_with_zero_network_rescales_by_alpha_bar() {
        // eps_hat = 0 turns every step into x <- sqrt(abar_{k-1} / abar_k) x,
        // which telescopes to x_N / sqrt(abar_N).
        let cfg = TeacherConfig { hidden: 8, depth: 1, ..Default::default() };
        let mut t = Teacher::new(&cfg, 3, &mut Rng64::seeded(0, 0)).unwrap();
        for s in t.net.param_slices_mut() {
            s.iter_mut().for_each(|v| *v = 0.0);
        }
        let (c, _) = ctx();
        let mut rng = Rng64::seeded(2, 0);
        let prior = make_conditioned_prior(&c, 0.5, 3, &mut rng).unwrap();
        let out = reverse_sample(&t, &prior, &mut rng).unwrap();
        assert_eq!(&out[..FIXED_LEN], &prior.values[..FIXED_LEN]);
        let abar_n: f64 = t.sched.betas().iter().map(|b| 1.0 - b).product();
        for j in FIXED_LEN..out.len() {
            let want = prior.values[j] / abar_n.sqrt();
            assert!((out[j] - want).abs() <= 1e-12 * want.abs().max(1.0));
        }
    }

    #[test]
    fn implicit_sampling_ignores_the_step_stream() {
        let t = small(2, 4);
        let (c, _) = ctx();
        let prior = make_conditioned_prior(&c, 0.5, 2, &mut Rng64::seeded(1, 1)).unwrap();
        let a = reverse_sample(&t, &prior, &mut Rng64::seeded(3, 0)).unwrap();
        let b = reverse_sample(&t, &prior, &mut Rng64::seeded(4, 0)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn sampler_tags_round_trip() {
        for s in [Sampler::Implicit, Sampler::Ancestral { eta: 0.0 }, Sampler::Ancestral { eta: 1.0 }] {
            assert_eq!(Sampler::from_tag(&s.tag()), Some(s));
        }
        assert_eq!(Sampler::from_tag("ancestral:-1"), None);
        assert_eq!(Sampler::from_tag("ddpm"), None);
    }

    #[test]
    fn ancestral_sampling_is_seed_deterministic() {
        let mut t = small(2, 4);
        t.sampler = Sampler::Ancestral { eta: 1.0 };
        let (c, _) = ctx();
        let prior = make_conditioned_prior(&c, 0.5, 2, &mut Rng64::seeded(1, 1)).unwrap();
        let a = reverse_sample(&t, &prior, &mut Rng64::seeded(3, 0)).unwrap();
        let b = reverse_sample(&t, &prior, &mut Rng64::seeded(3, 0)).unwrap();
        let other = reverse_sample(&t, &prior, &mut Rng64::seeded(4, 0)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, other);
        assert_eq!(&a[..FIXED_LEN], &prior.values[..FIXED_LEN]);
    }

    #[test]
    fn batch_rows_equal_single_samples() {
        let mut t = small(3, 2);
        t.sampler = Sampler::Ancestral { eta: 1.0 };
        let (c, _) = ctx();
        let (priors, rngs) = candidate_priors(&c, 3, 5, 0.5, 42).unwrap();
        let batch = reverse_sample_batch(&t, &priors, &mut rngs.clone()).unwrap();
        for i in 0..5 {
            let mut r = rngs[i].clone();
            let single = reverse_sample(&t, &priors[i], &mut r).unwrap();
            assert_eq!(batch.row(i), single.as_slice());
        }
    }

    #[test]
    fn decision_picks_best_first_action() {
        let t = small(4, 1);
        let (c, scene) = ctx();
        let sel = Selector::Geometry(ScoreParams::default());
        let dec = teacher_decision(&t, &c, &scene, 8, 0.5, &sel, 7).unwrap();
        assert_eq!(dec.best, argmax(&dec.scores));
        assert_eq!(dec.action, dec.candidates[dec.best].action(0));

        let one = teacher_decision(&t, &c, &scene, 1, 0.5, &sel, 7).unwrap();
        let (priors, mut rngs) = candidate_priors(&c, 4, 1, 0.5, 7).unwrap();
        let raw = reverse_sample(&t, &priors[0], &mut rngs[0]).unwrap();
        let traj = Trajectory::from_normalized(4, &raw).unwrap();
        assert_eq!(one.action, traj.action(0));
    }

    #[test]
    fn argmax_ties_pick_lowest() {
        assert_eq!(argmax(&[0.1, 0.9, 0.3]), 1);
        assert_eq!(argmax(&[2.0, 2.0, 2.0]), 0);
    }
}
