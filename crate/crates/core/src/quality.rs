//! Trajectory quality: a learned score regressor, rank-based sample
//! weights and the candidate selectors used at decision time.

use crate::env::{score_geometry, step, Action, Context, EnvConfig, Scene, ScoreParams, Trajectory, CTX_DIM};
use crate::error::{DnkError, Result};
use crate::numkit::{epoch_batches, Activation, AdamConfig, AdamState, Matrix, Mlp, Rng64, TrainOptions};

/// One scorer training example in normalised units.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoredExample {
    pub traj: Vec<f64>,
    pub ctx: Vec<f64>,
    pub score: f64,
}

/// MLP regressor from `(trajectory, context)` to a scalar quality score.
/// The network predicts standardised scores; `mean` and `std` undo that.
#[derive(Clone, Debug, PartialEq)]
pub struct QualityScorer {
    pub net: Mlp,
    pub horizon: usize,
    pub mean: f64,
    pub std: f64,
}

#[derive(Clone, Debug)]
pub struct ScorerReport {
    pub loss_curve: Vec<f64>,
    pub holdout_spearman: f64,
    /// All training scores were equal; the scorer predicts that constant.
    pub degenerate: bool,
}

impl QualityScorer {
    pub fn new(horizon: usize, hidden: &[usize], rng: &mut Rng64) -> Result<Self> {
        let mut widths = vec![horizon * crate::env::STEP_DIM + CTX_DIM];
        widths.extend_from_slice(hidden);
        widths.push(1);
        let net = Mlp::init(&widths, Activation::SmoothRelu, rng)?;
        Ok(Self {
            net,
            horizon,
            mean: 0.0,
            std: 1.0,
        })
    }

    pub fn predict_batch(&self, trajs: &Matrix, ctx: &Matrix) -> Result<Vec<f64>> {
        let x = trajs.hcat(ctx)?;
        let y = self.net.forward_batch(&x)?;
        Ok(y.data().iter().map(|v| self.mean + self.std * v).collect())
    }

    pub fn predict(&self, traj: &[f64], ctx: &[f64]) -> Result<f64> {
        Ok(self.predict_batch(&Matrix::row_vector(traj), &Matrix::row_vector(ctx))?[0])
    }
}

pub fn train_scorer(
    data: &[ScoredExample],
    hidden: &[usize],
    horizon: usize,
    holdout_frac: f64,
    opts: &TrainOptions,
) -> Result<(QualityScorer, ScorerReport)> {
    opts.validate()?;
    if data.len() < 2 {
        return Err(DnkError::Empty("train_scorer"));
    }
    let mut rng = Rng64::seeded(opts.seed, 0);
    let mut scorer = QualityScorer::new(horizon, hidden, &mut rng)?;
    let mut order: Vec<usize> = (0..data.len()).collect();
    rng.shuffle(&mut order);
    let n_hold = ((data.len() as f64 * holdout_frac).round() as usize).min(data.len() - 1);
    let (hold, train) = order.split_at(n_hold);

    let scores: Vec<f64> = train.iter().map(|&i| data[i].score).collect();
    let mean = scores.iter().sum::<f64>() / scores.len() as f64;
    let std = (scores.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / scores.len() as f64).sqrt();
    let degenerate = std < 1e-12;
    scorer.mean = mean;
    scorer.std = if degenerate { 0.0 } else { std };

    let gather = |idx: &[usize]| -> Result<(Matrix, Vec<f64>)> {
        let rows: Vec<Vec<f64>> = idx
            .iter()
            .map(|&i| data[i].traj.iter().chain(&data[i].ctx).copied().collect())
            .collect();
        let y = idx.iter().map(|&i| data[i].score).collect();
        Ok((Matrix::from_rows(&rows)?, y))
    };

    let mut adam = AdamState::new(
        AdamConfig { lr: opts.lr, ..Default::default() },
        &scorer.net.param_slices().iter().map(|s| s.len()).collect::<Vec<_>>(),
    );
    let mut curve = Vec::with_capacity(opts.epochs);
    if !degenerate {
        for epoch in 0..opts.epochs {
            adam.config.lr = opts.lr_at(epoch);
            let mut total = 0.0;
            for batch in epoch_batches(train.len(), opts.batch_size, &mut rng) {
                let idx: Vec<usize> = batch.iter().map(|&b| train[b]).collect();
                let (x, y) = gather(&idx)?;
                let (out, cache) = scorer.net.forward_cached(&x)?;
                let b = idx.len() as f64;
                let mut up = Matrix::zeros(idx.len(), 1);
                let mut loss = 0.0;
                for i in 0..idx.len() {
                    let r = out[(i, 0)] - (y[i] - mean) / std;
                    loss += r * r / b;
                    up[(i, 0)] = 2.0 * r / b;
                }
                if !loss.is_finite() {
                    return Err(DnkError::Diverged { epoch, detail: "scorer loss".into() });
                }
                let mut grads = scorer.net.zero_grads();
                scorer.net.backward(&cache, &up, &mut grads)?;
                adam.step(&mut scorer.net.param_slices_mut(), &grads.slices())?;
                total += loss * b;
            }
            curve.push(total / train.len() as f64);
        }
    }

    let holdout_spearman = if hold.len() >= 2 {
        let (x, y) = gather(hold)?;
        let d = horizon * crate::env::STEP_DIM;
        let pred = scorer.predict_batch(&x.col_block(0, d), &x.col_block(d, CTX_DIM))?;
        spearman(&pred, &y)
    } else {
        f64::NAN
    };
    Ok((
        scorer,
        ScorerReport {
            loss_curve: curve,
            holdout_spearman,
            degenerate,
        },
    ))
}

/// Builds scorer training data from expert windows: each window plus
/// `perturbed` copies whose actions carry random noise (states re-simulated
/// from the first state), all labelled with the geometric score.
pub fn scorer_dataset(
    windows: &[(Trajectory, Scene)],
    perturbed: usize,
    cfg: &EnvConfig,
    seed: u64,
) -> Result<Vec<ScoredExample>> {
    let mut out = Vec::with_capacity(windows.len() * (perturbed + 1));
    for (i, (traj, scene)) in windows.iter().enumerate() {
        let mut rng = Rng64::seeded(seed, i as u64);
        let ctx = Context::new(traj.state(0), scene).to_vector();
        out.push(ScoredExample {
            traj: traj.to_normalized(),
            ctx: ctx.clone(),
            score: score_geometry(traj, scene, &cfg.score),
        });
        for _ in 0..perturbed {
            let sigma = rng.uniform_range(0.0, 0.8);
            let bias = [rng.normal() * 0.3, rng.normal() * 0.3];
            let mut steps = Vec::with_capacity(traj.horizon());
            let mut s = traj.state(0);
            for k in 0..traj.horizon() {
                let a = traj.action(k);
                let a = Action::new(
                    a.acc[0] + bias[0] + sigma * rng.normal(),
                    a.acc[1] + bias[1] + sigma * rng.normal(),
                )
                .clipped(cfg.plant.a_max);
                steps.push((s, a));
                s = step(&s, &a, &cfg.plant);
            }
            let t = Trajectory::from_steps(&steps)?;
            out.push(ScoredExample {
                traj: t.to_normalized(),
                ctx: ctx.clone(),
                score: score_geometry(&t, scene, &cfg.score),
            });
        }
    }
    Ok(out)
}

/// Average ranks (0-based) with ties sharing the mean of their positions.
pub fn average_ranks(xs: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut ranks = vec![0.0; xs.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && xs[idx[j + 1]] == xs[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation (Pearson correlation of average ranks).
pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    let (ra, rb) = (average_ranks(a), average_ranks(b));
    let n = ra.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let (mut num, mut va, mut vb) = (0.0, 0.0, 0.0);
    for (x, y) in ra.iter().zip(&rb) {
        num += (x - ma) * (y - mb);
        va += (x - ma).powi(2);
        vb += (y - mb).powi(2);
    }
    if va == 0.0 || vb == 0.0 {
        return 0.0;
    }
    num / (va * vb).sqrt()
}

/// Rank-quantile weights `1 + beta * rank / (M - 1)` in `[1, 1 + beta]`,
/// ties sharing their average rank; a single score gets `1 + beta`.
pub fn quantile_weights(scores: &[f64], beta: f64) -> Result<Vec<f64>> {
    if scores.is_empty() {
        return Err(DnkError::Empty("quantile_weights"));
    }
    if !(beta >= 0.0) {
        return Err(DnkError::InvalidArgument(format!("beta must be non-negative, got {beta}")));
    }
    if scores.len() == 1 {
        return Ok(vec![1.0 + beta]);
    }
    let m1 = (scores.len() - 1) as f64;
    Ok(average_ranks(scores).iter().map(|r| 1.0 + beta * r / m1).collect())
}

/// Ranks candidate trajectories; higher scores are better.
#[derive(Clone, Debug)]
pub enum Selector {
    Geometry(ScoreParams),
    Learned(QualityScorer),
}

impl Selector {
    pub fn label(&self) -> &'static str {
        match self {
            Selector::Geometry(_) => "geometry",
            Selector::Learned(_) => "learned-scorer",
        }
    }

    pub fn score(&self, candidates: &[Trajectory], ctx: &Context, scene: &Scene) -> Result<Vec<f64>> {
        let scores = match self {
            Selector::Geometry(w) => candidates.iter().map(|t| score_geometry(t, scene, w)).collect(),
            Selector::Learned(s) => {
                let rows: Vec<Vec<f64>> = candidates.iter().map(|t| t.to_normalized()).collect();
                let c = ctx.to_vector();
                let ctxs: Vec<&[f64]> = vec![c.as_slice(); candidates.len()];
                s.predict_batch(&Matrix::from_rows(&rows)?, &Matrix::from_rows(&ctxs)?)?
            }
        };
        if scores.iter().any(|s: &f64| !s.is_finite()) {
            return Err(DnkError::NonFinite("selector score"));
        }
        Ok(scores)
    }
}
