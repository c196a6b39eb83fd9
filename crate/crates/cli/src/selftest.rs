//! Invariant suite behind `dnk selftest`: gradient checks, FDK identities,
//! statistics units and serialization round trips.

use std::path::Path;

use dnk_core::diffusion::{ddpm_loss, fixed_mask, ConditionedPrior, Teacher, TeacherConfig};
use dnk_core::distill_data::{decode_dataset, encode_dataset, DistillDataset, DistillPair};
use dnk_core::env::CTX_DIM;
use dnk_core::metrics::{episode_stats, latency_stats};
use dnk_core::numkit::{flatten, grad_check, unflatten_into, Activation, Matrix, Mlp, Rng64};
use dnk_core::quality::{quantile_weights, QualityScorer};
use dnk_core::student::{loss_total, loss_with_latent_target, Batch, LossWeights, Student, StudentConfig, Transition, Variant};

use crate::config::RunConfig;
use crate::modelio::{
    scorer_from_file, scorer_to_file, student_from_file, student_to_file, teacher_from_file, teacher_to_file,
    ModelFile, Provenance,
};

pub const GRAD_TOL: f64 = 1e-4;
pub const PATH_TOL: f64 = 1e-10;
pub const STOP_GRAD_TOL: f64 = 1e-12;
pub const SEEDS: u64 = 5;

#[derive(Clone, Debug, PartialEq)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn new(name: impl Into<String>, passed: bool, detail: impl Into<String>) -> Self {
        Self { name: name.into(), passed, detail: detail.into() }
    }

    /// Passes when `value <= tol`.
    fn at_most(name: impl Into<String>, value: f64, tol: f64) -> Self {
        Self::new(name, value <= tol, format!("{value:.3e} (limit {tol:.0e})"))
    }

    fn exact<T: PartialEq + std::fmt::Debug>(name: impl Into<String>, got: T, want: T) -> Self {
        let passed = got == want;
        Self::new(name, passed, format!("got {got:?}, expected {want:?}"))
    }
}

fn rand_matrix(r: usize, c: usize, s: f64, rng: &mut Rng64) -> Matrix {
    Matrix::from_vec(r, c, (0..r * c).map(|_| s * rng.normal()).collect()).expect("shape matches data")
}

fn small_teacher(seed: u64) -> Teacher {
    let cfg = TeacherConfig { hidden: 16, depth: 2, ..Default::default() };
    let mut t = Teacher::new(&cfg, 2, &mut Rng64::seeded(seed, 0)).expect("valid teacher config");
    let mut rng = Rng64::seeded(seed, 1);
    // the trained-from-scratch head is zero; randomise it so every path carries gradient
    for w in t.net.layers_mut().last_mut().expect("teacher has layers").weight.data_mut() {
        *w = 0.2 * rng.normal();
    }
    t
}

fn small_student(variant: Variant, seed: u64) -> Student {
    let cfg = StudentConfig { latent: 3, width_mult: 2, depth: 1, variant, ..Default::default() };
    let mut s = Student::new(&cfg, 1, &mut Rng64::seeded(seed, 0)).expect("valid student config");
    let mut rng = Rng64::seeded(seed, 1);
    match &mut s.transition {
        Transition::Fdk { p, q, gamma } => {
            *p = rand_matrix(3, 3, 0.7, &mut rng);
            *q = rand_matrix(3, 3, 0.7, &mut rng);
            let head = gamma.layers_mut().last_mut().expect("gain net has layers");
            head.weight = rand_matrix(3, 6, 1.0, &mut rng);
            head.bias = vec![1.3, -0.2, 0.9];
        }
        Transition::Kdm { a } => *a = rand_matrix(3, 3, 0.7, &mut rng),
    }
    s
}

fn rand_batch(b: usize, d: usize, seed: u64) -> Batch {
    let mut rng = Rng64::seeded(seed, 2);
    Batch {
        priors: rand_matrix(b, d, 0.5, &mut rng),
        ctx: rand_matrix(b, CTX_DIM, 0.5, &mut rng),
        targets: rand_matrix(b, d, 0.5, &mut rng),
        weights: (0..b).map(|_| rng.uniform_range(1.0, 2.0)).collect(),
    }
}

fn ddpm_grad_error(seed: u64) -> dnk_core::Result<f64> {
    let t = small_teacher(seed);
    let d = t.traj_dim();
    let mut rng = Rng64::seeded(seed, 9);
    let x0 = rand_matrix(3, d, 1.0, &mut rng);
    let c = rand_matrix(3, CTX_DIM, 1.0, &mut rng);
    let eps = rand_matrix(3, d, 1.0, &mut rng);
    let ks = [1, 7, t.sched.n()];
    let (_, g) = ddpm_loss(&t, &x0, &c, &ks, &eps)?;
    grad_check(&flatten(&t.net.param_slices()), &flatten(&g.slices()), 1e-6, |p| {
        let mut tt = t.clone();
        unflatten_into(&mut tt.net.param_slices_mut(), p);
        ddpm_loss(&tt, &x0, &c, &ks, &eps).map(|r| r.0).unwrap_or(f64::NAN)
    })
}

fn student_grad_error(variant: Variant, term: &str, seed: u64) -> dnk_core::Result<f64> {
    let s = small_student(variant, seed);
    let batch = rand_batch(4, s.traj_dim(), seed);
    let w = match term {
        "total" => LossWeights::default(),
        t => LossWeights::only(t).expect("known loss term"),
    };
    let zt = s.encode(&batch.targets, &batch.ctx)?;
    let (_, g) = loss_with_latent_target(&s, &batch, &w, Some(&zt))?;
    grad_check(&flatten(&s.param_slices()), &flatten(&g.slices()), 1e-6, |p| {
        let mut m = s.clone();
        unflatten_into(&mut m.param_slices_mut(), p);
        loss_with_latent_target(&m, &batch, &w, Some(&zt)).map(|r| r.0.total).unwrap_or(f64::NAN)
    })
}

/// Worst relative gradient error over the seeds for the DDPM objective and
/// every student loss term (FDK), plus the full objective for both variants.
pub fn gradient_checks() -> Vec<Check> {
    let mut out = Vec::new();
    let worst = |f: &dyn Fn(u64) -> dnk_core::Result<f64>| -> f64 {
        (0..SEEDS).map(|s| f(s).unwrap_or(f64::INFINITY)).fold(0.0, f64::max)
    };
    out.push(Check::at_most("grad ddpm", worst(&ddpm_grad_error), GRAD_TOL));
    for term in ["rec", "lat", "pred", "act", "spec", "inv", "total"] {
        out.push(Check::at_most(
            format!("grad fdk {term}"),
            worst(&|s| student_grad_error(Variant::Fdk, term, s)),
            GRAD_TOL,
        ));
    }
    out.push(Check::at_most("grad kdm total", worst(&|s| student_grad_error(Variant::Kdm, "total", s)), GRAD_TOL));
    out
}

fn const_gains(l: usize, value: &[f64]) -> Mlp {
    let mut g = Mlp::init(&[l, 2 * l, l], Activation::Tanh, &mut Rng64::seeded(0, 0)).expect("valid widths");
    let head = g.layers_mut().last_mut().expect("gain net has layers");
    head.weight.data_mut().iter_mut().for_each(|x| *x = 0.0);
    head.bias.copy_from_slice(value);
    g
}

fn max_rel_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs() / y.abs().max(1.0)).fold(0.0, f64::max)
}

fn fdk_path_error() -> dnk_core::Result<f64> {
    let mut worst = 0.0f64;
    for seed in 0..SEEDS {
        let l = 6;
        let mut rng = Rng64::seeded(seed, 0);
        let t = Transition::Fdk {
            p: rand_matrix(l, l, 1.0, &mut rng),
            q: rand_matrix(l, l, 1.0, &mut rng),
            gamma: Mlp::init(&[l, 2 * l, l], Activation::Tanh, &mut rng)?,
        };
        let z: Vec<f64> = (0..l).map(|_| rng.normal()).collect();
        let a = t.apply(&Matrix::row_vector(&z))?;
        let b = t.operator(&z)?.matvec(&z)?;
        worst = worst.max(max_rel_diff(a.data(), &b));
    }
    Ok(worst)
}

fn stop_gradient_error() -> dnk_core::Result<f64> {
    let mut worst = 0.0f64;
    for seed in 0..SEEDS {
        let s = small_student(Variant::Fdk, seed);
        let batch = rand_batch(5, s.traj_dim(), seed + 100);
        let w = LossWeights::default();
        let snapshot = s.encode(&batch.targets, &batch.ctx)?;
        let (la, ga) = loss_total(&s, &batch, &w)?;
        let (lb, gb) = loss_with_latent_target(&s, &batch, &w, Some(&snapshot))?;
        worst = worst.max((la.total - lb.total).abs());
        for (x, y) in ga.slices().iter().zip(gb.slices()) {
            for (a, b) in x.iter().zip(y) {
                worst = worst.max((a - b).abs());
            }
        }
    }
    Ok(worst)
}

/// Factored versus operator form, identity parameters, KDM as unit-gain FDK,
/// and stop-gradient as constant substitution.
pub fn fdk_checks() -> Vec<Check> {
    let mut out = vec![Check::at_most("fdk factored vs operator", fdk_path_error().unwrap_or(f64::INFINITY), PATH_TOL)];

    let ident = Transition::Fdk { p: Matrix::identity(3), q: Matrix::identity(3), gamma: const_gains(3, &[1.0; 3]) };
    let z = Matrix::row_vector(&[0.3, -1.2, 2.5]);
    out.push(Check::new("fdk identity at P=Q=I, gains 1", ident.apply(&z).ok().as_ref() == Some(&z), "exact"));

    let mut rng = Rng64::seeded(8, 0);
    let l = 5;
    let a = rand_matrix(l, l, 1.0, &mut rng);
    let kdm = Transition::Kdm { a: a.clone() };
    let fdk = Transition::Fdk { p: a, q: Matrix::identity(l), gamma: const_gains(l, &[1.0; 5]) };
    let zb = rand_matrix(3, l, 1.0, &mut rng);
    let same = matches!((kdm.apply(&zb), fdk.apply(&zb)), (Ok(x), Ok(y)) if x == y);
    out.push(Check::new("kdm equals unit-gain fdk", same, "exact"));

    out.push(Check::at_most("stop-gradient substitution", stop_gradient_error().unwrap_or(f64::INFINITY), STOP_GRAD_TOL));
    out
}

/// Reweighting and statistics examples with exact expected values.
pub fn unit_checks() -> Vec<Check> {
    let mut out = vec![Check::exact(
        "quantile weights [10,20,30]",
        quantile_weights(&[10.0, 20.0, 30.0], 1.0).ok(),
        Some(vec![1.0, 1.5, 2.0]),
    )];
    match episode_stats(&[vec![1.0, 1.0], vec![0.5, 0.7]]) {
        Ok(s) => {
            let close = (s.worst_case - 0.6).abs() < 1e-12 && (s.sigma_ep - 0.05).abs() < 1e-12;
            out.push(Check::new(
                "episode stats worst case and sigma_ep",
                close,
                format!("worst_case {:?}, sigma_ep {:?}", s.worst_case, s.sigma_ep),
            ));
        }
        Err(e) => out.push(Check::new("episode stats worst case and sigma_ep", false, e.to_string())),
    }
    let v: Vec<f64> = (1..=100).map(f64::from).collect();
    out.push(Check::exact("latency p95 of 1..100", latency_stats(&v).ok().map(|s| s.p95), Some(95.0)));
    out
}

fn teacher_round_trip() -> crate::error::Result<bool> {
    let t = small_teacher(3);
    let prov = Provenance { config_hash: "0123456789abcdef".into(), seed: 9 };
    let path = Path::new("<memory>");
    let back = teacher_from_file(&ModelFile::decode(&teacher_to_file(&t, &prov).encode(), path)?, path)?;
    Ok(back.net == t.net && back.sched.betas() == t.sched.betas() && back.horizon == t.horizon && back.sampler == t.sampler)
}

fn student_round_trip(variant: Variant) -> crate::error::Result<bool> {
    let s = small_student(variant, 4);
    let prov = Provenance { config_hash: "fedcba9876543210".into(), seed: 1 };
    let path = Path::new("<memory>");
    let file = ModelFile::decode(&student_to_file(&s, &prov).encode(), path)?;
    Ok(student_from_file(&file, path)? == s && file.provenance(path)? == prov)
}

fn scorer_round_trip() -> crate::error::Result<bool> {
    let mut s = QualityScorer::new(2, &[5], &mut Rng64::seeded(2, 0))?;
    s.mean = 0.1 + 0.2;
    s.std = 1.0 / 3.0;
    let prov = Provenance { config_hash: "00".into(), seed: 0 };
    let path = Path::new("<memory>");
    Ok(scorer_from_file(&ModelFile::decode(&scorer_to_file(&s, &prov).encode(), path)?, path)? == s)
}

fn dataset_round_trip() -> crate::error::Result<bool> {
    let h = 2;
    let d = h * dnk_core::env::STEP_DIM;
    let mut rng = Rng64::seeded(5, 0);
    // records hold 32-bit floats, so draw values that survive the narrowing
    let mut f32_normal = move || rng.normal() as f32 as f64;
    let pairs = (0..3)
        .map(|_| {
            let values: Vec<f64> = (0..d).map(|_| f32_normal()).collect();
            let mut target: Vec<f64> = (0..d).map(|_| f32_normal() / 4.0).collect();
            target[..dnk_core::diffusion::FIXED_LEN].copy_from_slice(&values[..dnk_core::diffusion::FIXED_LEN]);
            DistillPair {
                prior: ConditionedPrior {
                    values,
                    fixed_mask: fixed_mask(h),
                    context: (0..CTX_DIM).map(|_| f32_normal()).collect(),
                    lambda: 0.5,
                },
                target,
                score: f32_normal(),
                weight: (1.0 + f32_normal().abs().min(1.0)) as f32 as f64,
            }
        })
        .collect();
    let ds = DistillDataset { horizon: h, n_steps: 20, beta: 1.0, seed: 11, config_hash: "abc".into(), pairs };
    Ok(decode_dataset(&encode_dataset(&ds)?, Path::new("<memory>"))? == ds)
}

fn config_round_trip() -> crate::error::Result<bool> {
    let mut c = RunConfig::default();
    c.apply_overrides(&["lr=0.000123", "temps=0.1,0.9", "temp_probs=0.4,0.6", "lr_final=none"])?;
    Ok(RunConfig::parse(&c.render(), Path::new("<memory>"))? == c)
}

pub fn serialization_checks() -> Vec<Check> {
    let flag = |name: &str, r: crate::error::Result<bool>| match r {
        Ok(ok) => Check::new(name, ok, "bit-exact"),
        Err(e) => Check::new(name, false, e.to_string()),
    };
    vec![
        flag("teacher model round trip", teacher_round_trip()),
        flag("fdk student model round trip", student_round_trip(Variant::Fdk)),
        flag("kdm student model round trip", student_round_trip(Variant::Kdm)),
        flag("scorer model round trip", scorer_round_trip()),
        flag("dataset round trip", dataset_round_trip()),
        flag("config round trip", config_round_trip()),
    ]
}

pub fn run_all() -> Vec<Check> {
    let mut all = gradient_checks();
    all.extend(fdk_checks());
    all.extend(unit_checks());
    all.extend(serialization_checks());
    all
}
