use dnk_core::control::{generate_candidates, receding_horizon_run};
use dnk_core::diffusion::{train_teacher, Teacher, TeacherConfig, TeacherExample, FIXED_LEN};
use dnk_core::distill_data::{generate_pairs, load_dataset, save_dataset, DistillConfig, DistillDataset};
use dnk_core::env::{generate_demos, Context, EnvConfig, SceneFamily};
use dnk_core::numkit::{Rng64, TrainOptions};
use dnk_core::quality::Selector;
use dnk_core::student::{evaluate_mse, train_student, LossWeights, Student, StudentConfig, Variant};

const H: usize = 16;

fn env() -> EnvConfig {
    EnvConfig::default()
}

fn tiny_teacher(env: &EnvConfig) -> (Teacher, Vec<f64>) {
    let demos = generate_demos(env, 48, 11).unwrap();
    let data: Vec<TeacherExample> =
        demos.iter().map(|d| TeacherExample { traj: d.traj.to_normalized(), ctx: d.context.to_vector() }).collect();
    let cfg = TeacherConfig { hidden: 48, depth: 2, n_steps: 8, ..Default::default() };
    let mut teacher = Teacher::new(&cfg, H, &mut Rng64::seeded(3, 0)).unwrap();
    let opts = TrainOptions { epochs: 20, batch_size: 16, lr: 2e-3, seed: 5, lr_final: None };
    let curve = train_teacher(&mut teacher, &data, &opts).unwrap();
    (teacher, curve)
}

fn pairs(teacher: &Teacher, env: &EnvConfig, count: usize, seed: u64) -> DistillDataset {
    let dc = DistillConfig { count, ..Default::default() };
    generate_pairs(teacher, &Selector::Geometry(env.score), env, &dc, seed).unwrap()
}

fn student(variant: Variant) -> Student {
    let cfg = StudentConfig { latent: 12, width_mult: 2, variant, ..Default::default() };
    Student::new(&cfg, H, &mut Rng64::seeded(8, 0)).unwrap()
}

#[test]
fn teacher_to_student_to_closed_loop() {
    let env = env();
    let (teacher, curve) = tiny_teacher(&env);
    assert!(curve.last().unwrap() < curve.first().unwrap(), "{curve:?}");

    let train = pairs(&teacher, &env, 96, 21);
    let held = pairs(&teacher, &env, 32, 22);
    for p in &train.pairs {
        assert_eq!(&p.target[..FIXED_LEN], &p.prior.values[..FIXED_LEN]);
        assert!((1.0..=1.0 + train.beta).contains(&p.weight));
    }

    let mut s = student(Variant::Fdk);
    let before = evaluate_mse(&s, &held.pairs).unwrap();
    let opts = TrainOptions { epochs: 30, batch_size: 16, lr: 1e-3, seed: 9, lr_final: None };
    let report = train_student(&mut s, &train, &LossWeights::default(), &opts).unwrap();
    assert_eq!(report.curve.len(), 30);
    let after = evaluate_mse(&s, &held.pairs).unwrap();
    assert!(after < before, "held-out mse {before} -> {after}");

    let mut rng = Rng64::seeded(40, 0);
    let (scene, _) = dnk_core::env::sample_solvable(&env, SceneFamily::Navigation, &mut rng).unwrap();
    let sel = Selector::Geometry(env.score);
    let a = receding_horizon_run(&scene, &s, &sel, 8, 0.5, &env, 77).unwrap();
    let b = receding_horizon_run(&scene, &s, &sel, 8, 0.5, &env, 77).unwrap();
    assert!(a.failure.is_none());
    assert_eq!(a.latencies_ms.len(), a.steps);
    assert_eq!(a.actions, b.actions);
    assert_eq!(a.raw_return.to_bits(), b.raw_return.to_bits());
}

#[test]
fn dataset_file_feeds_training_like_memory_at_f32() {
    let env = env();
    let (teacher, _) = tiny_teacher(&env);
    let mut ds = pairs(&teacher, &env, 24, 31);
    for p in &mut ds.pairs {
        for v in p.prior.values.iter_mut().chain(p.prior.context.iter_mut()).chain(p.target.iter_mut()) {
            *v = *v as f32 as f64;
        }
        p.prior.lambda = p.prior.lambda as f32 as f64;
        p.score = p.score as f32 as f64;
        p.weight = p.weight as f32 as f64;
    }
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.dnkd");
    save_dataset(&ds, &path).unwrap();
    let back = load_dataset(&path).unwrap();
    assert_eq!(back.pairs.len(), ds.pairs.len());

    let opts = TrainOptions { epochs: 3, batch_size: 8, lr: 1e-3, seed: 2, lr_final: None };
    let mut a = student(Variant::Kdm);
    let mut b = student(Variant::Kdm);
    let ra = train_student(&mut a, &ds, &LossWeights::default(), &opts).unwrap();
    let rb = train_student(&mut b, &back, &LossWeights::default(), &opts).unwrap();
    let bits = |r: &dnk_core::student::StudentReport| r.curve.iter().map(|c| c.total.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&ra), bits(&rb));
}

#[test]
fn teacher_and_student_share_priors_for_one_context() {
    let env = env();
    let (teacher, _) = tiny_teacher(&env);
    let s = student(Variant::Fdk);
    let mut rng = Rng64::seeded(50, 0);
    let (scene, _) = dnk_core::env::sample_solvable(&env, SceneFamily::Bimodal, &mut rng).unwrap();
    let ctx = Context::new(scene.start, &scene);
    let sel = Selector::Geometry(env.score);
    let t = generate_candidates(&teacher, &sel, &ctx, &scene, 6, 0.5, 4).unwrap();
    let u = generate_candidates(&s, &sel, &ctx, &scene, 6, 0.5, 4).unwrap();
    assert_eq!(t.priors, u.priors);
    assert_eq!(t.passes, 8);
    assert_eq!(u.passes, 1);
}
