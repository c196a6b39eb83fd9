//! Fixtures shared by the benchmarks: default-size networks with random
//! weights and a held-out scene.

use dnk_core::diffusion::{Teacher, TeacherConfig};
use dnk_core::env::{sample_solvable, Context, EnvConfig, Scene, SceneFamily};
use dnk_core::numkit::Rng64;
use dnk_core::student::{Student, StudentConfig, Variant};

pub const HORIZON: usize = 16;

pub fn teacher() -> Teacher {
    Teacher::new(&TeacherConfig::default(), HORIZON, &mut Rng64::seeded(1, 0)).expect("teacher")
}

pub fn student(variant: Variant) -> Student {
    let cfg = StudentConfig { variant, ..Default::default() };
    Student::new(&cfg, HORIZON, &mut Rng64::seeded(2, 0)).expect("student")
}

pub fn scene() -> (Scene, Context) {
    let env = EnvConfig::default();
    let (scene, _) = sample_solvable(&env, SceneFamily::Bimodal, &mut Rng64::seeded(3, 0)).expect("scene");
    let ctx = Context::new(scene.start, &scene);
    (scene, ctx)
}
