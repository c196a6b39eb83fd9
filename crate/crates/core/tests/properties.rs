use dnk_core::control::generate_candidates;
use dnk_core::env::{rollout, sample_solvable, Context, EnvConfig, ExpertReplay, SceneFamily};
use dnk_core::numkit::Rng64;
use dnk_core::quality::{quantile_weights, Selector};
use dnk_core::student::{Student, StudentConfig, Variant};
use proptest::prelude::*;

fn student() -> Student {
    let cfg = StudentConfig { latent: 8, width_mult: 2, variant: Variant::Fdk, ..Default::default() };
    Student::new(&cfg, 16, &mut Rng64::seeded(1, 0)).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn expert_replay_reaches_the_goal(seed in any::<u64>(), bimodal in any::<bool>()) {
        let env = EnvConfig::default();
        let family = if bimodal { SceneFamily::Bimodal } else { SceneFamily::Navigation };
        let (scene, plan) = sample_solvable(&env, family, &mut Rng64::seeded(seed, 0)).unwrap();
        let r = rollout(&scene, &mut ExpertReplay::new(plan), &env).unwrap();
        prop_assert!(r.success && !r.collided, "{:?}", r.final_distance);
    }

    #[test]
    fn candidate_prefix_is_independent_of_batch_size(seed in any::<u64>(), n in 1usize..12, extra in 1usize..6) {
        let env = EnvConfig::default();
        let (scene, _) = sample_solvable(&env, SceneFamily::Navigation, &mut Rng64::seeded(seed, 1)).unwrap();
        let ctx = Context::new(scene.start, &scene);
        let sel = Selector::Geometry(env.score);
        let s = student();
        let small = generate_candidates(&s, &sel, &ctx, &scene, n, 0.5, seed).unwrap();
        let big = generate_candidates(&s, &sel, &ctx, &scene, n + extra, 0.5, seed).unwrap();
        prop_assert_eq!(&small.trajectories[..], &big.trajectories[..n]);
        prop_assert_eq!(&small.scores[..], &big.scores[..n]);
    }

    #[test]
    fn quantile_weights_rank_and_bound(scores in prop::collection::vec(-50.0f64..50.0, 1..40), beta in 0.0f64..3.0) {
        let w = quantile_weights(&scores, beta).unwrap();
        prop_assert_eq!(w.len(), scores.len());
        for (i, a) in scores.iter().enumerate() {
            prop_assert!(w[i] >= 1.0 - 1e-12 && w[i] <= 1.0 + beta + 1e-12);
            for (j, b) in scores.iter().enumerate() {
                if a < b {
                    prop_assert!(w[i] < w[j] || beta == 0.0);
                }
            }
        }
    }
}
