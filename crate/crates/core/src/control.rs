//! Batched one-step receding-horizon control shared by the teacher and the
//! student.

use std::time::{Duration, Instant};

use crate::diffusion::{argmax, candidate_priors, reverse_sample_batch, ConditionedPrior, Teacher};
use crate::env::{rollout, Action, Context, Controller, EnvConfig, EpisodeResult, PointMassState, Scene, Trajectory};
use crate::error::{DnkError, Result};
use crate::numkit::{derive_seed, Matrix, Rng64};
use crate::quality::Selector;
use crate::student::Student;

/// Output of one batched generator call.
#[derive(Clone, Debug)]
pub struct Generated {
    /// One normalised trajectory per prior.
    pub rows: Matrix,
    /// Sequential network passes over the whole batch.
    pub passes: usize,
}

/// Maps conditioned priors to candidate trajectories in one batch.
pub trait CandidateGenerator {
    fn label(&self) -> &'static str;
    fn horizon(&self) -> usize;
    /// Candidate `i` may draw only from `rngs[i]`.
    fn generate(&self, priors: &[ConditionedPrior], rngs: &mut [Rng64]) -> Result<Generated>;
}

impl CandidateGenerator for Teacher {
    fn label(&self) -> &'static str {
        "teacher"
    }

    fn horizon(&self) -> usize {
        self.horizon
    }

    fn generate(&self, priors: &[ConditionedPrior], rngs: &mut [Rng64]) -> Result<Generated> {
        Ok(Generated {
            rows: reverse_sample_batch(self, priors, rngs)?,
            passes: self.sched.n(),
        })
    }
}

impl CandidateGenerator for Student {
    fn label(&self) -> &'static str {
        "student"
    }

    fn horizon(&self) -> usize {
        self.horizon
    }

    fn generate(&self, priors: &[ConditionedPrior], _rngs: &mut [Rng64]) -> Result<Generated> {
        if priors.is_empty() {
            return Err(DnkError::Empty("student candidates"));
        }
        let x = Matrix::from_rows(&priors.iter().map(|p| p.values.as_slice()).collect::<Vec<_>>())?;
        let c = Matrix::from_rows(&priors.iter().map(|p| p.context.as_slice()).collect::<Vec<_>>())?;
        let (rows, counts) = self.forward_counted(&x, &c)?;
        debug_assert!(counts.encoder == counts.transition && counts.transition == counts.decoder);
        Ok(Generated { rows, passes: counts.encoder })
    }
}

#[derive(Clone, Debug)]
pub struct CandidateSet {
    pub priors: Vec<ConditionedPrior>,
    pub trajectories: Vec<Trajectory>,
    pub scores: Vec<f64>,
    /// Network passes the generator made over the batch.
    pub passes: usize,
    /// Generation plus scoring.
    pub elapsed: Duration,
}

impl CandidateSet {
    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }
}

/// Draws `n_cand` candidates for one context and scores them. Candidate `i`
/// uses stream `i` of `seed`, so each candidate is independent of the others.
pub fn generate_candidates(
    generator: &dyn CandidateGenerator,
    selector: &Selector,
    ctx: &Context,
    scene: &Scene,
    n_cand: usize,
    lambda: f64,
    seed: u64,
) -> Result<CandidateSet> {
    if n_cand == 0 {
        return Err(DnkError::InvalidArgument("n_cand must be positive".into()));
    }
    let t0 = Instant::now();
    let h = generator.horizon();
    let (priors, mut rngs) = candidate_priors(ctx, h, n_cand, lambda, seed)?;
    let out = generator.generate(&priors, &mut rngs)?;
    if out.rows.rows() != n_cand {
        return Err(DnkError::dim("generated candidates", n_cand, out.rows.rows()));
    }
    let trajectories = (0..n_cand)
        .map(|i| Trajectory::from_normalized(h, out.rows.row(i)))
        .collect::<Result<Vec<_>>>()?;
    if trajectories.iter().any(|t| !t.is_finite()) {
        return Err(DnkError::NonFinite("candidate trajectory"));
    }
    let scores = selector.score(&trajectories, ctx, scene)?;
    Ok(CandidateSet {
        priors,
        trajectories,
        scores,
        passes: out.passes,
        elapsed: t0.elapsed(),
    })
}

/// Highest-scoring candidate; ties go to the lowest index.
pub fn select(set: &CandidateSet) -> Result<usize> {
    if set.is_empty() {
        return Err(DnkError::Empty("select"));
    }
    Ok(argmax(&set.scores))
}

/// Replans every tick from the measured state and executes the first action
/// of the best candidate.
pub struct RecedingHorizon<'a> {
    pub generator: &'a dyn CandidateGenerator,
    pub selector: &'a Selector,
    pub n_cand: usize,
    pub lambda: f64,
    pub seed: u64,
    tick: u64,
    /// First action of the selected candidate at every tick, before clipping.
    pub planned: Vec<Action>,
    pub passes: Vec<usize>,
}

impl<'a> RecedingHorizon<'a> {
    pub fn new(generator: &'a dyn CandidateGenerator, selector: &'a Selector, n_cand: usize, lambda: f64, seed: u64) -> Self {
        Self {
            generator,
            selector,
            n_cand,
            lambda,
            seed,
            tick: 0,
            planned: Vec::new(),
            passes: Vec::new(),
        }
    }
}

impl Controller for RecedingHorizon<'_> {
    fn act(&mut self, state: &PointMassState, scene: &Scene) -> Result<Action> {
        let ctx = Context::new(*state, scene);
        let seed = derive_seed(self.seed, self.tick);
        self.tick += 1;
        let set = generate_candidates(self.generator, self.selector, &ctx, scene, self.n_cand, self.lambda, seed)?;
        let action = set.trajectories[select(&set)?].action(0);
        self.planned.push(action);
        self.passes.push(set.passes);
        Ok(action)
    }
}

/// One closed-loop episode with the given generator.
pub fn receding_horizon_run(
    scene: &Scene,
    generator: &dyn CandidateGenerator,
    selector: &Selector,
    n_cand: usize,
    lambda: f64,
    cfg: &EnvConfig,
    seed: u64,
) -> Result<EpisodeResult> {
    let mut ctl = RecedingHorizon::new(generator, selector, n_cand, lambda, seed);
    rollout(scene, &mut ctl, cfg)
}

/// Share of decisions that finished within the control period.
pub fn check_deadline(latencies_ms: &[f64], t_ctrl_ms: f64) -> Result<f64> {
    if !(t_ctrl_ms > 0.0) {
        return Err(DnkError::InvalidArgument(format!("control period {t_ctrl_ms} must be positive")));
    }
    if latencies_ms.is_empty() {
        return Err(DnkError::Empty("check_deadline"));
    }
    let met = latencies_ms.iter().filter(|&&l| l <= t_ctrl_ms).count();
    Ok(met as f64 / latencies_ms.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::TeacherConfig;
    use crate::env::{sample_solvable, ExpertPlan, Obstacle, SceneFamily};
    use crate::student::StudentConfig;
    use proptest::prelude::*;

    fn scene() -> Scene {
        Scene::new(
            PointMassState::at_rest([-1.2, 0.0]),
            [1.2, 0.0],
            vec![Obstacle { center: [0.0, 0.0], radius: 0.3 }],
            2.0,
        )
        .unwrap()
    }

    fn student() -> Student {
        let cfg = StudentConfig { latent: 8, width_mult: 2, ..Default::default() };
        Student::new(&cfg, 16, &mut Rng64::seeded(1, 0)).unwrap()
    }

    fn teacher() -> Teacher {
        let cfg = TeacherConfig { hidden: 32, depth: 2, n_steps: 5, ..Default::default() };
        Teacher::new(&cfg, 16, &mut Rng64::seeded(2, 0)).unwrap()
    }

    fn geometry() -> Selector {
        Selector::Geometry(EnvConfig::default().score)
    }

    fn set_with_scores(scores: &[f64]) -> CandidateSet {
        CandidateSet {
            priors: Vec::new(),
            trajectories: vec![Trajectory::zeros(1); scores.len()],
            scores: scores.to_vec(),
            passes: 1,
            elapsed: Duration::ZERO,
        }
    }

    /// Emits the expert plan from the plan state nearest the measured state,
    /// holding still after the plan ends.
    struct ExpertOracle {
        plan: ExpertPlan,
        horizon: usize,
    }

    impl CandidateGenerator for ExpertOracle {
        fn label(&self) -> &'static str {
            "expert"
        }

        fn horizon(&self) -> usize {
            self.horizon
        }

        fn generate(&self, priors: &[ConditionedPrior], _rngs: &mut [Rng64]) -> Result<Generated> {
            let mut rows = Vec::new();
            for p in priors {
                let pos = Context::from_vector(&p.context)?.state.pos;
                let dist = |k: &usize| {
                    let q = self.plan.states[*k].pos;
                    (q[0] - pos[0]).hypot(q[1] - pos[1])
                };
                let k0 = (0..self.plan.states.len()).min_by(|a, b| dist(a).total_cmp(&dist(b))).unwrap();
                let steps: Vec<_> = (k0..k0 + self.horizon)
                    .map(|k| match self.plan.actions.get(k) {
                        Some(a) => (self.plan.states[k], *a),
                        None => (*self.plan.states.last().unwrap(), Action::default()),
                    })
                    .collect();
                rows.push(Trajectory::from_steps(&steps)?.to_normalized());
            }
            Ok(Generated { rows: Matrix::from_rows(&rows)?, passes: 0 })
        }
    }

    #[test]
    fn singleton_candidate_set() {
        let s = scene();
        let set = generate_candidates(&student(), &geometry(), &Context::new(s.start, &s), &s, 1, 0.5, 3).unwrap();
        assert_eq!(set.len(), 1);
        assert_eq!(select(&set).unwrap(), 0);
    }

    #[test]
    fn candidates_do_not_depend_on_batch_composition() {
        let s = scene();
        let ctx = Context::new(s.start, &s);
        let st = student();
        let t = teacher();
        for g in [&st as &dyn CandidateGenerator, &t] {
            let big = generate_candidates(g, &geometry(), &ctx, &s, 8, 0.5, 42).unwrap();
            let small = generate_candidates(g, &geometry(), &ctx, &s, 3, 0.5, 42).unwrap();
            for i in 0..3 {
                assert_eq!(big.trajectories[i], small.trajectories[i], "{}", g.label());
            }
        }
    }

    #[test]
    fn candidates_are_distinct() {
        let s = scene();
        let ctx = Context::new(s.start, &s);
        let set = generate_candidates(&student(), &geometry(), &ctx, &s, 64, 0.5, 7).unwrap();
        for i in 0..64 {
            for j in 0..i {
                assert_ne!(set.trajectories[i], set.trajectories[j]);
            }
        }
    }

    #[test]
    fn student_makes_one_pass_teacher_makes_n() {
        let s = scene();
        let ctx = Context::new(s.start, &s);
        for n in [1, 16, 64] {
            let set = generate_candidates(&student(), &geometry(), &ctx, &s, n, 0.5, 0).unwrap();
            assert_eq!(set.passes, 1);
            let set = generate_candidates(&teacher(), &geometry(), &ctx, &s, n, 0.5, 0).unwrap();
            assert_eq!(set.passes, 5);
        }
    }

    #[test]
    fn select_examples() {
        assert_eq!(select(&set_with_scores(&[0.1, 0.9, 0.3])).unwrap(), 1);
        assert_eq!(select(&set_with_scores(&[2.0, 2.0, 2.0])).unwrap(), 0);
        assert!(select(&set_with_scores(&[])).is_err());
    }

    proptest! {
        #[test]
        fn select_is_invariant_to_increasing_maps(scores in prop::collection::vec(-5.0f64..5.0, 1..20)) {
            let a = select(&set_with_scores(&scores)).unwrap();
            let mapped: Vec<f64> = scores.iter().map(|s| s.exp() * 3.0 + 1.0).collect();
            prop_assert_eq!(a, select(&set_with_scores(&mapped)).unwrap());
        }

        #[test]
        fn deadline_fraction_is_a_fraction(lat in prop::collection::vec(0.0f64..100.0, 1..50), t in 0.1f64..100.0) {
            let f = check_deadline(&lat, t).unwrap();
            prop_assert!((0.0..=1.0).contains(&f));
        }
    }

    #[test]
    fn deadline_examples() {
        assert_eq!(check_deadline(&[1.0, 2.0, 3.0], 50.0).unwrap(), 1.0);
        assert_eq!(check_deadline(&[10.0, 60.0], 50.0).unwrap(), 0.5);
        assert!(check_deadline(&[], 50.0).is_err());
        assert!(check_deadline(&[1.0], 0.0).is_err());
    }

    #[test]
    fn expert_oracle_reaches_the_goal() {
        let cfg = EnvConfig::default();
        for i in 0..10 {
            let fam = if i % 2 == 0 { SceneFamily::Navigation } else { SceneFamily::Bimodal };
            let (scene, plan) = sample_solvable(&cfg, fam, &mut Rng64::seeded(5, i)).unwrap();
            let oracle = ExpertOracle { plan, horizon: cfg.horizon };
            let r = receding_horizon_run(&scene, &oracle, &geometry(), 1, 0.5, &cfg, i).unwrap();
            assert!(r.success, "scene {i}: {:?} at {}", r.failure, r.final_distance);
            assert_eq!(r.latencies_ms.len(), r.steps);
        }
    }

    #[test]
    fn executed_action_is_the_selected_first_action() {
        let cfg = EnvConfig::default();
        let s = scene();
        let st = student();
        let sel = geometry();
        let mut ctl = RecedingHorizon::new(&st, &sel, 8, 0.5, 9);
        let r = rollout(&s, &mut ctl, &cfg).unwrap();
        assert_eq!(ctl.planned.len(), r.actions.len());
        assert_eq!(r.latencies_ms.len(), r.steps);
        for (p, a) in ctl.planned.iter().zip(&r.actions) {
            assert_eq!(&p.clipped(cfg.plant.a_max), a);
        }
        // re-deciding at the first state reproduces the first plan bit for bit
        let set = generate_candidates(&st, &sel, &Context::new(s.start, &s), &s, 8, 0.5, derive_seed(9, 0)).unwrap();
        assert_eq!(set.trajectories[select(&set).unwrap()].action(0), ctl.planned[0]);
    }

    #[test]
    fn episodes_are_deterministic() {
        let cfg = EnvConfig::default();
        let s = scene();
        let st = student();
        let a = receding_horizon_run(&s, &st, &geometry(), 4, 0.5, &cfg, 3).unwrap();
        let b = receding_horizon_run(&s, &st, &geometry(), 4, 0.5, &cfg, 3).unwrap();
        assert_eq!(a.states, b.states);
        assert_eq!(a.actions, b.actions);
        assert_eq!(a.raw_return, b.raw_return);
    }

    struct Broken;

    impl CandidateGenerator for Broken {
        fn label(&self) -> &'static str {
            "broken"
        }

        fn horizon(&self) -> usize {
            16
        }

        fn generate(&self, priors: &[ConditionedPrior], _rngs: &mut [Rng64]) -> Result<Generated> {
            Ok(Generated { rows: Matrix::from_vec(priors.len(), 96, vec![f64::NAN; priors.len() * 96])?, passes: 1 })
        }
    }

    #[test]
    fn generator_failure_ends_the_episode() {
        let cfg = EnvConfig::default();
        let r = receding_horizon_run(&scene(), &Broken, &geometry(), 4, 0.5, &cfg, 0).unwrap();
        assert!(!r.success);
        assert_eq!(r.steps, 0);
        assert!(r.failure.is_some());
    }
}
