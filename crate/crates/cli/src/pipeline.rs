//! Pipeline stages. Each stage reads the artifacts of its upstream stages
//! from the output directory, checks their provenance and writes its own.

use std::path::Path;
use std::time::Instant;

use dnk_core::control::{generate_candidates, receding_horizon_run, select, CandidateGenerator};
use dnk_core::diffusion::{train_teacher, Teacher, TeacherExample};
use dnk_core::distill_data::{generate_pairs, load_dataset, save_dataset, DistillDataset};
use dnk_core::env::{rollout, sample_solvable, Context, Demo, EnvConfig, ExpertPlan, ExpertReplay, Scene, SceneFamily, Trajectory};
use dnk_core::metrics::{latency_stats, mode_coverage, pca_candidates, LatencyStats, PcaProjection};
use dnk_core::numkit::{derive_seed, Rng64};
use dnk_core::quality::{scorer_dataset, train_scorer, QualityScorer, ScorerReport, Selector};
use dnk_core::student::{train_student, Student, StudentReport, Variant};

use crate::artifacts::{
    create_with_provenance, read_demos, read_provenance, write_decisions, write_demos, write_episodes, EpisodeRow,
    Layout,
};
use crate::config::{RunConfig, SelectorKind, Stage};
use crate::error::{CliError, Result};
use crate::modelio::{
    scorer_from_file, scorer_to_file, student_from_file, student_to_file, teacher_from_file, teacher_to_file,
    ModelFile, Provenance,
};

const STREAM_DEMOS: u64 = 1;
const STREAM_TEACHER: u64 = 2;
const STREAM_SCORER: u64 = 3;
const STREAM_DISTILL: u64 = 4;
const STREAM_STUDENT: u64 = 5;
const STREAM_EVAL_SCENES: u64 = 6;
const STREAM_CONTROL: u64 = 7;
const STREAM_BENCH: u64 = 8;
const STREAM_PCA: u64 = 9;

/// Share of the scorer windows held out for its rank-correlation check.
const SCORER_HOLDOUT: f64 = 0.1;

pub fn provenance(cfg: &RunConfig, stage: Stage) -> Provenance {
    Provenance { config_hash: cfg.stage_hash(stage), seed: cfg.seed }
}

fn log(msg: impl AsRef<str>) {
    eprintln!("[dnk] {}", msg.as_ref());
}

fn require(path: &Path, artifact: &'static str, producer: &'static str) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(CliError::MissingArtifact { artifact, path: path.into(), producer })
    }
}

fn check_provenance(path: &Path, found: &Provenance, cfg: &RunConfig, stage: Stage) -> Result<()> {
    let expected = provenance(cfg, stage);
    if *found != expected {
        return Err(CliError::ConfigMismatch {
            path: path.into(),
            expected: format!("{} (seed {})", expected.config_hash, expected.seed),
            found: format!("{} (seed {})", found.config_hash, found.seed),
        });
    }
    Ok(())
}

fn ensure_dir(layout: &Layout) -> Result<()> {
    std::fs::create_dir_all(&layout.dir).map_err(|e| CliError::io(&layout.dir, e))
}

/// Writes the resolved configuration next to the artifacts and logs its hash.
pub fn record_config(cfg: &RunConfig, command: &str) -> Result<Layout> {
    let layout = Layout::new(&cfg.out_dir);
    ensure_dir(&layout)?;
    let path = layout.resolved_config();
    std::fs::write(&path, cfg.render()).map_err(|e| CliError::io(&path, e))?;
    log(format!("{command}: config_hash={} seed={} out_dir={}", cfg.hash(), cfg.seed, layout.dir.display()));
    Ok(layout)
}

pub fn gen_demos(cfg: &RunConfig) -> Result<Vec<Demo>> {
    let layout = Layout::new(&cfg.out_dir);
    ensure_dir(&layout)?;
    let demos = dnk_core::env::generate_demos(&cfg.env(), cfg.demos, derive_seed(cfg.seed, STREAM_DEMOS))?;
    write_demos(&layout.demos(), &demos, &provenance(cfg, Stage::Demos))?;
    log(format!("wrote {} demos to {}", demos.len(), layout.demos().display()));
    Ok(demos)
}

pub fn load_demos(cfg: &RunConfig) -> Result<Vec<Demo>> {
    let path = Layout::new(&cfg.out_dir).demos();
    require(&path, "demonstrations", "gen-demos")?;
    check_provenance(&path, &read_provenance(&path)?, cfg, Stage::Demos)?;
    read_demos(&path)
}

pub fn train_teacher_stage(cfg: &RunConfig) -> Result<(Teacher, Vec<f64>)> {
    let layout = Layout::new(&cfg.out_dir);
    let demos = load_demos(cfg)?;
    let data: Vec<TeacherExample> =
        demos.iter().map(|d| TeacherExample { traj: d.traj.to_normalized(), ctx: d.context.to_vector() }).collect();
    let seed = derive_seed(cfg.seed, STREAM_TEACHER);
    let mut teacher = Teacher::new(&cfg.teacher_config(), cfg.horizon, &mut Rng64::seeded(seed, 0))?;
    let mut opts = cfg.teacher_train();
    opts.seed = seed;
    let t0 = Instant::now();
    let curve = train_teacher(&mut teacher, &data, &opts)?;
    log(format!(
        "teacher: {} epochs in {:.1}s, loss {:.4} -> {:.4}",
        curve.len(),
        t0.elapsed().as_secs_f64(),
        curve.first().copied().unwrap_or(f64::NAN),
        curve.last().copied().unwrap_or(f64::NAN)
    ));
    let prov = provenance(cfg, Stage::Teacher);
    teacher_to_file(&teacher, &prov).save(&layout.teacher())?;
    write_curve(&layout.dir.join("teacher_curve.csv"), &["epoch", "loss"], curve.iter().map(|l| vec![*l]), &prov)?;
    Ok((teacher, curve))
}

pub fn load_teacher(cfg: &RunConfig) -> Result<Teacher> {
    let path = Layout::new(&cfg.out_dir).teacher();
    require(&path, "teacher model", "train-teacher")?;
    let f = ModelFile::load(&path)?;
    check_provenance(&path, &f.provenance(&path)?, cfg, Stage::Teacher)?;
    teacher_from_file(&f, &path)
}

pub fn train_scorer_stage(cfg: &RunConfig) -> Result<(QualityScorer, ScorerReport)> {
    let layout = Layout::new(&cfg.out_dir);
    let demos = load_demos(cfg)?;
    let windows: Vec<(Trajectory, Scene)> =
        demos.iter().take(cfg.scorer_windows).map(|d| (d.traj.clone(), d.scene.clone())).collect();
    let seed = derive_seed(cfg.seed, STREAM_SCORER);
    let data = scorer_dataset(&windows, cfg.scorer_perturbed, &cfg.env(), seed)?;
    let mut opts = cfg.scorer_train();
    opts.seed = seed;
    let (scorer, report) = train_scorer(&data, &cfg.scorer_hidden, cfg.horizon, SCORER_HOLDOUT, &opts)?;
    log(format!(
        "scorer: {} examples, held-out Spearman {:.3}{}",
        data.len(),
        report.holdout_spearman,
        if report.degenerate { " (degenerate scores)" } else { "" }
    ));
    let prov = provenance(cfg, Stage::Scorer);
    scorer_to_file(&scorer, &prov).save(&layout.scorer())?;
    write_curve(&layout.dir.join("scorer_curve.csv"), &["epoch", "loss"], report.loss_curve.iter().map(|l| vec![*l]), &prov)?;
    Ok((scorer, report))
}

pub fn load_scorer(cfg: &RunConfig) -> Result<QualityScorer> {
    let path = Layout::new(&cfg.out_dir).scorer();
    require(&path, "quality scorer", "train-scorer")?;
    let f = ModelFile::load(&path)?;
    check_provenance(&path, &f.provenance(&path)?, cfg, Stage::Scorer)?;
    scorer_from_file(&f, &path)
}

/// Selector named by `kind`; the learned one is read from the output directory.
pub fn build_selector(cfg: &RunConfig, kind: SelectorKind) -> Result<Selector> {
    Ok(match kind {
        SelectorKind::Geometry => Selector::Geometry(cfg.env().score),
        SelectorKind::Learned => Selector::Learned(load_scorer(cfg)?),
    })
}

pub fn distill_stage(cfg: &RunConfig) -> Result<DistillDataset> {
    let layout = Layout::new(&cfg.out_dir);
    let teacher = load_teacher(cfg)?;
    let selector = build_selector(cfg, cfg.selector)?;
    let t0 = Instant::now();
    let mut ds = generate_pairs(&teacher, &selector, &cfg.env(), &cfg.distill_config(), derive_seed(cfg.seed, STREAM_DISTILL))?;
    ds.seed = cfg.seed;
    ds.config_hash = cfg.stage_hash(Stage::Dataset);
    save_dataset(&ds, &layout.dataset())?;
    log(format!("dataset: {} pairs in {:.1}s", ds.len(), t0.elapsed().as_secs_f64()));
    Ok(ds)
}

pub fn load_distill(cfg: &RunConfig) -> Result<DistillDataset> {
    let path = Layout::new(&cfg.out_dir).dataset();
    require(&path, "distillation dataset", "distill-data")?;
    let ds = load_dataset(&path)?;
    let found = Provenance { config_hash: ds.config_hash.clone(), seed: ds.seed };
    check_provenance(&path, &found, cfg, Stage::Dataset)?;
    Ok(ds)
}

pub fn train_student_stage(cfg: &RunConfig, variant: Variant) -> Result<(Student, StudentReport)> {
    let layout = Layout::new(&cfg.out_dir);
    let ds = load_distill(cfg)?;
    let mut scfg = cfg.student_config();
    scfg.variant = variant;
    // Both variants start from the same seed so they differ only in the transition.
    let seed = derive_seed(cfg.seed, STREAM_STUDENT);
    let mut student = Student::new(&scfg, cfg.horizon, &mut Rng64::seeded(seed, 0))?;
    let mut opts = cfg.student_train();
    opts.seed = seed;
    let t0 = Instant::now();
    let report = train_student(&mut student, &ds, &cfg.loss_weights(), &opts)?;
    let last = report.curve.last().cloned().unwrap_or_default();
    log(format!(
        "student {}: {} epochs in {:.1}s, total {:.5} pred {:.5}",
        variant.tag(),
        report.curve.len(),
        t0.elapsed().as_secs_f64(),
        last.total,
        last.pred
    ));
    let prov = provenance(cfg, Stage::Student);
    student_to_file(&student, &prov).save(&layout.student(variant.tag()))?;
    write_curve(
        &layout.student_curve(variant.tag()),
        &["epoch", "rec", "lat", "pred", "act", "spec", "inv", "total"],
        report.curve.iter().map(|b| vec![b.rec, b.lat, b.pred, b.act, b.spec, b.inv, b.total]),
        &prov,
    )?;
    Ok((student, report))
}

pub fn load_student(cfg: &RunConfig, variant: Variant) -> Result<Student> {
    let path = Layout::new(&cfg.out_dir).student(variant.tag());
    require(&path, "student model", "train-student")?;
    let f = ModelFile::load(&path)?;
    check_provenance(&path, &f.provenance(&path)?, cfg, Stage::Student)?;
    let s = student_from_file(&f, &path)?;
    if s.variant() != variant {
        return Err(CliError::Model { path, detail: format!("expected a {} student", variant.tag()) });
    }
    Ok(s)
}

fn write_curve(path: &Path, header: &[&str], rows: impl Iterator<Item = Vec<f64>>, prov: &Provenance) -> Result<()> {
    let mut w = create_with_provenance(path, prov)?;
    w.write_record(header).map_err(|e| CliError::csv(path, e))?;
    for (i, r) in rows.enumerate() {
        let mut rec = vec![i.to_string()];
        rec.extend(r.iter().map(|v| format!("{v:?}")));
        w.write_record(&rec).map_err(|e| CliError::csv(path, e))?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

/// Candidate generator selected on the command line.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GeneratorKind {
    Teacher,
    Student(Variant),
}

impl GeneratorKind {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "teacher" => Some(GeneratorKind::Teacher),
            "student" | "fdk" => Some(GeneratorKind::Student(Variant::Fdk)),
            "kdm" => Some(GeneratorKind::Student(Variant::Kdm)),
            _ => None,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            GeneratorKind::Teacher => "teacher",
            GeneratorKind::Student(v) => v.tag(),
        }
    }
}

/// A loaded generator, shareable across worker threads.
pub enum Generator {
    Teacher(Teacher),
    Student(Student),
}

impl Generator {
    pub fn load(cfg: &RunConfig, kind: GeneratorKind) -> Result<Self> {
        Ok(match kind {
            GeneratorKind::Teacher => Generator::Teacher(load_teacher(cfg)?),
            GeneratorKind::Student(v) => Generator::Student(load_student(cfg, v)?),
        })
    }

    pub fn as_dyn(&self) -> &dyn CandidateGenerator {
        match self {
            Generator::Teacher(t) => t,
            Generator::Student(s) => s,
        }
    }
}

/// Scene distribution for evaluation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Family {
    /// Bimodal scenes with probability `bimodal_fraction`, like the demos.
    Mixed,
    Navigation,
    Bimodal,
}

impl Family {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "mixed" => Some(Family::Mixed),
            "navigation" => Some(Family::Navigation),
            "bimodal" => Some(Family::Bimodal),
            _ => None,
        }
    }

    pub fn tag(self) -> &'static str {
        match self {
            Family::Mixed => "mixed",
            Family::Navigation => "navigation",
            Family::Bimodal => "bimodal",
        }
    }

    fn code(self) -> u64 {
        match self {
            Family::Mixed => 0,
            Family::Navigation => 1,
            Family::Bimodal => 2,
        }
    }
}

/// Held-out scenes for evaluation seed `eval_seed`, with the expert plan that
/// solves each. They come from streams disjoint from the demonstrations.
pub fn eval_scenes(cfg: &RunConfig, family: Family, eval_seed: u64, count: usize) -> Result<Vec<(Scene, ExpertPlan)>> {
    let env = cfg.env();
    let base = derive_seed(derive_seed(cfg.seed, STREAM_EVAL_SCENES), eval_seed.wrapping_mul(3).wrapping_add(family.code()));
    (0..count)
        .map(|i| {
            let mut rng = Rng64::seeded(base, i as u64);
            let fam = match family {
                Family::Navigation => SceneFamily::Navigation,
                Family::Bimodal => SceneFamily::Bimodal,
                Family::Mixed if rng.bernoulli(env.bimodal_fraction) => SceneFamily::Bimodal,
                Family::Mixed => SceneFamily::Navigation,
            };
            Ok(sample_solvable(&env, fam, &mut rng)?)
        })
        .collect()
}

/// Mean raw return of the expert replaying its own plans on `scenes`.
pub fn expert_mean_return(scenes: &[(Scene, ExpertPlan)], env: &EnvConfig) -> Result<f64> {
    let mut total = 0.0;
    for (scene, plan) in scenes {
        total += rollout(scene, &mut ExpertReplay::new(plan.clone()), env)?.raw_return;
    }
    let mean = total / scenes.len() as f64;
    if !(mean > 0.0) {
        return Err(CliError::Core(dnk_core::DnkError::InvalidArgument(format!(
            "expert mean return {mean} cannot normalise returns"
        ))));
    }
    Ok(mean)
}

/// Result of evaluating one generator over every evaluation seed.
#[derive(Clone, Debug)]
pub struct Evaluation {
    pub label: String,
    pub episodes: Vec<EpisodeRow>,
    /// `(seed, scene, tick, latency_ms)` for every decision.
    pub decisions: Vec<(u64, usize, usize, f64)>,
}

impl Evaluation {
    pub fn success_rate(&self) -> f64 {
        self.episodes.iter().filter(|e| e.success).count() as f64 / self.episodes.len() as f64
    }

    pub fn mean_normalized_return(&self) -> f64 {
        self.episodes.iter().map(|e| e.normalized_return).sum::<f64>() / self.episodes.len() as f64
    }

    /// Mean normalised return of each evaluation seed, in seed order.
    pub fn per_seed_means(&self) -> Vec<(u64, f64)> {
        let mut out: Vec<(u64, f64, usize)> = Vec::new();
        for e in &self.episodes {
            match out.iter_mut().find(|(s, _, _)| *s == e.seed) {
                Some(slot) => {
                    slot.1 += e.normalized_return;
                    slot.2 += 1;
                }
                None => out.push((e.seed, e.normalized_return, 1)),
            }
        }
        out.into_iter().map(|(s, t, n)| (s, t / n as f64)).collect()
    }
}

#[derive(Clone, Debug)]
pub struct EvalOptions {
    pub generator: GeneratorKind,
    pub selector: SelectorKind,
    pub family: Family,
    pub label: Option<String>,
}

impl EvalOptions {
    pub fn label(&self) -> String {
        self.label.clone().unwrap_or_else(|| format!("{}_{}", self.generator.label(), self.family.tag()))
    }
}

/// Closed-loop episodes on `cfg.episodes` held-out scenes for every seed in
/// `cfg.eval_seeds`. Episode `i` of seed `s` uses the same scene and the
/// same controller seed whatever the generator, so generators are compared
/// on identical draws. Results do not depend on `cfg.threads`.
pub fn evaluate(cfg: &RunConfig, opts: &EvalOptions) -> Result<Evaluation> {
    let layout = Layout::new(&cfg.out_dir);
    ensure_dir(&layout)?;
    let generator = Generator::load(cfg, opts.generator)?;
    let selector = build_selector(cfg, opts.selector)?;
    let env = cfg.env();
    let label = opts.label();
    let mut episodes = Vec::new();
    let mut decisions = Vec::new();
    let t0 = Instant::now();
    for &s in &cfg.eval_seeds {
        let scenes = eval_scenes(cfg, opts.family, s, cfg.episodes)?;
        let expert = expert_mean_return(&scenes, &env)?;
        let ctrl_base = derive_seed(derive_seed(cfg.seed, STREAM_CONTROL), s);
        let run = |i: usize| {
            receding_horizon_run(
                &scenes[i].0,
                generator.as_dyn(),
                &selector,
                cfg.n_cand,
                cfg.lambda_infer,
                &env,
                derive_seed(ctrl_base, i as u64),
            )
        };
        let results = parallel_map(scenes.len(), cfg.threads, run)?;
        for (i, r) in results.into_iter().enumerate() {
            if let Some(f) = &r.failure {
                log(format!("{label}: seed {s} scene {i} ended by generator failure: {f}"));
            }
            decisions.extend(r.latencies_ms.iter().enumerate().map(|(k, ms)| (s, i, k, *ms)));
            episodes.push(EpisodeRow {
                seed: s,
                scene: i,
                success: r.success,
                collided: r.collided,
                failed: r.failure.is_some(),
                steps: r.steps,
                raw_return: r.raw_return,
                normalized_return: r.normalized_return(expert),
            });
        }
    }
    let ev = Evaluation { label: label.clone(), episodes, decisions };
    let prov = provenance(cfg, Stage::Eval);
    write_episodes(&layout.episodes(&label), &ev.episodes, &prov)?;
    write_decisions(&layout.decisions(&label), &ev.decisions, &prov)?;
    log(format!(
        "{label}: {} episodes in {:.1}s, success {:.3}, mean normalised return {:.4}",
        ev.episodes.len(),
        t0.elapsed().as_secs_f64(),
        ev.success_rate(),
        ev.mean_normalized_return()
    ));
    Ok(ev)
}

/// Runs `f(0..n)` on up to `threads` scoped workers, keeping index order.
fn parallel_map<T, F>(n: usize, threads: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> dnk_core::Result<T> + Sync,
{
    if threads <= 1 || n <= 1 {
        return Ok((0..n).map(&f).collect::<dnk_core::Result<Vec<_>>>()?);
    }
    let workers = threads.min(n);
    let mut slots: Vec<Option<dnk_core::Result<T>>> = (0..n).map(|_| None).collect();
    std::thread::scope(|scope| {
        for (w, chunk) in slots.chunks_mut(n.div_ceil(workers)).enumerate() {
            let f = &f;
            let start = w * n.div_ceil(workers);
            scope.spawn(move || {
                for (j, slot) in chunk.iter_mut().enumerate() {
                    *slot = Some(f(start + j));
                }
            });
        }
    });
    Ok(slots.into_iter().map(|s| s.expect("worker filled every slot")).collect::<dnk_core::Result<Vec<_>>>()?)
}

/// Open-loop decision timing for one generator.
#[derive(Clone, Debug)]
pub struct LatencyRow {
    pub method: String,
    pub stats: LatencyStats,
    pub deadline_fraction: f64,
    pub passes_per_decision: usize,
    pub samples_ms: Vec<f64>,
}

pub const BENCH_HEADER: [&str; 7] =
    ["method", "samples", "mean_ms", "std_ms", "p95_ms", "deadline_fraction", "passes_per_decision"];

/// Times `cfg.latency_decisions` full decisions (generation and selection)
/// per generator at `cfg.n_cand` candidates, on start states of held-out
/// scenes. Three untimed decisions warm each generator up first.
pub fn bench_latency(cfg: &RunConfig, kinds: &[GeneratorKind], selector: SelectorKind) -> Result<Vec<LatencyRow>> {
    let layout = Layout::new(&cfg.out_dir);
    ensure_dir(&layout)?;
    let selector = build_selector(cfg, selector)?;
    let scenes = eval_scenes(cfg, Family::Mixed, u64::MAX, cfg.latency_decisions.clamp(1, 50))?;
    let seed = derive_seed(cfg.seed, STREAM_BENCH);
    let mut rows = Vec::new();
    for &kind in kinds {
        let generator = Generator::load(cfg, kind)?;
        let mut samples = Vec::with_capacity(cfg.latency_decisions);
        let mut passes = 0;
        for i in 0..cfg.latency_decisions + 3 {
            let scene = &scenes[i % scenes.len()].0;
            let ctx = Context::new(scene.start, scene);
            let t0 = Instant::now();
            let set = generate_candidates(generator.as_dyn(), &selector, &ctx, scene, cfg.n_cand, cfg.lambda_infer, derive_seed(seed, i as u64))?;
            std::hint::black_box(select(&set)?);
            let ms = t0.elapsed().as_secs_f64() * 1e3;
            passes = set.passes;
            if i >= 3 {
                samples.push(ms);
            }
        }
        let stats = latency_stats(&samples)?;
        let deadline_fraction = dnk_core::control::check_deadline(&samples, cfg.t_ctrl_ms)?;
        log(format!(
            "latency {}: mean {:.3} ms, p95 {:.3} ms, {} passes, deadline met {:.3}",
            kind.label(),
            stats.mean,
            stats.p95,
            passes,
            deadline_fraction
        ));
        rows.push(LatencyRow { method: kind.label().into(), stats, deadline_fraction, passes_per_decision: passes, samples_ms: samples });
    }
    let path = layout.bench_latency();
    let mut w = create_with_provenance(&path, &provenance(cfg, Stage::Eval))?;
    w.write_record(BENCH_HEADER).map_err(|e| CliError::csv(&path, e))?;
    for r in &rows {
        w.write_record([
            r.method.clone(),
            r.samples_ms.len().to_string(),
            format!("{:?}", r.stats.mean),
            format!("{:?}", r.stats.std),
            format!("{:?}", r.stats.p95),
            format!("{:?}", r.deadline_fraction),
            r.passes_per_decision.to_string(),
        ])
        .map_err(|e| CliError::csv(&path, e))?;
    }
    w.flush().map_err(|e| CliError::io(&path, e))?;
    Ok(rows)
}

/// Candidate geometry on one bimodal scene.
#[derive(Clone, Debug)]
pub struct SceneModes {
    pub teacher: (f64, f64),
    pub student: (f64, f64),
    pub projection: PcaProjection,
}

impl SceneModes {
    pub fn teacher_minority(&self) -> f64 {
        self.teacher.0.min(self.teacher.1)
    }

    pub fn student_minority(&self) -> f64 {
        self.student.0.min(self.student.1)
    }
}

pub const MODES_HEADER: [&str; 8] = [
    "scene",
    "teacher_left",
    "teacher_right",
    "student_left",
    "student_right",
    "explained_pc1",
    "explained_pc2",
    "hull_overlap",
];

pub const PCA_COORDS_HEADER: [&str; 5] = ["scene", "set", "index", "pc1", "pc2"];

/// Teacher and student candidates from identical priors at the start of
/// `count` held-out bimodal scenes: detour-side shares and the pooled PCA
/// projection of each scene.
pub fn pca_stage(cfg: &RunConfig, variant: Variant, selector: SelectorKind, count: usize) -> Result<Vec<SceneModes>> {
    let layout = Layout::new(&cfg.out_dir);
    ensure_dir(&layout)?;
    let teacher = load_teacher(cfg)?;
    let student = load_student(cfg, variant)?;
    let selector = build_selector(cfg, selector)?;
    let base = derive_seed(cfg.seed, STREAM_PCA);
    let scenes = eval_scenes(cfg, Family::Bimodal, u64::MAX - 1, count)?;
    let mut out = Vec::with_capacity(count);
    for (i, (scene, _)) in scenes.iter().enumerate() {
        let ctx = Context::new(scene.start, scene);
        let seed = derive_seed(base, i as u64);
        let t = generate_candidates(&teacher, &selector, &ctx, scene, cfg.n_cand, cfg.lambda_infer, seed)?;
        let s = generate_candidates(&student, &selector, &ctx, scene, cfg.n_cand, cfg.lambda_infer, seed)?;
        out.push(SceneModes {
            teacher: mode_coverage(&t.trajectories, scene)?,
            student: mode_coverage(&s.trajectories, scene)?,
            projection: pca_candidates(&s.trajectories, &t.trajectories)?,
        });
    }
    let prov = provenance(cfg, Stage::Eval);
    let path = layout.modes();
    let mut w = create_with_provenance(&path, &prov)?;
    w.write_record(MODES_HEADER).map_err(|e| CliError::csv(&path, e))?;
    for (i, m) in out.iter().enumerate() {
        let p = &m.projection;
        let vals = [m.teacher.0, m.teacher.1, m.student.0, m.student.1, p.explained[0], p.explained[1], p.hull_overlap];
        let mut rec = vec![i.to_string()];
        rec.extend(vals.iter().map(|v| format!("{v:?}")));
        w.write_record(&rec).map_err(|e| CliError::csv(&path, e))?;
    }
    w.flush().map_err(|e| CliError::io(&path, e))?;

    let path = layout.pca_coords();
    let mut w = create_with_provenance(&path, &prov)?;
    w.write_record(PCA_COORDS_HEADER).map_err(|e| CliError::csv(&path, e))?;
    for (i, m) in out.iter().enumerate() {
        for (set, pts) in [("student", &m.projection.student), ("teacher", &m.projection.teacher)] {
            for (j, q) in pts.iter().enumerate() {
                w.write_record([i.to_string(), set.into(), j.to_string(), format!("{:?}", q[0]), format!("{:?}", q[1])])
                    .map_err(|e| CliError::csv(&path, e))?;
            }
        }
    }
    w.flush().map_err(|e| CliError::io(&path, e))?;
    let n = out.len() as f64;
    log(format!(
        "pca: {} scenes, mean minority share teacher {:.3} student {:.3}, mean hull overlap {:.3}",
        out.len(),
        out.iter().map(SceneModes::teacher_minority).sum::<f64>() / n,
        out.iter().map(SceneModes::student_minority).sum::<f64>() / n,
        out.iter().map(|m| m.projection.hull_overlap).sum::<f64>() / n
    ));
    Ok(out)
}

fn read_modes_row0(path: &Path) -> Result<Option<(f64, f64, f64)>> {
    let mut r = crate::artifacts::reader(path)?;
    let Some(rec) = r.records().next() else { return Ok(None) };
    let rec = rec.map_err(|e| CliError::csv(path, e))?;
    let num = |i: usize| -> Result<f64> {
        rec.get(i)
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| CliError::Syntax { path: path.into(), line: 3, detail: "malformed modes row".into() })
    };
    Ok(Some((num(5)?, num(6)?, num(7)?)))
}

fn read_projection(layout: &Layout) -> Result<Option<PcaProjection>> {
    let (modes, coords) = (layout.modes(), layout.pca_coords());
    if !modes.exists() || !coords.exists() {
        return Ok(None);
    }
    let Some((e1, e2, overlap)) = read_modes_row0(&modes)? else { return Ok(None) };
    let mut p = PcaProjection { student: Vec::new(), teacher: Vec::new(), explained: [e1, e2], hull_overlap: overlap };
    let mut r = crate::artifacts::reader(&coords)?;
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| CliError::csv(&coords, e))?;
        let bad = || CliError::Syntax { path: coords.clone(), line: i + 3, detail: "malformed coordinate row".into() };
        if &rec[0] != "0" {
            continue;
        }
        let q = [rec[3].parse().map_err(|_| bad())?, rec[4].parse().map_err(|_| bad())?];
        match &rec[1] {
            "student" => p.student.push(q),
            "teacher" => p.teacher.push(q),
            _ => return Err(bad()),
        }
    }
    Ok(Some(p))
}

/// Labels of every `episodes_<label>.csv` in the output directory, sorted.
pub fn evaluated_labels(layout: &Layout) -> Result<Vec<String>> {
    let entries = std::fs::read_dir(&layout.dir).map_err(|e| CliError::io(&layout.dir, e))?;
    let mut labels = Vec::new();
    for e in entries {
        let e = e.map_err(|err| CliError::io(&layout.dir, err))?;
        let name = e.file_name().to_string_lossy().into_owned();
        if let Some(l) = name.strip_prefix("episodes_").and_then(|n| n.strip_suffix(".csv")) {
            labels.push(l.to_string());
        }
    }
    labels.sort();
    Ok(labels)
}

/// Aggregates evaluation artifacts into the `report_*.csv` tables. Only
/// `report_results.csv` and the PCA tables are deterministic; latency and
/// Pareto tables carry wall-clock timings.
pub fn report(cfg: &RunConfig, labels: &[String]) -> Result<dnk_core::metrics::ReportPaths> {
    let layout = Layout::new(&cfg.out_dir);
    let labels = if labels.is_empty() { evaluated_labels(&layout)? } else { labels.to_vec() };
    if labels.is_empty() {
        return Err(CliError::MissingArtifact { artifact: "evaluation episodes", path: layout.episodes("*"), producer: "evaluate" });
    }
    let prov = provenance(cfg, Stage::Eval);
    let mut summaries = Vec::new();
    for label in &labels {
        let path = layout.episodes(label);
        require(&path, "evaluation episodes", "evaluate")?;
        check_provenance(&path, &read_provenance(&path)?, cfg, Stage::Eval)?;
        let rows = crate::artifacts::read_episodes(&path)?;
        let mut returns: Vec<(u64, Vec<f64>)> = Vec::new();
        let mut successes: Vec<Vec<bool>> = Vec::new();
        for r in rows {
            match returns.iter().position(|(s, _)| *s == r.seed) {
                Some(k) => {
                    returns[k].1.push(r.normalized_return);
                    successes[k].push(r.success);
                }
                None => {
                    returns.push((r.seed, vec![r.normalized_return]));
                    successes.push(vec![r.success]);
                }
            }
        }
        let dpath = layout.decisions(label);
        let latencies_ms = if dpath.exists() { crate::artifacts::read_decision_latencies(&dpath)? } else { Vec::new() };
        summaries.push(dnk_core::metrics::RunSummary { method: label.clone(), returns, successes, latencies_ms });
    }
    let pca = read_projection(&layout)?;
    let paths = dnk_core::metrics::emit_report(&summaries, pca.as_ref(), &layout.report_prefix())?;
    let mut files = vec![paths.results.clone(), paths.latency.clone(), paths.pareto.clone()];
    if let Some((a, b)) = &paths.pca {
        files.extend([a.clone(), b.clone()]);
    }
    for f in &files {
        prepend_provenance(f, &prov)?;
    }
    log(format!("report: {} methods -> {}", summaries.len(), paths.results.display()));
    Ok(paths)
}

fn prepend_provenance(path: &Path, prov: &Provenance) -> Result<()> {
    let body = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
    let mut out = crate::artifacts::provenance_line(prov).into_bytes();
    out.extend(body);
    std::fs::write(path, out).map_err(|e| CliError::io(path, e))
}
