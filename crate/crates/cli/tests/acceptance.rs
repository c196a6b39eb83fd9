//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero when any criterion fails.
//!
//! Artifacts live in `DNK_ACCEPTANCE_DIR` (default: `acceptance` under the
//! cargo target tmp dir). A stage whose artifact is present with a matching
//! config hash is reused, and stage wall-clock times are kept in
//! `timings.csv` next to the artifacts so runtime limits survive reuse.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use dnk_cli::artifacts::{read_episodes, read_provenance, EpisodeRow, Layout};
use dnk_cli::config::{RunConfig, SelectorKind, Stage};
use dnk_cli::pipeline::{self, EvalOptions, Family, GeneratorKind};
use dnk_cli::selftest::{self, Check};
use dnk_core::control::check_deadline;
use dnk_core::diffusion::{candidate_priors, reverse_sample_batch, FIXED_LEN};
use dnk_core::distill_data::{generate_pairs, DistillDataset};
use dnk_core::env::geometry::clearance;
use dnk_core::env::{generate_demos, Trajectory};
use dnk_core::numkit::{derive_seed, Rng64};
use dnk_core::student::{evaluate_mse, train_student, Student, Variant};

const TEACHER_DRAWS: usize = 200;
const TEACHER_COLLISION_FREE: f64 = 0.90;
const TEACHER_RUNTIME_S: f64 = 15.0 * 60.0;
const FIDELITY_MSE: f64 = 0.05;
const OVERFIT_MSE: f64 = 0.005;
const OVERFIT_PAIRS: usize = 10;
const HELD_OUT_PAIRS: usize = 2000;
const SUCCESS_SLACK: f64 = 0.05;
const RETURN_RATIO: f64 = 0.9;
const EVAL_RUNTIME_S: f64 = 30.0 * 60.0;
const SPEEDUP: f64 = 10.0;
const MIN_DECISIONS: usize = 200;
const DEADLINE_SHARE: f64 = 1.0;
const BIMODAL_SCENES: usize = 12;
const STUDENT_MINORITY: f64 = 0.15;
const TEACHER_MINORITY: f64 = 0.2;
const HULL_OVERLAP: f64 = 0.5;
const SEED_COUNT: usize = 3;

/// Stream ids for acceptance-only draws, disjoint from the pipeline's.
const HELD_OUT_DEMOS: u64 = 101;
const HELD_OUT_DRAWS: u64 = 102;
const HELD_OUT_PAIRS_SEED: u64 = 103;

struct Verdict {
    id: usize,
    name: &'static str,
    passed: bool,
    detail: String,
}

struct Timings {
    path: PathBuf,
    secs: BTreeMap<String, f64>,
}

impl Timings {
    fn load(dir: &Path) -> Self {
        let path = dir.join("timings.csv");
        let mut secs = BTreeMap::new();
        if let Ok(text) = std::fs::read_to_string(&path) {
            for line in text.lines() {
                if let Some((k, v)) = line.split_once(',') {
                    if let Ok(s) = v.parse() {
                        secs.insert(k.to_string(), s);
                    }
                }
            }
        }
        Self { path, secs }
    }

    fn record(&mut self, key: String, secs: f64) {
        self.secs.insert(key, secs);
        let body: String = self.secs.iter().map(|(k, v)| format!("{k},{v}\n")).collect();
        std::fs::write(&self.path, body).expect("write timings");
    }

    fn get(&self, key: &str) -> Option<f64> {
        self.secs.get(key).copied()
    }
}

/// Loads a stage artifact or, when missing or stale, produces it and
/// records how long that took under `key`.
fn ensure<T>(
    timings: &mut Timings,
    key: &str,
    load: impl FnOnce() -> dnk_cli::error::Result<T>,
    make: impl FnOnce() -> dnk_cli::error::Result<T>,
) -> T {
    if let Ok(v) = load() {
        return v;
    }
    let t0 = Instant::now();
    let v = make().unwrap_or_else(|e| panic!("{key}: {e}"));
    timings.record(key.to_string(), t0.elapsed().as_secs_f64());
    v
}

fn evaluation(cfg: &RunConfig, timings: &mut Timings, opts: &EvalOptions) -> Vec<EpisodeRow> {
    let path = Layout::new(&cfg.out_dir).episodes(&opts.label());
    let want = pipeline::provenance(cfg, Stage::Eval);
    ensure(
        timings,
        &eval_key(opts),
        || match read_provenance(&path) {
            Ok(p) if p == want => read_episodes(&path),
            Ok(_) => Err(dnk_cli::error::CliError::MissingArtifact {
                artifact: "evaluation episodes",
                path: path.clone(),
                producer: "evaluate",
            }),
            Err(e) => Err(e),
        },
        || pipeline::evaluate(cfg, opts).map(|ev| ev.episodes),
    )
}

fn eval_key(opts: &EvalOptions) -> String {
    format!("eval_{}", opts.label())
}

fn eval_opts(generator: GeneratorKind, family: Family) -> EvalOptions {
    EvalOptions { generator, selector: SelectorKind::Geometry, family, label: None }
}

fn success_rate(rows: &[EpisodeRow]) -> f64 {
    rows.iter().filter(|r| r.success).count() as f64 / rows.len() as f64
}

fn mean_return(rows: &[EpisodeRow]) -> f64 {
    rows.iter().map(|r| r.normalized_return).sum::<f64>() / rows.len() as f64
}

fn seed_means(rows: &[EpisodeRow], seeds: &[u64]) -> Vec<f64> {
    seeds
        .iter()
        .map(|s| mean_return(&rows.iter().filter(|r| r.seed == *s).cloned().collect::<Vec<_>>()))
        .collect()
}

fn from_checks(id: usize, name: &'static str, checks: Vec<Check>, started: Instant, limit_s: f64) -> Verdict {
    let failed: Vec<&Check> = checks.iter().filter(|c| !c.passed).collect();
    let secs = started.elapsed().as_secs_f64();
    let mut detail = format!("{}/{} checks pass in {secs:.1}s (limit {limit_s:.0}s)", checks.len() - failed.len(), checks.len());
    for c in &failed {
        detail.push_str(&format!("; {} {}", c.name, c.detail));
    }
    Verdict { id, name, passed: failed.is_empty() && secs < limit_s, detail }
}

/// Sum of the recorded times of `keys` against `limit` seconds.
fn runtime_clause(timings: &Timings, keys: &[&str], limit: f64) -> (bool, String) {
    let mut total = 0.0;
    for key in keys {
        match timings.get(key) {
            Some(s) => total += s,
            None => return (false, format!("{key} runtime not recorded")),
        }
    }
    (total < limit, format!("{} {total:.0}s (limit {limit:.0}s)", keys.join(" + ")))
}

fn teacher_sanity(cfg: &RunConfig, timings: &Timings) -> Verdict {
    let teacher = pipeline::load_teacher(cfg).expect("teacher");
    let env = cfg.env();
    let demos = generate_demos(&env, TEACHER_DRAWS, derive_seed(cfg.seed, HELD_OUT_DEMOS)).expect("held-out demos");
    let draw_seed = derive_seed(cfg.seed, HELD_OUT_DRAWS);
    let rate_at = |lambda: f64| {
        let mut free = 0;
        let mut exact = 0;
        for (i, d) in demos.iter().enumerate() {
            let (priors, mut rngs) =
                candidate_priors(&d.context, cfg.horizon, 1, lambda, derive_seed(draw_seed, i as u64)).expect("prior");
            let out = reverse_sample_batch(&teacher, &priors, &mut rngs).expect("reverse sampling");
            let row = out.row(0);
            if row[..FIXED_LEN] == priors[0].values[..FIXED_LEN] {
                exact += 1;
            }
            let traj = Trajectory::from_normalized(cfg.horizon, row).expect("trajectory");
            if clearance(&traj, &d.scene) > 0.0 {
                free += 1;
            }
        }
        (free as f64 / demos.len() as f64, exact)
    };
    let (rate, exact) = rate_at(cfg.lambda_infer);
    let (rate_unit, _) = rate_at(1.0);
    let (fast, runtime) = runtime_clause(timings, &["train_teacher"], TEACHER_RUNTIME_S);
    Verdict {
        id: 3,
        name: "teacher sanity",
        passed: rate >= TEACHER_COLLISION_FREE && exact == demos.len() && fast,
        detail: format!(
            "collision-free {rate:.3} at lambda {} over {} held-out draws (need >= {TEACHER_COLLISION_FREE}; {rate_unit:.3} at lambda 1); inpainting exact {exact}/{}; {runtime}",
            cfg.lambda_infer,
            demos.len(),
            demos.len()
        ),
    }
}

fn fidelity(cfg: &RunConfig, ds: &DistillDataset) -> Verdict {
    let teacher = pipeline::load_teacher(cfg).expect("teacher");
    let student = pipeline::load_student(cfg, Variant::Fdk).expect("fdk student");
    let selector = pipeline::build_selector(cfg, cfg.selector).expect("selector");
    let mut dc = cfg.distill_config();
    dc.count = HELD_OUT_PAIRS;
    let held = generate_pairs(&teacher, &selector, &cfg.env(), &dc, derive_seed(cfg.seed, HELD_OUT_PAIRS_SEED))
        .expect("held-out pairs");
    let mse = evaluate_mse(&student, &held.pairs).expect("held-out mse");

    let mut tiny = ds.clone();
    tiny.pairs.truncate(OVERFIT_PAIRS);
    let mut scfg = cfg.student_config();
    scfg.variant = Variant::Fdk;
    let mut probe = Student::new(&scfg, cfg.horizon, &mut Rng64::seeded(cfg.seed, 0)).expect("student");
    let mut opts = cfg.student_train();
    opts.batch_size = OVERFIT_PAIRS;
    opts.epochs = 3000;
    opts.lr = 1e-3;
    opts.lr_final = Some(1e-5);
    train_student(&mut probe, &tiny, &cfg.loss_weights(), &opts).expect("overfit run");
    let overfit = evaluate_mse(&probe, &tiny.pairs).expect("overfit mse");
    Verdict {
        id: 4,
        name: "distillation fidelity",
        passed: overfit <= OVERFIT_MSE && mse <= FIDELITY_MSE,
        detail: format!(
            "overfit on {OVERFIT_PAIRS} pairs {overfit:.5} (need <= {OVERFIT_MSE}); held-out per-dimension mse {mse:.5} over {HELD_OUT_PAIRS} pairs (need <= {FIDELITY_MSE})"
        ),
    }
}

fn parity(cfg: &RunConfig, timings: &mut Timings) -> Verdict {
    let (t_opts, s_opts) =
        (eval_opts(GeneratorKind::Teacher, Family::Mixed), eval_opts(GeneratorKind::Student(Variant::Fdk), Family::Mixed));
    let teacher = evaluation(cfg, timings, &t_opts);
    let student = evaluation(cfg, timings, &s_opts);
    let (ts, ss) = (success_rate(&teacher), success_rate(&student));
    let (tr, sr) = (mean_return(&teacher), mean_return(&student));
    let keys = [eval_key(&t_opts), eval_key(&s_opts)];
    let (fast, runtime) = runtime_clause(timings, &[&keys[0], &keys[1]], EVAL_RUNTIME_S);
    let scenes = cfg.episodes >= 200 && cfg.eval_seeds.len() >= SEED_COUNT;
    Verdict {
        id: 5,
        name: "closed-loop parity",
        passed: scenes && ss >= ts - SUCCESS_SLACK && sr >= RETURN_RATIO * tr && fast,
        detail: format!(
            "{} episodes each; success student {ss:.3} vs teacher {ts:.3} (need >= teacher - {SUCCESS_SLACK}); normalized return student {sr:.4} vs teacher {tr:.4} (need >= {RETURN_RATIO} x); {runtime}",
            student.len()
        ),
    }
}

fn latency(cfg: &RunConfig) -> (Verdict, Verdict) {
    let rows = pipeline::bench_latency(
        cfg,
        &[GeneratorKind::Teacher, GeneratorKind::Student(Variant::Fdk)],
        SelectorKind::Geometry,
    )
    .expect("latency bench");
    let (t, s) = (&rows[0], &rows[1]);
    let n = t.samples_ms.len().min(s.samples_ms.len());
    let ratio = s.stats.mean / t.stats.mean;
    let speed = Verdict {
        id: 6,
        name: "latency speedup",
        passed: n >= MIN_DECISIONS && ratio <= 1.0 / SPEEDUP,
        detail: format!(
            "student {:.3} ms vs teacher {:.3} ms mean over {n} decisions at N_cand={}: {:.1}x (need >= {SPEEDUP}x)",
            s.stats.mean,
            t.stats.mean,
            cfg.n_cand,
            1.0 / ratio
        ),
    };
    let met = check_deadline(&s.samples_ms, cfg.t_ctrl_ms).expect("deadline");
    let deadline = Verdict {
        id: 7,
        name: "deadline",
        passed: s.samples_ms.len() >= MIN_DECISIONS && met >= DEADLINE_SHARE,
        detail: format!(
            "{met:.4} of {} student decisions within {} ms (max {:.3} ms, need {DEADLINE_SHARE})",
            s.samples_ms.len(),
            cfg.t_ctrl_ms,
            s.samples_ms.iter().cloned().fold(0.0, f64::max)
        ),
    };
    (speed, deadline)
}

fn multimodality(cfg: &RunConfig) -> Verdict {
    let modes = pipeline::pca_stage(cfg, Variant::Fdk, SelectorKind::Geometry, BIMODAL_SCENES).expect("pca stage");
    let n = modes.len() as f64;
    let teacher = modes.iter().map(|m| m.teacher_minority()).sum::<f64>() / n;
    let student = modes.iter().map(|m| m.student_minority()).sum::<f64>() / n;
    let overlap = modes.iter().map(|m| m.projection.hull_overlap).sum::<f64>() / n;
    Verdict {
        id: 8,
        name: "multimodality retention",
        passed: modes.len() >= 10 && teacher >= TEACHER_MINORITY && student >= STUDENT_MINORITY && overlap >= HULL_OVERLAP,
        detail: format!(
            "{} bimodal scenes at N_cand={}: minority share teacher {teacher:.3} (need >= {TEACHER_MINORITY}), student {student:.3} (need >= {STUDENT_MINORITY}); hull overlap {overlap:.3} (need >= {HULL_OVERLAP})",
            modes.len(),
            cfg.n_cand
        ),
    }
}

fn fdk_vs_kdm(cfg: &RunConfig, timings: &mut Timings) -> Verdict {
    let fdk = evaluation(cfg, timings, &eval_opts(GeneratorKind::Student(Variant::Fdk), Family::Bimodal));
    let kdm = evaluation(cfg, timings, &eval_opts(GeneratorKind::Student(Variant::Kdm), Family::Bimodal));
    let f = seed_means(&fdk, &cfg.eval_seeds);
    let k = seed_means(&kdm, &cfg.eval_seeds);
    let wins = f.iter().zip(&k).filter(|(a, b)| a > b).count();
    let pairs: Vec<String> = f.iter().zip(&k).map(|(a, b)| format!("{a:.4}/{b:.4}")).collect();
    Verdict {
        id: 9,
        name: "fdk vs kdm",
        passed: cfg.eval_seeds.len() >= SEED_COUNT && wins == cfg.eval_seeds.len(),
        detail: format!("fdk/kdm mean normalized return per seed on bimodal scenes: {} ({wins}/{} fdk ahead)", pairs.join(", "), f.len()),
    }
}

/// Small enough to run the whole pipeline twice inside the suite.
fn reduced(dir: &Path) -> RunConfig {
    let mut cfg = RunConfig::default();
    let sets: Vec<String> = [
        "demos=400",
        "teacher_epochs=3",
        "scorer_windows=200",
        "scorer_epochs=3",
        "pairs=256",
        "epochs=3",
        "episodes=4",
        "eval_seeds=0,1",
        "threads=1",
    ]
    .iter()
    .map(|s| s.to_string())
    .chain([format!("out_dir={}", dir.display())])
    .collect();
    cfg.apply_overrides(&sets).expect("reduced config");
    cfg
}

fn full_pipeline(cfg: &RunConfig) -> Vec<u8> {
    pipeline::gen_demos(cfg).expect("demos");
    pipeline::train_teacher_stage(cfg).expect("teacher");
    pipeline::train_scorer_stage(cfg).expect("scorer");
    pipeline::distill_stage(cfg).expect("dataset");
    for v in [Variant::Fdk, Variant::Kdm] {
        pipeline::train_student_stage(cfg, v).expect("student");
    }
    for g in [GeneratorKind::Teacher, GeneratorKind::Student(Variant::Fdk), GeneratorKind::Student(Variant::Kdm)] {
        pipeline::evaluate(cfg, &eval_opts(g, Family::Mixed)).expect("evaluate");
    }
    pipeline::pca_stage(cfg, Variant::Fdk, SelectorKind::Geometry, 2).expect("pca");
    let paths = pipeline::report(cfg, &[]).expect("report");
    std::fs::read(paths.results).expect("report bytes")
}

fn reproducibility() -> Verdict {
    let a = tempfile::tempdir().expect("tempdir");
    let b = tempfile::tempdir().expect("tempdir");
    let ra = full_pipeline(&reduced(a.path()));
    let rb = full_pipeline(&reduced(b.path()));
    Verdict {
        id: 11,
        name: "reproducibility",
        passed: !ra.is_empty() && ra == rb,
        detail: format!("report_results.csv of two single-threaded reduced-scale runs: {} vs {} bytes, identical {}", ra.len(), rb.len(), ra == rb),
    }
}

fn main() {
    let dir = std::env::var_os("DNK_ACCEPTANCE_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("acceptance"));
    std::fs::create_dir_all(&dir).expect("acceptance dir");
    let mut cfg = RunConfig::default();
    cfg.apply_overrides(&[format!("out_dir={}", dir.display()), "threads=1".into()]).expect("config");
    let mut timings = Timings::load(&dir);
    eprintln!("acceptance artifacts in {} (config {})", dir.display(), cfg.hash());

    let mut verdicts = Vec::new();
    let t0 = Instant::now();
    verdicts.push(from_checks(1, "gradient correctness", selftest::gradient_checks(), t0, 60.0));
    let t0 = Instant::now();
    verdicts.push(from_checks(2, "fdk algebra", selftest::fdk_checks(), t0, 10.0));

    ensure(&mut timings, "gen_demos", || pipeline::load_demos(&cfg), || pipeline::gen_demos(&cfg));
    ensure(&mut timings, "train_teacher", || pipeline::load_teacher(&cfg), || pipeline::train_teacher_stage(&cfg).map(|r| r.0));
    verdicts.push(teacher_sanity(&cfg, &timings));

    ensure(&mut timings, "train_scorer", || pipeline::load_scorer(&cfg), || pipeline::train_scorer_stage(&cfg).map(|r| r.0));
    let ds = ensure(&mut timings, "distill", || pipeline::load_distill(&cfg), || pipeline::distill_stage(&cfg));
    for v in [Variant::Fdk, Variant::Kdm] {
        ensure(
            &mut timings,
            &format!("train_student_{}", v.tag()),
            || pipeline::load_student(&cfg, v),
            || pipeline::train_student_stage(&cfg, v).map(|r| r.0),
        );
    }
    verdicts.push(fidelity(&cfg, &ds));
    verdicts.push(parity(&cfg, &mut timings));
    let (speed, deadline) = latency(&cfg);
    verdicts.push(speed);
    verdicts.push(deadline);
    verdicts.push(multimodality(&cfg));
    verdicts.push(fdk_vs_kdm(&cfg, &mut timings));
    let t0 = Instant::now();
    verdicts.push(from_checks(10, "reweighting and statistics units", selftest::unit_checks(), t0, 1.0));
    verdicts.push(reproducibility());

    let mut failed = 0;
    for v in &verdicts {
        println!("{} criterion {} ({}): {}", if v.passed { "PASS" } else { "FAIL" }, v.id, v.name, v.detail);
        failed += usize::from(!v.passed);
    }
    println!("acceptance: {}/{} criteria pass", verdicts.len() - failed, verdicts.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
