//! Command-line surface of the `dnk` binary.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use dnk_core::student::Variant;

use crate::config::{RunConfig, SelectorKind};
use crate::error::{CliError, Result};
use crate::pipeline::{self, EvalOptions, Family, GeneratorKind};
use crate::selftest;

#[derive(Debug, Parser)]
#[command(name = "dnk", version, about = "Distil a diffusion trajectory planner into a one-step Koopman student")]
pub struct Cli {
    /// Config file of `key = value` lines.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Override one config key; repeatable, also accepted after the subcommand.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,

    /// Shorthand for `--set seed=N`.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Shorthand for `--set out_dir=DIR`.
    #[arg(long, global = true)]
    pub out_dir: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum GeneratorArg {
    Teacher,
    Student,
    Fdk,
    Kdm,
}

impl From<GeneratorArg> for GeneratorKind {
    fn from(g: GeneratorArg) -> Self {
        match g {
            GeneratorArg::Teacher => GeneratorKind::Teacher,
            GeneratorArg::Student | GeneratorArg::Fdk => GeneratorKind::Student(Variant::Fdk),
            GeneratorArg::Kdm => GeneratorKind::Student(Variant::Kdm),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SelectorArg {
    Geometry,
    Learned,
}

impl From<SelectorArg> for SelectorKind {
    fn from(s: SelectorArg) -> Self {
        match s {
            SelectorArg::Geometry => SelectorKind::Geometry,
            SelectorArg::Learned => SelectorKind::Learned,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum FamilyArg {
    Mixed,
    Navigation,
    Bimodal,
}

impl From<FamilyArg> for Family {
    fn from(f: FamilyArg) -> Self {
        match f {
            FamilyArg::Mixed => Family::Mixed,
            FamilyArg::Navigation => Family::Navigation,
            FamilyArg::Bimodal => Family::Bimodal,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum VariantArg {
    Fdk,
    Kdm,
    Both,
}

impl VariantArg {
    fn variants(self) -> Vec<Variant> {
        match self {
            VariantArg::Fdk => vec![Variant::Fdk],
            VariantArg::Kdm => vec![Variant::Kdm],
            VariantArg::Both => vec![Variant::Fdk, Variant::Kdm],
        }
    }
}

/// `--set` given after the subcommand; applied after the top-level ones.
#[derive(Debug, Default, Args)]
pub struct Overrides {
    /// Override one config key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub sets: Vec<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate expert demonstration windows.
    GenDemos(Overrides),
    /// Train the diffusion teacher on the demonstrations.
    TrainTeacher(Overrides),
    /// Train the learned quality scorer on perturbed demonstration windows.
    TrainScorer(Overrides),
    /// Sample teacher targets for conditioned priors.
    DistillData(DistillArgs),
    /// Train a one-step student on the distillation dataset.
    TrainStudent(StudentArgs),
    /// Closed-loop receding-horizon evaluation on held-out scenes.
    Evaluate(EvaluateArgs),
    /// Time full decisions for each generator.
    BenchLatency(BenchArgs),
    /// Detour-side coverage and PCA of teacher and student candidates.
    Pca(PcaArgs),
    /// Aggregate evaluations into report tables.
    Report(ReportArgs),
    /// Run gradient, algebra, statistics and serialization checks.
    Selftest(Overrides),
}

#[derive(Debug, Args)]
pub struct DistillArgs {
    #[command(flatten)]
    pub overrides: Overrides,
    /// Number of pairs.
    #[arg(long)]
    pub pairs: Option<usize>,
    /// Temperature values, comma separated.
    #[arg(long)]
    pub temps: Option<String>,
    /// Temperature probabilities, comma separated.
    #[arg(long)]
    pub probs: Option<String>,
    #[arg(long, value_enum)]
    pub selector: Option<SelectorArg>,
}

#[derive(Debug, Args)]
pub struct StudentArgs {
    #[command(flatten)]
    pub overrides: Overrides,
    #[arg(long, value_enum, default_value = "fdk")]
    pub variant: VariantArg,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub overrides: Overrides,
    #[arg(long, value_enum, default_value = "student")]
    pub generator: GeneratorArg,
    #[arg(long, value_enum, default_value = "geometry")]
    pub selector: SelectorArg,
    #[arg(long, value_enum, default_value = "mixed")]
    pub family: FamilyArg,
    /// Candidates per decision.
    #[arg(long)]
    pub n_cand: Option<usize>,
    /// Prior temperature at inference.
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Episodes per evaluation seed.
    #[arg(long)]
    pub episodes: Option<usize>,
    /// Control period in milliseconds.
    #[arg(long)]
    pub t_ctrl: Option<f64>,
    /// Output label; defaults to `<generator>_<family>`.
    #[arg(long)]
    pub label: Option<String>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[command(flatten)]
    pub overrides: Overrides,
    #[arg(long, value_enum, value_delimiter = ',', default_value = "teacher,fdk")]
    pub generators: Vec<GeneratorArg>,
    #[arg(long, value_enum, default_value = "geometry")]
    pub selector: SelectorArg,
}

#[derive(Debug, Args)]
pub struct PcaArgs {
    #[command(flatten)]
    pub overrides: Overrides,
    #[arg(long, value_enum, default_value = "fdk")]
    pub variant: VariantArg,
    #[arg(long, value_enum, default_value = "geometry")]
    pub selector: SelectorArg,
    /// Held-out bimodal scenes.
    #[arg(long, default_value_t = 12)]
    pub scenes: usize,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[command(flatten)]
    pub overrides: Overrides,
    /// Evaluation labels to include; all evaluations when empty.
    #[arg(long, value_delimiter = ',')]
    pub labels: Vec<String>,
}

/// Defaults, then the config file, then `--seed`/`--out-dir`, then `--set`
/// before the subcommand, then `--set` after it.
pub fn resolve_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let mut sets = Vec::new();
    if let Some(s) = cli.seed {
        sets.push(format!("seed={s}"));
    }
    if let Some(d) = &cli.out_dir {
        sets.push(format!("out_dir={}", d.display()));
    }
    sets.extend(cli.overrides.iter().cloned());
    sets.extend(cli.command.overrides().sets.iter().cloned());
    cfg.apply_overrides(&sets)?;
    Ok(cfg)
}

impl Command {
    fn overrides(&self) -> &Overrides {
        match self {
            Command::GenDemos(o) | Command::TrainTeacher(o) | Command::TrainScorer(o) | Command::Selftest(o) => o,
            Command::DistillData(a) => &a.overrides,
            Command::TrainStudent(a) => &a.overrides,
            Command::Evaluate(a) => &a.overrides,
            Command::BenchLatency(a) => &a.overrides,
            Command::Pca(a) => &a.overrides,
            Command::Report(a) => &a.overrides,
        }
    }
}

fn name(cmd: &Command) -> &'static str {
    match cmd {
        Command::GenDemos(_) => "gen-demos",
        Command::TrainTeacher(_) => "train-teacher",
        Command::TrainScorer(_) => "train-scorer",
        Command::DistillData(_) => "distill-data",
        Command::TrainStudent(_) => "train-student",
        Command::Evaluate(_) => "evaluate",
        Command::BenchLatency(_) => "bench-latency",
        Command::Pca(_) => "pca",
        Command::Report(_) => "report",
        Command::Selftest(_) => "selftest",
    }
}

/// Executes one parsed command line.
pub fn run(cli: &Cli) -> Result<()> {
    let mut cfg = resolve_config(cli)?;
    if let Command::DistillData(a) = &cli.command {
        let mut sets = Vec::new();
        if let Some(n) = a.pairs {
            sets.push(format!("pairs={n}"));
        }
        if let Some(t) = &a.temps {
            sets.push(format!("temps={t}"));
        }
        if let Some(p) = &a.probs {
            sets.push(format!("temp_probs={p}"));
        }
        if let Some(s) = a.selector {
            sets.push(format!("selector={}", if s == SelectorArg::Learned { "learned" } else { "geometry" }));
        }
        cfg.apply_overrides(&sets)?;
    }
    if let Command::Evaluate(a) = &cli.command {
        let mut sets = Vec::new();
        if let Some(n) = a.n_cand {
            sets.push(format!("n_cand={n}"));
        }
        if let Some(l) = a.lambda {
            sets.push(format!("lambda_infer={l}"));
        }
        if let Some(e) = a.episodes {
            sets.push(format!("episodes={e}"));
        }
        if let Some(t) = a.t_ctrl {
            sets.push(format!("t_ctrl_ms={t}"));
        }
        cfg.apply_overrides(&sets)?;
    }
    if matches!(cli.command, Command::Selftest(_)) {
        return run_selftest();
    }
    pipeline::record_config(&cfg, name(&cli.command))?;
    match &cli.command {
        Command::GenDemos(_) => {
            pipeline::gen_demos(&cfg)?;
        }
        Command::TrainTeacher(_) => {
            pipeline::train_teacher_stage(&cfg)?;
        }
        Command::TrainScorer(_) => {
            pipeline::train_scorer_stage(&cfg)?;
        }
        Command::DistillData(_) => {
            pipeline::distill_stage(&cfg)?;
        }
        Command::TrainStudent(a) => {
            for v in a.variant.variants() {
                pipeline::train_student_stage(&cfg, v)?;
            }
        }
        Command::Evaluate(a) => {
            let opts = EvalOptions {
                generator: a.generator.into(),
                selector: a.selector.into(),
                family: a.family.into(),
                label: a.label.clone(),
            };
            let ev = pipeline::evaluate(&cfg, &opts)?;
            let lat: Vec<f64> = ev.decisions.iter().map(|d| d.3).collect();
            if !lat.is_empty() {
                let met = dnk_core::control::check_deadline(&lat, cfg.t_ctrl_ms)?;
                println!("{}: deadline {} ms met by {:.4} of {} decisions", ev.label, cfg.t_ctrl_ms, met, lat.len());
            }
            println!(
                "{}: success {:.4}, mean normalised return {:.4}",
                ev.label,
                ev.success_rate(),
                ev.mean_normalized_return()
            );
        }
        Command::BenchLatency(a) => {
            let kinds: Vec<GeneratorKind> = a.generators.iter().map(|g| (*g).into()).collect();
            for r in pipeline::bench_latency(&cfg, &kinds, a.selector.into())? {
                println!("{}: mean {:.3} ms, p95 {:.3} ms", r.method, r.stats.mean, r.stats.p95);
            }
        }
        Command::Pca(a) => {
            for v in a.variant.variants() {
                pipeline::pca_stage(&cfg, v, a.selector.into(), a.scenes)?;
            }
        }
        Command::Report(a) => {
            let paths = pipeline::report(&cfg, &a.labels)?;
            println!("{}", paths.results.display());
        }
        Command::Selftest(_) => unreachable!("handled above"),
    }
    Ok(())
}

fn run_selftest() -> Result<()> {
    let checks = selftest::run_all();
    let mut failed = Vec::new();
    for c in &checks {
        println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
        if !c.passed {
            failed.push(c.name.clone());
        }
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Selftest(failed.join(", ")))
    }
}
