//! Run configuration: `key = value` lines, `#` starts a comment.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use dnk_core::diffusion::{Sampler, TeacherConfig};
use dnk_core::distill_data::DistillConfig;
use dnk_core::env::{EnvConfig, ScoreParams};
use dnk_core::numkit::{Activation, TrainOptions};
use dnk_core::student::{LossWeights, StudentConfig, Variant};
use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SelectorKind {
    Geometry,
    Learned,
}

/// Conversion between a config value and its text form.
pub trait ConfigValue: Sized {
    fn parse_value(s: &str) -> std::result::Result<Self, String>;
    fn render(&self) -> String;
}

impl ConfigValue for f64 {
    fn parse_value(s: &str) -> std::result::Result<Self, String> {
        let v: f64 = s.parse().map_err(|_| format!("`{s}` is not a number"))?;
        if v.is_finite() {
            Ok(v)
        } else {
            Err(format!("`{s}` is not finite"))
        }
    }
    fn render(&self) -> String {
        format!("{self:?}")
    }
}

impl ConfigValue for usize {
    fn parse_value(s: &str) -> std::result::Result<Self, String> {
        s.parse().map_err(|_| format!("`{s}` is not a non-negative integer"))
    }
    fn render(&self) -> String {
        self.to_string()
    }
}

impl ConfigValue for u64 {
    fn parse_value(s: &str) -> std::result::Result<Self, String> {
        s.parse().map_err(|_| format!("`{s}` is not a non-negative integer"))
    }
    fn render(&self) -> String {
        self.to_string()
    }
}

impl ConfigValue for PathBuf {
    fn parse_value(s: &str) -> std::result::Result<Self, String> {
        if s.is_empty() {
            return Err("empty path".into());
        }
        Ok(PathBuf::from(s))
    }
    fn render(&self) -> String {
        self.display().to_string()
    }
}

impl ConfigValue for Option<f64> {
    fn parse_value(s: &str) -> std::result::Result<Self, String> {
        if s == "none" {
            Ok(None)
        } else {
            f64::parse_value(s).map(Some)
        }
    }
    fn render(&self) -> String {
        self.map_or("none".into(), |v| v.render())
    }
}

impl<T: ConfigValue> ConfigValue for Vec<T> {
    fn parse_value(s: &str) -> std::result::Result<Self, String> {
        s.split(',').map(|p| T::parse_value(p.trim())).collect()
    }
    fn render(&self) -> String {
        self.iter().map(|v| v.render()).collect::<Vec<_>>().join(",")
    }
}

impl ConfigValue for Sampler {
    fn parse_value(s: &str) -> std::result::Result<Self, String> {
        Sampler::from_tag(s).ok_or_else(|| format!("`{s}` is not `implicit` or `ancestral:<eta>`"))
    }
    fn render(&self) -> String {
        self.tag()
    }
}

impl ConfigValue for Variant {
    fn parse_value(s: &str) -> std::result::Result<Self, String> {
        Variant::from_tag(s).ok_or_else(|| format!("`{s}` is not `fdk` or `kdm`"))
    }
    fn render(&self) -> String {
        self.tag().into()
    }
}

impl ConfigValue for SelectorKind {
    fn parse_value(s: &str) -> std::result::Result<Self, String> {
        match s {
            "geometry" => Ok(SelectorKind::Geometry),
            "learned" => Ok(SelectorKind::Learned),
            _ => Err(format!("`{s}` is not `geometry` or `learned`")),
        }
    }
    fn render(&self) -> String {
        match self {
            SelectorKind::Geometry => "geometry".into(),
            SelectorKind::Learned => "learned".into(),
        }
    }
}

macro_rules! run_config {
    ($($key:ident : $ty:ty = $default:expr),* $(,)?) => {
        /// Every tunable of the pipeline.
        #[derive(Clone, Debug, PartialEq)]
        pub struct RunConfig {
            $(pub $key: $ty,)*
        }

        impl Default for RunConfig {
            fn default() -> Self {
                Self { $($key: $default,)* }
            }
        }

        impl RunConfig {
            pub const KEYS: &'static [&'static str] = &[$(stringify!($key)),*];

            /// Sets one key from its text form.
            pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
                match key {
                    $(stringify!($key) => {
                        self.$key = <$ty as ConfigValue>::parse_value(value.trim())
                            .map_err(|detail| CliError::BadValue { key: key.into(), detail })?;
                    })*
                    _ => return Err(CliError::UnknownKey(key.into())),
                }
                Ok(())
            }

            /// `(key, value)` for every key, in declaration order.
            pub fn entries(&self) -> Vec<(&'static str, String)> {
                vec![$((stringify!($key), self.$key.render()),)*]
            }
        }
    };
}

run_config! {
    seed: u64 = 0,
    threads: usize = 1,
    out_dir: PathBuf = PathBuf::from("dnk-out"),
    horizon: usize = 16,

    dt: f64 = EnvConfig::default().plant.dt,
    damping: f64 = EnvConfig::default().plant.damping,
    a_max: f64 = EnvConfig::default().plant.a_max,
    v_max: f64 = EnvConfig::default().plant.v_max,
    r_goal: f64 = EnvConfig::default().r_goal,
    max_steps: usize = EnvConfig::default().max_steps,
    bimodal_fraction: f64 = EnvConfig::default().bimodal_fraction,
    p_offset_zero: f64 = EnvConfig::default().p_offset_zero,
    delta_safe: f64 = EnvConfig::default().planner.delta_safe,
    kappa_c: f64 = ScoreParams::default().kappa_c,
    kappa_u: f64 = ScoreParams::default().kappa_u,
    kappa_g: f64 = ScoreParams::default().kappa_g,
    c_sat: f64 = ScoreParams::default().c_sat,

    demos: usize = 20_000,

    teacher_steps: usize = 20,
    beta_start: f64 = 1e-4,
    beta_end: f64 = 0.4,
    teacher_hidden: usize = 256,
    teacher_depth: usize = 3,
    sampler: Sampler = Sampler::Implicit,
    teacher_epochs: usize = 60,
    teacher_batch: usize = 64,
    teacher_lr: f64 = 1e-3,
    teacher_lr_final: Option<f64> = Some(1e-5),

    scorer_hidden: Vec<usize> = vec![128, 128],
    scorer_windows: usize = 4000,
    scorer_perturbed: usize = 4,
    scorer_epochs: usize = 40,
    scorer_batch: usize = 64,
    scorer_lr: f64 = 1e-3,

    pairs: usize = 20_000,
    temps: Vec<f64> = vec![0.3, 0.5, 0.7],
    temp_probs: Vec<f64> = vec![0.25, 0.5, 0.25],
    beta: f64 = 1.0,
    retry_cap: usize = 10,
    selector: SelectorKind = SelectorKind::Geometry,

    latent: usize = 64,
    width_mult: usize = 4,
    student_depth: usize = 2,
    variant: Variant = Variant::Fdk,
    batch: usize = 64,
    lr: f64 = 3e-4,
    lr_final: Option<f64> = None,
    epochs: usize = 200,
    alpha_rec: f64 = 0.8,
    alpha_lat: f64 = 0.2,
    alpha_pred: f64 = 1.0,
    alpha_act: f64 = 1.0,
    alpha_spec: f64 = 0.01,
    alpha_inv: f64 = 1.0,
    w_first: f64 = 1.5,
    w_tail: f64 = 0.6,

    n_cand: usize = 64,
    lambda_infer: f64 = 0.5,
    episodes: usize = 200,
    eval_seeds: Vec<u64> = vec![0, 1, 2],
    t_ctrl_ms: f64 = 50.0,
    latency_decisions: usize = 200,
}

/// Keys that change where or how fast results are produced, not what they are.
const UNHASHED: [&str; 2] = ["out_dir", "threads"];

const ENV_KEYS: &[&str] = &[
    "seed", "horizon", "dt", "damping", "a_max", "v_max", "r_goal", "max_steps", "bimodal_fraction",
    "p_offset_zero", "delta_safe", "demos",
];
/// Selector weights: they rank candidates and weight pairs but do not touch
/// demonstrations or the teacher.
const SCORE_KEYS: &[&str] = &["kappa_c", "kappa_u", "kappa_g", "c_sat"];
const TEACHER_KEYS: &[&str] = &[
    "teacher_steps", "beta_start", "beta_end", "teacher_hidden", "teacher_depth", "sampler", "teacher_epochs",
    "teacher_batch", "teacher_lr", "teacher_lr_final",
];
const SCORER_KEYS: &[&str] =
    &["scorer_hidden", "scorer_windows", "scorer_perturbed", "scorer_epochs", "scorer_batch", "scorer_lr"];
const DATASET_KEYS: &[&str] = &["pairs", "temps", "temp_probs", "beta", "retry_cap", "selector"];
/// `variant` is absent: both variants train from the same dataset and carry
/// their tag in the file name and header.
const STUDENT_KEYS: &[&str] = &[
    "latent", "width_mult", "student_depth", "batch", "lr", "lr_final", "epochs", "alpha_rec", "alpha_lat",
    "alpha_pred", "alpha_act", "alpha_spec", "alpha_inv", "w_first", "w_tail",
];

/// Pipeline stage whose artifact a hash describes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    Demos,
    Teacher,
    Scorer,
    Dataset,
    Student,
    Eval,
}

impl Stage {
    fn keys(self) -> Vec<&'static str> {
        let groups: &[&[&str]] = match self {
            Stage::Demos => &[ENV_KEYS],
            Stage::Teacher => &[ENV_KEYS, TEACHER_KEYS],
            Stage::Scorer => &[ENV_KEYS, SCORE_KEYS, SCORER_KEYS],
            Stage::Dataset => &[ENV_KEYS, SCORE_KEYS, TEACHER_KEYS, SCORER_KEYS, DATASET_KEYS],
            Stage::Student => &[ENV_KEYS, SCORE_KEYS, TEACHER_KEYS, SCORER_KEYS, DATASET_KEYS, STUDENT_KEYS],
            Stage::Eval => return RunConfig::KEYS.iter().copied().filter(|k| !UNHASHED.contains(k)).collect(),
        };
        groups.iter().flat_map(|g| g.iter().copied()).collect()
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::parse(&text, path)
    }

    /// Defaults overridden by every `key = value` line of `text`.
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut cfg = Self::default();
        let mut seen = std::collections::HashSet::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let syntax = |detail: String| CliError::Syntax { path: path.into(), line: i + 1, detail };
            let (key, value) = line.split_once('=').ok_or_else(|| syntax(format!("expected `key = value`, got `{line}`")))?;
            let key = key.trim();
            if !seen.insert(key.to_string()) {
                return Err(syntax(format!("duplicate key `{key}`")));
            }
            cfg.set(key, value)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Applies `key=value` overrides in order.
    pub fn apply_overrides<S: AsRef<str>>(&mut self, overrides: &[S]) -> Result<()> {
        for o in overrides {
            let o = o.as_ref();
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| CliError::BadValue { key: o.into(), detail: "override must be `key=value`".into() })?;
            self.set(k.trim(), v)?;
        }
        self.validate()
    }

    /// Canonical text form; parsing it gives back an equal config.
    pub fn render(&self) -> String {
        let mut s = String::new();
        for (k, v) in self.entries() {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }

    /// First 16 hex digits of the SHA-256 of the canonical form of every key
    /// that affects results.
    pub fn hash(&self) -> String {
        self.hash_filtered(|k| !UNHASHED.contains(&k))
    }

    /// Hash over the keys that determine the artifacts of `stage`, so that
    /// changing an evaluation key does not invalidate a trained teacher.
    pub fn stage_hash(&self, stage: Stage) -> String {
        match stage {
            Stage::Eval => self.hash(),
            _ => {
                let keys = stage.keys();
                self.hash_filtered(|k| keys.contains(&k))
            }
        }
    }

    fn hash_filtered(&self, keep: impl Fn(&str) -> bool) -> String {
        let mut h = Sha256::new();
        for (k, v) in self.entries() {
            if keep(k) {
                h.update(format!("{k}={v}\n").as_bytes());
            }
        }
        h.finalize().iter().take(8).map(|b| format!("{b:02x}")).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, detail: &str| Err(CliError::BadValue { key: key.into(), detail: detail.into() });
        if self.threads == 0 {
            return bad("threads", "must be at least 1");
        }
        if self.demos == 0 {
            return bad("demos", "must be positive");
        }
        if self.n_cand == 0 {
            return bad("n_cand", "must be positive");
        }
        if self.episodes == 0 {
            return bad("episodes", "must be positive");
        }
        if self.eval_seeds.is_empty() {
            return bad("eval_seeds", "needs at least one seed");
        }
        if !(self.lambda_infer > 0.0) {
            return bad("lambda_infer", "must be positive");
        }
        if !(self.t_ctrl_ms > 0.0) {
            return bad("t_ctrl_ms", "must be positive");
        }
        if self.scorer_hidden.is_empty() || self.scorer_hidden.contains(&0) {
            return bad("scorer_hidden", "needs positive widths");
        }
        self.env().validate()?;
        self.teacher_train().validate()?;
        self.scorer_train().validate()?;
        self.distill_config().validate()?;
        self.student_train().validate()?;
        self.loss_weights().validate()?;
        if self.latent == 0 || self.width_mult == 0 {
            return bad("latent", "latent and width_mult must be positive");
        }
        Ok(())
    }

    pub fn env(&self) -> EnvConfig {
        let mut e = EnvConfig::default();
        e.plant.dt = self.dt;
        e.plant.damping = self.damping;
        e.plant.a_max = self.a_max;
        e.plant.v_max = self.v_max;
        e.r_goal = self.r_goal;
        e.max_steps = self.max_steps;
        e.horizon = self.horizon;
        e.bimodal_fraction = self.bimodal_fraction;
        e.p_offset_zero = self.p_offset_zero;
        e.planner.delta_safe = self.delta_safe;
        e.scenes.delta_safe = self.delta_safe;
        e.score = ScoreParams {
            kappa_c: self.kappa_c,
            kappa_u: self.kappa_u,
            kappa_g: self.kappa_g,
            c_sat: self.c_sat,
        };
        e
    }

    pub fn teacher_config(&self) -> TeacherConfig {
        TeacherConfig {
            n_steps: self.teacher_steps,
            beta_start: self.beta_start,
            beta_end: self.beta_end,
            hidden: self.teacher_hidden,
            depth: self.teacher_depth,
            activation: Activation::SmoothRelu,
            sampler: self.sampler,
        }
    }

    pub fn teacher_train(&self) -> TrainOptions {
        TrainOptions {
            epochs: self.teacher_epochs,
            batch_size: self.teacher_batch,
            lr: self.teacher_lr,
            seed: self.seed,
            lr_final: self.teacher_lr_final,
        }
    }

    pub fn scorer_train(&self) -> TrainOptions {
        TrainOptions {
            epochs: self.scorer_epochs,
            batch_size: self.scorer_batch,
            lr: self.scorer_lr,
            seed: self.seed,
            lr_final: None,
        }
    }

    pub fn distill_config(&self) -> DistillConfig {
        DistillConfig {
            count: self.pairs,
            temps: self.temps.clone(),
            probs: self.temp_probs.clone(),
            beta: self.beta,
            retry_cap: self.retry_cap,
            ..DistillConfig::default()
        }
    }

    pub fn student_config(&self) -> StudentConfig {
        StudentConfig {
            latent: self.latent,
            width_mult: self.width_mult,
            depth: self.student_depth,
            variant: self.variant,
            ..StudentConfig::default()
        }
    }

    pub fn student_train(&self) -> TrainOptions {
        TrainOptions {
            epochs: self.epochs,
            batch_size: self.batch,
            lr: self.lr,
            seed: self.seed,
            lr_final: self.lr_final,
        }
    }

    pub fn loss_weights(&self) -> LossWeights {
        LossWeights {
            rec: self.alpha_rec,
            lat: self.alpha_lat,
            pred: self.alpha_pred,
            act: self.alpha_act,
            spec: self.alpha_spec,
            inv: self.alpha_inv,
            w_first: self.w_first,
            w_tail: self.w_tail,
        }
    }
}
