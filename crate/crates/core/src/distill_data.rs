//! Offline teacher-target pairs for distillation and their `DNKDSET1` file
//! format.
//!
//! All stored floats are single precision. Pairs are rounded to `f32` when
//! they are generated (the prior before the teacher sees it), so a dataset
//! in memory is exactly what a reload returns.
use std::fs;
use std::io::Write;
use std::path::Path;

use crate::diffusion::{fixed_mask, make_conditioned_prior, reverse_sample_batch, ConditionedPrior, Teacher, FIXED_LEN};
use crate::env::{sample_demo, Context, EnvConfig, Scene, SceneFamily, Trajectory, ACTION_DIM, CTX_DIM, STATE_DIM, STEP_DIM};
use crate::error::{DnkError, Result};
use crate::numkit::Rng64;
use crate::quality::{quantile_weights, Selector};

pub const DATASET_MAGIC: &[u8; 8] = b"DNKDSET1";
pub const DATASET_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct DistillConfig {
    pub count: usize,
    pub temps: Vec<f64>,
    pub probs: Vec<f64>,
    /// Reweighting strength; weights land in `[1, 1 + beta]`.
    pub beta: f64,
    pub retry_cap: usize,
    /// Records reverse-sampled together.
    pub batch: usize,
}

impl Default for DistillConfig {
    fn default() -> Self {
        Self {
            count: 20_000,
            temps: vec![0.3, 0.5, 0.7],
            probs: vec![0.25, 0.5, 0.25],
            beta: 1.0,
            retry_cap: 10,
            batch: 256,
        }
    }
}

impl DistillConfig {
    pub fn validate(&self) -> Result<()> {
        if self.count == 0 {
            return Err(DnkError::InvalidArgument("pair count must be positive".into()));
        }
        if self.temps.is_empty() || self.temps.len() != self.probs.len() {
            return Err(DnkError::InvalidArgument(format!(
                "{} temperatures but {} probabilities",
                self.temps.len(),
                self.probs.len()
            )));
        }
        if self.temps.iter().any(|t| !(*t > 0.0 && t.is_finite())) {
            return Err(DnkError::InvalidArgument("temperatures must be positive".into()));
        }
        let total: f64 = self.probs.iter().sum();
        if self.probs.iter().any(|p| !(*p >= 0.0)) || (total - 1.0).abs() > 1e-9 {
            return Err(DnkError::InvalidArgument(format!("probabilities must sum to 1, got {total}")));
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(DnkError::InvalidArgument("beta must be non-negative".into()));
        }
        if self.retry_cap == 0 || self.batch == 0 {
            return Err(DnkError::InvalidArgument("retry cap and batch size must be positive".into()));
        }
        Ok(())
    }
}

/// One distillation example: the conditioned prior, the teacher's clean
/// trajectory for it (normalised units), its quality score and weight.
#[derive(Clone, Debug, PartialEq)]
pub struct DistillPair {
    pub prior: ConditionedPrior,
    pub target: Vec<f64>,
    pub score: f64,
    pub weight: f64,
}

impl DistillPair {
    pub fn target_trajectory(&self, horizon: usize) -> Result<Trajectory> {
        Trajectory::from_normalized(horizon, &self.target)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DistillDataset {
    pub horizon: usize,
    /// Reverse steps of the teacher that produced the targets.
    pub n_steps: usize,
    pub beta: f64,
    /// Seed the records were generated from.
    pub seed: u64,
    /// Hash of the run configuration, `-` when produced outside a run.
    pub config_hash: String,
    pub pairs: Vec<DistillPair>,
}

impl DistillDataset {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn traj_dim(&self) -> usize {
        self.horizon * STEP_DIM
    }

    /// Checks every record against the declared shapes and invariants.
    pub fn validate(&self) -> Result<()> {
        if self.pairs.is_empty() {
            return Err(DnkError::Empty("distillation dataset"));
        }
        if self.config_hash.is_empty() || self.config_hash.contains(char::is_whitespace) {
            return Err(DnkError::InvalidArgument(format!("config hash {:?} must be a non-empty token", self.config_hash)));
        }
        let d = self.traj_dim();
        let mask = fixed_mask(self.horizon);
        for (i, p) in self.pairs.iter().enumerate() {
            if p.prior.values.len() != d || p.target.len() != d || p.prior.context.len() != CTX_DIM {
                return Err(DnkError::dim("distillation record", d, p.target.len()));
            }
            if p.prior.fixed_mask != mask {
                return Err(DnkError::InvalidArgument(format!("record {i}: unexpected fixed mask")));
            }
            if p.target[..FIXED_LEN] != p.prior.values[..FIXED_LEN] {
                return Err(DnkError::InvalidArgument(format!("record {i}: target ignores the fixed block")));
            }
            if !(p.weight >= 1.0 && p.weight <= 1.0 + self.beta) {
                return Err(DnkError::InvalidArgument(format!("record {i}: weight {} out of range", p.weight)));
            }
        }
        Ok(())
    }
}

fn round32(v: &mut [f64]) {
    v.iter_mut().for_each(|x| *x = *x as f32 as f64);
}

struct Draft {
    scene: Scene,
    prior: ConditionedPrior,
    rng: Rng64,
}

fn draft(env: &EnvConfig, cfg: &DistillConfig, rng: &mut Rng64) -> Result<Draft> {
    let lambda = cfg.temps[rng.categorical(&cfg.probs)];
    let family = if rng.bernoulli(env.bimodal_fraction) {
        SceneFamily::Bimodal
    } else {
        SceneFamily::Navigation
    };
    let demo = sample_demo(env, family, rng)?;
    let mut prior = make_conditioned_prior(&demo.context, lambda, env.horizon, rng)?;
    round32(&mut prior.values);
    round32(&mut prior.context);
    prior.lambda = prior.lambda as f32 as f64;
    Ok(Draft {
        scene: demo.scene,
        prior,
        rng: rng.clone(),
    })
}

/// Draws `cfg.count` pairs. Record `i` uses stream `i` of `seed` for its
/// temperature, scene, window and prior, so the result does not depend on
/// `cfg.batch`. A record whose teacher sample is not finite redraws its
/// scene, at most `cfg.retry_cap` times.
pub fn generate_pairs(
    teacher: &Teacher,
    selector: &Selector,
    env: &EnvConfig,
    cfg: &DistillConfig,
    seed: u64,
) -> Result<DistillDataset> {
    cfg.validate()?;
    env.validate()?;
    if teacher.horizon != env.horizon {
        return Err(DnkError::dim("teacher horizon", env.horizon, teacher.horizon));
    }
    let mut pairs = Vec::with_capacity(cfg.count);
    for start in (0..cfg.count).step_by(cfg.batch) {
        let end = (start + cfg.batch).min(cfg.count);
        let mut rngs: Vec<Rng64> = (start..end).map(|i| Rng64::seeded(seed, i as u64)).collect();
        let drafts = rngs.iter_mut().map(|r| draft(env, cfg, r)).collect::<Result<Vec<_>>>()?;
        let priors: Vec<ConditionedPrior> = drafts.iter().map(|d| d.prior.clone()).collect();
        let mut step_rngs: Vec<Rng64> = drafts.iter().map(|d| d.rng.clone()).collect();
        let batch_out = reverse_sample_batch(teacher, &priors, &mut step_rngs);
        for (j, mut dr) in drafts.into_iter().enumerate() {
            let target = match &batch_out {
                Ok(m) if m.row(j).iter().all(|v| v.is_finite()) => m.row(j).to_vec(),
                _ => {
                    let (d2, t) = retry(teacher, env, cfg, &mut rngs[j], start + j, seed)?;
                    dr = d2;
                    t
                }
            };
            pairs.push(finish(dr, target, selector, env.horizon)?);
        }
    }
    let scores: Vec<f64> = pairs.iter().map(|p| p.score).collect();
    for (p, w) in pairs.iter_mut().zip(quantile_weights(&scores, cfg.beta)?) {
        p.weight = w as f32 as f64;
    }
    Ok(DistillDataset {
        horizon: env.horizon,
        n_steps: teacher.sched.n(),
        beta: cfg.beta,
        seed,
        config_hash: "-".into(),
        pairs,
    })
}

fn retry(
    teacher: &Teacher,
    env: &EnvConfig,
    cfg: &DistillConfig,
    rng: &mut Rng64,
    record: usize,
    seed: u64,
) -> Result<(Draft, Vec<f64>)> {
    for _ in 0..cfg.retry_cap {
        let mut dr = draft(env, cfg, rng)?;
        let mut step = [dr.rng.clone()];
        if let Ok(out) = reverse_sample_batch(teacher, std::slice::from_ref(&dr.prior), &mut step) {
            if out.is_finite() {
                dr.rng = step[0].clone();
                return Ok((dr, out.into_vec()));
            }
        }
    }
    Err(DnkError::RetriesExhausted {
        record,
        seed,
        attempts: cfg.retry_cap,
    })
}

fn finish(dr: Draft, mut target: Vec<f64>, selector: &Selector, horizon: usize) -> Result<DistillPair> {
    round32(&mut target);
    let traj = Trajectory::from_normalized(horizon, &target)?;
    let ctx = Context::from_vector(&dr.prior.context)?;
    let score = selector.score(std::slice::from_ref(&traj), &ctx, &dr.scene)?[0] as f32 as f64;
    Ok(DistillPair {
        prior: dr.prior,
        target,
        score,
        weight: 1.0,
    })
}

/// Teacher targets for `count` priors that all share `scene`'s start state,
/// with temperatures drawn from the configured mixture. Used to check that
/// both detour sides survive in the targets.
pub fn scene_targets(
    teacher: &Teacher,
    scene: &Scene,
    count: usize,
    cfg: &DistillConfig,
    seed: u64,
) -> Result<Vec<Trajectory>> {
    cfg.validate()?;
    let ctx = Context::new(scene.start, scene);
    let mut priors = Vec::with_capacity(count);
    let mut rngs = Vec::with_capacity(count);
    for i in 0..count {
        let mut rng = Rng64::seeded(seed, i as u64);
        let lambda = cfg.temps[rng.categorical(&cfg.probs)];
        priors.push(make_conditioned_prior(&ctx, lambda, teacher.horizon, &mut rng)?);
        rngs.push(rng);
    }
    let out = reverse_sample_batch(teacher, &priors, &mut rngs)?;
    (0..count)
        .map(|i| Trajectory::from_normalized(teacher.horizon, out.row(i)))
        .collect()
}

fn header_line(ds: &DistillDataset) -> String {
    format!(
        "version={} count={} horizon={} state_dim={} action_dim={} ctx_dim={} diffusion_steps={} beta={} seed={} config_hash={}\n",
        DATASET_VERSION,
        ds.pairs.len(),
        ds.horizon,
        STATE_DIM,
        ACTION_DIM,
        CTX_DIM,
        ds.n_steps,
        ds.beta,
        ds.seed,
        ds.config_hash
    )
}

/// Bytes of one record: prior, mask, context, target, score, weight, lambda.
fn record_len(d: usize) -> usize {
    4 * d + d + 4 * CTX_DIM + 4 * d + 3 * 4
}

pub fn encode_dataset(ds: &DistillDataset) -> Result<Vec<u8>> {
    ds.validate()?;
    let d = ds.traj_dim();
    let mut out = Vec::with_capacity(64 + ds.pairs.len() * record_len(d));
    out.extend_from_slice(DATASET_MAGIC);
    out.extend_from_slice(header_line(ds).as_bytes());
    let put = |out: &mut Vec<u8>, v: f64| out.extend_from_slice(&(v as f32).to_le_bytes());
    for p in &ds.pairs {
        p.prior.values.iter().for_each(|&v| put(&mut out, v));
        out.extend(p.prior.fixed_mask.iter().map(|&m| m as u8));
        p.prior.context.iter().for_each(|&v| put(&mut out, v));
        p.target.iter().for_each(|&v| put(&mut out, v));
        put(&mut out, p.score);
        put(&mut out, p.weight);
        put(&mut out, p.prior.lambda);
    }
    Ok(out)
}

pub fn save_dataset(ds: &DistillDataset, path: &Path) -> Result<()> {
    let bytes = encode_dataset(ds)?;
    let mut f = fs::File::create(path).map_err(|e| DnkError::io(path, e))?;
    f.write_all(&bytes).map_err(|e| DnkError::io(path, e))
}

pub fn load_dataset(path: &Path) -> Result<DistillDataset> {
    let bytes = fs::read(path).map_err(|e| DnkError::io(path, e))?;
    decode_dataset(&bytes, path)
}

struct Header {
    version: u32,
    count: usize,
    horizon: usize,
    n_steps: usize,
    beta: f64,
    seed: u64,
    config_hash: String,
}

fn parse_header(line: &str, path: &Path) -> Result<Header> {
    let bad = |detail: String| DnkError::Header {
        path: path.to_path_buf(),
        detail,
    };
    let mut kv = std::collections::BTreeMap::new();
    for tok in line.split_whitespace() {
        let (k, v) = tok.split_once('=').ok_or_else(|| bad(format!("token {tok:?} is not key=value")))?;
        kv.insert(k, v);
    }
    fn get<T: std::str::FromStr>(
        kv: &std::collections::BTreeMap<&str, &str>,
        key: &str,
        bad: &dyn Fn(String) -> DnkError,
    ) -> Result<T> {
        kv.get(key)
            .ok_or_else(|| bad(format!("missing key {key}")))?
            .parse()
            .map_err(|_| bad(format!("unparsable value for {key}")))
    }
    let version: u32 = get(&kv, "version", &bad)?;
    if version != DATASET_VERSION {
        return Err(DnkError::Version {
            path: path.to_path_buf(),
            expected: DATASET_VERSION,
            found: version,
        });
    }
    let dims: [(&str, usize); 3] = [("state_dim", STATE_DIM), ("action_dim", ACTION_DIM), ("ctx_dim", CTX_DIM)];
    for (key, want) in dims {
        let got: usize = get(&kv, key, &bad)?;
        if got != want {
            return Err(bad(format!("{key}={got}, this build uses {want}")));
        }
    }
    let h = Header {
        version,
        count: get(&kv, "count", &bad)?,
        horizon: get(&kv, "horizon", &bad)?,
        n_steps: get(&kv, "diffusion_steps", &bad)?,
        beta: get(&kv, "beta", &bad)?,
        seed: get(&kv, "seed", &bad)?,
        config_hash: get(&kv, "config_hash", &bad)?,
    };
    if h.count == 0 || h.horizon == 0 {
        return Err(bad("count and horizon must be positive".into()));
    }
    Ok(h)
}

fn read_f32s(rec: &[u8], at: &mut usize, n: usize) -> Vec<f64> {
    let v = rec[*at..*at + 4 * n]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    *at += 4 * n;
    v
}

pub fn decode_dataset(bytes: &[u8], path: &Path) -> Result<DistillDataset> {
    if bytes.len() < DATASET_MAGIC.len() || &bytes[..DATASET_MAGIC.len()] != DATASET_MAGIC {
        return Err(DnkError::BadMagic {
            path: path.to_path_buf(),
            expected: "DNKDSET1",
        });
    }
    let rest = &bytes[DATASET_MAGIC.len()..];
    let nl = rest.iter().position(|&b| b == b'\n').ok_or_else(|| DnkError::Truncated {
        path: path.to_path_buf(),
        detail: "header line has no terminator".into(),
    })?;
    let line = std::str::from_utf8(&rest[..nl]).map_err(|_| DnkError::Header {
        path: path.to_path_buf(),
        detail: "header is not UTF-8".into(),
    })?;
    let h = parse_header(line, path)?;
    debug_assert_eq!(h.version, DATASET_VERSION);
    let body = &rest[nl + 1..];
    let d = h.horizon * STEP_DIM;
    let rl = record_len(d);
    let have = body.len() / rl;
    if have < h.count {
        return Err(DnkError::Truncated {
            path: path.to_path_buf(),
            detail: format!("header declares {} records, file holds {}", h.count, have),
        });
    }
    if body.len() != h.count * rl {
        return Err(DnkError::Header {
            path: path.to_path_buf(),
            detail: format!("{} bytes after the declared records", body.len() - h.count * rl),
        });
    }
    let mut pairs = Vec::with_capacity(h.count);
    for rec in body.chunks_exact(rl) {
        let mut at = 0;
        let values = read_f32s(rec, &mut at, d);
        let mask_bytes = &rec[at..at + d];
        at += d;
        let context = read_f32s(rec, &mut at, CTX_DIM);
        let target = read_f32s(rec, &mut at, d);
        let tail = read_f32s(rec, &mut at, 3);
        if mask_bytes.iter().any(|&b| b > 1) {
            return Err(DnkError::Header {
                path: path.to_path_buf(),
                detail: "mask byte is neither 0 nor 1".into(),
            });
        }
        pairs.push(DistillPair {
            prior: ConditionedPrior {
                values,
                fixed_mask: mask_bytes.iter().map(|&b| b == 1).collect(),
                context,
                lambda: tail[2],
            },
            target,
            score: tail[0],
            weight: tail[1],
        });
    }
    let ds = DistillDataset {
        horizon: h.horizon,
        n_steps: h.n_steps,
        beta: h.beta,
        seed: h.seed,
        config_hash: h.config_hash,
        pairs,
    };
    ds.validate().map_err(|e| DnkError::Header {
        path: path.to_path_buf(),
        detail: e.to_string(),
    })?;
    Ok(ds)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::{Sampler, TeacherConfig};
    use crate::env::ScoreParams;

    fn tiny_teacher(h: usize) -> Teacher {
        let cfg = TeacherConfig { hidden: 16, depth: 1, n_steps: 4, ..Default::default() };
        Teacher::new(&cfg, h, &mut Rng64::seeded(0, 0)).unwrap()
    }

    fn env(h: usize) -> EnvConfig {
        EnvConfig { horizon: h, ..Default::default() }
    }

    fn small_cfg(count: usize) -> DistillConfig {
        DistillConfig { count, batch: 7, ..Default::default() }
    }

    fn geometry() -> Selector {
        Selector::Geometry(ScoreParams::default())
    }

    #[test]
    fn pairs_keep_the_fixed_block_and_weight_range() {
        let t = tiny_teacher(4);
        let ds = generate_pairs(&t, &geometry(), &env(4), &small_cfg(40), 3).unwrap();
        assert_eq!(ds.len(), 40);
        for p in &ds.pairs {
            assert_eq!(p.target[..FIXED_LEN], p.prior.values[..FIXED_LEN]);
        }
        let lo = ds.pairs.iter().map(|p| p.weight).fold(f64::MAX, f64::min);
        let hi = ds.pairs.iter().map(|p| p.weight).fold(f64::MIN, f64::max);
        assert_eq!(lo, 1.0);
        assert_eq!(hi, 2.0);
        ds.validate().unwrap();
    }

    #[test]
    fn generation_is_independent_of_batch_size() {
        let t = tiny_teacher(4);
        let a = generate_pairs(&t, &geometry(), &env(4), &small_cfg(20), 9).unwrap();
        let b = generate_pairs(&t, &geometry(), &env(4), &DistillConfig { batch: 20, ..small_cfg(20) }, 9).unwrap();
        assert_eq!(encode_dataset(&a).unwrap(), encode_dataset(&b).unwrap());
    }

    #[test]
    fn temperature_frequencies_follow_the_mixture() {
        let cfg = DistillConfig::default();
        let mut counts = [0usize; 3];
        let n = 10_000;
        for i in 0..n {
            let mut rng = Rng64::seeded(11, i as u64);
            counts[rng.categorical(&cfg.probs)] += 1;
        }
        for (c, p) in counts.iter().zip(&cfg.probs) {
            assert!((*c as f64 / n as f64 - p).abs() <= 0.02, "{counts:?}");
        }
    }

    #[test]
    fn generated_temperatures_come_from_the_list() {
        let t = tiny_teacher(4);
        let ds = generate_pairs(&t, &geometry(), &env(4), &small_cfg(30), 1).unwrap();
        for p in &ds.pairs {
            assert!([0.3f32, 0.5, 0.7].contains(&(p.prior.lambda as f32)));
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let t = tiny_teacher(3);
        let ds = generate_pairs(&t, &geometry(), &env(3), &small_cfg(100), 5).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pairs.bin");
        save_dataset(&ds, &path).unwrap();
        let back = load_dataset(&path).unwrap();
        assert_eq!(back, ds);
    }

    fn edit_header(b: &[u8], from: &str, to: &str) -> Vec<u8> {
        let end = b.iter().position(|&c| c == b'\n').unwrap();
        let line = String::from_utf8(b[..end].to_vec()).unwrap();
        assert!(line.contains(from));
        let mut out = line.replace(from, to).into_bytes();
        out.extend_from_slice(&b[end..]);
        out
    }

    fn encoded() -> Vec<u8> {
        let t = tiny_teacher(2);
        encode_dataset(&generate_pairs(&t, &geometry(), &env(2), &small_cfg(5), 2).unwrap()).unwrap()
    }

    #[test]
    fn corrupted_magic_is_a_format_error() {
        let mut b = encoded();
        b[0] = b'X';
        assert!(matches!(decode_dataset(&b, Path::new("x")), Err(DnkError::BadMagic { .. })));
    }

    #[test]
    fn wrong_version_is_reported() {
        let b = encoded();
        let c = edit_header(&b, "version=1", "version=7");
        assert!(matches!(
            decode_dataset(&c, Path::new("x")),
            Err(DnkError::Version { found: 7, .. })
        ));
    }

    #[test]
    fn missing_records_are_truncation() {
        let b = encoded();
        let cut = &b[..b.len() - 10];
        assert!(matches!(decode_dataset(cut, Path::new("x")), Err(DnkError::Truncated { .. })));
        let c = edit_header(&b, "count=5", "count=9");
        assert!(matches!(decode_dataset(&c, Path::new("x")), Err(DnkError::Truncated { .. })));
    }

    #[test]
    fn extra_bytes_and_bad_keys_are_header_errors() {
        let mut b = encoded();
        b.push(0);
        assert!(matches!(decode_dataset(&b, Path::new("x")), Err(DnkError::Header { .. })));
        let b = encoded();
        let c = edit_header(&b, "ctx_dim=15", "ctx_dim=16");
        assert!(matches!(decode_dataset(&c, Path::new("x")), Err(DnkError::Header { .. })));
    }

    #[test]
    fn config_rejects_bad_mixtures() {
        let bad = DistillConfig { probs: vec![0.5, 0.5, 0.5], ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = DistillConfig { temps: vec![0.3, -0.5, 0.7], ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = DistillConfig { temps: vec![0.3], ..Default::default() };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn non_finite_teacher_exhausts_retries() {
        let mut t = tiny_teacher(2);
        t.sampler = Sampler::Implicit;
        for s in t.net.param_slices_mut() {
            s.iter_mut().for_each(|v| *v = f64::NAN);
        }
        let err = generate_pairs(&t, &geometry(), &env(2), &small_cfg(3), 4).unwrap_err();
        assert!(matches!(err, DnkError::RetriesExhausted { record: 0, seed: 4, attempts: 10 }), "{err}");
    }

    #[test]
    fn scene_targets_share_the_start_state() {
        let t = tiny_teacher(3);
        let e = env(3);
        let mut rng = Rng64::seeded(0, 0);
        let (scene, _) = crate::env::sample_solvable(&e, SceneFamily::Bimodal, &mut rng).unwrap();
        let ts = scene_targets(&t, &scene, 10, &DistillConfig::default(), 1).unwrap();
        assert_eq!(ts.len(), 10);
        for tr in ts {
            assert_eq!(tr.state(0).pos, scene.start.pos);
        }
    }
}
