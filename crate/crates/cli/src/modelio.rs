//! `DNKMODL1` model files.
//!
//! Layout: the 8 magic bytes, one header line of space-separated
//! `key=value` pairs ending in `\n`, then parameter blocks, each a
//! little-endian `u64` length followed by that many little-endian `f64`s.

use std::collections::BTreeMap;
use std::path::Path;

use dnk_core::diffusion::{NoiseSchedule, Sampler, Teacher};
use dnk_core::numkit::{Activation, Layer, Matrix, Mlp};
use dnk_core::quality::QualityScorer;
use dnk_core::student::{Student, Transition, Variant};

use crate::error::{CliError, Result};

pub const MODEL_MAGIC: &[u8; 8] = b"DNKMODL1";

/// Which run produced a model.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Provenance {
    pub config_hash: String,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelFile {
    pub header: BTreeMap<String, String>,
    pub blocks: Vec<Vec<f64>>,
}

impl ModelFile {
    pub fn encode(&self) -> Vec<u8> {
        let mut out = MODEL_MAGIC.to_vec();
        let line: Vec<String> = self.header.iter().map(|(k, v)| format!("{k}={v}")).collect();
        out.extend_from_slice(line.join(" ").as_bytes());
        out.push(b'\n');
        for b in &self.blocks {
            out.extend_from_slice(&(b.len() as u64).to_le_bytes());
            for v in b {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn decode(bytes: &[u8], path: &Path) -> Result<Self> {
        let bad = |detail: String| CliError::Model { path: path.into(), detail };
        if bytes.len() < 8 || &bytes[..8] != MODEL_MAGIC {
            return Err(CliError::BadMagic { path: path.into(), expected: "DNKMODL1" });
        }
        let rest = &bytes[8..];
        let nl = rest.iter().position(|&b| b == b'\n').ok_or_else(|| bad("header is not terminated".into()))?;
        let text = std::str::from_utf8(&rest[..nl]).map_err(|_| bad("header is not UTF-8".into()))?;
        let mut header = BTreeMap::new();
        for tok in text.split(' ').filter(|t| !t.is_empty()) {
            let (k, v) = tok.split_once('=').ok_or_else(|| bad(format!("header token `{tok}`")))?;
            if header.insert(k.to_string(), v.to_string()).is_some() {
                return Err(bad(format!("duplicate header key `{k}`")));
            }
        }
        let mut pos = 0usize;
        let body = &rest[nl + 1..];
        let mut blocks = Vec::new();
        while pos < body.len() {
            let len_bytes: [u8; 8] = body
                .get(pos..pos + 8)
                .and_then(|s| s.try_into().ok())
                .ok_or_else(|| bad("truncated block length".into()))?;
            let len = u64::from_le_bytes(len_bytes) as usize;
            pos += 8;
            let end = len.checked_mul(8).and_then(|n| n.checked_add(pos)).filter(|&e| e <= body.len());
            let end = end.ok_or_else(|| bad(format!("block {} truncated", blocks.len())))?;
            blocks.push(body[pos..end].chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect());
            pos = end;
        }
        Ok(Self { header, blocks })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.encode()).map_err(|e| CliError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
        Self::decode(&bytes, path)
    }

    fn get(&self, key: &str, path: &Path) -> Result<&str> {
        self.header
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| CliError::Model { path: path.into(), detail: format!("missing header key `{key}`") })
    }

    fn parse<T: std::str::FromStr>(&self, key: &str, path: &Path) -> Result<T> {
        let v = self.get(key, path)?;
        v.parse()
            .map_err(|_| CliError::Model { path: path.into(), detail: format!("header key `{key}` has bad value `{v}`") })
    }

    pub fn provenance(&self, path: &Path) -> Result<Provenance> {
        Ok(Provenance { config_hash: self.get("config_hash", path)?.to_string(), seed: self.parse("seed", path)? })
    }

    pub fn kind(&self, path: &Path) -> Result<&str> {
        self.get("kind", path)
    }

    fn base(kind: &str, prov: &Provenance) -> BTreeMap<String, String> {
        let mut h = BTreeMap::new();
        h.insert("kind".into(), kind.into());
        h.insert("config_hash".into(), prov.config_hash.clone());
        h.insert("seed".into(), prov.seed.to_string());
        h
    }

    fn expect_kind(&self, kind: &str, path: &Path) -> Result<()> {
        let found = self.kind(path)?;
        if found != kind {
            return Err(CliError::Model { path: path.into(), detail: format!("expected a {kind} model, found {found}") });
        }
        Ok(())
    }
}

/// `in:out:activation` per layer, comma separated.
pub fn arch_string(net: &Mlp) -> String {
    net.layers()
        .iter()
        .map(|l| format!("{}:{}:{}", l.in_dim(), l.out_dim(), l.activation.tag()))
        .collect::<Vec<_>>()
        .join(",")
}

/// Zero-valued network with the given architecture.
pub fn mlp_from_arch(arch: &str, path: &Path) -> Result<Mlp> {
    let bad = |detail: String| CliError::Model { path: path.into(), detail };
    let layers = arch
        .split(',')
        .map(|spec| {
            let parts: Vec<&str> = spec.split(':').collect();
            let [i, o, a] = parts[..] else {
                return Err(bad(format!("layer spec `{spec}`")));
            };
            let i: usize = i.parse().map_err(|_| bad(format!("layer spec `{spec}`")))?;
            let o: usize = o.parse().map_err(|_| bad(format!("layer spec `{spec}`")))?;
            let activation = Activation::from_tag(a).ok_or_else(|| bad(format!("activation `{a}`")))?;
            Ok(Layer { weight: Matrix::zeros(o, i), bias: vec![0.0; o], activation })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Mlp::new(layers)?)
}

fn fill(slots: Vec<&mut [f64]>, blocks: &[Vec<f64>], path: &Path) -> Result<()> {
    if slots.len() != blocks.len() {
        return Err(CliError::Model {
            path: path.into(),
            detail: format!("expected {} parameter blocks, found {}", slots.len(), blocks.len()),
        });
    }
    for (i, (slot, b)) in slots.into_iter().zip(blocks).enumerate() {
        if slot.len() != b.len() {
            return Err(CliError::Model {
                path: path.into(),
                detail: format!("block {i} has {} values, expected {}", b.len(), slot.len()),
            });
        }
        slot.copy_from_slice(b);
    }
    Ok(())
}

pub fn teacher_to_file(t: &Teacher, prov: &Provenance) -> ModelFile {
    let mut header = ModelFile::base("teacher", prov);
    header.insert("horizon".into(), t.horizon.to_string());
    header.insert("steps".into(), t.sched.n().to_string());
    header.insert("sampler".into(), t.sampler.tag());
    header.insert("net".into(), arch_string(&t.net));
    let mut blocks = vec![t.sched.betas().to_vec()];
    blocks.extend(t.net.param_slices().iter().map(|s| s.to_vec()));
    ModelFile { header, blocks }
}

pub fn teacher_from_file(f: &ModelFile, path: &Path) -> Result<Teacher> {
    f.expect_kind("teacher", path)?;
    let sampler = Sampler::from_tag(f.get("sampler", path)?)
        .ok_or_else(|| CliError::Model { path: path.into(), detail: "bad sampler tag".into() })?;
    let mut net = mlp_from_arch(f.get("net", path)?, path)?;
    let (betas, rest) = f
        .blocks
        .split_first()
        .ok_or_else(|| CliError::Model { path: path.into(), detail: "no parameter blocks".into() })?;
    let sched = NoiseSchedule::from_betas(betas.clone())?;
    if sched.n() != f.parse::<usize>("steps", path)? {
        return Err(CliError::Model { path: path.into(), detail: "step count disagrees with the schedule".into() });
    }
    fill(net.param_slices_mut(), rest, path)?;
    Ok(Teacher::from_parts(net, sched, f.parse("horizon", path)?, sampler)?)
}

pub fn scorer_to_file(s: &QualityScorer, prov: &Provenance) -> ModelFile {
    let mut header = ModelFile::base("scorer", prov);
    header.insert("horizon".into(), s.horizon.to_string());
    header.insert("net".into(), arch_string(&s.net));
    let mut blocks = vec![vec![s.mean, s.std]];
    blocks.extend(s.net.param_slices().iter().map(|b| b.to_vec()));
    ModelFile { header, blocks }
}

pub fn scorer_from_file(f: &ModelFile, path: &Path) -> Result<QualityScorer> {
    f.expect_kind("scorer", path)?;
    let mut net = mlp_from_arch(f.get("net", path)?, path)?;
    let (stats, rest) = f
        .blocks
        .split_first()
        .filter(|(s, _)| s.len() == 2)
        .ok_or_else(|| CliError::Model { path: path.into(), detail: "missing score statistics block".into() })?;
    fill(net.param_slices_mut(), rest, path)?;
    Ok(QualityScorer { net, horizon: f.parse("horizon", path)?, mean: stats[0], std: stats[1] })
}

pub fn student_to_file(s: &Student, prov: &Provenance) -> ModelFile {
    let mut header = ModelFile::base("student", prov);
    header.insert("horizon".into(), s.horizon.to_string());
    header.insert("variant".into(), s.variant().tag().into());
    header.insert("latent".into(), s.latent().to_string());
    header.insert("encoder".into(), arch_string(&s.encoder));
    header.insert("decoder".into(), arch_string(&s.decoder));
    if let Transition::Fdk { gamma, .. } = &s.transition {
        header.insert("gamma".into(), arch_string(gamma));
    }
    ModelFile { header, blocks: s.param_slices().iter().map(|b| b.to_vec()).collect() }
}

pub fn student_from_file(f: &ModelFile, path: &Path) -> Result<Student> {
    f.expect_kind("student", path)?;
    let l: usize = f.parse("latent", path)?;
    let variant = Variant::from_tag(f.get("variant", path)?)
        .ok_or_else(|| CliError::Model { path: path.into(), detail: "bad variant tag".into() })?;
    let transition = match variant {
        Variant::Fdk => Transition::Fdk {
            p: Matrix::zeros(l, l),
            q: Matrix::zeros(l, l),
            gamma: mlp_from_arch(f.get("gamma", path)?, path)?,
        },
        Variant::Kdm => Transition::Kdm { a: Matrix::zeros(l, l) },
    };
    let mut s = Student::from_parts(
        mlp_from_arch(f.get("encoder", path)?, path)?,
        transition,
        mlp_from_arch(f.get("decoder", path)?, path)?,
        f.parse("horizon", path)?,
    )?;
    fill(s.param_slices_mut(), &f.blocks, path)?;
    Ok(s)
}
