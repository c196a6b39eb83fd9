//! CSV artifacts exchanged between subcommands. Each file starts with a
//! `# config_hash=<hex> seed=<n>` line.

use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use dnk_core::env::{Context, Demo, Obstacle, PointMassState, Scene, Trajectory, K_OBS, STEP_DIM};

use crate::error::{CliError, Result};
use crate::modelio::Provenance;

/// Artifact locations inside the output directory.
#[derive(Clone, Debug)]
pub struct Layout {
    pub dir: PathBuf,
}

impl Layout {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }

    pub fn demos(&self) -> PathBuf {
        self.dir.join("demos.csv")
    }
    pub fn teacher(&self) -> PathBuf {
        self.dir.join("teacher.dnkm")
    }
    pub fn scorer(&self) -> PathBuf {
        self.dir.join("scorer.dnkm")
    }
    pub fn dataset(&self) -> PathBuf {
        self.dir.join("dataset.dnkd")
    }
    pub fn student(&self, variant: &str) -> PathBuf {
        self.dir.join(format!("student_{variant}.dnkm"))
    }
    pub fn student_curve(&self, variant: &str) -> PathBuf {
        self.dir.join(format!("student_{variant}_curve.csv"))
    }
    pub fn episodes(&self, label: &str) -> PathBuf {
        self.dir.join(format!("episodes_{label}.csv"))
    }
    pub fn decisions(&self, label: &str) -> PathBuf {
        self.dir.join(format!("decisions_{label}.csv"))
    }
    pub fn bench_latency(&self) -> PathBuf {
        self.dir.join("bench_latency.csv")
    }
    pub fn pca_coords(&self) -> PathBuf {
        self.dir.join("pca_coords.csv")
    }
    pub fn modes(&self) -> PathBuf {
        self.dir.join("modes.csv")
    }
    pub fn report_prefix(&self) -> PathBuf {
        self.dir.join("report_")
    }
    pub fn resolved_config(&self) -> PathBuf {
        self.dir.join("resolved.conf")
    }
}

pub fn provenance_line(p: &Provenance) -> String {
    format!("# config_hash={} seed={}\n", p.config_hash, p.seed)
}

/// Creates `path` and writes the provenance line.
pub fn create_with_provenance(path: &Path, p: &Provenance) -> Result<csv::Writer<File>> {
    let mut f = File::create(path).map_err(|e| CliError::io(path, e))?;
    f.write_all(provenance_line(p).as_bytes()).map_err(|e| CliError::io(path, e))?;
    Ok(csv::Writer::from_writer(f))
}

pub fn read_provenance(path: &Path) -> Result<Provenance> {
    let f = File::open(path).map_err(|e| CliError::io(path, e))?;
    let mut line = String::new();
    BufReader::new(f).read_line(&mut line).map_err(|e| CliError::io(path, e))?;
    let bad = || CliError::Syntax { path: path.into(), line: 1, detail: "missing provenance line".into() };
    let rest = line.trim().strip_prefix("# ").ok_or_else(bad)?;
    let mut hash = None;
    let mut seed = None;
    for tok in rest.split(' ') {
        match tok.split_once('=') {
            Some(("config_hash", v)) => hash = Some(v.to_string()),
            Some(("seed", v)) => seed = v.parse().ok(),
            _ => return Err(bad()),
        }
    }
    Ok(Provenance { config_hash: hash.ok_or_else(bad)?, seed: seed.ok_or_else(bad)? })
}

pub fn reader(path: &Path) -> Result<csv::Reader<File>> {
    csv::ReaderBuilder::new().comment(Some(b'#')).from_path(path).map_err(|e| CliError::csv(path, e))
}

fn fmt(x: f64) -> String {
    format!("{x:?}")
}

fn demo_header(horizon: usize) -> Vec<String> {
    let mut h: Vec<String> = ["offset", "bound", "start_x", "start_y", "start_vx", "start_vy", "goal_x", "goal_y", "n_obs"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    for j in 0..K_OBS {
        h.extend([format!("obs{j}_x"), format!("obs{j}_y"), format!("obs{j}_r")]);
    }
    h.extend((0..horizon * STEP_DIM).map(|i| format!("t{i}")));
    h
}

/// One row per demo: scene, window offset and the raw window values.
pub fn write_demos(path: &Path, demos: &[Demo], p: &Provenance) -> Result<()> {
    let h = demos.first().map_or(0, |d| d.traj.horizon());
    let mut w = create_with_provenance(path, p)?;
    let csv_err = |e| CliError::csv(path, e);
    w.write_record(demo_header(h)).map_err(csv_err)?;
    for d in demos {
        let s = &d.scene;
        let mut row = vec![d.offset.to_string(), fmt(s.bound)];
        row.extend(s.start.to_array().iter().map(|v| fmt(*v)));
        row.extend([fmt(s.goal[0]), fmt(s.goal[1]), s.obstacles.len().to_string()]);
        for j in 0..K_OBS {
            match s.obstacles.get(j) {
                Some(o) => row.extend([fmt(o.center[0]), fmt(o.center[1]), fmt(o.radius)]),
                None => row.extend(["0.0".to_string(), "0.0".into(), "0.0".into()]),
            }
        }
        row.extend(d.traj.flat().iter().map(|v| fmt(*v)));
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

pub fn read_demos(path: &Path) -> Result<Vec<Demo>> {
    let mut r = reader(path)?;
    let cols = r.headers().map_err(|e| CliError::csv(path, e))?.len();
    let fixed = 9 + 3 * K_OBS;
    if cols <= fixed || (cols - fixed) % STEP_DIM != 0 {
        return Err(CliError::Syntax { path: path.into(), line: 2, detail: format!("{cols} demo columns") });
    }
    let horizon = (cols - fixed) / STEP_DIM;
    let mut out = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| CliError::csv(path, e))?;
        let bad = |detail: String| CliError::Syntax { path: path.into(), line: i + 3, detail };
        let nums: Vec<f64> = rec
            .iter()
            .map(|v| v.parse::<f64>().map_err(|_| bad(format!("`{v}` is not a number"))))
            .collect::<Result<_>>()?;
        let n_obs = nums[8] as usize;
        if n_obs > K_OBS {
            return Err(bad(format!("{n_obs} obstacles")));
        }
        let obstacles = (0..n_obs)
            .map(|j| Obstacle { center: [nums[9 + 3 * j], nums[10 + 3 * j]], radius: nums[11 + 3 * j] })
            .collect();
        let scene = Scene::new(PointMassState::from_slice(&nums[2..6]), [nums[6], nums[7]], obstacles, nums[1])?;
        let traj = Trajectory::from_flat(horizon, nums[fixed..].to_vec())?;
        let context = Context::new(traj.state(0), &scene);
        out.push(Demo { scene, traj, context, offset: nums[0] as usize });
    }
    Ok(out)
}

/// One closed-loop episode as stored in `episodes_<label>.csv`.
#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeRow {
    pub seed: u64,
    pub scene: usize,
    pub success: bool,
    pub collided: bool,
    pub failed: bool,
    pub steps: usize,
    pub raw_return: f64,
    pub normalized_return: f64,
}

pub const EPISODE_HEADER: [&str; 8] =
    ["seed", "scene", "success", "collided", "failed", "steps", "raw_return", "normalized_return"];

pub fn write_episodes(path: &Path, rows: &[EpisodeRow], p: &Provenance) -> Result<()> {
    let mut w = create_with_provenance(path, p)?;
    let csv_err = |e| CliError::csv(path, e);
    w.write_record(EPISODE_HEADER).map_err(csv_err)?;
    for r in rows {
        w.write_record([
            r.seed.to_string(),
            r.scene.to_string(),
            (r.success as u8).to_string(),
            (r.collided as u8).to_string(),
            (r.failed as u8).to_string(),
            r.steps.to_string(),
            fmt(r.raw_return),
            fmt(r.normalized_return),
        ])
        .map_err(csv_err)?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

pub fn read_episodes(path: &Path) -> Result<Vec<EpisodeRow>> {
    let mut r = reader(path)?;
    let mut out = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| CliError::csv(path, e))?;
        let bad = || CliError::Syntax { path: path.into(), line: i + 3, detail: "malformed episode row".into() };
        if rec.len() != EPISODE_HEADER.len() {
            return Err(bad());
        }
        let flag = |v: &str| match v {
            "0" => Ok(false),
            "1" => Ok(true),
            _ => Err(bad()),
        };
        out.push(EpisodeRow {
            seed: rec[0].parse().map_err(|_| bad())?,
            scene: rec[1].parse().map_err(|_| bad())?,
            success: flag(&rec[2])?,
            collided: flag(&rec[3])?,
            failed: flag(&rec[4])?,
            steps: rec[5].parse().map_err(|_| bad())?,
            raw_return: rec[6].parse().map_err(|_| bad())?,
            normalized_return: rec[7].parse().map_err(|_| bad())?,
        });
    }
    Ok(out)
}

/// Per-decision latencies as `(seed, scene, tick, ms)`.
pub fn write_decisions(path: &Path, rows: &[(u64, usize, usize, f64)], p: &Provenance) -> Result<()> {
    let mut w = create_with_provenance(path, p)?;
    let csv_err = |e| CliError::csv(path, e);
    w.write_record(["seed", "scene", "tick", "latency_ms"]).map_err(csv_err)?;
    for (seed, scene, tick, ms) in rows {
        w.write_record([seed.to_string(), scene.to_string(), tick.to_string(), fmt(*ms)]).map_err(csv_err)?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

pub fn read_decision_latencies(path: &Path) -> Result<Vec<f64>> {
    let mut r = reader(path)?;
    r.records()
        .enumerate()
        .map(|(i, rec)| {
            let rec = rec.map_err(|e| CliError::csv(path, e))?;
            rec.get(3)
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| CliError::Syntax { path: path.into(), line: i + 3, detail: "malformed decision row".into() })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use dnk_core::env::{generate_demos, EnvConfig};

    fn prov() -> Provenance {
        Provenance { config_hash: "abc".into(), seed: 4 }
    }

    #[test]
    fn demos_round_trip_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        let demos = generate_demos(&EnvConfig::default(), 20, 3).unwrap();
        write_demos(&path, &demos, &prov()).unwrap();
        let back = read_demos(&path).unwrap();
        assert_eq!(back.len(), demos.len());
        for (a, b) in demos.iter().zip(&back) {
            assert_eq!(a.scene, b.scene);
            assert_eq!(a.traj, b.traj);
            assert_eq!(a.context, b.context);
            assert_eq!(a.offset, b.offset);
        }
        assert_eq!(read_provenance(&path).unwrap(), prov());
    }

    #[test]
    fn episodes_and_decisions_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let rows = vec![
            EpisodeRow { seed: 1, scene: 0, success: true, collided: false, failed: false, steps: 40, raw_return: 0.1 + 0.2, normalized_return: 1.0 / 3.0 },
            EpisodeRow { seed: 2, scene: 5, success: false, collided: true, failed: false, steps: 7, raw_return: -1e-300, normalized_return: 0.0 },
        ];
        let p = dir.path().join("e.csv");
        write_episodes(&p, &rows, &prov()).unwrap();
        assert_eq!(read_episodes(&p).unwrap(), rows);
        let q = dir.path().join("l.csv");
        write_decisions(&q, &[(0, 1, 2, 0.125), (0, 1, 3, 7.0)], &prov()).unwrap();
        assert_eq!(read_decision_latencies(&q).unwrap(), vec![0.125, 7.0]);
    }
}
