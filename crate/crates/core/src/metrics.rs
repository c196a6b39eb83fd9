//! Return and latency statistics, candidate PCA, mode coverage and CSV reports.
//!
//! Standard deviations are population deviations and P95 is nearest-rank.

use std::path::{Path, PathBuf};

use crate::env::{blocking_obstacle, pass_side, Scene, Side, Trajectory};
use crate::error::{DnkError, Result};
use crate::numkit::{pca_fit, Matrix};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpisodeStats {
    /// Grand mean of per-seed means.
    pub mean: f64,
    /// Population deviation of the per-seed means.
    pub std_across_seeds: f64,
    /// Mean over seeds of the within-seed population deviation.
    pub sigma_ep: f64,
    /// Smallest per-seed mean.
    pub worst_case: f64,
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

pub fn episode_stats(per_seed: &[Vec<f64>]) -> Result<EpisodeStats> {
    if per_seed.is_empty() || per_seed.iter().any(|s| s.is_empty()) {
        return Err(DnkError::Empty("episode_stats"));
    }
    let (means, stds): (Vec<f64>, Vec<f64>) = per_seed.iter().map(|s| mean_std(s)).unzip();
    let (mean, std_across_seeds) = mean_std(&means);
    Ok(EpisodeStats {
        mean,
        std_across_seeds,
        sigma_ep: stds.iter().sum::<f64>() / stds.len() as f64,
        worst_case: means.iter().copied().fold(f64::INFINITY, f64::min),
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LatencyStats {
    pub mean: f64,
    pub std: f64,
    pub p95: f64,
}

pub fn latency_stats(samples_ms: &[f64]) -> Result<LatencyStats> {
    if samples_ms.is_empty() {
        return Err(DnkError::Empty("latency_stats"));
    }
    let (mean, std) = mean_std(samples_ms);
    let mut sorted = samples_ms.to_vec();
    sorted.sort_by(f64::total_cmp);
    let rank = (0.95 * sorted.len() as f64).ceil() as usize;
    Ok(LatencyStats { mean, std, p95: sorted[rank.max(1) - 1] })
}

/// Two-dimensional PCA of two pooled candidate sets.
#[derive(Clone, Debug, PartialEq)]
pub struct PcaProjection {
    pub student: Vec<[f64; 2]>,
    pub teacher: Vec<[f64; 2]>,
    /// Variance shares of the two leading components of the pooled fit.
    pub explained: [f64; 2],
    /// Area of the hull intersection over area of the hull union.
    pub hull_overlap: f64,
}

pub fn pca_candidates(student: &[Trajectory], teacher: &[Trajectory]) -> Result<PcaProjection> {
    if student.is_empty() || teacher.is_empty() {
        return Err(DnkError::Empty("pca_candidates"));
    }
    let d = student[0].flat().len();
    if let Some(t) = student.iter().chain(teacher).find(|t| t.flat().len() != d) {
        return Err(DnkError::dim("pca_candidates", d, t.flat().len()));
    }
    let rows: Vec<Vec<f64>> = student.iter().chain(teacher).map(|t| t.to_normalized()).collect();
    let fit = pca_fit(&Matrix::from_rows(&rows)?, 2)?;
    let pts: Vec<[f64; 2]> = (0..rows.len())
        .map(|i| [fit.projections[(i, 0)], fit.projections[(i, 1)]])
        .collect();
    let (s, t) = pts.split_at(student.len());
    Ok(PcaProjection {
        student: s.to_vec(),
        teacher: t.to_vec(),
        explained: [fit.explained[0], fit.explained[1]],
        hull_overlap: hull_overlap(s, t),
    })
}

fn cross(o: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

/// Counter-clockwise convex hull by the monotone chain, collinear points dropped.
pub fn convex_hull(points: &[[f64; 2]]) -> Vec<[f64; 2]> {
    let mut pts = points.to_vec();
    pts.sort_by(|a, b| a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])));
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let mut hull: Vec<[f64; 2]> = Vec::with_capacity(2 * pts.len());
    for pass in 0..2 {
        let start = hull.len();
        let iter: Box<dyn Iterator<Item = &[f64; 2]>> =
            if pass == 0 { Box::new(pts.iter()) } else { Box::new(pts.iter().rev()) };
        for &p in iter {
            while hull.len() >= start + 2 && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0 {
                hull.pop();
            }
            hull.push(p);
        }
        hull.pop();
    }
    hull
}

/// Shoelace area, positive for counter-clockwise polygons.
pub fn polygon_area(poly: &[[f64; 2]]) -> f64 {
    let n = poly.len();
    if n < 3 {
        return 0.0;
    }
    0.5 * (0..n)
        .map(|i| {
            let (a, b) = (poly[i], poly[(i + 1) % n]);
            a[0] * b[1] - b[0] * a[1]
        })
        .sum::<f64>()
}

/// Intersection of two counter-clockwise convex polygons by Sutherland-Hodgman clipping.
pub fn clip_convex(subject: &[[f64; 2]], clip: &[[f64; 2]]) -> Vec<[f64; 2]> {
    let mut out = subject.to_vec();
    let m = clip.len();
    for i in 0..m {
        if out.is_empty() {
            break;
        }
        let (a, b) = (clip[i], clip[(i + 1) % m]);
        let input = std::mem::take(&mut out);
        let k = input.len();
        for j in 0..k {
            let (p, q) = (input[j], input[(j + 1) % k]);
            let (sp, sq) = (cross(a, b, p), cross(a, b, q));
            if sp >= 0.0 {
                out.push(p);
            }
            if (sp >= 0.0) != (sq >= 0.0) {
                let t = sp / (sp - sq);
                out.push([p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1])]);
            }
        }
    }
    out
}

/// Intersection-over-union of the convex hulls of two point clouds. Zero when
/// either hull has no area.
pub fn hull_overlap(a: &[[f64; 2]], b: &[[f64; 2]]) -> f64 {
    let (ha, hb) = (convex_hull(a), convex_hull(b));
    let (aa, ab) = (polygon_area(&ha), polygon_area(&hb));
    if aa <= 0.0 || ab <= 0.0 {
        return 0.0;
    }
    let inter = polygon_area(&clip_convex(&ha, &hb)).max(0.0);
    (inter / (aa + ab - inter)).clamp(0.0, 1.0)
}

/// Shares of candidates passing left and right of the single obstacle that
/// blocks the start-goal segment.
pub fn mode_coverage(candidates: &[Trajectory], scene: &Scene) -> Result<(f64, f64)> {
    if candidates.is_empty() {
        return Err(DnkError::Empty("mode_coverage"));
    }
    let obstacle = blocking_obstacle(scene)
        .ok_or_else(|| DnkError::InvalidArgument("scene has no single blocking obstacle".into()))?;
    let left = candidates
        .iter()
        .filter(|t| {
            let pos: Vec<[f64; 2]> = t.positions().collect();
            pass_side(&pos, scene.start.pos, scene.goal, obstacle) == Side::Left
        })
        .count();
    let n = candidates.len() as f64;
    Ok((left as f64 / n, (candidates.len() - left) as f64 / n))
}

/// Everything recorded for one method across seeds.
#[derive(Clone, Debug, PartialEq)]
pub struct RunSummary {
    pub method: String,
    /// Seed label and normalised episode returns for that seed.
    pub returns: Vec<(u64, Vec<f64>)>,
    /// Success flags, parallel to `returns`.
    pub successes: Vec<Vec<bool>>,
    pub latencies_ms: Vec<f64>,
}

impl RunSummary {
    pub fn validate(&self) -> Result<()> {
        if self.returns.is_empty() || self.returns.iter().any(|(_, r)| r.is_empty()) {
            return Err(DnkError::Empty("run summary"));
        }
        if self.successes.len() != self.returns.len()
            || self.successes.iter().zip(&self.returns).any(|(s, (_, r))| s.len() != r.len())
        {
            return Err(DnkError::dim("success flags", self.returns.len(), self.successes.len()));
        }
        Ok(())
    }

    pub fn episode_stats(&self) -> Result<EpisodeStats> {
        episode_stats(&self.returns.iter().map(|(_, r)| r.clone()).collect::<Vec<_>>())
    }

    pub fn success_rate(&self) -> f64 {
        let all: Vec<bool> = self.successes.concat();
        all.iter().filter(|s| **s).count() as f64 / all.len() as f64
    }
}

pub const RESULTS_HEADER: [&str; 8] =
    ["method", "seed", "episodes", "mean_return", "std_return", "sigma_ep", "worst_case", "success_rate"];
pub const LATENCY_HEADER: [&str; 5] = ["method", "samples", "mean_ms", "std_ms", "p95_ms"];
pub const PARETO_HEADER: [&str; 3] = ["method", "mean_latency_ms", "mean_return"];
pub const PCA_HEADER: [&str; 4] = ["set", "index", "pc1", "pc2"];
pub const PCA_SUMMARY_HEADER: [&str; 3] = ["explained_pc1", "explained_pc2", "hull_overlap"];

/// Files written by [`emit_report`].
#[derive(Clone, Debug, PartialEq)]
pub struct ReportPaths {
    pub results: PathBuf,
    pub latency: PathBuf,
    pub pareto: PathBuf,
    pub pca: Option<(PathBuf, PathBuf)>,
}

fn with_suffix(prefix: &Path, suffix: &str) -> PathBuf {
    let mut s = prefix.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn fmt(x: f64) -> String {
    format!("{x:?}")
}

fn writer(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    let file = std::fs::File::create(path).map_err(|e| DnkError::io(path, e))?;
    Ok(csv::Writer::from_writer(file))
}

/// Writes `<prefix>results.csv` (per-seed and aggregate rows, depends only on
/// returns), `<prefix>latency.csv`, `<prefix>pareto.csv`, and when given,
/// `<prefix>pca.csv` and `<prefix>pca_summary.csv`.
///
/// Per-seed rows carry the seed's mean, its population deviation as both
/// `std_return` and `sigma_ep`, and its mean again as `worst_case`. The
/// aggregate row (seed `all`) holds the grand mean, the deviation across seed
/// means, the mean of `sigma_ep` and the minimum of `worst_case`.
pub fn emit_report(summaries: &[RunSummary], pca: Option<&PcaProjection>, prefix: &Path) -> Result<ReportPaths> {
    if summaries.is_empty() {
        return Err(DnkError::Empty("emit_report"));
    }
    for s in summaries {
        s.validate()?;
    }
    let paths = ReportPaths {
        results: with_suffix(prefix, "results.csv"),
        latency: with_suffix(prefix, "latency.csv"),
        pareto: with_suffix(prefix, "pareto.csv"),
        pca: pca.map(|_| (with_suffix(prefix, "pca.csv"), with_suffix(prefix, "pca_summary.csv"))),
    };

    let mut w = writer(&paths.results)?;
    w.write_record(RESULTS_HEADER)?;
    for s in summaries {
        for ((seed, r), ok) in s.returns.iter().zip(&s.successes) {
            let (m, sd) = mean_std(r);
            let rate = ok.iter().filter(|x| **x).count() as f64 / ok.len() as f64;
            w.write_record([s.method.clone(), seed.to_string(), r.len().to_string(), fmt(m), fmt(sd), fmt(sd), fmt(m), fmt(rate)])?;
        }
        let st = s.episode_stats()?;
        let episodes: usize = s.returns.iter().map(|(_, r)| r.len()).sum();
        w.write_record([
            s.method.clone(),
            "all".into(),
            episodes.to_string(),
            fmt(st.mean),
            fmt(st.std_across_seeds),
            fmt(st.sigma_ep),
            fmt(st.worst_case),
            fmt(s.success_rate()),
        ])?;
    }
    w.flush().map_err(|e| DnkError::io(&paths.results, e))?;

    let mut lw = writer(&paths.latency)?;
    lw.write_record(LATENCY_HEADER)?;
    let mut pw = writer(&paths.pareto)?;
    pw.write_record(PARETO_HEADER)?;
    for s in summaries {
        let st = s.episode_stats()?;
        if s.latencies_ms.is_empty() {
            lw.write_record([s.method.clone(), "0".into(), String::new(), String::new(), String::new()])?;
            continue;
        }
        let l = latency_stats(&s.latencies_ms)?;
        lw.write_record([s.method.clone(), s.latencies_ms.len().to_string(), fmt(l.mean), fmt(l.std), fmt(l.p95)])?;
        pw.write_record([s.method.clone(), fmt(l.mean), fmt(st.mean)])?;
    }
    lw.flush().map_err(|e| DnkError::io(&paths.latency, e))?;
    pw.flush().map_err(|e| DnkError::io(&paths.pareto, e))?;

    if let (Some(p), Some((coords, summary))) = (pca, &paths.pca) {
        let mut cw = writer(coords)?;
        cw.write_record(PCA_HEADER)?;
        for (label, pts) in [("student", &p.student), ("teacher", &p.teacher)] {
            for (i, q) in pts.iter().enumerate() {
                cw.write_record([label.to_string(), i.to_string(), fmt(q[0]), fmt(q[1])])?;
            }
        }
        cw.flush().map_err(|e| DnkError::io(coords, e))?;
        let mut sw = writer(summary)?;
        sw.write_record(PCA_SUMMARY_HEADER)?;
        sw.write_record([fmt(p.explained[0]), fmt(p.explained[1]), fmt(p.hull_overlap)])?;
        sw.flush().map_err(|e| DnkError::io(summary, e))?;
    }
    Ok(paths)
}
