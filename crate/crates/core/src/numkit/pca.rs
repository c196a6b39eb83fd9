use super::matrix::Matrix;
use crate::error::{DnkError, Result};

#[derive(Clone, Debug)]
pub struct PcaFit {
    pub mean: Vec<f64>,
    /// `k` orthonormal components, one per row.
    pub components: Matrix,
    /// Share of total variance explained by each component, non-increasing.
    pub explained: Vec<f64>,
    /// Centered samples projected onto the components, `(n, k)`.
    pub projections: Matrix,
}

/// Principal components of `samples` (one per row) via a cyclic Jacobi
/// eigendecomposition of the `1/n` sample covariance.
pub fn pca_fit(samples: &Matrix, k: usize) -> Result<PcaFit> {
    let (n, d) = samples.shape();
    if n < 2 {
        return Err(DnkError::InvalidArgument(format!("pca needs at least 2 samples, got {n}")));
    }
    if k == 0 || k > d {
        return Err(DnkError::InvalidArgument(format!("pca k={k} must be in 1..={d}")));
    }
    samples.ensure_finite("pca input")?;

    let mut mean = vec![0.0; d];
    for i in 0..n {
        for (m, x) in mean.iter_mut().zip(samples.row(i)) {
            *m += x;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);

    let mut centered = samples.clone();
    for i in 0..n {
        for (x, m) in centered.row_mut(i).iter_mut().zip(&mean) {
            *x -= m;
        }
    }
    let mut cov = centered.transpose().matmul(&centered)?;
    cov.scale(1.0 / n as f64);

    let (evals, evecs) = jacobi_eigen(&cov, 1e-12, 100)?;
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| evals[b].total_cmp(&evals[a]).then(a.cmp(&b)));

    let total: f64 = evals.iter().map(|e| e.max(0.0)).sum();
    let mut components = Matrix::zeros(k, d);
    let mut explained = Vec::with_capacity(k);
    for (r, &idx) in order.iter().take(k).enumerate() {
        for c in 0..d {
            components[(r, c)] = evecs[(c, idx)];
        }
        explained.push(if total > 0.0 { evals[idx].max(0.0) / total } else { 0.0 });
    }
    let projections = centered.matmul(&components.transpose())?;
    Ok(PcaFit {
        mean,
        components,
        explained,
        projections,
    })
}

/// Eigen-decomposition of a symmetric matrix. Returns eigenvalues and a
/// matrix whose columns are the matching unit eigenvectors.
pub fn jacobi_eigen(a: &Matrix, tol: f64, max_sweeps: usize) -> Result<(Vec<f64>, Matrix)> {
    let n = a.rows();
    if a.cols() != n {
        return Err(DnkError::dim("jacobi_eigen square", n, a.cols()));
    }
    let mut m = a.clone();
    let mut v = Matrix::identity(n);
    let scale = m.frobenius_sq().sqrt().max(1e-300);
    for _ in 0..max_sweeps {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| m[(i, j)] * m[(i, j)])
            .sum::<f64>()
            .sqrt();
        if off <= tol * scale {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let theta = (m[(q, q)] - m[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m[(k, p)];
                    let mkq = m[(k, q)];
                    m[(k, p)] = c * mkp - s * mkq;
                    m[(k, q)] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[(p, k)];
                    let mqk = m[(q, k)];
                    m[(p, k)] = c * mpk - s * mqk;
                    m[(q, k)] = s * mpk + c * mqk;
                }
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }
    let evals = (0..n).map(|i| m[(i, i)]).collect();
    Ok((evals, v))
}
