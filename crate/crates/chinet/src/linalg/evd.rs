//! Symmetric eigendecomposition by cyclic Jacobi rotations.

use crate::error::{ChiError, Result};
use crate::linalg::Matrix;

/// Eigendecomposition of a symmetric matrix: eigenvalues sorted descending,
/// eigenvector matrix with orthonormal columns, column `i` paired with
/// eigenvalue `i`.
#[derive(Debug, Clone)]
pub struct Spectrum {
    pub eigenvalues: Vec<f64>,
    pub eigenvectors: Matrix,
}

impl Spectrum {
    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    /// Reconstruct `V Λ Vᵀ`.
    pub fn reconstruct(&self) -> Matrix {
        let n = self.dim();
        let v = &self.eigenvectors;
        let mut vl = Matrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                vl.set(i, j, v.get(i, j) * self.eigenvalues[j]);
            }
        }
        vl.dot_nt(v)
    }

    /// First `r` eigenvector columns as an `n×r` isometry.
    pub fn leading_vectors(&self, r: usize) -> Matrix {
        let n = self.dim();
        assert!(r <= n);
        Matrix::from_fn(n, r, |i, j| self.eigenvectors.get(i, j))
    }
}

/// Eigendecomposition of a symmetric matrix `G`. The input is symmetrised
/// internally by `(G + Gᵀ)/2`; asymmetry beyond fp noise is the caller's bug.
pub fn sym_evd(g: &Matrix) -> Result<Spectrum> {
    if g.rows() != g.cols() {
        return Err(ChiError::Dim(format!(
            "sym_evd requires a square matrix, got {}x{}",
            g.rows(),
            g.cols()
        )));
    }
    let n = g.rows();
    if n == 0 {
        return Ok(Spectrum {
            eigenvalues: vec![],
            eigenvectors: Matrix::zeros(0, 0),
        });
    }

    let mut a = Matrix::from_fn(n, n, |i, j| 0.5 * (g.get(i, j) + g.get(j, i)));
    let mut v = Matrix::identity(n);

    let scale = a.frobenius().max(f64::MIN_POSITIVE);
    let tol = 1e-15 * scale;
    let max_sweeps = 64;

    for _ in 0..max_sweeps {
        let mut off = 0.0f64;
        for p in 0..n {
            for q in (p + 1)..n {
                off = off.max(a.get(p, q).abs());
            }
        }
        if off <= tol {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a.get(p, q);
                if apq.abs() <= tol * 1e-2 {
                    continue;
                }
                let app = a.get(p, p);
                let aqq = a.get(q, q);
                let theta = (aqq - app) / (2.0 * apq);
                let t = if theta >= 0.0 {
                    1.0 / (theta + (1.0 + theta * theta).sqrt())
                } else {
                    1.0 / (theta - (1.0 + theta * theta).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;

                // Rotate rows/columns p and q of A.
                for i in 0..n {
                    let aip = a.get(i, p);
                    let aiq = a.get(i, q);
                    a.set(i, p, c * aip - s * aiq);
                    a.set(i, q, s * aip + c * aiq);
                }
                for i in 0..n {
                    let api = a.get(p, i);
                    let aqi = a.get(q, i);
                    a.set(p, i, c * api - s * aqi);
                    a.set(q, i, s * api + c * aqi);
                }
                // Accumulate V.
                for i in 0..n {
                    let vip = v.get(i, p);
                    let viq = v.get(i, q);
                    v.set(i, p, c * vip - s * viq);
                    v.set(i, q, s * vip + c * viq);
                }
            }
        }
    }

    // Sort descending; ties keep the sweep's ordering (stable).
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| {
        a.get(j, j)
            .partial_cmp(&a.get(i, i))
            .unwrap_or(std::cmp::Ordering::Equal)
    });

    let eigenvalues: Vec<f64> = order.iter().map(|&i| a.get(i, i)).collect();
    let eigenvectors = Matrix::from_fn(n, n, |i, j| v.get(i, order[j]));

    Ok(Spectrum {
        eigenvalues,
        eigenvectors,
    })
}
