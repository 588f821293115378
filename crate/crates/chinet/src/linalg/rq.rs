//! Reduced RQ decomposition via Householder reflections.

use crate::error::{ChiError, Result};
use crate::linalg::Matrix;

/// Reduced RQ decomposition of an `n×m` matrix with `n ≤ m`:
/// `M = R·Q` with `R` `n×n` lower triangular (non-negative diagonal) and
/// `Q` `n×m` with orthonormal rows (`Q·Qᵀ = I`).
///
/// Computed as the thin QR of `Mᵀ`: `Mᵀ = Q̂·R̂` gives `R = R̂ᵀ`, `Q = Q̂ᵀ`.
pub fn rq_reduced(m: &Matrix) -> Result<(Matrix, Matrix)> {
    if m.rows() > m.cols() {
        return Err(ChiError::Dim(format!(
            "rq_reduced requires rows <= cols, got {}x{}",
            m.rows(),
            m.cols()
        )));
    }
    if !m.is_finite() {
        return Err(ChiError::Numeric(
            "rq_reduced: input contains non-finite values".into(),
        ));
    }
    let (q_hat, r_hat) = qr_thin(&m.transpose());
    Ok((r_hat.transpose(), q_hat.transpose()))
}

/// Thin Householder QR of an `m×n` matrix with `m ≥ n`:
/// `A = Q·R`, `Q` `m×n` with orthonormal columns, `R` `n×n` upper triangular
/// with non-negative diagonal.
pub fn qr_thin(a: &Matrix) -> (Matrix, Matrix) {
    let m = a.rows();
    let n = a.cols();
    assert!(m >= n, "qr_thin requires rows >= cols");

    // Factor in place; column k at and below the diagonal stores the
    // Householder vector, the produced diagonal entry goes to `alphas`.
    let mut w = a.clone();
    let mut taus = vec![0.0f64; n];
    let mut alphas = vec![0.0f64; n];

    for k in 0..n {
        let mut norm_sq = 0.0;
        for i in k..m {
            let v = w.get(i, k);
            norm_sq += v * v;
        }
        let norm = norm_sq.sqrt();
        if norm == 0.0 {
            continue; // zero column: no reflector, alpha stays 0
        }
        let x0 = w.get(k, k);
        let alpha = if x0 >= 0.0 { -norm } else { norm };
        alphas[k] = alpha;
        // v = x - alpha·e1 stored in place; tau = 2 / vᵀv
        w.set(k, k, x0 - alpha);
        let mut vtv = 0.0;
        for i in k..m {
            let v = w.get(i, k);
            vtv += v * v;
        }
        if vtv == 0.0 {
            continue;
        }
        let tau = 2.0 / vtv;
        taus[k] = tau;

        for j in (k + 1)..n {
            let mut dot = 0.0;
            for i in k..m {
                dot += w.get(i, k) * w.get(i, j);
            }
            let scale = tau * dot;
            for i in k..m {
                let upd = w.get(i, j) - scale * w.get(i, k);
                w.set(i, j, upd);
            }
        }
    }

    let mut r = Matrix::zeros(n, n);
    for k in 0..n {
        r.set(k, k, alphas[k]);
        for j in (k + 1)..n {
            r.set(k, j, w.get(k, j));
        }
    }

    // Q: apply reflectors in reverse order to the thin identity.
    let mut q = Matrix::zeros(m, n);
    for i in 0..n {
        q.set(i, i, 1.0);
    }
    for k in (0..n).rev() {
        let tau = taus[k];
        if tau == 0.0 {
            continue;
        }
        for j in 0..n {
            let mut dot = 0.0;
            for i in k..m {
                dot += w.get(i, k) * q.get(i, j);
            }
            let scale = tau * dot;
            for i in k..m {
                let upd = q.get(i, j) - scale * w.get(i, k);
                q.set(i, j, upd);
            }
        }
    }

    // Sign fix: non-negative diagonal of R for deterministic output.
    for k in 0..n {
        if r.get(k, k) < 0.0 {
            for j in k..n {
                let v = -r.get(k, j);
                r.set(k, j, v);
            }
            for i in 0..m {
                let v = -q.get(i, k);
                q.set(i, k, v);
            }
        }
    }

    (q, r)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn assert_rq_contract(m: &Matrix) {
        let (r, q) = rq_reduced(m).unwrap();
        let n = m.rows();
        let rec = r.dot(&q);
        assert!(
            rec.max_abs_diff(m) <= 1e-10 * m.frobenius().max(1.0),
            "R·Q does not reconstruct M"
        );
        assert!(q.orthonormal_rows_residual() <= 1e-10);
        // R lower triangular with non-negative diagonal
        for i in 0..n {
            assert!(r.get(i, i) >= 0.0);
            for j in (i + 1)..n {
                assert!(r.get(i, j).abs() <= 1e-12 * m.frobenius().max(1.0));
            }
        }
    }

    #[test]
    fn identity_is_fixed_point() {
        let id = Matrix::identity(3);
        let (r, q) = rq_reduced(&id).unwrap();
        assert!(r.max_abs_diff(&Matrix::identity(3)) < 1e-14);
        assert!(q.max_abs_diff(&Matrix::identity(3)) < 1e-14);
    }

    #[test]
    fn random_2x4() {
        let m = Matrix::from_rows(&[&[0.3, -1.2, 0.8, 2.0], &[1.1, 0.4, -0.6, 0.9]]);
        assert_rq_contract(&m);
    }

    #[test]
    fn zero_matrix() {
        let m = Matrix::zeros(2, 4);
        let (r, q) = rq_reduced(&m).unwrap();
        assert_eq!(r.max_abs(), 0.0);
        // postcondition on the product, not on Q itself
        assert!(r.dot(&q).max_abs() == 0.0);
        assert!(q.orthonormal_rows_residual() <= 1e-10);
    }

    #[test]
    fn wide_rectangular_shapes() {
        let mut seed = 42u64;
        let mut next = move || {
            seed = seed
                .wrapping_mul(6364136223846793005)
                .wrapping_add(1442695040888963407);
            ((seed >> 33) as f64 / (1u64 << 31) as f64) - 1.0
        };
        for &(n, m) in &[(1usize, 1usize), (3, 3), (4, 9), (5, 25), (7, 13)] {
            let mat = Matrix::from_fn(n, m, |_, _| next());
            assert_rq_contract(&mat);
        }
    }

    #[test]
    fn tall_input_rejected() {
        let m = Matrix::zeros(4, 2);
        assert!(rq_reduced(&m).is_err());
    }

    #[test]
    fn non_finite_rejected() {
        let mut m = Matrix::zeros(2, 3);
        m.set(0, 0, f64::NAN);
        assert!(rq_reduced(&m).is_err());
    }

    #[test]
    fn rank_deficient_product_still_reconstructs() {
        let m = Matrix::from_rows(&[&[1.0, 2.0, 3.0, 4.0], &[2.0, 4.0, 6.0, 8.0]]);
        assert_rq_contract(&m);
    }
}
