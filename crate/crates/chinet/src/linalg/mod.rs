//! Dense real linear-algebra kernels: matrices, third-order cores, reduced
//! RQ decomposition, symmetric eigendecomposition, and the bond-space
//! contractions used by the compression pipeline.
//!
//! All types are immutable value objects after construction and all
//! operations are pure functions.

mod core3;
mod evd;
mod matrix;
mod rq;

pub use core3::Core3;
pub use evd::{sym_evd, Spectrum};
pub use matrix::Matrix;
pub use rq::{qr_thin, rq_reduced};

use crate::error::{ChiError, Result};

/// Transposed Khatri-Rao product of two equally shaped matrices:
/// `f[l,j,k] = A[l,j] · B[l,k]`.
pub fn khatri_rao_t(a: &Matrix, b: &Matrix) -> Result<Core3> {
    if a.rows() != b.rows() || a.cols() != b.cols() {
        return Err(ChiError::Dim(format!(
            "khatri_rao_t requires equal shapes, got {}x{} and {}x{}",
            a.rows(),
            a.cols(),
            b.rows(),
            b.cols()
        )));
    }
    let out = a.rows();
    let h = a.cols();
    let mut f = Core3::zeros(out, h);
    for l in 0..out {
        for j in 0..h {
            let aj = a.get(l, j);
            for k in 0..h {
                f.set(l, j, k, aj * b.get(l, k));
            }
        }
    }
    Ok(f)
}

/// One step of the top-down Gram recursion:
/// `G[a,b] = Σ_{l,l',c} f[l,c,a] · G_next[l,l'] · f[l',c,b]`.
///
/// The sibling leg `c` is contracted directly, which is valid when the
/// subtree feeding it is isometric (caller's responsibility). `f` is
/// expected symmetric so the sibling choice does not matter.
pub fn gram_step(f: &Core3, g_next: &Matrix) -> Result<Matrix> {
    if g_next.rows() != g_next.cols() {
        return Err(ChiError::Dim("gram_step: G_next must be square".into()));
    }
    if f.out_dim() != g_next.rows() {
        return Err(ChiError::Dim(format!(
            "gram_step: core out_dim {} does not match G_next dim {}",
            f.out_dim(),
            g_next.rows()
        )));
    }
    let h_in = f.in_dim();
    let h_out = f.out_dim();
    let mut g = Matrix::zeros(h_in, h_in);
    // G = Σ_c F_cᵀ · G_next · F_c with F_c[l,a] = f[l,c,a]; rows of F_c are
    // contiguous in the core's buffer.
    for c in 0..h_in {
        let mut fc = Matrix::zeros(h_out, h_in);
        for l in 0..h_out {
            let s = f.slice(l);
            fc.row_mut(l).copy_from_slice(&s[c * h_in..(c + 1) * h_in]);
        }
        let t = g_next.dot(&fc);
        let contrib = fc.dot_tn(&t);
        g.add_scaled(&contrib, 1.0);
    }
    Ok(g)
}
