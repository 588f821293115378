//! Third-order tensor `f[l, j, k]` mapping a bond space squared to the next
//! bond space. Layout is `[l][j][k]`, so the matricisation (rows `l`,
//! columns `(j,k)`) shares the same buffer.

use crate::error::{ChiError, Result};
use crate::linalg::Matrix;

#[derive(Debug, Clone, PartialEq)]
pub struct Core3 {
    out_dim: usize,
    in_dim: usize,
    data: Vec<f64>,
    symmetric: bool,
}

impl Core3 {
    pub fn zeros(out_dim: usize, in_dim: usize) -> Self {
        Core3 {
            out_dim,
            in_dim,
            data: vec![0.0; out_dim * in_dim * in_dim],
            symmetric: true,
        }
    }

    pub fn from_vec(out_dim: usize, in_dim: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != out_dim * in_dim * in_dim {
            return Err(ChiError::Dim(format!(
                "core data length {} does not match {}x{}^2",
                data.len(),
                out_dim,
                in_dim
            )));
        }
        Ok(Core3 {
            out_dim,
            in_dim,
            data,
            symmetric: false,
        })
    }

    pub fn from_fn(
        out_dim: usize,
        in_dim: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Self {
        let mut c = Core3::zeros(out_dim, in_dim);
        c.symmetric = false;
        for l in 0..out_dim {
            for j in 0..in_dim {
                for k in 0..in_dim {
                    c.data[l * in_dim * in_dim + j * in_dim + k] = f(l, j, k);
                }
            }
        }
        c
    }

    /// Reinterpret an `out_dim × in_dim²` matrix as a core. The buffer is
    /// moved, not copied.
    pub fn from_matricised(m: Matrix, in_dim: usize) -> Result<Self> {
        if m.cols() != in_dim * in_dim {
            return Err(ChiError::Dim(format!(
                "matricised core has {} columns, expected {}^2",
                m.cols(),
                in_dim
            )));
        }
        let out_dim = m.rows();
        Ok(Core3 {
            out_dim,
            in_dim,
            data: m.into_data(),
            symmetric: false,
        })
    }

    #[inline]
    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    #[inline]
    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    #[inline]
    pub fn get(&self, l: usize, j: usize, k: usize) -> f64 {
        self.data[l * self.in_dim * self.in_dim + j * self.in_dim + k]
    }

    #[inline]
    pub fn set(&mut self, l: usize, j: usize, k: usize, v: f64) {
        self.data[l * self.in_dim * self.in_dim + j * self.in_dim + k] = v;
        self.symmetric = false;
    }

    /// Interaction matrix of output coordinate `l`, as a flat `in_dim²` slice.
    #[inline]
    pub fn slice(&self, l: usize) -> &[f64] {
        let n = self.in_dim * self.in_dim;
        &self.data[l * n..(l + 1) * n]
    }

    /// Interaction matrix of output coordinate `l` as an owned matrix.
    pub fn slice_matrix(&self, l: usize) -> Matrix {
        Matrix::from_vec(self.in_dim, self.in_dim, self.slice(l).to_vec())
            .expect("slice length is in_dim^2")
    }

    /// Matricisation `out_dim × in_dim²` (copies the buffer).
    pub fn matricised(&self) -> Matrix {
        Matrix::from_vec(self.out_dim, self.in_dim * self.in_dim, self.data.clone())
            .expect("buffer length matches")
    }

    pub fn is_symmetric_flagged(&self) -> bool {
        self.symmetric
    }

    pub fn max_asymmetry(&self) -> f64 {
        let mut worst = 0.0f64;
        for l in 0..self.out_dim {
            let s = self.slice(l);
            for j in 0..self.in_dim {
                for k in (j + 1)..self.in_dim {
                    worst = worst.max((s[j * self.in_dim + k] - s[k * self.in_dim + j]).abs());
                }
            }
        }
        worst
    }

    /// Replace each interaction matrix by its symmetric part. Afterwards
    /// `f[l,j,k] == f[l,k,j]` holds exactly.
    pub fn symmetrise(&mut self) {
        let n = self.in_dim;
        for l in 0..self.out_dim {
            let base = l * n * n;
            for j in 0..n {
                for k in (j + 1)..n {
                    let a = self.data[base + j * n + k];
                    let b = self.data[base + k * n + j];
                    let avg = 0.5 * (a + b);
                    self.data[base + j * n + k] = avg;
                    self.data[base + k * n + j] = avg;
                }
            }
        }
        self.symmetric = true;
    }

    pub fn symmetrised(&self) -> Core3 {
        let mut c = self.clone();
        c.symmetrise();
        c
    }

    pub fn mark_symmetric(&mut self) {
        debug_assert!(self.max_asymmetry() == 0.0);
        self.symmetric = true;
    }

    /// `y[l] = Σ_{j,k} f[l,j,k] · x[j] · x[k]`
    pub fn apply_bilinear(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.in_dim, "apply_bilinear: input length");
        let n = self.in_dim;
        let mut y = vec![0.0; self.out_dim];
        for (l, out) in y.iter_mut().enumerate() {
            let s = self.slice(l);
            let mut acc = 0.0;
            for j in 0..n {
                let xj = x[j];
                if xj == 0.0 {
                    continue;
                }
                let row = &s[j * n..(j + 1) * n];
                let mut inner = 0.0;
                for (w, xk) in row.iter().zip(x.iter()) {
                    inner += w * xk;
                }
                acc += xj * inner;
            }
            *out = acc;
        }
        y
    }

    /// `f ∘ (M ⊗ M)`: contract a matrix into both input legs.
    /// `new[l,a,b] = Σ_{j,k} f[l,j,k] · M[j,a] · M[k,b]`.
    pub fn contract_inputs(&self, m: &Matrix) -> Core3 {
        assert_eq!(m.rows(), self.in_dim, "contract_inputs: leg dimension");
        let new_in = m.cols();
        let mut out = Core3::zeros(self.out_dim, new_in);
        out.symmetric = false;
        for l in 0..self.out_dim {
            let s = self.slice_matrix(l);
            let rotated = m.dot_tn(&s).dot(m); // Mᵀ · F_l · M
            let base = l * new_in * new_in;
            out.data[base..base + new_in * new_in].copy_from_slice(rotated.data());
        }
        out
    }

    /// `M ∘ f`: contract a matrix into the output leg.
    /// `new[a,j,k] = Σ_l M[a,l] · f[l,j,k]`.
    pub fn contract_output(&self, m: &Matrix) -> Core3 {
        assert_eq!(m.cols(), self.out_dim, "contract_output: leg dimension");
        let flat = m.dot(&self.matricised());
        Core3::from_matricised(flat, self.in_dim).expect("shape by construction")
    }

    pub fn frobenius(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }
}
