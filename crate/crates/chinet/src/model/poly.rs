//! Brute-force materialisation of the unfolded tree tensor network as a
//! dense coefficient tensor over the augmented input. Only feasible for tiny
//! networks; every compression claim is checked against this oracle.

use crate::error::{ChiError, Result};
use crate::linalg::Matrix;
use crate::model::ChiNet;

const SIZE_GUARD: usize = 10_000_000;

/// Full coefficient tensor of a materialised network: a
/// `n_classes × (d_in+1)^(2^L)` matrix whose columns are indexed by tuples
/// `(j_1, …, j_{2^L})` over the augmented input dimension.
#[derive(Debug, Clone)]
pub struct PolyTensor {
    pub n_classes: usize,
    pub aug_dim: usize,
    pub n_slots: usize,
    pub coeffs: Matrix,
}

impl PolyTensor {
    /// Evaluate at a raw input: contract every slot with the augmented input.
    pub fn evaluate(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len() + 1, self.aug_dim, "evaluate: input length");
        let mut aug = Vec::with_capacity(self.aug_dim);
        aug.push(1.0);
        aug.extend_from_slice(x);
        // x̃^{⊗2^L} by repeated Kronecker squaring
        let mut v = aug;
        let mut slots = 1usize;
        while slots < self.n_slots {
            v = kron_vec(&v, &v);
            slots *= 2;
        }
        debug_assert_eq!(slots, self.n_slots);
        self.coeffs.apply(&v)
    }

    pub fn frobenius(&self) -> f64 {
        self.coeffs.frobenius()
    }

    /// Coefficient of the constant monomial (all slots on the bias index).
    pub fn constant_term(&self, class: usize) -> f64 {
        self.coeffs.get(class, 0)
    }

    /// Total coefficient of the degree-1 monomial `x_m` (`m ≥ 1`, 0-based on
    /// the augmented index): the sum over slot positions holding `m` with all
    /// other slots on the bias index.
    pub fn degree_one_coefficient(&self, class: usize, m: usize) -> f64 {
        assert!(m >= 1 && m < self.aug_dim);
        let mut acc = 0.0;
        let mut stride = 1usize;
        for _ in 0..self.n_slots {
            acc += self.coeffs.get(class, m * stride);
            stride *= self.aug_dim;
        }
        acc
    }
}

fn kron_vec(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(a.len() * b.len());
    for &av in a {
        for &bv in b {
            out.push(av * bv);
        }
    }
    out
}

/// Kronecker square of the rows: maps `W (h×p)` to `(h²)×(p²)` with
/// `out[(j,k), (α,β)] = W[j,α]·W[k,β]`.
fn kron_square(w: &Matrix) -> Matrix {
    let h = w.rows();
    let p = w.cols();
    let mut out = Matrix::zeros(h * h, p * p);
    for j in 0..h {
        for k in 0..h {
            let row_out = out.row_mut(j * h + k);
            let rj = &w.row(j).to_vec();
            let rk = w.row(k);
            for (a, &wa) in rj.iter().enumerate() {
                if wa == 0.0 {
                    continue;
                }
                let base = a * p;
                for (b, &wb) in rk.iter().enumerate() {
                    row_out[base + b] = wa * wb;
                }
            }
        }
    }
    out
}

pub(super) fn materialise(net: &ChiNet) -> Result<PolyTensor> {
    let aug = net.input_dim() + 1;
    let depth = net.depth() as u32;
    let n_slots = 1usize << depth;
    let width = checked_pow(aug, n_slots).ok_or_else(|| {
        ChiError::SizeGuard("materialise_poly: coefficient tensor overflows usize".into())
    })?;
    let total = width
        .checked_mul(net.n_classes())
        .ok_or_else(|| ChiError::SizeGuard("materialise_poly: size overflow".into()))?;
    if total > SIZE_GUARD {
        return Err(ChiError::SizeGuard(format!(
            "materialise_poly: {total} coefficients exceed the desk-scale guard {SIZE_GUARD}"
        )));
    }

    // W_1 = e, then W_{i+1} = f_i · (W_i ⊗ W_i).
    let mut w = net.embedding.clone();
    for core in &net.cores {
        let dense = core.to_dense();
        w = dense.matricised().dot(&kron_square(&w));
    }
    let coeffs = net.unembedding.dot(&w);
    Ok(PolyTensor {
        n_classes: net.n_classes(),
        aug_dim: aug,
        n_slots,
        coeffs,
    })
}

fn checked_pow(base: usize, exp: usize) -> Option<usize> {
    let mut acc = 1usize;
    for _ in 0..exp {
        acc = acc.checked_mul(base)?;
    }
    Some(acc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{khatri_rao_t, Core3};
    use crate::model::{augment, LayerCore};
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    #[test]
    fn one_layer_matches_triple_loop() {
        let mut rng = ChaCha20Rng::seed_from_u64(23);
        let net = ChiNet::random_factored(2, &[3, 3], 2, &mut rng);
        let poly = net.materialise_poly().unwrap();
        let dense = net.cores[0].to_dense();
        // coefficients[c, (j,k)] = Σ_l u[c,l] · Σ f_1[l,a,b] e[a,j] e[b,k]
        let aug = 3usize;
        for c in 0..2 {
            for j in 0..aug {
                for k in 0..aug {
                    let mut acc = 0.0;
                    for l in 0..3 {
                        let mut core_part = 0.0;
                        for a in 0..3 {
                            for b in 0..3 {
                                core_part += dense.get(l, a, b)
                                    * net.embedding.get(a, j)
                                    * net.embedding.get(b, k);
                            }
                        }
                        acc += net.unembedding.get(c, l) * core_part;
                    }
                    let got = poly.coeffs.get(c, j * aug + k);
                    assert!((got - acc).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn evaluation_matches_forward() {
        let mut rng = ChaCha20Rng::seed_from_u64(29);
        let net = ChiNet::random_factored(2, &[3, 3, 2], 3, &mut rng);
        let poly = net.materialise_poly().unwrap();
        for t in 0..200 {
            let x: Vec<f64> = (0..2)
                .map(|i| ((t * 2 + i) as f64 * 0.17).sin() * 1.5)
                .collect();
            let f = net.forward(&x).unwrap();
            let p = poly.evaluate(&x);
            for (a, b) in f.iter().zip(p.iter()) {
                assert!(
                    (a - b).abs() <= 1e-9 * a.abs().max(1.0),
                    "forward {a} vs poly {b}"
                );
            }
        }
    }

    #[test]
    fn linear_special_case() {
        // cores interact only through the bias row: the poly reduces to a
        // composed affine map, so evaluation is degree-1 in x.
        let aug_dim = 3usize;
        let h = 3usize;
        let mut e = Matrix::zeros(h, aug_dim);
        e.set(0, 0, 1.0); // bias lane
        e.set(1, 1, 0.5);
        e.set(2, 2, -0.7);
        let mut core = Core3::zeros(h, h);
        core.set(0, 0, 0, 1.0); // keep bias lane alive
        for l in 1..h {
            for m in 1..h {
                let v = 0.1 * (l * h + m) as f64;
                core.set(l, 0, m, v);
                core.set(l, m, 0, v);
            }
        }
        core.symmetrise();
        let u = Matrix::from_fn(2, h, |i, j| (i + j) as f64 * 0.3);
        let net = ChiNet::new(e, vec![LayerCore::Dense(core)], u).unwrap();
        let poly = net.materialise_poly().unwrap();

        // degree-1 coefficients reproduce finite differences of forward at 0
        let f0 = net.forward(&[0.0, 0.0]).unwrap();
        for m in 1..aug_dim {
            let mut x = vec![0.0, 0.0];
            x[m - 1] = 1e-6;
            let f1 = net.forward(&x).unwrap();
            for c in 0..2 {
                let fd = (f1[c] - f0[c]) / 1e-6;
                let coef = poly.degree_one_coefficient(c, m);
                assert!((fd - coef).abs() < 1e-5, "class {c} idx {m}: {fd} vs {coef}");
            }
        }
    }

    #[test]
    fn size_guard_fires() {
        let mut rng = ChaCha20Rng::seed_from_u64(31);
        // (17)^(2^3) * 4 is far beyond the guard
        let net = ChiNet::random_factored(16, &[8, 8, 8, 8], 4, &mut rng);
        assert!(matches!(
            net.materialise_poly(),
            Err(ChiError::SizeGuard(_))
        ));
    }

    #[test]
    fn net_frobenius_matches_poly() {
        let mut rng = ChaCha20Rng::seed_from_u64(37);
        let net = ChiNet::random_factored(2, &[3, 2], 2, &mut rng);
        let nf = net.net_frobenius().unwrap();
        let pf = net.materialise_poly().unwrap().frobenius();
        assert!((nf - pf).abs() < 1e-12);
        // zero unembedding -> 0
        let zeroed = ChiNet {
            embedding: net.embedding.clone(),
            cores: net.cores.clone(),
            unembedding: Matrix::zeros(2, 2),
        };
        assert_eq!(zeroed.net_frobenius().unwrap(), 0.0);
    }

    #[test]
    fn cloning_unrolling_equivalence() {
        // forward equals evaluation of the materialised tensor at the
        // augmented input repeated 2^L times
        let mut rng = ChaCha20Rng::seed_from_u64(41);
        let net = ChiNet::random_factored(3, &[4, 3, 3], 2, &mut rng);
        let poly = net.materialise_poly().unwrap();
        for t in 0..100 {
            let x: Vec<f64> = (0..3).map(|i| ((t + i) as f64 * 0.31).cos()).collect();
            // explicit slot contraction, independent of evaluate()
            let aug = augment(&x);
            let mut v = aug.clone();
            for _ in 0..2 {
                // 2^L with L = 2 slots -> square twice
                v = super::kron_vec(&v, &v);
            }
            let direct = poly.coeffs.apply(&v);
            let fwd = net.forward(&x).unwrap();
            for (a, b) in fwd.iter().zip(direct.iter()) {
                assert!((a - b).abs() <= 1e-9 * a.abs().max(1.0));
            }
        }
    }
}
