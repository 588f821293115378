//! The network data model and forward semantics: bias augmentation, layered
//! bilinear forward pass, symmetrisation, and factored-to-dense conversion.

mod poly;

pub use poly::PolyTensor;

use crate::error::{ChiError, Result};
use crate::linalg::{khatri_rao_t, Core3, Matrix};
use rand::Rng;

/// Bilinear layer parametrised as a transposed Khatri-Rao product of two
/// matrices: the dense core is `f[l,j,k] = A[l,j]·B[l,k]`, the forward pass
/// is `(A·x) ⊙ (B·x)`.
#[derive(Debug, Clone)]
pub struct FactoredCore {
    pub a: Matrix,
    pub b: Matrix,
}

impl FactoredCore {
    pub fn new(a: Matrix, b: Matrix) -> Result<Self> {
        if a.rows() != b.rows() || a.cols() != b.cols() {
            return Err(ChiError::Dim(
                "factored core requires A and B of identical shape".into(),
            ));
        }
        Ok(FactoredCore { a, b })
    }

    pub fn out_dim(&self) -> usize {
        self.a.rows()
    }

    pub fn in_dim(&self) -> usize {
        self.a.cols()
    }

    /// Densify: `f[l,j,k] = A[l,j]·B[l,k]`.
    pub fn to_dense(&self) -> Core3 {
        khatri_rao_t(&self.a, &self.b).expect("shapes equal by construction")
    }
}

/// One layer's core, either in the factored training form or densified for
/// analysis.
#[derive(Debug, Clone)]
pub enum LayerCore {
    Factored(FactoredCore),
    Dense(Core3),
}

impl LayerCore {
    pub fn out_dim(&self) -> usize {
        match self {
            LayerCore::Factored(f) => f.out_dim(),
            LayerCore::Dense(c) => c.out_dim(),
        }
    }

    pub fn in_dim(&self) -> usize {
        match self {
            LayerCore::Factored(f) => f.in_dim(),
            LayerCore::Dense(c) => c.in_dim(),
        }
    }

    pub fn to_dense(&self) -> Core3 {
        match self {
            LayerCore::Factored(f) => f.to_dense(),
            LayerCore::Dense(c) => c.clone(),
        }
    }

    /// `y[l] = Σ_{j,k} f[l,j,k]·x[j]·x[k]`
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        match self {
            LayerCore::Factored(f) => {
                let ax = f.a.apply(x);
                let bx = f.b.apply(x);
                ax.iter().zip(bx.iter()).map(|(p, q)| p * q).collect()
            }
            LayerCore::Dense(c) => c.apply_bilinear(x),
        }
    }
}

/// A depth-`L` bilinear tree-tensor-network classifier: embedding acting on
/// the bias-augmented input, `L` bilinear cores, and a linear unembedding.
#[derive(Debug, Clone)]
pub struct ChiNet {
    pub embedding: Matrix,
    pub cores: Vec<LayerCore>,
    pub unembedding: Matrix,
}

/// `(x_1, …, x_d) → (1, x_1, …, x_d)`
pub fn augment(x: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(x.len() + 1);
    out.push(1.0);
    out.extend_from_slice(x);
    out
}

impl ChiNet {
    pub fn new(embedding: Matrix, cores: Vec<LayerCore>, unembedding: Matrix) -> Result<Self> {
        let net = ChiNet {
            embedding,
            cores,
            unembedding,
        };
        net.validate()?;
        Ok(net)
    }

    pub fn validate(&self) -> Result<()> {
        let mut bond = self.embedding.rows();
        for (i, core) in self.cores.iter().enumerate() {
            if core.in_dim() != bond {
                return Err(ChiError::Dim(format!(
                    "core {} expects bond dim {}, got {}",
                    i + 1,
                    core.in_dim(),
                    bond
                )));
            }
            bond = core.out_dim();
        }
        if self.unembedding.cols() != bond {
            return Err(ChiError::Dim(format!(
                "unembedding expects bond dim {}, got {}",
                self.unembedding.cols(),
                bond
            )));
        }
        Ok(())
    }

    pub fn depth(&self) -> usize {
        self.cores.len()
    }

    /// Raw (un-augmented) input dimension.
    pub fn input_dim(&self) -> usize {
        self.embedding.cols() - 1
    }

    pub fn n_classes(&self) -> usize {
        self.unembedding.rows()
    }

    /// Bond dimensions `h_1 … h_{L+1}`.
    pub fn bond_dims(&self) -> Vec<usize> {
        let mut dims = vec![self.embedding.rows()];
        for core in &self.cores {
            dims.push(core.out_dim());
        }
        dims
    }

    /// Random factored net with uniform `±√(1/fan_in)` initialisation.
    pub fn random_factored(
        d_in: usize,
        bond_dims: &[usize],
        n_classes: usize,
        rng: &mut impl Rng,
    ) -> Self {
        assert!(!bond_dims.is_empty(), "need at least one bond");
        let mut uniform = |rows: usize, cols: usize| {
            let bound = (1.0 / cols as f64).sqrt();
            Matrix::from_fn(rows, cols, |_, _| rng.gen_range(-bound..bound))
        };
        let embedding = uniform(bond_dims[0], d_in + 1);
        let mut cores = Vec::with_capacity(bond_dims.len() - 1);
        for w in bond_dims.windows(2) {
            let a = uniform(w[1], w[0]);
            let b = uniform(w[1], w[0]);
            cores.push(LayerCore::Factored(FactoredCore { a, b }));
        }
        let unembedding = uniform(n_classes, *bond_dims.last().unwrap());
        ChiNet {
            embedding,
            cores,
            unembedding,
        }
    }

    /// Activations at every bond: `x_1 = e·augment(x)`, then one entry per
    /// core output, ending at bond `L+1`.
    pub fn activations(&self, x: &[f64]) -> Result<Vec<Vec<f64>>> {
        if x.len() != self.input_dim() {
            return Err(ChiError::Dim(format!(
                "forward expects input length {}, got {}",
                self.input_dim(),
                x.len()
            )));
        }
        let mut acts = Vec::with_capacity(self.depth() + 1);
        let mut cur = self.embedding.apply(&augment(x));
        acts.push(cur.clone());
        for core in &self.cores {
            cur = core.apply(&cur);
            acts.push(cur.clone());
        }
        Ok(acts)
    }

    /// Raw logits (softmax is the training loop's concern).
    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        let acts = self.activations(x)?;
        Ok(self.unembedding.apply(acts.last().unwrap()))
    }

    /// Batched forward over row-major samples (one row per raw input).
    pub fn forward_batch(&self, x: &Matrix) -> Result<Matrix> {
        if x.cols() != self.input_dim() {
            return Err(ChiError::Dim(format!(
                "forward_batch expects {} columns, got {}",
                self.input_dim(),
                x.cols()
            )));
        }
        let n = x.rows();
        let mut aug = Matrix::zeros(n, x.cols() + 1);
        for r in 0..n {
            aug.set(r, 0, 1.0);
            aug.row_mut(r)[1..].copy_from_slice(x.row(r));
        }
        let mut cur = aug.dot_nt(&self.embedding);
        for core in &self.cores {
            cur = match core {
                LayerCore::Factored(f) => {
                    let p = cur.dot_nt(&f.a);
                    let q = cur.dot_nt(&f.b);
                    let mut y = p;
                    for (a, b) in y.data_mut().iter_mut().zip(q.data().iter()) {
                        *a *= b;
                    }
                    y
                }
                LayerCore::Dense(c) => {
                    let mut y = Matrix::zeros(n, c.out_dim());
                    for r in 0..n {
                        let out = c.apply_bilinear(cur.row(r));
                        y.row_mut(r).copy_from_slice(&out);
                    }
                    y
                }
            };
        }
        Ok(cur.dot_nt(&self.unembedding))
    }

    /// Replace every core by its dense symmetric part. Forward outputs are
    /// unchanged because the cloning operator feeds a symmetric `x ⊗ x`.
    pub fn symmetrise(&self) -> ChiNet {
        let cores = self
            .cores
            .iter()
            .map(|c| {
                let mut dense = c.to_dense();
                dense.symmetrise();
                LayerCore::Dense(dense)
            })
            .collect();
        ChiNet {
            embedding: self.embedding.clone(),
            cores,
            unembedding: self.unembedding.clone(),
        }
    }

    /// True when every core is dense and flagged symmetric.
    pub fn is_dense_symmetric(&self) -> bool {
        self.cores.iter().all(|c| match c {
            LayerCore::Dense(d) => d.is_symmetric_flagged(),
            LayerCore::Factored(_) => false,
        })
    }

    /// Materialise the unfolded tree as a full coefficient tensor over the
    /// augmented input. Guarded to desk scale.
    pub fn materialise_poly(&self) -> Result<PolyTensor> {
        poly::materialise(self)
    }

    /// Frobenius norm of the unfolded linear map, via materialisation.
    /// Orthogonalised networks get this for free as the unembedding norm
    /// (see the compression module).
    pub fn net_frobenius(&self) -> Result<f64> {
        Ok(self.materialise_poly()?.frobenius())
    }
}
