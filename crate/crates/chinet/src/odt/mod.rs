//! The compression pipeline: a bottom-up RQ sweep makes every core an
//! isometry, a top-down Gram recursion diagonalises each bond, and truncated
//! eigenbases are contracted back into the adjacent cores. All of it is
//! function-preserving at full rank and carries a Frobenius error bound under
//! truncation.

mod sweep;

pub use sweep::{local_svd, truncation_sweep, SweepRow};

use crate::error::{ChiError, Result};
use crate::linalg::{gram_step, rq_reduced, sym_evd, Core3, Matrix, Spectrum};
use crate::model::{ChiNet, LayerCore};

/// Maximum relative asymmetry tolerated before re-symmetrising a contracted
/// core. Trained, nearly rank-deficient cores pick up ~1e-9 drift through
/// their null-space completions; re-symmetrising never changes the network
/// function, so the check only has to catch gross contraction bugs.
const SYM_TOL: f64 = 1e-8;

/// A network whose embedding and cores are isometries (row-orthonormal
/// matricisation); the unembedding carries the non-orthogonal part.
#[derive(Debug, Clone)]
pub struct OrthNet {
    pub embedding: Matrix,
    pub cores: Vec<Core3>,
    pub unembedding: Matrix,
}

impl OrthNet {
    pub fn depth(&self) -> usize {
        self.cores.len()
    }

    /// Bond dimensions `h_1 … h_{L+1}`.
    pub fn bond_dims(&self) -> Vec<usize> {
        let mut dims = vec![self.embedding.rows()];
        for c in &self.cores {
            dims.push(c.out_dim());
        }
        dims
    }

    /// Worst row-orthonormality residual across the embedding and all cores.
    pub fn isometry_residual(&self) -> f64 {
        let mut worst = self.embedding.orthonormal_rows_residual();
        for c in &self.cores {
            worst = worst.max(c.matricised().orthonormal_rows_residual());
        }
        worst
    }

    /// For an isometric network the unfolded map's Frobenius norm collapses
    /// to the unembedding norm.
    pub fn net_frobenius(&self) -> f64 {
        self.unembedding.frobenius()
    }

    pub fn to_chinet(&self) -> ChiNet {
        ChiNet {
            embedding: self.embedding.clone(),
            cores: self.cores.iter().cloned().map(LayerCore::Dense).collect(),
            unembedding: self.unembedding.clone(),
        }
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.to_chinet().forward(x)
    }
}

fn checked_symmetrise(core: &mut Core3, context: &str) -> Result<()> {
    let asym = core.max_asymmetry();
    let scale = core.frobenius().max(1.0);
    if asym > SYM_TOL * scale {
        return Err(ChiError::Numeric(format!(
            "{context}: contracted core lost symmetry (residual {asym:.3e}, scale {scale:.3e})"
        )));
    }
    core.symmetrise();
    Ok(())
}

/// Bottom-up orthogonalisation: RQ each matricised core, keep the row
/// orthonormal factor, and push the triangular factor into the next core
/// (both input legs) or linearly into the unembedding.
///
/// Requires a symmetrised dense network with `h_1 ≤ d_in+1` and
/// `h_{i+1} ≤ h_i²` so the reduced RQ applies.
pub fn orthogonalise(net: &ChiNet) -> Result<OrthNet> {
    if !net.is_dense_symmetric() {
        return Err(ChiError::Dim(
            "orthogonalise requires a symmetrised dense network".into(),
        ));
    }
    let (mut carry, embedding) = rq_reduced(&net.embedding)?;
    let mut cores = Vec::with_capacity(net.depth());
    for (i, core) in net.cores.iter().enumerate() {
        let dense = match core {
            LayerCore::Dense(c) => c,
            LayerCore::Factored(_) => unreachable!("checked dense above"),
        };
        // symmetry survives the (R ⊗ R) contraction; asserted, not assumed
        let mut pre = dense.contract_inputs(&carry);
        checked_symmetrise(&mut pre, "orthogonalise")?;
        let (r, q) = rq_reduced(&pre.matricised())?;
        cores.push(Core3::from_matricised(q, pre.in_dim()).map_err(|e| {
            ChiError::Dim(format!("core {}: {e}", i + 1))
        })?);
        carry = r;
    }
    let unembedding = net.unembedding.dot(&carry);
    Ok(OrthNet {
        embedding,
        cores,
        unembedding,
    })
}

/// Per-bond eigenbases and eigenvalues, bonds `1 … L+1` (index `b-1`).
#[derive(Debug, Clone)]
pub struct BondSpectrum {
    pub spectra: Vec<Spectrum>,
}

impl BondSpectrum {
    pub fn n_bonds(&self) -> usize {
        self.spectra.len()
    }

    pub fn eigenvalues(&self, bond: usize) -> &[f64] {
        &self.spectra[bond - 1].eigenvalues
    }
}

/// Top-down Gram recursion: `G_{L+1} = uᵀu`, then one `gram_step` per core.
/// Returned in bond order `1 … L+1`.
pub fn gram_sequence(onet: &OrthNet) -> Result<Vec<Matrix>> {
    let depth = onet.depth();
    let mut grams = vec![Matrix::zeros(0, 0); depth + 1];
    grams[depth] = onet.unembedding.dot_tn(&onet.unembedding);
    for i in (0..depth).rev() {
        grams[i] = gram_step(&onet.cores[i], &grams[i + 1])?;
    }
    Ok(grams)
}

/// Eigendecompose every bond Gram. Inserting the full-rank projector
/// `V_i·V_iᵀ` at any bond leaves the network function unchanged.
pub fn diagonalise(onet: &OrthNet) -> Result<BondSpectrum> {
    let grams = gram_sequence(onet)?;
    let spectra = grams
        .iter()
        .map(sym_evd)
        .collect::<Result<Vec<_>>>()?;
    Ok(BondSpectrum { spectra })
}

/// Requested ranks per bond (`1 … L+1`), optionally derived from a relative
/// precision target.
#[derive(Debug, Clone)]
pub struct TruncationPlan {
    pub ranks: Vec<usize>,
    pub epsilon: Option<f64>,
}

impl TruncationPlan {
    pub fn full_rank(spectrum: &BondSpectrum) -> Self {
        TruncationPlan {
            ranks: spectrum.spectra.iter().map(|s| s.dim()).collect(),
            epsilon: None,
        }
    }
}

/// Numerical-zero eigenvalue threshold relative to the bond's largest.
const ZERO_EIG_REL: f64 = 1e-12;

/// Smallest rank per bond whose squared-eigenvalue tail stays within
/// `ε²/(2^{L+1}−1)` of the bond Gram's squared Frobenius norm. Never selects
/// rank 0; eigenvalues below `1e-12·λ_max` count as zero.
pub fn select_ranks(spectrum: &BondSpectrum, epsilon: f64, depth: usize) -> Result<TruncationPlan> {
    if epsilon <= 0.0 {
        return Err(ChiError::Config("epsilon must be positive".into()));
    }
    let projections = (1u64 << (depth as u32 + 1)) - 1;
    let budget_frac = epsilon * epsilon / projections as f64;
    let mut ranks = Vec::with_capacity(spectrum.n_bonds());
    for s in &spectrum.spectra {
        let lam_max = s.eigenvalues.first().copied().unwrap_or(0.0).max(0.0);
        let floor = ZERO_EIG_REL * lam_max;
        let lam: Vec<f64> = s
            .eigenvalues
            .iter()
            .map(|&l| if l > floor { l } else { 0.0 })
            .collect();
        let total2: f64 = lam.iter().map(|l| l * l).sum();
        if total2 == 0.0 {
            ranks.push(1);
            continue;
        }
        let budget = budget_frac * total2;
        // tail²(r) = Σ_{j>r} λ_j², smallest r with tail within budget
        let mut tail2 = 0.0;
        let mut rank = lam.len();
        for j in (0..lam.len()).rev() {
            let t = tail2 + lam[j] * lam[j];
            if t <= budget && j >= 1 {
                tail2 = t;
                rank = j;
            } else {
                break;
            }
        }
        // never keep trailing numerical zeros
        let nnz = lam.iter().filter(|&&l| l > 0.0).count().max(1);
        ranks.push(rank.min(nnz).max(1));
    }
    Ok(TruncationPlan {
        ranks,
        epsilon: Some(epsilon),
    })
}

/// The analysis object: a truncated network whose bond coordinates are the
/// eigenbasis coordinates, with the retained eigenvalues and the identified
/// constant coordinate per bond.
#[derive(Debug, Clone)]
pub struct DiagonalisedNet {
    pub net: ChiNet,
    /// retained eigenvalues per bond (`1 … L+1`)
    pub bond_eigenvalues: Vec<Vec<f64>>,
    /// per-bond coordinate with maximal overlap against the propagated bias
    pub constant_coords: Vec<usize>,
    pub ranks: Vec<usize>,
}

impl DiagonalisedNet {
    /// Wrap a dense symmetric network directly (full rank, no rotation);
    /// used when analysing a network in its native basis.
    pub fn from_chinet(net: ChiNet, bond_eigenvalues: Vec<Vec<f64>>) -> Result<Self> {
        if !net.is_dense_symmetric() {
            return Err(ChiError::Dim(
                "analysis net must be dense and symmetric".into(),
            ));
        }
        let ranks = net.bond_dims();
        let constant_coords = identify_constant_coords(&net)?;
        Ok(DiagonalisedNet {
            net,
            bond_eigenvalues,
            constant_coords,
            ranks,
        })
    }
}

/// Coordinate per bond whose basis vector has maximal absolute overlap with
/// the propagated bias direction (the zero-input activation).
pub fn identify_constant_coords(net: &ChiNet) -> Result<Vec<usize>> {
    let zero = vec![0.0; net.input_dim()];
    let acts = net.activations(&zero)?;
    Ok(acts
        .iter()
        .map(|a| {
            let mut best = 0usize;
            for (i, v) in a.iter().enumerate() {
                if v.abs() > a[best].abs() {
                    best = i;
                }
            }
            best
        })
        .collect())
}

/// Contract truncated eigenbases into the adjacent cores: each bond's basis
/// rotates the upstream core's output and enters both input legs of the
/// downstream core; the unembedding absorbs the top basis linearly.
pub fn truncate(
    onet: &OrthNet,
    spectrum: &BondSpectrum,
    plan: &TruncationPlan,
) -> Result<DiagonalisedNet> {
    let depth = onet.depth();
    if plan.ranks.len() != depth + 1 {
        return Err(ChiError::Dim(format!(
            "plan has {} ranks, expected {}",
            plan.ranks.len(),
            depth + 1
        )));
    }
    let dims = onet.bond_dims();
    for (i, (&r, &d)) in plan.ranks.iter().zip(dims.iter()).enumerate() {
        if r == 0 || r > d {
            return Err(ChiError::Dim(format!(
                "rank {} out of range 1..={} at bond {}",
                r,
                d,
                i + 1
            )));
        }
    }
    let vs: Vec<Matrix> = spectrum
        .spectra
        .iter()
        .zip(plan.ranks.iter())
        .map(|(s, &r)| s.leading_vectors(r))
        .collect();

    let embedding = vs[0].dot_tn(&onet.embedding); // V_1ᵀ · f_0
    let mut cores = Vec::with_capacity(depth);
    for i in 0..depth {
        let mut c = onet.cores[i]
            .contract_inputs(&vs[i]) // f_i ∘ (V_i ⊗ V_i)
            .contract_output(&vs[i + 1].transpose()); // V_{i+1}ᵀ ∘ f_i
        checked_symmetrise(&mut c, "truncate")?;
        cores.push(LayerCore::Dense(c));
    }
    let unembedding = onet.unembedding.dot(&vs[depth]); // u ∘ V_{L+1}

    let net = ChiNet {
        embedding,
        cores,
        unembedding,
    };
    net.validate()?;
    let bond_eigenvalues = spectrum
        .spectra
        .iter()
        .zip(plan.ranks.iter())
        .map(|(s, &r)| s.eigenvalues[..r].to_vec())
        .collect();
    let constant_coords = identify_constant_coords(&net)?;
    Ok(DiagonalisedNet {
        net,
        bond_eigenvalues,
        constant_coords,
        ranks: plan.ranks.clone(),
    })
}

/// Participation ratio `(Σ s)² / Σ s²` of a non-negative spectrum.
pub fn effective_dim(values: &[f64]) -> Result<f64> {
    let sum: f64 = values.iter().sum();
    let sum2: f64 = values.iter().map(|v| v * v).sum();
    if sum2 == 0.0 {
        return Err(ChiError::Numeric(
            "effective_dim of an all-zero spectrum".into(),
        ));
    }
    Ok(sum * sum / sum2)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::khatri_rao_t;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn random_valid_net(seed: u64, d_in: usize, dims: &[usize], classes: usize) -> ChiNet {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        ChiNet::random_factored(d_in, dims, classes, &mut rng).symmetrise()
    }

    #[test]
    fn orthogonalise_preserves_function() {
        let net = random_valid_net(1, 4, &[4, 6, 5], 3);
        let onet = orthogonalise(&net).unwrap();
        assert!(onet.isometry_residual() <= 1e-9);
        for t in 0..100 {
            let x: Vec<f64> = (0..4).map(|i| ((t * 4 + i) as f64 * 0.19).sin()).collect();
            let a = net.forward(&x).unwrap();
            let b = onet.forward(&x).unwrap();
            for (u, v) in a.iter().zip(b.iter()) {
                assert!(
                    (u - v).abs() <= 1e-9 * u.abs().max(1.0),
                    "logit drift {u} vs {v}"
                );
            }
        }
    }

    #[test]
    fn already_orthogonal_fixed_point() {
        // delta cores over an orthonormal embedding are already isometric
        let id3 = Matrix::identity(3);
        let delta = khatri_rao_t(&id3, &id3).unwrap().symmetrised();
        let net = ChiNet::new(
            Matrix::identity(3),
            vec![LayerCore::Dense(delta)],
            Matrix::from_fn(2, 3, |i, j| (i + 2 * j) as f64 * 0.4),
        )
        .unwrap();
        let onet = orthogonalise(&net).unwrap();
        assert!(onet.isometry_residual() <= 1e-12);
        for t in 0..20 {
            let x: Vec<f64> = (0..2).map(|i| ((t + i) as f64 * 0.3).cos()).collect();
            let a = net.forward(&x).unwrap();
            let b = onet.forward(&x).unwrap();
            for (u, v) in a.iter().zip(b.iter()) {
                assert!((u - v).abs() <= 1e-10 * u.abs().max(1.0));
            }
        }
    }

    #[test]
    fn norm_identity_after_orthogonalisation() {
        let net = random_valid_net(2, 3, &[4, 4], 2);
        let onet = orthogonalise(&net).unwrap();
        let via_u = onet.net_frobenius();
        let via_poly = net.materialise_poly().unwrap().frobenius();
        assert!(
            (via_u - via_poly).abs() <= 1e-8 * via_poly.max(1e-12),
            "{via_u} vs {via_poly}"
        );
    }

    #[test]
    fn gram_identity_unembedding() {
        let net = random_valid_net(3, 3, &[4, 4], 4);
        let mut onet = orthogonalise(&net).unwrap();
        onet.unembedding = Matrix::identity(4);
        let grams = gram_sequence(&onet).unwrap();
        assert!(grams.last().unwrap().max_abs_diff(&Matrix::identity(4)) < 1e-12);
    }

    #[test]
    fn zero_unembedding_zero_grams() {
        let net = random_valid_net(4, 3, &[4, 5], 2);
        let mut onet = orthogonalise(&net).unwrap();
        onet.unembedding = Matrix::zeros(2, onet.unembedding.cols());
        for g in gram_sequence(&onet).unwrap() {
            assert_eq!(g.max_abs(), 0.0);
        }
    }

    #[test]
    fn grams_are_psd() {
        let net = random_valid_net(5, 4, &[5, 6, 4], 3);
        let onet = orthogonalise(&net).unwrap();
        let spec = diagonalise(&onet).unwrap();
        for s in &spec.spectra {
            for &l in &s.eigenvalues {
                assert!(l >= -1e-10, "negative Gram eigenvalue {l}");
            }
        }
    }

    #[test]
    fn full_rank_truncation_preserves_function() {
        let net = random_valid_net(6, 4, &[5, 6, 5], 3);
        let onet = orthogonalise(&net).unwrap();
        let spec = diagonalise(&onet).unwrap();
        let plan = TruncationPlan::full_rank(&spec);
        let dnet = truncate(&onet, &spec, &plan).unwrap();
        for t in 0..100 {
            let x: Vec<f64> = (0..4).map(|i| ((t * 4 + i) as f64 * 0.23).sin()).collect();
            let a = net.forward(&x).unwrap();
            let b = dnet.net.forward(&x).unwrap();
            for (u, v) in a.iter().zip(b.iter()) {
                assert!(
                    (u - v).abs() <= 1e-9 * u.abs().max(1.0),
                    "logit drift {u} vs {v}"
                );
            }
        }
    }

    #[test]
    fn select_ranks_limits() {
        let spec = BondSpectrum {
            spectra: vec![Spectrum {
                eigenvalues: vec![1.0, 1e-8, 1e-9],
                eigenvectors: Matrix::identity(3),
            }],
        };
        // huge epsilon -> rank 1
        let plan = select_ranks(&spec, 1e6, 1).unwrap();
        assert_eq!(plan.ranks, vec![1]);
        // epsilon -> 0 keeps every nonzero eigenvalue
        let plan = select_ranks(&spec, 1e-15, 1).unwrap();
        assert_eq!(plan.ranks, vec![3]);
        // the worked spec example: eps = 0.1 truncates the 1e-8 tail
        let plan = select_ranks(&spec, 0.1, 1).unwrap();
        assert_eq!(plan.ranks, vec![1]);
    }

    #[test]
    fn select_ranks_monotone_in_epsilon() {
        let net = random_valid_net(7, 4, &[5, 6, 5], 3);
        let onet = orthogonalise(&net).unwrap();
        let spec = diagonalise(&onet).unwrap();
        let mut last: Option<Vec<usize>> = None;
        for &eps in &[0.01, 0.05, 0.1, 0.3, 0.5, 1.0] {
            let ranks = select_ranks(&spec, eps, 2).unwrap().ranks;
            if let Some(prev) = &last {
                for (a, b) in ranks.iter().zip(prev.iter()) {
                    assert!(a <= b, "ranks not monotone: {ranks:?} after {prev:?}");
                }
            }
            last = Some(ranks);
        }
    }

    #[test]
    fn rank_out_of_range_rejected() {
        let net = random_valid_net(8, 3, &[4, 4], 2);
        let onet = orthogonalise(&net).unwrap();
        let spec = diagonalise(&onet).unwrap();
        let plan = TruncationPlan {
            ranks: vec![5, 4],
            epsilon: None,
        };
        assert!(truncate(&onet, &spec, &plan).is_err());
        let plan = TruncationPlan {
            ranks: vec![0, 4],
            epsilon: None,
        };
        assert!(truncate(&onet, &spec, &plan).is_err());
    }

    #[test]
    fn effective_dim_cases() {
        assert!((effective_dim(&[1.0, 1.0, 1.0]).unwrap() - 3.0).abs() < 1e-12);
        assert!((effective_dim(&[1.0, 0.0, 0.0]).unwrap() - 1.0).abs() < 1e-12);
        let v = effective_dim(&[1.0, 1.0, 0.0001]).unwrap();
        assert!((v - 2.0002).abs() < 1e-4, "{v}");
        assert!(effective_dim(&[0.0, 0.0]).is_err());
    }

    #[test]
    fn factored_net_rejected() {
        let mut rng = ChaCha20Rng::seed_from_u64(9);
        let net = ChiNet::random_factored(3, &[4, 4], 2, &mut rng);
        assert!(orthogonalise(&net).is_err());
    }
}
