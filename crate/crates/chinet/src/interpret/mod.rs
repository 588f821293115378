//! Weight-based interpretability on the diagonalised model: atoms,
//! interaction-matrix anatomy, per-class eigenfeatures of the root, linear
//! tracing to input space, and per-input prediction explanations.

pub mod image;

use crate::error::{ChiError, Result};
use crate::linalg::{sym_evd, Core3, Matrix};
use crate::model::LayerCore;
use crate::odt::DiagonalisedNet;
use serde::Serialize;

/// A row of the embedding in the diagonal basis, viewed as an input-space
/// pattern, with its bond-1 eigenvalue as importance.
#[derive(Debug, Clone)]
pub struct Atom {
    pub row: usize,
    pub importance: f64,
    /// over the augmented input (bias coordinate first)
    pub vector: Vec<f64>,
}

/// Embedding rows sorted by bond-1 eigenvalue, descending.
pub fn atoms(dnet: &DiagonalisedNet) -> Vec<Atom> {
    let e = &dnet.net.embedding;
    let lam = &dnet.bond_eigenvalues[0];
    let mut out: Vec<Atom> = (0..e.rows())
        .map(|r| Atom {
            row: r,
            importance: lam.get(r).copied().unwrap_or(0.0),
            vector: e.row(r).to_vec(),
        })
        .collect();
    out.sort_by(|a, b| {
        b.importance
            .partial_cmp(&a.importance)
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    out
}

/// Squared-norm split of one interaction matrix around a constant
/// coordinate: entries on the constant row/column (the shared corner counted
/// once), remaining diagonal entries, and everything else.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct InteractionDecomp {
    pub constant_sq: f64,
    pub diagonal_sq: f64,
    pub off_diagonal_sq: f64,
}

impl InteractionDecomp {
    pub fn total_sq(&self) -> f64 {
        self.constant_sq + self.diagonal_sq + self.off_diagonal_sq
    }
}

/// Decompose one slice (interaction matrix) with constant coordinate `c`.
pub fn slice_decomp(slice: &Matrix, c: usize) -> InteractionDecomp {
    let h = slice.rows();
    let mut constant_sq = 0.0;
    let mut diagonal_sq = 0.0;
    let mut off_diagonal_sq = 0.0;
    for i in 0..h {
        for j in 0..h {
            let v = slice.get(i, j);
            let sq = v * v;
            if i == c || j == c {
                constant_sq += sq;
            } else if i == j {
                diagonal_sq += sq;
            } else {
                off_diagonal_sq += sq;
            }
        }
    }
    InteractionDecomp {
        constant_sq,
        diagonal_sq,
        off_diagonal_sq,
    }
}

/// Fraction of a core's squared norm carried by constant interactions
/// (entries on the constant row/column of each slice).
pub fn constant_fraction(core: &Core3, constant_coord: usize) -> f64 {
    let total = core.frobenius().powi(2);
    if total == 0.0 {
        return 0.0;
    }
    let mut constant = 0.0;
    for l in 0..core.out_dim() {
        for m in 0..core.in_dim() {
            let row = core.get(l, constant_coord, m);
            let col = core.get(l, m, constant_coord);
            constant += row * row + col * col;
        }
        let corner = core.get(l, constant_coord, constant_coord);
        constant -= corner * corner;
    }
    constant / total
}

/// Per-class quadratic form of the root layer:
/// `M_c[j,k] = Σ_l u[c,l] · f_L[l,j,k]`, symmetric over bond `L`.
pub fn root_class_matrix(dnet: &DiagonalisedNet, class: usize) -> Result<Matrix> {
    let net = &dnet.net;
    if class >= net.n_classes() {
        return Err(ChiError::Dim(format!(
            "class {class} out of range 0..{}",
            net.n_classes()
        )));
    }
    let root = match net.cores.last() {
        Some(LayerCore::Dense(c)) => c,
        _ => {
            return Err(ChiError::Dim(
                "root class matrix requires a dense root core".into(),
            ))
        }
    };
    let h = root.in_dim();
    let mut m = Matrix::zeros(h, h);
    for l in 0..root.out_dim() {
        let w = net.unembedding.get(class, l);
        if w == 0.0 {
            continue;
        }
        let s = root.slice(l);
        for (o, v) in m.data_mut().iter_mut().zip(s.iter()) {
            *o += w * v;
        }
    }
    Ok(m)
}

/// A signed eigenpair of a per-class root quadratic form.
#[derive(Debug, Clone)]
pub struct EigenFeature {
    pub class: usize,
    /// rank within the class by |eigenvalue|, 0 = most important
    pub rank: usize,
    pub eigenvalue: f64,
    /// unit eigenvector on the root's input bond
    pub latent: Vec<f64>,
    /// linear trace of `latent` onto the raw input space
    pub input_projection: Vec<f64>,
}

/// Signed eigenpairs of a class matrix, sorted by |λ| descending. The full
/// set is returned so score sums stay exact; display thresholds are applied
/// at report time.
pub fn class_eigenfeatures(m_c: &Matrix) -> Result<Vec<(f64, Vec<f64>)>> {
    let spec = sym_evd(m_c)?;
    let n = spec.dim();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| {
        spec.eigenvalues[j]
            .abs()
            .partial_cmp(&spec.eigenvalues[i].abs())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    Ok(order
        .into_iter()
        .map(|i| (spec.eigenvalues[i], spec.eigenvectors.column(i)))
        .collect())
}

/// Propagate a bond-`from_bond` vector down through the constant-interaction
/// slices (`L_j[l,m] = 2·f_j[l, c_j, m]`), optionally continuing through the
/// embedding onto the raw input (bias coordinate dropped).
pub fn linear_trace(
    dnet: &DiagonalisedNet,
    v: &[f64],
    from_bond: usize,
    to_input: bool,
) -> Result<Vec<f64>> {
    let net = &dnet.net;
    let dims = net.bond_dims();
    if from_bond == 0 || from_bond > dims.len() {
        return Err(ChiError::Dim(format!(
            "bond {from_bond} out of range 1..={}",
            dims.len()
        )));
    }
    if v.len() != dims[from_bond - 1] {
        return Err(ChiError::Dim(format!(
            "vector length {} does not match bond {} dimension {}",
            v.len(),
            from_bond,
            dims[from_bond - 1]
        )));
    }
    let mut w = v.to_vec();
    for j in (1..from_bond).rev() {
        let core = match &net.cores[j - 1] {
            LayerCore::Dense(c) => c,
            LayerCore::Factored(_) => {
                return Err(ChiError::Dim("linear_trace requires dense cores".into()))
            }
        };
        let c_j = dnet.constant_coords[j - 1];
        // w ← L_jᵀ·w
        let mut next = vec![0.0; core.in_dim()];
        for l in 0..core.out_dim() {
            let wl = w[l];
            if wl == 0.0 {
                continue;
            }
            let s = core.slice(l);
            let row = &s[c_j * core.in_dim()..(c_j + 1) * core.in_dim()];
            for (o, &f) in next.iter_mut().zip(row.iter()) {
                *o += 2.0 * f * wl;
            }
        }
        w = next;
    }
    if to_input {
        let aug = net.embedding.apply_t(&w);
        Ok(aug[1..].to_vec())
    } else {
        Ok(w)
    }
}

/// How feature activations are scored.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ActivationMode {
    /// `λ·⟨v,a⟩²` — scores sum exactly to the class logit
    Squared,
    /// `λ·⟨v,a⟩` — the literal inner-product reading
    Linear,
}

/// Extract the complete eigenfeature set for every class, latent vectors
/// traced onto the input space.
pub fn extract_features(dnet: &DiagonalisedNet) -> Result<Vec<Vec<EigenFeature>>> {
    let n_classes = dnet.net.n_classes();
    let depth = dnet.net.depth();
    if depth == 0 {
        return Err(ChiError::Dim("feature extraction needs at least one core".into()));
    }
    let mut all = Vec::with_capacity(n_classes);
    for c in 0..n_classes {
        let m_c = root_class_matrix(dnet, c)?;
        let pairs = class_eigenfeatures(&m_c)?;
        let mut feats = Vec::with_capacity(pairs.len());
        for (rank, (eigenvalue, latent)) in pairs.into_iter().enumerate() {
            let input_projection = linear_trace(dnet, &latent, depth, true)?;
            feats.push(EigenFeature {
                class: c,
                rank,
                eigenvalue,
                latent,
                input_projection,
            });
        }
        all.push(feats);
    }
    Ok(all)
}

#[derive(Debug, Clone, Serialize)]
pub struct FeatureScore {
    pub rank: usize,
    pub eigenvalue: f64,
    pub activation: f64,
    pub score: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ClassExplanation {
    pub class: usize,
    pub logit: f64,
    pub score_sum: f64,
    pub positive_sum: f64,
    pub negative_sum: f64,
    pub top_features: Vec<FeatureScore>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ExplanationReport {
    pub mode: ActivationMode,
    pub predicted: usize,
    pub logits: Vec<f64>,
    pub classes: Vec<ClassExplanation>,
    /// worst |score_sum − logit| across classes (exact in squared mode)
    pub reconstruction_residual: f64,
}

/// Score every feature against one input and reconcile the per-class score
/// sums with the model logits.
pub fn explain(
    dnet: &DiagonalisedNet,
    features: &[Vec<EigenFeature>],
    x: &[f64],
    mode: ActivationMode,
    top_k: usize,
) -> Result<ExplanationReport> {
    let net = &dnet.net;
    let depth = net.depth();
    if features.len() != net.n_classes() {
        return Err(ChiError::Dim(format!(
            "{} feature classes for a {}-class model",
            features.len(),
            net.n_classes()
        )));
    }
    let acts = net.activations(x)?;
    let latent = &acts[depth - 1]; // bond L, the root's input
    let logits = net.unembedding.apply(acts.last().unwrap());

    let mut classes = Vec::with_capacity(features.len());
    let mut worst = 0.0f64;
    for (c, feats) in features.iter().enumerate() {
        if feats
            .first()
            .is_some_and(|f| f.latent.len() != latent.len())
        {
            return Err(ChiError::Dim(
                "feature dimensions do not match the model".into(),
            ));
        }
        let mut scores: Vec<FeatureScore> = feats
            .iter()
            .map(|f| {
                let a: f64 = f.latent.iter().zip(latent.iter()).map(|(u, v)| u * v).sum();
                let score = match mode {
                    ActivationMode::Squared => f.eigenvalue * a * a,
                    ActivationMode::Linear => f.eigenvalue * a,
                };
                FeatureScore {
                    rank: f.rank,
                    eigenvalue: f.eigenvalue,
                    activation: a,
                    score,
                }
            })
            .collect();
        let score_sum: f64 = scores.iter().map(|s| s.score).sum();
        let positive_sum: f64 = scores.iter().map(|s| s.score.max(0.0)).sum();
        let negative_sum: f64 = scores.iter().map(|s| s.score.min(0.0)).sum();
        scores.sort_by(|a, b| {
            b.score
                .abs()
                .partial_cmp(&a.score.abs())
                .unwrap_or(std::cmp::Ordering::Equal)
        });
        scores.truncate(top_k);
        if mode == ActivationMode::Squared {
            worst = worst.max((score_sum - logits[c]).abs());
        }
        classes.push(ClassExplanation {
            class: c,
            logit: logits[c],
            score_sum,
            positive_sum,
            negative_sum,
            top_features: scores,
        });
    }
    let predicted = logits
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.partial_cmp(b.1).unwrap_or(std::cmp::Ordering::Equal))
        .map(|(i, _)| i)
        .unwrap_or(0);
    Ok(ExplanationReport {
        mode,
        predicted,
        logits,
        classes,
        reconstruction_residual: worst,
    })
}

/// Display threshold: features with `|λ| < 1e-6·|λ|_max` are dropped from
/// emitted reports (never from score sums).
pub fn display_features(feats: &[EigenFeature]) -> Vec<&EigenFeature> {
    let max = feats
        .iter()
        .map(|f| f.eigenvalue.abs())
        .fold(0.0f64, f64::max);
    feats
        .iter()
        .filter(|f| f.eigenvalue.abs() >= 1e-6 * max)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::khatri_rao_t;
    use crate::model::ChiNet;
    use crate::odt::{diagonalise, orthogonalise, truncate, TruncationPlan};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;

    fn diag_of(seed: u64, d: usize, dims: &[usize], classes: usize) -> DiagonalisedNet {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let net = ChiNet::random_factored(d, dims, classes, &mut rng).symmetrise();
        let onet = orthogonalise(&net).unwrap();
        let spec = diagonalise(&onet).unwrap();
        truncate(&onet, &spec, &TruncationPlan::full_rank(&spec)).unwrap()
    }

    #[test]
    fn atoms_sorted_by_importance() {
        let id = Matrix::identity(3);
        let delta = khatri_rao_t(&id, &id).unwrap().symmetrised();
        let net = ChiNet::new(
            Matrix::identity(3),
            vec![LayerCore::Dense(delta)],
            Matrix::identity(3),
        )
        .unwrap();
        let dnet = DiagonalisedNet::from_chinet(
            net,
            vec![vec![2.0, 3.0, 1.0], vec![1.0, 1.0, 1.0]],
        )
        .unwrap();
        let a = atoms(&dnet);
        assert_eq!(a.len(), 3);
        assert_eq!(a[0].row, 1);
        assert_eq!(a[1].row, 0);
        assert_eq!(a[2].row, 2);
    }

    #[test]
    fn truncated_model_has_k_atoms() {
        let mut rng = ChaCha20Rng::seed_from_u64(61);
        let net = ChiNet::random_factored(5, &[5, 5], 3, &mut rng).symmetrise();
        let onet = orthogonalise(&net).unwrap();
        let spec = diagonalise(&onet).unwrap();
        let plan = TruncationPlan {
            ranks: vec![2, 3],
            epsilon: None,
        };
        let dnet = truncate(&onet, &spec, &plan).unwrap();
        assert_eq!(atoms(&dnet).len(), 2);
    }

    #[test]
    fn root_matrix_selection_and_zero() {
        let dnet = diag_of(62, 4, &[4, 4], 3);
        // one-hot unembedding row selects a single slice
        let root = match dnet.net.cores.last().unwrap() {
            LayerCore::Dense(c) => c.clone(),
            _ => unreachable!(),
        };
        let mut picked = dnet.clone();
        let h_out = root.out_dim();
        picked.net.unembedding = Matrix::from_fn(3, h_out, |i, j| {
            if i == 0 && j == 0 {
                1.0
            } else {
                0.0
            }
        });
        let m0 = root_class_matrix(&picked, 0).unwrap();
        assert!(m0.max_abs_diff(&root.slice_matrix(0)) < 1e-15);
        let m1 = root_class_matrix(&picked, 1).unwrap();
        assert_eq!(m1.max_abs(), 0.0);
        assert!(root_class_matrix(&picked, 5).is_err());
    }

    #[test]
    fn quadratic_form_matches_logit_contribution() {
        let dnet = diag_of(63, 4, &[5, 4], 3);
        for c in 0..3 {
            let m_c = root_class_matrix(&dnet, c).unwrap();
            for t in 0..10 {
                let x: Vec<f64> = (0..4).map(|i| ((t * 4 + i) as f64 * 0.37).sin()).collect();
                let acts = dnet.net.activations(&x).unwrap();
                let a = &acts[dnet.net.depth() - 1];
                let quad: f64 = (0..a.len())
                    .map(|i| {
                        (0..a.len())
                            .map(|j| a[i] * m_c.get(i, j) * a[j])
                            .sum::<f64>()
                    })
                    .sum();
                let logit = dnet.net.forward(&x).unwrap()[c];
                assert!((quad - logit).abs() <= 1e-10 * logit.abs().max(1.0));
            }
        }
    }

    #[test]
    fn eigenfeatures_diagonal_case() {
        let m = Matrix::from_rows(&[&[2.0, 0.0], &[0.0, -5.0]]);
        let feats = class_eigenfeatures(&m).unwrap();
        assert!((feats[0].0 + 5.0).abs() < 1e-12);
        assert!((feats[1].0 - 2.0).abs() < 1e-12);
        assert!((feats[0].1[1].abs() - 1.0).abs() < 1e-12);
        assert!((feats[1].1[0].abs() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn quadratic_identity_exact() {
        let dnet = diag_of(64, 3, &[4, 4], 2);
        let m_c = root_class_matrix(&dnet, 1).unwrap();
        let feats = class_eigenfeatures(&m_c).unwrap();
        for t in 0..20 {
            let a: Vec<f64> = (0..4).map(|i| ((t * 4 + i) as f64 * 0.51).cos()).collect();
            let direct: f64 = (0..4)
                .map(|i| (0..4).map(|j| a[i] * m_c.get(i, j) * a[j]).sum::<f64>())
                .sum();
            let via_eigen: f64 = feats
                .iter()
                .map(|(l, v)| {
                    let dot: f64 = v.iter().zip(a.iter()).map(|(x, y)| x * y).sum();
                    l * dot * dot
                })
                .sum();
            assert!((direct - via_eigen).abs() <= 1e-10 * direct.abs().max(1.0));
        }
    }

    #[test]
    fn constant_fraction_limits() {
        let h = 4usize;
        // only constant row/column populated -> fraction 1
        let mut c = Core3::zeros(2, h);
        for l in 0..2 {
            for m in 0..h {
                c.set(l, 0, m, 0.3 + l as f64 + m as f64);
                c.set(l, m, 0, 0.3 + l as f64 + m as f64);
            }
        }
        c.symmetrise();
        assert!((constant_fraction(&c, 0) - 1.0).abs() < 1e-12);
        // zero constant row/column -> fraction 0
        let mut c = Core3::zeros(2, h);
        for l in 0..2 {
            for m in 1..h {
                for k in 1..h {
                    c.set(l, m, k, (l + m + k) as f64 * 0.1);
                }
            }
        }
        c.symmetrise();
        assert_eq!(constant_fraction(&c, 0), 0.0);
    }

    #[test]
    fn decomposition_sums_to_slice_norm() {
        let mut rng = ChaCha20Rng::seed_from_u64(65);
        let net = ChiNet::random_factored(4, &[5, 4], 3, &mut rng).symmetrise();
        let dnet = DiagonalisedNet::from_chinet(net, vec![vec![1.0; 5], vec![1.0; 4]]).unwrap();
        if let LayerCore::Dense(core) = &dnet.net.cores[0] {
            for l in 0..core.out_dim() {
                let s = core.slice_matrix(l);
                let d = slice_decomp(&s, dnet.constant_coords[0]);
                let total = s.frobenius().powi(2);
                assert!((d.total_sq() - total).abs() <= 1e-9 * total.max(1e-12));
            }
        }
    }

    /// a linear network (constant interactions only, bias lane preserved):
    /// the trace reproduces the composed affine map exactly
    #[test]
    fn linear_trace_exact_on_linear_net() {
        let d = 3usize;
        let h = 4usize;
        let classes = 2usize;
        let mut rng = ChaCha20Rng::seed_from_u64(66);
        let mut e = Matrix::zeros(h, d + 1);
        e.set(0, 0, 1.0);
        for l in 1..h {
            for j in 1..=d {
                e.set(l, j, ((l * (d + 1) + j) as f64 * 0.13).sin() * 0.5);
            }
        }
        let mut mk_core = |_: usize| {
            let mut c = Core3::zeros(h, h);
            c.set(0, 0, 0, 1.0);
            for l in 1..h {
                for m in 1..h {
                    let v = ((l * h + m) as f64 * 0.29 + rng.gen_range(-0.1..0.1)).sin() * 0.4;
                    c.set(l, 0, m, v);
                    c.set(l, m, 0, v);
                }
            }
            c.symmetrise();
            c
        };
        let cores = vec![
            LayerCore::Dense(mk_core(0)),
            LayerCore::Dense(mk_core(1)),
        ];
        let u = Matrix::from_fn(classes, h, |i, j| ((i * h + j) as f64 * 0.41).cos() * 0.6);
        let net = ChiNet::new(e, cores, u).unwrap();
        let poly = net.materialise_poly().unwrap();
        let dnet =
            DiagonalisedNet::from_chinet(net, vec![vec![1.0; h], vec![1.0; h], vec![1.0; h]])
                .unwrap();
        assert_eq!(dnet.constant_coords, vec![0, 0, 0]);
        // trace each class row of the unembedding from the top bond
        for c in 0..classes {
            let v = dnet.net.unembedding.row(c).to_vec();
            let traced = linear_trace(&dnet, &v, 3, true).unwrap();
            for m in 1..=d {
                let coef = poly.degree_one_coefficient(c, m);
                assert!(
                    (traced[m - 1] - coef).abs() <= 1e-9 * coef.abs().max(1.0),
                    "class {c} input {m}: traced {} vs poly {}",
                    traced[m - 1],
                    coef
                );
            }
        }
        // zero vector traces to zero
        let z = linear_trace(&dnet, &[0.0; 4], 3, true).unwrap();
        assert!(z.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn explain_identity_and_orthogonality() {
        let dnet = diag_of(67, 4, &[5, 5, 4], 3);
        let features = extract_features(&dnet).unwrap();
        // per-class sums reproduce the logits
        for t in 0..100 {
            let x: Vec<f64> = (0..4).map(|i| ((t * 4 + i) as f64 * 0.33).sin()).collect();
            let rep = explain(&dnet, &features, &x, ActivationMode::Squared, 4).unwrap();
            for ce in &rep.classes {
                assert!(
                    (ce.score_sum - ce.logit).abs() <= 1e-9 * ce.logit.abs().max(1.0),
                    "class {}: {} vs {}",
                    ce.class,
                    ce.score_sum,
                    ce.logit
                );
            }
        }
        // latent eigenvectors are orthonormal per class
        for feats in &features {
            for i in 0..feats.len() {
                for j in 0..feats.len() {
                    let dot: f64 = feats[i]
                        .latent
                        .iter()
                        .zip(feats[j].latent.iter())
                        .map(|(a, b)| a * b)
                        .sum();
                    let expect = if i == j { 1.0 } else { 0.0 };
                    assert!((dot - expect).abs() <= 1e-10);
                }
            }
        }
    }

    #[test]
    fn aligned_input_scores_single_feature() {
        let dnet = diag_of(68, 3, &[4, 4], 2);
        let m_c = root_class_matrix(&dnet, 0).unwrap();
        let feats = class_eigenfeatures(&m_c).unwrap();
        // latent a equal to one eigenvector: that feature scores λ, others 0
        let (lam, v) = &feats[0];
        for (k, (l_k, v_k)) in feats.iter().enumerate() {
            let dot: f64 = v.iter().zip(v_k.iter()).map(|(a, b)| a * b).sum();
            let score = l_k * dot * dot;
            if k == 0 {
                assert!((score - lam).abs() <= 1e-10 * lam.abs().max(1.0));
            } else {
                assert!(score.abs() <= 1e-10 * lam.abs().max(1.0));
            }
        }
    }
}
