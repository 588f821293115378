//! Cumulative truncation sweeps and the per-core SVD comparison.

use crate::error::Result;
use crate::linalg::{sym_evd, Matrix};
use crate::model::{ChiNet, LayerCore};
use crate::odt::{truncate, BondSpectrum, OrthNet, TruncationPlan};
use crate::train::{accuracy, batch_xent, Dataset};

/// One row of the truncation sweep.
#[derive(Debug, Clone, serde::Serialize)]
pub struct SweepRow {
    pub removed: usize,
    pub removed_frac: f64,
    pub accuracy: f64,
    pub loss: f64,
    pub frobenius: f64,
}

/// Rank all bond dimensions by their per-bond-normalised eigenvalue and
/// remove them cumulatively (never emptying a bond), re-evaluating test
/// accuracy, mean loss, and the unembedding norm at each kept step.
///
/// `stride` thins the emitted rows (a row is always emitted at zero
/// removals and at the final step).
pub fn truncation_sweep(
    onet: &OrthNet,
    spectrum: &BondSpectrum,
    test: &Dataset,
    stride: usize,
) -> Result<Vec<SweepRow>> {
    let stride = stride.max(1);
    let dims = onet.bond_dims();
    let total: usize = dims.iter().sum();

    // (normalised eigenvalue, bond index) over all removable dimensions;
    // within a bond only the tail may go, which the ascending global order
    // respects because per-bond eigenvalues are sorted descending.
    let mut removable: Vec<(f64, usize)> = Vec::new();
    for (b, s) in spectrum.spectra.iter().enumerate() {
        let lam_max = s.eigenvalues.first().copied().unwrap_or(0.0).max(1e-300);
        for &l in s.eigenvalues.iter().skip(1) {
            removable.push((l.max(0.0) / lam_max, b));
        }
    }
    removable.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap_or(std::cmp::Ordering::Equal));

    // collect the kept-rank plans first, then evaluate rows in parallel
    // (read-only, ordered collect keeps the output deterministic)
    let mut keep = dims.clone();
    let mut steps: Vec<(usize, Vec<usize>)> = vec![(0, keep.clone())];
    for (i, &(_, bond)) in removable.iter().enumerate() {
        keep[bond] -= 1;
        debug_assert!(keep[bond] >= 1);
        let removed = i + 1;
        if removed % stride == 0 || removed == removable.len() {
            steps.push((removed, keep.clone()));
        }
    }

    use rayon::prelude::*;
    steps
        .par_iter()
        .map(|(removed, ranks)| {
            let plan = TruncationPlan {
                ranks: ranks.clone(),
                epsilon: None,
            };
            let dnet = truncate(onet, spectrum, &plan)?;
            let logits = dnet.net.forward_batch(&test.images)?;
            let (loss, _) = batch_xent(&logits, &test.labels);
            Ok(SweepRow {
                removed: *removed,
                removed_frac: *removed as f64 / total as f64,
                accuracy: accuracy(&logits, &test.labels),
                loss,
                frobenius: dnet.net.unembedding.frobenius(),
            })
        })
        .collect::<Result<Vec<_>>>()
}

/// Singular values of each matricised core, embedding first, normalised by
/// the largest. Entry `i` lives on bond `i+1`, so the list is directly
/// comparable with the bond spectra.
pub fn local_svd(net: &ChiNet) -> Result<Vec<Vec<f64>>> {
    let mut out = Vec::with_capacity(net.depth() + 1);
    out.push(singular_values(&net.embedding)?);
    for core in &net.cores {
        let m = match core {
            LayerCore::Dense(c) => c.matricised(),
            LayerCore::Factored(f) => f.to_dense().matricised(),
        };
        out.push(singular_values(&m)?);
    }
    Ok(out
        .into_iter()
        .map(|mut s| {
            let max = s.first().copied().unwrap_or(0.0);
            if max > 0.0 {
                for v in &mut s {
                    *v /= max;
                }
            }
            s
        })
        .collect())
}

/// Singular values via the small-side Gram: `σ = √λ(M·Mᵀ)`.
fn singular_values(m: &Matrix) -> Result<Vec<f64>> {
    let g = if m.rows() <= m.cols() {
        m.dot_nt(m)
    } else {
        m.dot_tn(m)
    };
    let s = sym_evd(&g)?;
    Ok(s.eigenvalues.iter().map(|&l| l.max(0.0).sqrt()).collect())
}
