//! Numerically stabilised softmax cross-entropy.

use crate::linalg::Matrix;

/// Loss and gradient for one sample. The gradient is `softmax − one_hot`.
pub fn softmax_xent(logits: &[f64], label: usize) -> (f64, Vec<f64>) {
    assert!(label < logits.len(), "label out of range");
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    let log_sum = sum.ln();
    let loss = log_sum - (logits[label] - max);
    let mut grad: Vec<f64> = exps.iter().map(|e| e / sum).collect();
    grad[label] -= 1.0;
    (loss, grad)
}

/// Mean loss over a batch plus the gradient of the mean loss with respect to
/// the logits (already divided by the batch size).
pub fn batch_xent(logits: &Matrix, labels: &[usize]) -> (f64, Matrix) {
    let n = logits.rows();
    assert_eq!(n, labels.len());
    let mut total = 0.0;
    let mut grad = Matrix::zeros(n, logits.cols());
    let inv_n = 1.0 / n as f64;
    for r in 0..n {
        let (loss, g) = softmax_xent(logits.row(r), labels[r]);
        total += loss;
        for (o, v) in grad.row_mut(r).iter_mut().zip(g.iter()) {
            *o = v * inv_n;
        }
    }
    (total * inv_n, grad)
}

/// Fraction of rows whose argmax equals the label.
pub fn accuracy(logits: &Matrix, labels: &[usize]) -> f64 {
    let n = logits.rows();
    if n == 0 {
        return 0.0;
    }
    let mut correct = 0usize;
    for r in 0..n {
        let row = logits.row(r);
        let mut best = 0usize;
        for c in 1..row.len() {
            if row[c] > row[best] {
                best = c;
            }
        }
        if best == labels[r] {
            correct += 1;
        }
    }
    correct as f64 / n as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn equal_logits_give_ln_c() {
        for c in [2usize, 5, 10] {
            let logits = vec![0.7; c];
            let (loss, _) = softmax_xent(&logits, 0);
            assert!((loss - (c as f64).ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn extreme_logits_stable() {
        let (loss, grad) = softmax_xent(&[1000.0, 0.0], 0);
        assert!(loss.is_finite());
        assert!(loss.abs() < 1e-9);
        assert!(grad.iter().all(|g| g.is_finite()));
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let logits = vec![0.3, -1.2, 0.8, 0.1];
        let label = 2usize;
        let (_, grad) = softmax_xent(&logits, label);
        let h = 1e-6;
        for i in 0..logits.len() {
            let mut plus = logits.clone();
            plus[i] += h;
            let mut minus = logits.clone();
            minus[i] -= h;
            let (lp, _) = softmax_xent(&plus, label);
            let (lm, _) = softmax_xent(&minus, label);
            let fd = (lp - lm) / (2.0 * h);
            assert!(
                (fd - grad[i]).abs() <= 1e-6 * fd.abs().max(1.0),
                "component {i}: {fd} vs {}",
                grad[i]
            );
        }
    }
}
