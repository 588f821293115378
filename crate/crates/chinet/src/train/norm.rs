//! Batch normalisation that only divides by the batch-average L2 norm
//! (per-layer scalar), and its post-training fold into neighbouring weights.

use crate::linalg::Matrix;
use crate::model::{ChiNet, LayerCore};

/// Running scalar statistic for one normalised layer.
#[derive(Debug, Clone)]
pub struct NormState {
    running: f64,
    momentum: f64,
    initialised: bool,
}

impl NormState {
    pub fn new(momentum: f64) -> Self {
        NormState {
            running: 1.0,
            momentum,
            initialised: false,
        }
    }

    pub fn with_running(running: f64) -> Self {
        NormState {
            running,
            momentum: 0.9,
            initialised: true,
        }
    }

    pub fn running(&self) -> f64 {
        self.running
    }

    pub fn update(&mut self, batch_stat: f64) {
        if self.initialised {
            self.running = self.momentum * self.running + (1.0 - self.momentum) * batch_stat;
        } else {
            self.running = batch_stat;
            self.initialised = true;
        }
    }
}

/// Batch statistic: mean over the batch of `‖row‖₂ / √h`.
pub fn batch_rms(acts: &Matrix) -> f64 {
    if acts.rows() == 0 {
        return 0.0;
    }
    let h = acts.cols() as f64;
    let mut acc = 0.0;
    for r in 0..acts.rows() {
        let row = acts.row(r);
        let norm: f64 = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        acc += norm / h.sqrt();
    }
    acc / acts.rows() as f64
}

/// Divide activations by the batch statistic (training) or the running
/// average (eval). Statistics below `1e-12` pass the batch through untouched.
pub fn rms_norm_apply(acts: &Matrix, state: &mut NormState, training: bool) -> Matrix {
    let s = if training {
        let sb = batch_rms(acts);
        if sb < 1e-12 {
            return acts.clone();
        }
        state.update(sb);
        sb
    } else {
        let r = state.running();
        if r < 1e-12 {
            return acts.clone();
        }
        r
    };
    acts.scaled(1.0 / s)
}

/// Contract each layer's running scalar into the downstream weights so that
/// the plain forward of the folded net equals the normalised eval forward.
/// A scalar after core `i` divides that core's output: for a downstream
/// bilinear core both factor matrices absorb `1/s` (the square arrives via
/// the cloning operator); the last scalar folds linearly into the
/// unembedding.
pub fn fold_norm(net: &ChiNet, states: &[NormState]) -> ChiNet {
    assert_eq!(states.len(), net.depth(), "one norm state per core");
    let depth = net.depth();
    let mut cores: Vec<LayerCore> = net.cores.clone();
    let mut unembedding = net.unembedding.clone();
    for (k, state) in states.iter().enumerate() {
        let s = state.running();
        if s < 1e-12 {
            continue;
        }
        if k + 1 < depth {
            cores[k + 1] = scale_core_input(&cores[k + 1], 1.0 / s);
        } else {
            unembedding.scale(1.0 / s);
        }
    }
    ChiNet {
        embedding: net.embedding.clone(),
        cores,
        unembedding,
    }
}

fn scale_core_input(core: &LayerCore, inv_s: f64) -> LayerCore {
    match core {
        LayerCore::Factored(f) => {
            let mut a = f.a.clone();
            let mut b = f.b.clone();
            a.scale(inv_s);
            b.scale(inv_s);
            LayerCore::Factored(crate::model::FactoredCore { a, b })
        }
        LayerCore::Dense(c) => {
            // input scaled by 1/s enters both legs: dense entries pick up 1/s²
            let m = c.matricised().scaled(inv_s * inv_s);
            let mut out = crate::linalg::Core3::from_matricised(m, c.in_dim()).expect("shape");
            if c.is_symmetric_flagged() {
                out.symmetrise();
            }
            LayerCore::Dense(out)
        }
    }
}

/// Eval-mode forward with normalisation applied after each core.
pub fn forward_with_norm(net: &ChiNet, states: &[NormState], x: &Matrix) -> Matrix {
    assert_eq!(states.len(), net.depth());
    let n = x.rows();
    let mut aug = Matrix::zeros(n, x.cols() + 1);
    for r in 0..n {
        aug.set(r, 0, 1.0);
        aug.row_mut(r)[1..].copy_from_slice(x.row(r));
    }
    let mut cur = aug.dot_nt(&net.embedding);
    for (core, state) in net.cores.iter().zip(states.iter()) {
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
                    y.row_mut(r).copy_from_slice(&c.apply_bilinear(cur.row(r)));
                }
                y
            }
        };
        let mut st = state.clone();
        cur = rms_norm_apply(&cur, &mut st, false);
    }
    cur.dot_nt(&net.unembedding)
}
