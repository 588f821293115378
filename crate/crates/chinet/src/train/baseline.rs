//! ReLU multilayer perceptron trained with the same pipeline, used only for
//! the accuracy-parity table. Depth 0 degenerates to a purely linear model.

use crate::error::{ChiError, Result};
use crate::linalg::Matrix;
use crate::train::dataset::{add_noise, Dataset};
use crate::train::loss::{accuracy, batch_xent};
use crate::train::norm::{batch_rms, NormState};
use crate::train::optim::{adamw_step, cosine_lr, Moments};
use crate::train::{EpochMetric, TrainConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

/// Embedding, `depth` hidden linear+ReLU layers, unembedding — the same
/// widths and normalisation as the bilinear net it is compared against.
#[derive(Debug, Clone)]
pub struct MlpNet {
    pub embedding: Matrix,
    pub hidden: Vec<Matrix>,
    pub unembedding: Matrix,
}

impl MlpNet {
    pub fn random(d_in: usize, bond_dims: &[usize], n_classes: usize, rng: &mut impl Rng) -> Self {
        let mut uniform = |rows: usize, cols: usize| {
            let bound = (1.0 / cols as f64).sqrt();
            Matrix::from_fn(rows, cols, |_, _| rng.gen_range(-bound..bound))
        };
        if bond_dims.is_empty() {
            // purely linear model: unembedding acts directly on the augmented input
            return MlpNet {
                embedding: uniform(n_classes, d_in + 1),
                hidden: vec![],
                unembedding: Matrix::identity(n_classes),
            };
        }
        let embedding = uniform(bond_dims[0], d_in + 1);
        let hidden = bond_dims
            .windows(2)
            .map(|w| uniform(w[1], w[0]))
            .collect();
        let unembedding = uniform(n_classes, *bond_dims.last().unwrap());
        MlpNet {
            embedding,
            hidden,
            unembedding,
        }
    }

    pub fn depth(&self) -> usize {
        self.hidden.len()
    }

    fn forward_full(
        &self,
        x: &Matrix,
        states: Option<&mut [NormState]>,
        training: bool,
    ) -> (Vec<Matrix>, Vec<Matrix>, Vec<f64>, Matrix) {
        let n = x.rows();
        let mut aug = Matrix::zeros(n, x.cols() + 1);
        for r in 0..n {
            aug.set(r, 0, 1.0);
            aug.row_mut(r)[1..].copy_from_slice(x.row(r));
        }
        let mut acts = vec![aug.dot_nt(&self.embedding)];
        let mut pre_relu = Vec::new();
        let mut scales = Vec::new();
        let mut states = states;
        for (i, w) in self.hidden.iter().enumerate() {
            let z = acts[i].dot_nt(w);
            pre_relu.push(z.clone());
            let mut y = z;
            for v in y.data_mut() {
                if *v < 0.0 {
                    *v = 0.0;
                }
            }
            let s = match states.as_deref_mut() {
                Some(sts) => {
                    if training {
                        let sb = batch_rms(&y);
                        if sb >= 1e-12 {
                            sts[i].update(sb);
                            sb
                        } else {
                            1.0
                        }
                    } else {
                        let r = sts[i].running();
                        if r >= 1e-12 {
                            r
                        } else {
                            1.0
                        }
                    }
                }
                None => 1.0,
            };
            if s != 1.0 {
                y.scale(1.0 / s);
            }
            scales.push(s);
            acts.push(y);
        }
        let logits = acts.last().unwrap().dot_nt(&self.unembedding);
        (acts, pre_relu, scales, logits)
    }

    pub fn forward_batch(&self, x: &Matrix, states: &[NormState]) -> Matrix {
        let mut sts = states.to_vec();
        let opt = if sts.is_empty() { None } else { Some(sts.as_mut_slice()) };
        self.forward_full(x, opt, false).3
    }

    /// The augmented-input part is folded in, so this needs raw inputs only.
    pub fn evaluate(&self, ds: &Dataset, states: &[NormState]) -> (f64, f64) {
        let logits = self.forward_batch(&ds.images, states);
        let (l, _) = batch_xent(&logits, &ds.labels);
        (accuracy(&logits, &ds.labels), l)
    }
}

/// Train the baseline with the identical config surface. Returns the model,
/// its norm states, and the per-epoch metric log.
pub fn train_relu_baseline(
    d_in: usize,
    bond_dims: &[usize],
    train_ds: &Dataset,
    test_ds: &Dataset,
    cfg: &TrainConfig,
) -> Result<(MlpNet, Vec<NormState>, Vec<EpochMetric>)> {
    cfg.validate()?;
    if train_ds.is_empty() {
        return Err(ChiError::Format("training dataset is empty".into()));
    }
    let n_classes = train_ds.n_classes.max(test_ds.n_classes);
    let mut init_rng = ChaCha20Rng::seed_from_u64(cfg.seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut net = MlpNet::random(d_in, bond_dims, n_classes, &mut init_rng);
    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);
    let depth = net.depth();
    let mut states: Vec<NormState> = (0..depth).map(|_| NormState::new(cfg.norm_momentum)).collect();

    let adam = cfg.adam();
    let mut mom_e = Moments::new(net.embedding.data().len());
    let mut mom_u = Moments::new(net.unembedding.data().len());
    let mut mom_h: Vec<Moments> = net.hidden.iter().map(|w| Moments::new(w.data().len())).collect();

    let n = train_ds.len();
    let steps_per_epoch = n.div_ceil(cfg.batch_size);
    let total_steps = (cfg.epochs * steps_per_epoch).max(1);
    let sigma = cfg.pixel_sigma(train_ds.input_dim());

    let mut indices: Vec<usize> = (0..n).collect();
    let mut metrics = Vec::with_capacity(cfg.epochs);
    let mut step = 0usize;

    for epoch in 0..cfg.epochs {
        for i in (1..indices.len()).rev() {
            let j = rng.gen_range(0..=i);
            indices.swap(i, j);
        }
        let mut loss_sum = 0.0;
        let mut seen = 0usize;
        for chunk in indices.chunks(cfg.batch_size) {
            let lr = cosine_lr(step, total_steps, cfg.learning_rate);
            let d = train_ds.input_dim();
            let mut x = Matrix::zeros(chunk.len(), d);
            let mut labels = Vec::with_capacity(chunk.len());
            for (r, &i) in chunk.iter().enumerate() {
                x.row_mut(r).copy_from_slice(train_ds.images.row(i));
                labels.push(train_ds.labels[i]);
            }
            add_noise(&mut x, sigma, &mut rng);

            let state_opt = if cfg.normalise && depth > 0 {
                Some(states.as_mut_slice())
            } else {
                None
            };
            let (acts, pre_relu, scales, logits) = net.forward_full(&x, state_opt, true);
            let (loss, dlogits) = batch_xent(&logits, &labels);
            loss_sum += loss * chunk.len() as f64;
            seen += chunk.len();

            // backward
            let d_u = dlogits.dot_tn(acts.last().unwrap());
            let mut dx = dlogits.dot(&net.unembedding);
            let mut d_hidden: Vec<Matrix> = Vec::with_capacity(depth);
            for i in (0..depth).rev() {
                if scales[i] != 1.0 {
                    dx.scale(1.0 / scales[i]);
                }
                // relu mask from the pre-activation
                for (g, z) in dx.data_mut().iter_mut().zip(pre_relu[i].data().iter()) {
                    if *z <= 0.0 {
                        *g = 0.0;
                    }
                }
                d_hidden.push(dx.dot_tn(&acts[i]));
                dx = dx.dot(&net.hidden[i]);
            }
            d_hidden.reverse();
            let mut aug = Matrix::zeros(chunk.len(), d + 1);
            for r in 0..chunk.len() {
                aug.set(r, 0, 1.0);
                aug.row_mut(r)[1..].copy_from_slice(x.row(r));
            }
            let d_e = dx.dot_tn(&aug);

            adamw_step(net.embedding.data_mut(), d_e.data(), &mut mom_e, &adam, lr, cfg.weight_decay);
            for i in 0..depth {
                adamw_step(
                    net.hidden[i].data_mut(),
                    d_hidden[i].data(),
                    &mut mom_h[i],
                    &adam,
                    lr,
                    cfg.weight_decay,
                );
            }
            adamw_step(net.unembedding.data_mut(), d_u.data(), &mut mom_u, &adam, lr, cfg.weight_decay);
            step += 1;
        }
        let (test_acc, _) = net.evaluate(test_ds, &states);
        metrics.push(EpochMetric {
            epoch,
            train_loss: loss_sum / seen.max(1) as f64,
            test_acc,
            lr: cosine_lr(step.min(total_steps), total_steps, cfg.learning_rate),
        });
    }
    Ok((net, states, metrics))
}
