//! Dataset ingestion and augmentation, the training loop (AdamW, cosine
//! schedule, RMS batch normalisation), and the ReLU baseline.

mod backward;
mod baseline;
pub mod dataset;
mod loss;
mod norm;
mod optim;

pub use backward::{forward_backward, BatchResult, ChiGrads};
pub use baseline::{train_relu_baseline, MlpNet};
pub use dataset::{add_noise, blobs, load_idx, load_raw_rgb, Dataset, QuadParity, RawMeta};
pub use loss::{accuracy, batch_xent, softmax_xent};
pub use norm::{batch_rms, fold_norm, forward_with_norm, rms_norm_apply, NormState};
pub use optim::{adamw_step, cosine_lr, AdamParams, Moments};

use crate::error::{ChiError, Result};
use crate::linalg::Matrix;
use crate::model::{ChiNet, LayerCore};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

/// How the `noise_sigma` value is interpreted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseMode {
    /// per-pixel Gaussian standard deviation (default reading)
    PerPixel,
    /// expected L2 norm of the whole noise vector
    VectorNorm,
}

/// Full hyperparameter surface of a training run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub noise_sigma: f64,
    pub noise_mode: NoiseMode,
    pub beta1: f64,
    pub beta2: f64,
    pub eps_adam: f64,
    pub seed: u64,
    pub normalise: bool,
    pub norm_momentum: f64,
    pub depth: usize,
    pub hidden_dim: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            weight_decay: 1.0,
            batch_size: 2048,
            epochs: 20,
            noise_sigma: 0.3,
            noise_mode: NoiseMode::PerPixel,
            beta1: 0.9,
            beta2: 0.999,
            eps_adam: 1e-8,
            seed: 0,
            normalise: true,
            norm_momentum: 0.9,
            depth: 3,
            hidden_dim: 256,
        }
    }
}

impl TrainConfig {
    pub fn adam(&self) -> AdamParams {
        AdamParams {
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps_adam,
        }
    }

    /// Effective per-pixel noise std for a given input dimension.
    pub fn pixel_sigma(&self, d: usize) -> f64 {
        match self.noise_mode {
            NoiseMode::PerPixel => self.noise_sigma,
            NoiseMode::VectorNorm => {
                if d == 0 {
                    0.0
                } else {
                    self.noise_sigma / (d as f64).sqrt()
                }
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(ChiError::Config("batch_size must be positive".into()));
        }
        if self.learning_rate < 0.0 || self.weight_decay < 0.0 || self.noise_sigma < 0.0 {
            return Err(ChiError::Config(
                "learning_rate, weight_decay and noise_sigma must be non-negative".into(),
            ));
        }
        Ok(())
    }
}

/// One row of the metric log.
#[derive(Debug, Clone, Serialize)]
pub struct EpochMetric {
    pub epoch: usize,
    pub train_loss: f64,
    pub test_acc: f64,
    pub lr: f64,
}

pub struct TrainOutput {
    pub net: ChiNet,
    pub states: Vec<NormState>,
    pub metrics: Vec<EpochMetric>,
}

/// Accuracy and mean loss of a plain (already folded) network.
pub fn evaluate(net: &ChiNet, ds: &Dataset) -> Result<(f64, f64)> {
    let logits = net.forward_batch(&ds.images)?;
    let (l, _) = batch_xent(&logits, &ds.labels);
    Ok((accuracy(&logits, &ds.labels), l))
}

fn evaluate_normed(net: &ChiNet, states: &[NormState], ds: &Dataset) -> (f64, f64) {
    let logits = forward_with_norm(net, states, &ds.images);
    let (l, _) = batch_xent(&logits, &ds.labels);
    (accuracy(&logits, &ds.labels), l)
}

fn gather_batch(ds: &Dataset, idx: &[usize]) -> (Matrix, Vec<usize>) {
    let d = ds.input_dim();
    let mut x = Matrix::zeros(idx.len(), d);
    let mut labels = Vec::with_capacity(idx.len());
    for (r, &i) in idx.iter().enumerate() {
        x.row_mut(r).copy_from_slice(ds.images.row(i));
        labels.push(ds.labels[i]);
    }
    (x, labels)
}

fn shuffle(idx: &mut [usize], rng: &mut impl Rng) {
    for i in (1..idx.len()).rev() {
        let j = rng.gen_range(0..=i);
        idx.swap(i, j);
    }
}

/// Train a factored network: per step, noise → forward-with-norm → loss →
/// backward → AdamW with the cosine schedule. Deterministic given the seed.
pub fn train(
    net0: ChiNet,
    train_ds: &Dataset,
    test_ds: &Dataset,
    cfg: &TrainConfig,
) -> Result<TrainOutput> {
    cfg.validate()?;
    if train_ds.is_empty() {
        return Err(ChiError::Format("training dataset is empty".into()));
    }
    let mut net = net0;
    net.validate()?;
    let depth = net.depth();
    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);
    let mut states: Vec<NormState> = (0..depth).map(|_| NormState::new(cfg.norm_momentum)).collect();

    let adam = cfg.adam();
    let mut mom_e = Moments::new(net.embedding.data().len());
    let mut mom_u = Moments::new(net.unembedding.data().len());
    let mut mom_cores: Vec<(Moments, Moments)> = net
        .cores
        .iter()
        .map(|c| {
            let (la, lb) = match c {
                LayerCore::Factored(f) => (f.a.data().len(), f.b.data().len()),
                LayerCore::Dense(_) => (0, 0),
            };
            (Moments::new(la), Moments::new(lb))
        })
        .collect();

    let n = train_ds.len();
    let steps_per_epoch = n.div_ceil(cfg.batch_size);
    let total_steps = (cfg.epochs * steps_per_epoch).max(1);
    let sigma = cfg.pixel_sigma(train_ds.input_dim());

    let mut metrics = Vec::with_capacity(cfg.epochs);
    let mut indices: Vec<usize> = (0..n).collect();
    let mut step = 0usize;

    for epoch in 0..cfg.epochs {
        shuffle(&mut indices, &mut rng);
        let mut loss_sum = 0.0;
        let mut seen = 0usize;
        for chunk in indices.chunks(cfg.batch_size) {
            let lr = cosine_lr(step, total_steps, cfg.learning_rate);
            let (mut x, labels) = gather_batch(train_ds, chunk);
            add_noise(&mut x, sigma, &mut rng);
            let res = forward_backward(
                &net,
                &x,
                &labels,
                if cfg.normalise { Some(&mut states) } else { None },
                true,
            )?;
            loss_sum += res.loss * chunk.len() as f64;
            seen += chunk.len();

            adamw_step(
                net.embedding.data_mut(),
                res.grads.embedding.data(),
                &mut mom_e,
                &adam,
                lr,
                cfg.weight_decay,
            );
            for (i, core) in net.cores.iter_mut().enumerate() {
                if let LayerCore::Factored(f) = core {
                    adamw_step(
                        f.a.data_mut(),
                        res.grads.cores[i].0.data(),
                        &mut mom_cores[i].0,
                        &adam,
                        lr,
                        cfg.weight_decay,
                    );
                    adamw_step(
                        f.b.data_mut(),
                        res.grads.cores[i].1.data(),
                        &mut mom_cores[i].1,
                        &adam,
                        lr,
                        cfg.weight_decay,
                    );
                }
            }
            adamw_step(
                net.unembedding.data_mut(),
                res.grads.unembedding.data(),
                &mut mom_u,
                &adam,
                lr,
                cfg.weight_decay,
            );
            step += 1;
        }
        let (test_acc, _) = if cfg.normalise {
            evaluate_normed(&net, &states, test_ds)
        } else {
            evaluate(&net, test_ds)?
        };
        metrics.push(EpochMetric {
            epoch,
            train_loss: loss_sum / seen.max(1) as f64,
            test_acc,
            lr: cosine_lr(step.min(total_steps), total_steps, cfg.learning_rate),
        });
    }

    if !cfg.normalise {
        states = (0..depth).map(|_| NormState::with_running(1.0)).collect();
    }
    Ok(TrainOutput {
        net,
        states,
        metrics,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn separable_blobs_reach_high_accuracy() {
        let mut rng = ChaCha20Rng::seed_from_u64(100);
        let train_ds = blobs(400, 6, 2, 0.08, &mut rng);
        let test_ds = blobs(100, 6, 2, 0.08, &mut rng);
        let net = ChiNet::random_factored(6, &[8, 8], 2, &mut ChaCha20Rng::seed_from_u64(1));
        let cfg = TrainConfig {
            learning_rate: 0.01,
            weight_decay: 0.01,
            batch_size: 64,
            epochs: 5,
            noise_sigma: 0.0,
            seed: 3,
            depth: 1,
            hidden_dim: 8,
            ..TrainConfig::default()
        };
        let out = train(net, &train_ds, &test_ds, &cfg).unwrap();
        let (train_acc, _) = evaluate_normed(&out.net, &out.states, &train_ds);
        assert!(train_acc >= 0.99, "train accuracy {train_acc}");
    }

    #[test]
    fn zero_lr_only_decays() {
        let mut rng = ChaCha20Rng::seed_from_u64(101);
        let train_ds = blobs(64, 4, 2, 0.1, &mut rng);
        let net = ChiNet::random_factored(4, &[4], 2, &mut ChaCha20Rng::seed_from_u64(2));
        let e0 = net.embedding.clone();
        let cfg = TrainConfig {
            learning_rate: 0.0,
            weight_decay: 1.0,
            batch_size: 64,
            epochs: 1,
            noise_sigma: 0.0,
            seed: 3,
            ..TrainConfig::default()
        };
        let out = train(net, &train_ds, &train_ds, &cfg).unwrap();
        // lr = 0 means the decay term lr·wd·p is also zero: params frozen
        assert!(out.net.embedding.max_abs_diff(&e0) < 1e-15);
    }

    #[test]
    fn determinism_same_seed_same_metrics() {
        let mut rng = ChaCha20Rng::seed_from_u64(102);
        let train_ds = blobs(128, 4, 2, 0.2, &mut rng);
        let cfg = TrainConfig {
            learning_rate: 0.005,
            batch_size: 32,
            epochs: 3,
            noise_sigma: 0.1,
            seed: 11,
            ..TrainConfig::default()
        };
        let net = || ChiNet::random_factored(4, &[5, 5], 2, &mut ChaCha20Rng::seed_from_u64(4));
        let a = train(net(), &train_ds, &train_ds, &cfg).unwrap();
        let b = train(net(), &train_ds, &train_ds, &cfg).unwrap();
        for (ma, mb) in a.metrics.iter().zip(b.metrics.iter()) {
            assert_eq!(ma.train_loss.to_bits(), mb.train_loss.to_bits());
            assert_eq!(ma.test_acc.to_bits(), mb.test_acc.to_bits());
        }
        assert_eq!(a.net.embedding.data(), b.net.embedding.data());
    }

    #[test]
    fn evaluation_never_perturbs() {
        let mut rng = ChaCha20Rng::seed_from_u64(103);
        let ds = blobs(64, 4, 2, 0.2, &mut rng);
        let net = ChiNet::random_factored(4, &[4], 2, &mut ChaCha20Rng::seed_from_u64(5));
        let (a1, l1) = evaluate(&net, &ds).unwrap();
        let (a2, l2) = evaluate(&net, &ds).unwrap();
        assert_eq!(a1.to_bits(), a2.to_bits());
        assert_eq!(l1.to_bits(), l2.to_bits());
    }
}
