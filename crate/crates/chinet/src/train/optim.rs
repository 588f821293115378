//! AdamW with decoupled weight decay, and the cosine learning-rate schedule.

/// Adam moment hyperparameters.
#[derive(Debug, Clone, Copy)]
pub struct AdamParams {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        AdamParams {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First/second moment buffers for one parameter tensor.
#[derive(Debug, Clone)]
pub struct Moments {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Moments {
    pub fn new(len: usize) -> Self {
        Moments {
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }
}

/// One AdamW step: decoupled decay `p ← p − lr·wd·p` (computed on the
/// pre-update parameter), then the bias-corrected Adam update.
pub fn adamw_step(
    params: &mut [f64],
    grads: &[f64],
    moments: &mut Moments,
    cfg: &AdamParams,
    lr: f64,
    weight_decay: f64,
) {
    assert_eq!(params.len(), grads.len());
    assert_eq!(params.len(), moments.m.len());
    moments.t += 1;
    let t = moments.t as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    for i in 0..params.len() {
        let g = grads[i];
        moments.m[i] = cfg.beta1 * moments.m[i] + (1.0 - cfg.beta1) * g;
        moments.v[i] = cfg.beta2 * moments.v[i] + (1.0 - cfg.beta2) * g * g;
        let m_hat = moments.m[i] / bc1;
        let v_hat = moments.v[i] / bc2;
        let decay = lr * weight_decay * params[i];
        params[i] -= decay + lr * m_hat / (v_hat.sqrt() + cfg.eps);
    }
}

/// `lr = base · ½(1 + cos(π·step/total))`
pub fn cosine_lr(step: usize, total_steps: usize, base_lr: f64) -> f64 {
    assert!(step <= total_steps, "step beyond the schedule");
    if total_steps == 0 {
        return base_lr;
    }
    let frac = step as f64 / total_steps as f64;
    base_lr * 0.5 * (1.0 + (std::f64::consts::PI * frac).cos())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_grad_zero_decay_is_identity() {
        let mut p = vec![0.5, -1.2, 3.0];
        let g = vec![0.0; 3];
        let mut m = Moments::new(3);
        adamw_step(&mut p, &g, &mut m, &AdamParams::default(), 1e-3, 0.0);
        assert_eq!(p, vec![0.5, -1.2, 3.0]);
    }

    #[test]
    fn decay_scales_by_one_minus_lr_wd() {
        let mut p = vec![2.0, -4.0];
        let g = vec![0.0; 2];
        let mut m = Moments::new(2);
        adamw_step(&mut p, &g, &mut m, &AdamParams::default(), 1e-3, 1.0);
        assert!((p[0] - 2.0 * 0.999).abs() < 1e-15);
        assert!((p[1] + 4.0 * 0.999).abs() < 1e-15);
    }

    #[test]
    fn constant_gradient_approaches_sign_step() {
        // with a constant gradient the bias-corrected update tends to
        // −lr · g/|g| (v̂ → g², m̂ → g)
        let mut p = vec![0.0];
        let g = vec![0.35];
        let mut m = Moments::new(1);
        let cfg = AdamParams::default();
        let lr = 1e-3;
        let mut last = p[0];
        for _ in 0..500 {
            last = p[0];
            adamw_step(&mut p, &g, &mut m, &cfg, lr, 0.0);
        }
        let step = last - p[0];
        assert!((step - lr).abs() < 1e-5, "step {step} should approach lr");
    }

    #[test]
    fn cosine_endpoints() {
        assert_eq!(cosine_lr(0, 100, 0.01), 0.01);
        assert!(cosine_lr(100, 100, 0.01).abs() < 1e-18);
        assert!((cosine_lr(50, 100, 0.01) - 0.005).abs() < 1e-12);
    }
}
