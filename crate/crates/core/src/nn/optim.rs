//! AdamW with decoupled weight decay.

use crate::nn::ParamBlock;

#[derive(Debug, Clone)]
pub struct AdamW {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl AdamW {
    pub fn new(n_params: usize, lr: f64, weight_decay: f64) -> Self {
        Self::with_betas(n_params, lr, weight_decay, (0.9, 0.999))
    }

    pub fn with_betas(n_params: usize, lr: f64, weight_decay: f64, betas: (f64, f64)) -> Self {
        assert!(lr > 0.0, "learning rate must be positive");
        AdamW {
            lr,
            weight_decay,
            beta1: betas.0,
            beta2: betas.1,
            eps: 1e-8,
            step: 0,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One decoupled update from `params.grads`:
    /// `theta <- theta - lr * mhat/(sqrt(vhat)+eps) - lr * wd * theta`.
    pub fn step(&mut self, params: &mut ParamBlock) {
        assert_eq!(params.len(), self.m.len(), "optimizer/param size mismatch");
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for i in 0..params.len() {
            let g = params.grads[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let mhat = self.m[i] / bc1;
            let vhat = self.v[i] / bc2;
            params.values[i] -=
                self.lr * (mhat / (vhat.sqrt() + self.eps) + self.weight_decay * params.values[i]);
        }
    }
}

/// Spec-shaped free function: one AdamW step with explicit hyperparameters.
/// `step` is the 1-based step count used for bias correction; moment buffers
/// are carried by the optimizer, so this constructs a fresh one at the given
/// step only for single-shot use.
pub fn adamw_step(
    params: &mut ParamBlock,
    opt: &mut AdamW,
    lr: f64,
    weight_decay: f64,
) {
    opt.lr = lr;
    opt.weight_decay = weight_decay;
    opt.step(params);
}
