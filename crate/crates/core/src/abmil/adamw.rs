//! AdamW with decoupled weight decay.

use serde::{Deserialize, Serialize};

use super::AbmilParams;

/// How the decay term is scaled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WeightDecayMode {
    /// `θ ← θ·(1 − lr·wd)`, as in the reference deep-learning frameworks.
    #[default]
    LrScaled,
    /// `θ ← θ·(1 − wd)`, independent of the learning rate.
    Independent,
}

#[derive(Debug, Clone)]
pub struct AdamW {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub mode: WeightDecayMode,
    step: i32,
    m: AbmilParams,
    v: AbmilParams,
}

impl AdamW {
    pub fn new(shape: &AbmilParams, lr: f64, betas: (f64, f64), eps: f64, weight_decay: f64, mode: WeightDecayMode) -> Self {
        let zeros = AbmilParams::zeros(shape.w1.ncols(), shape.w1.nrows(), shape.v.nrows(), shape.wo.nrows());
        Self { lr, beta1: betas.0, beta2: betas.1, eps, weight_decay, mode, step: 0, m: zeros.clone(), v: zeros }
    }

    pub fn steps(&self) -> i32 {
        self.step
    }

    pub fn step(&mut self, params: &mut AbmilParams, grad: &AbmilParams) {
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step);
        let c2 = 1.0 - self.beta2.powi(self.step);
        let decay = match self.mode {
            WeightDecayMode::LrScaled => 1.0 - self.lr * self.weight_decay,
            WeightDecayMode::Independent => 1.0 - self.weight_decay,
        };
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.lr, self.eps);
        let tensors = params.tensors_mut().into_iter().zip(grad.tensors()).zip(self.m.tensors_mut()).zip(self.v.tensors_mut());
        for (((p, g), m), v) in tensors {
            for i in 0..p.len() {
                p[i] *= decay;
                m[i] = b1 * m[i] + (1.0 - b1) * g[i];
                v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
                p[i] -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + eps);
            }
        }
    }
}
