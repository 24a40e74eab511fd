//! Adam and the multi-step learning-rate schedule.

use crate::tensor::Tensor;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.99;
pub const ADAM_EPS: f64 = 1e-8;

#[derive(Debug)]
struct Slot {
    param: Tensor,
    lr_scale: f64,
    m: Vec<f64>,
    v: Vec<f64>,
}

/// Bias-corrected Adam over a fixed parameter list.
#[derive(Debug)]
pub struct Adam {
    slots: Vec<Slot>,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Number of steps taken.
    pub t: u64,
}

impl Adam {
    pub fn new(params: impl IntoIterator<Item = Tensor>) -> Self {
        Self::with_lr_scales(params.into_iter().map(|p| (p, 1.0)))
    }

    /// Each parameter is updated with `lr · scale`.
    pub fn with_lr_scales(params: impl IntoIterator<Item = (Tensor, f64)>) -> Self {
        Self {
            slots: params
                .into_iter()
                .map(|(param, lr_scale)| {
                    let n = param.numel();
                    Slot {
                        param,
                        lr_scale,
                        m: vec![0.0; n],
                        v: vec![0.0; n],
                    }
                })
                .collect(),
            beta1: ADAM_BETA1,
            beta2: ADAM_BETA2,
            eps: ADAM_EPS,
            t: 0,
        }
    }

    /// Applies one update from the accumulated gradients; a missing gradient
    /// counts as zero. Gradients are left in place.
    pub fn step(&mut self, lr: f64) {
        self.t += 1;
        let t = self.t as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for slot in &mut self.slots {
            let lr = lr * slot.lr_scale;
            let grad = slot.param.grad_ref();
            let mut data = slot.param.data_mut();
            for i in 0..data.len() {
                let g = grad.as_ref().map_or(0.0, |g| g[i]);
                slot.m[i] = self.beta1 * slot.m[i] + (1.0 - self.beta1) * g;
                slot.v[i] = self.beta2 * slot.v[i] + (1.0 - self.beta2) * g * g;
                let m_hat = slot.m[i] / bc1;
                let v_hat = slot.v[i] / bc2;
                data[i] -= lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
    }

    pub fn zero_grad(&self) {
        self.slots.iter().for_each(|s| s.param.zero_grad());
    }
}

/// `initial · decay^(#milestones ≤ iteration)`.
pub fn multistep_lr(iteration: usize, initial: f64, milestones: &[usize], decay: f64) -> f64 {
    let passed = milestones.iter().filter(|&&m| m <= iteration).count();
    initial * decay.powi(passed as i32)
}
