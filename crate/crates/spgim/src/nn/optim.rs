//! Optimizers and learning-rate schedules. Parameter iteration follows the
//! store's sorted order, so updates are reproducible.

use std::collections::BTreeMap;

use ndarray::ArrayD;

use crate::tensor::Gradients;

use super::ParamStore;

pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: BTreeMap<String, ArrayD<f64>>,
    v: BTreeMap<String, ArrayD<f64>>,
}

impl Adam {
    pub fn new() -> Self {
        Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
        }
    }

    pub fn step(&mut self, ps: &mut ParamStore, grads: &Gradients, lr: f64) {
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for (name, param) in ps.iter_mut() {
            let Some(grad) = grads.by_name(name) else {
                continue;
            };
            let m = self
                .m
                .entry(name.clone())
                .or_insert_with(|| ArrayD::zeros(param.raw_dim()));
            let v = self
                .v
                .entry(name.clone())
                .or_insert_with(|| ArrayD::zeros(param.raw_dim()));
            for ((pv, gv), (mv, vv)) in param
                .iter_mut()
                .zip(grad.iter())
                .zip(m.iter_mut().zip(v.iter_mut()))
            {
                *mv = self.beta1 * *mv + (1.0 - self.beta1) * gv;
                *vv = self.beta2 * *vv + (1.0 - self.beta2) * gv * gv;
                let mhat = *mv / bc1;
                let vhat = *vv / bc2;
                *pv -= lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
    }
}

impl Default for Adam {
    fn default() -> Self {
        Self::new()
    }
}

/// SGD with classic momentum and L2 weight decay. The learning rate is
/// resolved per parameter name, allowing per-submodule maximums.
pub struct SgdMomentum {
    pub momentum: f64,
    pub weight_decay: f64,
    velocity: BTreeMap<String, ArrayD<f64>>,
}

impl SgdMomentum {
    pub fn new(momentum: f64, weight_decay: f64) -> Self {
        SgdMomentum {
            momentum,
            weight_decay,
            velocity: BTreeMap::new(),
        }
    }

    pub fn step(
        &mut self,
        ps: &mut ParamStore,
        grads: &Gradients,
        lr_for: impl Fn(&str) -> f64,
    ) {
        for (name, param) in ps.iter_mut() {
            let Some(grad) = grads.by_name(name) else {
                continue;
            };
            let lr = lr_for(name);
            let vel = self
                .velocity
                .entry(name.clone())
                .or_insert_with(|| ArrayD::zeros(param.raw_dim()));
            for ((pv, gv), vv) in param.iter_mut().zip(grad.iter()).zip(vel.iter_mut()) {
                let g = gv + self.weight_decay * *pv;
                *vv = self.momentum * *vv + g;
                *pv -= lr * *vv;
            }
        }
    }
}

/// Linear warmup to `max_lr`, then cosine decay to zero over the remaining
/// steps. At step 0 the rate is strictly below the maximum; at the final
/// step it reaches zero.
pub fn warmup_cosine_lr(step: u64, total_steps: u64, warmup_steps: u64, max_lr: f64) -> f64 {
    assert!(warmup_steps > 0, "schedule requires warmup_steps > 0");
    assert!(total_steps > warmup_steps);
    if step < warmup_steps {
        return max_lr * (step + 1) as f64 / warmup_steps as f64;
    }
    let progress = (step + 1 - warmup_steps) as f64 / (total_steps - warmup_steps) as f64;
    max_lr * 0.5 * (1.0 + (std::f64::consts::PI * progress.min(1.0)).cos())
}
