use serde::{Deserialize, Serialize};

use crate::error::{AdResult, AutodiffError};
use crate::params::ParamStore;
use crate::tape::Gradients;

/// Adam with a stepwise learning-rate decay applied at epoch boundaries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub initial_lr: f64,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub decay_factor: f64,
    pub decay_every: usize,
    pub step_count: u64,
    first_moment: Vec<Vec<f64>>,
    second_moment: Vec<Vec<f64>>,
}

impl Default for Adam {
    fn default() -> Self {
        Self::new(0.001).expect("valid default")
    }
}

impl Adam {
    pub fn new(learning_rate: f64) -> AdResult<Self> {
        if !(learning_rate.is_finite() && learning_rate > 0.0) {
            return Err(AutodiffError::Optimizer(format!(
                "learning rate must be positive, got {learning_rate}"
            )));
        }
        Ok(Self {
            initial_lr: learning_rate,
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            decay_factor: 0.95,
            decay_every: 10,
            step_count: 0,
            first_moment: Vec::new(),
            second_moment: Vec::new(),
        })
    }

    /// Multiplies the learning rate by the decay factor when `epoch` is a
    /// positive multiple of `decay_every`.
    pub fn epoch_schedule(&mut self, epoch: usize) {
        if epoch > 0 && self.decay_every > 0 && epoch % self.decay_every == 0 {
            self.learning_rate *= self.decay_factor;
        }
    }

    /// Learning rate in effect during `epoch` when the schedule is called at
    /// the start of every epoch from 0.
    pub fn lr_for_epoch(&self, epoch: usize) -> f64 {
        let decays = if self.decay_every == 0 { 0 } else { epoch / self.decay_every };
        self.initial_lr * self.decay_factor.powi(decays as i32)
    }

    /// One Adam update of every trainable parameter. A parameter without a
    /// gradient is treated as having a zero gradient. Any non-finite gradient
    /// rejects the whole update and leaves parameters and moments untouched.
    pub fn step(&mut self, store: &mut ParamStore, grads: &Gradients) -> AdResult<()> {
        for (id, p) in store.iter() {
            if let Some(g) = grads.param(id) {
                if g.numel() != p.value.numel() {
                    return Err(AutodiffError::Shape(format!(
                        "gradient of `{}` has {} entries, parameter has {}",
                        p.name,
                        g.numel(),
                        p.value.numel()
                    )));
                }
                if p.requires_grad && !g.is_finite() {
                    return Err(AutodiffError::NonFiniteGradient(p.name.clone()));
                }
            }
        }
        if self.first_moment.len() != store.len() {
            self.first_moment = store.iter().map(|(_, p)| vec![0.0; p.value.numel()]).collect();
            self.second_moment = self.first_moment.clone();
        }
        self.step_count += 1;
        let t = self.step_count as i32;
        let bias1 = 1.0 - self.beta1.powi(t);
        let bias2 = 1.0 - self.beta2.powi(t);
        let ids: Vec<_> = store.ids().collect();
        for id in ids {
            if !store.get(id).requires_grad {
                continue;
            }
            let i = id.index();
            let g = grads.param(id).map(|g| g.data());
            let m = &mut self.first_moment[i];
            let v = &mut self.second_moment[i];
            let values = store.value_mut(id).data_mut();
            for k in 0..values.len() {
                let gk = g.map_or(0.0, |g| g[k]);
                m[k] = self.beta1 * m[k] + (1.0 - self.beta1) * gk;
                v[k] = self.beta2 * v[k] + (1.0 - self.beta2) * gk * gk;
                let m_hat = m[k] / bias1;
                let v_hat = v[k] / bias2;
                values[k] -= self.learning_rate * m_hat / (v_hat.sqrt() + self.epsilon);
            }
        }
        Ok(())
    }
}
