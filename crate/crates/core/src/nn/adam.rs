use serde::{Deserialize, Serialize};

use super::mlp::{Gradients, Mlp};
use crate::error::{Error, Result};

/// Step-decayed learning rate: `base · decay^⌊step / every⌋`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub base: f64,
    pub decay: f64,
    pub every: u64,
}

impl Default for LrSchedule {
    fn default() -> Self {
        LrSchedule { base: 1e-3, decay: 0.98, every: 100 }
    }
}

impl LrSchedule {
    pub fn rate(&self, step: u64) -> f64 {
        let every = self.every.max(1);
        self.base * self.decay.powi((step / every) as i32)
    }
}

/// Adam moments for one network.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
    step: u64,
    pub schedule: LrSchedule,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(net: &Mlp, schedule: LrSchedule) -> Self {
        let zeros: Vec<Vec<f64>> = net.params().map(|p| vec![0.0; p.len()]).collect();
        AdamState {
            first: zeros.clone(),
            second: zeros,
            step: 0,
            schedule,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Rate the next update will use.
    pub fn current_rate(&self) -> f64 {
        self.schedule.rate(self.step)
    }

    /// One bias-corrected Adam update. Non-finite gradients leave the
    /// parameters untouched and return an error.
    pub fn step(&mut self, net: &mut Mlp, grads: &Gradients) -> Result<()> {
        if !grads.is_finite() {
            return Err(Error::NonFinite(format!("gradients at optimizer step {}", self.step)));
        }
        let shapes_match = net.params().zip(grads.tensors()).all(|(p, g)| p.len() == g.len())
            && net.params().count() == grads.tensors().count()
            && self.first.len() == grads.tensors().count();
        if !shapes_match {
            return Err(Error::InvalidNetwork("optimizer state, gradients and parameters differ in shape".into()));
        }
        let lr = self.current_rate();
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
        for (((p, g), m), v) in net.params_mut().zip(grads.tensors()).zip(&mut self.first).zip(&mut self.second) {
            for i in 0..p.len() {
                m[i] = b1 * m[i] + (1.0 - b1) * g[i];
                v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                p[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
