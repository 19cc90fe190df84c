use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::NetworkParams;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

/// How the configured decay rate is applied.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecayMode {
    /// `lr_t = lr0 / (1 + decay · t)`.
    #[default]
    Schedule,
    /// Constant `lr0`; `decay · θ` is added to every gradient.
    WeightDecay,
}

/// Learning rate after `step` completed updates.
pub fn learning_rate(lr0: f64, decay: f64, step: u64) -> f64 {
    lr0 / (1.0 + decay * step as f64)
}

/// First and second moments for every parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub step: u64,
}

impl AdamState {
    pub fn new(net: &NetworkParams) -> Self {
        let zeros: Vec<Vec<f64>> = net.params.iter().map(|p| vec![0.0; p.tensor.numel()]).collect();
        Self { m: zeros.clone(), v: zeros, step: 0 }
    }

    /// One bias-corrected Adam update. `grads[i]` belongs to
    /// `net.params[i]`; nothing changes if any gradient is not finite.
    pub fn update(&mut self, net: &mut NetworkParams, grads: &[&[f64]], lr: f64, weight_decay: f64) -> Result<()> {
        if grads.len() != net.params.len() {
            return Err(Error::Dimension { axis: "gradient tensors", expected: net.params.len(), actual: grads.len() });
        }
        for (p, g) in net.params.iter().zip(grads) {
            if g.len() != p.tensor.numel() {
                return Err(Error::Dimension { axis: "gradient length", expected: p.tensor.numel(), actual: g.len() });
            }
            if let Some(i) = g.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFiniteGradient(format!("{}[{i}] = {}", p.name, g[i])));
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - BETA1.powi(t);
        let c2 = 1.0 - BETA2.powi(t);
        for (i, (p, g)) in net.params.iter_mut().zip(grads).enumerate() {
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for (j, theta) in p.tensor.data_mut().iter_mut().enumerate() {
                let grad = g[j] + weight_decay * *theta;
                m[j] = BETA1 * m[j] + (1.0 - BETA1) * grad;
                v[j] = BETA2 * v[j] + (1.0 - BETA2) * grad * grad;
                let m_hat = m[j] / c1;
                let v_hat = v[j] / c2;
                *theta -= lr * m_hat / (v_hat.sqrt() + EPSILON);
            }
        }
        Ok(())
    }
}
