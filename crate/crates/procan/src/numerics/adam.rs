use super::tensor::Tensor;
use crate::error::{ProcanError, Result};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// Per-parameter Adam moments, keyed by parameter name so the set can grow
/// when new blocks are added mid-training.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AdamState {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    slots: BTreeMap<String, AdamSlot>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct AdamSlot {
    m: Tensor,
    v: Tensor,
    step: u64,
}

impl Default for AdamState {
    fn default() -> Self {
        Self::new()
    }
}

impl AdamState {
    pub fn new() -> Self {
        AdamState {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            slots: BTreeMap::new(),
        }
    }

    pub fn step_of(&self, name: &str) -> u64 {
        self.slots.get(name).map_or(0, |s| s.step)
    }

    /// One bias-corrected Adam update. Weight decay enters as an added
    /// gradient term `decay * param` before the moment updates.
    pub fn update(
        &mut self,
        name: &str,
        param: &mut Tensor,
        grad: &Tensor,
        lr: f64,
        weight_decay: f64,
    ) -> Result<()> {
        if param.shape() != grad.shape() {
            return Err(ProcanError::dimension(format!(
                "adam update for '{name}': param shape {:?} vs grad shape {:?}",
                param.shape(),
                grad.shape()
            )));
        }
        if lr <= 0.0 {
            return Err(ProcanError::config(format!(
                "adam learning rate must be positive, got {lr}"
            )));
        }
        let slot = self.slots.entry(name.to_string()).or_insert_with(|| AdamSlot {
            m: Tensor::zeros(param.shape()),
            v: Tensor::zeros(param.shape()),
            step: 0,
        });
        if slot.m.shape() != param.shape() {
            return Err(ProcanError::dimension(format!(
                "adam state for '{name}' has shape {:?}, param has {:?}",
                slot.m.shape(),
                param.shape()
            )));
        }
        slot.step += 1;
        let t = slot.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
        for i in 0..param.numel() {
            let g = grad.data()[i] + weight_decay * param.data()[i];
            let m = &mut slot.m.data_mut()[i];
            *m = b1 * *m + (1.0 - b1) * g;
            let mv = *m;
            let v = &mut slot.v.data_mut()[i];
            *v = b2 * *v + (1.0 - b2) * g * g;
            let m_hat = mv / bc1;
            let v_hat = *v / bc2;
            param.data_mut()[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
        Ok(())
    }
}
