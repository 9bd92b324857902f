use ndarray::{Array2, Zip};
use serde::{Deserialize, Serialize};

use super::params::ParamStore;
use crate::error::{Error, Result};

/// Step decay `lr(iter) = base_lr * decay_factor^floor(iter / decay_every)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub base_lr: f64,
    pub decay_factor: f64,
    pub decay_every: usize,
}

impl Default for LrSchedule {
    fn default() -> Self {
        LrSchedule {
            base_lr: 1e-4,
            decay_factor: 0.7,
            decay_every: 700,
        }
    }
}

impl LrSchedule {
    pub fn validate(&self) -> Result<()> {
        if !(self.base_lr >= 0.0) || !(self.decay_factor > 0.0 && self.decay_factor <= 1.0) || self.decay_every == 0 {
            return Err(Error::Config(format!("invalid learning rate schedule {self:?}")));
        }
        Ok(())
    }

    pub fn lr_at(&self, iter: usize) -> f64 {
        self.base_lr * self.decay_factor.powi((iter / self.decay_every) as i32)
    }
}

/// Adam moments for every parameter of a store, in store order.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    pub m: Vec<Array2<f64>>,
    pub v: Vec<Array2<f64>>,
}

impl AdamState {
    pub fn new(store: &ParamStore) -> Self {
        Self::with_betas(store, 0.9, 0.99, 1e-8)
    }

    pub fn with_betas(store: &ParamStore, beta1: f64, beta2: f64, eps: f64) -> Self {
        let zeros: Vec<Array2<f64>> = store.iter().map(|p| Array2::zeros(p.value.raw_dim())).collect();
        AdamState {
            beta1,
            beta2,
            eps,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }
}

/// One bias-corrected Adam update of every trainable parameter, then all
/// gradients are cleared. A non-finite gradient anywhere refuses the whole
/// step and leaves parameters, moments and gradients untouched.
pub fn adam_step(store: &mut ParamStore, state: &mut AdamState, lr: f64) -> Result<()> {
    if state.m.len() != store.len() {
        return Err(Error::Incompatible(format!(
            "optimizer tracks {} parameters, store has {}",
            state.m.len(),
            store.len()
        )));
    }
    if let Some(p) = store.iter().find(|p| p.trainable && p.grad.iter().any(|g| !g.is_finite())) {
        return Err(Error::NonFiniteGradient(p.name.clone()));
    }
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2, eps) = (state.beta1, state.beta2, state.eps);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    for ((p, m), v) in store.iter_mut().zip(&mut state.m).zip(&mut state.v) {
        if p.trainable {
            Zip::from(&mut p.value)
                .and(&p.grad)
                .and(m)
                .and(v)
                .for_each(|w, &g, m, v| {
                    *m = b1 * *m + (1.0 - b1) * g;
                    *v = b2 * *v + (1.0 - b2) * g * g;
                    *w -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
                });
        }
        p.grad.fill(0.0);
    }
    Ok(())
}
