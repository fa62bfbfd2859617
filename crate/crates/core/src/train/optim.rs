//! Adaptive-moment optimiser with decoupled weight decay, step learning-rate
//! decay and global-norm gradient clipping.

use serde::{Deserialize, Serialize};

use crate::nn::ParamStore;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Learning rate is divided by this every `*_decay_every` epochs.
    pub decay_factor: f64,
    pub coarse_decay_every: usize,
    pub fine_decay_every: usize,
    /// Maximum global gradient norm; `None` disables clipping.
    pub grad_clip: Option<f64>,
}

impl Default for OptimConfig {
    fn default() -> Self {
        OptimConfig {
            lr: 1e-4,
            weight_decay: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            decay_factor: 10.0,
            coarse_decay_every: 200,
            fine_decay_every: 120,
            grad_clip: Some(0.1),
        }
    }
}

impl OptimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Parameter(format!("lr must be positive, got {}", self.lr)));
        }
        if !(self.decay_factor > 1.0) {
            return Err(Error::Parameter(format!("decay factor must exceed 1, got {}", self.decay_factor)));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::Parameter(format!("weight decay must be non-negative, got {}", self.weight_decay)));
        }
        if !((0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2)) || !(self.eps > 0.0) {
            return Err(Error::Parameter("betas must lie in [0, 1) and eps must be positive".into()));
        }
        if self.coarse_decay_every == 0 || self.fine_decay_every == 0 {
            return Err(Error::Parameter("decay intervals must be positive".into()));
        }
        if let Some(c) = self.grad_clip {
            if !(c > 0.0) {
                return Err(Error::Parameter(format!("grad clip must be positive, got {c}")));
            }
        }
        Ok(())
    }

    /// Step schedule: `lr / factor^(epoch / every)`.
    pub fn lr_at(&self, epoch: usize, every: usize) -> f64 {
        self.lr / self.decay_factor.powi((epoch / every) as i32)
    }
}

pub fn global_norm(grads: &[Option<Vec<f64>>]) -> f64 {
    grads.iter().flatten().flat_map(|g| g.iter()).map(|v| v * v).sum::<f64>().sqrt()
}

/// Rescales all gradients so their global norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_grad_norm(grads: &mut [Option<Vec<f64>>], max_norm: f64) -> f64 {
    let norm = global_norm(grads);
    if norm > max_norm {
        let s = max_norm / (norm + 1e-6);
        for g in grads.iter_mut().flatten() {
            g.iter_mut().for_each(|v| *v *= s);
        }
    }
    norm
}

/// First and second moment estimates, one buffer per parameter in store
/// order.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamW {
    pub step: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl AdamW {
    pub fn new(store: &ParamStore) -> Self {
        let zeros: Vec<Vec<f64>> = store.iter().map(|(_, p)| vec![0.0; p.value.len()]).collect();
        AdamW { step: 0, m: zeros.clone(), v: zeros }
    }

    /// One update. Parameters whose gradient is `None` are left untouched,
    /// moments included.
    pub fn update(&mut self, store: &mut ParamStore, grads: &[Option<Vec<f64>>], lr: f64, cfg: &OptimConfig) -> Result<()> {
        if grads.len() != store.len() || self.m.len() != store.len() {
            return Err(Error::dim("adamw", format!("{} grads, {} moments, {} params", grads.len(), self.m.len(), store.len())));
        }
        self.step += 1;
        let bc1 = 1.0 - cfg.beta1.powi(self.step as i32);
        let bc2 = 1.0 - cfg.beta2.powi(self.step as i32);
        let ids: Vec<_> = store.ids().collect();
        for (k, id) in ids.into_iter().enumerate() {
            let Some(g) = &grads[k] else { continue };
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            let p = store.get_mut(id).value.data_mut();
            if g.len() != p.len() {
                return Err(Error::dim("adamw", format!("gradient {k} has {} values for {}", g.len(), p.len())));
            }
            for i in 0..p.len() {
                m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
                v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
                p[i] *= 1.0 - lr * cfg.weight_decay;
                p[i] -= lr * (m[i] / bc1) / ((v[i] / bc2).sqrt() + cfg.eps);
            }
        }
        Ok(())
    }
}
