use indexmap::IndexMap;

use super::ParamStore;
use crate::error::{config_err, contract_err, Result};
use crate::pruning::PruneState;

/// SGD with heavy-ball momentum: `v ← μ·v + g; w ← w − lr·v`.
///
/// Velocity buffers are keyed by parameter name. When a [`PruneState`] is
/// supplied, masked entries of both weights and velocities are written as
/// exactly `0.0` after every step.
#[derive(Debug, Clone)]
pub struct Sgd {
    lr: f64,
    momentum: f64,
    velocity: IndexMap<String, Vec<f64>>,
}

impl Sgd {
    pub fn new(lr: f64, momentum: f64) -> Result<Self> {
        if !(lr > 0.0 && lr.is_finite()) {
            return Err(config_err!("learning rate must be positive, got {lr}"));
        }
        if !(0.0..1.0).contains(&momentum) {
            return Err(config_err!("momentum must lie in [0, 1), got {momentum}"));
        }
        Ok(Sgd {
            lr,
            momentum,
            velocity: IndexMap::new(),
        })
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.lr = lr;
    }

    pub fn step(&mut self, params: &mut ParamStore, mask: Option<&PruneState>) -> Result<()> {
        for (name, tensor) in params.iter_mut() {
            if !tensor.requires_grad() {
                continue;
            }
            let grad = tensor
                .grad()
                .ok_or_else(|| contract_err!("parameter {name} has no gradient"))?
                .to_vec();
            let v = self
                .velocity
                .entry(name.to_string())
                .or_insert_with(|| vec![0.0; grad.len()]);
            let w = tensor.data_mut();
            for ((w, v), g) in w.iter_mut().zip(v.iter_mut()).zip(&grad) {
                *v = self.momentum * *v + g;
                *w -= self.lr * *v;
            }
            if let Some(keep) = mask.and_then(|m| m.mask(name)) {
                if keep.len() != w.len() {
                    return Err(contract_err!(
                        "mask for {name} has {} entries, parameter has {}",
                        keep.len(),
                        w.len()
                    ));
                }
                for ((w, v), &k) in w.iter_mut().zip(v.iter_mut()).zip(keep) {
                    if !k {
                        *w = 0.0;
                        *v = 0.0;
                    }
                }
            }
        }
        Ok(())
    }
}
