//! SGD with Nesterov momentum and the cosine learning-rate schedule.

use std::f64::consts::PI;

use super::TrainConfig;
use crate::engine::{ParamStore, Real, Tensor};

/// Learning rate for epoch `e`: `0.5 · base · (1 + cos(π·e / epochs))`,
/// floored at 0. Epochs past the end are clamped.
pub fn cosine_lr(epoch: usize, cfg: &TrainConfig) -> f64 {
    if cfg.epochs == 0 {
        return cfg.base_lr;
    }
    let e = epoch.min(cfg.epochs) as f64;
    (0.5 * cfg.base_lr * (1.0 + (PI * e / cfg.epochs as f64).cos())).max(0.0)
}

/// Momentum buffers, one per parameter, zero-initialized.
#[derive(Debug, Clone)]
pub struct OptimState<F> {
    buffers: Vec<Tensor<F>>,
}

impl<F: Real> OptimState<F> {
    pub fn new(params: &ParamStore<F>) -> Self {
        let mut buffers = vec![Tensor::zeros(&[0]); params.len()];
        for (id, p) in params.iter() {
            buffers[id.0] = Tensor::zeros(p.value.shape());
        }
        Self { buffers }
    }

    pub fn buffer(&self, id: crate::engine::ParamId) -> &Tensor<F> {
        &self.buffers[id.0]
    }
}

/// One optimizer step over every trainable parameter:
///
/// ```text
/// g   = grad + wd · p
/// buf = μ · buf + g
/// p  -= lr · (g + μ · buf)     (nesterov; plain momentum uses buf)
/// ```
pub fn sgd_nesterov_step<F: Real>(
    params: &mut ParamStore<F>,
    state: &mut OptimState<F>,
    lr: f64,
    cfg: &TrainConfig,
) {
    let (lr, mu, wd) = (F::of(lr), F::of(cfg.momentum), F::of(cfg.weight_decay));
    for id in params.ids() {
        let p = params.get_mut(id);
        if !p.trainable {
            continue;
        }
        let buf = state.buffers[id.0].data_mut();
        let grad = p.grad.data();
        for ((x, &g0), b) in p.value.data_mut().iter_mut().zip(grad).zip(buf.iter_mut()) {
            let g = g0 + wd * *x;
            *b = mu * *b + g;
            let upd = if cfg.nesterov { g + mu * *b } else { *b };
            *x -= lr * upd;
        }
    }
}
