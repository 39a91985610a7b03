use std::collections::BTreeMap;

use crate::model::ParamStore;
use crate::numerics::{Scalar, Tensor};

use super::TrainConfig;

/// Step-decay schedule: `base_lr / decay_factor^k` after `k` passed milestones,
/// ramped linearly from zero over the warmup iterations.
pub fn lr_schedule(iter: usize, cfg: &TrainConfig) -> f64 {
    let passed = cfg.milestones().iter().filter(|&&m| iter >= m).count();
    let lr = cfg.base_lr / cfg.decay_factor.powi(passed as i32);
    if iter < cfg.warmup_iters {
        lr * (iter + 1) as f64 / cfg.warmup_iters as f64
    } else {
        lr
    }
}

/// SGD with momentum and L2 weight decay:
/// `v <- momentum * v + (grad + wd * w)`, `w <- w - lr * v`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Sgd<T> {
    pub momentum: f64,
    pub weight_decay: f64,
    velocity: BTreeMap<String, Vec<T>>,
}

impl<T: Scalar> Sgd<T> {
    pub fn new(momentum: f64, weight_decay: f64) -> Self {
        Sgd {
            momentum,
            weight_decay,
            velocity: BTreeMap::new(),
        }
    }

    /// Applies one update. Parameters without a gradient still decay.
    pub fn step(&mut self, params: &mut ParamStore<T>, grads: &BTreeMap<String, Tensor<T>>, lr: f64) {
        let (mu, wd, lr) = (T::lit(self.momentum), T::lit(self.weight_decay), T::lit(lr));
        for (name, p) in params.iter_mut() {
            let v = self
                .velocity
                .entry(name.to_string())
                .or_insert_with(|| vec![T::zero(); p.len()]);
            let g = grads.get(name).map(Tensor::data);
            for (i, (w, vi)) in p.data_mut().iter_mut().zip(v.iter_mut()).enumerate() {
                let gi = g.map_or(T::zero(), |g| g[i]);
                *vi = mu * *vi + gi + wd * *w;
                *w -= lr * *vi;
            }
        }
    }
}

/// Scales all gradients so their global L2 norm is at most `max_norm`.
/// Returns the norm before scaling.
pub fn clip_grad_norm<T: Scalar>(grads: &mut BTreeMap<String, Tensor<T>>, max_norm: f64) -> f64 {
    let norm = grads
        .values()
        .flat_map(|t| t.data().iter())
        .map(|v| v.to_f64_lossy().powi(2))
        .sum::<f64>()
        .sqrt();
    if max_norm > 0.0 && norm > max_norm {
        let s = T::lit(max_norm / norm);
        for t in grads.values_mut() {
            t.data_mut().iter_mut().for_each(|v| *v *= s);
        }
    }
    norm
}
