//! Anchor-free prediction head shared by all pyramid levels.

use crate::error::Result;
use crate::numerics::{Graph, Scalar, Tensor, Var};

use super::layers::{conv, init_conv};
use super::params::{Bound, Init, ParamStore};
use super::{ModelConfig, FIRST_LEVEL, LEVEL_STRIDES, NUM_LEVELS};

/// Head outputs of one level. `reg` holds positive `(l, t, r, b)` distances
/// in input pixels.
#[derive(Clone, Copy, Debug)]
pub struct LevelOutput {
    /// Pyramid level, 2..=6.
    pub level: usize,
    pub stride: usize,
    /// `[1,H,W]` classification logits.
    pub cls: Var,
    /// `[4,H,W]` distances.
    pub reg: Var,
    /// `[1,H,W]` centerness logits.
    pub ctr: Var,
}

pub fn scale_name(level_index: usize) -> String {
    format!("head/scale/P{}", level_index + FIRST_LEVEL)
}

pub fn init_head<T: Scalar>(store: &mut ParamStore<T>, init: &mut Init, cfg: &ModelConfig) {
    let f = cfg.fpn_channels;
    for i in 0..cfg.head_convs {
        init_conv(store, init, &format!("head/cls_tower/{i}"), f, f, 3, 1.0, Some(0.0));
        init_conv(store, init, &format!("head/reg_tower/{i}"), f, f, 3, 1.0, Some(0.0));
    }
    let prior_bias = -((1.0 - cfg.prior_prob) / cfg.prior_prob).ln();
    store.insert("head/cls_out/w", init.normal(&[1, f, 3, 3], 0.01));
    store.insert("head/cls_out/b", Tensor::full(&[1], T::lit(prior_bias)));
    store.insert("head/reg_out/w", init.normal(&[4, f, 3, 3], 0.01));
    store.insert("head/reg_out/b", Tensor::zeros(&[4]));
    store.insert("head/ctr_out/w", init.normal(&[1, f, 3, 3], 0.01));
    store.insert("head/ctr_out/b", Tensor::zeros(&[1]));
    for j in 0..NUM_LEVELS {
        store.insert(scale_name(j), Tensor::scalar(T::one()));
    }
}

fn tower<T: Scalar>(g: &mut Graph<T>, b: &Bound, name: &str, n: usize, x: Var) -> Result<Var> {
    let mut h = x;
    for i in 0..n {
        h = conv(g, b, &format!("head/{name}/{i}"), h, 1)?;
        h = g.silu(h);
    }
    Ok(h)
}

pub fn head_forward<T: Scalar>(
    g: &mut Graph<T>,
    b: &Bound,
    cfg: &ModelConfig,
    level_index: usize,
    fused: Var,
) -> Result<LevelOutput> {
    let stride = LEVEL_STRIDES[level_index];
    let ct = tower(g, b, "cls_tower", cfg.head_convs, fused)?;
    let rt = tower(g, b, "reg_tower", cfg.head_convs, fused)?;
    let cls = conv(g, b, "head/cls_out", ct, 1)?;
    let raw = conv(g, b, "head/reg_out", rt, 1)?;
    let ctr = conv(g, b, "head/ctr_out", rt, 1)?;
    let scaled = g.scale_by(raw, b.var(&scale_name(level_index))?)?;
    let e = g.exp(scaled);
    let reg = g.scale(e, T::lit(stride as f64));
    Ok(LevelOutput {
        level: level_index + FIRST_LEVEL,
        stride,
        cls,
        reg,
        ctr,
    })
}
