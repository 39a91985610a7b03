//! Feature pyramid: lateral projections, top-down pathway, smoothing, and an
//! extra stride-2 level on top.

use crate::error::Result;
use crate::numerics::{Graph, Scalar, Var};

use super::layers::{conv, init_conv};
use super::params::{Bound, Init, ParamStore};
use super::{ModelConfig, NUM_LEVELS};

pub fn init_fpn<T: Scalar>(store: &mut ParamStore<T>, init: &mut Init, cfg: &ModelConfig) {
    let f = cfg.fpn_channels;
    for (i, &c) in cfg.backbone_widths.iter().enumerate() {
        init_conv(store, init, &format!("fpn/lateral/C{}", i + 2), f, c, 1, 1.0, Some(0.0));
        init_conv(store, init, &format!("fpn/smooth/P{}", i + 2), f, f, 3, 1.0, Some(0.0));
    }
    init_conv(store, init, "fpn/P6", f, f, 3, 1.0, Some(0.0));
}

/// P2..P6 from stage features C2..C5.
pub fn fpn_forward<T: Scalar>(g: &mut Graph<T>, b: &Bound, stages: &[Var; 4]) -> Result<[Var; NUM_LEVELS]> {
    let mut laterals = Vec::with_capacity(4);
    for (i, &c) in stages.iter().enumerate() {
        laterals.push(conv(g, b, &format!("fpn/lateral/C{}", i + 2), c, 1)?);
    }
    let mut merged = vec![laterals[3]; 4];
    for i in (0..3).rev() {
        let s = g.shape(laterals[i]).to_vec();
        let up = g.resize_bilinear(merged[i + 1], s[1], s[2])?;
        merged[i] = g.add(laterals[i], up)?;
    }
    let mut out = [merged[0]; NUM_LEVELS];
    for i in 0..4 {
        out[i] = conv(g, b, &format!("fpn/smooth/P{}", i + 2), merged[i], 1)?;
    }
    out[4] = conv(g, b, "fpn/P6", out[3], 2)?;
    Ok(out)
}
