//! Residual convolutional backbone shared by all windowed inputs.

use crate::error::Result;
use crate::numerics::{Graph, Scalar, Var};

use super::layers::{conv, init_conv};
use super::params::{Bound, Init, ParamStore};
use super::ModelConfig;

pub const INPUT_CHANNELS: usize = 3;

fn stage_stride(stage: usize, block: usize) -> usize {
    if stage > 0 && block == 0 {
        2
    } else {
        1
    }
}

pub fn init_backbone<T: Scalar>(store: &mut ParamStore<T>, init: &mut Init, cfg: &ModelConfig) {
    let w0 = cfg.backbone_widths[0];
    init_conv(store, init, "backbone/stem1", w0, INPUT_CHANNELS, 3, 1.0, Some(0.0));
    init_conv(store, init, "backbone/stem2", w0, w0, 3, 1.0, Some(0.0));
    let mut c_in = w0;
    for (s, (&width, &blocks)) in cfg.backbone_widths.iter().zip(&cfg.backbone_blocks).enumerate() {
        for blk in 0..blocks {
            let p = format!("backbone/s{s}/b{blk}");
            init_conv(store, init, &format!("{p}/conv1"), width, c_in, 3, 1.0, Some(0.0));
            init_conv(store, init, &format!("{p}/conv2"), width, width, 3, 0.25, Some(0.0));
            if c_in != width || stage_stride(s, blk) != 1 {
                init_conv(store, init, &format!("{p}/proj"), width, c_in, 1, 1.0, None);
            }
            c_in = width;
        }
    }
}

/// Stage features at strides 4, 8, 16 and 32 for a padded `[3,H,W]` input.
pub fn backbone_forward<T: Scalar>(g: &mut Graph<T>, b: &Bound, cfg: &ModelConfig, x: Var) -> Result<[Var; 4]> {
    let mut h = conv(g, b, "backbone/stem1", x, 2)?;
    h = g.silu(h);
    h = conv(g, b, "backbone/stem2", h, 2)?;
    h = g.silu(h);
    let mut stages = Vec::with_capacity(4);
    for (s, &blocks) in cfg.backbone_blocks.iter().enumerate() {
        for blk in 0..blocks {
            let p = format!("backbone/s{s}/b{blk}");
            let stride = stage_stride(s, blk);
            let mut y = conv(g, b, &format!("{p}/conv1"), h, stride)?;
            y = g.silu(y);
            y = conv(g, b, &format!("{p}/conv2"), y, 1)?;
            let shortcut = match b.get(&format!("{p}/proj/w")) {
                Some(_) => conv(g, b, &format!("{p}/proj"), h, stride)?,
                None => h,
            };
            let sum = g.add(y, shortcut)?;
            h = g.silu(sum);
        }
        stages.push(h);
    }
    Ok([stages[0], stages[1], stages[2], stages[3]])
}
