//! Multi-window detector: shared backbone and pyramid per HU window,
//! per-level fusion, and a shared anchor-free head.

mod backbone;
mod config;
mod fpn;
mod fusion;
mod head;
mod layers;
mod params;

use std::path::Path;

pub use backbone::{backbone_forward, init_backbone, INPUT_CHANNELS};
pub use config::{
    AttentionConfig, FusionTokens, ModelConfig, FIRST_LEVEL, LEVEL_STRIDES, NUM_LEVELS, SIZE_DIVISOR,
};
pub use fpn::{fpn_forward, init_fpn};
pub use fusion::{fuse_level, fusion_prefix, init_fusion, spatial_attention, window_attention, AttentionTrace};
pub use head::{head_forward, init_head, scale_name, LevelOutput};
pub use params::{Bound, Init, LoadReport, ParamStore};

use crate::error::{Error, Result};
use crate::numerics::checkpoint::read_container;
use crate::numerics::{Graph, Scalar, Tensor, Var};

/// Zero-pads `[C,H,W]` at the bottom and right to multiples of [`SIZE_DIVISOR`].
/// Returns the padded tensor and the `(rows, cols)` added.
pub fn pad_to_divisor<T: Scalar>(x: &Tensor<T>) -> (Tensor<T>, (usize, usize)) {
    let s = x.shape();
    let (c, h, w) = (s[0], s[1], s[2]);
    let ph = h.div_ceil(SIZE_DIVISOR) * SIZE_DIVISOR;
    let pw = w.div_ceil(SIZE_DIVISOR) * SIZE_DIVISOR;
    if (ph, pw) == (h, w) {
        return (x.clone(), (0, 0));
    }
    let mut out = Tensor::zeros(&[c, ph, pw]);
    let src = x.data();
    let dst = out.data_mut();
    for ch in 0..c {
        for y in 0..h {
            let from = (ch * h + y) * w;
            let to = (ch * ph + y) * pw;
            dst[to..to + w].copy_from_slice(&src[from..from + w]);
        }
    }
    (out, (ph - h, pw - w))
}

/// Every intermediate of one forward pass, for inspection.
#[derive(Clone, Debug)]
pub struct ForwardOutput {
    /// Bottom/right padding added to the input.
    pub pad: (usize, usize),
    /// Backbone stages C2..C5 per window.
    pub stages: Vec<[Var; 4]>,
    /// Pyramid P2..P6 per window.
    pub pyramids: Vec<[Var; NUM_LEVELS]>,
    /// Fused map per level.
    pub fused: [Var; NUM_LEVELS],
    pub levels: [LevelOutput; NUM_LEVELS],
}

#[derive(Clone, Debug, PartialEq)]
pub struct Detector<T> {
    pub config: ModelConfig,
    pub params: ParamStore<T>,
}

pub type Detector64 = Detector<f64>;
pub type Detector32 = Detector<f32>;

impl<T: Scalar> Detector<T> {
    /// Freshly initialized detector.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut params = ParamStore::new();
        let mut init = Init::new(seed);
        init_backbone(&mut params, &mut init, &config);
        init_fpn(&mut params, &mut init, &config);
        init_fusion(&mut params, &mut init, &config);
        init_head(&mut params, &mut init, &config);
        Ok(Detector { config, params })
    }

    /// Runs the network on one stack of windowed images, each `[3,H,W]`.
    pub fn forward(&self, g: &mut Graph<T>, b: &Bound, windows: &[Tensor<T>]) -> Result<ForwardOutput> {
        if windows.len() != self.config.num_windows {
            return Err(Error::Dimension(format!(
                "model expects {} windowed images, got {}",
                self.config.num_windows,
                windows.len()
            )));
        }
        let shape0 = windows[0].shape().to_vec();
        if shape0.len() != 3 || shape0[0] != INPUT_CHANNELS {
            return Err(Error::Dimension(format!("windowed images must be [3,H,W], got {shape0:?}")));
        }
        if let Some(bad) = windows.iter().find(|t| t.shape() != shape0.as_slice()) {
            return Err(Error::Dimension(format!(
                "windowed images differ in shape: {shape0:?} vs {:?}",
                bad.shape()
            )));
        }
        let mut stages = Vec::with_capacity(windows.len());
        let mut pyramids = Vec::with_capacity(windows.len());
        let mut pad = (0, 0);
        for w in windows {
            let (padded, p) = pad_to_divisor(w);
            pad = p;
            let x = g.input(padded);
            let c = backbone_forward(g, b, &self.config, x)?;
            pyramids.push(fpn_forward(g, b, &c)?);
            stages.push(c);
        }
        let mut fused = Vec::with_capacity(NUM_LEVELS);
        let mut levels = Vec::with_capacity(NUM_LEVELS);
        for j in 0..NUM_LEVELS {
            let maps: Vec<Var> = pyramids.iter().map(|p| p[j]).collect();
            let f = fuse_level(g, b, &self.config, j, &maps)?;
            levels.push(head_forward(g, b, &self.config, j, f)?);
            fused.push(f);
        }
        Ok(ForwardOutput {
            pad,
            stages,
            pyramids,
            fused: fused.try_into().expect("five levels"),
            levels: levels.try_into().expect("five levels"),
        })
    }

    /// Loads `backbone/` and `fpn/` tensors from a checkpoint, leaving the rest
    /// of the model as initialized. The report lists file entries that were not
    /// applied and backbone/pyramid parameters the file does not provide.
    pub fn load_pretrained(&mut self, path: &Path) -> Result<LoadReport> {
        let is_feature = |n: &str| n.starts_with("backbone/") || n.starts_with("fpn/");
        let (features, rest): (Vec<_>, Vec<_>) = read_container::<T>(path)?.into_iter().partition(|(n, _)| is_feature(n));
        let mut report = self.params.load_from(&features.into_iter().collect());
        report.unexpected.extend(rest.into_iter().map(|(n, _)| n));
        report.unexpected.sort();
        report.missing.retain(|n| is_feature(n));
        Ok(report)
    }
}
