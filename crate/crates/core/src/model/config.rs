use std::fmt;
use std::str::FromStr;

use crate::config::KeyValues;
use crate::error::{Error, Result};

/// Number of pyramid levels, P2 through P6.
pub const NUM_LEVELS: usize = 5;
/// Pyramid level index of the first map.
pub const FIRST_LEVEL: usize = 2;
/// Pixels per feature cell at P2..P6.
pub const LEVEL_STRIDES: [usize; NUM_LEVELS] = [4, 8, 16, 32, 64];
/// Inputs are zero-padded to a multiple of this.
pub const SIZE_DIVISOR: usize = 32;

/// How the windowed feature maps enter the attention branch.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum FusionTokens {
    /// Maps concatenated along channels; tokens are spatial locations.
    #[default]
    Channels,
    /// Each window is a token at every location; attention runs across windows.
    Windows,
}

impl FromStr for FusionTokens {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "channels" => Ok(FusionTokens::Channels),
            "windows" => Ok(FusionTokens::Windows),
            _ => Err(Error::Config(format!("fusion_tokens must be channels or windows, got {s:?}"))),
        }
    }
}

impl fmt::Display for FusionTokens {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FusionTokens::Channels => "channels",
            FusionTokens::Windows => "windows",
        })
    }
}

/// Multi-head attention sizes of the fusion block.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AttentionConfig {
    pub heads: usize,
    /// Query and key depth per head.
    pub dk_per_head: usize,
    /// Value channels summed over heads; also the attention branch output width.
    pub dv_total: usize,
}

impl Default for AttentionConfig {
    fn default() -> Self {
        AttentionConfig {
            heads: 2,
            dk_per_head: 20,
            dv_total: 8,
        }
    }
}

impl AttentionConfig {
    pub fn dv_per_head(&self) -> usize {
        self.dv_total / self.heads
    }

    /// Width of the parallel convolution branch for `channels` output channels.
    pub fn conv_branch_channels(&self, channels: usize) -> usize {
        channels - self.dv_total
    }

    pub fn validate(&self, channels: usize) -> Result<()> {
        if self.heads == 0 || self.dk_per_head == 0 || self.dv_total == 0 {
            return Err(Error::Config("attention heads, dk_per_head and dv_total must be >= 1".into()));
        }
        if self.dv_total % self.heads != 0 {
            return Err(Error::Config(format!(
                "dv_total {} is not divisible by heads {}",
                self.dv_total, self.heads
            )));
        }
        if self.dv_total >= channels {
            return Err(Error::Config(format!(
                "dv_total {} leaves no convolution branch within {channels} channels",
                self.dv_total
            )));
        }
        Ok(())
    }
}

/// Architecture of the detector. Every field maps to a config key of the same name.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    /// Channels of the four residual stages at strides 4, 8, 16, 32.
    pub backbone_widths: Vec<usize>,
    /// Residual blocks per stage.
    pub backbone_blocks: Vec<usize>,
    /// Channels of every pyramid level, fused map and head tower.
    pub fpn_channels: usize,
    /// Number of HU windows fed through the shared backbone.
    pub num_windows: usize,
    pub attention: bool,
    pub attention_cfg: AttentionConfig,
    pub fusion_tokens: FusionTokens,
    /// Conv layers in each head tower.
    pub head_convs: usize,
    /// Initial foreground probability of the classification output.
    pub prior_prob: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            backbone_widths: vec![32, 64, 128, 256],
            backbone_blocks: vec![2, 2, 2, 2],
            fpn_channels: 256,
            num_windows: 5,
            attention: true,
            attention_cfg: AttentionConfig::default(),
            fusion_tokens: FusionTokens::Channels,
            head_convs: 4,
            prior_prob: 0.01,
        }
    }
}

impl ModelConfig {
    pub fn apply(&mut self, kv: &mut KeyValues) -> Result<()> {
        kv.take_list("backbone_widths", &mut self.backbone_widths)?;
        kv.take_list("backbone_blocks", &mut self.backbone_blocks)?;
        kv.take("fpn_channels", &mut self.fpn_channels)?;
        kv.take("num_windows", &mut self.num_windows)?;
        kv.take_bool("attention", &mut self.attention)?;
        kv.take("heads", &mut self.attention_cfg.heads)?;
        kv.take("dk_per_head", &mut self.attention_cfg.dk_per_head)?;
        kv.take("dv_total", &mut self.attention_cfg.dv_total)?;
        kv.take("fusion_tokens", &mut self.fusion_tokens)?;
        kv.take("head_convs", &mut self.head_convs)?;
        kv.take("prior_prob", &mut self.prior_prob)?;
        Ok(())
    }

    pub fn write(&self, kv: &mut KeyValues) {
        let join = |v: &[usize]| v.iter().map(usize::to_string).collect::<Vec<_>>().join(",");
        kv.set("backbone_widths", join(&self.backbone_widths));
        kv.set("backbone_blocks", join(&self.backbone_blocks));
        kv.set("fpn_channels", self.fpn_channels);
        kv.set("num_windows", self.num_windows);
        kv.set("attention", if self.attention { "on" } else { "off" });
        kv.set("heads", self.attention_cfg.heads);
        kv.set("dk_per_head", self.attention_cfg.dk_per_head);
        kv.set("dv_total", self.attention_cfg.dv_total);
        kv.set("fusion_tokens", self.fusion_tokens);
        kv.set("head_convs", self.head_convs);
        kv.set("prior_prob", self.prior_prob);
    }

    pub fn validate(&self) -> Result<()> {
        if self.backbone_widths.len() != 4 || self.backbone_blocks.len() != 4 {
            return Err(Error::Config("backbone_widths and backbone_blocks need 4 entries".into()));
        }
        if self.backbone_widths.contains(&0) || self.backbone_blocks.contains(&0) {
            return Err(Error::Config("backbone widths and block counts must be >= 1".into()));
        }
        if self.fpn_channels == 0 {
            return Err(Error::Config("fpn_channels must be >= 1".into()));
        }
        if !matches!(self.num_windows, 1 | 3 | 5) {
            return Err(Error::Config(format!("num_windows must be 1, 3 or 5, got {}", self.num_windows)));
        }
        if !(self.prior_prob > 0.0 && self.prior_prob < 1.0) {
            return Err(Error::Config("prior_prob must lie in (0, 1)".into()));
        }
        if self.attention {
            self.attention_cfg.validate(self.fpn_channels)?;
        }
        Ok(())
    }
}
