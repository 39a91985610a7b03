use std::path::Path;

use crate::config::KeyValues;
use crate::ct::{AugmentConfig, SynthConfig, WindowConvention};
use crate::detect::{DecodeConfig, LossConfig};
use crate::error::{Error, Result};
use crate::model::ModelConfig;

/// Optimization recipe. Keys of the flat config file carry the field names.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub base_lr: f64,
    pub decay_factor: f64,
    /// Iterations at which the learning rate drops; empty means 60% and 85% of `max_iters`.
    pub decay_milestones: Vec<usize>,
    pub max_iters: usize,
    pub seed: u64,
    /// Seed of the synthetic dataset, kept apart from the training seed so
    /// several training runs can share one split.
    pub data_seed: u64,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Linear warmup length; zero disables it.
    pub warmup_iters: usize,
    /// Global gradient norm cap; zero disables it.
    pub clip_grad_norm: f64,
    /// Square canvas side every training image is placed on.
    pub input_size: usize,
    /// Synthetic training and validation set sizes.
    pub train_images: usize,
    pub val_images: usize,
    pub checkpoint_every: usize,
    pub log_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 8,
            base_lr: 0.004,
            decay_factor: 10.0,
            decay_milestones: Vec::new(),
            max_iters: 2000,
            seed: 0,
            data_seed: 0,
            momentum: 0.9,
            weight_decay: 1e-4,
            warmup_iters: 0,
            clip_grad_norm: 0.0,
            input_size: 160,
            train_images: 32,
            val_images: 16,
            checkpoint_every: 0,
            log_every: 50,
        }
    }
}

impl TrainConfig {
    /// Milestones in effect, resolving the empty default.
    pub fn milestones(&self) -> Vec<usize> {
        if self.decay_milestones.is_empty() {
            let at = |f: f64| (self.max_iters as f64 * f).round() as usize;
            vec![at(0.6), at(0.85)]
        } else {
            self.decay_milestones.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(self.base_lr > 0.0) {
            return bad("base_lr must be > 0");
        }
        if !(self.decay_factor > 1.0) {
            return bad("decay_factor must be > 1");
        }
        if self.decay_milestones.windows(2).any(|w| w[0] >= w[1]) {
            return bad("decay_milestones must be strictly increasing");
        }
        if self.batch_size == 0 || self.max_iters == 0 {
            return bad("batch_size and max_iters must be >= 1");
        }
        if !(0.0..1.0).contains(&self.momentum) || self.weight_decay < 0.0 || self.clip_grad_norm < 0.0 {
            return bad("need momentum in [0,1), weight_decay >= 0, clip_grad_norm >= 0");
        }
        if self.input_size < 32 {
            return bad("input_size must be >= 32");
        }
        if self.train_images == 0 {
            return bad("train_images must be >= 1");
        }
        Ok(())
    }

    fn apply(&mut self, kv: &mut KeyValues) -> Result<()> {
        kv.take("batch_size", &mut self.batch_size)?;
        kv.take("base_lr", &mut self.base_lr)?;
        kv.take("decay_factor", &mut self.decay_factor)?;
        kv.take_list("decay_milestones", &mut self.decay_milestones)?;
        kv.take("max_iters", &mut self.max_iters)?;
        kv.take("seed", &mut self.seed)?;
        kv.take("data_seed", &mut self.data_seed)?;
        kv.take("momentum", &mut self.momentum)?;
        kv.take("weight_decay", &mut self.weight_decay)?;
        kv.take("warmup_iters", &mut self.warmup_iters)?;
        kv.take("clip_grad_norm", &mut self.clip_grad_norm)?;
        kv.take("input_size", &mut self.input_size)?;
        kv.take("train_images", &mut self.train_images)?;
        kv.take("val_images", &mut self.val_images)?;
        kv.take("checkpoint_every", &mut self.checkpoint_every)?;
        kv.take("log_every", &mut self.log_every)?;
        Ok(())
    }

    fn write(&self, kv: &mut KeyValues) {
        kv.set("batch_size", self.batch_size);
        kv.set("base_lr", self.base_lr);
        kv.set("decay_factor", self.decay_factor);
        kv.set(
            "decay_milestones",
            self.milestones().iter().map(usize::to_string).collect::<Vec<_>>().join(","),
        );
        kv.set("max_iters", self.max_iters);
        kv.set("seed", self.seed);
        kv.set("data_seed", self.data_seed);
        kv.set("momentum", self.momentum);
        kv.set("weight_decay", self.weight_decay);
        kv.set("warmup_iters", self.warmup_iters);
        kv.set("clip_grad_norm", self.clip_grad_norm);
        kv.set("input_size", self.input_size);
        kv.set("train_images", self.train_images);
        kv.set("val_images", self.val_images);
        kv.set("checkpoint_every", self.checkpoint_every);
        kv.set("log_every", self.log_every);
    }
}

/// Everything one training or evaluation run needs, read from a single flat file.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub train: TrainConfig,
    pub model: ModelConfig,
    pub loss: LossConfig,
    pub decode: DecodeConfig,
    pub augment: AugmentConfig,
    pub synth: SynthConfig,
    pub window_convention: WindowConvention,
    /// IoU for counting a detection as a hit.
    pub match_iou: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            train: TrainConfig::default(),
            model: ModelConfig::default(),
            loss: LossConfig::default(),
            decode: DecodeConfig::default(),
            augment: AugmentConfig::default(),
            synth: SynthConfig::default(),
            window_convention: WindowConvention::LevelWidth,
            match_iou: 0.5,
        }
    }
}

impl ExperimentConfig {
    pub fn from_kv(mut kv: KeyValues) -> Result<Self> {
        let mut c = ExperimentConfig::default();
        c.train.apply(&mut kv)?;
        c.model.apply(&mut kv)?;
        kv.take("lambda", &mut c.loss.lambda)?;
        kv.take("focal_alpha", &mut c.loss.focal_alpha)?;
        kv.take("focal_gamma", &mut c.loss.focal_gamma)?;
        kv.take("iou_eps", &mut c.loss.iou_eps)?;
        kv.take("score_threshold", &mut c.decode.score_threshold)?;
        kv.take("topk_per_level", &mut c.decode.topk_per_level)?;
        kv.take("nms_iou", &mut c.decode.nms_iou)?;
        kv.take("max_detections", &mut c.decode.max_detections)?;
        kv.take_bool("hflip", &mut c.augment.hflip)?;
        kv.take_bool("vflip", &mut c.augment.vflip)?;
        kv.take_bool("resize", &mut c.augment.resize)?;
        let mut range = vec![c.augment.resize_range.0, c.augment.resize_range.1];
        kv.take_list("resize_range", &mut range)?;
        if range.len() != 2 || !(range[0] > 0.0 && range[0] <= range[1]) {
            return Err(Error::Config(format!("resize_range needs lo,hi with 0 < lo <= hi, got {range:?}")));
        }
        c.augment.resize_range = (range[0], range[1]);
        kv.take_bool("translate", &mut c.augment.translate)?;
        kv.take("max_translate", &mut c.augment.max_translate)?;
        kv.take("window_convention", &mut c.window_convention)?;
        kv.take("match_iou", &mut c.match_iou)?;
        c.synth.apply(&mut kv)?;
        kv.finish()?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_kv(KeyValues::load(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.model.validate()?;
        self.loss.validate()?;
        self.synth.validate()?;
        if !(self.match_iou > 0.0 && self.match_iou < 1.0) {
            return Err(Error::Config("match_iou must lie in (0, 1)".into()));
        }
        if !(self.decode.nms_iou > 0.0 && self.decode.nms_iou < 1.0) {
            return Err(Error::Config("nms_iou must lie in (0, 1)".into()));
        }
        if !(self.decode.score_threshold >= 0.0 && self.decode.score_threshold < 1.0) || self.decode.topk_per_level == 0 {
            return Err(Error::Config("need score_threshold in [0,1) and topk_per_level >= 1".into()));
        }
        if !(0.0..0.5).contains(&self.augment.max_translate) {
            return Err(Error::Config("max_translate must lie in [0, 0.5)".into()));
        }
        Ok(())
    }

    /// Fully resolved config as a flat key-value file.
    pub fn to_kv(&self) -> KeyValues {
        let mut kv = self.synth.to_kv();
        self.train.write(&mut kv);
        self.model.write(&mut kv);
        kv.set("lambda", self.loss.lambda);
        kv.set("focal_alpha", self.loss.focal_alpha);
        kv.set("focal_gamma", self.loss.focal_gamma);
        kv.set("iou_eps", self.loss.iou_eps);
        kv.set("score_threshold", self.decode.score_threshold);
        kv.set("topk_per_level", self.decode.topk_per_level);
        kv.set("nms_iou", self.decode.nms_iou);
        kv.set("max_detections", self.decode.max_detections);
        let onoff = |b: bool| if b { "on" } else { "off" };
        kv.set("hflip", onoff(self.augment.hflip));
        kv.set("vflip", onoff(self.augment.vflip));
        kv.set("resize", onoff(self.augment.resize));
        kv.set("resize_range", format!("{},{}", self.augment.resize_range.0, self.augment.resize_range.1));
        kv.set("translate", onoff(self.augment.translate));
        kv.set("max_translate", self.augment.max_translate);
        kv.set("window_convention", self.window_convention);
        kv.set("match_iou", self.match_iou);
        kv
    }
}
