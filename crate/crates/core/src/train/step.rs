use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::ct::{augment, Sample, WindowSpec};
use crate::detect::{
    assign_targets, postprocess, pyramid_geometry, total_loss, DecodeConfig, Detection, HeadOutput, LossComponents,
    LocationTargets, DEFAULT_LEVEL_RANGES,
};
use crate::error::{Error, Result};
use crate::model::{Detector, LevelOutput, LoadReport};
use crate::numerics::{Graph, Scalar, Tensor};
use crate::rng::derive_seed;

use super::data::{experiment_windows, prepare, PreparedSample};
use super::optim::{clip_grad_norm, lr_schedule, Sgd};
use super::ExperimentConfig;

/// One row of the loss trace.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub iter: usize,
    pub total: f64,
    pub cls: f64,
    pub reg: f64,
    pub ctr: f64,
    pub lr: f64,
}

/// Forward and loss for a batch, returning the gradient of every parameter.
pub fn batch_gradients<T: Scalar>(
    model: &Detector<T>,
    batch: &[PreparedSample<T>],
    cfg: &ExperimentConfig,
) -> Result<(LossComponents, BTreeMap<String, Tensor<T>>)> {
    let mut g = Graph::new();
    let bound = model.params.bind(&mut g);
    let mut outputs: Vec<[LevelOutput; 5]> = Vec::with_capacity(batch.len());
    let mut targets: Vec<Vec<LocationTargets>> = Vec::with_capacity(batch.len());
    for s in batch {
        let out = model.forward(&mut g, &bound, &s.windows)?;
        let geo = pyramid_geometry(s.height, s.width);
        targets.push(assign_targets(&s.boxes, &geo, &DEFAULT_LEVEL_RANGES).levels);
        outputs.push(out.levels);
    }
    let pairs: Vec<(&[LevelOutput], &[LocationTargets])> =
        outputs.iter().zip(&targets).map(|(o, t)| (o.as_slice(), t.as_slice())).collect();
    let loss = total_loss(&mut g, &pairs, &cfg.loss)?;
    let values = loss.values(&g);
    let grads = g.backward(loss.total);
    let mut by_name = BTreeMap::new();
    for (name, v) in bound.iter() {
        if let Some(t) = grads.get(v) {
            by_name.insert(name.to_string(), t.clone());
        }
    }
    Ok((values, by_name))
}

/// One optimizer step on `batch`. A non-finite loss or gradient aborts with
/// the batch id and leaves the model untouched.
pub fn train_step<T: Scalar>(
    model: &mut Detector<T>,
    opt: &mut Sgd<T>,
    batch: &[PreparedSample<T>],
    iter: usize,
    cfg: &ExperimentConfig,
) -> Result<LossRecord> {
    let (loss, mut grads) = batch_gradients(model, batch, cfg)?;
    let ids = || batch.iter().map(|s| s.image_id.as_str()).collect::<Vec<_>>().join(",");
    if !(loss.total.is_finite() && loss.cls.is_finite() && loss.reg.is_finite() && loss.ctr.is_finite()) {
        return Err(Error::NonFinite(format!(
            "iteration {iter}, batch [{}]: loss {:?}",
            ids(),
            loss
        )));
    }
    let norm = clip_grad_norm(&mut grads, cfg.train.clip_grad_norm);
    if !norm.is_finite() {
        return Err(Error::NonFinite(format!("iteration {iter}, batch [{}]: gradient norm {norm}", ids())));
    }
    let lr = lr_schedule(iter, &cfg.train);
    opt.step(&mut model.params, &grads, lr);
    Ok(LossRecord {
        iter,
        total: loss.total,
        cls: loss.cls,
        reg: loss.reg,
        ctr: loss.ctr,
        lr,
    })
}

/// Detections for one prepared image, in descending score order.
pub fn predict<T: Scalar>(model: &Detector<T>, sample: &PreparedSample<T>, cfg: &DecodeConfig) -> Result<Vec<Detection>> {
    let mut g = Graph::new();
    let bound = model.params.bind_frozen(&mut g);
    let out = model.forward(&mut g, &bound, &sample.windows)?;
    let heads: Vec<HeadOutput> = out.levels.iter().map(|l| HeadOutput::from_graph(&g, l)).collect();
    Ok(postprocess(&heads, cfg, sample.width as f64, sample.height as f64))
}

/// Training state: model, optimizer, data order and iteration counter.
pub struct Trainer<T> {
    pub cfg: ExperimentConfig,
    pub model: Detector<T>,
    pub opt: Sgd<T>,
    pub iter: usize,
    windows: Vec<WindowSpec>,
    order_rng: ChaCha8Rng,
    order: Vec<usize>,
    cursor: usize,
}

impl<T: Scalar> Trainer<T> {
    /// Fresh model initialized from the training seed.
    pub fn new(cfg: ExperimentConfig) -> Result<Self> {
        cfg.validate()?;
        let model = Detector::new(cfg.model.clone(), derive_seed(cfg.train.seed, 0))?;
        Self::with_model(cfg, model)
    }

    pub fn with_model(cfg: ExperimentConfig, model: Detector<T>) -> Result<Self> {
        let mut order_rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.train.seed, 1));
        order_rng.set_stream(2);
        Ok(Trainer {
            windows: experiment_windows(&cfg)?,
            opt: Sgd::new(cfg.train.momentum, cfg.train.weight_decay),
            cfg,
            model,
            iter: 0,
            order_rng,
            order: Vec::new(),
            cursor: 0,
        })
    }

    pub fn windows(&self) -> &[WindowSpec] {
        &self.windows
    }

    fn next_indices(&mut self, n: usize) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.cfg.train.batch_size);
        while out.len() < self.cfg.train.batch_size {
            if self.cursor >= self.order.len() {
                self.order = (0..n).collect();
                self.order.shuffle(&mut self.order_rng);
                self.cursor = 0;
            }
            out.push(self.order[self.cursor]);
            self.cursor += 1;
        }
        out
    }

    /// Draws the next batch from `data`, augments it and takes one step.
    pub fn step(&mut self, data: &[Sample]) -> Result<LossRecord> {
        if data.is_empty() {
            return Err(Error::Data("training set is empty".into()));
        }
        let idx = self.next_indices(data.len());
        let batch = idx
            .iter()
            .enumerate()
            .map(|(k, &i)| {
                let seed = derive_seed(self.cfg.train.seed ^ 0xA5A5_A5A5, (self.iter * idx.len() + k) as u64);
                let s = augment(&data[i], seed, &self.cfg.augment)?;
                prepare(&s, &self.windows)
            })
            .collect::<Result<Vec<_>>>()?;
        let rec = train_step(&mut self.model, &mut self.opt, &batch, self.iter, &self.cfg)?;
        self.iter += 1;
        Ok(rec)
    }

    /// Runs until `max_iters`, calling `on_record` after every step.
    pub fn run(&mut self, data: &[Sample], mut on_record: impl FnMut(&Self, &LossRecord) -> Result<()>) -> Result<Vec<LossRecord>> {
        let mut trace = Vec::with_capacity(self.cfg.train.max_iters.saturating_sub(self.iter));
        while self.iter < self.cfg.train.max_iters {
            let rec = self.step(data)?;
            on_record(self, &rec)?;
            trace.push(rec);
        }
        Ok(trace)
    }

    /// Detections for every sample, without augmentation.
    pub fn predict_all(&self, samples: &[Sample]) -> Result<Vec<(String, Vec<Detection>)>> {
        samples
            .iter()
            .map(|s| {
                let p = prepare::<T>(s, &self.windows)?;
                Ok((s.image_id.clone(), predict(&self.model, &p, &self.cfg.decode)?))
            })
            .collect()
    }
}

pub fn save_checkpoint<T: Scalar>(model: &Detector<T>, path: &Path) -> Result<()> {
    model.params.save(path)
}

/// Loads every matching parameter and reports the rest.
pub fn load_checkpoint<T: Scalar>(model: &mut Detector<T>, path: &Path) -> Result<LoadReport> {
    model.params.load(path)
}

pub const LOSS_TRACE_HEADER: [&str; 6] = ["iter", "total", "cls", "reg", "ctr", "lr"];

pub fn write_loss_trace(path: &Path, trace: &[LossRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::format(path, e.to_string()))?;
    if trace.is_empty() {
        w.write_record(LOSS_TRACE_HEADER).map_err(|e| Error::format(path, e.to_string()))?;
    }
    for r in trace {
        w.serialize(r).map_err(|e| Error::format(path, e.to_string()))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_loss_trace(path: &Path) -> Result<Vec<LossRecord>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::format(path, e.to_string()))?;
    r.deserialize()
        .map(|rec| rec.map_err(|e| Error::format(path, e.to_string())))
        .collect()
}
