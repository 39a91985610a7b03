use std::path::{Path, PathBuf};

use log::{info, warn};
use uld_core::config::KeyValues;
use uld_core::ct::{read_annotations, synth_dataset, write_annotations, BoxAnnotation, Sample};
use uld_core::detect::{read_detections, write_detections, DetectionRow};
use uld_core::eval::{
    evaluate_matches, froc_from_matches, froc_svg, read_froc_curve, stratified_report, write_froc_curve,
    write_operating_points, write_strata, write_svg, SizeBins, FROC_FILE, OPERATING_POINTS_FILE, PLOT_FILE,
    STRATA_FILE,
};
use uld_core::model::Detector;
use uld_core::numerics::checkpoint::{write_container, NamedTensors};
use uld_core::ct::preprocess_volume;
use uld_core::train::{
    experiment_windows, load_checkpoint, predict, prepare, read_dataset, save_checkpoint, synthetic_split,
    volume_to_sample, write_dataset, write_loss_trace, ExperimentConfig, LossRecord, Trainer,
};
use uld_core::{ct::TARGET_SPACING_MM, Error};

use crate::failure::Failure;
use crate::manifest::{create_dir, resolve_out, RunManifest};
use crate::{EvalArgs, ExperimentArgs, InferArgs, PlotArgs, PreprocessArgs, SynthArgs, TrainArgs};

pub const CHECKPOINT_FILE: &str = "model.ultens";
pub const RESOLVED_CONFIG_FILE: &str = "config.cfg";
pub const LOSS_TRACE_FILE: &str = "loss_trace.csv";
pub const DETECTIONS_FILE: &str = "detections.csv";
pub const GTS_FILE: &str = "gts.csv";

fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(msg.into())
}

/// Config file plus command-line overrides.
fn load_experiment(a: &ExperimentArgs) -> Result<ExperimentConfig, Failure> {
    let mut kv = match &a.config {
        Some(p) => KeyValues::load(p)?,
        None => KeyValues::default(),
    };
    if let Some(s) = a.seed {
        kv.set("seed", s);
    }
    if let Some(w) = &a.windows {
        kv.set("num_windows", w);
    }
    if let Some(att) = &a.attention {
        kv.set("attention", att);
    }
    for o in &a.overrides {
        let (k, v) = o
            .split_once('=')
            .ok_or_else(|| usage(format!("--set expects KEY=VALUE, got {o:?}")))?;
        kv.set(k.trim(), v.trim());
    }
    Ok(ExperimentConfig::from_kv(kv)?)
}

fn write_text(path: &Path, text: &str) -> Result<(), Failure> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e).into())
}

pub fn synth(a: SynthArgs) -> Result<(), Failure> {
    let cfg = match &a.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    let out = resolve_out(&a.out);
    create_dir(&out)?;
    let cases = synth_dataset(a.seed, a.images, &cfg.synth)?;
    let rows: Vec<_> = cases
        .into_iter()
        .map(|(id, c)| (id, c.volume, c.annotations))
        .collect();
    write_dataset(&out, &rows)?;
    write_text(&out.join("synth.cfg"), &cfg.synth.to_kv().to_text())?;
    let lesions: usize = rows.iter().map(|r| r.2.len()).sum();
    info!("wrote {} images with {lesions} lesions to {}", rows.len(), out.display());
    RunManifest::new("synth", a.config.clone(), Some(a.seed), vec![]).finish(&out)
}

pub fn preprocess(a: PreprocessArgs) -> Result<(), Failure> {
    let cfg = load_experiment(&a.exp)?;
    let windows = experiment_windows(&cfg)?;
    let out = resolve_out(&a.out);
    let tensor_dir = out.join("tensors");
    create_dir(&tensor_dir)?;
    let mut boxes = Vec::new();
    let mut crops = String::from("image_id,x0,y0,width,height,resampled_height,resampled_width\n");
    for (id, vol, anns) in read_dataset(&a.input)? {
        let p = preprocess_volume(&id, &vol, vol.key_index(), &anns, TARGET_SPACING_MM)?;
        if p.fully_black {
            warn!("{id}: key slice is entirely air");
        }
        let prepared = prepare::<f64>(&p.sample, &windows)?;
        let named: NamedTensors<f64> = windows
            .iter()
            .zip(prepared.windows)
            .enumerate()
            .map(|(i, (w, t))| (format!("window/{i}_{}", w.name), t))
            .collect();
        write_container(&tensor_dir.join(format!("{id}.ultens")), &named)?;
        let r = p.crop;
        crops.push_str(&format!(
            "{id},{},{},{},{},{},{}\n",
            r.x0, r.y0, r.width, r.height, p.resampled_size.0, p.resampled_size.1
        ));
        boxes.extend(p.sample.boxes);
    }
    write_annotations(&out.join("annotations.csv"), &boxes)?;
    write_text(&out.join("crops.csv"), &crops)?;
    write_text(&out.join(RESOLVED_CONFIG_FILE), &cfg.to_kv().to_text())?;
    RunManifest::new("preprocess", a.exp.config.clone(), a.exp.seed, vec![a.input.clone()]).finish(&out)
}

/// Samples from a dataset directory, or the requested synthetic split.
fn load_samples(cfg: &ExperimentConfig, data: Option<&Path>, split: &str) -> Result<Vec<Sample>, Failure> {
    match data {
        Some(dir) => Ok(read_dataset(dir)?
            .iter()
            .map(|(id, vol, anns)| volume_to_sample(id, vol, anns, cfg.train.input_size))
            .collect::<Result<Vec<_>, _>>()?),
        None => {
            let (train, val) = synthetic_split(cfg)?;
            Ok(if split == "train" { train } else { val })
        }
    }
}

pub fn train(a: TrainArgs) -> Result<(), Failure> {
    let cfg = load_experiment(&a.exp)?;
    let out = resolve_out(&a.out);
    create_dir(&out)?;
    write_text(&out.join(RESOLVED_CONFIG_FILE), &cfg.to_kv().to_text())?;
    let data = load_samples(&cfg, a.data.as_deref(), "train")?;
    let mut trainer = Trainer::<f64>::new(cfg.clone())?;
    if let Some(ck) = &a.checkpoint {
        let r = trainer.model.load_pretrained(ck)?;
        info!(
            "initialized {} tensors from {}; {} unexpected, {} backbone/pyramid tensors missing",
            r.loaded.len(),
            ck.display(),
            r.unexpected.len(),
            r.missing.len()
        );
        for n in r.unexpected.iter().chain(&r.missing).chain(&r.shape_mismatch) {
            warn!("unmatched tensor {n}");
        }
    }
    info!(
        "training {} parameters on {} images for {} iterations",
        trainer.model.params.num_scalars(),
        data.len(),
        cfg.train.max_iters
    );
    let ckpt_dir = out.join("checkpoints");
    let mut trace: Vec<LossRecord> = Vec::with_capacity(cfg.train.max_iters);
    let result = (|| -> Result<(), Failure> {
        while trainer.iter < cfg.train.max_iters {
            let r = trainer.step(&data)?;
            trace.push(r);
            let done = trainer.iter;
            if cfg.train.log_every > 0 && done % cfg.train.log_every == 0 {
                info!(
                    "iter {done}: total {:.4} cls {:.4} reg {:.4} ctr {:.4} lr {:.2e}",
                    r.total, r.cls, r.reg, r.ctr, r.lr
                );
            }
            if cfg.train.checkpoint_every > 0 && done % cfg.train.checkpoint_every == 0 && done < cfg.train.max_iters {
                create_dir(&ckpt_dir)?;
                save_checkpoint(&trainer.model, &ckpt_dir.join(format!("iter_{done:06}.ultens")))?;
            }
        }
        Ok(())
    })();
    write_loss_trace(&out.join(LOSS_TRACE_FILE), &trace)?;
    result?;
    save_checkpoint(&trainer.model, &out.join(CHECKPOINT_FILE))?;
    let mut inputs: Vec<PathBuf> = a.data.iter().cloned().collect();
    inputs.extend(a.checkpoint.iter().cloned());
    RunManifest::new("train", a.exp.config.clone(), Some(cfg.train.seed), inputs).finish(&out)
}

pub fn infer(a: InferArgs) -> Result<(), Failure> {
    let cfg = load_experiment(&a.exp)?;
    let mut model = Detector::<f64>::new(cfg.model.clone(), 0)?;
    let report = load_checkpoint(&mut model, &a.checkpoint)?;
    if !report.is_complete() {
        return Err(Failure::Data(format!(
            "checkpoint {} does not match the configured model: {} missing, {} unexpected, {} with other shapes",
            a.checkpoint.display(),
            report.missing.len(),
            report.unexpected.len(),
            report.shape_mismatch.len()
        )));
    }
    let samples = load_samples(&cfg, a.data.as_deref(), &a.split)?;
    let windows = experiment_windows(&cfg)?;
    let out = resolve_out(&a.out);
    create_dir(&out)?;
    let mut rows = Vec::new();
    let mut gts: Vec<BoxAnnotation> = Vec::new();
    for s in &samples {
        let p = prepare::<f64>(s, &windows)?;
        rows.extend(predict(&model, &p, &cfg.decode)?.iter().map(|d| DetectionRow::new(&s.image_id, d)));
        gts.extend(s.boxes.iter().cloned());
    }
    write_detections(&out.join(DETECTIONS_FILE), &rows)?;
    write_annotations(&out.join(GTS_FILE), &gts)?;
    info!("{} detections on {} images", rows.len(), samples.len());
    let mut inputs = vec![a.checkpoint.clone()];
    inputs.extend(a.data.iter().cloned());
    RunManifest::new("infer", a.exp.config.clone(), Some(cfg.train.seed), inputs).finish(&out)
}

pub fn eval(a: EvalArgs) -> Result<(), Failure> {
    if a.fp_points.is_empty() || a.fp_points.iter().any(|f| !(*f > 0.0)) {
        return Err(usage("--fp-points must be positive numbers"));
    }
    if !(a.iou > 0.0 && a.iou < 1.0) {
        return Err(usage("--iou must lie in (0, 1)"));
    }
    let dets = read_detections(&a.dets)?;
    let gts = read_annotations(&a.gts)?;
    let ev = evaluate_matches(&dets, &gts, a.iou);
    let result = froc_from_matches(&ev, &a.fp_points)?;
    let strata = stratified_report(&ev, &result, &SizeBins::default())?;
    let out = resolve_out(&a.out);
    create_dir(&out)?;
    write_froc_curve(&out.join(FROC_FILE), &result)?;
    write_operating_points(&out.join(OPERATING_POINTS_FILE), &result)?;
    write_strata(&out.join(STRATA_FILE), &strata)?;
    write_svg(&out.join(PLOT_FILE), &froc_svg(&result.curve, &result.fp_points))?;
    for (f, s) in result.fp_points.iter().zip(&result.sensitivities) {
        println!("sensitivity@{f}FP = {s:.4}");
    }
    println!("average = {:.4}", result.average);
    RunManifest::new("eval", None, None, vec![a.dets.clone(), a.gts.clone()]).finish(&out)
}

pub fn plot(a: PlotArgs) -> Result<(), Failure> {
    let curve = read_froc_curve(&a.input)?;
    if curve.is_empty() {
        return Err(Failure::Data(format!("{} has no curve points", a.input.display())));
    }
    let out = resolve_out(&a.out);
    create_dir(&out)?;
    write_svg(&out.join(PLOT_FILE), &froc_svg(&curve, &a.fp_points))?;
    RunManifest::new("plot", None, None, vec![a.input.clone()]).finish(&out)
}
