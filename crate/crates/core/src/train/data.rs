use std::path::Path;

use crate::ct::{
    write_annotations, write_volume, build_multi_intensity, fit_to_canvas, preprocess_volume, read_annotations, read_volume, synth_dataset,
    windows_for_count, BoxAnnotation, HuVolume, Sample, WindowSpec, TARGET_SPACING_MM,
};
use crate::error::{Error, Result};
use crate::geometry::BBox;
use crate::numerics::{Scalar, Tensor};

use super::ExperimentConfig;

/// Network-ready sample: one `[3,H,W]` tensor per HU window.
#[derive(Clone, Debug, PartialEq)]
pub struct PreparedSample<T> {
    pub image_id: String,
    pub windows: Vec<Tensor<T>>,
    pub boxes: Vec<BBox>,
    pub height: usize,
    pub width: usize,
}

pub fn prepare<T: Scalar>(sample: &Sample, windows: &[WindowSpec]) -> Result<PreparedSample<T>> {
    let stack = build_multi_intensity(&sample.slices, windows)?;
    Ok(PreparedSample {
        image_id: sample.image_id.clone(),
        windows: stack.tensors(),
        boxes: sample.boxes.iter().map(|b| b.bbox).collect(),
        height: sample.height(),
        width: sample.width(),
    })
}

/// HU windows selected by the model's window count.
pub fn experiment_windows(cfg: &ExperimentConfig) -> Result<Vec<WindowSpec>> {
    windows_for_count(cfg.model.num_windows, cfg.window_convention)
}

/// Resamples, clips and places one annotated volume on the training canvas.
pub fn volume_to_sample(id: &str, vol: &HuVolume, boxes: &[BoxAnnotation], canvas: usize) -> Result<Sample> {
    let p = preprocess_volume(id, vol, vol.key_index(), boxes, TARGET_SPACING_MM)?;
    Ok(fit_to_canvas(&p.sample, canvas, canvas))
}

/// Synthetic train and validation samples; the first `train_images` cases
/// train, the next `val_images` validate.
pub fn synthetic_split(cfg: &ExperimentConfig) -> Result<(Vec<Sample>, Vec<Sample>)> {
    let t = &cfg.train;
    let cases = synth_dataset(t.data_seed, t.train_images + t.val_images, &cfg.synth)?;
    let mut samples = cases
        .iter()
        .map(|(id, c)| volume_to_sample(id, &c.volume, &c.annotations, t.input_size))
        .collect::<Result<Vec<_>>>()?;
    let val = samples.split_off(t.train_images);
    Ok((samples, val))
}

/// Subdirectory of a dataset holding one volume directory per image.
pub const DATASET_VOLUMES_DIR: &str = "volumes";
pub const DATASET_ANNOTATIONS_FILE: &str = "annotations.csv";

/// Reads a dataset directory: `volumes/<image_id>/` plus `annotations.csv`.
/// Volumes are visited in image-id order.
pub fn read_dataset(dir: &Path) -> Result<Vec<(String, HuVolume, Vec<BoxAnnotation>)>> {
    let anns = read_annotations(&dir.join(DATASET_ANNOTATIONS_FILE))?;
    let vol_dir = dir.join(DATASET_VOLUMES_DIR);
    let mut ids: Vec<String> = std::fs::read_dir(&vol_dir)
        .map_err(|e| Error::io(&vol_dir, e))?
        .filter_map(|e| e.ok())
        .filter(|e| e.path().is_dir())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .collect();
    ids.sort();
    if let Some(a) = anns.iter().find(|a| ids.binary_search(&a.image_id).is_err()) {
        return Err(Error::Data(format!("annotation refers to unknown image {:?}", a.image_id)));
    }
    ids.into_iter()
        .map(|id| {
            let vol = read_volume(&vol_dir.join(&id))?;
            let boxes = anns.iter().filter(|a| a.image_id == id).cloned().collect();
            Ok((id, vol, boxes))
        })
        .collect()
}

/// Writes a dataset directory readable by [`read_dataset`].
pub fn write_dataset(dir: &Path, cases: &[(String, HuVolume, Vec<BoxAnnotation>)]) -> Result<()> {
    let vol_dir = dir.join(DATASET_VOLUMES_DIR);
    std::fs::create_dir_all(&vol_dir).map_err(|e| Error::io(&vol_dir, e))?;
    let mut rows = Vec::new();
    for (id, vol, boxes) in cases {
        write_volume(&vol_dir.join(id), vol)?;
        rows.extend(boxes.iter().cloned());
    }
    write_annotations(&dir.join(DATASET_ANNOTATIONS_FILE), &rows)
}
