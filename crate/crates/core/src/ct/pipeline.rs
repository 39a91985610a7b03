//! Volume-to-sample preprocessing: resample, key triplet, border clip.

use crate::error::{Error, Result};
use crate::geometry::BBox;

use super::{
    clip_black_borders, resample_to_spacing, BoxAnnotation, CropRect, HuVolume, Image, Sample, HU_MIN,
};

/// A preprocessed sample with the placement of its crop in the resampled plane.
#[derive(Clone, Debug, PartialEq)]
pub struct Preprocessed {
    pub sample: Sample,
    pub crop: CropRect,
    /// Resampled plane size `(height, width)` before clipping.
    pub resampled_size: (usize, usize),
    pub fully_black: bool,
}

/// Resamples `vol`, takes the key slice with its two neighbors, and clips the
/// air border of the key slice from all three. Boxes are given in original
/// key-slice pixels and come back in cropped coordinates.
pub fn preprocess_volume(
    image_id: &str,
    vol: &HuVolume,
    key: usize,
    boxes: &[BoxAnnotation],
    target_spacing: [f64; 3],
) -> Result<Preprocessed> {
    if key >= vol.depth() {
        return Err(Error::Data(format!(
            "{image_id}: key slice {key} outside volume depth {}",
            vol.depth()
        )));
    }
    let key_mm = (key as f64 + 0.5) * vol.spacing_mm()[2];
    let res = resample_to_spacing(vol, target_spacing)?;
    let new_key = ((key_mm / res.spacing_mm()[2]).floor() as usize).min(res.depth() - 1);
    let sx = res.width() as f64 / vol.width() as f64;
    let sy = res.height() as f64 / vol.height() as f64;

    let triplet = res.key_triplet(new_key);
    let clip = clip_black_borders(&triplet[1]);
    let r = clip.rect;
    let crop = |im: &Image| im.crop(r.x0, r.y0, r.width, r.height);
    let slices = [crop(&triplet[0]), clip.image.clone(), crop(&triplet[2])];

    let mut out = Vec::with_capacity(boxes.len());
    for b in boxes {
        let scaled = BBox::new(b.bbox.x1 * sx, b.bbox.y1 * sy, b.bbox.x2 * sx, b.bbox.y2 * sy);
        let moved = scaled
            .translate(-(r.x0 as f64), -(r.y0 as f64))
            .clip(r.width as f64, r.height as f64);
        if moved.area() < 1.0 {
            log::warn!("{image_id}: box {:?} falls outside the clipped slice; dropped", b.bbox);
            continue;
        }
        out.push(BoxAnnotation::new(image_id, moved, b.organ, b.size_mm)?);
    }
    Ok(Preprocessed {
        sample: Sample {
            image_id: image_id.to_string(),
            slices,
            boxes: out,
        },
        crop: r,
        resampled_size: (res.height(), res.width()),
        fully_black: clip.fully_black,
    })
}

/// Places the sample on a fixed `height × width` canvas anchored at the top-left
/// corner, padding with air or cutting the excess. Boxes are clipped to the canvas.
pub fn fit_to_canvas(sample: &Sample, height: usize, width: usize) -> Sample {
    let place = |im: &Image| {
        let mut out = Image::filled(height, width, HU_MIN);
        for y in 0..im.height().min(height) {
            for x in 0..im.width().min(width) {
                out.set(y, x, im.get(y, x));
            }
        }
        out
    };
    let boxes = sample
        .boxes
        .iter()
        .filter_map(|b| {
            let c = b.bbox.clip(width as f64, height as f64);
            (c.area() >= 1.0).then(|| BoxAnnotation {
                bbox: c,
                ..b.clone()
            })
        })
        .collect();
    Sample {
        image_id: sample.image_id.clone(),
        slices: [place(&sample.slices[0]), place(&sample.slices[1]), place(&sample.slices[2])],
        boxes,
    }
}
