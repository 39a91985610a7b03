use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::geometry::BBox;

use super::{BoxAnnotation, Image};

/// Three HU slices (inferior, key, superior) with their key-slice boxes.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub image_id: String,
    pub slices: [Image; 3],
    pub boxes: Vec<BoxAnnotation>,
}

impl Sample {
    pub fn height(&self) -> usize {
        self.slices[1].height()
    }

    pub fn width(&self) -> usize {
        self.slices[1].width()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AugmentConfig {
    pub hflip: bool,
    pub vflip: bool,
    pub resize: bool,
    /// Zoom factor range about the image center.
    pub resize_range: (f64, f64),
    pub translate: bool,
    /// Maximum shift as a fraction of the image side.
    pub max_translate: f64,
    /// HU value used for pixels mapped from outside the source.
    pub fill_hu: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            hflip: true,
            vflip: true,
            resize: true,
            resize_range: (0.8, 1.2),
            translate: true,
            max_translate: 0.1,
            fill_hu: -1024.0,
        }
    }
}

impl AugmentConfig {
    pub fn disabled() -> Self {
        AugmentConfig {
            hflip: false,
            vflip: false,
            resize: false,
            translate: false,
            ..Default::default()
        }
    }
}

/// Concrete geometric transform: optional flips, then zoom by `scale` about
/// the image center and shift by `(tx, ty)` pixels.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AugmentParams {
    pub hflip: bool,
    pub vflip: bool,
    pub scale: f64,
    pub tx: f64,
    pub ty: f64,
}

impl AugmentParams {
    pub const IDENTITY: AugmentParams = AugmentParams {
        hflip: false,
        vflip: false,
        scale: 1.0,
        tx: 0.0,
        ty: 0.0,
    };

    pub fn sample(seed: u64, cfg: &AugmentConfig, width: usize, height: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = AugmentParams::IDENTITY;
        p.hflip = cfg.hflip && rng.gen_bool(0.5);
        p.vflip = cfg.vflip && rng.gen_bool(0.5);
        if cfg.resize {
            let (lo, hi) = cfg.resize_range;
            p.scale = if hi > lo { rng.gen_range(lo..=hi) } else { lo };
        }
        if cfg.translate && cfg.max_translate > 0.0 {
            p.tx = rng.gen_range(-cfg.max_translate..=cfg.max_translate) * width as f64;
            p.ty = rng.gen_range(-cfg.max_translate..=cfg.max_translate) * height as f64;
        }
        p
    }

    fn is_affine_identity(&self) -> bool {
        self.scale == 1.0 && self.tx == 0.0 && self.ty == 0.0
    }
}

fn affine_image(img: &Image, p: &AugmentParams, fill: f64) -> Image {
    let (h, w) = (img.height(), img.width());
    let (cx, cy) = (w as f64 / 2.0, h as f64 / 2.0);
    let mut out = Image::filled(h, w, fill);
    for y in 0..h {
        for x in 0..w {
            // inverse map of the output pixel center into source coordinates
            let sx = (x as f64 + 0.5 - cx - p.tx) / p.scale + cx;
            let sy = (y as f64 + 0.5 - cy - p.ty) / p.scale + cy;
            out.set(y, x, img.sample_bilinear(sy - 0.5, sx - 0.5, fill));
        }
    }
    out
}

/// Applies `p` to all three slices and every box. Boxes are clipped to the
/// image and dropped when their area falls below one pixel.
pub fn apply_augment(sample: &Sample, p: &AugmentParams, fill_hu: f64) -> Sample {
    let (w, h) = (sample.width() as f64, sample.height() as f64);
    let transform_img = |img: &Image| {
        let mut out = img.clone();
        if p.hflip {
            out = out.flip_horizontal();
        }
        if p.vflip {
            out = out.flip_vertical();
        }
        if !p.is_affine_identity() {
            out = affine_image(&out, p, fill_hu);
        }
        out
    };
    let slices = [
        transform_img(&sample.slices[0]),
        transform_img(&sample.slices[1]),
        transform_img(&sample.slices[2]),
    ];
    let (cx, cy) = (w / 2.0, h / 2.0);
    let boxes = sample
        .boxes
        .iter()
        .filter_map(|a| {
            let mut b = a.bbox;
            if p.hflip {
                b = BBox::new(w - b.x2, b.y1, w - b.x1, b.y2);
            }
            if p.vflip {
                b = BBox::new(b.x1, h - b.y2, b.x2, h - b.y1);
            }
            if !p.is_affine_identity() {
                let fx = |x: f64| p.scale * (x - cx) + cx + p.tx;
                let fy = |y: f64| p.scale * (y - cy) + cy + p.ty;
                b = BBox::new(fx(b.x1), fy(b.y1), fx(b.x2), fy(b.y2));
            }
            let b = b.clip(w, h);
            if b.area() < 1.0 || !b.is_valid() {
                return None;
            }
            Some(BoxAnnotation { bbox: b, ..a.clone() })
        })
        .collect();
    Sample {
        image_id: sample.image_id.clone(),
        slices,
        boxes,
    }
}

/// Random flips, zoom and shift, deterministic in `seed`.
pub fn augment(sample: &Sample, seed: u64, cfg: &AugmentConfig) -> Result<Sample> {
    let p = AugmentParams::sample(seed, cfg, sample.width(), sample.height());
    Ok(apply_augment(sample, &p, cfg.fill_hu))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ct::Organ;

    fn sample() -> Sample {
        let img = Image::new(40, 100, (0..4000).map(|i| (i % 97) as f64).collect()).unwrap();
        Sample {
            image_id: "s".into(),
            slices: [img.clone(), img.clone(), img],
            boxes: vec![BoxAnnotation::new("s", BBox::new(10.0, 20.0, 30.0, 40.0), Organ::LVR, 8.0).unwrap()],
        }
    }

    #[test]
    fn hflip_box_arithmetic_and_involution() {
        let s = sample();
        let p = AugmentParams { hflip: true, ..AugmentParams::IDENTITY };
        let once = apply_augment(&s, &p, -1024.0);
        assert_eq!(once.boxes[0].bbox, BBox::new(70.0, 20.0, 90.0, 40.0));
        let twice = apply_augment(&once, &p, -1024.0);
        assert_eq!(twice, s);
    }

    #[test]
    fn neutral_parameters_are_identity() {
        let s = sample();
        assert_eq!(apply_augment(&s, &AugmentParams::IDENTITY, -1024.0), s);
        let s2 = augment(&s, 11, &AugmentConfig::disabled()).unwrap();
        assert_eq!(s2, s);
    }

    #[test]
    fn same_seed_same_result() {
        let s = sample();
        let cfg = AugmentConfig::default();
        assert_eq!(augment(&s, 5, &cfg).unwrap(), augment(&s, 5, &cfg).unwrap());
    }
}
