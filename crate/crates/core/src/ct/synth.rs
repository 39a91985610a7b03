//! Deterministic CT-like phantoms with ellipsoidal lesions.
//!
//! Each case is a short stack of axial slices already at the training voxel
//! spacing. The background is a body outline with lungs, mediastinum, liver,
//! kidneys and bone drawn from fixed tissue HU bands plus Gaussian noise.
//! Lesions are smoothed ellipsoids whose HU offset depends on the host organ.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::config::KeyValues;
use crate::error::{Error, Result};
use crate::geometry::BBox;
use crate::rng::derive_seed;

use super::{BoxAnnotation, HuVolume, Organ, HU_MAX, HU_MIN};

/// Generator settings. Every key of the flat config file is listed with its
/// default.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    /// `image_size = 64`, square slice side in pixels.
    pub image_size: usize,
    /// `slices = 3`, axial slices per case; the key slice is the middle one.
    pub slices: usize,
    /// `spacing_xy_mm = 0.8`
    pub spacing_xy_mm: f64,
    /// `spacing_z_mm = 2.0`
    pub spacing_z_mm: f64,
    /// `lesions_min = 1`
    pub lesions_min: usize,
    /// `lesions_max = 3`
    pub lesions_max: usize,
    /// `diameter_min_mm = 5.0`
    pub diameter_min_mm: f64,
    /// `diameter_max_mm = 18.0`
    pub diameter_max_mm: f64,
    /// `organs = BN,LNG,MDT,LVR,KDY,ABM,PLS,ST`, host organs drawn uniformly.
    pub organs: Vec<Organ>,
    /// `noise_hu = 12.0`, per-pixel Gaussian noise sigma.
    pub noise_hu: f64,
    /// `contrast_min_hu = 40.0`, soft-tissue lesion offset magnitude range.
    pub contrast_min_hu: f64,
    /// `contrast_max_hu = 90.0`
    pub contrast_max_hu: f64,
    /// `edge_softness = 0.15`, width of the lesion edge in normalized radius.
    pub edge_softness: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            image_size: 64,
            slices: 3,
            spacing_xy_mm: 0.8,
            spacing_z_mm: 2.0,
            lesions_min: 1,
            lesions_max: 3,
            diameter_min_mm: 5.0,
            diameter_max_mm: 18.0,
            organs: Organ::ALL.to_vec(),
            noise_hu: 12.0,
            contrast_min_hu: 40.0,
            contrast_max_hu: 90.0,
            edge_softness: 0.15,
        }
    }
}

impl SynthConfig {
    pub fn from_kv(mut kv: KeyValues) -> Result<Self> {
        let mut c = SynthConfig::default();
        c.apply(&mut kv)?;
        kv.finish()?;
        c.validate()?;
        Ok(c)
    }

    /// Consumes the generator keys present in `kv`.
    pub fn apply(&mut self, kv: &mut KeyValues) -> Result<()> {
        kv.take("image_size", &mut self.image_size)?;
        kv.take("slices", &mut self.slices)?;
        kv.take("spacing_xy_mm", &mut self.spacing_xy_mm)?;
        kv.take("spacing_z_mm", &mut self.spacing_z_mm)?;
        kv.take("lesions_min", &mut self.lesions_min)?;
        kv.take("lesions_max", &mut self.lesions_max)?;
        kv.take("diameter_min_mm", &mut self.diameter_min_mm)?;
        kv.take("diameter_max_mm", &mut self.diameter_max_mm)?;
        if let Some(v) = kv.get("organs").map(str::to_owned) {
            let mut codes: Vec<String> = Vec::new();
            kv.take_list("organs", &mut codes)?;
            self.organs = codes.iter().map(|c| c.parse()).collect::<Result<_>>()?;
            if self.organs.is_empty() {
                return Err(Error::Config(format!("organs list {v:?} is empty")));
            }
        }
        kv.take("noise_hu", &mut self.noise_hu)?;
        kv.take("contrast_min_hu", &mut self.contrast_min_hu)?;
        kv.take("contrast_max_hu", &mut self.contrast_max_hu)?;
        kv.take("edge_softness", &mut self.edge_softness)?;
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.image_size < 16 {
            return bad("image_size must be >= 16");
        }
        if self.slices == 0 {
            return bad("slices must be >= 1");
        }
        if !(self.spacing_xy_mm > 0.0 && self.spacing_z_mm > 0.0) {
            return bad("spacings must be > 0");
        }
        if self.lesions_min > self.lesions_max {
            return bad("lesions_min must not exceed lesions_max");
        }
        if !(self.diameter_min_mm > 0.0 && self.diameter_min_mm <= self.diameter_max_mm) {
            return bad("need 0 < diameter_min_mm <= diameter_max_mm");
        }
        if !(self.contrast_min_hu >= 0.0 && self.contrast_min_hu <= self.contrast_max_hu) {
            return bad("need 0 <= contrast_min_hu <= contrast_max_hu");
        }
        if !(self.edge_softness > 0.0) || self.noise_hu < 0.0 {
            return bad("edge_softness must be > 0 and noise_hu >= 0");
        }
        if self.organs.is_empty() {
            return bad("organs must not be empty");
        }
        Ok(())
    }

    pub fn to_kv(&self) -> KeyValues {
        let mut kv = KeyValues::default();
        kv.set("image_size", self.image_size);
        kv.set("slices", self.slices);
        kv.set("spacing_xy_mm", self.spacing_xy_mm);
        kv.set("spacing_z_mm", self.spacing_z_mm);
        kv.set("lesions_min", self.lesions_min);
        kv.set("lesions_max", self.lesions_max);
        kv.set("diameter_min_mm", self.diameter_min_mm);
        kv.set("diameter_max_mm", self.diameter_max_mm);
        kv.set("organs", self.organs.iter().map(|o| o.code()).collect::<Vec<_>>().join(","));
        kv.set("noise_hu", self.noise_hu);
        kv.set("contrast_min_hu", self.contrast_min_hu);
        kv.set("contrast_max_hu", self.contrast_max_hu);
        kv.set("edge_softness", self.edge_softness);
        kv
    }
}

/// Ellipse in normalized image coordinates (`[0,1]` on both axes).
#[derive(Clone, Copy, Debug)]
struct Region {
    cx: f64,
    cy: f64,
    rx: f64,
    ry: f64,
}

impl Region {
    fn radius(&self, u: f64, v: f64) -> f64 {
        (((u - self.cx) / self.rx).powi(2) + ((v - self.cy) / self.ry).powi(2)).sqrt()
    }

    fn contains(&self, u: f64, v: f64) -> bool {
        self.radius(u, v) <= 1.0
    }

    fn jitter(self, rng: &mut ChaCha8Rng) -> Region {
        Region {
            cx: self.cx + rng.gen_range(-0.015..=0.015),
            cy: self.cy + rng.gen_range(-0.015..=0.015),
            rx: self.rx * rng.gen_range(0.95..=1.05),
            ry: self.ry * rng.gen_range(0.95..=1.05),
        }
    }
}

const fn region(cx: f64, cy: f64, rx: f64, ry: f64) -> Region {
    Region { cx, cy, rx, ry }
}

/// Anatomy of one case; drawn once, shared by all slices.
struct Phantom {
    body: Region,
    lungs: [Region; 2],
    mediastinum: Region,
    liver: Region,
    kidneys: [Region; 2],
    spine: Region,
    pelvis_bones: [Region; 2],
    abdomen: Region,
    pelvis: Region,
    soft_hu: f64,
    lung_hu: f64,
    mediastinum_hu: f64,
    liver_hu: f64,
    kidney_hu: f64,
    bone_hu: f64,
}

const AIR_HU: f64 = -1000.0;

impl Phantom {
    fn draw(rng: &mut ChaCha8Rng) -> Phantom {
        Phantom {
            body: region(0.5, 0.52, 0.46, 0.40).jitter(rng),
            lungs: [region(0.31, 0.36, 0.12, 0.16).jitter(rng), region(0.69, 0.36, 0.12, 0.16).jitter(rng)],
            mediastinum: region(0.5, 0.38, 0.065, 0.13).jitter(rng),
            liver: region(0.33, 0.63, 0.14, 0.09).jitter(rng),
            kidneys: [region(0.62, 0.64, 0.05, 0.065).jitter(rng), region(0.78, 0.64, 0.05, 0.065).jitter(rng)],
            spine: region(0.5, 0.74, 0.055, 0.055).jitter(rng),
            pelvis_bones: [region(0.28, 0.84, 0.07, 0.035).jitter(rng), region(0.72, 0.84, 0.07, 0.035).jitter(rng)],
            abdomen: region(0.52, 0.58, 0.09, 0.06),
            pelvis: region(0.5, 0.85, 0.13, 0.045),
            soft_hu: rng.gen_range(20.0..=60.0),
            lung_hu: rng.gen_range(-800.0..=-600.0),
            mediastinum_hu: rng.gen_range(30.0..=60.0),
            liver_hu: rng.gen_range(50.0..=70.0),
            kidney_hu: rng.gen_range(25.0..=45.0),
            bone_hu: rng.gen_range(500.0..=900.0),
        }
    }

    /// Noise-free tissue HU at normalized `(u, v)`.
    fn tissue(&self, u: f64, v: f64) -> f64 {
        if !self.body.contains(u, v) {
            return AIR_HU;
        }
        if self.spine.contains(u, v) || self.pelvis_bones.iter().any(|r| r.contains(u, v)) {
            return self.bone_hu;
        }
        if self.lungs.iter().any(|r| r.contains(u, v)) {
            return self.lung_hu;
        }
        if self.mediastinum.contains(u, v) {
            return self.mediastinum_hu;
        }
        if self.liver.contains(u, v) {
            return self.liver_hu;
        }
        if self.kidneys.iter().any(|r| r.contains(u, v)) {
            return self.kidney_hu;
        }
        self.soft_hu
    }

    /// Whether `(u, v)` lies in the host tissue of `organ`.
    fn hosts(&self, organ: Organ, u: f64, v: f64) -> bool {
        let t = self.tissue(u, v);
        match organ {
            Organ::BN => t == self.bone_hu,
            Organ::LNG => t == self.lung_hu,
            Organ::MDT => t == self.mediastinum_hu && self.mediastinum.contains(u, v),
            Organ::LVR => t == self.liver_hu && self.liver.contains(u, v),
            Organ::KDY => self.kidneys.iter().any(|r| r.contains(u, v)) && t == self.kidney_hu,
            Organ::ABM => self.abdomen.contains(u, v) && t == self.soft_hu,
            Organ::PLS => self.pelvis.contains(u, v) && t == self.soft_hu,
            Organ::ST => {
                let r = self.body.radius(u, v);
                (0.7..=0.93).contains(&r) && t == self.soft_hu
            }
        }
    }
}

/// Geometry and contrast of one rendered lesion.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthLesion {
    pub organ: Organ,
    /// Center in continuous pixel coordinates of the key slice.
    pub center: (f64, f64),
    /// Semi-axes in pixels, `major >= minor`.
    pub semi_axes_px: (f64, f64),
    pub angle: f64,
    /// Axial semi-axis in mm.
    pub z_semi_mm: f64,
    /// Additive HU offset at the lesion center.
    pub offset_hu: f64,
    /// Tight pixel box of the key-slice lesion mask.
    pub bbox: BBox,
}

impl SynthLesion {
    /// Normalized ellipsoidal radius of pixel `(x, y)` on a slice `dz_mm` from the center.
    pub fn radius(&self, x: usize, y: usize, dz_mm: f64) -> f64 {
        let (dx, dy) = (x as f64 + 0.5 - self.center.0, y as f64 + 0.5 - self.center.1);
        let (s, c) = self.angle.sin_cos();
        let xr = dx * c + dy * s;
        let yr = -dx * s + dy * c;
        ((xr / self.semi_axes_px.0).powi(2) + (yr / self.semi_axes_px.1).powi(2) + (dz_mm / self.z_semi_mm).powi(2)).sqrt()
    }
}

/// One generated case.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthCase {
    pub volume: HuVolume,
    pub annotations: Vec<BoxAnnotation>,
    pub lesions: Vec<SynthLesion>,
}

/// Longest diameter in mm of a lesion spanning `diameter_px` pixels.
pub fn lesion_size_mm(diameter_px: f64, spacing_mm: f64) -> f64 {
    diameter_px * spacing_mm
}

fn background_field(phantom: &Phantom, cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let n = cfg.image_size;
    let noise = Normal::new(0.0, cfg.noise_hu.max(f64::MIN_POSITIVE)).expect("finite sigma");
    let mut field = Vec::with_capacity(cfg.slices * n * n);
    for _ in 0..cfg.slices {
        for y in 0..n {
            for x in 0..n {
                let (u, v) = ((x as f64 + 0.5) / n as f64, (y as f64 + 0.5) / n as f64);
                let eps = if cfg.noise_hu > 0.0 { noise.sample(rng) } else { 0.0 };
                field.push(phantom.tissue(u, v) + eps);
            }
        }
    }
    field
}

fn quantize(field: &[f64]) -> Vec<i16> {
    field.iter().map(|&v| v.round().clamp(HU_MIN, HU_MAX) as i16).collect()
}

fn streams(seed: u64) -> (ChaCha8Rng, ChaCha8Rng) {
    let mut anatomy = ChaCha8Rng::seed_from_u64(seed);
    anatomy.set_stream(0);
    let mut lesions = ChaCha8Rng::seed_from_u64(seed);
    lesions.set_stream(1);
    (anatomy, lesions)
}

/// The case for `seed` rendered without lesions; identical anatomy and noise.
pub fn render_background(seed: u64, cfg: &SynthConfig) -> Result<HuVolume> {
    cfg.validate()?;
    let (mut anatomy, _) = streams(seed);
    let phantom = Phantom::draw(&mut anatomy);
    let field = background_field(&phantom, cfg, &mut anatomy);
    let n = cfg.image_size;
    HuVolume::new(cfg.slices, n, n, quantize(&field), [cfg.spacing_xy_mm, cfg.spacing_xy_mm, cfg.spacing_z_mm])
}

fn place_lesion(
    phantom: &Phantom,
    cfg: &SynthConfig,
    rng: &mut ChaCha8Rng,
    placed: &[SynthLesion],
) -> Option<SynthLesion> {
    let n = cfg.image_size as f64;
    let organ = cfg.organs[rng.gen_range(0..cfg.organs.len())];
    let diameter_mm = rng.gen_range(cfg.diameter_min_mm..=cfg.diameter_max_mm);
    let major = diameter_mm / (2.0 * cfg.spacing_xy_mm);
    let minor = major * rng.gen_range(0.65..=1.0);
    let angle = rng.gen_range(0.0..std::f64::consts::PI);
    let z_semi_mm = 0.5 * diameter_mm * rng.gen_range(0.7..=1.0);
    let offset_hu = match organ {
        Organ::LNG => rng.gen_range(0.0..=60.0) - phantom.lung_hu,
        Organ::BN => -rng.gen_range(250.0..=450.0),
        _ => {
            let mag = rng.gen_range(cfg.contrast_min_hu..=cfg.contrast_max_hu);
            if rng.gen_bool(0.7) {
                -mag
            } else {
                mag
            }
        }
    };
    let margin = major + 1.0;
    if 2.0 * margin >= n {
        return None;
    }
    for _ in 0..400 {
        let cx = rng.gen_range(margin..n - margin);
        let cy = rng.gen_range(margin..n - margin);
        if !phantom.hosts(organ, cx / n, cy / n) {
            continue;
        }
        let clear = placed.iter().all(|o| {
            let d = ((o.center.0 - cx).powi(2) + (o.center.1 - cy).powi(2)).sqrt();
            d > 1.5 * (o.semi_axes_px.0 + major) + 4.0
        });
        if !clear {
            continue;
        }
        let mut lesion = SynthLesion {
            organ,
            center: (cx, cy),
            semi_axes_px: (major, minor),
            angle,
            z_semi_mm,
            offset_hu,
            bbox: BBox::new(0.0, 0.0, 0.0, 0.0),
        };
        let (mut x0, mut y0, mut x1, mut y1) = (usize::MAX, usize::MAX, 0, 0);
        // a footprint reaching into air would be clipped at the HU floor
        let mut inside_body = true;
        for y in 0..cfg.image_size {
            for x in 0..cfg.image_size {
                if lesion.radius(x, y, 0.0) <= 1.0 {
                    inside_body &= phantom.body.contains((x as f64 + 0.5) / n, (y as f64 + 0.5) / n);
                    x0 = x0.min(x);
                    y0 = y0.min(y);
                    x1 = x1.max(x);
                    y1 = y1.max(y);
                }
            }
        }
        if x0 == usize::MAX || !inside_body {
            continue;
        }
        lesion.bbox = BBox::new(x0 as f64, y0 as f64, (x1 + 1) as f64, (y1 + 1) as f64);
        return Some(lesion);
    }
    None
}

/// Generates one case. Deterministic in `seed`; a zero lesion count yields a
/// negative case with no annotations.
pub fn synth_generate(image_id: &str, seed: u64, cfg: &SynthConfig) -> Result<SynthCase> {
    cfg.validate()?;
    let (mut anatomy, mut lesion_rng) = streams(seed);
    let phantom = Phantom::draw(&mut anatomy);
    let mut field = background_field(&phantom, cfg, &mut anatomy);

    let count = lesion_rng.gen_range(cfg.lesions_min..=cfg.lesions_max);
    let mut lesions = Vec::with_capacity(count);
    for _ in 0..count {
        if let Some(l) = place_lesion(&phantom, cfg, &mut lesion_rng, &lesions) {
            lesions.push(l);
        }
    }

    let n = cfg.image_size;
    let key = cfg.slices / 2;
    for (z, plane) in field.chunks_mut(n * n).enumerate() {
        let dz = (z as f64 - key as f64) * cfg.spacing_z_mm;
        for l in &lesions {
            for y in 0..n {
                for x in 0..n {
                    let r = l.radius(x, y, dz);
                    let w = 1.0 / (1.0 + ((r - 1.0) / cfg.edge_softness).exp());
                    plane[y * n + x] += l.offset_hu * w;
                }
            }
        }
    }

    let annotations = lesions
        .iter()
        .map(|l| {
            let size_mm = lesion_size_mm(2.0 * l.semi_axes_px.0, cfg.spacing_xy_mm);
            BoxAnnotation::new(image_id, l.bbox, l.organ, size_mm)
        })
        .collect::<Result<Vec<_>>>()?;
    let volume = HuVolume::new(
        cfg.slices,
        n,
        n,
        quantize(&field),
        [cfg.spacing_xy_mm, cfg.spacing_xy_mm, cfg.spacing_z_mm],
    )?;
    Ok(SynthCase {
        volume,
        annotations,
        lesions,
    })
}

/// Image id of case `index` in a generated dataset.
pub fn case_id(index: usize) -> String {
    format!("img_{index:04}")
}

/// `count` cases with ids `img_0000..`, seeds derived from `seed`.
pub fn synth_dataset(seed: u64, count: usize, cfg: &SynthConfig) -> Result<Vec<(String, SynthCase)>> {
    (0..count)
        .map(|i| {
            let id = case_id(i);
            synth_generate(&id, derive_seed(seed, i as u64), cfg).map(|c| (id, c))
        })
        .collect()
}
