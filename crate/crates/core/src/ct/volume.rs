use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::Image;

/// Voxel spacing the detector is trained at, `(x, y, z)` in mm.
pub const TARGET_SPACING_MM: [f64; 3] = [0.8, 0.8, 2.0];

pub const HU_MIN: f64 = -1024.0;
pub const HU_MAX: f64 = 3071.0;

/// CT volume in Hounsfield units, stored `[depth][height][width]`.
#[derive(Clone, Debug, PartialEq)]
pub struct HuVolume {
    depth: usize,
    height: usize,
    width: usize,
    voxels: Vec<i16>,
    /// `(x, y, z)` in mm.
    spacing_mm: [f64; 3],
}

impl HuVolume {
    pub fn new(depth: usize, height: usize, width: usize, voxels: Vec<i16>, spacing_mm: [f64; 3]) -> Result<Self> {
        if depth == 0 || height == 0 || width == 0 {
            return Err(Error::Dimension(format!("volume extents must be >= 1, got {depth}x{height}x{width}")));
        }
        if voxels.len() != depth * height * width {
            return Err(Error::Dimension(format!(
                "volume {depth}x{height}x{width} cannot hold {} voxels",
                voxels.len()
            )));
        }
        if spacing_mm.iter().any(|&s| !(s > 0.0) || !s.is_finite()) {
            return Err(Error::Data(format!("voxel spacing must be positive, got {spacing_mm:?}")));
        }
        Ok(HuVolume {
            depth,
            height,
            width,
            voxels,
            spacing_mm,
        })
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn spacing_mm(&self) -> [f64; 3] {
        self.spacing_mm
    }

    pub fn voxels(&self) -> &[i16] {
        &self.voxels
    }

    pub fn get(&self, z: usize, y: usize, x: usize) -> i16 {
        self.voxels[(z * self.height + y) * self.width + x]
    }

    pub fn slice(&self, z: usize) -> Image {
        let plane = self.height * self.width;
        let data = self.voxels[z * plane..(z + 1) * plane].iter().map(|&v| v as f64).collect();
        Image::new(self.height, self.width, data).expect("non-empty slice")
    }

    /// `(inferior, key, superior)` slices around `key`, repeating the edge
    /// slice at volume boundaries.
    pub fn key_triplet(&self, key: usize) -> [Image; 3] {
        assert!(key < self.depth, "key slice {key} outside depth {}", self.depth);
        let below = key.saturating_sub(1);
        let above = (key + 1).min(self.depth - 1);
        [self.slice(below), self.slice(key), self.slice(above)]
    }

    pub fn key_index(&self) -> usize {
        self.depth / 2
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct VolumeMeta {
    /// `[depth, height, width]`
    shape: [usize; 3],
    spacing_mm: [f64; 3],
    dtype: String,
    hu_offset: i32,
}

pub const VOLUME_META_FILE: &str = "meta.json";
pub const VOLUME_VOXELS_FILE: &str = "voxels.raw";

/// Writes `meta.json` and little-endian int16 `voxels.raw` into `dir`.
pub fn write_volume(dir: &Path, vol: &HuVolume) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let meta = VolumeMeta {
        shape: [vol.depth, vol.height, vol.width],
        spacing_mm: vol.spacing_mm,
        dtype: "int16".into(),
        hu_offset: 0,
    };
    let meta_path = dir.join(VOLUME_META_FILE);
    let json = serde_json::to_string_pretty(&meta).expect("meta serializes");
    std::fs::write(&meta_path, json + "\n").map_err(|e| Error::io(&meta_path, e))?;
    let mut raw = Vec::with_capacity(vol.voxels.len() * 2);
    for v in &vol.voxels {
        raw.extend_from_slice(&v.to_le_bytes());
    }
    let raw_path = dir.join(VOLUME_VOXELS_FILE);
    std::fs::write(&raw_path, raw).map_err(|e| Error::io(&raw_path, e))
}

pub fn read_volume(dir: &Path) -> Result<HuVolume> {
    let meta_path = dir.join(VOLUME_META_FILE);
    let text = std::fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
    let meta: VolumeMeta = serde_json::from_str(&text).map_err(|e| Error::format(&meta_path, e.to_string()))?;
    if meta.dtype != "int16" {
        return Err(Error::format(&meta_path, format!("unsupported dtype {}", meta.dtype)));
    }
    let raw_path = dir.join(VOLUME_VOXELS_FILE);
    let raw = std::fs::read(&raw_path).map_err(|e| Error::io(&raw_path, e))?;
    let [d, h, w] = meta.shape;
    if raw.len() != 2 * d * h * w {
        return Err(Error::format(
            &raw_path,
            format!("expected {} bytes for shape {:?}, found {}", 2 * d * h * w, meta.shape, raw.len()),
        ));
    }
    let voxels = raw
        .chunks_exact(2)
        .map(|c| (i16::from_le_bytes([c[0], c[1]]) as i32 + meta.hu_offset).clamp(i16::MIN as i32, i16::MAX as i32) as i16)
        .collect();
    HuVolume::new(d, h, w, voxels, meta.spacing_mm)
}

/// Linear interpolation taps for resampling one axis from `old_spacing` to
/// `new_spacing`, on voxel centers.
fn axis_taps(n: usize, old_spacing: f64, new_spacing: f64) -> Vec<(usize, usize, f64)> {
    let m = ((n as f64 * old_spacing / new_spacing).round() as usize).max(1);
    let ratio = new_spacing / old_spacing;
    (0..m)
        .map(|o| {
            let src = ((o as f64 + 0.5) * ratio - 0.5).clamp(0.0, (n - 1) as f64);
            let i0 = src.floor() as usize;
            let i1 = (i0 + 1).min(n - 1);
            (i0, i1, if i0 == i1 { 0.0 } else { src - i0 as f64 })
        })
        .collect()
}

/// Trilinear resampling to `target` spacing `(x, y, z)` mm. New extent per
/// axis is `round(extent * spacing / target)`.
pub fn resample_to_spacing(vol: &HuVolume, target: [f64; 3]) -> Result<HuVolume> {
    if target.iter().any(|&s| !(s > 0.0)) {
        return Err(Error::Config(format!("target spacing must be positive, got {target:?}")));
    }
    if vol.spacing_mm == target {
        return Ok(vol.clone());
    }
    let tx = axis_taps(vol.width, vol.spacing_mm[0], target[0]);
    let ty = axis_taps(vol.height, vol.spacing_mm[1], target[1]);
    let tz = axis_taps(vol.depth, vol.spacing_mm[2], target[2]);
    let (d, h, w) = (tz.len(), ty.len(), tx.len());

    // separable passes: x, then y, then z
    let src: Vec<f64> = vol.voxels.iter().map(|&v| v as f64).collect();
    let mut px = vec![0.0; vol.depth * vol.height * w];
    for row in 0..vol.depth * vol.height {
        let s = &src[row * vol.width..(row + 1) * vol.width];
        for (o, &(a, b, f)) in tx.iter().enumerate() {
            px[row * w + o] = s[a] * (1.0 - f) + s[b] * f;
        }
    }
    let mut py = vec![0.0; vol.depth * h * w];
    for z in 0..vol.depth {
        for (o, &(a, b, f)) in ty.iter().enumerate() {
            for x in 0..w {
                let va = px[(z * vol.height + a) * w + x];
                let vb = px[(z * vol.height + b) * w + x];
                py[(z * h + o) * w + x] = va * (1.0 - f) + vb * f;
            }
        }
    }
    let mut voxels = Vec::with_capacity(d * h * w);
    for &(a, b, f) in &tz {
        for i in 0..h * w {
            let v = py[a * h * w + i] * (1.0 - f) + py[b * h * w + i] * f;
            voxels.push(v.round().clamp(i16::MIN as f64, i16::MAX as f64) as i16);
        }
    }
    HuVolume::new(d, h, w, voxels, target)
}
