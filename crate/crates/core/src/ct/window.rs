use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Scalar, Tensor};

use super::Image;

/// How a bracketed window pair `[a, b]` is read.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum WindowConvention {
    /// `[level, width]`
    #[default]
    LevelWidth,
    /// `[min, max]`
    MinMax,
}

impl std::str::FromStr for WindowConvention {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "level_width" => Ok(WindowConvention::LevelWidth),
            "min_max" => Ok(WindowConvention::MinMax),
            other => Err(format!("unknown window convention {other:?} (level_width|min_max)")),
        }
    }
}

impl std::fmt::Display for WindowConvention {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            WindowConvention::LevelWidth => "level_width",
            WindowConvention::MinMax => "min_max",
        })
    }
}

/// HU display window. Maps `[level - width/2, level + width/2]` onto `[0,1]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WindowSpec {
    pub name: String,
    pub level: f64,
    pub width: f64,
}

impl WindowSpec {
    pub fn new(name: impl Into<String>, level: f64, width: f64) -> Result<Self> {
        if !(width > 0.0) || !level.is_finite() || !width.is_finite() {
            return Err(Error::Config(format!("window width must be > 0, got level {level} width {width}")));
        }
        Ok(WindowSpec {
            name: name.into(),
            level,
            width,
        })
    }

    pub fn from_pair(name: impl Into<String>, a: f64, b: f64, convention: WindowConvention) -> Result<Self> {
        match convention {
            WindowConvention::LevelWidth => WindowSpec::new(name, a, b),
            WindowConvention::MinMax => WindowSpec::new(name, 0.5 * (a + b), b - a),
        }
    }

    pub fn min(&self) -> f64 {
        self.level - 0.5 * self.width
    }

    pub fn max(&self) -> f64 {
        self.level + 0.5 * self.width
    }

    #[inline]
    pub fn normalize(&self, hu: f64) -> f64 {
        ((hu - self.min()) / self.width).clamp(0.0, 1.0)
    }
}

/// The five tissue windows as published bracket pairs, in order
/// bone, lung, mediastinum, abdomen (liver/kidney), soft tissue.
pub const DEFAULT_WINDOW_PAIRS: [(&str, f64, f64); 5] = [
    ("bone", 400.0, 2000.0),
    ("lung", -600.0, 1500.0),
    ("mediastinum", 50.0, 350.0),
    ("abdomen", 30.0, 150.0),
    ("soft_tissue", 50.0, 400.0),
];

/// Single wide window used when only one window is requested.
pub const FULL_RANGE_PAIR: (&str, f64, f64) = ("full_range", 1024.0, 4096.0);

pub fn default_windows() -> Vec<WindowSpec> {
    windows_with_convention(WindowConvention::LevelWidth)
}

pub fn windows_with_convention(convention: WindowConvention) -> Vec<WindowSpec> {
    DEFAULT_WINDOW_PAIRS
        .iter()
        .map(|&(n, a, b)| WindowSpec::from_pair(n, a, b, convention).expect("published windows are valid"))
        .collect()
}

/// Window set for the 1/3/5-window configurations.
///
/// One window is the full-range window; three are bone, lung and soft tissue.
pub fn windows_for_count(count: usize, convention: WindowConvention) -> Result<Vec<WindowSpec>> {
    let all = windows_with_convention(convention);
    match count {
        1 => {
            let (n, a, b) = FULL_RANGE_PAIR;
            Ok(vec![WindowSpec::from_pair(n, a, b, convention)?])
        }
        3 => Ok(vec![all[0].clone(), all[1].clone(), all[4].clone()]),
        5 => Ok(all),
        other => Err(Error::Config(format!("number of windows must be 1, 3 or 5, got {other}"))),
    }
}

pub fn hu_window_normalize(slice: &Image, window: &WindowSpec) -> Image {
    slice.map(|v| window.normalize(v))
}

/// One windowed image per window, each with three channels
/// (inferior, key, superior slice).
#[derive(Clone, Debug, PartialEq)]
pub struct MultiIntensityStack {
    pub window_names: Vec<String>,
    pub images: Vec<[Image; 3]>,
}

impl MultiIntensityStack {
    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn height(&self) -> usize {
        self.images[0][0].height()
    }

    pub fn width(&self) -> usize {
        self.images[0][0].width()
    }

    /// Windowed image `i` as a `[3,H,W]` tensor.
    pub fn tensor<T: Scalar>(&self, i: usize) -> Tensor<T> {
        let (h, w) = (self.height(), self.width());
        let mut data = Vec::with_capacity(3 * h * w);
        for ch in &self.images[i] {
            data.extend(ch.data().iter().map(|&v| T::lit(v)));
        }
        Tensor::new(vec![3, h, w], data).expect("stack extents")
    }

    pub fn tensors<T: Scalar>(&self) -> Vec<Tensor<T>> {
        (0..self.len()).map(|i| self.tensor(i)).collect()
    }
}

pub fn build_multi_intensity(slices: &[Image; 3], windows: &[WindowSpec]) -> Result<MultiIntensityStack> {
    let (h, w) = (slices[0].height(), slices[0].width());
    if slices.iter().any(|s| s.height() != h || s.width() != w) {
        return Err(Error::Dimension("the three slices must share height and width".into()));
    }
    if windows.is_empty() {
        return Err(Error::Config("at least one window is required".into()));
    }
    let images = windows
        .iter()
        .map(|win| {
            [
                hu_window_normalize(&slices[0], win),
                hu_window_normalize(&slices[1], win),
                hu_window_normalize(&slices[2], win),
            ]
        })
        .collect();
    Ok(MultiIntensityStack {
        window_names: windows.iter().map(|w| w.name.clone()).collect(),
        images,
    })
}
