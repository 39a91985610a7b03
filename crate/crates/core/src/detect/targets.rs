//! Per-location training targets.

use crate::geometry::BBox;
use crate::model::{LEVEL_STRIDES, NUM_LEVELS, SIZE_DIVISOR};

/// Regression ranges `(lo, hi]` on `max(l, t, r, b)` for P2..P6.
pub const DEFAULT_LEVEL_RANGES: [(f64, f64); NUM_LEVELS] = [
    (0.0, 32.0),
    (32.0, 64.0),
    (64.0, 128.0),
    (128.0, 256.0),
    (256.0, f64::INFINITY),
];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LevelGeometry {
    pub stride: usize,
    pub height: usize,
    pub width: usize,
}

impl LevelGeometry {
    pub fn len(&self) -> usize {
        self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Image coordinates of the center of cell `(row, col)`.
    pub fn location(&self, row: usize, col: usize) -> (f64, f64) {
        let s = self.stride as f64;
        ((col as f64 + 0.5) * s, (row as f64 + 0.5) * s)
    }
}

/// Level sizes for an unpadded `height × width` input.
pub fn pyramid_geometry(height: usize, width: usize) -> [LevelGeometry; NUM_LEVELS] {
    let ph = height.div_ceil(SIZE_DIVISOR) * SIZE_DIVISOR;
    let pw = width.div_ceil(SIZE_DIVISOR) * SIZE_DIVISOR;
    LEVEL_STRIDES.map(|stride| LevelGeometry {
        stride,
        height: ph.div_ceil(stride),
        width: pw.div_ceil(stride),
    })
}

/// `sqrt(min(l,r)/max(l,r) · min(t,b)/max(t,b))`, zero when either pair is all zero.
pub fn centerness_target(l: f64, t: f64, r: f64, b: f64) -> f64 {
    let ratio = |a: f64, c: f64| {
        let hi = a.max(c);
        if hi > 0.0 {
            a.min(c) / hi
        } else {
            0.0
        }
    };
    (ratio(l, r) * ratio(t, b)).sqrt()
}

/// Targets of one level, row-major over its cells.
#[derive(Clone, Debug, PartialEq)]
pub struct LocationTargets {
    pub geometry: LevelGeometry,
    pub labels: Vec<bool>,
    /// `(l, t, r, b)` at positives, zeros elsewhere.
    pub reg: Vec<[f64; 4]>,
    /// Centerness at positives, zero elsewhere.
    pub ctr: Vec<f64>,
    /// Index of the assigned box at positives.
    pub box_index: Vec<Option<usize>>,
}

impl LocationTargets {
    fn empty(geometry: LevelGeometry) -> Self {
        let n = geometry.len();
        LocationTargets {
            geometry,
            labels: vec![false; n],
            reg: vec![[0.0; 4]; n],
            ctr: vec![0.0; n],
            box_index: vec![None; n],
        }
    }

    pub fn num_positives(&self) -> usize {
        self.labels.iter().filter(|&&p| p).count()
    }

    pub fn positives(&self) -> impl Iterator<Item = usize> + '_ {
        self.labels.iter().enumerate().filter(|(_, &p)| p).map(|(i, _)| i)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Assignment {
    pub levels: Vec<LocationTargets>,
    /// Boxes skipped for having no area.
    pub degenerate: usize,
}

impl Assignment {
    pub fn num_positives(&self) -> usize {
        self.levels.iter().map(LocationTargets::num_positives).sum()
    }
}

/// A cell is positive for the smallest-area box that contains its center
/// strictly inside and whose largest side distance falls in the level range.
pub fn assign_targets(boxes: &[BBox], geometry: &[LevelGeometry], ranges: &[(f64, f64)]) -> Assignment {
    assert_eq!(geometry.len(), ranges.len(), "one regression range per level");
    let valid: Vec<(usize, &BBox)> = boxes.iter().enumerate().filter(|(_, b)| b.area() > 0.0).collect();
    let degenerate = boxes.len() - valid.len();
    if degenerate > 0 {
        log::warn!("{degenerate} degenerate boxes skipped during target assignment");
    }
    let levels = geometry
        .iter()
        .zip(ranges)
        .map(|(geo, &(lo, hi))| {
            let mut t = LocationTargets::empty(*geo);
            for row in 0..geo.height {
                for col in 0..geo.width {
                    let (x, y) = geo.location(row, col);
                    let mut best: Option<(f64, usize, [f64; 4])> = None;
                    for &(bi, b) in &valid {
                        let d = [x - b.x1, y - b.y1, b.x2 - x, b.y2 - y];
                        let dmin = d.iter().copied().fold(f64::INFINITY, f64::min);
                        let dmax = d.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                        if dmin <= 0.0 || dmax <= lo || dmax > hi {
                            continue;
                        }
                        if best.map_or(true, |(area, _, _)| b.area() < area) {
                            best = Some((b.area(), bi, d));
                        }
                    }
                    if let Some((_, bi, d)) = best {
                        let i = row * geo.width + col;
                        t.labels[i] = true;
                        t.reg[i] = d;
                        t.ctr[i] = centerness_target(d[0], d[1], d[2], d[3]);
                        t.box_index[i] = Some(bi);
                    }
                }
            }
            t
        })
        .collect();
    Assignment { levels, degenerate }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn centerness_hand_values() {
        assert_eq!(centerness_target(2.0, 5.0, 2.0, 5.0), 1.0);
        assert_eq!(centerness_target(0.0, 1.0, 3.0, 1.0), 0.0);
        assert!((centerness_target(1.0, 2.0, 3.0, 2.0) - (1.0f64 / 3.0).sqrt()).abs() < 1e-15);
        assert_eq!(centerness_target(0.0, 0.0, 0.0, 0.0), 0.0);
    }

    #[test]
    fn geometry_of_64px_input() {
        let g = pyramid_geometry(64, 64);
        let sizes: Vec<usize> = g.iter().map(|l| l.height).collect();
        assert_eq!(sizes, vec![16, 8, 4, 2, 1]);
        assert_eq!(pyramid_geometry(50, 70)[0].width, 24);
    }

    #[test]
    fn empty_scene_has_no_positives() {
        let a = assign_targets(&[], &pyramid_geometry(64, 64), &DEFAULT_LEVEL_RANGES);
        assert_eq!(a.num_positives(), 0);
    }
}
