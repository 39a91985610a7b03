use super::Image;

/// Pixels at or below this HU value count as background air.
pub const AIR_THRESHOLD_HU: f64 = -1000.0;

/// Placement of a crop inside its source image: cropped `(x, y)` maps back
/// to `(x + x0, y + y0)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CropRect {
    pub x0: usize,
    pub y0: usize,
    pub width: usize,
    pub height: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClipResult {
    pub image: Image,
    pub rect: CropRect,
    /// Set when every pixel is at or below the air threshold.
    pub fully_black: bool,
}

/// Removes boundary rows and columns that are entirely air. Interior air is
/// untouched.
pub fn clip_black_borders(slice: &Image) -> ClipResult {
    clip_with_threshold(slice, AIR_THRESHOLD_HU)
}

pub fn clip_with_threshold(slice: &Image, threshold: f64) -> ClipResult {
    let (h, w) = (slice.height(), slice.width());
    let mut bounds: Option<(usize, usize, usize, usize)> = None;
    for y in 0..h {
        for (x, &v) in slice.row(y).iter().enumerate() {
            if v > threshold {
                bounds = Some(match bounds {
                    None => (x, y, x, y),
                    Some((x0, y0, x1, y1)) => (x0.min(x), y0.min(y), x1.max(x), y1.max(y)),
                });
            }
        }
    }
    match bounds {
        None => {
            log::warn!("slice of {h}x{w} is entirely air; keeping a 1x1 crop");
            let rect = CropRect {
                x0: 0,
                y0: 0,
                width: 1,
                height: 1,
            };
            ClipResult {
                image: slice.crop(0, 0, 1, 1),
                rect,
                fully_black: true,
            }
        }
        Some((x0, y0, x1, y1)) => {
            let rect = CropRect {
                x0,
                y0,
                width: x1 - x0 + 1,
                height: y1 - y0 + 1,
            };
            ClipResult {
                image: slice.crop(rect.x0, rect.y0, rect.width, rect.height),
                rect,
                fully_black: false,
            }
        }
    }
}
