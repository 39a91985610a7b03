//! Turning head outputs into scored boxes, and non-maximum suppression.

use std::cmp::Ordering;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::BBox;
use crate::model::LevelOutput;
use crate::numerics::{sigmoid, Graph, Scalar};

use super::targets::LevelGeometry;

/// Head outputs of one level copied off the tape.
#[derive(Clone, Debug, PartialEq)]
pub struct HeadOutput {
    pub level: usize,
    pub geometry: LevelGeometry,
    pub cls: Vec<f64>,
    /// Channel-major `(l, t, r, b)` planes.
    pub reg: Vec<f64>,
    pub ctr: Vec<f64>,
}

impl HeadOutput {
    pub fn from_graph<T: Scalar>(g: &Graph<T>, out: &LevelOutput) -> Self {
        let s = g.shape(out.cls);
        let read = |v| g.value(v).data().iter().map(|x: &T| x.to_f64_lossy()).collect::<Vec<f64>>();
        HeadOutput {
            level: out.level,
            geometry: LevelGeometry {
                stride: out.stride,
                height: s[1],
                width: s[2],
            },
            cls: read(out.cls),
            reg: read(out.reg),
            ctr: read(out.ctr),
        }
    }

    pub fn ltrb(&self, i: usize) -> [f64; 4] {
        let n = self.geometry.len();
        [0, 1, 2, 3].map(|c| self.reg[c * n + i])
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Detection {
    pub bbox: BBox,
    pub score: f64,
    pub cls_prob: f64,
    pub ctr_prob: f64,
    pub level: usize,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DecodeConfig {
    pub score_threshold: f64,
    pub topk_per_level: usize,
    pub nms_iou: f64,
    /// Cap on detections per image after suppression.
    pub max_detections: usize,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        DecodeConfig {
            score_threshold: 0.05,
            topk_per_level: 100,
            nms_iou: 0.5,
            max_detections: 100,
        }
    }
}

/// Box spanned by side distances around image location `(x, y)`.
pub fn box_from_ltrb(x: f64, y: f64, d: [f64; 4]) -> BBox {
    BBox::new(x - d[0], y - d[1], x + d[2], y + d[3])
}

/// Combined score of a location.
pub fn location_score(cls_prob: f64, ctr_prob: f64) -> f64 {
    (cls_prob * ctr_prob).sqrt()
}

/// Scores every location, keeps those above the threshold, and returns at most
/// `topk` of them in descending score order, boxes clipped to the image.
pub fn decode(out: &HeadOutput, score_threshold: f64, topk: usize, image_width: f64, image_height: f64) -> Vec<Detection> {
    let geo = out.geometry;
    let mut dets: Vec<(usize, Detection)> = (0..geo.len())
        .filter_map(|i| {
            let cls_prob = sigmoid(out.cls[i]);
            let ctr_prob = sigmoid(out.ctr[i]);
            let score = location_score(cls_prob, ctr_prob);
            if !(score > score_threshold) {
                return None;
            }
            let (x, y) = geo.location(i / geo.width, i % geo.width);
            let bbox = box_from_ltrb(x, y, out.ltrb(i)).clip(image_width, image_height);
            bbox.is_valid().then_some((
                i,
                Detection {
                    bbox,
                    score,
                    cls_prob,
                    ctr_prob,
                    level: out.level,
                },
            ))
        })
        .collect();
    dets.sort_by(|a, b| b.1.score.total_cmp(&a.1.score).then(a.0.cmp(&b.0)));
    dets.truncate(topk);
    dets.into_iter().map(|(_, d)| d).collect()
}

/// Descending score, then ascending `x1`, `y1`, `x2`, `y2`.
pub fn detection_order(a: &Detection, b: &Detection) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then(a.bbox.x1.total_cmp(&b.bbox.x1))
        .then(a.bbox.y1.total_cmp(&b.bbox.y1))
        .then(a.bbox.x2.total_cmp(&b.bbox.x2))
        .then(a.bbox.y2.total_cmp(&b.bbox.y2))
}

/// Greedy suppression: a box is dropped when its IoU with an already kept
/// box exceeds `iou_threshold`.
pub fn nms(dets: &[Detection], iou_threshold: f64) -> Vec<Detection> {
    let mut order = dets.to_vec();
    order.sort_by(detection_order);
    let mut kept: Vec<Detection> = Vec::with_capacity(order.len());
    for d in order {
        if kept.iter().all(|k| k.bbox.iou(&d.bbox) <= iou_threshold) {
            kept.push(d);
        }
    }
    kept
}

/// Decodes all levels of one image, merges them and applies NMS.
pub fn postprocess(levels: &[HeadOutput], cfg: &DecodeConfig, image_width: f64, image_height: f64) -> Vec<Detection> {
    let all: Vec<Detection> = levels
        .iter()
        .flat_map(|l| decode(l, cfg.score_threshold, cfg.topk_per_level, image_width, image_height))
        .collect();
    let mut kept = nms(&all, cfg.nms_iou);
    kept.truncate(cfg.max_detections);
    kept
}

/// One row of the detections table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectionRow {
    pub image_id: String,
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
    pub score: f64,
}

impl DetectionRow {
    pub fn new(image_id: &str, d: &Detection) -> Self {
        DetectionRow {
            image_id: image_id.to_string(),
            x1: d.bbox.x1,
            y1: d.bbox.y1,
            x2: d.bbox.x2,
            y2: d.bbox.y2,
            score: d.score,
        }
    }

    pub fn bbox(&self) -> BBox {
        BBox::new(self.x1, self.y1, self.x2, self.y2)
    }
}

pub const DETECTIONS_HEADER: [&str; 6] = ["image_id", "x1", "y1", "x2", "y2", "score"];

pub fn write_detections(path: &Path, rows: &[DetectionRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::format(path, e.to_string()))?;
    for r in rows {
        w.serialize(r).map_err(|e| Error::format(path, e.to_string()))?;
    }
    if rows.is_empty() {
        w.write_record(DETECTIONS_HEADER).map_err(|e| Error::format(path, e.to_string()))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_detections(path: &Path) -> Result<Vec<DetectionRow>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::format(path, e.to_string()))?;
    let header: Vec<String> = r
        .headers()
        .map_err(|e| Error::format(path, e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();
    if header != DETECTIONS_HEADER {
        return Err(Error::format(path, format!("expected header {:?}, got {header:?}", DETECTIONS_HEADER)));
    }
    let mut rows = Vec::new();
    for (i, rec) in r.deserialize().enumerate() {
        let row: DetectionRow = rec.map_err(|e| Error::format(path, format!("row {}: {e}", i + 1)))?;
        if !(row.score.is_finite() && (0.0..=1.0).contains(&row.score)) {
            return Err(Error::format(path, format!("row {}: score {} outside [0, 1]", i + 1, row.score)));
        }
        rows.push(row);
    }
    Ok(rows)
}
