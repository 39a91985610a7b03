use std::collections::BTreeMap;

use crate::ct::BoxAnnotation;
use crate::detect::DetectionRow;
use crate::error::{Error, Result};
use crate::geometry::BBox;

use super::matching::match_detections;

/// False positives per image at which sensitivity is reported.
pub const DEFAULT_FP_POINTS: [f64; 4] = [0.5, 1.0, 2.0, 4.0];

/// Mean of operating-point sensitivities.
pub fn average_sensitivity(points: &[f64]) -> f64 {
    points.iter().sum::<f64>() / points.len() as f64
}

/// A detection after matching, in global sweep order.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoredDetection {
    pub image_id: String,
    pub bbox: BBox,
    pub score: f64,
    /// Index into the lesion list of the evaluation when this is a hit.
    pub lesion: Option<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FrocResult {
    pub fp_points: Vec<f64>,
    pub sensitivities: Vec<f64>,
    pub average: f64,
    /// `(fp_per_image, sensitivity)` after each distinct score, starting at `(0, 0)`.
    pub curve: Vec<(f64, f64)>,
    /// Lowest admitted score at each operating point; `None` when no detection is admitted.
    pub thresholds: Vec<Option<f64>>,
    pub num_images: usize,
    pub num_lesions: usize,
}

/// Matched detections plus the lesion list they refer to.
#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub detections: Vec<ScoredDetection>,
    pub lesions: Vec<BoxAnnotation>,
    pub num_images: usize,
}

fn row_order(a: &DetectionRow, b: &DetectionRow) -> std::cmp::Ordering {
    b.score
        .total_cmp(&a.score)
        .then(a.x1.total_cmp(&b.x1))
        .then(a.y1.total_cmp(&b.y1))
        .then(a.x2.total_cmp(&b.x2))
        .then(a.y2.total_cmp(&b.y2))
}

/// Matches detections to lesions image by image. The image set is the union
/// of image ids in both tables.
pub fn evaluate_matches(dets: &[DetectionRow], gts: &[BoxAnnotation], iou_threshold: f64) -> Evaluation {
    let mut by_image: BTreeMap<&str, (Vec<&DetectionRow>, Vec<usize>)> = BTreeMap::new();
    for d in dets {
        by_image.entry(d.image_id.as_str()).or_default().0.push(d);
    }
    for (i, g) in gts.iter().enumerate() {
        by_image.entry(g.image_id.as_str()).or_default().1.push(i);
    }
    let mut detections = Vec::with_capacity(dets.len());
    for (&id, (ds, gis)) in &by_image {
        let mut ds = ds.clone();
        ds.sort_by(|a, b| row_order(a, b));
        let boxes: Vec<BBox> = ds.iter().map(|d| d.bbox()).collect();
        let gboxes: Vec<BBox> = gis.iter().map(|&i| gts[i].bbox).collect();
        let m = match_detections(&boxes, &gboxes, iou_threshold);
        for (k, d) in ds.iter().enumerate() {
            detections.push(ScoredDetection {
                image_id: id.to_string(),
                bbox: d.bbox(),
                score: d.score,
                lesion: m.det_match[k].map(|j| gis[j]),
            });
        }
    }
    detections.sort_by(|a, b| b.score.total_cmp(&a.score));
    Evaluation {
        detections,
        lesions: gts.to_vec(),
        num_images: by_image.len(),
    }
}

/// Number of leading detections admitted after each distinct score, paired
/// with the cumulative false positive and hit counts.
pub(crate) fn sweep(ev: &Evaluation) -> Vec<(usize, usize, usize)> {
    let mut out = vec![(0, 0, 0)];
    let (mut fp, mut hits) = (0, 0);
    let d = &ev.detections;
    let mut i = 0;
    while i < d.len() {
        let s = d[i].score;
        while i < d.len() && d[i].score == s {
            if d[i].lesion.is_some() {
                hits += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        out.push((i, fp, hits));
    }
    out
}

/// Index into [`sweep`] of the operating point for `fp_rate`: the last sweep
/// step whose false positives per image do not exceed it.
pub(crate) fn operating_step(steps: &[(usize, usize, usize)], num_images: usize, fp_rate: f64) -> usize {
    steps
        .iter()
        .rposition(|&(_, fp, _)| fp as f64 / num_images as f64 <= fp_rate)
        .unwrap_or(0)
}

/// Sensitivity at each false-positive rate under the step-function convention.
pub fn froc_from_matches(ev: &Evaluation, fp_points: &[f64]) -> Result<FrocResult> {
    if ev.lesions.is_empty() {
        return Err(Error::Data("sensitivity is undefined without ground-truth lesions".into()));
    }
    if ev.num_images == 0 {
        return Err(Error::Data("no images to evaluate".into()));
    }
    let n_img = ev.num_images as f64;
    let n_les = ev.lesions.len() as f64;
    let steps = sweep(ev);
    let curve = steps.iter().map(|&(_, fp, h)| (fp as f64 / n_img, h as f64 / n_les)).collect();
    let mut sensitivities = Vec::with_capacity(fp_points.len());
    let mut thresholds = Vec::with_capacity(fp_points.len());
    for &f in fp_points {
        let k = operating_step(&steps, ev.num_images, f);
        let (admitted, _, hits) = steps[k];
        sensitivities.push(hits as f64 / n_les);
        thresholds.push((admitted > 0).then(|| ev.detections[admitted - 1].score));
    }
    Ok(FrocResult {
        fp_points: fp_points.to_vec(),
        average: average_sensitivity(&sensitivities),
        sensitivities,
        curve,
        thresholds,
        num_images: ev.num_images,
        num_lesions: ev.lesions.len(),
    })
}

/// Matches and sweeps in one call.
pub fn froc(dets: &[DetectionRow], gts: &[BoxAnnotation], fp_points: &[f64], iou_threshold: f64) -> Result<FrocResult> {
    froc_from_matches(&evaluate_matches(dets, gts, iou_threshold), fp_points)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn published_row_average() {
        let avg = average_sensitivity(&[78.30, 84.51, 88.99, 92.40]);
        assert!((avg - 86.05).abs() <= 0.005);
    }
}
