use crate::geometry::BBox;

/// Outcome of matching one image's detections to its lesions.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MatchResult {
    /// Matched lesion per detection, in input order; `None` is a false positive.
    pub det_match: Vec<Option<usize>>,
    /// Matching detection per lesion.
    pub gt_hit: Vec<Option<usize>>,
}

impl MatchResult {
    pub fn is_tp(&self, det: usize) -> bool {
        self.det_match[det].is_some()
    }
}

/// Greedy matching in input order (callers sort by descending score): each
/// detection takes the unmatched lesion of highest IoU, provided the IoU is at
/// least `iou_threshold`. IoU ties go to the lower lesion index.
pub fn match_detections(dets: &[BBox], gts: &[BBox], iou_threshold: f64) -> MatchResult {
    let mut gt_hit = vec![None; gts.len()];
    let det_match = dets
        .iter()
        .enumerate()
        .map(|(di, d)| {
            let mut best: Option<(f64, usize)> = None;
            for (gi, g) in gts.iter().enumerate() {
                if gt_hit[gi].is_some() {
                    continue;
                }
                let iou = d.iou(g);
                if iou >= iou_threshold && best.map_or(true, |(b, _)| iou > b) {
                    best = Some((iou, gi));
                }
            }
            best.map(|(_, gi)| {
                gt_hit[gi] = Some(di);
                gi
            })
        })
        .collect();
    MatchResult { det_match, gt_hit }
}
