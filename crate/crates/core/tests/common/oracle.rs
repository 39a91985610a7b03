//! Brute-force reference implementations, written without reusing library code
//! beyond plain data types.

use std::collections::BTreeSet;

use uld_core::ct::BoxAnnotation;
use uld_core::detect::DetectionRow;
use uld_core::geometry::BBox;

pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let iw = (a.x2.min(b.x2) - a.x1.max(b.x1)).max(0.0);
    let ih = (a.y2.min(b.y2) - a.y1.max(b.y1)).max(0.0);
    let inter = iw * ih;
    let area = |r: &BBox| (r.x2 - r.x1) * (r.y2 - r.y1);
    let union = area(a) + area(b) - inter;
    if union > 0.0 {
        inter / union
    } else {
        0.0
    }
}

/// Per level and row-major cell: the winning box index and its `(l,t,r,b)`.
/// `cells[j] = (stride, height, width)`.
pub fn assign(boxes: &[BBox], cells: &[(usize, usize, usize)], ranges: &[(f64, f64)]) -> Vec<Vec<Option<(usize, [f64; 4])>>> {
    cells
        .iter()
        .zip(ranges)
        .map(|(&(stride, h, w), &(lo, hi))| {
            let mut out = Vec::with_capacity(h * w);
            for row in 0..h {
                for col in 0..w {
                    let x = col as f64 * stride as f64 + stride as f64 / 2.0;
                    let y = row as f64 * stride as f64 + stride as f64 / 2.0;
                    let mut candidates: Vec<(f64, usize, [f64; 4])> = Vec::new();
                    for (i, b) in boxes.iter().enumerate() {
                        let area = (b.x2 - b.x1) * (b.y2 - b.y1);
                        if !(area > 0.0) {
                            continue;
                        }
                        let d = [x - b.x1, y - b.y1, b.x2 - x, b.y2 - y];
                        let inside = d.iter().all(|&v| v > 0.0);
                        let m = d.iter().cloned().fold(f64::MIN, f64::max);
                        if inside && m > lo && m <= hi {
                            candidates.push((area, i, d));
                        }
                    }
                    // smallest area, earliest box on ties
                    candidates.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
                    out.push(candidates.first().map(|&(_, i, d)| (i, d)));
                }
            }
            out
        })
        .collect()
}

fn sig(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// One level of raw head outputs with its targets.
pub struct ToyLevel {
    pub stride: usize,
    pub cls: Vec<f64>,
    /// `[4][cells]` distances.
    pub reg: Vec<f64>,
    pub ctr: Vec<f64>,
    pub targets: Vec<Option<([f64; 4], f64)>>,
}

/// Straight-line loss: per-term sums over every image and level, divided by
/// the positive count (at least one).
pub fn total_loss(batch: &[Vec<ToyLevel>], alpha: f64, gamma: f64, lambda: f64, eps: f64) -> (f64, f64, f64, f64) {
    let (mut cls, mut reg, mut ctr, mut npos) = (0.0, 0.0, 0.0, 0usize);
    for image in batch {
        for level in image {
            let n = level.cls.len();
            for i in 0..n {
                let p = sig(level.cls[i]);
                match level.targets[i] {
                    Some((t, c)) => {
                        npos += 1;
                        cls += -alpha * (1.0 - p).powf(gamma) * p.ln();
                        let pred = [level.reg[i], level.reg[n + i], level.reg[2 * n + i], level.reg[3 * n + i]];
                        // boxes around the origin
                        let pb = BBox::new(-pred[0], -pred[1], pred[2], pred[3]);
                        let tb = BBox::new(-t[0], -t[1], t[2], t[3]);
                        reg += -(iou(&pb, &tb) + eps).ln();
                        let q = sig(level.ctr[i]);
                        ctr += -(c * q.ln() + (1.0 - c) * (1.0 - q).ln());
                    }
                    None => cls += -(1.0 - alpha) * p.powf(gamma) * (1.0 - p).ln(),
                }
            }
        }
    }
    let norm = npos.max(1) as f64;
    let (cls, reg, ctr) = (cls / norm, lambda * reg / norm, ctr / norm);
    (cls + reg + ctr, cls, reg, ctr)
}

/// Greedy suppression with a flag array over the score-sorted list.
/// Returns the kept indices into `boxes`, highest score first.
pub fn nms(boxes: &[BBox], scores: &[f64], thr: f64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..boxes.len()).collect();
    order.sort_by(|&a, &b| {
        scores[b]
            .partial_cmp(&scores[a])
            .unwrap()
            .then(boxes[a].x1.partial_cmp(&boxes[b].x1).unwrap())
            .then(boxes[a].y1.partial_cmp(&boxes[b].y1).unwrap())
            .then(boxes[a].x2.partial_cmp(&boxes[b].x2).unwrap())
            .then(boxes[a].y2.partial_cmp(&boxes[b].y2).unwrap())
    });
    let mut suppressed = vec![false; boxes.len()];
    let mut kept = Vec::new();
    for (k, &i) in order.iter().enumerate() {
        if suppressed[k] {
            continue;
        }
        kept.push(i);
        for (m, &j) in order.iter().enumerate().skip(k + 1) {
            if iou(&boxes[i], &boxes[j]) > thr {
                suppressed[m] = true;
            }
        }
    }
    kept
}

/// Checks a claimed matching against the greedy rule by exhaustive inspection.
/// `det_match[d]` is the lesion taken by detection `d` (detections in rank order).
pub fn matching_is_valid(dets: &[BBox], gts: &[BBox], thr: f64, det_match: &[Option<usize>]) -> Result<(), String> {
    let mut taken = BTreeSet::new();
    for (d, m) in det_match.iter().enumerate() {
        let free: Vec<(usize, f64)> = (0..gts.len())
            .filter(|g| !taken.contains(g))
            .map(|g| (g, iou(&dets[d], &gts[g])))
            .filter(|&(_, v)| v >= thr)
            .collect();
        match m {
            None if !free.is_empty() => return Err(format!("det {d} left unmatched with free lesions {free:?}")),
            None => {}
            Some(g) => {
                let mine = free.iter().find(|(i, _)| i == g).ok_or(format!("det {d} took unavailable lesion {g}"))?.1;
                if free.iter().any(|&(i, v)| v > mine || (v == mine && i < *g)) {
                    return Err(format!("det {d} took lesion {g} over a better free lesion"));
                }
                taken.insert(*g);
            }
        }
    }
    Ok(())
}

/// Curve points and operating-point sensitivities by enumerating every score
/// threshold and re-matching the admitted detections from scratch.
pub fn froc(dets: &[DetectionRow], gts: &[BoxAnnotation], fp_points: &[f64], thr: f64) -> (Vec<(f64, f64)>, Vec<f64>) {
    let images: BTreeSet<&str> = dets.iter().map(|d| d.image_id.as_str()).chain(gts.iter().map(|g| g.image_id.as_str())).collect();
    let n_img = images.len() as f64;
    let n_les = gts.len() as f64;
    let mut thresholds: Vec<f64> = dets.iter().map(|d| d.score).collect();
    thresholds.sort_by(|a, b| b.partial_cmp(a).unwrap());
    thresholds.dedup();
    let mut curve = vec![(0.0, 0.0)];
    for &t in &thresholds {
        let (mut fp, mut hits) = (0usize, 0usize);
        for &img in &images {
            let mut mine: Vec<&DetectionRow> = dets.iter().filter(|d| d.image_id == img && d.score >= t).collect();
            mine.sort_by(|a, b| {
                b.score
                    .partial_cmp(&a.score)
                    .unwrap()
                    .then(a.x1.partial_cmp(&b.x1).unwrap())
                    .then(a.y1.partial_cmp(&b.y1).unwrap())
                    .then(a.x2.partial_cmp(&b.x2).unwrap())
                    .then(a.y2.partial_cmp(&b.y2).unwrap())
            });
            let lesions: Vec<BBox> = gts.iter().filter(|g| g.image_id == img).map(|g| g.bbox).collect();
            let mut hit = vec![false; lesions.len()];
            for d in mine {
                let b = BBox::new(d.x1, d.y1, d.x2, d.y2);
                let best = (0..lesions.len())
                    .filter(|&g| !hit[g])
                    .map(|g| (g, iou(&b, &lesions[g])))
                    .filter(|&(_, v)| v >= thr)
                    .fold(None::<(usize, f64)>, |acc, c| match acc {
                        Some(a) if a.1 >= c.1 => Some(a),
                        _ => Some(c),
                    });
                match best {
                    Some((g, _)) => {
                        hit[g] = true;
                        hits += 1;
                    }
                    None => fp += 1,
                }
            }
        }
        curve.push((fp as f64 / n_img, hits as f64 / n_les));
    }
    let sens = fp_points
        .iter()
        .map(|&f| curve.iter().filter(|p| p.0 <= f).map(|p| p.1).fold(0.0, f64::max))
        .collect();
    (curve, sens)
}
