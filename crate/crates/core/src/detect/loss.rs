//! Detection losses: focal classification, IoU regression, centerness BCE.

use crate::error::{Error, Result};
use crate::model::LevelOutput;
use crate::numerics::{softplus, CustomOp, Graph, Scalar, Tensor, Var};

use super::targets::LocationTargets;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossConfig {
    /// Weight of the regression term.
    pub lambda: f64,
    pub focal_alpha: f64,
    pub focal_gamma: f64,
    pub iou_eps: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            lambda: 1.0,
            focal_alpha: 0.25,
            focal_gamma: 2.0,
            iou_eps: 1e-6,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0) {
            return Err(Error::Config("lambda must be > 0".into()));
        }
        if !(self.focal_alpha > 0.0 && self.focal_alpha < 1.0) {
            return Err(Error::Config("focal_alpha must lie in (0, 1)".into()));
        }
        if !(self.focal_gamma >= 0.0) {
            return Err(Error::Config("focal_gamma must be >= 0".into()));
        }
        if !(self.iou_eps > 0.0) {
            return Err(Error::Config("iou_eps must be > 0".into()));
        }
        Ok(())
    }
}

/// Focal loss of probability `p` for label `positive`.
pub fn focal_loss(p: f64, positive: bool, alpha: f64, gamma: f64) -> f64 {
    if positive {
        -alpha * (1.0 - p).powf(gamma) * p.ln()
    } else {
        -(1.0 - alpha) * p.powf(gamma) * (1.0 - p).ln()
    }
}

/// Focal loss evaluated from a logit, finite for any finite input.
pub fn focal_loss_logit(x: f64, positive: bool, alpha: f64, gamma: f64) -> f64 {
    let p = crate::numerics::sigmoid(x);
    if positive {
        alpha * (1.0 - p).powf(gamma) * softplus(-x)
    } else {
        (1.0 - alpha) * p.powf(gamma) * softplus(x)
    }
}

/// Derivative of [`focal_loss_logit`] with respect to the logit.
pub fn focal_loss_logit_grad(x: f64, positive: bool, alpha: f64, gamma: f64) -> f64 {
    let p = crate::numerics::sigmoid(x);
    if positive {
        // log p = -softplus(-x)
        alpha * (1.0 - p).powf(gamma) * (-gamma * p * softplus(-x) - (1.0 - p))
    } else {
        (1.0 - alpha) * p.powf(gamma) * (p + gamma * (1.0 - p) * softplus(x))
    }
}

/// Binary cross entropy of `sigmoid(x)` against soft target `t`.
pub fn bce_with_logits(x: f64, t: f64) -> f64 {
    softplus(x) - t * x
}

fn iou_parts(pred: &[f64; 4], target: &[f64; 4]) -> (f64, f64, f64, f64, f64) {
    let [l, t, r, b] = *pred;
    let [lt, tt, rt, bt] = *target;
    let area_p = (l + r) * (t + b);
    let area_t = (lt + rt) * (tt + bt);
    let wi = l.min(lt) + r.min(rt);
    let hi = t.min(tt) + b.min(bt);
    let inter = wi * hi;
    let union = area_p + area_t - inter;
    (inter, union, wi, hi, area_p)
}

/// IoU of two boxes given by side distances from a shared location.
pub fn ltrb_iou(pred: &[f64; 4], target: &[f64; 4]) -> f64 {
    let (inter, union, ..) = iou_parts(pred, target);
    inter / union
}

/// `-ln(IoU + eps)`.
pub fn iou_loss(pred: &[f64; 4], target: &[f64; 4], eps: f64) -> f64 {
    -(ltrb_iou(pred, target) + eps).ln()
}

/// Gradient of [`iou_loss`] with respect to the predicted distances.
pub fn iou_loss_grad(pred: &[f64; 4], target: &[f64; 4], eps: f64) -> [f64; 4] {
    let (inter, union, wi, hi, _) = iou_parts(pred, target);
    let iou = inter / union;
    let d_iou = -1.0 / (iou + eps);
    let d_inter = (union + inter) / (union * union);
    let d_area = -inter / (union * union);
    let [l, t, r, b] = *pred;
    let ind = |p: f64, q: f64| if p <= q { 1.0 } else { 0.0 };
    [
        d_iou * (d_inter * hi * ind(l, target[0]) + d_area * (t + b)),
        d_iou * (d_inter * wi * ind(t, target[1]) + d_area * (l + r)),
        d_iou * (d_inter * hi * ind(r, target[2]) + d_area * (t + b)),
        d_iou * (d_inter * wi * ind(b, target[3]) + d_area * (l + r)),
    ]
}

fn add_into<T: Scalar>(slot: &mut Option<&mut [T]>, i: usize, v: f64) {
    if let Some(g) = slot {
        g[i] += T::lit(v);
    }
}

struct FocalSum {
    labels: Vec<bool>,
    alpha: f64,
    gamma: f64,
}

impl<T: Scalar> CustomOp<T> for FocalSum {
    fn name(&self) -> &'static str {
        "focal_loss"
    }

    fn backward(&self, inputs: &[&Tensor<T>], _output: &Tensor<T>, dout: &[T], grads: &mut [Option<&mut [T]>]) {
        let d = dout[0].to_f64_lossy();
        for (i, (&x, &pos)) in inputs[0].data().iter().zip(&self.labels).enumerate() {
            add_into(&mut grads[0], i, d * focal_loss_logit_grad(x.to_f64_lossy(), pos, self.alpha, self.gamma));
        }
    }
}

struct IouSum {
    positives: Vec<(usize, [f64; 4])>,
    cells: usize,
    eps: f64,
}

impl IouSum {
    fn pred<T: Scalar>(&self, reg: &[T], i: usize) -> [f64; 4] {
        [0, 1, 2, 3].map(|c| reg[c * self.cells + i].to_f64_lossy())
    }
}

impl<T: Scalar> CustomOp<T> for IouSum {
    fn name(&self) -> &'static str {
        "iou_loss"
    }

    fn backward(&self, inputs: &[&Tensor<T>], _output: &Tensor<T>, dout: &[T], grads: &mut [Option<&mut [T]>]) {
        let d = dout[0].to_f64_lossy();
        for &(i, target) in &self.positives {
            let g = iou_loss_grad(&self.pred(inputs[0].data(), i), &target, self.eps);
            for (c, gc) in g.iter().enumerate() {
                add_into(&mut grads[0], c * self.cells + i, d * gc);
            }
        }
    }
}

struct CenternessSum {
    positives: Vec<(usize, f64)>,
}

impl<T: Scalar> CustomOp<T> for CenternessSum {
    fn name(&self) -> &'static str {
        "centerness_bce"
    }

    fn backward(&self, inputs: &[&Tensor<T>], _output: &Tensor<T>, dout: &[T], grads: &mut [Option<&mut [T]>]) {
        let d = dout[0].to_f64_lossy();
        let x = inputs[0].data();
        for &(i, t) in &self.positives {
            add_into(&mut grads[0], i, d * (crate::numerics::sigmoid(x[i].to_f64_lossy()) - t));
        }
    }
}

/// Sum of focal losses over all cells of a `[1,H,W]` logit map.
pub fn focal_sum<T: Scalar>(g: &mut Graph<T>, cls: Var, labels: &[bool], cfg: &LossConfig) -> Result<Var> {
    check_cells(g, cls, 1, labels.len())?;
    let total: f64 = g
        .value(cls)
        .data()
        .iter()
        .zip(labels)
        .map(|(&x, &pos)| focal_loss_logit(x.to_f64_lossy(), pos, cfg.focal_alpha, cfg.focal_gamma))
        .sum();
    let op = FocalSum {
        labels: labels.to_vec(),
        alpha: cfg.focal_alpha,
        gamma: cfg.focal_gamma,
    };
    Ok(g.custom(&[cls], Tensor::scalar(T::lit(total)), Box::new(op)))
}

/// Sum of IoU losses of `[4,H,W]` distances at the listed positive cells.
pub fn iou_sum<T: Scalar>(g: &mut Graph<T>, reg: Var, positives: &[(usize, [f64; 4])], eps: f64) -> Result<Var> {
    let cells = g.shape(reg)[1..].iter().product();
    check_cells(g, reg, 4, cells)?;
    let op = IouSum {
        positives: positives.to_vec(),
        cells,
        eps,
    };
    let data = g.value(reg).data();
    let total: f64 = positives.iter().map(|(i, t)| iou_loss(&op.pred(data, *i), t, eps)).sum();
    Ok(g.custom(&[reg], Tensor::scalar(T::lit(total)), Box::new(op)))
}

/// Sum of centerness BCE at the listed positive cells of a `[1,H,W]` logit map.
pub fn centerness_sum<T: Scalar>(g: &mut Graph<T>, ctr: Var, positives: &[(usize, f64)]) -> Result<Var> {
    let cells = g.shape(ctr)[1..].iter().product();
    check_cells(g, ctr, 1, cells)?;
    let x = g.value(ctr).data();
    let total: f64 = positives.iter().map(|&(i, t)| bce_with_logits(x[i].to_f64_lossy(), t)).sum();
    let op = CenternessSum {
        positives: positives.to_vec(),
    };
    Ok(g.custom(&[ctr], Tensor::scalar(T::lit(total)), Box::new(op)))
}

fn check_cells<T: Scalar>(g: &Graph<T>, v: Var, channels: usize, cells: usize) -> Result<()> {
    let s = g.shape(v);
    if s.len() != 3 || s[0] != channels || s[1] * s[2] != cells {
        return Err(Error::Dimension(format!(
            "loss input {s:?} does not match {channels} channels over {cells} cells"
        )));
    }
    Ok(())
}

/// Loss scalars on the tape.
#[derive(Clone, Copy, Debug)]
pub struct LossVars {
    pub total: Var,
    pub cls: Var,
    pub reg: Var,
    pub ctr: Var,
    pub num_positives: usize,
}

/// Loss values read back from the tape.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossComponents {
    pub total: f64,
    pub cls: f64,
    pub reg: f64,
    pub ctr: f64,
    pub num_positives: usize,
}

impl LossVars {
    pub fn values<T: Scalar>(&self, g: &Graph<T>) -> LossComponents {
        LossComponents {
            total: g.value(self.total).item().to_f64_lossy(),
            cls: g.value(self.cls).item().to_f64_lossy(),
            reg: g.value(self.reg).item().to_f64_lossy(),
            ctr: g.value(self.ctr).item().to_f64_lossy(),
            num_positives: self.num_positives,
        }
    }
}

fn sum_vars<T: Scalar>(g: &mut Graph<T>, vars: &[Var]) -> Result<Var> {
    let mut acc = vars[0];
    for &v in &vars[1..] {
        acc = g.add(acc, v)?;
    }
    Ok(acc)
}

/// Batch loss: per-term sums over all images and levels, each divided by the
/// batch positive count (at least 1); the regression term is weighted by lambda.
/// `batch[i]` pairs an image's level outputs with its level targets.
pub fn total_loss<T: Scalar>(
    g: &mut Graph<T>,
    batch: &[(&[LevelOutput], &[LocationTargets])],
    cfg: &LossConfig,
) -> Result<LossVars> {
    if batch.is_empty() {
        return Err(Error::Dimension("total_loss over an empty batch".into()));
    }
    let (mut cls, mut reg, mut ctr) = (Vec::new(), Vec::new(), Vec::new());
    let mut num_positives = 0;
    for (outputs, targets) in batch {
        if outputs.len() != targets.len() {
            return Err(Error::Dimension(format!(
                "{} level outputs but {} level targets",
                outputs.len(),
                targets.len()
            )));
        }
        for (out, t) in outputs.iter().zip(targets.iter()) {
            let s = g.shape(out.cls);
            if s[1] != t.geometry.height || s[2] != t.geometry.width {
                return Err(Error::Dimension(format!(
                    "level P{} output {:?} vs targets {}x{}",
                    out.level, s, t.geometry.height, t.geometry.width
                )));
            }
            num_positives += t.num_positives();
            cls.push(focal_sum(g, out.cls, &t.labels, cfg)?);
            let pos_reg: Vec<(usize, [f64; 4])> = t.positives().map(|i| (i, t.reg[i])).collect();
            let pos_ctr: Vec<(usize, f64)> = t.positives().map(|i| (i, t.ctr[i])).collect();
            reg.push(iou_sum(g, out.reg, &pos_reg, cfg.iou_eps)?);
            ctr.push(centerness_sum(g, out.ctr, &pos_ctr)?);
        }
    }
    let norm = 1.0 / num_positives.max(1) as f64;
    let cls_sum = sum_vars(g, &cls)?;
    let reg_sum = sum_vars(g, &reg)?;
    let ctr_sum = sum_vars(g, &ctr)?;
    let cls = g.scale(cls_sum, T::lit(norm));
    let reg = g.scale(reg_sum, T::lit(cfg.lambda * norm));
    let ctr = g.scale(ctr_sum, T::lit(norm));
    let partial = g.add(cls, reg)?;
    let total = g.add(partial, ctr)?;
    Ok(LossVars {
        total,
        cls,
        reg,
        ctr,
        num_positives,
    })
}
