//! Target assignment, losses, decoding and suppression for the anchor-free head.

mod decode;
mod loss;
mod targets;

pub use decode::{
    box_from_ltrb, decode, detection_order, location_score, nms, postprocess, read_detections, write_detections,
    DecodeConfig, Detection, DetectionRow, HeadOutput, DETECTIONS_HEADER,
};
pub use loss::{
    bce_with_logits, centerness_sum, focal_loss, focal_loss_logit, focal_loss_logit_grad, focal_sum, iou_loss,
    iou_loss_grad, iou_sum, ltrb_iou, total_loss, LossComponents, LossConfig, LossVars,
};
pub use targets::{
    assign_targets, centerness_target, pyramid_geometry, Assignment, LevelGeometry, LocationTargets,
    DEFAULT_LEVEL_RANGES,
};
