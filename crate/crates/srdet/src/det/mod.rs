//! Two-stage object detection: anchors, region proposals, RoI pooling,
//! and the classification/regression head.

pub mod anchors;
pub mod boxes;
pub mod detect;
pub mod network;
pub mod nms;
pub mod train;

pub use anchors::{generate_anchors, AnchorConfig};
pub use boxes::{decode_box, encode_box, iou, Annotation, BoundingBox, Detection};
pub use detect::{detect, roi_pool, select_proposals, DetectConfig, Proposal};
pub use network::{DetectorNet, DetectorSpec};
pub use nms::nms;
pub use train::{assign_anchor_targets, train_detector, AnchorTargets, DetTrainConfig};
