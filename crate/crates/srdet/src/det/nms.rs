//! Greedy non-maximum suppression.

use crate::det::boxes::{iou, BoundingBox};

/// Returns the kept indices in descending score order. Candidates are
/// visited by descending score (ties broken toward the lower index) and a
/// candidate is suppressed when its IoU with any already-kept box exceeds
/// `iou_threshold`.
pub fn nms(boxes: &[BoundingBox], scores: &[f64], iou_threshold: f64) -> Vec<usize> {
    assert_eq!(boxes.len(), scores.len(), "nms boxes/scores length mismatch");
    let mut order: Vec<usize> = (0..boxes.len()).collect();
    order.sort_by(|&a, &b| {
        scores[b]
            .partial_cmp(&scores[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    let mut kept: Vec<usize> = Vec::new();
    for &i in &order {
        if kept.iter().all(|&k| iou(&boxes[i], &boxes[k]) <= iou_threshold) {
            kept.push(i);
        }
    }
    kept
}
