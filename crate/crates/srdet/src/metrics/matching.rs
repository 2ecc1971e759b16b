//! Greedy detection-to-ground-truth matching and count-based metrics.

use crate::det::boxes::{iou, Annotation, Detection};

/// Outcome of matching one image's detections against its ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchResult {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    /// (detection index, ground-truth index) for every true positive.
    pub pairs: Vec<(usize, usize)>,
    /// Per-detection flag, aligned with the input order.
    pub det_matched: Vec<bool>,
}

/// Detections are visited in descending score order (ties toward the lower
/// index). Each claims the unmatched same-class ground truth with the
/// highest IoU, provided that IoU is at least `iou_threshold`; everything
/// else is a false positive, and unclaimed ground truths are false
/// negatives.
pub fn match_detections(
    detections: &[Detection],
    gts: &[Annotation],
    iou_threshold: f64,
) -> MatchResult {
    let mut order: Vec<usize> = (0..detections.len()).collect();
    order.sort_by(|&a, &b| {
        detections[b]
            .score
            .partial_cmp(&detections[a].score)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    let mut gt_taken = vec![false; gts.len()];
    let mut det_matched = vec![false; detections.len()];
    let mut pairs = Vec::new();
    for &di in &order {
        let d = &detections[di];
        let mut best: Option<(usize, f64)> = None;
        for (gi, gt) in gts.iter().enumerate() {
            if gt_taken[gi] || gt.class_id != d.class_id {
                continue;
            }
            let v = iou(&d.bbox, &gt.bbox);
            if v >= iou_threshold && best.map_or(true, |(_, bv)| v > bv) {
                best = Some((gi, v));
            }
        }
        if let Some((gi, _)) = best {
            gt_taken[gi] = true;
            det_matched[di] = true;
            pairs.push((di, gi));
        }
    }
    let tp = pairs.len();
    MatchResult {
        tp,
        fp: detections.len() - tp,
        fn_: gts.len() - tp,
        pairs,
        det_matched,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrfMetrics {
    /// tp / (tp + fp + fn); 1 when all three counts are zero.
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
}

pub fn prf_metrics(tp: usize, fp: usize, fn_: usize) -> PrfMetrics {
    let frac = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };
    let accuracy = if tp + fp + fn_ == 0 {
        1.0
    } else {
        tp as f64 / (tp + fp + fn_) as f64
    };
    PrfMetrics {
        accuracy,
        precision: frac(tp, tp + fp),
        recall: frac(tp, tp + fn_),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::det::boxes::BoundingBox;

    fn det(x: f64, class_id: usize, score: f64) -> Detection {
        Detection {
            bbox: BoundingBox::new(x, 0.0, x + 10.0, 10.0),
            class_id,
            score,
        }
    }

    fn gt(x: f64, class_id: usize) -> Annotation {
        Annotation {
            class_id,
            bbox: BoundingBox::new(x, 0.0, x + 10.0, 10.0),
        }
    }

    #[test]
    fn exact_match_is_a_true_positive() {
        let m = match_detections(&[det(0.0, 1, 0.9)], &[gt(0.0, 1)], 0.5);
        assert_eq!((m.tp, m.fp, m.fn_), (1, 0, 0));
        assert_eq!(m.pairs, vec![(0, 0)]);
    }

    #[test]
    fn class_mismatch_is_a_false_positive_and_negative() {
        let m = match_detections(&[det(0.0, 2, 0.9)], &[gt(0.0, 1)], 0.5);
        assert_eq!((m.tp, m.fp, m.fn_), (0, 1, 1));
    }

    #[test]
    fn each_gt_matches_at_most_once() {
        let dets = [det(0.0, 1, 0.9), det(1.0, 1, 0.8)];
        let m = match_detections(&dets, &[gt(0.0, 1)], 0.5);
        assert_eq!((m.tp, m.fp, m.fn_), (1, 1, 0));
        assert_eq!(m.det_matched, vec![true, false]);
    }

    #[test]
    fn higher_score_claims_the_gt_first() {
        // the weaker detection overlaps better, but the stronger one picks first
        let strong = det(2.0, 1, 0.9);
        let weak = det(0.0, 1, 0.5);
        let m = match_detections(&[weak.clone(), strong.clone()], &[gt(0.0, 1)], 0.5);
        assert_eq!(m.pairs, vec![(1, 0)]);
    }

    #[test]
    fn below_threshold_overlap_does_not_match() {
        let m = match_detections(&[det(8.0, 1, 0.9)], &[gt(0.0, 1)], 0.5);
        // IoU = 2/18
        assert_eq!((m.tp, m.fp, m.fn_), (0, 1, 1));
    }

    #[test]
    fn detection_prefers_highest_iou_gt() {
        let d = det(1.0, 1, 0.9);
        let m = match_detections(&[d], &[gt(8.0, 1), gt(0.0, 1)], 0.1);
        assert_eq!(m.pairs, vec![(0, 1)]);
    }

    #[test]
    fn prf_fixture() {
        let m = prf_metrics(8, 2, 3);
        assert!((m.precision - 0.8).abs() < 1e-12);
        assert!((m.recall - 8.0 / 11.0).abs() < 1e-12);
        assert!((m.accuracy - 8.0 / 13.0).abs() < 1e-12);
    }

    #[test]
    fn prf_zero_denominators() {
        let empty = prf_metrics(0, 0, 0);
        assert_eq!(empty.accuracy, 1.0);
        assert_eq!(empty.precision, 0.0);
        assert_eq!(empty.recall, 0.0);
        let only_fn = prf_metrics(0, 0, 4);
        assert_eq!(only_fn.accuracy, 0.0);
        assert_eq!(only_fn.precision, 0.0);
        assert_eq!(only_fn.recall, 0.0);
    }

    #[test]
    fn accuracy_never_exceeds_precision_or_recall() {
        for tp in 0..5usize {
            for fp in 0..5usize {
                for fn_ in 0..5usize {
                    if tp + fp + fn_ == 0 {
                        continue;
                    }
                    let m = prf_metrics(tp, fp, fn_);
                    if tp + fp > 0 {
                        assert!(m.accuracy <= m.precision + 1e-12);
                    }
                    if tp + fn_ > 0 {
                        assert!(m.accuracy <= m.recall + 1e-12);
                    }
                }
            }
        }
    }
}
