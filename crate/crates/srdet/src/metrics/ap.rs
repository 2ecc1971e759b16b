//! Average precision with all-point interpolation.

use crate::det::boxes::{iou, Annotation, Detection};

/// Rank all detections of `class_id` across the dataset by descending
/// score and label each one true/false positive by greedy matching inside
/// its image. Returns the flags in rank order plus the ground-truth count.
fn rank_class(
    images: &[(Vec<Detection>, Vec<Annotation>)],
    class_id: usize,
    iou_threshold: f64,
) -> (Vec<bool>, usize) {
    let mut ranked: Vec<(usize, usize, f64)> = Vec::new();
    for (ii, (dets, _)) in images.iter().enumerate() {
        for (di, d) in dets.iter().enumerate() {
            if d.class_id == class_id {
                ranked.push((ii, di, d.score));
            }
        }
    }
    ranked.sort_by(|a, b| {
        b.2.partial_cmp(&a.2)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.0.cmp(&b.0))
            .then(a.1.cmp(&b.1))
    });

    let mut gt_taken: Vec<Vec<bool>> = images
        .iter()
        .map(|(_, gts)| vec![false; gts.len()])
        .collect();
    let n_gt = images
        .iter()
        .map(|(_, gts)| gts.iter().filter(|g| g.class_id == class_id).count())
        .sum();

    let mut flags = Vec::with_capacity(ranked.len());
    for (ii, di, _) in ranked {
        let d = &images[ii].0[di];
        let gts = &images[ii].1;
        let mut best: Option<(usize, f64)> = None;
        for (gi, gt) in gts.iter().enumerate() {
            if gt_taken[ii][gi] || gt.class_id != class_id {
                continue;
            }
            let v = iou(&d.bbox, &gt.bbox);
            if v >= iou_threshold && best.map_or(true, |(_, bv)| v > bv) {
                best = Some((gi, v));
            }
        }
        match best {
            Some((gi, _)) => {
                gt_taken[ii][gi] = true;
                flags.push(true);
            }
            None => flags.push(false),
        }
    }
    (flags, n_gt)
}

/// Area under the interpolated precision/recall curve for the true/false
/// positive flags of a ranked detection list.
fn ap_from_flags(flags: &[bool], n_gt: usize) -> f64 {
    if n_gt == 0 {
        // vacuous class: perfect when silent, zero when hallucinating
        return if flags.is_empty() { 1.0 } else { 0.0 };
    }
    let mut precision = Vec::with_capacity(flags.len());
    let mut recall = Vec::with_capacity(flags.len());
    let mut tp = 0usize;
    for (k, &f) in flags.iter().enumerate() {
        if f {
            tp += 1;
        }
        precision.push(tp as f64 / (k + 1) as f64);
        recall.push(tp as f64 / n_gt as f64);
    }
    // precision envelope: best precision achievable at this recall or more
    let mut envelope = precision.clone();
    for k in (0..envelope.len().saturating_sub(1)).rev() {
        envelope[k] = envelope[k].max(envelope[k + 1]);
    }
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for k in 0..flags.len() {
        if flags[k] {
            ap += (recall[k] - prev_recall) * envelope[k];
            prev_recall = recall[k];
        }
    }
    ap
}

/// All-point interpolated AP for one class across the dataset. A class
/// with no ground truth scores 1.0 when it also has no detections and 0.0
/// otherwise.
pub fn average_precision(
    images: &[(Vec<Detection>, Vec<Annotation>)],
    class_id: usize,
    iou_threshold: f64,
) -> f64 {
    let (flags, n_gt) = rank_class(images, class_id, iou_threshold);
    ap_from_flags(&flags, n_gt)
}

/// Unweighted mean of the per-class APs for classes 1..=num_classes.
pub fn mean_average_precision(
    images: &[(Vec<Detection>, Vec<Annotation>)],
    num_classes: usize,
    iou_threshold: f64,
) -> f64 {
    assert!(num_classes > 0, "mean AP needs at least one class");
    (1..=num_classes)
        .map(|c| average_precision(images, c, iou_threshold))
        .sum::<f64>()
        / num_classes as f64
}
