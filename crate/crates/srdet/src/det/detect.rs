//! Proposal selection, RoI pooling, and the end-to-end detection pass.

use crate::det::anchors::generate_anchors;
use crate::det::boxes::{decode_box, BoundingBox, Detection};
use crate::det::network::DetectorNet;
use crate::det::nms::nms;
use crate::error::{Error, Result};
use crate::tape::Tape;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct DetectConfig {
    /// Proposals kept by score before NMS.
    pub pre_nms_k: usize,
    /// Proposals kept after NMS.
    pub post_nms_k: usize,
    /// IoU above which a lower-scoring proposal is suppressed.
    pub rpn_nms_iou: f64,
    /// Final detections below this class score are dropped.
    pub score_threshold: f64,
    /// IoU for the per-class NMS over final detections.
    pub class_nms_iou: f64,
    /// Proposals narrower or shorter than this many pixels are dropped.
    pub min_box_size: f64,
}

impl Default for DetectConfig {
    fn default() -> Self {
        Self {
            pre_nms_k: 128,
            post_nms_k: 16,
            rpn_nms_iou: 0.7,
            score_threshold: 0.5,
            class_nms_iou: 0.5,
            min_box_size: 1.0,
        }
    }
}

impl DetectConfig {
    pub fn validate(&self) -> Result<()> {
        if self.pre_nms_k == 0 || self.post_nms_k == 0 {
            return Err(Error::Config("pre/post NMS budgets must be positive".into()));
        }
        for (name, v) in [
            ("rpn_nms_iou", self.rpn_nms_iou),
            ("score_threshold", self.score_threshold),
            ("class_nms_iou", self.class_nms_iou),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!("{name} must lie in [0,1], got {v}")));
            }
        }
        if !self.min_box_size.is_finite() || self.min_box_size < 0.0 {
            return Err(Error::Config("min_box_size must be non-negative".into()));
        }
        Ok(())
    }
}

/// Region proposal with its objectness score and originating anchor.
#[derive(Debug, Clone, PartialEq)]
pub struct Proposal {
    pub bbox: BoundingBox,
    pub score: f64,
    pub anchor_index: usize,
}

/// Decode every anchor against the RPN outputs, clip to the image, drop
/// near-degenerate boxes, keep the `pre_nms_k` best by score, run NMS, and
/// keep the `post_nms_k` best survivors.
///
/// `objectness` has shape (A, Hf, Wf) and `deltas` (4A, Hf, Wf); the anchor
/// list must come from the same grid, ordered location-major.
pub fn select_proposals(
    objectness: &Tensor,
    deltas: &Tensor,
    anchors: &[BoundingBox],
    img_w: f64,
    img_h: f64,
    cfg: &DetectConfig,
) -> Result<Vec<Proposal>> {
    cfg.validate()?;
    if objectness.rank() != 3 || deltas.rank() != 3 {
        return Err(Error::Shape("RPN outputs must be rank-3".into()));
    }
    let (a, hf, wf) = (objectness.shape[0], objectness.shape[1], objectness.shape[2]);
    if deltas.shape != [4 * a, hf, wf] {
        return Err(Error::Shape(format!(
            "delta shape {:?} does not match objectness {:?}",
            deltas.shape, objectness.shape
        )));
    }
    if anchors.len() != a * hf * wf {
        return Err(Error::Shape(format!(
            "{} anchors for a {a}x{hf}x{wf} objectness map",
            anchors.len()
        )));
    }

    let mut candidates: Vec<Proposal> = Vec::new();
    for i in 0..hf {
        for j in 0..wf {
            for k in 0..a {
                let n = (i * wf + j) * a + k;
                let score = objectness.at3(k, i, j);
                let d = [
                    deltas.at3(4 * k, i, j),
                    deltas.at3(4 * k + 1, i, j),
                    deltas.at3(4 * k + 2, i, j),
                    deltas.at3(4 * k + 3, i, j),
                ];
                let bbox = decode_box(&anchors[n], &d, img_w, img_h);
                if bbox.width() < cfg.min_box_size || bbox.height() < cfg.min_box_size {
                    continue;
                }
                candidates.push(Proposal {
                    bbox,
                    score,
                    anchor_index: n,
                });
            }
        }
    }

    candidates.sort_by(|x, y| {
        y.score
            .partial_cmp(&x.score)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(x.anchor_index.cmp(&y.anchor_index))
    });
    candidates.truncate(cfg.pre_nms_k);

    let boxes: Vec<BoundingBox> = candidates.iter().map(|p| p.bbox).collect();
    let scores: Vec<f64> = candidates.iter().map(|p| p.score).collect();
    let kept = nms(&boxes, &scores, cfg.rpn_nms_iou);
    Ok(kept
        .into_iter()
        .take(cfg.post_nms_k)
        .map(|i| candidates[i].clone())
        .collect())
}

/// Map a pixel-space RoI onto feature cells: outer bounds snap outward
/// (floor the min edge, ceil the max edge), then clamp into the map. An RoI
/// entirely outside the feature map is a domain error.
pub fn roi_to_cells(
    roi: &BoundingBox,
    feature_stride: usize,
    feat_h: usize,
    feat_w: usize,
) -> Result<(usize, usize, usize, usize)> {
    let s = feature_stride as f64;
    let x0 = (roi.x_min / s).floor().max(0.0) as usize;
    let y0 = (roi.y_min / s).floor().max(0.0) as usize;
    let x1 = ((roi.x_max / s).ceil().max(0.0) as usize).min(feat_w);
    let y1 = ((roi.y_max / s).ceil().max(0.0) as usize).min(feat_h);
    let x0 = x0.min(feat_w);
    let y0 = y0.min(feat_h);
    if x0 >= x1 || y0 >= y1 {
        return Err(Error::Domain(format!(
            "roi {roi:?} covers no feature cells on a {feat_w}x{feat_h} map (stride {feature_stride})"
        )));
    }
    Ok((x0, y0, x1, y1))
}

/// Max-pool the feature cells under `roi` into a (C, pool, pool) grid.
/// Plain-tensor form of the differentiable op used during training.
pub fn roi_pool(
    features: &Tensor,
    roi: &BoundingBox,
    pool: usize,
    feature_stride: usize,
) -> Result<Tensor> {
    if features.rank() != 3 {
        return Err(Error::Shape("roi_pool expects rank-3 features".into()));
    }
    let (hf, wf) = (features.shape[1], features.shape[2]);
    let (x0, y0, x1, y1) = roi_to_cells(roi, feature_stride, hf, wf)?;
    let mut tape = Tape::new();
    let f = tape.constant(features.clone());
    let pooled = tape.roi_max_pool(f, x0, y0, x1, y1, pool)?;
    Ok(tape.value(pooled).clone())
}

/// Softmax over a logit slice, numerically stable.
pub(crate) fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&v| (v - m).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Full single-image detection pass: backbone, RPN, proposal selection,
/// RoI pooling, classification head, score thresholding, and per-class NMS.
/// Results come back sorted by descending score.
pub fn detect(net: &DetectorNet, image: &Tensor, cfg: &DetectConfig) -> Result<Vec<Detection>> {
    cfg.validate()?;
    if image.rank() != 3 || image.shape[0] != net.spec.input_channels {
        return Err(Error::Shape(format!(
            "expected a ({}, H, W) image, got {:?}",
            net.spec.input_channels, image.shape
        )));
    }
    let (img_h, img_w) = (image.shape[1], image.shape[2]);
    let stride = net.spec.feature_stride();
    if img_h < stride || img_w < stride {
        return Err(Error::Shape(format!(
            "image {img_w}x{img_h} is smaller than the feature stride {stride}"
        )));
    }

    let mut tape = Tape::new();
    let nodes = net.params.const_leaves(&mut tape);
    let img = tape.constant(image.clone());
    let features = net.backbone_forward(&mut tape, &nodes, img)?;
    let rpn = net.rpn_forward(&mut tape, &nodes, features)?;
    let fshape = tape.value(features).shape.clone();
    let (feat_h, feat_w) = (fshape[1], fshape[2]);
    let anchors = generate_anchors(&net.spec.anchors, feat_h, feat_w);

    let proposals = select_proposals(
        tape.value(rpn.objectness),
        tape.value(rpn.deltas),
        &anchors,
        img_w as f64,
        img_h as f64,
        cfg,
    )?;

    let mut candidates: Vec<Detection> = Vec::new();
    for p in &proposals {
        let (x0, y0, x1, y1) = match roi_to_cells(&p.bbox, stride, feat_h, feat_w) {
            Ok(cells) => cells,
            // clipping can leave a sliver thinner than one cell; skip it
            Err(_) => continue,
        };
        let pooled = tape.roi_max_pool(features, x0, y0, x1, y1, net.spec.pool_size)?;
        let (cls, reg) = net.head_forward(&mut tape, &nodes, pooled)?;
        let probs = softmax(&tape.value(cls).data);
        let reg_vals = &tape.value(reg).data;
        for c in 1..=net.spec.num_classes {
            let score = probs[c];
            if score < cfg.score_threshold {
                continue;
            }
            let d = [
                reg_vals[4 * (c - 1)],
                reg_vals[4 * (c - 1) + 1],
                reg_vals[4 * (c - 1) + 2],
                reg_vals[4 * (c - 1) + 3],
            ];
            let bbox = decode_box(&p.bbox, &d, img_w as f64, img_h as f64);
            if bbox.width() < cfg.min_box_size || bbox.height() < cfg.min_box_size {
                continue;
            }
            candidates.push(Detection {
                bbox,
                class_id: c,
                score,
            });
        }
    }

    let mut out: Vec<Detection> = Vec::new();
    for c in 1..=net.spec.num_classes {
        let class: Vec<&Detection> = candidates.iter().filter(|d| d.class_id == c).collect();
        let boxes: Vec<BoundingBox> = class.iter().map(|d| d.bbox).collect();
        let scores: Vec<f64> = class.iter().map(|d| d.score).collect();
        for i in nms(&boxes, &scores, cfg.class_nms_iou) {
            out.push(class[i].clone());
        }
    }
    out.sort_by(|x, y| {
        y.score
            .partial_cmp(&x.score)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(x.class_id.cmp(&y.class_id))
    });
    Ok(out)
}
