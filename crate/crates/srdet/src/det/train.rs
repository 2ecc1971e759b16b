//! Joint training of the RPN and detection head with Adam.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::det::anchors::generate_anchors;
use crate::det::boxes::{encode_box, iou, Annotation, BoundingBox};
use crate::det::detect::roi_to_cells;
use crate::det::network::DetectorNet;
use crate::error::{Error, Result};
use crate::tape::{NodeId, PointwiseFn, Tape};
use crate::tensor::Tensor;
use crate::train::{Adam, AdamConfig, SCORE_EPS};

#[derive(Debug, Clone, PartialEq)]
pub struct DetTrainConfig {
    pub epochs: usize,
    pub adam: AdamConfig,
    /// Anchors with gt IoU at or above this are positives.
    pub pos_iou: f64,
    /// Anchors with gt IoU at or below this are negatives.
    pub neg_iou: f64,
    /// Negative anchors sampled per image for the objectness loss.
    pub max_neg_anchors: usize,
    /// Jittered copies of each ground-truth box fed to the head.
    pub jitter_per_gt: usize,
    /// Random background RoIs fed to the head per image.
    pub background_rois: usize,
    pub seed: u64,
}

impl Default for DetTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 4,
            adam: AdamConfig::default(),
            pos_iou: 0.7,
            neg_iou: 0.3,
            max_neg_anchors: 32,
            jitter_per_gt: 2,
            background_rois: 2,
            seed: 0,
        }
    }
}

impl DetTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be positive".into()));
        }
        if !(0.0 < self.neg_iou && self.neg_iou <= self.pos_iou && self.pos_iou <= 1.0) {
            return Err(Error::Config(format!(
                "require 0 < neg_iou <= pos_iou <= 1, got {} and {}",
                self.neg_iou, self.pos_iou
            )));
        }
        Ok(())
    }
}

/// Anchor/ground-truth assignment for one image.
#[derive(Debug, Clone, PartialEq)]
pub struct AnchorTargets {
    /// (anchor index, matched ground-truth index) pairs.
    pub positives: Vec<(usize, usize)>,
    /// Anchor indices with no meaningful overlap.
    pub negatives: Vec<usize>,
}

/// Positive: IoU with some gt at or above `pos_iou` (matched to the best
/// gt), plus, for every gt, its single highest-IoU anchor (ties to the
/// lowest anchor index) so no object goes unclaimed. Negative: best IoU at
/// or below `neg_iou`. Anything between is ignored.
pub fn assign_anchor_targets(
    anchors: &[BoundingBox],
    gts: &[Annotation],
    pos_iou: f64,
    neg_iou: f64,
) -> AnchorTargets {
    let mut positives: Vec<(usize, usize)> = Vec::new();
    let mut negatives: Vec<usize> = Vec::new();
    let mut is_pos = vec![false; anchors.len()];

    let mut best_for_gt: Vec<Option<(usize, f64)>> = vec![None; gts.len()];
    for (ai, anchor) in anchors.iter().enumerate() {
        let mut best = 0.0f64;
        let mut best_gt = None;
        for (gi, gt) in gts.iter().enumerate() {
            let v = iou(anchor, &gt.bbox);
            if v > best {
                best = v;
                best_gt = Some(gi);
            }
            if v > 0.0 && best_for_gt[gi].map_or(true, |(_, bv)| v > bv) {
                best_for_gt[gi] = Some((ai, v));
            }
        }
        match best_gt {
            Some(gi) if best >= pos_iou => {
                positives.push((ai, gi));
                is_pos[ai] = true;
            }
            _ if best <= neg_iou => negatives.push(ai),
            _ => {}
        }
    }
    for (gi, slot) in best_for_gt.iter().enumerate() {
        if let Some((ai, _)) = slot {
            if !is_pos[*ai] {
                positives.push((*ai, gi));
                is_pos[*ai] = true;
                negatives.retain(|&n| n != *ai);
            }
        }
    }
    positives.sort_unstable();
    AnchorTargets {
        positives,
        negatives,
    }
}

fn clamped_log(tape: &mut Tape, score: NodeId) -> Result<NodeId> {
    let c = tape.clamp(score, SCORE_EPS, 1.0 - SCORE_EPS);
    tape.pointwise(c, PointwiseFn::Log)
}

fn sum_nodes(tape: &mut Tape, terms: &[NodeId]) -> Result<Option<NodeId>> {
    let mut acc: Option<NodeId> = None;
    for &t in terms {
        acc = Some(match acc {
            Some(prev) => tape.add(prev, t)?,
            None => t,
        });
    }
    Ok(acc)
}

/// Smooth-L1 penalty between a predicted scalar node and a constant target.
fn smooth_l1_to(tape: &mut Tape, pred: NodeId, target: f64) -> Result<NodeId> {
    let diff = tape.add_scalar(pred, -target);
    tape.pointwise(diff, PointwiseFn::SmoothL1)
}

/// Head RoI: box, class label (0 = background), matched gt for regression.
struct HeadRoi {
    bbox: BoundingBox,
    label: usize,
    gt: Option<BoundingBox>,
}

fn jitter_box(rng: &mut ChaCha8Rng, b: &BoundingBox, img_w: f64, img_h: f64) -> BoundingBox {
    let (cx, cy) = b.center();
    let cx = cx + rng.gen_range(-0.15..0.15) * b.width();
    let cy = cy + rng.gen_range(-0.15..0.15) * b.height();
    let w = b.width() * rng.gen_range(-0.2..0.2f64).exp();
    let h = b.height() * rng.gen_range(-0.2..0.2f64).exp();
    BoundingBox::new(cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h)
        .clip(img_w, img_h)
}

fn sample_head_rois(
    rng: &mut ChaCha8Rng,
    gts: &[Annotation],
    img_w: f64,
    img_h: f64,
    cfg: &DetTrainConfig,
) -> Vec<HeadRoi> {
    let mut rois: Vec<HeadRoi> = Vec::new();
    for gt in gts {
        rois.push(HeadRoi {
            bbox: gt.bbox,
            label: gt.class_id,
            gt: Some(gt.bbox),
        });
        for _ in 0..cfg.jitter_per_gt {
            let j = jitter_box(rng, &gt.bbox, img_w, img_h);
            if j.width() < 2.0 || j.height() < 2.0 {
                continue;
            }
            if iou(&j, &gt.bbox) >= 0.5 {
                rois.push(HeadRoi {
                    bbox: j,
                    label: gt.class_id,
                    gt: Some(gt.bbox),
                });
            } else {
                rois.push(HeadRoi {
                    bbox: j,
                    label: 0,
                    gt: None,
                });
            }
        }
    }
    for _ in 0..cfg.background_rois {
        for _attempt in 0..50 {
            let w = rng.gen_range(4.0..(img_w * 0.5).max(5.0));
            let h = rng.gen_range(4.0..(img_h * 0.5).max(5.0));
            let x0 = rng.gen_range(0.0..(img_w - w).max(1e-6));
            let y0 = rng.gen_range(0.0..(img_h - h).max(1e-6));
            let b = BoundingBox::new(x0, y0, x0 + w, y0 + h);
            if gts.iter().all(|gt| iou(&b, &gt.bbox) < cfg.neg_iou) {
                rois.push(HeadRoi {
                    bbox: b,
                    label: 0,
                    gt: None,
                });
                break;
            }
        }
    }
    rois
}

/// Build the full per-image training loss on a fresh tape:
/// objectness cross-entropy plus anchor-delta smooth-L1 for the RPN, and
/// class cross-entropy plus per-class-delta smooth-L1 for the head.
fn build_image_loss(
    net: &DetectorNet,
    image: &Tensor,
    gts: &[Annotation],
    cfg: &DetTrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<(Tape, Vec<NodeId>, NodeId)> {
    let mut tape = Tape::new();
    let nodes = net.params.leaves(&mut tape);
    let img = tape.constant(image.clone());
    let features = net.backbone_forward(&mut tape, &nodes, img)?;
    let rpn = net.rpn_forward(&mut tape, &nodes, features)?;

    let fshape = tape.value(features).shape.clone();
    let (feat_h, feat_w) = (fshape[1], fshape[2]);
    let a = net.spec.anchors.anchors_per_location();
    let anchors = generate_anchors(&net.spec.anchors, feat_h, feat_w);
    let (img_h, img_w) = (image.shape[1] as f64, image.shape[2] as f64);

    let targets = assign_anchor_targets(&anchors, gts, cfg.pos_iou, cfg.neg_iou);
    let negs: Vec<usize> = if targets.negatives.len() > cfg.max_neg_anchors {
        let step = targets.negatives.len() / cfg.max_neg_anchors;
        targets
            .negatives
            .iter()
            .step_by(step.max(1))
            .take(cfg.max_neg_anchors)
            .copied()
            .collect()
    } else {
        targets.negatives.clone()
    };

    // anchor list index n maps back to grid coordinates (cell, anchor k)
    let grid = |n: usize| {
        let k = n % a;
        let cell = n / a;
        (k, cell / feat_w, cell % feat_w)
    };

    let mut obj_terms: Vec<NodeId> = Vec::new();
    for &(n, _) in &targets.positives {
        let (k, i, j) = grid(n);
        let p = tape.gather(rpn.objectness, (k * feat_h + i) * feat_w + j)?;
        let lp = clamped_log(&mut tape, p)?;
        obj_terms.push(tape.scale(lp, -1.0));
    }
    for &n in &negs {
        let (k, i, j) = grid(n);
        let p = tape.gather(rpn.objectness, (k * feat_h + i) * feat_w + j)?;
        let neg_p = tape.scale(p, -1.0);
        let one_minus = tape.add_scalar(neg_p, 1.0);
        let lq = clamped_log(&mut tape, one_minus)?;
        obj_terms.push(tape.scale(lq, -1.0));
    }
    let n_obj = obj_terms.len().max(1) as f64;
    let rpn_cls = sum_nodes(&mut tape, &obj_terms)?
        .map(|s| tape.scale(s, 1.0 / n_obj));

    let mut reg_terms: Vec<NodeId> = Vec::new();
    for &(n, gi) in &targets.positives {
        let (k, i, j) = grid(n);
        let enc = encode_box(&anchors[n], &gts[gi].bbox)?;
        for (d, &target) in enc.iter().enumerate() {
            let idx = ((4 * k + d) * feat_h + i) * feat_w + j;
            let pred = tape.gather(rpn.deltas, idx)?;
            reg_terms.push(smooth_l1_to(&mut tape, pred, target)?);
        }
    }
    let n_pos = targets.positives.len().max(1) as f64;
    let rpn_reg = sum_nodes(&mut tape, &reg_terms)?
        .map(|s| tape.scale(s, 1.0 / (4.0 * n_pos)));

    let rois = sample_head_rois(rng, gts, img_w, img_h, cfg);
    let stride = net.spec.feature_stride();
    let mut cls_terms: Vec<NodeId> = Vec::new();
    let mut head_reg_terms: Vec<NodeId> = Vec::new();
    let mut n_fg = 0usize;
    for roi in &rois {
        let (x0, y0, x1, y1) = match roi_to_cells(&roi.bbox, stride, feat_h, feat_w) {
            Ok(cells) => cells,
            Err(_) => continue,
        };
        let pooled = tape.roi_max_pool(features, x0, y0, x1, y1, net.spec.pool_size)?;
        let (cls, reg) = net.head_forward(&mut tape, &nodes, pooled)?;
        let lse = tape.log_sum_exp(cls)?;
        let picked = tape.gather(cls, roi.label)?;
        let neg_picked = tape.scale(picked, -1.0);
        cls_terms.push(tape.add(lse, neg_picked)?);
        if let (Some(gt), c @ 1..) = (roi.gt, roi.label) {
            let enc = encode_box(&roi.bbox, &gt)?;
            for (d, &target) in enc.iter().enumerate() {
                let pred = tape.gather(reg, 4 * (c - 1) + d)?;
                head_reg_terms.push(smooth_l1_to(&mut tape, pred, target)?);
            }
            n_fg += 1;
        }
    }
    let n_cls = cls_terms.len().max(1) as f64;
    let head_cls = sum_nodes(&mut tape, &cls_terms)?
        .map(|s| tape.scale(s, 1.0 / n_cls));
    let head_reg = sum_nodes(&mut tape, &head_reg_terms)?
        .map(|s| tape.scale(s, 1.0 / (4.0 * n_fg.max(1) as f64)));

    let parts: Vec<NodeId> = [rpn_cls, rpn_reg, head_cls, head_reg]
        .into_iter()
        .flatten()
        .collect();
    let total = sum_nodes(&mut tape, &parts)?
        .ok_or_else(|| Error::Domain("image produced no training targets".into()))?;
    Ok((tape, nodes, total))
}

fn check_finite(tape: &Tape, loss: NodeId) -> Result<()> {
    if tape.value(loss).all_finite() {
        return Ok(());
    }
    let op = tape.first_non_finite_op().unwrap_or("unknown");
    Err(Error::Numeric { op: op.into() })
}

/// Train the detector in place over `data`, one Adam update per image.
/// Returns the mean per-image loss for each epoch.
pub fn train_detector(
    net: &mut DetectorNet,
    data: &[(Tensor, Vec<Annotation>)],
    cfg: &DetTrainConfig,
) -> Result<Vec<f64>> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::Domain("empty detector training set".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = Adam::new(&net.params, cfg.adam);
    let mut history = Vec::with_capacity(cfg.epochs);
    for _epoch in 0..cfg.epochs {
        let mut loss_sum = 0.0;
        for (image, gts) in data {
            let (mut tape, nodes, loss) = build_image_loss(net, image, gts, cfg, &mut rng)?;
            check_finite(&tape, loss)?;
            loss_sum += tape.value(loss).item();
            tape.backward(loss)?;
            let grads: Vec<Option<Vec<f64>>> = nodes
                .iter()
                .map(|&id| tape.grad(id).map(|g| g.to_vec()))
                .collect();
            adam.step(&mut net.params, &grads);
        }
        history.push(loss_sum / data.len() as f64);
    }
    Ok(history)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::det::anchors::AnchorConfig;
    use crate::det::detect::{detect, DetectConfig};
    use crate::det::network::DetectorSpec;

    #[test]
    fn anchor_assignment_fixtures() {
        let anchors = vec![
            BoundingBox::new(0.0, 0.0, 10.0, 10.0),
            BoundingBox::new(2.0, 2.0, 12.0, 12.0),
            BoundingBox::new(40.0, 40.0, 50.0, 50.0),
        ];
        let gts = vec![Annotation {
            class_id: 1,
            bbox: BoundingBox::new(0.0, 0.0, 10.0, 10.0),
        }];
        let t = assign_anchor_targets(&anchors, &gts, 0.7, 0.3);
        assert_eq!(t.positives, vec![(0, 0)]);
        assert_eq!(t.negatives, vec![2]);
        // anchor 1 has IoU 64/136 ~ 0.47: ignored
        assert!(!t.negatives.contains(&1));
    }

    #[test]
    fn best_anchor_is_forced_positive_below_threshold() {
        // no anchor reaches 0.7, but the closest one must still be claimed
        let anchors = vec![
            BoundingBox::new(0.0, 0.0, 8.0, 8.0),
            BoundingBox::new(16.0, 16.0, 24.0, 24.0),
        ];
        let gts = vec![Annotation {
            class_id: 2,
            bbox: BoundingBox::new(2.0, 2.0, 12.0, 12.0),
        }];
        let t = assign_anchor_targets(&anchors, &gts, 0.7, 0.05);
        assert_eq!(t.positives, vec![(0, 0)]);
        assert!(!t.negatives.contains(&0));
    }

    #[test]
    fn no_ground_truth_makes_everything_negative() {
        let anchors = vec![
            BoundingBox::new(0.0, 0.0, 8.0, 8.0),
            BoundingBox::new(8.0, 8.0, 16.0, 16.0),
        ];
        let t = assign_anchor_targets(&anchors, &[], 0.7, 0.3);
        assert!(t.positives.is_empty());
        assert_eq!(t.negatives, vec![0, 1]);
    }

    fn micro_spec() -> DetectorSpec {
        DetectorSpec {
            input_channels: 1,
            backbone_channels: vec![4, 8],
            anchors: AnchorConfig {
                scales: vec![2.0, 3.0],
                aspect_ratios: vec![1.0],
                feature_stride: 4,
            },
            num_classes: 2,
            pool_size: 2,
            head_hidden: 8,
        }
    }

    /// One bright square of a fixed class on a dark field.
    fn square_image(x0: usize, y0: usize, side: usize) -> (Tensor, Vec<Annotation>) {
        let mut img = Tensor::zeros(&[1, 24, 24]);
        for y in y0..y0 + side {
            for x in x0..x0 + side {
                img.set3(0, y, x, 1.0);
            }
        }
        let ann = vec![Annotation {
            class_id: 1,
            bbox: BoundingBox::new(x0 as f64, y0 as f64, (x0 + side) as f64, (y0 + side) as f64),
        }];
        (img, ann)
    }

    fn toy_dataset() -> Vec<(Tensor, Vec<Annotation>)> {
        vec![
            square_image(3, 3, 8),
            square_image(12, 9, 8),
            square_image(7, 13, 8),
            square_image(14, 2, 8),
        ]
    }

    #[test]
    fn loss_decreases_on_a_toy_problem() {
        let mut net = DetectorNet::build(micro_spec(), 41).unwrap();
        let cfg = DetTrainConfig {
            epochs: 8,
            seed: 7,
            ..DetTrainConfig::default()
        };
        let history = train_detector(&mut net, &toy_dataset(), &cfg).unwrap();
        assert_eq!(history.len(), 8);
        assert!(history.iter().all(|l| l.is_finite()));
        assert!(
            history.last().unwrap() < &history[0],
            "loss did not improve: {history:?}"
        );
    }

    #[test]
    fn training_is_seed_deterministic() {
        let run = || {
            let mut net = DetectorNet::build(micro_spec(), 41).unwrap();
            let cfg = DetTrainConfig {
                epochs: 2,
                seed: 7,
                ..DetTrainConfig::default()
            };
            let h = train_detector(&mut net, &toy_dataset(), &cfg).unwrap();
            (h, net.params.content_hash())
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn trained_detector_finds_the_square() {
        let mut net = DetectorNet::build(micro_spec(), 41).unwrap();
        let cfg = DetTrainConfig {
            epochs: 30,
            seed: 7,
            ..DetTrainConfig::default()
        };
        train_detector(&mut net, &toy_dataset(), &cfg).unwrap();
        let (img, ann) = square_image(9, 6, 8);
        let dets = detect(
            &net,
            &img,
            &DetectConfig {
                score_threshold: 0.5,
                ..DetectConfig::default()
            },
        )
        .unwrap();
        assert!(!dets.is_empty(), "no detections on a held-out square");
        let best = &dets[0];
        assert_eq!(best.class_id, 1);
        assert!(
            iou(&best.bbox, &ann[0].bbox) > 0.3,
            "best box {:?} far from gt {:?}",
            best.bbox,
            ann[0].bbox
        );
    }

    #[test]
    fn invalid_config_and_empty_dataset_rejected() {
        let mut net = DetectorNet::build(micro_spec(), 1).unwrap();
        let bad = DetTrainConfig {
            pos_iou: 0.2,
            neg_iou: 0.5,
            ..DetTrainConfig::default()
        };
        assert!(train_detector(&mut net, &toy_dataset(), &bad).is_err());
        assert!(train_detector(&mut net, &[], &DetTrainConfig::default()).is_err());
    }
}
