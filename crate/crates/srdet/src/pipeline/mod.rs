//! End-to-end wiring: enhance-then-detect inference and the four-arm
//! ablation harness.

mod ablation;

pub use ablation::{run_ablation, AblationOutcome};

use std::path::Path;

use crate::det::boxes::{Annotation, Detection};
use crate::det::detect::detect;
use crate::det::network::DetectorNet;
use crate::det::train::train_detector;
use crate::error::Result;
use crate::io::config::PipelineConfig;
use crate::io::dataset::Sample;
use crate::metrics::ap::mean_average_precision;
use crate::metrics::matching::{match_detections, prf_metrics, PrfMetrics};
use crate::sr::{load_params, Discriminator, Generator};
use crate::tensor::Tensor;
use crate::train::{FeatureExtractor, LossReport, SrTrainer};

/// The perceptual feature network is fixed, so its seed is a constant.
const PHI_SEED: u64 = 0xfea7;

/// Build a generator from the config and replace its weights from `ckpt`.
pub fn load_generator(cfg: &PipelineConfig, ckpt: &Path) -> Result<Generator> {
    let mut gen = Generator::build(cfg.generator_spec(), 0)?;
    let echo = gen.spec_echo();
    load_params(ckpt, &echo, &mut gen.params)?;
    Ok(gen)
}

/// Build a detector from the config and replace its weights from `ckpt`.
pub fn load_detector(cfg: &PipelineConfig, ckpt: &Path) -> Result<DetectorNet> {
    let mut net = DetectorNet::build(cfg.detector_spec(), 0)?;
    let echo = net.spec_echo();
    load_params(ckpt, &echo, &mut net.params)?;
    Ok(net)
}

/// Result of the two-stage inference pass.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineOutput {
    pub sr_image: Tensor,
    pub detections: Vec<Detection>,
}

/// Enhance one LR image with a trained generator, then detect on the
/// enhanced output. Both checkpoints are loaded up front so a missing or
/// mismatched file fails before any compute.
pub fn run_pipeline(
    cfg: &PipelineConfig,
    gen_ckpt: &Path,
    det_ckpt: &Path,
    lr_image: &Tensor,
) -> Result<PipelineOutput> {
    let gen = load_generator(cfg, gen_ckpt)?;
    let net = load_detector(cfg, det_ckpt)?;
    let sr_image = gen.infer(lr_image)?;
    let detections = detect(&net, &sr_image, &cfg.detect_config())?;
    Ok(PipelineOutput {
        sr_image,
        detections,
    })
}

/// Adversarially train a generator on the (LR, HR) pairs of `train`,
/// one pair per step, cycling through the set. Returns the generator and
/// the per-step loss reports.
pub fn train_sr(cfg: &PipelineConfig, train: &[Sample]) -> Result<(Generator, Vec<LossReport>)> {
    let gen = Generator::build(cfg.generator_spec(), cfg.sr.seed)?;
    let disc = Discriminator::build(cfg.discriminator_spec(), cfg.sr.seed.wrapping_add(1))?;
    let phi = FeatureExtractor::build(3, PHI_SEED);
    let mut trainer = SrTrainer::new(gen, disc, phi, cfg.loss_weights(), cfg.sr_adam_config())?;
    let mut reports = Vec::with_capacity(cfg.sr.steps);
    for step in 0..cfg.sr.steps {
        let s = &train[step % train.len()];
        let batch = [(s.lr.clone(), s.hr.clone())];
        reports.push(trainer.train_step(&batch)?);
    }
    Ok((trainer.gen, reports))
}

/// Scale annotation boxes by a uniform factor (HR to LR coordinates and
/// back).
pub fn scale_annotations(anns: &[Annotation], factor: f64) -> Vec<Annotation> {
    anns.iter()
        .map(|a| Annotation {
            class_id: a.class_id,
            bbox: crate::det::boxes::BoundingBox::new(
                a.bbox.x_min * factor,
                a.bbox.y_min * factor,
                a.bbox.x_max * factor,
                a.bbox.y_max * factor,
            ),
        })
        .collect()
}

/// Train a fresh detector on (image, annotations) pairs per the config.
pub fn train_det(
    cfg: &PipelineConfig,
    data: &[(Tensor, Vec<Annotation>)],
) -> Result<DetectorNet> {
    let mut net = DetectorNet::build(cfg.detector_spec(), cfg.detector.seed)?;
    train_detector(&mut net, data, &cfg.det_train_config())?;
    Ok(net)
}

/// Aggregate detection quality over an evaluation set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalResult {
    pub prf: PrfMetrics,
    pub mean_ap: f64,
}

/// Run the detector on every image, pool true/false positive counts for
/// the precision/recall/accuracy numbers, and compute mean AP.
pub fn evaluate_detector(
    net: &DetectorNet,
    cfg: &PipelineConfig,
    data: &[(Tensor, Vec<Annotation>)],
) -> Result<EvalResult> {
    let detect_cfg = cfg.detect_config();
    let mut per_image = Vec::with_capacity(data.len());
    let (mut tp, mut fp, mut fn_) = (0usize, 0usize, 0usize);
    for (image, gts) in data {
        let dets = detect(net, image, &detect_cfg)?;
        let m = match_detections(&dets, gts, cfg.experiment.eval_iou);
        tp += m.tp;
        fp += m.fp;
        fn_ += m.fn_;
        per_image.push((dets, gts.clone()));
    }
    let mean_ap =
        mean_average_precision(&per_image, net.spec.num_classes, cfg.experiment.eval_iou);
    Ok(EvalResult {
        prf: prf_metrics(tp, fp, fn_),
        mean_ap,
    })
}
