//! Flat `section.key = value` configuration for the whole pipeline.

use std::collections::HashMap;
use std::path::Path;

use crate::det::anchors::AnchorConfig;
use crate::det::detect::DetectConfig;
use crate::det::network::DetectorSpec;
use crate::det::train::DetTrainConfig;
use crate::error::{Error, Result};
use crate::io::dataset::{DatasetConfig, NUM_CLASSES};
use crate::sr::{DiscriminatorSpec, GeneratorSpec};
use crate::train::{AdamConfig, LossWeights};

#[derive(Debug, Clone, PartialEq)]
pub struct DataSection {
    pub train_count: usize,
    pub test_count: usize,
    pub hr_size: usize,
    pub scale_factor: usize,
    pub min_shapes: usize,
    pub max_shapes: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SrSection {
    pub num_rrdb: usize,
    pub base_channels: usize,
    pub growth_channels: usize,
    pub residual_beta: f64,
    pub steps: usize,
    pub learning_rate: f64,
    pub lambda_gan: f64,
    pub lambda_perceptual: f64,
    pub lambda_content: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectorSection {
    pub backbone_channels: Vec<usize>,
    pub scales: Vec<f64>,
    pub aspect_ratios: Vec<f64>,
    pub pool_size: usize,
    pub head_hidden: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub score_threshold: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSection {
    /// IoU threshold used when matching detections for evaluation.
    pub eval_iou: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub data: DataSection,
    pub sr: SrSection,
    pub detector: DetectorSection,
    pub experiment: ExperimentSection,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            data: DataSection {
                train_count: 200,
                test_count: 50,
                hr_size: 48,
                scale_factor: 4,
                min_shapes: 1,
                max_shapes: 3,
                seed: 1,
            },
            sr: SrSection {
                num_rrdb: 3,
                base_channels: 16,
                growth_channels: 8,
                residual_beta: 0.2,
                steps: 200,
                learning_rate: 1e-3,
                lambda_gan: 0.005,
                lambda_perceptual: 1.0,
                lambda_content: 1.0,
                seed: 2,
            },
            detector: DetectorSection {
                backbone_channels: vec![16, 32, 64],
                scales: vec![1.0, 2.0, 4.0],
                aspect_ratios: vec![0.5, 1.0, 2.0],
                pool_size: 4,
                head_hidden: 64,
                epochs: 12,
                learning_rate: 1e-3,
                score_threshold: 0.35,
                seed: 3,
            },
            experiment: ExperimentSection { eval_iou: 0.5 },
        }
    }
}

fn parse_scalar<T: std::str::FromStr>(key: &str, raw: &str) -> Result<T> {
    raw.trim()
        .parse()
        .map_err(|_| Error::Config(format!("invalid value `{raw}` for `{key}`")))
}

fn parse_list<T: std::str::FromStr>(key: &str, raw: &str) -> Result<Vec<T>> {
    let items: Vec<T> = raw
        .split(',')
        .map(|item| parse_scalar(key, item))
        .collect::<Result<_>>()?;
    if items.is_empty() {
        return Err(Error::Config(format!("empty list for `{key}`")));
    }
    Ok(items)
}

impl PipelineConfig {
    /// Parse overrides on top of the defaults. Lines hold one
    /// `section.key = value` each; `#` starts a comment, blank lines are
    /// skipped, lists are comma-separated. Unknown keys are errors.
    pub fn parse(text: &str) -> Result<Self> {
        let mut pairs: HashMap<String, String> = HashMap::new();
        for (ln, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected `section.key = value`", ln + 1))
            })?;
            let key = key.trim().to_string();
            if !key.contains('.') {
                return Err(Error::Config(format!(
                    "line {}: key `{key}` is missing its section prefix",
                    ln + 1
                )));
            }
            if pairs.insert(key.clone(), value.trim().to_string()).is_some() {
                return Err(Error::Config(format!("duplicate key `{key}`")));
            }
        }

        let mut cfg = Self::default();
        for (key, raw) in &pairs {
            match key.as_str() {
                "data.train_count" => cfg.data.train_count = parse_scalar(key, raw)?,
                "data.test_count" => cfg.data.test_count = parse_scalar(key, raw)?,
                "data.hr_size" => cfg.data.hr_size = parse_scalar(key, raw)?,
                "data.scale_factor" => cfg.data.scale_factor = parse_scalar(key, raw)?,
                "data.min_shapes" => cfg.data.min_shapes = parse_scalar(key, raw)?,
                "data.max_shapes" => cfg.data.max_shapes = parse_scalar(key, raw)?,
                "data.seed" => cfg.data.seed = parse_scalar(key, raw)?,
                "sr.num_rrdb" => cfg.sr.num_rrdb = parse_scalar(key, raw)?,
                "sr.base_channels" => cfg.sr.base_channels = parse_scalar(key, raw)?,
                "sr.growth_channels" => cfg.sr.growth_channels = parse_scalar(key, raw)?,
                "sr.residual_beta" => cfg.sr.residual_beta = parse_scalar(key, raw)?,
                "sr.steps" => cfg.sr.steps = parse_scalar(key, raw)?,
                "sr.learning_rate" => cfg.sr.learning_rate = parse_scalar(key, raw)?,
                "sr.lambda_gan" => cfg.sr.lambda_gan = parse_scalar(key, raw)?,
                "sr.lambda_perceptual" => cfg.sr.lambda_perceptual = parse_scalar(key, raw)?,
                "sr.lambda_content" => cfg.sr.lambda_content = parse_scalar(key, raw)?,
                "sr.seed" => cfg.sr.seed = parse_scalar(key, raw)?,
                "detector.backbone_channels" => {
                    cfg.detector.backbone_channels = parse_list(key, raw)?
                }
                "detector.scales" => cfg.detector.scales = parse_list(key, raw)?,
                "detector.aspect_ratios" => cfg.detector.aspect_ratios = parse_list(key, raw)?,
                "detector.pool_size" => cfg.detector.pool_size = parse_scalar(key, raw)?,
                "detector.head_hidden" => cfg.detector.head_hidden = parse_scalar(key, raw)?,
                "detector.epochs" => cfg.detector.epochs = parse_scalar(key, raw)?,
                "detector.learning_rate" => cfg.detector.learning_rate = parse_scalar(key, raw)?,
                "detector.score_threshold" => {
                    cfg.detector.score_threshold = parse_scalar(key, raw)?
                }
                "detector.seed" => cfg.detector.seed = parse_scalar(key, raw)?,
                "experiment.eval_iou" => cfg.experiment.eval_iou = parse_scalar(key, raw)?,
                _ => return Err(Error::Config(format!("unknown config key `{key}`"))),
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        self.train_dataset_config().validate()?;
        self.generator_spec().validate()?;
        self.detector_spec().validate()?;
        self.loss_weights().validate()?;
        self.detect_config().validate()?;
        if self.sr.steps == 0 || self.detector.epochs == 0 {
            return Err(Error::Config("training step counts must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.experiment.eval_iou) {
            return Err(Error::Config(format!(
                "experiment.eval_iou must lie in [0,1], got {}",
                self.experiment.eval_iou
            )));
        }
        Ok(())
    }

    pub fn train_dataset_config(&self) -> DatasetConfig {
        DatasetConfig {
            count: self.data.train_count,
            hr_size: self.data.hr_size,
            scale_factor: self.data.scale_factor,
            min_shapes: self.data.min_shapes,
            max_shapes: self.data.max_shapes,
            seed: self.data.seed,
        }
    }

    /// Test split uses an offset seed so it never repeats training images.
    pub fn test_dataset_config(&self) -> DatasetConfig {
        DatasetConfig {
            count: self.data.test_count,
            seed: self.data.seed.wrapping_add(0x5eed),
            ..self.train_dataset_config()
        }
    }

    pub fn generator_spec(&self) -> GeneratorSpec {
        GeneratorSpec {
            num_rrdb: self.sr.num_rrdb,
            base_channels: self.sr.base_channels,
            growth_channels: self.sr.growth_channels,
            residual_beta: self.sr.residual_beta,
            scale_factor: self.data.scale_factor,
            input_channels: 3,
        }
    }

    pub fn discriminator_spec(&self) -> DiscriminatorSpec {
        DiscriminatorSpec {
            input_channels: 3,
            conv_stages: vec![(8, 2), (16, 2), (16, 2)],
        }
    }

    pub fn loss_weights(&self) -> LossWeights {
        LossWeights {
            lambda_gan: self.sr.lambda_gan,
            lambda_perceptual: self.sr.lambda_perceptual,
            lambda_content: self.sr.lambda_content,
        }
    }

    pub fn sr_adam_config(&self) -> AdamConfig {
        AdamConfig {
            lr: self.sr.learning_rate,
            ..AdamConfig::default()
        }
    }

    pub fn detector_spec(&self) -> DetectorSpec {
        DetectorSpec {
            input_channels: 3,
            backbone_channels: self.detector.backbone_channels.clone(),
            anchors: AnchorConfig {
                scales: self.detector.scales.clone(),
                aspect_ratios: self.detector.aspect_ratios.clone(),
                feature_stride: 1 << self.detector.backbone_channels.len(),
            },
            num_classes: NUM_CLASSES,
            pool_size: self.detector.pool_size,
            head_hidden: self.detector.head_hidden,
        }
    }

    pub fn det_train_config(&self) -> DetTrainConfig {
        DetTrainConfig {
            epochs: self.detector.epochs,
            adam: AdamConfig {
                lr: self.detector.learning_rate,
                ..AdamConfig::default()
            },
            seed: self.detector.seed,
            ..DetTrainConfig::default()
        }
    }

    pub fn detect_config(&self) -> DetectConfig {
        DetectConfig {
            score_threshold: self.detector.score_threshold,
            ..DetectConfig::default()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        let cfg = PipelineConfig::default();
        cfg.validate().unwrap();
        assert_eq!(cfg.detector_spec().anchors.feature_stride, 8);
    }

    #[test]
    fn empty_and_comment_only_input_gives_defaults() {
        assert_eq!(
            PipelineConfig::parse("# nothing here\n\n  \n").unwrap(),
            PipelineConfig::default()
        );
    }

    #[test]
    fn overrides_and_lists_parse() {
        let text = "\
# experiment setup
data.train_count = 10
data.hr_size = 32   # inline comment
sr.lambda_content = 0.5
detector.scales = 1, 2, 4
detector.backbone_channels = 8,16
";
        let cfg = PipelineConfig::parse(text).unwrap();
        assert_eq!(cfg.data.train_count, 10);
        assert_eq!(cfg.data.hr_size, 32);
        assert_eq!(cfg.sr.lambda_content, 0.5);
        assert_eq!(cfg.detector.scales, vec![1.0, 2.0, 4.0]);
        assert_eq!(cfg.detector.backbone_channels, vec![8, 16]);
        // stride follows the backbone depth
        assert_eq!(cfg.detector_spec().anchors.feature_stride, 4);
    }

    #[test]
    fn unknown_key_rejected() {
        let err = PipelineConfig::parse("sr.nonsense = 3").unwrap_err();
        assert!(err.to_string().contains("sr.nonsense"));
    }

    #[test]
    fn malformed_lines_rejected() {
        assert!(PipelineConfig::parse("just words").is_err());
        assert!(PipelineConfig::parse("nosection = 3").is_err());
        assert!(PipelineConfig::parse("data.hr_size = forty").is_err());
        assert!(PipelineConfig::parse("data.seed = 1\ndata.seed = 2").is_err());
    }

    #[test]
    fn cross_field_validation_runs() {
        // 50 is not divisible by the scale factor 4
        assert!(PipelineConfig::parse("data.hr_size = 50").is_err());
        // scale factor 3 is not a supported generator scale
        assert!(PipelineConfig::parse("data.hr_size = 48\ndata.scale_factor = 3").is_err());
    }

    #[test]
    fn train_and_test_splits_differ() {
        let cfg = PipelineConfig::default();
        assert_ne!(
            cfg.train_dataset_config().seed,
            cfg.test_dataset_config().seed
        );
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.cfg");
        std::fs::write(&path, "data.train_count = 7\n").unwrap();
        assert_eq!(PipelineConfig::load(&path).unwrap().data.train_count, 7);
    }
}
