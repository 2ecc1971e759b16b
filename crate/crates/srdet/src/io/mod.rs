//! File formats and data generation: PPM images, the synthetic shapes
//! dataset, pipeline configuration, and annotation rendering.

pub mod annotate;
pub mod config;
pub mod dataset;
pub mod ppm;

pub use annotate::annotate;
pub use config::PipelineConfig;
pub use dataset::{
    box_downsample, load_dataset, make_synthetic_dataset, write_dataset, DatasetConfig, Sample,
    CLASS_NAMES, NUM_CLASSES,
};
pub use ppm::{read_image, write_image};
