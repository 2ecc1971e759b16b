//! Loss functions, fixed feature extractor, optimizer, and the SR training
//! loop.

mod adam;
mod feature;
mod losses;
mod sr_trainer;

pub use adam::{Adam, AdamConfig};
pub use feature::FeatureExtractor;
pub use losses::{
    adversarial_value, discriminator_loss, generator_adversarial_loss, perceptual_loss,
    total_loss, LossWeights, SCORE_EPS,
};
pub use sr_trainer::{write_loss_history, LossReport, SrTrainer};
