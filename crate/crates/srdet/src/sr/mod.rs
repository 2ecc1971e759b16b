//! Super-resolution networks: generator, discriminator, checkpoints.

mod checkpoint;
mod discriminator;
mod generator;

pub use checkpoint::{load_params, save_params, CHECKPOINT_VERSION};
pub use discriminator::{Discriminator, DiscriminatorSpec};
pub use generator::{Generator, GeneratorSpec};
