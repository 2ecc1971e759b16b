//! Fixed seeded feature extractor defining the perceptual distance.
//!
//! A three-layer conv stack whose parameters never change after
//! construction; `content_hash` is asserted stable across training runs.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::nn::{ConvDef, ParamSet};
use crate::tape::{NodeId, Tape};
use crate::tensor::Tensor;

const LEAKY_SLOPE: f64 = 0.2;

#[derive(Debug, Clone)]
pub struct FeatureExtractor {
    pub params: ParamSet,
    convs: Vec<ConvDef>,
    /// Layer whose activations define the perceptual comparison (0-based,
    /// applied after that layer's activation).
    pub tap: usize,
}

impl FeatureExtractor {
    pub fn build(input_channels: usize, seed: u64) -> Self {
        let mut params = ParamSet::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let widths = [8, 8, 8];
        let mut convs = Vec::new();
        let mut c_in = input_channels;
        for (i, &c_out) in widths.iter().enumerate() {
            convs.push(ConvDef::new(
                &mut params,
                &mut rng,
                &format!("phi{i}"),
                c_in,
                c_out,
                3,
                1,
                1,
            ));
            c_in = c_out;
        }
        Self {
            params,
            convs,
            tap: 2,
        }
    }

    pub fn forward(&self, tape: &mut Tape, nodes: &[NodeId], image: NodeId) -> Result<NodeId> {
        let mut x = image;
        for (i, conv) in self.convs.iter().enumerate() {
            x = conv.apply_leaky(tape, nodes, x, LEAKY_SLOPE)?;
            if i == self.tap {
                break;
            }
        }
        Ok(x)
    }

    pub fn features(&self, image: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let nodes = self.params.const_leaves(&mut tape);
        let input = tape.constant(image.clone());
        let out = self.forward(&mut tape, &nodes, input)?;
        Ok(tape.value(out).clone())
    }

    pub fn param_hash(&self) -> u64 {
        self.params.content_hash()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hash_stable_and_seed_dependent() {
        let a = FeatureExtractor::build(3, 10);
        let b = FeatureExtractor::build(3, 10);
        let c = FeatureExtractor::build(3, 11);
        assert_eq!(a.param_hash(), b.param_hash());
        assert_ne!(a.param_hash(), c.param_hash());
    }

    #[test]
    fn feature_shape_preserved_spatially() {
        let phi = FeatureExtractor::build(3, 1);
        let img = Tensor::filled(&[3, 8, 8], 0.3);
        let f = phi.features(&img).unwrap();
        assert_eq!(f.shape, vec![8, 8, 8]);
    }
}
