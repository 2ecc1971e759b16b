//! Small strided-conv discriminator producing one score in (0,1) per image.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::nn::{ConvDef, ParamSet};
use crate::tape::{NodeId, PointwiseFn, ReduceFn, Tape};
use crate::tensor::Tensor;

const LEAKY_SLOPE: f64 = 0.2;

#[derive(Debug, Clone, PartialEq)]
pub struct DiscriminatorSpec {
    pub input_channels: usize,
    /// (out_channels, stride) per conv stage.
    pub conv_stages: Vec<(usize, usize)>,
}

impl Default for DiscriminatorSpec {
    fn default() -> Self {
        Self {
            input_channels: 3,
            conv_stages: vec![(8, 2), (16, 2), (16, 2), (16, 2)],
        }
    }
}

impl DiscriminatorSpec {
    pub fn validate(&self) -> Result<()> {
        if self.conv_stages.is_empty() {
            return Err(Error::Config("discriminator needs at least one stage".into()));
        }
        if self
            .conv_stages
            .iter()
            .any(|&(c, s)| c == 0 || s == 0)
        {
            return Err(Error::Config("stage channels and strides must be positive".into()));
        }
        Ok(())
    }

    /// Minimum input side length the stride stack supports.
    pub fn min_input_side(&self) -> usize {
        self.conv_stages.iter().map(|&(_, s)| s).product()
    }
}

/// Strided conv stages, a 1x1 head conv to one channel, global mean, sigmoid.
#[derive(Debug, Clone)]
pub struct Discriminator {
    pub spec: DiscriminatorSpec,
    pub params: ParamSet,
    stages: Vec<ConvDef>,
    head: ConvDef,
}

impl Discriminator {
    pub fn build(spec: DiscriminatorSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut params = ParamSet::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut stages = Vec::new();
        let mut c_in = spec.input_channels;
        for (i, &(c_out, stride)) in spec.conv_stages.iter().enumerate() {
            stages.push(ConvDef::new(
                &mut params,
                &mut rng,
                &format!("stage{i}"),
                c_in,
                c_out,
                3,
                stride,
                1,
            ));
            c_in = c_out;
        }
        let head = ConvDef::new(&mut params, &mut rng, "head", c_in, 1, 1, 1, 0);
        Ok(Self {
            spec,
            params,
            stages,
            head,
        })
    }

    /// Forward to a scalar score node, strictly inside (0,1).
    pub fn forward(&self, tape: &mut Tape, nodes: &[NodeId], image: NodeId) -> Result<NodeId> {
        let shape = tape.value(image).shape.clone();
        if shape.len() != 3 || shape[0] != self.spec.input_channels {
            return Err(Error::Shape(format!(
                "discriminator expects ({},H,W), got {shape:?}",
                self.spec.input_channels
            )));
        }
        let min = self.spec.min_input_side();
        if shape[1] < min || shape[2] < min {
            return Err(Error::Shape(format!(
                "input {}x{} too small for stride stack (needs >= {min})",
                shape[1], shape[2]
            )));
        }
        let mut x = image;
        for stage in &self.stages {
            x = stage.apply_leaky(tape, nodes, x, LEAKY_SLOPE)?;
        }
        let logits = self.head.apply(tape, nodes, x)?;
        let mean = tape.reduce(logits, ReduceFn::Mean)?;
        tape.pointwise(mean, PointwiseFn::Sigmoid)
    }

    pub fn score(&self, image: &Tensor) -> Result<f64> {
        let mut tape = Tape::new();
        let nodes = self.params.const_leaves(&mut tape);
        let input = tape.constant(image.clone());
        let out = self.forward(&mut tape, &nodes, input)?;
        Ok(tape.value(out).item())
    }

    pub fn spec_echo(&self) -> Vec<(String, f64)> {
        let mut echo = vec![
            (
                "spec.input_channels".into(),
                self.spec.input_channels as f64,
            ),
            ("spec.num_stages".into(), self.spec.conv_stages.len() as f64),
        ];
        for (i, &(c, s)) in self.spec.conv_stages.iter().enumerate() {
            echo.push((format!("spec.stage{i}.channels"), c as f64));
            echo.push((format!("spec.stage{i}.stride"), s as f64));
        }
        echo
    }
}
