//! Residual-in-residual dense block generator with pixel-shuffle upsampling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::nn::{ConvDef, ParamSet};
use crate::tape::{NodeId, PointwiseFn, Tape};
use crate::tensor::Tensor;

const LEAKY_SLOPE: f64 = 0.2;
/// Convs per dense block: four growth convs plus the fuse conv.
const DENSE_CONVS: usize = 5;
const DENSE_BLOCKS: usize = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorSpec {
    pub num_rrdb: usize,
    pub base_channels: usize,
    pub growth_channels: usize,
    pub residual_beta: f64,
    pub scale_factor: usize,
    pub input_channels: usize,
}

impl Default for GeneratorSpec {
    fn default() -> Self {
        Self {
            num_rrdb: 3,
            base_channels: 16,
            growth_channels: 8,
            residual_beta: 0.2,
            scale_factor: 4,
            input_channels: 3,
        }
    }
}

impl GeneratorSpec {
    pub fn validate(&self) -> Result<()> {
        if self.scale_factor != 2 && self.scale_factor != 4 {
            return Err(Error::Config(format!(
                "scale_factor must be 2 or 4, got {}",
                self.scale_factor
            )));
        }
        if self.base_channels == 0 || self.growth_channels == 0 || self.input_channels == 0 {
            return Err(Error::Config("channel counts must be positive".into()));
        }
        if !(self.residual_beta > 0.0 && self.residual_beta <= 1.0) {
            return Err(Error::Config(format!(
                "residual_beta must be in (0,1], got {}",
                self.residual_beta
            )));
        }
        Ok(())
    }

    pub fn upsample_stages(&self) -> usize {
        (self.scale_factor as f64).log2() as usize
    }
}

#[derive(Debug, Clone)]
struct DenseBlockDef {
    convs: Vec<ConvDef>,
}

#[derive(Debug, Clone)]
struct RrdbDef {
    blocks: Vec<DenseBlockDef>,
}

/// Layer layout: first conv, RRDB chain, trunk conv, global skip from the
/// first conv output, upsampling stages (conv + pixel shuffle + leaky),
/// final conv, hard clamp to [0,1].
#[derive(Debug, Clone)]
pub struct Generator {
    pub spec: GeneratorSpec,
    pub params: ParamSet,
    first: ConvDef,
    rrdbs: Vec<RrdbDef>,
    trunk: ConvDef,
    ups: Vec<ConvDef>,
    last: ConvDef,
}

/// Intermediate feature nodes, exposed so residual-identity behavior can be
/// asserted stage by stage.
pub struct GeneratorStages {
    pub first: NodeId,
    pub post_skip: NodeId,
    pub output: NodeId,
}

impl Generator {
    pub fn build(spec: GeneratorSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut params = ParamSet::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let base = spec.base_channels;
        let growth = spec.growth_channels;
        let first = ConvDef::new(
            &mut params,
            &mut rng,
            "first_conv",
            spec.input_channels,
            base,
            3,
            1,
            1,
        );
        let mut rrdbs = Vec::with_capacity(spec.num_rrdb);
        for r in 0..spec.num_rrdb {
            let mut blocks = Vec::with_capacity(DENSE_BLOCKS);
            for d in 0..DENSE_BLOCKS {
                let mut convs = Vec::with_capacity(DENSE_CONVS);
                for i in 0..DENSE_CONVS {
                    let c_in = base + i * growth;
                    let c_out = if i + 1 == DENSE_CONVS { base } else { growth };
                    convs.push(ConvDef::new(
                        &mut params,
                        &mut rng,
                        &format!("rrdb{r}.db{d}.conv{i}"),
                        c_in,
                        c_out,
                        3,
                        1,
                        1,
                    ));
                }
                blocks.push(DenseBlockDef { convs });
            }
            rrdbs.push(RrdbDef { blocks });
        }
        let trunk = ConvDef::new(&mut params, &mut rng, "trunk_conv", base, base, 3, 1, 1);
        let mut ups = Vec::new();
        for u in 0..spec.upsample_stages() {
            ups.push(ConvDef::new(
                &mut params,
                &mut rng,
                &format!("up{u}"),
                base,
                4 * base,
                3,
                1,
                1,
            ));
        }
        let last = ConvDef::new(
            &mut params,
            &mut rng,
            "final_conv",
            base,
            spec.input_channels,
            3,
            1,
            1,
        );
        Ok(Self {
            spec,
            params,
            first,
            rrdbs,
            trunk,
            ups,
            last,
        })
    }

    fn dense_block(
        &self,
        tape: &mut Tape,
        nodes: &[NodeId],
        db: &DenseBlockDef,
        x: NodeId,
    ) -> Result<NodeId> {
        let mut feats = vec![x];
        for (i, conv) in db.convs.iter().enumerate() {
            let cat = if feats.len() == 1 {
                feats[0]
            } else {
                tape.concat_channels(&feats)?
            };
            if i + 1 == DENSE_CONVS {
                return conv.apply(tape, nodes, cat);
            }
            let y = conv.apply_leaky(tape, nodes, cat, LEAKY_SLOPE)?;
            feats.push(y);
        }
        unreachable!("dense block has a fuse conv")
    }

    /// One RRDB: three residual dense sub-blocks, then the outer residual
    /// scaled by beta. Zeroing every dense-path parameter makes this the
    /// exact identity.
    pub fn rrdb_forward(
        &self,
        tape: &mut Tape,
        nodes: &[NodeId],
        block: usize,
        x: NodeId,
    ) -> Result<NodeId> {
        if tape.value(x).shape[0] != self.spec.base_channels {
            return Err(Error::Shape(format!(
                "rrdb expects {} channels, got {}",
                self.spec.base_channels,
                tape.value(x).shape[0]
            )));
        }
        let beta = self.spec.residual_beta;
        let rrdb = &self.rrdbs[block];
        let mut cur = x;
        for db in &rrdb.blocks {
            let delta = self.dense_block(tape, nodes, db, cur)?;
            let scaled = tape.scale(delta, beta);
            cur = tape.add(cur, scaled)?;
        }
        let diff = tape.sub(cur, x)?;
        let scaled = tape.scale(diff, beta);
        tape.add(x, scaled)
    }

    pub fn forward_stages(
        &self,
        tape: &mut Tape,
        nodes: &[NodeId],
        input: NodeId,
    ) -> Result<GeneratorStages> {
        let in_ch = tape.value(input).shape[0];
        if in_ch != self.spec.input_channels {
            return Err(Error::Shape(format!(
                "generator expects {} input channels, got {in_ch}",
                self.spec.input_channels
            )));
        }
        let first = self.first.apply(tape, nodes, input)?;
        let mut x = first;
        for r in 0..self.rrdbs.len() {
            x = self.rrdb_forward(tape, nodes, r, x)?;
        }
        let trunk = self.trunk.apply(tape, nodes, x)?;
        let post_skip = tape.add(first, trunk)?;
        let mut up = post_skip;
        for conv in &self.ups {
            let y = conv.apply(tape, nodes, up)?;
            let shuffled = tape.pixel_shuffle(y, 2)?;
            up = tape.pointwise(shuffled, PointwiseFn::LeakyRelu(LEAKY_SLOPE))?;
        }
        let pre = self.last.apply(tape, nodes, up)?;
        let output = tape.clamp(pre, 0.0, 1.0);
        Ok(GeneratorStages {
            first,
            post_skip,
            output,
        })
    }

    pub fn forward(&self, tape: &mut Tape, nodes: &[NodeId], input: NodeId) -> Result<NodeId> {
        Ok(self.forward_stages(tape, nodes, input)?.output)
    }

    /// Inference convenience: run on a plain image tensor.
    pub fn infer(&self, image: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let nodes = self.params.const_leaves(&mut tape);
        let input = tape.constant(image.clone());
        let out = self.forward(&mut tape, &nodes, input)?;
        Ok(tape.value(out).clone())
    }

    /// Zero every dense-path conv inside the RRDB blocks.
    pub fn zero_dense_paths(&mut self) {
        let slots: Vec<usize> = self
            .rrdbs
            .iter()
            .flat_map(|r| r.blocks.iter())
            .flat_map(|db| db.convs.iter())
            .flat_map(|c| [c.weight, c.bias])
            .collect();
        for slot in slots {
            let t = self.params.tensor_mut(slot);
            t.data.iter_mut().for_each(|v| *v = 0.0);
        }
    }

    /// Zero the trunk conv (weights and bias).
    pub fn zero_trunk_conv(&mut self) {
        for slot in [self.trunk.weight, self.trunk.bias] {
            let t = self.params.tensor_mut(slot);
            t.data.iter_mut().for_each(|v| *v = 0.0);
        }
    }

    /// Fields echoed into checkpoints for atomic mismatch rejection.
    pub fn spec_echo(&self) -> Vec<(String, f64)> {
        vec![
            ("spec.num_rrdb".into(), self.spec.num_rrdb as f64),
            ("spec.base_channels".into(), self.spec.base_channels as f64),
            (
                "spec.growth_channels".into(),
                self.spec.growth_channels as f64,
            ),
            ("spec.residual_beta".into(), self.spec.residual_beta),
            ("spec.scale_factor".into(), self.spec.scale_factor as f64),
            (
                "spec.input_channels".into(),
                self.spec.input_channels as f64,
            ),
        ]
    }
}
