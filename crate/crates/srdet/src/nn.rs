//! Named parameter sets and layer building blocks shared by every network.

use std::collections::HashMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tape::{NodeId, PointwiseFn, Tape};
use crate::tensor::{quantize_f32, Tensor};

/// Ordered collection of named parameter tensors. Order is the checkpoint
/// order; names are the stable layer paths.
#[derive(Debug, Clone, Default)]
pub struct ParamSet {
    names: Vec<String>,
    tensors: Vec<Tensor>,
    index: HashMap<String, usize>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: &str, t: Tensor) -> usize {
        assert!(
            !self.index.contains_key(name),
            "duplicate parameter name {name}"
        );
        let id = self.tensors.len();
        self.names.push(name.to_string());
        self.tensors.push(t.with_grad());
        self.index.insert(name.to_string(), id);
        id
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn name(&self, i: usize) -> &str {
        &self.names[i]
    }

    pub fn tensor(&self, i: usize) -> &Tensor {
        &self.tensors[i]
    }

    pub fn tensor_mut(&mut self, i: usize) -> &mut Tensor {
        &mut self.tensors[i]
    }

    pub fn lookup(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(|s| s.as_str()).zip(self.tensors.iter())
    }

    /// Total scalar parameter count.
    pub fn scalar_count(&self) -> usize {
        self.tensors.iter().map(|t| t.len()).sum()
    }

    /// Replace every tensor from `other`, matching by name and shape.
    /// Fails without touching `self` if anything mismatches.
    pub fn load_from(&mut self, other: &ParamSet) -> Result<()> {
        if other.len() != self.len() {
            return Err(Error::CheckpointCorrupt(format!(
                "parameter count mismatch: file has {}, spec expects {}",
                other.len(),
                self.len()
            )));
        }
        for (i, name) in self.names.iter().enumerate() {
            let j = other.lookup(name).ok_or_else(|| {
                Error::CheckpointCorrupt(format!("missing parameter `{name}`"))
            })?;
            if other.tensors[j].shape != self.tensors[i].shape {
                return Err(Error::CheckpointShape {
                    name: name.clone(),
                    found: other.tensors[j].shape.clone(),
                    expected: self.tensors[i].shape.clone(),
                });
            }
        }
        for (i, name) in self.names.iter().enumerate() {
            let j = other.lookup(name).unwrap();
            self.tensors[i].data = other.tensors[j].data.clone();
        }
        Ok(())
    }

    /// Insert every parameter as a tape leaf, in order; index i of the
    /// returned vec corresponds to parameter i.
    pub fn leaves(&self, tape: &mut Tape) -> Vec<NodeId> {
        self.tensors.iter().map(|t| tape.leaf(t)).collect()
    }

    /// Same, but with gradients disabled (inference).
    pub fn const_leaves(&self, tape: &mut Tape) -> Vec<NodeId> {
        self.tensors
            .iter()
            .map(|t| {
                let mut c = t.clone();
                c.requires_grad = false;
                tape.constant(c)
            })
            .collect()
    }

    /// FNV-1a hash over shapes and f32 bit patterns; used to assert that
    /// fixed networks never change.
    pub fn content_hash(&self) -> u64 {
        let mut h: u64 = 0xcbf29ce484222325;
        let mut mix = |byte: u8| {
            h ^= byte as u64;
            h = h.wrapping_mul(0x100000001b3);
        };
        for (name, t) in self.iter() {
            for b in name.as_bytes() {
                mix(*b);
            }
            for d in &t.shape {
                for b in (*d as u64).to_le_bytes() {
                    mix(b);
                }
            }
            for v in &t.data {
                for b in (*v as f32).to_bits().to_le_bytes() {
                    mix(b);
                }
            }
        }
        h
    }
}

/// Seeded uniform(-a, a) with a = sqrt(1/fan_in), quantized through f32.
pub fn init_uniform(rng: &mut ChaCha8Rng, shape: &[usize], fan_in: usize) -> Tensor {
    let a = (1.0 / fan_in as f64).sqrt();
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n)
        .map(|_| quantize_f32(rng.gen_range(-a..a)))
        .collect();
    Tensor::new(shape.to_vec(), data).expect("init shape")
}

/// Convolution layer bound to weight/bias slots of a [`ParamSet`].
#[derive(Debug, Clone, Copy)]
pub struct ConvDef {
    pub weight: usize,
    pub bias: usize,
    pub stride: usize,
    pub padding: usize,
}

impl ConvDef {
    pub fn new(
        params: &mut ParamSet,
        rng: &mut ChaCha8Rng,
        name: &str,
        c_in: usize,
        c_out: usize,
        k: usize,
        stride: usize,
        padding: usize,
    ) -> Self {
        let fan_in = c_in * k * k;
        let weight = params.add(
            &format!("{name}.weight"),
            init_uniform(rng, &[c_out, c_in, k, k], fan_in),
        );
        let bias = params.add(&format!("{name}.bias"), init_uniform(rng, &[c_out], fan_in));
        Self {
            weight,
            bias,
            stride,
            padding,
        }
    }

    pub fn apply(&self, tape: &mut Tape, nodes: &[NodeId], x: NodeId) -> Result<NodeId> {
        tape.conv2d(x, nodes[self.weight], nodes[self.bias], self.stride, self.padding)
    }

    pub fn apply_leaky(
        &self,
        tape: &mut Tape,
        nodes: &[NodeId],
        x: NodeId,
        slope: f64,
    ) -> Result<NodeId> {
        let y = self.apply(tape, nodes, x)?;
        tape.pointwise(y, PointwiseFn::LeakyRelu(slope))
    }
}

/// Fully-connected layer bound to a [`ParamSet`].
#[derive(Debug, Clone, Copy)]
pub struct LinearDef {
    pub weight: usize,
    pub bias: usize,
}

impl LinearDef {
    pub fn new(
        params: &mut ParamSet,
        rng: &mut ChaCha8Rng,
        name: &str,
        n_in: usize,
        n_out: usize,
    ) -> Self {
        let weight = params.add(
            &format!("{name}.weight"),
            init_uniform(rng, &[n_out, n_in], n_in),
        );
        let bias = params.add(&format!("{name}.bias"), init_uniform(rng, &[n_out], n_in));
        Self { weight, bias }
    }

    pub fn apply(&self, tape: &mut Tape, nodes: &[NodeId], x: NodeId) -> Result<NodeId> {
        tape.linear(x, nodes[self.weight], nodes[self.bias])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn same_seed_same_parameters() {
        let make = || {
            let mut ps = ParamSet::new();
            let mut rng = ChaCha8Rng::seed_from_u64(9);
            ConvDef::new(&mut ps, &mut rng, "c0", 3, 8, 3, 1, 1);
            LinearDef::new(&mut ps, &mut rng, "fc", 8, 4);
            ps
        };
        let a = make();
        let b = make();
        for ((na, ta), (nb, tb)) in a.iter().zip(b.iter()) {
            assert_eq!(na, nb);
            assert_eq!(ta.data, tb.data);
        }
        assert_eq!(a.content_hash(), b.content_hash());
    }

    #[test]
    fn init_values_within_bound_and_f32_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let t = init_uniform(&mut rng, &[64], 16);
        let a = (1.0f64 / 16.0).sqrt();
        for v in &t.data {
            assert!(v.abs() <= a);
            assert_eq!(*v, quantize_f32(*v));
        }
    }

    #[test]
    fn load_from_rejects_shape_mismatch_atomically() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut dst = ParamSet::new();
        dst.add("w", init_uniform(&mut rng, &[2, 2], 2));
        let before = dst.tensor(0).data.clone();
        let mut src = ParamSet::new();
        src.add("w", init_uniform(&mut rng, &[3, 2], 2));
        assert!(dst.load_from(&src).is_err());
        assert_eq!(dst.tensor(0).data, before);
    }
}
