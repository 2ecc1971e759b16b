//! Detector network: shared convolutional backbone, region proposal
//! network, and the RoI classification/regression head.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::det::anchors::AnchorConfig;
use crate::error::{Error, Result};
use crate::nn::{ConvDef, LinearDef, ParamSet};
use crate::tape::{NodeId, PointwiseFn, Tape};
use crate::tensor::Tensor;

const LEAKY_SLOPE: f64 = 0.2;

#[derive(Debug, Clone, PartialEq)]
pub struct DetectorSpec {
    pub input_channels: usize,
    /// Output width of each backbone stage; every stage is a 3x3 stride-2
    /// convolution, so the feature stride is 2^len.
    pub backbone_channels: Vec<usize>,
    pub anchors: AnchorConfig,
    /// Foreground classes; class ids run 1..=num_classes, 0 is background.
    pub num_classes: usize,
    pub pool_size: usize,
    pub head_hidden: usize,
}

impl Default for DetectorSpec {
    fn default() -> Self {
        Self {
            input_channels: 3,
            backbone_channels: vec![16, 32, 64],
            anchors: AnchorConfig::default(),
            num_classes: 3,
            pool_size: 4,
            head_hidden: 64,
        }
    }
}

impl DetectorSpec {
    pub fn validate(&self) -> Result<()> {
        if self.input_channels == 0 {
            return Err(Error::Config("input_channels must be positive".into()));
        }
        if self.backbone_channels.is_empty() || self.backbone_channels.contains(&0) {
            return Err(Error::Config(
                "backbone_channels must be non-empty and positive".into(),
            ));
        }
        self.anchors.validate()?;
        let stride = 1usize << self.backbone_channels.len();
        if self.anchors.feature_stride != stride {
            return Err(Error::Config(format!(
                "feature_stride {} does not match backbone stride {stride}",
                self.anchors.feature_stride
            )));
        }
        if self.num_classes == 0 {
            return Err(Error::Config("num_classes must be positive".into()));
        }
        if self.pool_size == 0 || self.head_hidden == 0 {
            return Err(Error::Config(
                "pool_size and head_hidden must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn feature_stride(&self) -> usize {
        1 << self.backbone_channels.len()
    }

    pub fn feature_channels(&self) -> usize {
        *self.backbone_channels.last().expect("non-empty backbone")
    }
}

/// Raw RPN outputs for one image: per-anchor objectness in (0,1) with shape
/// (A, Hf, Wf) and box deltas with shape (4A, Hf, Wf).
pub struct RpnOutput {
    pub objectness: NodeId,
    pub deltas: NodeId,
}

pub struct DetectorNet {
    pub spec: DetectorSpec,
    pub params: ParamSet,
    backbone: Vec<ConvDef>,
    rpn_conv: ConvDef,
    rpn_obj: ConvDef,
    rpn_reg: ConvDef,
    head_fc: LinearDef,
    head_cls: LinearDef,
    head_reg: LinearDef,
}

impl DetectorNet {
    pub fn build(spec: DetectorSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();

        let mut backbone = Vec::new();
        let mut c_in = spec.input_channels;
        for (i, &c_out) in spec.backbone_channels.iter().enumerate() {
            backbone.push(ConvDef::new(
                &mut params,
                &mut rng,
                &format!("backbone{i}"),
                c_in,
                c_out,
                3,
                2,
                1,
            ));
            c_in = c_out;
        }

        let fc = spec.feature_channels();
        let a = spec.anchors.anchors_per_location();
        let rpn_conv = ConvDef::new(&mut params, &mut rng, "rpn.conv", fc, fc, 3, 1, 1);
        let rpn_obj = ConvDef::new(&mut params, &mut rng, "rpn.obj", fc, a, 1, 1, 0);
        let rpn_reg = ConvDef::new(&mut params, &mut rng, "rpn.reg", fc, 4 * a, 1, 1, 0);

        let head_in = fc * spec.pool_size * spec.pool_size;
        let head_fc = LinearDef::new(&mut params, &mut rng, "head.fc", head_in, spec.head_hidden);
        let head_cls = LinearDef::new(
            &mut params,
            &mut rng,
            "head.cls",
            spec.head_hidden,
            spec.num_classes + 1,
        );
        let head_reg = LinearDef::new(
            &mut params,
            &mut rng,
            "head.reg",
            spec.head_hidden,
            4 * spec.num_classes,
        );

        Ok(Self {
            spec,
            params,
            backbone,
            rpn_conv,
            rpn_obj,
            rpn_reg,
            head_fc,
            head_cls,
            head_reg,
        })
    }

    /// Strided convolutional feature extractor: each stage halves the
    /// spatial size (ceil division via pad-1 stride-2 3x3 kernels).
    pub fn backbone_forward(
        &self,
        tape: &mut Tape,
        nodes: &[NodeId],
        image: NodeId,
    ) -> Result<NodeId> {
        let mut x = image;
        for conv in &self.backbone {
            x = conv.apply_leaky(tape, nodes, x, LEAKY_SLOPE)?;
        }
        Ok(x)
    }

    /// Shared 3x3 conv, then sibling 1x1 heads: objectness through a
    /// sigmoid and unconstrained box deltas.
    pub fn rpn_forward(
        &self,
        tape: &mut Tape,
        nodes: &[NodeId],
        features: NodeId,
    ) -> Result<RpnOutput> {
        let t = self.rpn_conv.apply_leaky(tape, nodes, features, LEAKY_SLOPE)?;
        let logits = self.rpn_obj.apply(tape, nodes, t)?;
        let objectness = tape.pointwise(logits, PointwiseFn::Sigmoid)?;
        let deltas = self.rpn_reg.apply(tape, nodes, t)?;
        Ok(RpnOutput { objectness, deltas })
    }

    /// Flatten pooled features, one hidden layer, then sibling class logits
    /// (num_classes + 1, background first) and per-class box deltas
    /// (4 * num_classes).
    pub fn head_forward(
        &self,
        tape: &mut Tape,
        nodes: &[NodeId],
        pooled: NodeId,
    ) -> Result<(NodeId, NodeId)> {
        let n = tape.value(pooled).len();
        let flat = tape.reshape(pooled, vec![n])?;
        let h = self.head_fc.apply(tape, nodes, flat)?;
        let h = tape.pointwise(h, PointwiseFn::LeakyRelu(LEAKY_SLOPE))?;
        let cls_logits = self.head_cls.apply(tape, nodes, h)?;
        let box_deltas = self.head_reg.apply(tape, nodes, h)?;
        Ok((cls_logits, box_deltas))
    }

    /// Smallest input side the backbone accepts (one feature cell out).
    pub fn min_input_side(&self) -> usize {
        self.spec.feature_stride()
    }

    /// Convenience inference entry: features for a raw image tensor.
    pub fn features(&self, image: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let nodes = self.params.const_leaves(&mut tape);
        let img = tape.constant(image.clone());
        let f = self.backbone_forward(&mut tape, &nodes, img)?;
        Ok(tape.value(f).clone())
    }

    pub fn spec_echo(&self) -> Vec<(String, f64)> {
        let mut echo = vec![
            (
                "spec.input_channels".into(),
                self.spec.input_channels as f64,
            ),
            (
                "spec.num_backbone".into(),
                self.spec.backbone_channels.len() as f64,
            ),
        ];
        for (i, &c) in self.spec.backbone_channels.iter().enumerate() {
            echo.push((format!("spec.backbone{i}"), c as f64));
        }
        echo.push(("spec.num_scales".into(), self.spec.anchors.scales.len() as f64));
        for (i, &s) in self.spec.anchors.scales.iter().enumerate() {
            echo.push((format!("spec.scale{i}"), s));
        }
        echo.push((
            "spec.num_ratios".into(),
            self.spec.anchors.aspect_ratios.len() as f64,
        ));
        for (i, &r) in self.spec.anchors.aspect_ratios.iter().enumerate() {
            echo.push((format!("spec.ratio{i}"), r));
        }
        echo.push((
            "spec.feature_stride".into(),
            self.spec.anchors.feature_stride as f64,
        ));
        echo.push(("spec.num_classes".into(), self.spec.num_classes as f64));
        echo.push(("spec.pool_size".into(), self.spec.pool_size as f64));
        echo.push(("spec.head_hidden".into(), self.spec.head_hidden as f64));
        echo
    }

    /// Zero the 1x1 objectness head; every anchor then scores sigmoid(0).
    #[cfg(test)]
    pub fn zero_rpn_obj(&mut self) {
        for slot in [self.rpn_obj.weight, self.rpn_obj.bias] {
            self.params.tensor_mut(slot).data.fill(0.0);
        }
    }

    /// Zero the class-logit layer; the class posterior becomes uniform.
    #[cfg(test)]
    pub fn zero_head_cls(&mut self) {
        for slot in [self.head_cls.weight, self.head_cls.bias] {
            self.params.tensor_mut(slot).data.fill(0.0);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::test_util::{conv_ref, leaky_ref, linear_ref};

    fn tiny_spec() -> DetectorSpec {
        DetectorSpec {
            input_channels: 3,
            backbone_channels: vec![4, 6],
            anchors: AnchorConfig {
                scales: vec![1.0, 2.0],
                aspect_ratios: vec![1.0],
                feature_stride: 4,
            },
            num_classes: 2,
            pool_size: 2,
            head_hidden: 8,
        }
    }

    fn image(c: usize, h: usize, w: usize, mul: usize) -> Tensor {
        Tensor::new(
            vec![c, h, w],
            (0..c * h * w).map(|v| ((v * mul) % 31) as f64 / 31.0).collect(),
        )
        .unwrap()
    }

    #[test]
    fn validate_catches_stride_mismatch() {
        let mut spec = tiny_spec();
        spec.anchors.feature_stride = 8;
        assert!(spec.validate().is_err());
    }

    #[test]
    fn build_is_seed_deterministic() {
        let a = DetectorNet::build(tiny_spec(), 11).unwrap();
        let b = DetectorNet::build(tiny_spec(), 11).unwrap();
        let c = DetectorNet::build(tiny_spec(), 12).unwrap();
        assert_eq!(a.params.content_hash(), b.params.content_hash());
        assert_ne!(a.params.content_hash(), c.params.content_hash());
    }

    #[test]
    fn rpn_output_shapes_and_range() {
        let net = DetectorNet::build(tiny_spec(), 3).unwrap();
        let mut tape = Tape::new();
        let nodes = net.params.const_leaves(&mut tape);
        let img = tape.constant(image(3, 16, 12, 7));
        let f = net.backbone_forward(&mut tape, &nodes, img).unwrap();
        assert_eq!(tape.value(f).shape, vec![6, 4, 3]);
        let rpn = net.rpn_forward(&mut tape, &nodes, f).unwrap();
        assert_eq!(tape.value(rpn.objectness).shape, vec![2, 4, 3]);
        assert_eq!(tape.value(rpn.deltas).shape, vec![8, 4, 3]);
        for &p in &tape.value(rpn.objectness).data {
            assert!(p > 0.0 && p < 1.0);
        }
    }

    #[test]
    fn zeroed_objectness_head_scores_half() {
        let mut net = DetectorNet::build(tiny_spec(), 3).unwrap();
        net.zero_rpn_obj();
        let mut tape = Tape::new();
        let nodes = net.params.const_leaves(&mut tape);
        let img = tape.constant(image(3, 16, 16, 5));
        let f = net.backbone_forward(&mut tape, &nodes, img).unwrap();
        let rpn = net.rpn_forward(&mut tape, &nodes, f).unwrap();
        for &p in &tape.value(rpn.objectness).data {
            assert!((p - 0.5).abs() < 1e-15);
        }
    }

    #[test]
    fn rpn_matches_straight_line_reference() {
        let net = DetectorNet::build(tiny_spec(), 21).unwrap();
        let img = image(3, 8, 8, 3);

        let p = &net.params;
        let grab = |name: &str| p.tensor(p.lookup(name).unwrap());
        let mut x = img.clone();
        for i in 0..2 {
            x = leaky_ref(
                &conv_ref(
                    &x,
                    grab(&format!("backbone{i}.weight")),
                    grab(&format!("backbone{i}.bias")),
                    2,
                    1,
                ),
                0.2,
            );
        }
        let t = leaky_ref(
            &conv_ref(&x, grab("rpn.conv.weight"), grab("rpn.conv.bias"), 1, 1),
            0.2,
        );
        let obj_logits = conv_ref(&t, grab("rpn.obj.weight"), grab("rpn.obj.bias"), 1, 0);
        let deltas_ref = conv_ref(&t, grab("rpn.reg.weight"), grab("rpn.reg.bias"), 1, 0);

        let mut tape = Tape::new();
        let nodes = net.params.const_leaves(&mut tape);
        let img_n = tape.constant(img);
        let f = net.backbone_forward(&mut tape, &nodes, img_n).unwrap();
        let rpn = net.rpn_forward(&mut tape, &nodes, f).unwrap();
        let obj = tape.value(rpn.objectness);
        let deltas = tape.value(rpn.deltas);
        assert_eq!(obj.shape, obj_logits.shape);
        for (got, logit) in obj.data.iter().zip(&obj_logits.data) {
            let expect = 1.0 / (1.0 + (-logit).exp());
            assert!((got - expect).abs() < 1e-12);
        }
        assert_eq!(deltas.shape, deltas_ref.shape);
        for (got, expect) in deltas.data.iter().zip(&deltas_ref.data) {
            assert!((got - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn head_matches_straight_line_reference() {
        let net = DetectorNet::build(tiny_spec(), 33).unwrap();
        let pooled = image(6, 2, 2, 9);

        let p = &net.params;
        let grab = |name: &str| p.tensor(p.lookup(name).unwrap());
        let h_pre = linear_ref(&pooled.data, grab("head.fc.weight"), grab("head.fc.bias"));
        let h: Vec<f64> = h_pre
            .iter()
            .map(|&v| if v >= 0.0 { v } else { 0.2 * v })
            .collect();
        let cls_ref = linear_ref(&h, grab("head.cls.weight"), grab("head.cls.bias"));
        let reg_ref = linear_ref(&h, grab("head.reg.weight"), grab("head.reg.bias"));

        let mut tape = Tape::new();
        let nodes = net.params.const_leaves(&mut tape);
        let pl = tape.constant(pooled);
        let (cls, reg) = net.head_forward(&mut tape, &nodes, pl).unwrap();
        assert_eq!(tape.value(cls).shape, vec![3]);
        assert_eq!(tape.value(reg).shape, vec![8]);
        for (got, expect) in tape.value(cls).data.iter().zip(&cls_ref) {
            assert!((got - expect).abs() < 1e-12);
        }
        for (got, expect) in tape.value(reg).data.iter().zip(&reg_ref) {
            assert!((got - expect).abs() < 1e-12);
        }
    }
}
