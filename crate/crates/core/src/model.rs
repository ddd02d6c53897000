//! Model graph: an ordered chain of layer descriptors plus the parameters
//! behind the conv-bearing ones. The reference tracker network lives here
//! too; it is the architecture every other module (trainer, quantizer,
//! planner, simulator) is built around.

use crate::codec::{self, OutputMaps};
use crate::deploy;
use crate::error::{Error, Result};
use crate::layer::{
    activation_forward, conv2d_forward, Activation, LayerDesc, LayerKind,
};
use crate::tensor::{Kernel, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Weights and bias of one conv layer.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvParams {
    pub weights: Kernel,
    pub bias: Vec<f32>,
}

/// Compute budget for the tracker network: the published single-image
/// state-of-the-art cost (78.7 MMAC) divided by the claimed 8.3x reduction,
/// truncated to whole MACs.
pub const DEFAULT_MAC_BUDGET: u64 = 9_481_927;

#[derive(Debug, Clone, PartialEq)]
pub struct ModelGraph {
    pub input_shape: (usize, usize, usize),
    pub layers: Vec<LayerDesc>,
    params: Vec<ConvParams>,
    /// Per-channel activation applied to the final conv output
    /// (LED, depth, position).
    pub head_activations: [Activation; 3],
    pub mac_budget: u64,
}

impl ModelGraph {
    /// Build a graph with zero-initialized parameters. Validates that the
    /// layer chain composes and that the final layer emits three channels.
    pub fn new(
        input_shape: (usize, usize, usize),
        layers: Vec<LayerDesc>,
        head_activations: [Activation; 3],
    ) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidArgument("model needs at least one layer".into()));
        }
        let mut shape = input_shape;
        let mut params = Vec::new();
        for desc in &layers {
            desc.validate()?;
            shape = desc.output_shape(shape)?;
            if desc.is_conv() {
                let (kh, kw) = desc.kernel;
                params.push(ConvParams {
                    weights: Kernel::zeros(desc.out_channels, desc.in_channels, kh, kw),
                    bias: vec![0.0; desc.out_channels],
                });
            }
        }
        if shape.0 != 3 {
            return Err(Error::Shape(format!(
                "final layer must emit 3 channels (LED, depth, position), got {}",
                shape.0
            )));
        }
        Ok(ModelGraph {
            input_shape,
            layers,
            params,
            head_activations,
            mac_budget: DEFAULT_MAC_BUDGET,
        })
    }

    /// The budgeted tracker: four 3x3 conv stages (stride 2, 2, 2, 1) with
    /// ReLU, then a 1x1 head conv to the three output planes. 160x160 in,
    /// 20x20 out, 7.872 MMAC total.
    pub fn build_reference_fcnn(seed: u64) -> Self {
        let layers = vec![
            LayerDesc::conv2d(1, 8, 3, 2, 1),
            LayerDesc::activation(Activation::Relu, 8),
            LayerDesc::conv2d(8, 16, 3, 2, 1),
            LayerDesc::activation(Activation::Relu, 16),
            LayerDesc::conv2d(16, 32, 3, 2, 1),
            LayerDesc::activation(Activation::Relu, 32),
            LayerDesc::conv2d(32, 32, 3, 1, 1),
            LayerDesc::activation(Activation::Relu, 32),
            LayerDesc::pointwise(32, 3),
        ];
        let heads = [Activation::Sigmoid, Activation::Linear, Activation::Sigmoid];
        let mut graph = ModelGraph::new((1, 160, 160), layers, heads)
            .expect("reference architecture is well-formed");
        graph.init_kaiming_uniform(seed);
        graph
    }

    /// Kaiming-uniform fan-in initialization, biases zero. Deterministic
    /// for a given seed: draws happen in fixed layer-major order.
    pub fn init_kaiming_uniform(&mut self, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for p in &mut self.params {
            let (_, ci, kh, kw) = p.weights.shape();
            let fan_in = (ci * kh * kw) as f32;
            let bound = (6.0 / fan_in).sqrt();
            for w in p.weights.data_mut() {
                *w = rng.gen_range(-bound..bound);
            }
            for b in p.bias.iter_mut() {
                *b = 0.0;
            }
        }
    }

    pub fn params(&self) -> &[ConvParams] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [ConvParams] {
        &mut self.params
    }

    pub fn set_params(&mut self, params: Vec<ConvParams>) -> Result<()> {
        if params.len() != self.params.len() {
            return Err(Error::Shape(format!(
                "expected {} parameter sets, got {}",
                self.params.len(),
                params.len()
            )));
        }
        for (have, want) in params.iter().zip(&self.params) {
            if have.weights.shape() != want.weights.shape() || have.bias.len() != want.bias.len() {
                return Err(Error::Shape("parameter shapes do not match the layer chain".into()));
            }
        }
        self.params = params;
        Ok(())
    }

    /// Conv-bearing layer descriptors, in order, paired with their
    /// parameter index.
    pub fn conv_layers(&self) -> impl Iterator<Item = (usize, &LayerDesc)> {
        self.layers.iter().filter(|d| d.is_conv()).enumerate()
    }

    pub fn total_macs(&self) -> u64 {
        deploy::count_macs(&self.layers, self.input_shape)
    }

    pub fn check_mac_budget(&self) -> Result<()> {
        let macs = self.total_macs();
        if macs > self.mac_budget {
            return Err(Error::InvalidArgument(format!(
                "model needs {macs} MACs, budget is {}",
                self.mac_budget
            )));
        }
        Ok(())
    }

    /// Number of scalar parameters (weights plus biases).
    pub fn param_count(&self) -> usize {
        self.params.iter().map(|p| p.weights.data().len() + p.bias.len()).sum()
    }

    fn check_input(&self, input: &Tensor) -> Result<()> {
        if input.shape() != self.input_shape {
            return Err(Error::Shape(format!(
                "model expects input {:?}, got {:?}",
                self.input_shape,
                input.shape()
            )));
        }
        Ok(())
    }

    /// Activations after every layer: index 0 is the input, index k is the
    /// output of layer k-1. Head activations are not applied; the last
    /// entry is the raw final conv output.
    pub fn forward_trace(&self, input: &Tensor) -> Result<Vec<Tensor>> {
        self.check_input(input)?;
        let mut trace = Vec::with_capacity(self.layers.len() + 1);
        trace.push(input.clone());
        let mut param_idx = 0;
        for desc in &self.layers {
            let prev = trace.last().expect("trace is never empty");
            let next = match desc.kind {
                LayerKind::Conv2d | LayerKind::PointwiseConv => {
                    let p = &self.params[param_idx];
                    param_idx += 1;
                    conv2d_forward(prev, &p.weights, &p.bias, desc.stride, desc.padding)?
                }
                LayerKind::Activation(act) => activation_forward(prev, act),
            };
            trace.push(next);
        }
        Ok(trace)
    }

    /// Full inference: layer chain, then per-channel head activations on
    /// the three output planes.
    pub fn forward(&self, input: &Tensor) -> Result<Tensor> {
        let trace = self.forward_trace(input)?;
        let raw = trace.into_iter().last().expect("trace is never empty");
        Ok(self.apply_heads(&raw))
    }

    pub fn apply_heads(&self, raw: &Tensor) -> Tensor {
        let (c, h, w) = raw.shape();
        debug_assert_eq!(c, 3);
        let mut out = Tensor::zeros(c, h, w);
        for ch in 0..c {
            let act = self.head_activations[ch];
            for y in 0..h {
                let src = raw.row(ch, y);
                let dst = out.row_mut(ch, y);
                for (d, s) in dst.iter_mut().zip(src) {
                    *d = act.apply(*s);
                }
            }
        }
        out
    }

    pub fn forward_maps(&self, input: &Tensor) -> Result<OutputMaps> {
        OutputMaps::from_tensor(&self.forward(input)?)
    }
}

/// Lift a raw 8-bit 160x160 frame into the network input domain
/// (single channel, pixels scaled by 1/255).
pub fn image_to_input(pixels: &[u8]) -> Result<Tensor> {
    let n = codec::IMAGE_SIZE * codec::IMAGE_SIZE;
    if pixels.len() != n {
        return Err(Error::Shape(format!("expected {n} pixels, got {}", pixels.len())));
    }
    let data = pixels.iter().map(|&p| p as f32 / 255.0).collect();
    Tensor::from_vec(1, codec::IMAGE_SIZE, codec::IMAGE_SIZE, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_net_shapes_compose_to_output_maps() {
        let model = ModelGraph::build_reference_fcnn(1);
        let mut shape = model.input_shape;
        for desc in &model.layers {
            shape = desc.output_shape(shape).unwrap();
        }
        assert_eq!(shape, (3, 20, 20));
    }

    #[test]
    fn reference_net_stays_under_mac_budget() {
        let model = ModelGraph::build_reference_fcnn(1);
        assert_eq!(model.total_macs(), 7_872_000);
        assert!(model.total_macs() <= model.mac_budget);
        model.check_mac_budget().unwrap();
        assert_eq!(model.mac_budget, 9_481_927);
    }

    #[test]
    fn mac_budget_derives_from_published_reduction() {
        assert_eq!((78.7e6f64 / 8.3).floor() as u64, DEFAULT_MAC_BUDGET);
    }

    #[test]
    fn reference_param_count() {
        let model = ModelGraph::build_reference_fcnn(1);
        // 80 + 1168 + 4640 + 9248 + 99 scalars across the five conv layers.
        assert_eq!(model.param_count(), 15_235);
    }

    #[test]
    fn forward_emits_three_20x20_planes_with_head_ranges() {
        let model = ModelGraph::build_reference_fcnn(7);
        let input = image_to_input(&vec![128u8; 160 * 160]).unwrap();
        let out = model.forward(&input).unwrap();
        assert_eq!(out.shape(), (3, 20, 20));
        // LED and position heads are sigmoids, depth head is linear.
        for &v in out.channel(0) {
            assert!(v > 0.0 && v < 1.0);
        }
        for &v in out.channel(2) {
            assert!(v > 0.0 && v < 1.0);
        }
    }

    #[test]
    fn forward_is_deterministic_for_fixed_seed() {
        let a = ModelGraph::build_reference_fcnn(99);
        let b = ModelGraph::build_reference_fcnn(99);
        let input = image_to_input(&(0..160 * 160).map(|i| (i % 251) as u8).collect::<Vec<_>>()).unwrap();
        let out_a = a.forward(&input).unwrap();
        let out_b = b.forward(&input).unwrap();
        assert_eq!(out_a.data(), out_b.data());
    }

    #[test]
    fn different_seeds_give_different_weights() {
        let a = ModelGraph::build_reference_fcnn(1);
        let b = ModelGraph::build_reference_fcnn(2);
        assert_ne!(a.params()[0].weights.data(), b.params()[0].weights.data());
    }

    #[test]
    fn forward_matches_manual_layer_composition() {
        let model = ModelGraph::build_reference_fcnn(5);
        let input = image_to_input(&(0..160 * 160).map(|i| (i * 7 % 256) as u8).collect::<Vec<_>>()).unwrap();

        let mut x = input.clone();
        let mut pi = 0;
        for desc in &model.layers {
            x = match desc.kind {
                LayerKind::Conv2d | LayerKind::PointwiseConv => {
                    let p = &model.params()[pi];
                    pi += 1;
                    conv2d_forward(&x, &p.weights, &p.bias, desc.stride, desc.padding).unwrap()
                }
                LayerKind::Activation(act) => activation_forward(&x, act),
            };
        }
        let manual = model.apply_heads(&x);
        let direct = model.forward(&input).unwrap();
        assert_eq!(manual.data(), direct.data());
    }

    #[test]
    fn rejects_mismatched_input_shape() {
        let model = ModelGraph::build_reference_fcnn(1);
        let wrong = Tensor::zeros(1, 80, 80);
        assert!(model.forward(&wrong).is_err());
    }

    #[test]
    fn kaiming_bounds_respect_fan_in() {
        let model = ModelGraph::build_reference_fcnn(3);
        let p0 = &model.params()[0];
        let bound = (6.0f32 / 9.0).sqrt();
        for &w in p0.weights.data() {
            assert!(w.abs() <= bound);
        }
        assert!(p0.bias.iter().all(|&b| b == 0.0));
    }
}
