//! Post-training int8 quantization.
//!
//! Per-tensor affine scheme: weights are symmetric (zero point 0, scale
//! max|w| / 127), activations are asymmetric with min/max ranges observed on
//! a calibration set, widened to include zero so that padding stays exact.
//! Biases are stored as int32 in the product scale. Between layers the
//! accumulator is rescaled with a 32-bit integer multiplier and a right
//! shift, rounding half away from zero; inference is integer-only end to
//! end, so results are bit-reproducible across runs.

use crate::codec::OutputMaps;
use crate::error::{Error, Result};
use crate::layer::{Activation, LayerDesc, LayerKind};
use crate::model::ModelGraph;
use crate::tensor::Tensor;

/// Fallback scale for degenerate (constant or empty) ranges.
pub const SCALE_FLOOR: f32 = 1e-6;
/// Minimum number of calibration images.
pub const MIN_CALIBRATION_IMAGES: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct QuantParams {
    pub scale: f32,
    pub zero_point: i32,
}

impl QuantParams {
    /// Symmetric parameters for a weight tensor.
    pub fn symmetric(max_abs: f32) -> Self {
        QuantParams { scale: (max_abs / 127.0).max(SCALE_FLOOR), zero_point: 0 }
    }

    /// Asymmetric parameters covering [min, max], widened to include zero.
    pub fn from_range(min: f32, max: f32) -> Self {
        let lo = min.min(0.0);
        let hi = max.max(0.0);
        let scale = ((hi - lo) / 255.0).max(SCALE_FLOOR);
        let zp = (-128.0 - lo / scale).round() as i32;
        QuantParams { scale, zero_point: zp.clamp(-128, 127) }
    }

    #[inline]
    pub fn quantize(&self, x: f32) -> i8 {
        let q = (x / self.scale).round() as i32 + self.zero_point;
        q.clamp(-128, 127) as i8
    }

    #[inline]
    pub fn dequantize(&self, q: i8) -> f32 {
        (q as i32 - self.zero_point) as f32 * self.scale
    }
}

/// Fixed-point representation of a positive real ratio as
/// multiplier * 2^-shift, with the multiplier normalized into
/// [2^30, 2^31).
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct Requant {
    pub multiplier: i32,
    pub shift: u32,
}

impl Requant {
    pub fn from_ratio(ratio: f64) -> Result<Self> {
        if !(ratio > 0.0) || !ratio.is_finite() {
            return Err(Error::InvalidArgument(format!("requant ratio {ratio} must be positive and finite")));
        }
        let mut q = ratio;
        let mut exp = 0i32;
        while q < 0.5 {
            q *= 2.0;
            exp += 1;
        }
        while q >= 1.0 {
            q /= 2.0;
            exp -= 1;
        }
        let mut fixed = (q * (1i64 << 31) as f64).round() as i64;
        if fixed == 1i64 << 31 {
            fixed /= 2;
            exp -= 1;
        }
        let shift = 31 + exp;
        if !(0..=62).contains(&shift) {
            return Err(Error::InvalidArgument(format!("requant ratio {ratio} out of representable range")));
        }
        Ok(Requant { multiplier: fixed as i32, shift: shift as u32 })
    }

    /// Apply to a 32-bit accumulator.
    #[inline]
    pub fn apply(&self, acc: i32) -> i32 {
        rounding_rshift(acc as i64 * self.multiplier as i64, self.shift) as i32
    }
}

/// Arithmetic right shift rounding half away from zero.
#[inline]
pub fn rounding_rshift(x: i64, shift: u32) -> i64 {
    if shift == 0 {
        return x;
    }
    let half = 1u64 << (shift - 1);
    let mag = (x.unsigned_abs() + half) >> shift;
    if x < 0 {
        -(mag as i64)
    } else {
        mag as i64
    }
}

/// int8 activation tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantTensor {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<i8>,
    pub params: QuantParams,
}

impl QuantTensor {
    pub fn from_f32(t: &Tensor, params: QuantParams) -> Self {
        let (c, h, w) = t.shape();
        QuantTensor {
            channels: c,
            height: h,
            width: w,
            data: t.data().iter().map(|&x| params.quantize(x)).collect(),
            params,
        }
    }

    pub fn dequantize(&self) -> Tensor {
        let data = self.data.iter().map(|&q| self.params.dequantize(q)).collect();
        Tensor::from_vec(self.channels, self.height, self.width, data).expect("shape preserved")
    }
}

/// One quantized conv layer with its requantization to the next domain.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedLayer {
    pub desc: LayerDesc,
    /// (C_out, C_in, kh, kw) row-major int8 weights.
    pub weights: Vec<i8>,
    pub w_scale: f32,
    /// int32 biases in the input*weight scale.
    pub bias: Vec<i32>,
    pub in_params: QuantParams,
    pub out_params: QuantParams,
    pub requant: Requant,
    /// ReLU folded into the output clamp.
    pub relu: bool,
}

/// Integer-only convolution: int8 in, int32 accumulate, requantized int8
/// out. Padding positions contribute exactly zero because they are filled
/// with the input zero point.
pub fn int8_conv_forward(input: &QuantTensor, layer: &QuantizedLayer) -> Result<QuantTensor> {
    let desc = &layer.desc;
    let (kh, kw) = desc.kernel;
    if input.channels != desc.in_channels {
        return Err(Error::Shape(format!(
            "quantized layer expects {} input channels, got {}",
            desc.in_channels, input.channels
        )));
    }
    let (h, w) = (input.height, input.width);
    let oh = (h + 2 * desc.padding - kh) / desc.stride + 1;
    let ow = (w + 2 * desc.padding - kw) / desc.stride + 1;
    let co = desc.out_channels;
    let ci = desc.in_channels;
    let zp_in = layer.in_params.zero_point;

    let mut out = vec![0i8; co * oh * ow];
    let mut acc = vec![0i32; oh * ow];
    for c_out in 0..co {
        for a in acc.iter_mut() {
            *a = layer.bias[c_out];
        }
        for c_in in 0..ci {
            for ky in 0..kh {
                for kx in 0..kw {
                    let wgt = layer.weights[((c_out * ci + c_in) * kh + ky) * kw + kx] as i32;
                    if wgt == 0 {
                        continue;
                    }
                    for oy in 0..oh {
                        let iy = (oy * desc.stride + ky) as isize - desc.padding as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let in_row = &input.data[(c_in * h + iy as usize) * w..(c_in * h + iy as usize) * w + w];
                        let acc_row = &mut acc[oy * ow..(oy + 1) * ow];
                        for (ox, a) in acc_row.iter_mut().enumerate() {
                            let ix = (ox * desc.stride + kx) as isize - desc.padding as isize;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            *a += wgt * (in_row[ix as usize] as i32 - zp_in);
                        }
                    }
                }
            }
        }
        let zp_out = layer.out_params.zero_point;
        let lo = if layer.relu { zp_out.max(-128) } else { -128 };
        let out_plane = &mut out[c_out * oh * ow..(c_out + 1) * oh * ow];
        for (o, &a) in out_plane.iter_mut().zip(acc.iter()) {
            let q = layer.requant.apply(a) + zp_out;
            *o = q.clamp(lo, 127) as i8;
        }
    }
    Ok(QuantTensor { channels: co, height: oh, width: ow, data: out, params: layer.out_params })
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedModel {
    pub input_shape: (usize, usize, usize),
    pub input_params: QuantParams,
    pub layers: Vec<QuantizedLayer>,
    pub head_activations: [Activation; 3],
}

impl QuantizedModel {
    /// int8 weight bytes plus 4-byte biases, the L2-resident parameter size.
    pub fn param_bytes(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + 4 * l.bias.len()).sum()
    }

    /// Layer descriptors of the quantized chain (conv layers only; ReLU is
    /// folded into them).
    pub fn conv_descs(&self) -> Vec<LayerDesc> {
        self.layers.iter().map(|l| l.desc).collect()
    }

    pub fn forward_quant(&self, input: &Tensor) -> Result<QuantTensor> {
        if input.shape() != self.input_shape {
            return Err(Error::Shape(format!(
                "quantized model expects input {:?}, got {:?}",
                self.input_shape,
                input.shape()
            )));
        }
        let mut x = QuantTensor::from_f32(input, self.input_params);
        for layer in &self.layers {
            x = int8_conv_forward(&x, layer)?;
        }
        Ok(x)
    }

    /// Full inference: quantize, run the int8 chain, dequantize, apply the
    /// f32 head activations.
    pub fn forward_maps(&self, input: &Tensor) -> Result<OutputMaps> {
        let q = self.forward_quant(input)?;
        let raw = q.dequantize();
        let (c, h, w) = raw.shape();
        if c != 3 {
            return Err(Error::Shape(format!("quantized chain must emit 3 planes, got {c}")));
        }
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
        OutputMaps::from_tensor(&out)
    }
}

/// Observed value range at one activation site.
#[derive(Debug, Clone, Copy)]
struct Range {
    min: f32,
    max: f32,
}

impl Range {
    fn empty() -> Self {
        Range { min: f32::INFINITY, max: f32::NEG_INFINITY }
    }

    fn update(&mut self, values: &[f32]) {
        for &v in values {
            self.min = self.min.min(v);
            self.max = self.max.max(v);
        }
    }

    fn params(&self) -> QuantParams {
        if self.min > self.max {
            return QuantParams { scale: SCALE_FLOOR, zero_point: 0 };
        }
        QuantParams::from_range(self.min, self.max)
    }
}

/// Post-training calibration: runs the f32 model over the calibration set,
/// records per-site activation ranges, and assembles the integer pipeline.
pub fn calibrate(model: &ModelGraph, calib: &[Tensor]) -> Result<QuantizedModel> {
    if calib.len() < MIN_CALIBRATION_IMAGES {
        return Err(Error::InvalidArgument(format!(
            "calibration needs at least {MIN_CALIBRATION_IMAGES} images, got {}",
            calib.len()
        )));
    }

    // Map each conv layer to the trace index of its quantization boundary:
    // the following ReLU output when present, the raw conv output otherwise.
    let mut sites = Vec::new(); // (conv layer index, boundary trace index, relu)
    for (idx, desc) in model.layers.iter().enumerate() {
        if !desc.is_conv() {
            continue;
        }
        let relu = matches!(
            model.layers.get(idx + 1),
            Some(LayerDesc { kind: LayerKind::Activation(Activation::Relu), .. })
        );
        let boundary = if relu { idx + 2 } else { idx + 1 };
        sites.push((idx, boundary, relu));
    }

    let mut input_range = Range::empty();
    let mut out_ranges = vec![Range::empty(); sites.len()];
    for image in calib {
        let trace = model.forward_trace(image)?;
        input_range.update(trace[0].data());
        for (k, &(_, boundary, _)) in sites.iter().enumerate() {
            out_ranges[k].update(trace[boundary].data());
        }
    }

    let input_params = input_range.params();
    let mut layers = Vec::with_capacity(sites.len());
    let mut in_params = input_params;
    for (k, &(layer_idx, _, relu)) in sites.iter().enumerate() {
        let desc = model.layers[layer_idx];
        let p = &model.params()[k];
        let max_abs = p.weights.data().iter().fold(0.0f32, |m, &w| m.max(w.abs()));
        let w_params = QuantParams::symmetric(max_abs);
        let weights: Vec<i8> = p.weights.data().iter().map(|&w| w_params.quantize(w)).collect();
        let bias_scale = in_params.scale as f64 * w_params.scale as f64;
        let bias: Vec<i32> = p.bias.iter().map(|&b| (b as f64 / bias_scale).round() as i32).collect();
        let out_params = out_ranges[k].params();
        let requant = Requant::from_ratio(bias_scale / out_params.scale as f64)?;
        layers.push(QuantizedLayer {
            desc,
            weights,
            w_scale: w_params.scale,
            bias,
            in_params,
            out_params,
            requant,
            relu,
        });
        in_params = out_params;
    }

    Ok(QuantizedModel {
        input_shape: model.input_shape,
        input_params,
        layers,
        head_activations: model.head_activations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layer::conv2d_forward;
    use crate::model::{image_to_input, ModelGraph};
    use crate::tensor::Kernel;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn round_trip_error_is_at_most_half_a_step() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..200 {
            let params = QuantParams::from_range(rng.gen_range(-3.0..0.0), rng.gen_range(0.0..3.0));
            let lo = (-128 - params.zero_point) as f32 * params.scale;
            let hi = (127 - params.zero_point) as f32 * params.scale;
            let x = rng.gen_range(lo..hi);
            let back = params.dequantize(params.quantize(x));
            assert!(
                (back - x).abs() <= params.scale / 2.0 + params.scale * 1e-3,
                "x {x}, back {back}, scale {}",
                params.scale
            );
        }
    }

    #[test]
    fn degenerate_range_gets_the_scale_floor() {
        let p = QuantParams::symmetric(0.0);
        assert_eq!(p.scale, SCALE_FLOOR);
        assert_eq!(p.zero_point, 0);
        assert_eq!(p.quantize(0.0), 0);
        let p = QuantParams::from_range(0.0, 0.0);
        assert_eq!(p.scale, SCALE_FLOOR);
    }

    #[test]
    fn saturating_values_clamp_instead_of_wrapping() {
        let p = QuantParams { scale: 0.1, zero_point: 0 };
        assert_eq!(p.quantize(1.0e9), 127);
        assert_eq!(p.quantize(-1.0e9), -128);
    }

    #[test]
    fn zero_always_quantizes_exactly() {
        for (lo, hi) in [(-1.0f32, 2.0f32), (0.5, 3.0), (-4.0, -0.25), (0.0, 1.0)] {
            let p = QuantParams::from_range(lo, hi);
            assert_eq!(p.dequantize(p.quantize(0.0)), 0.0, "range ({lo},{hi})");
        }
    }

    #[test]
    fn rounding_shift_is_half_away_from_zero() {
        assert_eq!(rounding_rshift(3, 1), 2); // 1.5 -> 2
        assert_eq!(rounding_rshift(-3, 1), -2); // -1.5 -> -2
        assert_eq!(rounding_rshift(1, 1), 1); // 0.5 -> 1
        assert_eq!(rounding_rshift(-1, 1), -1); // -0.5 -> -1
        assert_eq!(rounding_rshift(5, 2), 1); // 1.25 -> 1
        assert_eq!(rounding_rshift(6, 2), 2); // 1.5 -> 2
        assert_eq!(rounding_rshift(10, 0), 10);
    }

    #[test]
    fn unit_ratio_requant_is_identity() {
        let r = Requant::from_ratio(1.0).unwrap();
        for v in [-1000, -1, 0, 1, 31337] {
            assert_eq!(r.apply(v), v);
        }
    }

    #[test]
    fn requant_approximates_small_ratios_closely() {
        for ratio in [0.5, 0.123, 3.2e-4, 0.9999] {
            let r = Requant::from_ratio(ratio).unwrap();
            let acc = 100_000i32;
            let got = r.apply(acc) as f64;
            let want = acc as f64 * ratio;
            assert!((got - want).abs() <= 1.0, "ratio {ratio}: {got} vs {want}");
        }
        assert!(Requant::from_ratio(0.0).is_err());
        assert!(Requant::from_ratio(-1.0).is_err());
    }

    fn identity_layer() -> QuantizedLayer {
        QuantizedLayer {
            desc: LayerDesc::pointwise(1, 1),
            weights: vec![1],
            w_scale: 1.0,
            bias: vec![0],
            in_params: QuantParams { scale: 1.0, zero_point: 0 },
            out_params: QuantParams { scale: 1.0, zero_point: 0 },
            requant: Requant::from_ratio(1.0).unwrap(),
            relu: false,
        }
    }

    #[test]
    fn identity_int8_conv_passes_input_through() {
        let input = QuantTensor {
            channels: 1,
            height: 2,
            width: 3,
            data: vec![5, -7, 0, 127, -128, 42],
            params: QuantParams { scale: 1.0, zero_point: 0 },
        };
        let out = int8_conv_forward(&input, &identity_layer()).unwrap();
        assert_eq!(out.data, input.data);
    }

    #[test]
    fn int8_conv_matches_f32_oracle_within_one_step() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for trial in 0..40 {
            let ci = rng.gen_range(1..3);
            let co = rng.gen_range(1..3);
            let k = [1, 3][rng.gen_range(0..2)];
            let h = rng.gen_range(k..k + 5);
            let w = rng.gen_range(k..k + 5);
            let in_params = QuantParams::from_range(rng.gen_range(-1.0..0.0), rng.gen_range(0.1..1.0));
            let w_params = QuantParams::symmetric(rng.gen_range(0.2..1.0));

            let x_q: Vec<i8> = (0..ci * h * w).map(|_| rng.gen_range(-128..=127) as i8).collect();
            let w_q: Vec<i8> = (0..co * ci * k * k).map(|_| rng.gen_range(-127..=127) as i8).collect();
            let bias_f: Vec<f32> = (0..co).map(|_| rng.gen_range(-0.5..0.5)).collect();

            // f32 reference on the dequantized operands.
            let x_f = QuantTensor { channels: ci, height: h, width: w, data: x_q.clone(), params: in_params }
                .dequantize();
            let w_f = Kernel::from_vec(
                co,
                ci,
                k,
                k,
                w_q.iter().map(|&q| w_params.dequantize(q)).collect(),
            )
            .unwrap();
            let out_f = conv2d_forward(&x_f, &w_f, &bias_f, 1, k / 2).unwrap();
            let omin = out_f.data().iter().cloned().fold(f32::INFINITY, f32::min);
            let omax = out_f.data().iter().cloned().fold(f32::NEG_INFINITY, f32::max);
            let out_params = QuantParams::from_range(omin, omax);

            let bias_scale = in_params.scale as f64 * w_params.scale as f64;
            let layer = QuantizedLayer {
                desc: LayerDesc { kind: LayerKind::Conv2d, in_channels: ci, out_channels: co, kernel: (k, k), stride: 1, padding: k / 2 },
                weights: w_q,
                w_scale: w_params.scale,
                bias: bias_f.iter().map(|&b| (b as f64 / bias_scale).round() as i32).collect(),
                in_params,
                out_params,
                requant: Requant::from_ratio(bias_scale / out_params.scale as f64).unwrap(),
                relu: false,
            };
            let input = QuantTensor { channels: ci, height: h, width: w, data: x_q, params: in_params };
            let got = int8_conv_forward(&input, &layer).unwrap();
            for (idx, (&q, &f)) in got.data.iter().zip(out_f.data()).enumerate() {
                let expected = out_params.quantize(f);
                assert!(
                    (q as i32 - expected as i32).abs() <= 1,
                    "trial {trial} idx {idx}: int8 {q} vs quantized f32 {expected}"
                );
            }
        }
    }

    fn calib_set(n: usize) -> Vec<Tensor> {
        let mut rng = ChaCha8Rng::seed_from_u64(404);
        (0..n)
            .map(|_| {
                let pixels: Vec<u8> = (0..160 * 160).map(|_| rng.gen_range(0..=255)).collect();
                image_to_input(&pixels).unwrap()
            })
            .collect()
    }

    #[test]
    fn calibration_requires_enough_images() {
        let model = ModelGraph::build_reference_fcnn(1);
        assert!(calibrate(&model, &calib_set(31)).is_err());
        assert!(calibrate(&model, &[]).is_err());
        assert!(calibrate(&model, &calib_set(32)).is_ok());
    }

    #[test]
    fn quantized_reference_has_expected_parameter_bytes() {
        let model = ModelGraph::build_reference_fcnn(2);
        let qm = calibrate(&model, &calib_set(32)).unwrap();
        assert_eq!(qm.param_bytes(), 15_508);
        assert_eq!(crate::deploy::int8_param_bytes(&qm.conv_descs()), 15_508);
    }

    #[test]
    fn quantized_inference_is_bit_reproducible() {
        let model = ModelGraph::build_reference_fcnn(6);
        let qm = calibrate(&model, &calib_set(32)).unwrap();
        let qm2 = calibrate(&model, &calib_set(32)).unwrap();
        let image = calib_set(33).pop().unwrap();
        let a = qm.forward_quant(&image).unwrap();
        let b = qm2.forward_quant(&image).unwrap();
        assert_eq!(a.data, b.data);
    }

    #[test]
    fn quantized_maps_track_f32_maps_on_an_untrained_net() {
        // Coarse sanity on map agreement; the tight trained-model bounds
        // live in the acceptance suite.
        let model = ModelGraph::build_reference_fcnn(9);
        let qm = calibrate(&model, &calib_set(40)).unwrap();
        let image = &calib_set(41)[40];
        let fm = model.forward_maps(image).unwrap();
        let qmaps = qm.forward_maps(image).unwrap();
        for (a, b) in fm.position.iter().zip(&qmaps.position) {
            assert!((a - b).abs() < 0.15, "position {a} vs {b}");
        }
    }
}
