//! Layer descriptors and the convolution kernels behind them.
//!
//! Descriptors are pure shape metadata; parameters live in the model graph.
//! The forward and backward kernels here are direct (no im2col): at the
//! network sizes this project targets, cache-friendly nested loops are fast
//! enough and keep arithmetic order fixed, which the reproducibility
//! guarantees rely on.

use crate::error::{Error, Result};
use crate::tensor::{Kernel, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Activation {
    Relu,
    Sigmoid,
    Linear,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f32) -> f32 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Sigmoid => 1.0 / (1.0 + (-x).exp()),
            Activation::Linear => x,
        }
    }

    /// Derivative expressed in terms of the activation output.
    #[inline]
    pub fn derivative_from_output(self, y: f32) -> f32 {
        match self {
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => y * (1.0 - y),
            Activation::Linear => 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    Conv2d,
    PointwiseConv,
    Activation(Activation),
}

/// Shape-level description of one layer. `kernel`, `stride` and `padding`
/// are ignored for activation layers, which are elementwise.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerDesc {
    pub kind: LayerKind,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: (usize, usize),
    pub stride: usize,
    pub padding: usize,
}

impl LayerDesc {
    pub fn conv2d(in_channels: usize, out_channels: usize, k: usize, stride: usize, padding: usize) -> Self {
        LayerDesc {
            kind: LayerKind::Conv2d,
            in_channels,
            out_channels,
            kernel: (k, k),
            stride,
            padding,
        }
    }

    pub fn pointwise(in_channels: usize, out_channels: usize) -> Self {
        LayerDesc {
            kind: LayerKind::PointwiseConv,
            in_channels,
            out_channels,
            kernel: (1, 1),
            stride: 1,
            padding: 0,
        }
    }

    pub fn activation(act: Activation, channels: usize) -> Self {
        LayerDesc {
            kind: LayerKind::Activation(act),
            in_channels: channels,
            out_channels: channels,
            kernel: (1, 1),
            stride: 1,
            padding: 0,
        }
    }

    pub fn is_conv(&self) -> bool {
        matches!(self.kind, LayerKind::Conv2d | LayerKind::PointwiseConv)
    }

    pub fn validate(&self) -> Result<()> {
        match self.kind {
            LayerKind::Conv2d | LayerKind::PointwiseConv => {
                let (kh, kw) = self.kernel;
                if kh == 0 || kw == 0 || kh % 2 == 0 || kw % 2 == 0 {
                    return Err(Error::InvalidArgument(format!(
                        "kernel {kh}x{kw}: only odd kernel sizes are supported"
                    )));
                }
                if self.stride == 0 {
                    return Err(Error::InvalidArgument("stride must be >= 1".into()));
                }
                if self.kind == LayerKind::PointwiseConv && (kh != 1 || kw != 1) {
                    return Err(Error::InvalidArgument("pointwise layer requires a 1x1 kernel".into()));
                }
                if self.in_channels == 0 || self.out_channels == 0 {
                    return Err(Error::InvalidArgument("channel counts must be >= 1".into()));
                }
            }
            LayerKind::Activation(_) => {
                if self.in_channels != self.out_channels {
                    return Err(Error::InvalidArgument("activation layer cannot change channel count".into()));
                }
            }
        }
        Ok(())
    }

    /// Output shape for a given input shape, with the usual floor rule
    /// out = floor((in + 2*pad - k) / stride) + 1 for conv layers.
    pub fn output_shape(&self, input: (usize, usize, usize)) -> Result<(usize, usize, usize)> {
        let (c, h, w) = input;
        if c != self.in_channels {
            return Err(Error::Shape(format!(
                "layer expects {} input channels, got {c}",
                self.in_channels
            )));
        }
        match self.kind {
            LayerKind::Activation(_) => Ok((c, h, w)),
            _ => {
                let (kh, kw) = self.kernel;
                if h + 2 * self.padding < kh || w + 2 * self.padding < kw {
                    return Err(Error::Shape(format!(
                        "input {h}x{w} too small for kernel {kh}x{kw} with padding {}",
                        self.padding
                    )));
                }
                let oh = (h + 2 * self.padding - kh) / self.stride + 1;
                let ow = (w + 2 * self.padding - kw) / self.stride + 1;
                Ok((self.out_channels, oh, ow))
            }
        }
    }
}

/// Direct 2D convolution with zero padding.
pub fn conv2d_forward(
    input: &Tensor,
    weights: &Kernel,
    bias: &[f32],
    stride: usize,
    padding: usize,
) -> Result<Tensor> {
    let (ci, h, w) = input.shape();
    let (co, kci, kh, kw) = weights.shape();
    if kci != ci {
        return Err(Error::Shape(format!("kernel expects {kci} input channels, got {ci}")));
    }
    if bias.len() != co {
        return Err(Error::Shape(format!("bias length {} does not match {co} output channels", bias.len())));
    }
    if stride == 0 {
        return Err(Error::InvalidArgument("stride must be >= 1".into()));
    }
    if h + 2 * padding < kh || w + 2 * padding < kw {
        return Err(Error::Shape(format!(
            "input {h}x{w} too small for kernel {kh}x{kw} with padding {padding}"
        )));
    }
    let oh = (h + 2 * padding - kh) / stride + 1;
    let ow = (w + 2 * padding - kw) / stride + 1;
    let mut out = Tensor::zeros(co, oh, ow);

    for c_out in 0..co {
        let b = bias[c_out];
        for oy in 0..oh {
            let row = out.row_mut(c_out, oy);
            for v in row.iter_mut() {
                *v = b;
            }
        }
        for c_in in 0..ci {
            for ky in 0..kh {
                for kx in 0..kw {
                    let wgt = weights.at(c_out, c_in, ky, kx);
                    if wgt == 0.0 {
                        continue;
                    }
                    for oy in 0..oh {
                        let iy = (oy * stride + ky) as isize - padding as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let in_row = input.row(c_in, iy as usize);
                        let out_row = out.row_mut(c_out, oy);
                        for (ox, acc) in out_row.iter_mut().enumerate() {
                            let ix = (ox * stride + kx) as isize - padding as isize;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            *acc += wgt * in_row[ix as usize];
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Gradients of a conv layer given the upstream gradient on its output.
/// Returns (d/d_input, d/d_weights, d/d_bias).
pub fn conv2d_backward(
    input: &Tensor,
    weights: &Kernel,
    stride: usize,
    padding: usize,
    grad_out: &Tensor,
) -> Result<(Tensor, Kernel, Vec<f32>)> {
    let (ci, h, w) = input.shape();
    let (co, kci, kh, kw) = weights.shape();
    if kci != ci {
        return Err(Error::Shape(format!("kernel expects {kci} input channels, got {ci}")));
    }
    let (gco, oh, _) = grad_out.shape();
    if gco != co {
        return Err(Error::Shape(format!("grad_out has {gco} channels, expected {co}")));
    }

    let mut grad_in = Tensor::zeros(ci, h, w);
    let mut grad_w = Kernel::zeros(co, ci, kh, kw);
    let mut grad_b = vec![0.0f32; co];

    for c_out in 0..co {
        for oy in 0..oh {
            let g_row = grad_out.row(c_out, oy);
            let mut sum = 0.0;
            for g in g_row {
                sum += *g;
            }
            grad_b[c_out] += sum;
        }
        for c_in in 0..ci {
            for ky in 0..kh {
                for kx in 0..kw {
                    let wgt = weights.at(c_out, c_in, ky, kx);
                    let mut wacc = 0.0f32;
                    for oy in 0..oh {
                        let iy = (oy * stride + ky) as isize - padding as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let in_row = input.row(c_in, iy as usize);
                        let g_row = grad_out.row(c_out, oy);
                        for (ox, g) in g_row.iter().enumerate() {
                            let ix = (ox * stride + kx) as isize - padding as isize;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            wacc += *g * in_row[ix as usize];
                        }
                        if wgt != 0.0 {
                            let gi_row = grad_in.row_mut(c_in, iy as usize);
                            for (ox, g) in g_row.iter().enumerate() {
                                let ix = (ox * stride + kx) as isize - padding as isize;
                                if ix < 0 || ix >= w as isize {
                                    continue;
                                }
                                gi_row[ix as usize] += wgt * *g;
                            }
                        }
                    }
                    *grad_w.at_mut(c_out, c_in, ky, kx) += wacc;
                }
            }
        }
    }
    Ok((grad_in, grad_w, grad_b))
}

pub fn activation_forward(input: &Tensor, act: Activation) -> Tensor {
    let (c, h, w) = input.shape();
    let mut out = Tensor::zeros(c, h, w);
    for (o, i) in out.data_mut().iter_mut().zip(input.data()) {
        *o = act.apply(*i);
    }
    out
}

/// Upstream gradient through an elementwise activation, using the forward
/// output (not the pre-activation) to evaluate the derivative.
pub fn activation_backward(output: &Tensor, act: Activation, grad_out: &Tensor) -> Result<Tensor> {
    if output.shape() != grad_out.shape() {
        return Err(Error::Shape("activation gradient shape mismatch".into()));
    }
    let (c, h, w) = output.shape();
    let mut grad_in = Tensor::zeros(c, h, w);
    for ((gi, y), g) in grad_in.data_mut().iter_mut().zip(output.data()).zip(grad_out.data()) {
        *gi = act.derivative_from_output(*y) * *g;
    }
    Ok(grad_in)
}
