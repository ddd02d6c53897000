//! Dense row-major tensors. `Tensor` holds a rank-3 activation volume in
//! channel-major (C, H, W) order; `Kernel` holds rank-4 convolution weights
//! in (C_out, C_in, kh, kw) order. Both are plain `f32` buffers; the int8
//! counterparts live in the quantizer module.

use crate::error::{Error, Result};

/// Rank-3 activation tensor, laid out channel-major: index (c, y, x) maps to
/// `(c * height + y) * width + x`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl Tensor {
    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Tensor { channels, height, width, data: vec![0.0; channels * height * width] }
    }

    pub fn from_vec(channels: usize, height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != channels * height * width {
            return Err(Error::Shape(format!(
                "tensor ({channels},{height},{width}) needs {} values, got {}",
                channels * height * width,
                data.len()
            )));
        }
        Ok(Tensor { channels, height, width, data })
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn at(&self, c: usize, y: usize, x: usize) -> f32 {
        debug_assert!(c < self.channels && y < self.height && x < self.width);
        self.data[(c * self.height + y) * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, c: usize, y: usize, x: usize, v: f32) {
        debug_assert!(c < self.channels && y < self.height && x < self.width);
        self.data[(c * self.height + y) * self.width + x] = v;
    }

    /// Contiguous row (c, y, ..): handy for inner convolution loops.
    #[inline]
    pub fn row(&self, c: usize, y: usize) -> &[f32] {
        let start = (c * self.height + y) * self.width;
        &self.data[start..start + self.width]
    }

    #[inline]
    pub fn row_mut(&mut self, c: usize, y: usize) -> &mut [f32] {
        let start = (c * self.height + y) * self.width;
        &mut self.data[start..start + self.width]
    }

    /// One full channel plane as a contiguous slice.
    pub fn channel(&self, c: usize) -> &[f32] {
        let plane = self.height * self.width;
        &self.data[c * plane..(c + 1) * plane]
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f32> {
        self.data
    }

    /// Mirror along the horizontal axis (columns reversed) in place.
    pub fn flip_horizontal(&mut self) {
        for c in 0..self.channels {
            for y in 0..self.height {
                self.row_mut(c, y).reverse();
            }
        }
    }
}

/// Rank-4 convolution weights, laid out (C_out, C_in, kh, kw) row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Kernel {
    out_channels: usize,
    in_channels: usize,
    kh: usize,
    kw: usize,
    data: Vec<f32>,
}

impl Kernel {
    pub fn zeros(out_channels: usize, in_channels: usize, kh: usize, kw: usize) -> Self {
        Kernel { out_channels, in_channels, kh, kw, data: vec![0.0; out_channels * in_channels * kh * kw] }
    }

    pub fn from_vec(
        out_channels: usize,
        in_channels: usize,
        kh: usize,
        kw: usize,
        data: Vec<f32>,
    ) -> Result<Self> {
        if data.len() != out_channels * in_channels * kh * kw {
            return Err(Error::Shape(format!(
                "kernel ({out_channels},{in_channels},{kh},{kw}) needs {} values, got {}",
                out_channels * in_channels * kh * kw,
                data.len()
            )));
        }
        Ok(Kernel { out_channels, in_channels, kh, kw, data })
    }

    pub fn shape(&self) -> (usize, usize, usize, usize) {
        (self.out_channels, self.in_channels, self.kh, self.kw)
    }

    pub fn out_channels(&self) -> usize {
        self.out_channels
    }

    pub fn in_channels(&self) -> usize {
        self.in_channels
    }

    pub fn kh(&self) -> usize {
        self.kh
    }

    pub fn kw(&self) -> usize {
        self.kw
    }

    #[inline]
    pub fn at(&self, co: usize, ci: usize, ky: usize, kx: usize) -> f32 {
        debug_assert!(co < self.out_channels && ci < self.in_channels && ky < self.kh && kx < self.kw);
        self.data[((co * self.in_channels + ci) * self.kh + ky) * self.kw + kx]
    }

    #[inline]
    pub fn at_mut(&mut self, co: usize, ci: usize, ky: usize, kx: usize) -> &mut f32 {
        &mut self.data[((co * self.in_channels + ci) * self.kh + ky) * self.kw + kx]
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }
}
