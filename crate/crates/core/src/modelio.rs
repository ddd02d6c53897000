//! Binary model container.
//!
//! Layout (all integers little-endian):
//! magic `NTRK1`, format byte (0 float, 1 int8), input shape (3 x u32),
//! head activations (3 x u8), MAC budget (u64), layer count (u32), one
//! descriptor per layer, then the parameter payload. Float payloads are the
//! conv weights and biases in layer order; int8 payloads store the input
//! quantization once, then per layer the weight scale, output scale and
//! zero point, ReLU flag, int8 weights, and int32 biases. Requantization
//! multipliers are recomputed on load from the stored scales, so a loaded
//! model reproduces the saved one's outputs bit for bit.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::layer::{Activation, LayerDesc, LayerKind};
use crate::model::{ConvParams, ModelGraph};
use crate::quant::{QuantParams, QuantizedLayer, QuantizedModel, Requant};
use crate::tensor::Kernel;

pub const MAGIC: &[u8; 5] = b"NTRK1";

const FORMAT_FLOAT: u8 = 0;
const FORMAT_INT8: u8 = 1;

#[derive(Debug, Clone)]
pub enum StoredModel {
    Float(ModelGraph),
    Quantized(QuantizedModel),
}

impl StoredModel {
    pub fn kind(&self) -> &'static str {
        match self {
            StoredModel::Float(_) => "float",
            StoredModel::Quantized(_) => "int8",
        }
    }
}

fn fmt_err(reason: impl Into<String>) -> Error {
    Error::ModelFormat(reason.into())
}

fn act_byte(act: Activation) -> u8 {
    match act {
        Activation::Relu => 0,
        Activation::Sigmoid => 1,
        Activation::Linear => 2,
    }
}

fn byte_act(b: u8) -> Result<Activation> {
    match b {
        0 => Ok(Activation::Relu),
        1 => Ok(Activation::Sigmoid),
        2 => Ok(Activation::Linear),
        other => Err(fmt_err(format!("unknown activation code {other}"))),
    }
}

fn kind_byte(kind: &LayerKind) -> (u8, u8) {
    match kind {
        LayerKind::Conv2d => (0, u8::MAX),
        LayerKind::PointwiseConv => (1, u8::MAX),
        LayerKind::Activation(act) => (2, act_byte(*act)),
    }
}

fn byte_kind(kind: u8, act: u8) -> Result<LayerKind> {
    match kind {
        0 => Ok(LayerKind::Conv2d),
        1 => Ok(LayerKind::PointwiseConv),
        2 => Ok(LayerKind::Activation(byte_act(act)?)),
        other => Err(fmt_err(format!("unknown layer kind {other}"))),
    }
}

struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn new() -> Self {
        Writer { buf: Vec::new() }
    }

    fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn f32(&mut self, v: f32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn i32(&mut self, v: i32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn desc(&mut self, d: &LayerDesc) {
        let (kind, act) = kind_byte(&d.kind);
        self.u8(kind);
        self.u8(act);
        self.u32(d.in_channels as u32);
        self.u32(d.out_channels as u32);
        self.u32(d.kernel.0 as u32);
        self.u32(d.kernel.1 as u32);
        self.u32(d.stride as u32);
        self.u32(d.padding as u32);
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(fmt_err(format!(
                "truncated file: needed {n} bytes at offset {}, have {}",
                self.pos,
                self.buf.len() - self.pos
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn i32(&mut self) -> Result<i32> {
        Ok(i32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn desc(&mut self) -> Result<LayerDesc> {
        let kind = self.u8()?;
        let act = self.u8()?;
        Ok(LayerDesc {
            kind: byte_kind(kind, act)?,
            in_channels: self.u32()? as usize,
            out_channels: self.u32()? as usize,
            kernel: (self.u32()? as usize, self.u32()? as usize),
            stride: self.u32()? as usize,
            padding: self.u32()? as usize,
        })
    }

    fn done(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(fmt_err(format!("{} trailing bytes after payload", self.buf.len() - self.pos)));
        }
        Ok(())
    }
}

fn write_header(w: &mut Writer, format: u8, input_shape: (usize, usize, usize), heads: [Activation; 3], mac_budget: u64, descs: &[LayerDesc]) {
    w.buf.extend_from_slice(MAGIC);
    w.u8(format);
    w.u32(input_shape.0 as u32);
    w.u32(input_shape.1 as u32);
    w.u32(input_shape.2 as u32);
    for act in heads {
        w.u8(act_byte(act));
    }
    w.u64(mac_budget);
    w.u32(descs.len() as u32);
    for d in descs {
        w.desc(d);
    }
}

pub fn encode_model(model: &StoredModel) -> Vec<u8> {
    let mut w = Writer::new();
    match model {
        StoredModel::Float(m) => {
            write_header(&mut w, FORMAT_FLOAT, m.input_shape, m.head_activations, m.mac_budget, &m.layers);
            for p in m.params() {
                for &v in p.weights.data() {
                    w.f32(v);
                }
                for &b in &p.bias {
                    w.f32(b);
                }
            }
        }
        StoredModel::Quantized(m) => {
            let descs: Vec<LayerDesc> = m.layers.iter().map(|l| l.desc).collect();
            write_header(&mut w, FORMAT_INT8, m.input_shape, m.head_activations, 0, &descs);
            w.f32(m.input_params.scale);
            w.i32(m.input_params.zero_point);
            for layer in &m.layers {
                w.f32(layer.w_scale);
                w.f32(layer.out_params.scale);
                w.i32(layer.out_params.zero_point);
                w.u8(layer.relu as u8);
                w.buf.extend(layer.weights.iter().map(|&q| q as u8));
                for &b in &layer.bias {
                    w.i32(b);
                }
            }
        }
    }
    w.buf
}

pub fn decode_model(bytes: &[u8]) -> Result<StoredModel> {
    let mut r = Reader { buf: bytes, pos: 0 };
    let magic = r.take(MAGIC.len())?;
    if magic != MAGIC {
        return Err(fmt_err(format!("bad magic {magic:?}, expected {MAGIC:?}")));
    }
    let format = r.u8()?;
    let input_shape = (r.u32()? as usize, r.u32()? as usize, r.u32()? as usize);
    let heads = [byte_act(r.u8()?)?, byte_act(r.u8()?)?, byte_act(r.u8()?)?];
    let mac_budget = r.u64()?;
    let n_layers = r.u32()? as usize;
    let mut descs = Vec::with_capacity(n_layers);
    for _ in 0..n_layers {
        descs.push(r.desc()?);
    }

    match format {
        FORMAT_FLOAT => {
            let mut model =
                ModelGraph::new(input_shape, descs, heads).map_err(|e| fmt_err(format!("invalid layer chain: {e}")))?;
            model.mac_budget = mac_budget;
            let mut params = Vec::new();
            for (_, desc) in model.conv_layers() {
                let (kh, kw) = desc.kernel;
                let len = desc.out_channels * desc.in_channels * kh * kw;
                let mut data = Vec::with_capacity(len);
                for _ in 0..len {
                    data.push(r.f32()?);
                }
                let weights = Kernel::from_vec(desc.out_channels, desc.in_channels, kh, kw, data)
                    .map_err(|e| fmt_err(e.to_string()))?;
                let mut bias = Vec::with_capacity(desc.out_channels);
                for _ in 0..desc.out_channels {
                    bias.push(r.f32()?);
                }
                params.push(ConvParams { weights, bias });
            }
            r.done()?;
            let expected = model.params().len();
            model
                .set_params(params)
                .map_err(|e| fmt_err(format!("parameter payload mismatch (expected {expected} conv layers): {e}")))?;
            Ok(StoredModel::Float(model))
        }
        FORMAT_INT8 => {
            let input_params = QuantParams { scale: r.f32()?, zero_point: r.i32()? };
            let mut layers = Vec::with_capacity(descs.len());
            let mut in_params = input_params;
            for desc in descs {
                if !desc.is_conv() {
                    return Err(fmt_err("int8 payload contains a non-conv layer descriptor"));
                }
                let w_scale = r.f32()?;
                let out_params = QuantParams { scale: r.f32()?, zero_point: r.i32()? };
                let relu = r.u8()? != 0;
                let (kh, kw) = desc.kernel;
                let wlen = desc.out_channels * desc.in_channels * kh * kw;
                let weights: Vec<i8> = r.take(wlen)?.iter().map(|&b| b as i8).collect();
                let mut bias = Vec::with_capacity(desc.out_channels);
                for _ in 0..desc.out_channels {
                    bias.push(r.i32()?);
                }
                let ratio = in_params.scale as f64 * w_scale as f64 / out_params.scale as f64;
                let requant = Requant::from_ratio(ratio).map_err(|e| fmt_err(e.to_string()))?;
                layers.push(QuantizedLayer { desc, weights, w_scale, bias, in_params, out_params, requant, relu });
                in_params = out_params;
            }
            r.done()?;
            if layers.is_empty() {
                return Err(fmt_err("int8 model has no layers"));
            }
            Ok(StoredModel::Quantized(QuantizedModel { input_shape, input_params, layers, head_activations: heads }))
        }
        other => Err(fmt_err(format!("unknown format flag {other}"))),
    }
}

pub fn save_model(path: &Path, model: &StoredModel) -> Result<()> {
    fs::write(path, encode_model(model))?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<StoredModel> {
    let bytes = fs::read(path)?;
    decode_model(&bytes)
}
