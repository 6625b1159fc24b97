//! Binary weight file format.
//!
//! Byte layout (all integers little-endian):
//!
//! ```text
//! magic    b"HBDS"                      4 bytes
//! version  u32                          currently 1
//! length   u64                          payload byte count
//! payload  [see below]
//! checksum first 8 bytes of SHA-256 over the payload
//! ```
//!
//! Payload:
//!
//! ```text
//! input    h u32, w u32, c u32
//! tap      u32
//! layers   u32, then per layer a tag byte:
//!   0 standard conv  k,s,p,c_o u32, bias u8,
//!                    f32 weights [k*k*c_i*c_o], f32 bias [c_o] if set
//!   1 HB-DS          k,s,c_o,d u32,
//!                    f32 depthwise [k*k*c_i*d], f32 bias [d*c_i],
//!                    f32 gamma/beta/mean/var [d*c_i] each, f32 eps,
//!                    valid u32 (= d*c_i), u64 words [c_o * ceil(valid/64)]
//!   2 binary conv    k,s,p,c_o u32,
//!                    f32 gamma/beta/mean/var [c_i] each, f32 eps,
//!                    valid u32 (= c_i), u64 words [c_o*k*k*ceil(valid/64)]
//!   3 max pool       k,s u32
//! ```
//!
//! Input channel counts are implied by the running shape chain, so the
//! record stream is self-validating: any inconsistency surfaces as a
//! malformed-record error, and the rebuilt network re-checks every layer
//! against its spec.

use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result, WeightFileError};
use crate::hbds::{
    BinaryConvLayer, HBDSSpec, HbdsModule, Layer, LayerSpec, Network, NetworkSpec,
};
use crate::ops::{BatchNormParams, BinaryConvWeights, ConvSpec, ConvWeights, DepthwiseWeights};
use crate::tensor::TensorShape;

const MAGIC: &[u8; 4] = b"HBDS";
const VERSION: u32 = 1;

const TAG_STANDARD: u8 = 0;
const TAG_HBDS: u8 = 1;
const TAG_BINARY: u8 = 2;
const TAG_MAXPOOL: u8 = 3;

/// Serialize a network to the weight file format.
pub fn save_weights(net: &Network<f32>) -> Vec<u8> {
    let mut payload = Vec::new();
    let spec = net.spec();
    put_u32(&mut payload, spec.input.height as u32);
    put_u32(&mut payload, spec.input.width as u32);
    put_u32(&mut payload, spec.input.channels as u32);
    put_u32(&mut payload, spec.tap as u32);
    put_u32(&mut payload, net.layers().len() as u32);

    for layer in net.layers() {
        match layer {
            Layer::Standard { spec, weights, bias } => {
                payload.push(TAG_STANDARD);
                put_u32(&mut payload, spec.kernel as u32);
                put_u32(&mut payload, spec.stride as u32);
                put_u32(&mut payload, spec.padding as u32);
                put_u32(&mut payload, spec.out_channels as u32);
                payload.push(u8::from(spec.bias));
                put_f32s(&mut payload, weights.data());
                if let Some(b) = bias {
                    put_f32s(&mut payload, b);
                }
            }
            Layer::Hbds(m) => {
                payload.push(TAG_HBDS);
                let s = m.spec();
                put_u32(&mut payload, s.kernel as u32);
                put_u32(&mut payload, s.stride as u32);
                put_u32(&mut payload, s.out_channels as u32);
                put_u32(&mut payload, s.depth_multiplier as u32);
                put_f32s(&mut payload, m.depthwise_weights().data());
                put_f32s(&mut payload, m.depthwise_bias());
                put_bn(&mut payload, m.bn());
                put_u32(&mut payload, m.pointwise_weights().in_channels() as u32);
                put_u64s(&mut payload, m.pointwise_weights().words());
            }
            Layer::Binary(b) => {
                payload.push(TAG_BINARY);
                let cs = b.conv_spec();
                put_u32(&mut payload, cs.kernel as u32);
                put_u32(&mut payload, cs.stride as u32);
                put_u32(&mut payload, cs.padding as u32);
                put_u32(&mut payload, cs.out_channels as u32);
                put_bn(&mut payload, b.bn());
                put_u32(&mut payload, b.weights().in_channels() as u32);
                put_u64s(&mut payload, b.weights().words());
            }
            Layer::MaxPool { kernel, stride } => {
                payload.push(TAG_MAXPOOL);
                put_u32(&mut payload, *kernel as u32);
                put_u32(&mut payload, *stride as u32);
            }
        }
    }

    let mut out = Vec::with_capacity(16 + payload.len() + 8);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
    out.extend_from_slice(&payload);
    out.extend_from_slice(&checksum(&payload));
    out
}

/// Parse a weight file back into a runnable network.
pub fn load_weights(bytes: &[u8]) -> Result<Network<f32>> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(WeightFileError::BadMagic.into());
    }
    if bytes.len() < 16 {
        return Err(WeightFileError::Truncated { expected: 16 - bytes.len() }.into());
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(WeightFileError::UnsupportedVersion(version).into());
    }
    let len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let expected_total = 16 + len + 8;
    if bytes.len() < expected_total {
        return Err(WeightFileError::Truncated { expected: expected_total - bytes.len() }.into());
    }
    let payload = &bytes[16..16 + len];
    if checksum(payload) != bytes[16 + len..expected_total] {
        return Err(WeightFileError::ChecksumMismatch.into());
    }

    let mut r = Reader { buf: payload, pos: 0 };
    let input = TensorShape::new(
        r.u32()? as usize,
        r.u32()? as usize,
        r.u32()? as usize,
    )
    .map_err(malformed)?;
    let tap = r.u32()? as usize;
    let n_layers = r.u32()? as usize;

    let mut current = input;
    let mut layer_specs = Vec::with_capacity(n_layers);
    let mut layers = Vec::with_capacity(n_layers);
    for _ in 0..n_layers {
        let tag = r.u8()?;
        let (ls, layer) = match tag {
            TAG_STANDARD => {
                let kernel = r.u32()? as usize;
                let stride = r.u32()? as usize;
                let padding = r.u32()? as usize;
                let out_channels = r.u32()? as usize;
                let bias = r.u8()? != 0;
                let c_i = current.channels;
                let w = ConvWeights::new(
                    kernel,
                    c_i,
                    out_channels,
                    r.f32s(kernel * kernel * c_i * out_channels)?,
                )
                .map_err(malformed)?;
                let b = if bias { Some(r.f32s(out_channels)?) } else { None };
                let cs = ConvSpec {
                    kernel,
                    stride,
                    padding,
                    in_channels: c_i,
                    out_channels,
                    bias,
                };
                (
                    LayerSpec::StandardConv { kernel, stride, padding, out_channels, bias },
                    Layer::Standard { spec: cs, weights: w, bias: b },
                )
            }
            TAG_HBDS => {
                let kernel = r.u32()? as usize;
                let stride = r.u32()? as usize;
                let out_channels = r.u32()? as usize;
                let depth_multiplier = r.u32()? as usize;
                let c_i = current.channels;
                let hidden = c_i * depth_multiplier;
                let dw = DepthwiseWeights::new(
                    kernel,
                    c_i,
                    depth_multiplier,
                    r.f32s(kernel * kernel * c_i * depth_multiplier)?,
                )
                .map_err(malformed)?;
                let bias = r.f32s(hidden)?;
                let bn = read_bn(&mut r, hidden)?;
                let valid = r.u32()? as usize;
                if valid != hidden {
                    return Err(WeightFileError::Malformed(format!(
                        "pointwise valid length {valid}, expected {hidden}"
                    ))
                    .into());
                }
                let words = r.u64s(out_channels * hidden.div_ceil(64))?;
                let pw = BinaryConvWeights::from_words(1, hidden, out_channels, words)
                    .map_err(malformed)?;
                let spec = HBDSSpec { kernel, stride, out_channels, depth_multiplier };
                (
                    LayerSpec::Hbds(spec),
                    Layer::Hbds(HbdsModule::new(spec, dw, bias, bn, pw).map_err(malformed)?),
                )
            }
            TAG_BINARY => {
                let kernel = r.u32()? as usize;
                let stride = r.u32()? as usize;
                let padding = r.u32()? as usize;
                let out_channels = r.u32()? as usize;
                let c_i = current.channels;
                let bn = read_bn(&mut r, c_i)?;
                let valid = r.u32()? as usize;
                if valid != c_i {
                    return Err(WeightFileError::Malformed(format!(
                        "binary conv valid length {valid}, expected {c_i}"
                    ))
                    .into());
                }
                let words = r.u64s(out_channels * kernel * kernel * c_i.div_ceil(64))?;
                let w = BinaryConvWeights::from_words(kernel, c_i, out_channels, words)
                    .map_err(malformed)?;
                (
                    LayerSpec::BinaryConv { kernel, stride, padding, out_channels },
                    Layer::Binary(BinaryConvLayer::new(stride, padding, bn, w).map_err(malformed)?),
                )
            }
            TAG_MAXPOOL => {
                let kernel = r.u32()? as usize;
                let stride = r.u32()? as usize;
                (LayerSpec::MaxPool { kernel, stride }, Layer::MaxPool { kernel, stride })
            }
            other => {
                return Err(WeightFileError::Malformed(format!("unknown layer tag {other}")).into())
            }
        };
        current = ls.output_shape(&current).map_err(malformed)?;
        layer_specs.push(ls);
        layers.push(layer);
    }
    if r.pos != payload.len() {
        return Err(WeightFileError::Malformed(format!(
            "{} trailing payload bytes",
            payload.len() - r.pos
        ))
        .into());
    }

    let spec = NetworkSpec { input, layers: layer_specs, tap };
    Network::from_layers(spec, layers).map_err(malformed)
}

pub fn save_weights_file(net: &Network<f32>, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, save_weights(net))?;
    Ok(())
}

pub fn load_weights_file(path: impl AsRef<Path>) -> Result<Network<f32>> {
    load_weights(&std::fs::read(path)?)
}

fn malformed(e: Error) -> Error {
    WeightFileError::Malformed(e.to_string()).into()
}

fn checksum(payload: &[u8]) -> [u8; 8] {
    let digest = Sha256::digest(payload);
    digest[..8].try_into().unwrap()
}

fn put_u32(buf: &mut Vec<u8>, v: u32) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn put_f32s(buf: &mut Vec<u8>, vs: &[f32]) {
    for v in vs {
        buf.extend_from_slice(&v.to_le_bytes());
    }
}

fn put_u64s(buf: &mut Vec<u8>, vs: &[u64]) {
    for v in vs {
        buf.extend_from_slice(&v.to_le_bytes());
    }
}

fn put_bn(buf: &mut Vec<u8>, bn: &BatchNormParams<f32>) {
    put_f32s(buf, &bn.gamma);
    put_f32s(buf, &bn.beta);
    put_f32s(buf, &bn.running_mean);
    put_f32s(buf, &bn.running_var);
    buf.extend_from_slice(&bn.epsilon.to_le_bytes());
}

fn read_bn(r: &mut Reader<'_>, channels: usize) -> Result<BatchNormParams<f32>> {
    let gamma = r.f32s(channels)?;
    let beta = r.f32s(channels)?;
    let mean = r.f32s(channels)?;
    let var = r.f32s(channels)?;
    let eps = f32::from_le_bytes(r.take(4)?.try_into().unwrap());
    BatchNormParams::new(gamma, beta, mean, var, eps).map_err(malformed)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(WeightFileError::Truncated { expected: self.pos + n - self.buf.len() }
                .into());
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

    fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        let raw = self.take(4 * n)?;
        Ok(raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect())
    }

    fn u64s(&mut self, n: usize) -> Result<Vec<u64>> {
        let raw = self.take(8 * n)?;
        Ok(raw.chunks_exact(8).map(|c| u64::from_le_bytes(c.try_into().unwrap())).collect())
    }
}
