//! Full-precision standard and depthwise convolutions.
//!
//! Convolutions are cross-correlations (no kernel flip) over zero-padded
//! inputs, the usual deep-learning convention. Weight layouts keep the
//! output channel innermost so a filter's taps for one input position sit
//! a fixed stride apart:
//!
//! * standard:  `[ky][kx][ci][co]`
//! * depthwise: `[ky][kx][ci][m]` with output channel `ci * d + m`
//!   (input channel major, multiplier minor)

use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::tensor::{FloatTensor, TensorShape};

use super::par_over_rows;

/// Geometry of a standard convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct ConvSpec {
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub bias: bool,
}

impl ConvSpec {
    /// Output shape for `input`, or an error when the window does not fit.
    pub fn output_shape(&self, input: &TensorShape) -> Result<TensorShape> {
        if self.kernel == 0 || self.stride == 0 || self.in_channels == 0 || self.out_channels == 0
        {
            return Err(Error::InvalidParameter(
                "kernel, stride and channel counts must be >= 1".into(),
            ));
        }
        if input.channels != self.in_channels {
            return Err(Error::ShapeMismatch(format!(
                "input has {} channels, spec expects {}",
                input.channels, self.in_channels
            )));
        }
        let h = conv_out_dim(input.height, self.kernel, self.stride, self.padding)?;
        let w = conv_out_dim(input.width, self.kernel, self.stride, self.padding)?;
        TensorShape::new(h, w, self.out_channels)
    }
}

/// Geometry of a depthwise convolution with a depth multiplier.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct DepthwiseSpec {
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub depth_multiplier: usize,
    pub bias: bool,
}

impl DepthwiseSpec {
    pub fn output_shape(&self, input: &TensorShape) -> Result<TensorShape> {
        if self.kernel == 0 || self.stride == 0 || self.depth_multiplier == 0 {
            return Err(Error::InvalidParameter(
                "kernel, stride and depth multiplier must be >= 1".into(),
            ));
        }
        let h = conv_out_dim(input.height, self.kernel, self.stride, self.padding)?;
        let w = conv_out_dim(input.width, self.kernel, self.stride, self.padding)?;
        TensorShape::new(h, w, input.channels * self.depth_multiplier)
    }
}

fn conv_out_dim(input: usize, kernel: usize, stride: usize, padding: usize) -> Result<usize> {
    let padded = input + 2 * padding;
    if padded < kernel {
        return Err(Error::ShapeMismatch(format!(
            "kernel {kernel} larger than padded extent {padded}"
        )));
    }
    Ok((padded - kernel) / stride + 1)
}

/// Weights of a standard convolution, layout `[ky][kx][ci][co]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvWeights<R> {
    kernel: usize,
    in_channels: usize,
    out_channels: usize,
    data: Vec<R>,
}

impl<R: Real> ConvWeights<R> {
    pub fn new(kernel: usize, in_channels: usize, out_channels: usize, data: Vec<R>) -> Result<Self> {
        let expect = kernel * kernel * in_channels * out_channels;
        if data.len() != expect {
            return Err(Error::LengthMismatch(format!(
                "conv weights need {expect} values, got {}",
                data.len()
            )));
        }
        Ok(Self { kernel, in_channels, out_channels, data })
    }

    pub fn from_fn(
        kernel: usize,
        in_channels: usize,
        out_channels: usize,
        mut f: impl FnMut(usize, usize, usize, usize) -> R,
    ) -> Self {
        let mut data = Vec::with_capacity(kernel * kernel * in_channels * out_channels);
        for ky in 0..kernel {
            for kx in 0..kernel {
                for ci in 0..in_channels {
                    for co in 0..out_channels {
                        data.push(f(ky, kx, ci, co));
                    }
                }
            }
        }
        Self { kernel, in_channels, out_channels, data }
    }

    /// Seeded uniform weights over `[lo, hi)`.
    pub fn random(
        kernel: usize,
        in_channels: usize,
        out_channels: usize,
        rng: &mut impl rand::Rng,
        lo: f64,
        hi: f64,
    ) -> Self {
        Self::from_fn(kernel, in_channels, out_channels, |_, _, _, _| {
            crate::scalar::real(rng.random::<f64>() * (hi - lo) + lo)
        })
    }

    #[inline]
    pub fn kernel(&self) -> usize {
        self.kernel
    }

    #[inline]
    pub fn in_channels(&self) -> usize {
        self.in_channels
    }

    #[inline]
    pub fn out_channels(&self) -> usize {
        self.out_channels
    }

    #[inline]
    pub fn data(&self) -> &[R] {
        &self.data
    }

    #[inline]
    pub(crate) fn data_mut(&mut self) -> &mut [R] {
        &mut self.data
    }

    #[inline]
    fn index(&self, ky: usize, kx: usize, ci: usize, co: usize) -> usize {
        ((ky * self.kernel + kx) * self.in_channels + ci) * self.out_channels + co
    }

    #[inline]
    pub fn get(&self, ky: usize, kx: usize, ci: usize, co: usize) -> R {
        self.data[self.index(ky, kx, ci, co)]
    }

    pub fn cast<T: Real>(&self) -> ConvWeights<T> {
        ConvWeights {
            kernel: self.kernel,
            in_channels: self.in_channels,
            out_channels: self.out_channels,
            data: self
                .data
                .iter()
                .map(|v| T::from_f64(v.to_f64().expect("finite")).expect("finite"))
                .collect(),
        }
    }
}

/// Weights of a depthwise convolution, layout `[ky][kx][ci][m]`.
#[derive(Clone, Debug, PartialEq)]
pub struct DepthwiseWeights<R> {
    kernel: usize,
    in_channels: usize,
    multiplier: usize,
    data: Vec<R>,
}

impl<R: Real> DepthwiseWeights<R> {
    pub fn new(kernel: usize, in_channels: usize, multiplier: usize, data: Vec<R>) -> Result<Self> {
        let expect = kernel * kernel * in_channels * multiplier;
        if data.len() != expect {
            return Err(Error::LengthMismatch(format!(
                "depthwise weights need {expect} values, got {}",
                data.len()
            )));
        }
        Ok(Self { kernel, in_channels, multiplier, data })
    }

    pub fn from_fn(
        kernel: usize,
        in_channels: usize,
        multiplier: usize,
        mut f: impl FnMut(usize, usize, usize, usize) -> R,
    ) -> Self {
        let mut data = Vec::with_capacity(kernel * kernel * in_channels * multiplier);
        for ky in 0..kernel {
            for kx in 0..kernel {
                for ci in 0..in_channels {
                    for m in 0..multiplier {
                        data.push(f(ky, kx, ci, m));
                    }
                }
            }
        }
        Self { kernel, in_channels, multiplier, data }
    }

    pub fn random(
        kernel: usize,
        in_channels: usize,
        multiplier: usize,
        rng: &mut impl rand::Rng,
        lo: f64,
        hi: f64,
    ) -> Self {
        Self::from_fn(kernel, in_channels, multiplier, |_, _, _, _| {
            crate::scalar::real(rng.random::<f64>() * (hi - lo) + lo)
        })
    }

    #[inline]
    pub fn kernel(&self) -> usize {
        self.kernel
    }

    #[inline]
    pub fn in_channels(&self) -> usize {
        self.in_channels
    }

    #[inline]
    pub fn multiplier(&self) -> usize {
        self.multiplier
    }

    #[inline]
    pub fn data(&self) -> &[R] {
        &self.data
    }

    #[inline]
    pub(crate) fn data_mut(&mut self) -> &mut [R] {
        &mut self.data
    }

    #[inline]
    fn index(&self, ky: usize, kx: usize, ci: usize, m: usize) -> usize {
        ((ky * self.kernel + kx) * self.in_channels + ci) * self.multiplier + m
    }

    #[inline]
    pub fn get(&self, ky: usize, kx: usize, ci: usize, m: usize) -> R {
        self.data[self.index(ky, kx, ci, m)]
    }

    /// Expand to an equivalent standard-conv weight tensor that is zero
    /// everywhere except the block diagonal (oracle/interop helper).
    pub fn to_block_diagonal(&self) -> ConvWeights<R> {
        let d = self.multiplier;
        ConvWeights::from_fn(self.kernel, self.in_channels, self.in_channels * d, |ky, kx, ci, co| {
            if co / d == ci {
                self.get(ky, kx, ci, co % d)
            } else {
                R::zero()
            }
        })
    }

    pub fn cast<T: Real>(&self) -> DepthwiseWeights<T> {
        DepthwiseWeights {
            kernel: self.kernel,
            in_channels: self.in_channels,
            multiplier: self.multiplier,
            data: self
                .data
                .iter()
                .map(|v| T::from_f64(v.to_f64().expect("finite")).expect("finite"))
                .collect(),
        }
    }
}

fn check_bias<R>(bias: Option<&[R]>, expected: bool, len: usize) -> Result<()> {
    match (bias, expected) {
        (Some(b), true) if b.len() != len => Err(Error::LengthMismatch(format!(
            "bias needs {len} values, got {}",
            b.len()
        ))),
        (Some(_), false) => Err(Error::InvalidParameter("spec declares no bias".into())),
        (None, true) => Err(Error::InvalidParameter("spec requires a bias".into())),
        _ => Ok(()),
    }
}

/// Standard 2-D convolution (cross-correlation) with zero padding.
pub fn conv2d<R: Real>(
    x: &FloatTensor<R>,
    w: &ConvWeights<R>,
    bias: Option<&[R]>,
    spec: &ConvSpec,
) -> Result<FloatTensor<R>> {
    conv2d_threaded(x, w, bias, spec, 1)
}

/// [`conv2d`] with work split over `threads` row bands.
pub fn conv2d_threaded<R: Real>(
    x: &FloatTensor<R>,
    w: &ConvWeights<R>,
    bias: Option<&[R]>,
    spec: &ConvSpec,
    threads: usize,
) -> Result<FloatTensor<R>> {
    let out_shape = spec.output_shape(x.shape())?;
    if w.kernel != spec.kernel || w.in_channels != spec.in_channels
        || w.out_channels != spec.out_channels
    {
        return Err(Error::ShapeMismatch("weights do not match conv spec".into()));
    }
    check_bias(bias, spec.bias, spec.out_channels)?;

    let (h_i, w_i, c_i) = (x.shape().height, x.shape().width, x.shape().channels);
    let (w_o, c_o) = (out_shape.width, out_shape.channels);
    let (k, s, p) = (spec.kernel, spec.stride, spec.padding);
    let xd = x.data();
    let wd = w.data();

    let mut out = FloatTensor::zeros(out_shape);
    par_over_rows(out.data_mut(), out_shape.height, w_o * c_o, threads, |row0, band| {
        for (dy, out_row) in band.chunks_mut(w_o * c_o).enumerate() {
            let oy = row0 + dy;
            for ox in 0..w_o {
                let cell = &mut out_row[ox * c_o..(ox + 1) * c_o];
                for (oc, out_v) in cell.iter_mut().enumerate() {
                    let mut acc = bias.map_or_else(R::zero, |b| b[oc]);
                    for ky in 0..k {
                        let iy = (oy * s + ky) as isize - p as isize;
                        if iy < 0 || iy >= h_i as isize {
                            continue;
                        }
                        for kx in 0..k {
                            let ix = (ox * s + kx) as isize - p as isize;
                            if ix < 0 || ix >= w_i as isize {
                                continue;
                            }
                            let x_base = (iy as usize * w_i + ix as usize) * c_i;
                            let w_base = ((ky * k + kx) * c_i) * c_o + oc;
                            for ci in 0..c_i {
                                acc += xd[x_base + ci] * wd[w_base + ci * c_o];
                            }
                        }
                    }
                    *out_v = acc;
                }
            }
        }
    });
    Ok(out)
}

/// Depthwise 2-D convolution: every input channel is filtered by its own
/// `d` kernels, producing `d * c_i` output channels.
pub fn depthwise_conv2d<R: Real>(
    x: &FloatTensor<R>,
    w: &DepthwiseWeights<R>,
    bias: Option<&[R]>,
    spec: &DepthwiseSpec,
) -> Result<FloatTensor<R>> {
    depthwise_conv2d_threaded(x, w, bias, spec, 1)
}

/// [`depthwise_conv2d`] with work split over `threads` row bands.
pub fn depthwise_conv2d_threaded<R: Real>(
    x: &FloatTensor<R>,
    w: &DepthwiseWeights<R>,
    bias: Option<&[R]>,
    spec: &DepthwiseSpec,
    threads: usize,
) -> Result<FloatTensor<R>> {
    let out_shape = spec.output_shape(x.shape())?;
    if w.kernel != spec.kernel || w.in_channels != x.shape().channels
        || w.multiplier != spec.depth_multiplier
    {
        return Err(Error::ShapeMismatch("weights do not match depthwise spec".into()));
    }
    check_bias(bias, spec.bias, out_shape.channels)?;

    let (h_i, w_i, c_i) = (x.shape().height, x.shape().width, x.shape().channels);
    let (w_o, c_o) = (out_shape.width, out_shape.channels);
    let (k, s, p, d) = (spec.kernel, spec.stride, spec.padding, spec.depth_multiplier);
    let xd = x.data();
    let wd = w.data();

    let mut out = FloatTensor::zeros(out_shape);
    par_over_rows(out.data_mut(), out_shape.height, w_o * c_o, threads, |row0, band| {
        for (dy, out_row) in band.chunks_mut(w_o * c_o).enumerate() {
            let oy = row0 + dy;
            for ox in 0..w_o {
                let cell = &mut out_row[ox * c_o..(ox + 1) * c_o];
                for ci in 0..c_i {
                    for m in 0..d {
                        let oc = ci * d + m;
                        let mut acc = bias.map_or_else(R::zero, |b| b[oc]);
                        for ky in 0..k {
                            let iy = (oy * s + ky) as isize - p as isize;
                            if iy < 0 || iy >= h_i as isize {
                                continue;
                            }
                            for kx in 0..k {
                                let ix = (ox * s + kx) as isize - p as isize;
                                if ix < 0 || ix >= w_i as isize {
                                    continue;
                                }
                                acc += xd[(iy as usize * w_i + ix as usize) * c_i + ci]
                                    * wd[((ky * k + kx) * c_i + ci) * d + m];
                            }
                        }
                        cell[oc] = acc;
                    }
                }
            }
        }
    });
    Ok(out)
}
