//! Binary convolution over bit-packed `{-1,+1}` tensors.
//!
//! Every output value is the exact integer `±1` dot product over the
//! receptive field, computed as XNOR + popcount on 64-bit word runs.
//! Padding is handled by masking: receptive-field positions that fall
//! outside the input contribute nothing, which matches a zero-padded
//! float convolution on the unpacked tensors bit for bit.
//!
//! Filter words are stored per output channel as one contiguous block
//! `[ky][kx][word]`, so the interior-pixel fast path streams both
//! operands linearly. Channel padding bits are zero in activations and
//! weights; XNOR turns them into constant matches that are subtracted
//! in one go instead of masking every word.

use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::tensor::{BitTensor, FloatTensor, TensorShape, WORD_BITS};

use super::conv::{ConvSpec, ConvWeights};
use super::par_over_rows;

/// Bit-packed filters of a binary convolution, one word block per output
/// channel.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BinaryConvWeights {
    kernel: usize,
    in_channels: usize,
    out_channels: usize,
    words_per_position: usize,
    words: Vec<u64>,
}

impl BinaryConvWeights {
    /// Pack from a predicate over `(ky, kx, ci, co)`; `true` encodes `+1`.
    pub fn from_fn(
        kernel: usize,
        in_channels: usize,
        out_channels: usize,
        mut f: impl FnMut(usize, usize, usize, usize) -> bool,
    ) -> Self {
        let wpp = in_channels.div_ceil(WORD_BITS);
        let mut words = vec![0u64; out_channels * kernel * kernel * wpp];
        for co in 0..out_channels {
            for ky in 0..kernel {
                for kx in 0..kernel {
                    let base = ((co * kernel + ky) * kernel + kx) * wpp;
                    for ci in 0..in_channels {
                        if f(ky, kx, ci, co) {
                            words[base + ci / WORD_BITS] |= 1u64 << (ci % WORD_BITS);
                        }
                    }
                }
            }
        }
        Self { kernel, in_channels, out_channels, words_per_position: wpp, words }
    }

    /// Rebuild from raw packed words (the persistence path). Word count
    /// and zeroed padding bits are both enforced.
    pub fn from_words(
        kernel: usize,
        in_channels: usize,
        out_channels: usize,
        words: Vec<u64>,
    ) -> Result<Self> {
        let wpp = in_channels.div_ceil(WORD_BITS);
        let expect = out_channels * kernel * kernel * wpp;
        if words.len() != expect {
            return Err(Error::LengthMismatch(format!(
                "binary filter needs {expect} words, got {}",
                words.len()
            )));
        }
        let tail = match in_channels % WORD_BITS {
            0 => u64::MAX,
            r => (1u64 << r) - 1,
        };
        for (i, w) in words.iter().enumerate() {
            if i % wpp == wpp - 1 && w & !tail != 0 {
                return Err(Error::InvalidParameter(
                    "binary filter padding bits must be zero".into(),
                ));
            }
        }
        Ok(Self { kernel, in_channels, out_channels, words_per_position: wpp, words })
    }

    /// Binarize float filters with the `w >= 0 -> +1` convention.
    pub fn binarize<R: Real>(w: &ConvWeights<R>) -> Self {
        Self::from_fn(w.kernel(), w.in_channels(), w.out_channels(), |ky, kx, ci, co| {
            w.get(ky, kx, ci, co) >= R::zero()
        })
    }

    /// Expand back to `±1` float filters.
    pub fn unpack<R: Real>(&self) -> ConvWeights<R> {
        ConvWeights::from_fn(self.kernel, self.in_channels, self.out_channels, |ky, kx, ci, co| {
            if self.bit(ky, kx, ci, co) {
                R::one()
            } else {
                -R::one()
            }
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
    pub fn words(&self) -> &[u64] {
        &self.words
    }

    #[inline]
    pub fn bit(&self, ky: usize, kx: usize, ci: usize, co: usize) -> bool {
        let base = ((co * self.kernel + ky) * self.kernel + kx) * self.words_per_position;
        self.words[base + ci / WORD_BITS] >> (ci % WORD_BITS) & 1 == 1
    }
}

/// Binary convolution; output values are exact integers stored as reals
/// so batch normalization composes uniformly downstream.
pub fn binary_conv2d<R: Real>(
    x: &BitTensor,
    w: &BinaryConvWeights,
    spec: &ConvSpec,
) -> Result<FloatTensor<R>> {
    binary_conv2d_threaded(x, w, spec, 1)
}

/// [`binary_conv2d`] with work split over `threads` row bands.
pub fn binary_conv2d_threaded<R: Real>(
    x: &BitTensor,
    w: &BinaryConvWeights,
    spec: &ConvSpec,
    threads: usize,
) -> Result<FloatTensor<R>> {
    if spec.bias {
        return Err(Error::InvalidParameter("binary convolutions do not use bias".into()));
    }
    let out_shape = spec.output_shape(x.shape())?;
    if w.kernel != spec.kernel || w.in_channels != spec.in_channels
        || w.out_channels != spec.out_channels
    {
        return Err(Error::ShapeMismatch("weights do not match binary conv spec".into()));
    }

    let geom = Geometry {
        h_i: x.shape().height,
        w_i: x.shape().width,
        c_i: x.shape().channels,
        h_o: out_shape.height,
        w_o: out_shape.width,
        c_o: out_shape.channels,
        k: spec.kernel,
        s: spec.stride,
        p: spec.padding,
        wpp: x.words_per_pixel(),
        pad_bits: x.padding_bits(),
    };

    let mut acc = vec![0i32; out_shape.element_count()];
    par_over_rows(&mut acc, geom.h_o, geom.w_o * geom.c_o, threads, |row0, band| {
        run_band(&geom, x.words(), w.words(), row0, band);
    });

    let mut out = FloatTensor::zeros(out_shape);
    for (o, v) in out.data_mut().iter_mut().zip(&acc) {
        *o = R::from_i32(*v).expect("small integer");
    }
    Ok(out)
}

#[derive(Clone, Copy)]
struct Geometry {
    h_i: usize,
    w_i: usize,
    c_i: usize,
    h_o: usize,
    w_o: usize,
    c_o: usize,
    k: usize,
    s: usize,
    p: usize,
    wpp: usize,
    pad_bits: usize,
}

fn run_band(g: &Geometry, xw: &[u64], ww: &[u64], row0: usize, band: &mut [i32]) {
    #[cfg(target_arch = "x86_64")]
    {
        if std::arch::is_x86_feature_detected!("popcnt") {
            // SAFETY: feature presence checked at runtime.
            unsafe { band_kernel_popcnt(g, xw, ww, row0, band) };
            return;
        }
    }
    band_kernel(g, xw, ww, row0, band);
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "popcnt")]
unsafe fn band_kernel_popcnt(g: &Geometry, xw: &[u64], ww: &[u64], row0: usize, band: &mut [i32]) {
    band_kernel(g, xw, ww, row0, band);
}

#[inline(always)]
fn xnor_ones(a: &[u64], b: &[u64]) -> u32 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (!(x ^ y)).count_ones()).sum()
}

#[inline(always)]
fn band_kernel(g: &Geometry, xw: &[u64], ww: &[u64], row0: usize, band: &mut [i32]) {
    let (k, s, p, wpp) = (g.k, g.s, g.p, g.wpp);
    let run = k * wpp;
    let filter_words = k * run;
    let row_elems = g.w_o * g.c_o;

    for (dy, out_row) in band.chunks_mut(row_elems).enumerate() {
        let oy = row0 + dy;
        let iy0 = (oy * s) as isize - p as isize;
        let ky_lo = (-iy0).max(0) as usize;
        let ky_hi = k.min((g.h_i as isize - iy0).max(0) as usize);
        for ox in 0..g.w_o {
            let ix0 = (ox * s) as isize - p as isize;
            let kx_lo = (-ix0).max(0) as usize;
            let kx_hi = k.min((g.w_i as isize - ix0).max(0) as usize);
            let cell = &mut out_row[ox * g.c_o..(ox + 1) * g.c_o];

            if ky_lo == 0 && ky_hi == k && kx_lo == 0 && kx_hi == k {
                // interior: both operands stream as contiguous word runs
                let n = (k * k * g.c_i) as i32;
                let spurious = (k * k * g.pad_bits) as i32;
                for (oc, out_v) in cell.iter_mut().enumerate() {
                    let w_base = oc * filter_words;
                    let mut ones = 0u32;
                    for ky in 0..k {
                        let iy = (iy0 + ky as isize) as usize;
                        let x_off = (iy * g.w_i + ix0 as usize) * wpp;
                        ones += xnor_ones(
                            &xw[x_off..x_off + run],
                            &ww[w_base + ky * run..w_base + (ky + 1) * run],
                        );
                    }
                    *out_v = 2 * (ones as i32 - spurious) - n;
                }
            } else {
                // border: visit valid positions one by one
                let positions = ((ky_hi - ky_lo) * (kx_hi - kx_lo)) as i32;
                let n = positions * g.c_i as i32;
                let spurious = positions * g.pad_bits as i32;
                for (oc, out_v) in cell.iter_mut().enumerate() {
                    let w_base = oc * filter_words;
                    let mut ones = 0u32;
                    for ky in ky_lo..ky_hi {
                        let iy = (iy0 + ky as isize) as usize;
                        for kx in kx_lo..kx_hi {
                            let ix = (ix0 + kx as isize) as usize;
                            let x_off = (iy * g.w_i + ix) * wpp;
                            let w_off = w_base + (ky * k + kx) * wpp;
                            ones += xnor_ones(&xw[x_off..x_off + wpp], &ww[w_off..w_off + wpp]);
                        }
                    }
                    *out_v = 2 * (ones as i32 - spurious) - n;
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ops::conv::conv2d;
    use crate::tensor::{binarize, unpack};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn shape(h: usize, w: usize, c: usize) -> TensorShape {
        TensorShape::new(h, w, c).unwrap()
    }

    fn spec(k: usize, s: usize, p: usize, c_i: usize, c_o: usize) -> ConvSpec {
        ConvSpec { kernel: k, stride: s, padding: p, in_channels: c_i, out_channels: c_o, bias: false }
    }

    #[test]
    fn self_correlation_is_receptive_field_size() {
        // x == w over a single receptive field -> k^2 * c_i
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = FloatTensor::<f32>::random(shape(3, 3, 70), &mut rng, -1.0, 1.0);
        let xb = binarize(&x);
        let w = BinaryConvWeights::from_fn(3, 70, 1, |ky, kx, ci, _| xb.bit(ky, kx, ci));
        let y = binary_conv2d::<f32>(&xb, &w, &spec(3, 1, 0, 70, 1)).unwrap();
        assert_eq!(y.data(), &[(3 * 3 * 70) as f32]);

        // flipped weights -> -k^2 * c_i
        let w_neg = BinaryConvWeights::from_fn(3, 70, 1, |ky, kx, ci, _| !xb.bit(ky, kx, ci));
        let y_neg = binary_conv2d::<f32>(&xb, &w_neg, &spec(3, 1, 0, 70, 1)).unwrap();
        assert_eq!(y_neg.data(), &[-((3 * 3 * 70) as f32)]);
    }

    #[test]
    fn pointwise_matches_float_oracle_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = FloatTensor::<f32>::random(shape(10, 10, 64), &mut rng, -1.0, 1.0);
        let wf = ConvWeights::<f32>::random(1, 64, 16, &mut rng, -1.0, 1.0);
        let xb = binarize(&x);
        let wb = BinaryConvWeights::binarize(&wf);
        let sp = spec(1, 1, 0, 64, 16);
        let got = binary_conv2d::<f32>(&xb, &wb, &sp).unwrap();
        let want = conv2d(&unpack::<f32>(&xb), &wb.unpack::<f32>(), None, &sp).unwrap();
        assert_eq!(got, want);
    }

    #[test]
    fn padded_strided_matches_float_oracle_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for &(h, w, c, k, s, p, c_o) in &[
            (9usize, 7usize, 5usize, 3usize, 1usize, 1usize, 4usize),
            (12, 12, 96, 5, 2, 2, 8),
            (6, 6, 1, 3, 1, 2, 2),
            (11, 13, 130, 3, 2, 1, 3),
        ] {
            let x = FloatTensor::<f32>::random(shape(h, w, c), &mut rng, -1.0, 1.0);
            let wf = ConvWeights::<f32>::random(k, c, c_o, &mut rng, -1.0, 1.0);
            let xb = binarize(&x);
            let wb = BinaryConvWeights::binarize(&wf);
            let sp = spec(k, s, p, c, c_o);
            let got = binary_conv2d::<f32>(&xb, &wb, &sp).unwrap();
            let want = conv2d(&unpack::<f32>(&xb), &wb.unpack::<f32>(), None, &sp).unwrap();
            assert_eq!(got, want, "h={h} w={w} c={c} k={k} s={s} p={p}");
        }
    }

    #[test]
    fn threaded_matches_serial() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = FloatTensor::<f32>::random(shape(14, 10, 33), &mut rng, -1.0, 1.0);
        let wf = ConvWeights::<f32>::random(3, 33, 7, &mut rng, -1.0, 1.0);
        let xb = binarize(&x);
        let wb = BinaryConvWeights::binarize(&wf);
        let sp = spec(3, 1, 1, 33, 7);
        let serial = binary_conv2d::<f32>(&xb, &wb, &sp).unwrap();
        for threads in [2, 3, 8] {
            assert_eq!(binary_conv2d_threaded::<f32>(&xb, &wb, &sp, threads).unwrap(), serial);
        }
    }

    #[test]
    fn bias_flag_rejected() {
        let xb = binarize(&FloatTensor::<f32>::zeros(shape(2, 2, 4)));
        let wb = BinaryConvWeights::from_fn(1, 4, 2, |_, _, _, _| true);
        let mut sp = spec(1, 1, 0, 4, 2);
        sp.bias = true;
        assert!(binary_conv2d::<f32>(&xb, &wb, &sp).is_err());
    }

    #[test]
    fn weight_bit_layout_roundtrip() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let wf = ConvWeights::<f64>::random(3, 65, 4, &mut rng, -1.0, 1.0);
        let wb = BinaryConvWeights::binarize(&wf);
        for ky in 0..3 {
            for kx in 0..3 {
                for ci in 0..65 {
                    for co in 0..4 {
                        assert_eq!(wb.bit(ky, kx, ci, co), wf.get(ky, kx, ci, co) >= 0.0);
                    }
                }
            }
        }
    }
}
