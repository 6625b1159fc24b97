//! Dense float tensors and bit-packed binary tensors.
//!
//! Layout conventions:
//!
//! * [`FloatTensor`]: row-major `(y, x, c)` with channels innermost,
//!   so `index = (y * width + x) * channels + c`.
//! * [`BitTensor`]: one bit per element, channel dimension packed
//!   innermost into 64-bit words. Each pixel owns
//!   `ceil(channels / 64)` words; unused bits of the last word are
//!   always zero so that XNOR kernels can mask them out once.
//! * Bit value `1` encodes `+1`, bit value `0` encodes `-1`.
//!   Binarization maps `x >= 0` to `+1` (`sign(0) = +1`).

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Width of the packing word.
pub const WORD_BITS: usize = 64;

/// Height, width and channel count of a rank-3 activation or weight map.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct TensorShape {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
}

impl TensorShape {
    pub fn new(height: usize, width: usize, channels: usize) -> Result<Self> {
        if height == 0 || width == 0 || channels == 0 {
            return Err(Error::InvalidShape(format!(
                "all dimensions must be >= 1, got {height}x{width}x{channels}"
            )));
        }
        Ok(Self { height, width, channels })
    }

    #[inline]
    pub fn element_count(&self) -> usize {
        self.height * self.width * self.channels
    }

    /// Packed words needed per pixel when channels are bit-packed.
    #[inline]
    pub fn words_per_pixel(&self) -> usize {
        self.channels.div_ceil(WORD_BITS)
    }
}

impl std::fmt::Display for TensorShape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}x{}", self.height, self.width, self.channels)
    }
}

/// Dense real-valued `h x w x c` tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct FloatTensor<R> {
    shape: TensorShape,
    data: Vec<R>,
}

impl<R: Real> FloatTensor<R> {
    /// Build from raw data, validating length and finiteness.
    pub fn new(shape: TensorShape, data: Vec<R>) -> Result<Self> {
        if data.len() != shape.element_count() {
            return Err(Error::LengthMismatch(format!(
                "shape {shape} needs {} elements, got {}",
                shape.element_count(),
                data.len()
            )));
        }
        if let Some(bad) = data.iter().find(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("tensor element {bad}")));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: TensorShape) -> Self {
        Self { shape, data: vec![R::zero(); shape.element_count()] }
    }

    /// Fill from a function of `(y, x, c)`.
    pub fn from_fn(shape: TensorShape, mut f: impl FnMut(usize, usize, usize) -> R) -> Self {
        let mut data = Vec::with_capacity(shape.element_count());
        for y in 0..shape.height {
            for x in 0..shape.width {
                for c in 0..shape.channels {
                    data.push(f(y, x, c));
                }
            }
        }
        Self { shape, data }
    }

    /// Seeded uniform fill over `[lo, hi)`; values are drawn as `f64` so
    /// the stream is identical for every scalar width.
    pub fn random(shape: TensorShape, rng: &mut impl rand::Rng, lo: f64, hi: f64) -> Self {
        Self::from_fn(shape, |_, _, _| {
            crate::scalar::real(rng.random::<f64>() * (hi - lo) + lo)
        })
    }

    #[inline]
    pub fn shape(&self) -> &TensorShape {
        &self.shape
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
    fn index(&self, y: usize, x: usize, c: usize) -> usize {
        debug_assert!(y < self.shape.height && x < self.shape.width && c < self.shape.channels);
        (y * self.shape.width + x) * self.shape.channels + c
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> R {
        self.data[self.index(y, x, c)]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, c: usize, v: R) {
        let i = self.index(y, x, c);
        self.data[i] = v;
    }

    /// Elementwise map into a new tensor.
    pub fn map(&self, f: impl Fn(R) -> R) -> Self {
        Self { shape: self.shape, data: self.data.iter().map(|&v| f(v)).collect() }
    }

    /// Convert every element to another scalar width.
    pub fn cast<T: Real>(&self) -> FloatTensor<T> {
        FloatTensor {
            shape: self.shape,
            data: self
                .data
                .iter()
                .map(|v| T::from_f64(v.to_f64().expect("finite")).expect("finite"))
                .collect(),
        }
    }
}

/// Channel-packed `{-1,+1}` tensor, one bit per element.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BitTensor {
    shape: TensorShape,
    words: Vec<u64>,
    words_per_pixel: usize,
    /// Valid-bit mask for the last word of each pixel run.
    tail_mask: u64,
}

impl BitTensor {
    /// Pack from a predicate over `(y, x, c)`; `true` encodes `+1`.
    pub fn from_fn(shape: TensorShape, mut f: impl FnMut(usize, usize, usize) -> bool) -> Self {
        let wpp = shape.words_per_pixel();
        let mut words = vec![0u64; shape.height * shape.width * wpp];
        for y in 0..shape.height {
            for x in 0..shape.width {
                let base = (y * shape.width + x) * wpp;
                for c in 0..shape.channels {
                    if f(y, x, c) {
                        words[base + c / WORD_BITS] |= 1u64 << (c % WORD_BITS);
                    }
                }
            }
        }
        Self { shape, words, words_per_pixel: wpp, tail_mask: tail_mask(shape.channels) }
    }

    #[inline]
    pub fn shape(&self) -> &TensorShape {
        &self.shape
    }

    #[inline]
    pub fn words(&self) -> &[u64] {
        &self.words
    }

    #[inline]
    pub fn words_per_pixel(&self) -> usize {
        self.words_per_pixel
    }

    /// Mask of valid bits in the last word of each pixel run.
    #[inline]
    pub fn tail_mask(&self) -> u64 {
        self.tail_mask
    }

    /// Zero padding bits carried by each pixel run.
    #[inline]
    pub fn padding_bits(&self) -> usize {
        self.words_per_pixel * WORD_BITS - self.shape.channels
    }

    /// Packed word run for one pixel.
    #[inline]
    pub fn pixel_words(&self, y: usize, x: usize) -> &[u64] {
        let base = (y * self.shape.width + x) * self.words_per_pixel;
        &self.words[base..base + self.words_per_pixel]
    }

    #[inline]
    pub fn bit(&self, y: usize, x: usize, c: usize) -> bool {
        let run = self.pixel_words(y, x);
        run[c / WORD_BITS] >> (c % WORD_BITS) & 1 == 1
    }
}

#[inline]
fn tail_mask(channels: usize) -> u64 {
    match channels % WORD_BITS {
        0 => u64::MAX,
        r => (1u64 << r) - 1,
    }
}

/// Binarize with the `sign(0) = +1` convention: bit is set iff `x >= 0`.
pub fn binarize<R: Real>(x: &FloatTensor<R>) -> BitTensor {
    BitTensor::from_fn(*x.shape(), |y, xx, c| x.get(y, xx, c) >= R::zero())
}

/// Expand packed bits back to a `{-1.0, +1.0}` float tensor.
pub fn unpack<R: Real>(b: &BitTensor) -> FloatTensor<R> {
    FloatTensor::from_fn(*b.shape(), |y, x, c| {
        if b.bit(y, x, c) {
            R::one()
        } else {
            -R::one()
        }
    })
}

/// XNOR-popcount dot product of two packed `{-1,+1}` vectors.
///
/// Both operands must be packed with the same convention (padding bits
/// zero) and cover at least `n` elements. Returns
/// `2 * popcount(!(a ^ b) & valid) - n`, which equals the plain dot
/// product of the underlying `±1` values over the first `n` elements.
pub fn xnor_dot(a: &[u64], b: &[u64], n: usize) -> Result<i64> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch(format!(
            "packed operands differ: {} vs {} words",
            a.len(),
            b.len()
        )));
    }
    if n > a.len() * WORD_BITS {
        return Err(Error::LengthMismatch(format!(
            "effective length {n} exceeds packed capacity {}",
            a.len() * WORD_BITS
        )));
    }
    let full_words = n / WORD_BITS;
    let mut matches = 0u32;
    for i in 0..full_words {
        matches += (!(a[i] ^ b[i])).count_ones();
    }
    let rem = n % WORD_BITS;
    if rem != 0 {
        let mask = (1u64 << rem) - 1;
        matches += (!(a[full_words] ^ b[full_words]) & mask).count_ones();
    }
    Ok(2 * matches as i64 - n as i64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn shape(h: usize, w: usize, c: usize) -> TensorShape {
        TensorShape::new(h, w, c).unwrap()
    }

    #[test]
    fn shape_rejects_zero_dims() {
        assert!(TensorShape::new(0, 1, 1).is_err());
        assert!(TensorShape::new(1, 0, 1).is_err());
        assert!(TensorShape::new(1, 1, 0).is_err());
    }

    #[test]
    fn new_rejects_non_finite() {
        let s = shape(1, 1, 2);
        assert!(FloatTensor::new(s, vec![1.0f32, f32::NAN]).is_err());
        assert!(FloatTensor::new(s, vec![1.0f32, f32::INFINITY]).is_err());
        assert!(FloatTensor::new(s, vec![1.0f32]).is_err()); // wrong length
    }

    #[test]
    fn binarize_sign_convention() {
        // [-0.5, 0.0, 3.2] -> bits {0, 1, 1}; sign(0) = +1
        let x = FloatTensor::new(shape(1, 1, 3), vec![-0.5f32, 0.0, 3.2]).unwrap();
        let b = binarize(&x);
        assert!(!b.bit(0, 0, 0));
        assert!(b.bit(0, 0, 1));
        assert!(b.bit(0, 0, 2));
    }

    #[test]
    fn binarize_all_positive_sets_data_bits_only() {
        let s = shape(2, 2, 70); // 2 words per pixel, 58 padding bits
        let x = FloatTensor::from_fn(s, |_, _, _| 1.5f32);
        let b = binarize(&x);
        assert_eq!(b.words_per_pixel(), 2);
        assert_eq!(b.padding_bits(), 58);
        for y in 0..2 {
            for xx in 0..2 {
                let run = b.pixel_words(y, xx);
                assert_eq!(run[0], u64::MAX);
                assert_eq!(run[1], b.tail_mask());
                assert_eq!(run[1] & !b.tail_mask(), 0, "padding bits must stay zero");
            }
        }
    }

    #[test]
    fn binarize_matches_scalar_sign_oracle() {
        let s = shape(1, 1, 100);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x = FloatTensor::<f64>::random(s, &mut rng, -1.0, 1.0);
        let back = unpack::<f64>(&binarize(&x));
        for c in 0..100 {
            let expect = if x.get(0, 0, c) >= 0.0 { 1.0 } else { -1.0 };
            assert_eq!(back.get(0, 0, c), expect);
        }
    }

    #[test]
    fn unpack_two_bits() {
        let b = BitTensor::from_fn(shape(1, 1, 2), |_, _, c| c == 1);
        let x = unpack::<f32>(&b);
        assert_eq!(x.data(), &[-1.0, 1.0]);
    }

    #[test]
    fn two_word_packing_boundary() {
        // 65 channels: second word holds a single valid bit, 63 padding bits
        let s = shape(1, 1, 65);
        let b = BitTensor::from_fn(s, |_, _, _| true);
        assert_eq!(b.words_per_pixel(), 2);
        assert_eq!(b.padding_bits(), 63);
        assert_eq!(b.pixel_words(0, 0), &[u64::MAX, 1]);
        assert_eq!(b.tail_mask(), 1);
    }

    #[test]
    fn xnor_dot_hand_example() {
        // a = [+1,-1,+1], b = [+1,+1,-1]: dot = 1 - 1 - 1 = -1
        let a = BitTensor::from_fn(shape(1, 1, 3), |_, _, c| c != 1);
        let b = BitTensor::from_fn(shape(1, 1, 3), |_, _, c| c != 2);
        assert_eq!(xnor_dot(a.pixel_words(0, 0), b.pixel_words(0, 0), 3).unwrap(), -1);
    }

    #[test]
    fn xnor_dot_identity_is_n() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for &n in &[1usize, 63, 64, 65, 130, 512] {
            let s = shape(1, 1, n);
            let x = FloatTensor::<f32>::random(s, &mut rng, -1.0, 1.0);
            let b = binarize(&x);
            let run = b.pixel_words(0, 0);
            assert_eq!(xnor_dot(run, run, n).unwrap(), n as i64);
        }
    }

    #[test]
    fn xnor_dot_matches_float_dot_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let s = shape(1, 1, 512);
        for _ in 0..200 {
            let xa = FloatTensor::<f64>::random(s, &mut rng, -1.0, 1.0);
            let xb = FloatTensor::<f64>::random(s, &mut rng, -1.0, 1.0);
            let (ba, bb) = (binarize(&xa), binarize(&xb));
            let (ua, ub) = (unpack::<f64>(&ba), unpack::<f64>(&bb));
            let float_dot: f64 =
                ua.data().iter().zip(ub.data()).map(|(p, q)| p * q).sum();
            let got = xnor_dot(ba.pixel_words(0, 0), bb.pixel_words(0, 0), 512).unwrap();
            assert_eq!(got as f64, float_dot);
        }
    }

    #[test]
    fn xnor_dot_length_mismatch_is_error() {
        assert!(xnor_dot(&[0u64; 2], &[0u64; 3], 64).is_err());
        assert!(xnor_dot(&[0u64; 1], &[0u64; 1], 65).is_err());
    }

    mod proptests {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn roundtrip_binarize_unpack(
                h in 1usize..4, w in 1usize..4, c in 1usize..150, seed in 0u64..1000
            ) {
                let s = shape(h, w, c);
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let x = FloatTensor::<f32>::random(s, &mut rng, -2.0, 2.0);
                let b = binarize(&x);
                let again = binarize(&unpack::<f32>(&b));
                prop_assert_eq!(b, again);
            }

            #[test]
            fn xnor_dot_parity_and_bound(
                n in 1usize..200, seed in 0u64..1000
            ) {
                let s = shape(1, 1, n);
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let a = binarize(&FloatTensor::<f32>::random(s, &mut rng, -1.0, 1.0));
                let b = binarize(&FloatTensor::<f32>::random(s, &mut rng, -1.0, 1.0));
                let d = xnor_dot(a.pixel_words(0, 0), b.pixel_words(0, 0), n).unwrap();
                prop_assert!(d.unsigned_abs() as usize <= n);
                // dot of n ±1 terms has the parity of n
                prop_assert_eq!(d.rem_euclid(2), (n as i64).rem_euclid(2));
            }

            #[test]
            fn padding_bits_stay_zero(
                h in 1usize..3, w in 1usize..3, c in 1usize..200, seed in 0u64..1000
            ) {
                let s = shape(h, w, c);
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let b = binarize(&FloatTensor::<f32>::random(s, &mut rng, -1.0, 1.0));
                for y in 0..h {
                    for x in 0..w {
                        let run = b.pixel_words(y, x);
                        prop_assert_eq!(run[b.words_per_pixel() - 1] & !b.tail_mask(), 0);
                    }
                }
            }
        }
    }
}
