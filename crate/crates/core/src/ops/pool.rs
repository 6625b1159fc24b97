//! Channelwise max pooling.
//!
//! Pooling runs on pre-binarization activations (the XNOR-Net ordering);
//! pooling after binarization would saturate the map with ones.

use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::tensor::{FloatTensor, TensorShape};

/// Max over `k x k` windows with stride `s`, no padding.
pub fn maxpool<R: Real>(x: &FloatTensor<R>, k: usize, s: usize) -> Result<FloatTensor<R>> {
    if k == 0 || s == 0 {
        return Err(Error::InvalidParameter("pool kernel and stride must be >= 1".into()));
    }
    let (h_i, w_i, c) = (x.shape().height, x.shape().width, x.shape().channels);
    if h_i < k || w_i < k {
        return Err(Error::ShapeMismatch(format!(
            "pool window {k} larger than input {h_i}x{w_i}"
        )));
    }
    let h_o = (h_i - k) / s + 1;
    let w_o = (w_i - k) / s + 1;
    let mut out = FloatTensor::zeros(TensorShape::new(h_o, w_o, c)?);
    for oy in 0..h_o {
        for ox in 0..w_o {
            for ch in 0..c {
                let mut best = x.get(oy * s, ox * s, ch);
                for ky in 0..k {
                    for kx in 0..k {
                        let v = x.get(oy * s + ky, ox * s + kx, ch);
                        if v > best {
                            best = v;
                        }
                    }
                }
                out.set(oy, ox, ch, best);
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::binarize;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn shape(h: usize, w: usize, c: usize) -> TensorShape {
        TensorShape::new(h, w, c).unwrap()
    }

    #[test]
    fn constant_tensor_pools_to_constant() {
        let x = FloatTensor::from_fn(shape(5, 5, 2), |_, _, _| 0.75f32);
        let y = maxpool(&x, 3, 2).unwrap();
        assert_eq!(*y.shape(), shape(2, 2, 2));
        assert!(y.data().iter().all(|&v| v == 0.75));
    }

    #[test]
    fn network_pool_geometry() {
        // floor((55 - 3) / 2) + 1 = 27
        let x = FloatTensor::<f32>::zeros(shape(55, 55, 4));
        let y = maxpool(&x, 3, 2).unwrap();
        assert_eq!(*y.shape(), shape(27, 27, 4));
    }

    #[test]
    fn matches_naive_window_max_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let x = FloatTensor::<f64>::random(shape(9, 7, 3), &mut rng, -1.0, 1.0);
        let y = maxpool(&x, 2, 2).unwrap();
        for oy in 0..y.shape().height {
            for ox in 0..y.shape().width {
                for c in 0..3 {
                    let mut want = f64::NEG_INFINITY;
                    for ky in 0..2 {
                        for kx in 0..2 {
                            want = want.max(x.get(oy * 2 + ky, ox * 2 + kx, c));
                        }
                    }
                    assert_eq!(y.get(oy, ox, c), want);
                }
            }
        }
    }

    #[test]
    fn window_larger_than_input_is_error() {
        let x = FloatTensor::<f32>::zeros(shape(2, 2, 1));
        assert!(maxpool(&x, 3, 1).is_err());
    }

    #[test]
    fn pool_commutes_with_binarize() {
        // sign is monotone: maxpool then binarize == binarize then OR-pool
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        for _ in 0..20 {
            let x = FloatTensor::<f32>::random(shape(8, 8, 5), &mut rng, -1.0, 1.0);
            let pooled_then_bin = binarize(&maxpool(&x, 3, 2).unwrap());
            let bin = binarize(&x);
            for oy in 0..pooled_then_bin.shape().height {
                for ox in 0..pooled_then_bin.shape().width {
                    for c in 0..5 {
                        let mut any = false;
                        for ky in 0..3 {
                            for kx in 0..3 {
                                any |= bin.bit(oy * 2 + ky, ox * 2 + kx, c);
                            }
                        }
                        assert_eq!(pooled_then_bin.bit(oy, ox, c), any);
                    }
                }
            }
        }
    }
}
