//! Batch normalization and its inference-time fusion with binarization.
//!
//! At inference, `binarize(batchnorm(x))` collapses to a per-channel
//! threshold compare: `gamma * (x - mean) / sqrt(var + eps) + beta >= 0`
//! solves to `x >= tau` (or `x <= tau` when `gamma < 0`) with
//! `tau = mean - beta * sqrt(var + eps) / gamma`. A zero gamma makes the
//! channel constant, encoded as an infinite threshold so inference stays
//! total.

use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::tensor::{BitTensor, FloatTensor};

/// Per-channel affine normalization parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchNormParams<R> {
    pub gamma: Vec<R>,
    pub beta: Vec<R>,
    pub running_mean: Vec<R>,
    pub running_var: Vec<R>,
    pub epsilon: R,
}

impl<R: Real> BatchNormParams<R> {
    pub fn new(
        gamma: Vec<R>,
        beta: Vec<R>,
        running_mean: Vec<R>,
        running_var: Vec<R>,
        epsilon: R,
    ) -> Result<Self> {
        let c = gamma.len();
        if beta.len() != c || running_mean.len() != c || running_var.len() != c || c == 0 {
            return Err(Error::LengthMismatch(
                "batchnorm parameter vectors must share one nonzero length".into(),
            ));
        }
        if epsilon < R::zero() {
            return Err(Error::InvalidParameter("epsilon must be >= 0".into()));
        }
        for &v in &running_var {
            if v < R::zero() {
                return Err(Error::InvalidParameter("running variance must be >= 0".into()));
            }
            if v + epsilon <= R::zero() {
                return Err(Error::InvalidParameter(
                    "var + epsilon must be > 0 for every channel".into(),
                ));
            }
        }
        Ok(Self { gamma, beta, running_mean, running_var, epsilon })
    }

    /// Identity transform over `channels` channels.
    pub fn identity(channels: usize) -> Self {
        Self {
            gamma: vec![R::one(); channels],
            beta: vec![R::zero(); channels],
            running_mean: vec![R::zero(); channels],
            running_var: vec![R::one(); channels],
            epsilon: crate::scalar::real(1e-5),
        }
    }

    #[inline]
    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    pub fn cast<T: Real>(&self) -> BatchNormParams<T> {
        let c = |v: &Vec<R>| -> Vec<T> {
            v.iter().map(|x| T::from_f64(x.to_f64().expect("finite")).expect("finite")).collect()
        };
        BatchNormParams {
            gamma: c(&self.gamma),
            beta: c(&self.beta),
            running_mean: c(&self.running_mean),
            running_var: c(&self.running_var),
            epsilon: T::from_f64(self.epsilon.to_f64().expect("finite")).expect("finite"),
        }
    }
}

/// `y = gamma * (x - mean) / sqrt(var + eps) + beta`, per channel.
pub fn batchnorm<R: Real>(x: &FloatTensor<R>, p: &BatchNormParams<R>) -> Result<FloatTensor<R>> {
    let c = x.shape().channels;
    if p.channels() != c {
        return Err(Error::ShapeMismatch(format!(
            "batchnorm has {} channels, input has {c}",
            p.channels()
        )));
    }
    // precomputed per-channel scale/shift
    let scale: Vec<R> =
        (0..c).map(|i| p.gamma[i] / (p.running_var[i] + p.epsilon).sqrt()).collect();
    let shift: Vec<R> = (0..c).map(|i| p.beta[i] - scale[i] * p.running_mean[i]).collect();

    let mut out = FloatTensor::zeros(*x.shape());
    for (o, (v, ch)) in out
        .data_mut()
        .iter_mut()
        .zip(x.data().iter().zip((0..c).cycle()))
    {
        *o = scale[ch] * *v + shift[ch];
    }
    Ok(out)
}

/// Folded decision rule equivalent to `sign(batchnorm(x))` on one channel.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BinarizeThreshold<R> {
    pub threshold: R,
    /// `false`: bit set iff `x >= threshold`; `true`: bit set iff
    /// `x <= threshold` (negative gamma reverses the comparison).
    pub flip: bool,
}

impl<R: Real> BinarizeThreshold<R> {
    #[inline]
    pub fn bit(&self, x: R) -> bool {
        if self.flip {
            x <= self.threshold
        } else {
            x >= self.threshold
        }
    }
}

/// Fold batchnorm-then-binarize into per-channel threshold compares.
///
/// Zero-gamma channels degenerate to the constant `sign(beta)`, encoded
/// as a `-inf` (always one) or `+inf` (always zero) threshold.
pub fn fold_bn_binarize<R: Real>(p: &BatchNormParams<R>) -> Vec<BinarizeThreshold<R>> {
    (0..p.channels())
        .map(|i| {
            let gamma = p.gamma[i];
            if gamma == R::zero() {
                let always_one = p.beta[i] >= R::zero();
                BinarizeThreshold {
                    threshold: if always_one { R::neg_infinity() } else { R::infinity() },
                    flip: false,
                }
            } else {
                let sigma = (p.running_var[i] + p.epsilon).sqrt();
                BinarizeThreshold {
                    threshold: p.running_mean[i] - p.beta[i] * sigma / gamma,
                    flip: gamma < R::zero(),
                }
            }
        })
        .collect()
}

/// Binarize activations through folded thresholds.
pub fn binarize_with_thresholds<R: Real>(
    x: &FloatTensor<R>,
    thresholds: &[BinarizeThreshold<R>],
) -> Result<BitTensor> {
    if thresholds.len() != x.shape().channels {
        return Err(Error::ShapeMismatch(format!(
            "{} thresholds for {} channels",
            thresholds.len(),
            x.shape().channels
        )));
    }
    Ok(BitTensor::from_fn(*x.shape(), |y, xx, c| thresholds[c].bit(x.get(y, xx, c))))
}
