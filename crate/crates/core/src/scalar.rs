//! Scalar abstraction for the engine.
//!
//! All dense math is generic over [`Real`], which is satisfied by `f32`
//! and `f64`. Inference and persistence default to `f32`; training and
//! gradient checking run in `f64`. Exact integer/rational arithmetic for
//! cost accounting lives in the `complexity` module and does not go
//! through this trait.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssignOps, ToPrimitive};

/// Floating-point scalar usable as tensor element type.
pub trait Real:
    Float
    + FromPrimitive
    + ToPrimitive
    + NumAssignOps
    + Sum
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
}

impl<T> Real for T where
    T: Float
        + FromPrimitive
        + ToPrimitive
        + NumAssignOps
        + Sum
        + Default
        + Debug
        + Display
        + Send
        + Sync
        + 'static
{
}

/// Convert an `f64` constant into the working scalar type.
#[inline]
pub fn real<R: Real>(v: f64) -> R {
    R::from_f64(v).expect("f64 constant must be representable")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn both_float_widths_are_real() {
        fn takes_real<R: Real>(x: R) -> R {
            x + R::one()
        }
        assert_eq!(takes_real(1.0f32), 2.0f32);
        assert_eq!(takes_real(1.0f64), 2.0f64);
    }

    #[test]
    fn real_conversion_is_exact_for_small_integers() {
        let x: f32 = real(3.0);
        assert_eq!(x, 3.0f32);
        let y: f64 = real(-1.5);
        assert_eq!(y, -1.5f64);
    }
}
