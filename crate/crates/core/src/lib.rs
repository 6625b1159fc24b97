//! Binary neural network inference engine with a half-binary depthwise
//! separable (HB-DS) first stage, exact MAC/parameter cost accounting,
//! place-recognition evaluation, and a latency/energy benchmark harness.
//!
//! Modules:
//!
//! * [`tensor`] — dense float tensors and bit-packed `{-1,+1}` tensors
//! * [`ops`] — convolutions (standard / depthwise / binary), batchnorm
//!   with threshold folding, max pooling
//! * [`hbds`] — the HB-DS module, network specs, the runnable network,
//!   descriptor extraction
//! * [`complexity`] — exact MAC and parameter accounting
//! * [`train`] — desk-scale binary-aware training with the straight
//!   through estimator, plus gradient checking
//! * [`vpr`] — place matching, precision-recall metrics, dataset
//!   combination
//! * [`bench`] — forward-pass timing and energy reporting
//! * [`modelio`] — weight files, dataset manifests, descriptor files
//!
//! All dense math is generic over the scalar type (see [`scalar::Real`]);
//! the aliases below fix the two widths used in practice: `f32` for
//! inference and persistence, `f64` for training and gradient checks.

pub mod bench;
pub mod complexity;
pub mod error;
pub mod hbds;
pub mod modelio;
pub mod ops;
pub mod scalar;
pub mod tensor;
pub mod train;
pub mod vpr;

pub use error::{Error, Result};
pub use scalar::Real;

/// Inference-width dense tensor.
pub type Tensor32 = tensor::FloatTensor<f32>;
/// Training-width dense tensor.
pub type Tensor64 = tensor::FloatTensor<f64>;
/// Inference-width network.
pub type Network32 = hbds::Network<f32>;
/// Training-width network.
pub type Network64 = hbds::Network<f64>;
/// Inference-width descriptor.
pub type Descriptor32 = vpr::Descriptor<f32>;
