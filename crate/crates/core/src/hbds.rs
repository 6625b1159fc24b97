//! The half-binary depthwise separable (HB-DS) first stage and the full
//! network built from it.
//!
//! An HB-DS module replaces a full-precision `k x k` convolution with:
//! full-precision depthwise conv (depth multiplier `d`) -> batchnorm ->
//! binarize -> binary `1 x 1` pointwise conv. Only the cheap depthwise
//! stage stays in float; the channel mixing runs as XNOR-popcount.
//!
//! The network is a first stage (standard conv or HB-DS) followed by
//! alternating binary convolutions and max pools. Binary convolutions
//! carry no bias and are preceded by batch normalization of their float
//! input; at inference the norm+sign pair is folded into per-channel
//! threshold compares. Descriptors are taken from a configurable tap
//! layer (the last pooling layer by default) and L2-normalized.

use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ops::{
    batchnorm, binarize_with_thresholds, binary_conv2d_threaded, conv2d_threaded,
    depthwise_conv2d_threaded, fold_bn_binarize, maxpool, BatchNormParams, BinarizeThreshold,
    BinaryConvWeights, ConvSpec, ConvWeights, DepthwiseSpec, DepthwiseWeights,
};
use crate::scalar::Real;
use crate::tensor::{binarize, FloatTensor, TensorShape};

/// Geometry of an HB-DS first stage.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct HBDSSpec {
    pub kernel: usize,
    pub stride: usize,
    pub out_channels: usize,
    pub depth_multiplier: usize,
}

impl HBDSSpec {
    fn depthwise(&self) -> DepthwiseSpec {
        DepthwiseSpec {
            kernel: self.kernel,
            stride: self.stride,
            padding: 0,
            depth_multiplier: self.depth_multiplier,
            bias: true,
        }
    }

    fn pointwise(&self, hidden_channels: usize) -> ConvSpec {
        ConvSpec {
            kernel: 1,
            stride: 1,
            padding: 0,
            in_channels: hidden_channels,
            out_channels: self.out_channels,
            bias: false,
        }
    }
}

/// One layer of a network description.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    /// Full-precision first stage (the non-binary baseline).
    StandardConv { kernel: usize, stride: usize, padding: usize, out_channels: usize, bias: bool },
    /// HB-DS first stage.
    Hbds(HBDSSpec),
    /// Batchnorm + binarize + binary convolution, no bias.
    BinaryConv { kernel: usize, stride: usize, padding: usize, out_channels: usize },
    MaxPool { kernel: usize, stride: usize },
}

impl LayerSpec {
    pub fn is_first_stage(&self) -> bool {
        matches!(self, LayerSpec::StandardConv { .. } | LayerSpec::Hbds(_))
    }

    fn output_shape(&self, input: &TensorShape) -> Result<TensorShape> {
        match *self {
            LayerSpec::StandardConv { kernel, stride, padding, out_channels, bias } => ConvSpec {
                kernel,
                stride,
                padding,
                in_channels: input.channels,
                out_channels,
                bias,
            }
            .output_shape(input),
            LayerSpec::Hbds(spec) => {
                let hidden = spec.depthwise().output_shape(input)?;
                spec.pointwise(hidden.channels).output_shape(&hidden)
            }
            LayerSpec::BinaryConv { kernel, stride, padding, out_channels } => ConvSpec {
                kernel,
                stride,
                padding,
                in_channels: input.channels,
                out_channels,
                bias: false,
            }
            .output_shape(input),
            LayerSpec::MaxPool { kernel, stride } => {
                if input.height < kernel || input.width < kernel {
                    return Err(Error::ShapeMismatch(format!(
                        "pool window {kernel} larger than input {input}"
                    )));
                }
                TensorShape::new(
                    (input.height - kernel) / stride + 1,
                    (input.width - kernel) / stride + 1,
                    input.channels,
                )
            }
        }
    }

    pub fn name(&self, index: usize) -> String {
        match *self {
            LayerSpec::StandardConv { kernel, stride, out_channels, .. } => {
                format!("conv{index}({kernel},{stride},{out_channels})")
            }
            LayerSpec::Hbds(s) => format!(
                "hbds({},{},{},{})",
                s.kernel, s.stride, s.out_channels, s.depth_multiplier
            ),
            LayerSpec::BinaryConv { kernel, stride, out_channels, .. } => {
                format!("bconv{index}({kernel},{stride},{out_channels})")
            }
            LayerSpec::MaxPool { kernel, stride } => format!("pool{index}({kernel},{stride})"),
        }
    }
}

/// First-stage choice for [`NetworkSpec::default_with_first_stage`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FirstStage {
    Standard,
    Hbds { depth_multiplier: usize },
}

/// Ordered layer descriptions plus the descriptor tap point.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub input: TensorShape,
    pub layers: Vec<LayerSpec>,
    /// Index of the layer whose output feeds descriptor extraction.
    pub tap: usize,
}

impl NetworkSpec {
    /// The default architecture: `227x227x3` input, an `(11, s4, 96)`
    /// first stage, then two binary conv + max-pool pairs
    /// (`5x5 s1 p2 c256`, `3x3 s1 p1 c384`), tapping the last pool.
    pub fn default_with_first_stage(first: FirstStage) -> Self {
        let stage = match first {
            FirstStage::Standard => LayerSpec::StandardConv {
                kernel: 11,
                stride: 4,
                padding: 0,
                out_channels: 96,
                bias: false,
            },
            FirstStage::Hbds { depth_multiplier } => LayerSpec::Hbds(HBDSSpec {
                kernel: 11,
                stride: 4,
                out_channels: 96,
                depth_multiplier,
            }),
        };
        let layers = vec![
            stage,
            LayerSpec::MaxPool { kernel: 3, stride: 2 },
            LayerSpec::BinaryConv { kernel: 5, stride: 1, padding: 2, out_channels: 256 },
            LayerSpec::MaxPool { kernel: 3, stride: 2 },
            LayerSpec::BinaryConv { kernel: 3, stride: 1, padding: 1, out_channels: 384 },
            LayerSpec::MaxPool { kernel: 3, stride: 2 },
        ];
        let tap = layers.len() - 1;
        NetworkSpec { input: TensorShape { height: 227, width: 227, channels: 3 }, layers, tap }
    }

    /// Check first-stage placement, shape chaining and the tap index.
    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::InvalidParameter("network needs at least one layer".into()));
        }
        if !self.layers[0].is_first_stage() {
            return Err(Error::InvalidParameter(
                "first layer must be a standard conv or HB-DS stage".into(),
            ));
        }
        if self.layers[1..].iter().any(LayerSpec::is_first_stage) {
            return Err(Error::InvalidParameter("exactly one first stage allowed".into()));
        }
        if self.tap >= self.layers.len() {
            return Err(Error::InvalidParameter(format!(
                "tap index {} out of range for {} layers",
                self.tap,
                self.layers.len()
            )));
        }
        self.layer_shapes().map(|_| ())
    }

    /// Output shape of every layer, in order.
    pub fn layer_shapes(&self) -> Result<Vec<TensorShape>> {
        let mut shapes = Vec::with_capacity(self.layers.len());
        let mut current = self.input;
        for layer in &self.layers {
            current = layer.output_shape(&current)?;
            shapes.push(current);
        }
        Ok(shapes)
    }

    /// Flattened length of the descriptor taken at the tap layer.
    pub fn descriptor_len(&self) -> Result<usize> {
        let shapes = self.layer_shapes()?;
        Ok(shapes[self.tap].element_count())
    }

    pub fn layer_names(&self) -> Vec<String> {
        self.layers.iter().enumerate().map(|(i, l)| l.name(i)).collect()
    }
}

/// Materialized HB-DS stage with pre-folded binarization thresholds.
#[derive(Clone, Debug)]
pub struct HbdsModule<R> {
    spec: HBDSSpec,
    depthwise: DepthwiseWeights<R>,
    bias: Vec<R>,
    bn: BatchNormParams<R>,
    pointwise: BinaryConvWeights,
    thresholds: Vec<BinarizeThreshold<R>>,
}

impl<R: Real> HbdsModule<R> {
    pub fn new(
        spec: HBDSSpec,
        depthwise: DepthwiseWeights<R>,
        bias: Vec<R>,
        bn: BatchNormParams<R>,
        pointwise: BinaryConvWeights,
    ) -> Result<Self> {
        let hidden = depthwise.in_channels() * spec.depth_multiplier;
        if depthwise.kernel() != spec.kernel || depthwise.multiplier() != spec.depth_multiplier {
            return Err(Error::ShapeMismatch("depthwise weights do not match HB-DS spec".into()));
        }
        if bias.len() != hidden || bn.channels() != hidden {
            return Err(Error::ShapeMismatch(format!(
                "HB-DS bias/batchnorm must cover {hidden} hidden channels"
            )));
        }
        if pointwise.kernel() != 1
            || pointwise.in_channels() != hidden
            || pointwise.out_channels() != spec.out_channels
        {
            return Err(Error::ShapeMismatch("pointwise weights do not match HB-DS spec".into()));
        }
        let thresholds = fold_bn_binarize(&bn);
        Ok(Self { spec, depthwise, bias, bn, pointwise, thresholds })
    }

    /// Fused inference path: depthwise -> threshold binarize -> binary
    /// pointwise.
    pub fn forward(&self, x: &FloatTensor<R>, threads: usize) -> Result<FloatTensor<R>> {
        let hidden = depthwise_conv2d_threaded(
            x,
            &self.depthwise,
            Some(&self.bias),
            &self.spec.depthwise(),
            threads,
        )?;
        let bits = binarize_with_thresholds(&hidden, &self.thresholds)?;
        binary_conv2d_threaded(&bits, &self.pointwise, &self.spec.pointwise(bn_len(&self.bn)), threads)
    }

    /// Unfused composition of the four underlying ops; used as an oracle
    /// against the fused path.
    pub fn forward_unfused(&self, x: &FloatTensor<R>, threads: usize) -> Result<FloatTensor<R>> {
        let hidden = depthwise_conv2d_threaded(
            x,
            &self.depthwise,
            Some(&self.bias),
            &self.spec.depthwise(),
            threads,
        )?;
        let bits = binarize(&batchnorm(&hidden, &self.bn)?);
        binary_conv2d_threaded(&bits, &self.pointwise, &self.spec.pointwise(bn_len(&self.bn)), threads)
    }

    pub fn spec(&self) -> &HBDSSpec {
        &self.spec
    }

    pub fn depthwise_weights(&self) -> &DepthwiseWeights<R> {
        &self.depthwise
    }

    pub fn depthwise_bias(&self) -> &[R] {
        &self.bias
    }

    pub fn bn(&self) -> &BatchNormParams<R> {
        &self.bn
    }

    pub fn pointwise_weights(&self) -> &BinaryConvWeights {
        &self.pointwise
    }

    pub fn cast<T: Real>(&self) -> HbdsModule<T> {
        HbdsModule {
            spec: self.spec,
            depthwise: self.depthwise.cast(),
            bias: cast_vec(&self.bias),
            bn: self.bn.cast(),
            pointwise: self.pointwise.clone(),
            thresholds: fold_bn_binarize(&self.bn.cast::<T>()),
        }
    }
}

fn bn_len<R>(bn: &BatchNormParams<R>) -> usize {
    bn.gamma.len()
}

fn cast_vec<R: Real, T: Real>(v: &[R]) -> Vec<T> {
    v.iter().map(|x| T::from_f64(x.to_f64().expect("finite")).expect("finite")).collect()
}

/// Materialized batchnorm + binarize + binary convolution block.
#[derive(Clone, Debug)]
pub struct BinaryConvLayer<R> {
    conv: ConvSpec,
    bn: BatchNormParams<R>,
    weights: BinaryConvWeights,
    thresholds: Vec<BinarizeThreshold<R>>,
}

impl<R: Real> BinaryConvLayer<R> {
    pub fn new(
        stride: usize,
        padding: usize,
        bn: BatchNormParams<R>,
        weights: BinaryConvWeights,
    ) -> Result<Self> {
        if bn.channels() != weights.in_channels() {
            return Err(Error::ShapeMismatch(format!(
                "batchnorm covers {} channels, binary conv expects {}",
                bn.channels(),
                weights.in_channels()
            )));
        }
        let conv = ConvSpec {
            kernel: weights.kernel(),
            stride,
            padding,
            in_channels: weights.in_channels(),
            out_channels: weights.out_channels(),
            bias: false,
        };
        let thresholds = fold_bn_binarize(&bn);
        Ok(Self { conv, bn, weights, thresholds })
    }

    pub fn forward(&self, x: &FloatTensor<R>, threads: usize) -> Result<FloatTensor<R>> {
        let bits = binarize_with_thresholds(x, &self.thresholds)?;
        binary_conv2d_threaded(&bits, &self.weights, &self.conv, threads)
    }

    pub fn conv_spec(&self) -> &ConvSpec {
        &self.conv
    }

    pub fn bn(&self) -> &BatchNormParams<R> {
        &self.bn
    }

    pub fn weights(&self) -> &BinaryConvWeights {
        &self.weights
    }

    pub fn cast<T: Real>(&self) -> BinaryConvLayer<T> {
        let bn = self.bn.cast::<T>();
        BinaryConvLayer {
            conv: self.conv,
            thresholds: fold_bn_binarize(&bn),
            bn,
            weights: self.weights.clone(),
        }
    }
}

/// A materialized network layer.
#[derive(Clone, Debug)]
pub enum Layer<R> {
    Standard { spec: ConvSpec, weights: ConvWeights<R>, bias: Option<Vec<R>> },
    Hbds(HbdsModule<R>),
    Binary(BinaryConvLayer<R>),
    MaxPool { kernel: usize, stride: usize },
}

impl<R: Real> Layer<R> {
    fn forward(&self, x: &FloatTensor<R>, threads: usize) -> Result<FloatTensor<R>> {
        match self {
            Layer::Standard { spec, weights, bias } => {
                conv2d_threaded(x, weights, bias.as_deref(), spec, threads)
            }
            Layer::Hbds(m) => m.forward(x, threads),
            Layer::Binary(b) => b.forward(x, threads),
            Layer::MaxPool { kernel, stride } => maxpool(x, *kernel, *stride),
        }
    }

    fn cast<T: Real>(&self) -> Layer<T> {
        match self {
            Layer::Standard { spec, weights, bias } => Layer::Standard {
                spec: *spec,
                weights: weights.cast(),
                bias: bias.as_ref().map(|b| cast_vec(b)),
            },
            Layer::Hbds(m) => Layer::Hbds(m.cast()),
            Layer::Binary(b) => Layer::Binary(b.cast()),
            Layer::MaxPool { kernel, stride } => Layer::MaxPool { kernel: *kernel, stride: *stride },
        }
    }
}

/// Execution options for a forward pass.
#[derive(Clone, Copy, Debug)]
pub struct ForwardOptions {
    pub timing: bool,
    pub threads: usize,
}

impl Default for ForwardOptions {
    fn default() -> Self {
        Self { timing: false, threads: 1 }
    }
}

/// Features from the tap layer plus optional per-layer wall time.
#[derive(Clone, Debug)]
pub struct Forward<R> {
    pub features: FloatTensor<R>,
    pub layer_times: Vec<Duration>,
}

/// A runnable network: spec plus materialized weights. Immutable after
/// construction; concurrent forward calls on distinct inputs are safe.
#[derive(Clone, Debug)]
pub struct Network<R> {
    spec: NetworkSpec,
    layers: Vec<Layer<R>>,
}

impl<R: Real> Network<R> {
    /// Build from already-materialized layers, checking them against the
    /// spec layer by layer.
    pub fn from_layers(spec: NetworkSpec, layers: Vec<Layer<R>>) -> Result<Self> {
        spec.validate()?;
        if layers.len() != spec.layers.len() {
            return Err(Error::ShapeMismatch(format!(
                "spec has {} layers, got {} materialized",
                spec.layers.len(),
                layers.len()
            )));
        }
        let shapes = spec.layer_shapes()?;
        let mut input = spec.input;
        for (i, (ls, layer)) in spec.layers.iter().zip(&layers).enumerate() {
            let ok = match (ls, layer) {
                (
                    &LayerSpec::StandardConv { kernel, stride, padding, out_channels, bias },
                    Layer::Standard { spec: cs, weights, bias: b },
                ) => {
                    cs.kernel == kernel
                        && cs.stride == stride
                        && cs.padding == padding
                        && cs.out_channels == out_channels
                        && cs.bias == bias
                        && cs.in_channels == input.channels
                        && weights.kernel() == kernel
                        && weights.in_channels() == input.channels
                        && weights.out_channels() == out_channels
                        && b.is_some() == bias
                }
                (LayerSpec::Hbds(hs), Layer::Hbds(m)) => {
                    m.spec() == hs && m.depthwise_weights().in_channels() == input.channels
                }
                (
                    &LayerSpec::BinaryConv { kernel, stride, padding, out_channels },
                    Layer::Binary(b),
                ) => {
                    let cs = b.conv_spec();
                    cs.kernel == kernel
                        && cs.stride == stride
                        && cs.padding == padding
                        && cs.out_channels == out_channels
                        && cs.in_channels == input.channels
                }
                (
                    &LayerSpec::MaxPool { kernel, stride },
                    &Layer::MaxPool { kernel: k, stride: s },
                ) => kernel == k && stride == s,
                _ => false,
            };
            if !ok {
                return Err(Error::ShapeMismatch(format!(
                    "layer {i} ({}) does not match its materialization",
                    ls.name(i)
                )));
            }
            input = shapes[i];
        }
        Ok(Self { spec, layers })
    }

    /// Deterministic random weights: seeded uniform `[-1, 1)` draws
    /// (binarized where the layer is binary), zero biases, identity
    /// batchnorm.
    pub fn random(spec: &NetworkSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut input = spec.input;
        let mut layers = Vec::with_capacity(spec.layers.len());
        for ls in &spec.layers {
            let layer = match *ls {
                LayerSpec::StandardConv { kernel, stride, padding, out_channels, bias } => {
                    let cs = ConvSpec {
                        kernel,
                        stride,
                        padding,
                        in_channels: input.channels,
                        out_channels,
                        bias,
                    };
                    Layer::Standard {
                        spec: cs,
                        weights: ConvWeights::random(
                            kernel,
                            input.channels,
                            out_channels,
                            &mut rng,
                            -1.0,
                            1.0,
                        ),
                        bias: bias.then(|| vec![R::zero(); out_channels]),
                    }
                }
                LayerSpec::Hbds(hs) => {
                    let hidden = input.channels * hs.depth_multiplier;
                    let dw = DepthwiseWeights::random(
                        hs.kernel,
                        input.channels,
                        hs.depth_multiplier,
                        &mut rng,
                        -1.0,
                        1.0,
                    );
                    let pw = BinaryConvWeights::binarize(&ConvWeights::<R>::random(
                        1,
                        hidden,
                        hs.out_channels,
                        &mut rng,
                        -1.0,
                        1.0,
                    ));
                    Layer::Hbds(HbdsModule::new(
                        hs,
                        dw,
                        vec![R::zero(); hidden],
                        BatchNormParams::identity(hidden),
                        pw,
                    )?)
                }
                LayerSpec::BinaryConv { kernel, stride, padding, out_channels } => {
                    let w = BinaryConvWeights::binarize(&ConvWeights::<R>::random(
                        kernel,
                        input.channels,
                        out_channels,
                        &mut rng,
                        -1.0,
                        1.0,
                    ));
                    Layer::Binary(BinaryConvLayer::new(
                        stride,
                        padding,
                        BatchNormParams::identity(input.channels),
                        w,
                    )?)
                }
                LayerSpec::MaxPool { kernel, stride } => Layer::MaxPool { kernel, stride },
            };
            input = ls.output_shape(&input)?;
            layers.push(layer);
        }
        Ok(Self { spec: spec.clone(), layers })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn layers(&self) -> &[Layer<R>] {
        &self.layers
    }

    /// Run all layers; return the tap layer's features and, when
    /// requested, the monotonic-clock duration of each layer.
    pub fn forward(&self, x: &FloatTensor<R>, opts: &ForwardOptions) -> Result<Forward<R>> {
        if *x.shape() != self.spec.input {
            return Err(Error::ShapeMismatch(format!(
                "input {} does not match network input {}",
                x.shape(),
                self.spec.input
            )));
        }
        let mut times = Vec::new();
        let mut tap_features = None;
        let mut current = None::<FloatTensor<R>>;
        for (i, layer) in self.layers.iter().enumerate() {
            let input = current.as_ref().unwrap_or(x);
            let t0 = opts.timing.then(Instant::now);
            let out = layer.forward(input, opts.threads)?;
            if let Some(t0) = t0 {
                times.push(t0.elapsed());
            }
            if i == self.spec.tap {
                tap_features = Some(out.clone());
            }
            current = Some(out);
        }
        Ok(Forward {
            features: tap_features.expect("tap index validated at construction"),
            layer_times: times,
        })
    }

    /// Forward plus descriptor extraction.
    pub fn descriptor(&self, x: &FloatTensor<R>, opts: &ForwardOptions) -> Result<Vec<R>> {
        extract_descriptor(&self.forward(x, opts)?.features)
    }

    pub fn cast<T: Real>(&self) -> Network<T> {
        Network { spec: self.spec.clone(), layers: self.layers.iter().map(Layer::cast).collect() }
    }
}

/// Flatten features and L2-normalize. The squared norm accumulates in
/// `f64` so descriptor length never degrades unit norm.
pub fn extract_descriptor<R: Real>(features: &FloatTensor<R>) -> Result<Vec<R>> {
    let sumsq: f64 = features
        .data()
        .iter()
        .map(|v| {
            let f = v.to_f64().expect("finite");
            f * f
        })
        .sum();
    if sumsq == 0.0 {
        return Err(Error::ZeroNorm);
    }
    let norm = crate::scalar::real::<R>(sumsq.sqrt());
    Ok(features.data().iter().map(|&v| v / norm).collect())
}
