//! Desk-scale binary-aware training with the straight-through estimator.
//!
//! This exists to validate the training machinery (backprop through
//! depthwise/batchnorm/binary layers, STE behavior, determinism), not to
//! reproduce large-scale training. A full-precision dense head and
//! softmax cross-entropy are appended for training and discarded when
//! the network is exported for descriptor use.

mod layers;

pub use layers::{
    softmax_cross_entropy, BatchNormLayer, BinarizeLayer, BinaryConvSteLayer, BinaryMode,
    ConvLayer, DenseLayer, DepthwiseLayer, FlattenLayer, MaxPoolLayer, Optimizer, OptimizerKind,
    ParamGroup, TrainLayer, TrainNet,
};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::hbds::{
    BinaryConvLayer, HbdsModule, Layer, LayerSpec, Network, NetworkSpec,
};
use crate::ops::{
    BatchNormParams, BinaryConvWeights, ConvSpec, ConvWeights, DepthwiseSpec, DepthwiseWeights,
};
use crate::scalar::{real, Real};
use crate::tensor::{FloatTensor, TensorShape};

/// Forward of the sign non-linearity: `sign(x)` with `sign(0) = +1`.
pub fn ste_forward<R: Real>(x: R) -> R {
    if x >= R::zero() {
        R::one()
    } else {
        -R::one()
    }
}

/// Straight-through gradient: the upstream value inside `|x| <= clip`,
/// exactly zero outside.
pub fn ste_backward<R: Real>(x: R, upstream: R, clip: R) -> R {
    if x.abs() <= clip {
        upstream
    } else {
        R::zero()
    }
}

/// Training hyperparameters.
#[derive(Clone, Copy, Debug, serde::Serialize, serde::Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub optimizer: OptimizerKind,
    pub ste_clip: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.05,
            batch_size: 8,
            epochs: 50,
            seed: 1,
            optimizer: OptimizerKind::Momentum(0.9),
            ste_clip: 1.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.learning_rate < 0.0 || !self.learning_rate.is_finite() {
            return Err(Error::InvalidParameter("learning rate must be finite and >= 0".into()));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::InvalidParameter("batch size and epochs must be >= 1".into()));
        }
        if self.ste_clip <= 0.0 {
            return Err(Error::InvalidParameter("STE clip bound must be > 0".into()));
        }
        Ok(())
    }
}

/// Small labeled image set for training smoke tests.
#[derive(Clone, Debug)]
pub struct ToyDataset<R> {
    pub images: Vec<FloatTensor<R>>,
    pub labels: Vec<usize>,
    pub classes: usize,
}

impl<R: Real> ToyDataset<R> {
    pub fn new(images: Vec<FloatTensor<R>>, labels: Vec<usize>, classes: usize) -> Result<Self> {
        if classes < 2 {
            return Err(Error::InvalidParameter("need at least 2 classes".into()));
        }
        if images.is_empty() || images.len() != labels.len() {
            return Err(Error::LengthMismatch("images and labels must align".into()));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::InvalidParameter(format!("label {bad} out of range")));
        }
        Ok(Self { images, labels, classes })
    }

    /// Two linearly separable classes: a colored blob on a noisy
    /// background, red-dominant for class 0 and blue-dominant for
    /// class 1.
    pub fn two_class_blobs(n_per_class: usize, height: usize, width: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let shape = TensorShape { height, width, channels: 3 };
        let mut images = Vec::with_capacity(2 * n_per_class);
        let mut labels = Vec::with_capacity(2 * n_per_class);
        for i in 0..2 * n_per_class {
            let class = i % 2;
            let cy = rng.random_range(0..height) as f64;
            let cx = rng.random_range(0..width) as f64;
            let radius = (height.min(width) as f64 / 3.0).max(1.5);
            let noise: Vec<f64> =
                (0..shape.element_count()).map(|_| rng.random::<f64>() * 0.25).collect();
            let img = FloatTensor::from_fn(shape, |y, x, c| {
                let mut v = noise[(y * width + x) * 3 + c];
                let dist = ((y as f64 - cy).powi(2) + (x as f64 - cx).powi(2)).sqrt();
                let blob_channel = if class == 0 { 0 } else { 2 };
                if dist <= radius && c == blob_channel {
                    v += 0.75;
                }
                real(v.min(1.0))
            });
            images.push(img);
            labels.push(class);
        }
        Self { images, labels, classes: 2 }
    }
}

/// Build a trainable stack for `spec` plus a dense classifier head.
/// Returns the net and, per spec layer, how many train layers realize it
/// (the head's flatten+dense are appended after the last group).
pub fn build_trainable<R: Real>(
    spec: &NetworkSpec,
    classes: usize,
    mode: BinaryMode,
    clip: f64,
    seed: u64,
) -> Result<(TrainNet<R>, Vec<usize>)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let clip_r: R = real(clip);
    let mut layers: Vec<TrainLayer<R>> = Vec::new();
    let mut groups = Vec::with_capacity(spec.layers.len());
    let mut input = spec.input;

    for ls in &spec.layers {
        let before = layers.len();
        match *ls {
            LayerSpec::StandardConv { kernel, stride, padding, out_channels, bias } => {
                let cs = ConvSpec {
                    kernel,
                    stride,
                    padding,
                    in_channels: input.channels,
                    out_channels,
                    bias,
                };
                let w =
                    ConvWeights::random(kernel, input.channels, out_channels, &mut rng, -1.0, 1.0);
                layers.push(TrainLayer::Conv(ConvLayer::new(
                    cs,
                    w,
                    bias.then(|| vec![R::zero(); out_channels]),
                )?));
            }
            LayerSpec::Hbds(h) => {
                let hidden = input.channels * h.depth_multiplier;
                let ds = DepthwiseSpec {
                    kernel: h.kernel,
                    stride: h.stride,
                    padding: 0,
                    depth_multiplier: h.depth_multiplier,
                    bias: true,
                };
                let dw = DepthwiseWeights::random(
                    h.kernel,
                    input.channels,
                    h.depth_multiplier,
                    &mut rng,
                    -1.0,
                    1.0,
                );
                layers.push(TrainLayer::Depthwise(DepthwiseLayer::new(
                    ds,
                    dw,
                    vec![R::zero(); hidden],
                )?));
                layers.push(TrainLayer::BatchNorm(BatchNormLayer::new(hidden)));
                layers.push(TrainLayer::Binarize(BinarizeLayer::new(mode, clip_r)));
                let pw = ConvSpec {
                    kernel: 1,
                    stride: 1,
                    padding: 0,
                    in_channels: hidden,
                    out_channels: h.out_channels,
                    bias: false,
                };
                let latent = ConvWeights::random(1, hidden, h.out_channels, &mut rng, -1.0, 1.0);
                layers.push(TrainLayer::BinaryConv(BinaryConvSteLayer::new(
                    pw, latent, mode, clip_r,
                )?));
            }
            LayerSpec::BinaryConv { kernel, stride, padding, out_channels } => {
                layers.push(TrainLayer::BatchNorm(BatchNormLayer::new(input.channels)));
                layers.push(TrainLayer::Binarize(BinarizeLayer::new(mode, clip_r)));
                let cs = ConvSpec {
                    kernel,
                    stride,
                    padding,
                    in_channels: input.channels,
                    out_channels,
                    bias: false,
                };
                let latent =
                    ConvWeights::random(kernel, input.channels, out_channels, &mut rng, -1.0, 1.0);
                layers.push(TrainLayer::BinaryConv(BinaryConvSteLayer::new(
                    cs, latent, mode, clip_r,
                )?));
            }
            LayerSpec::MaxPool { kernel, stride } => {
                layers.push(TrainLayer::MaxPool(MaxPoolLayer::new(kernel, stride)));
            }
        }
        groups.push(layers.len() - before);
        input = ls.output_shape(&input)?;
    }

    // classifier head (training only)
    let feat = spec.layer_shapes()?.last().expect("validated").element_count();
    let scale = (1.0 / feat as f64).sqrt();
    let w: Vec<R> =
        (0..feat * classes).map(|_| real(rng.random::<f64>() * 2.0 * scale - scale)).collect();
    layers.push(TrainLayer::Flatten(FlattenLayer::new()));
    layers.push(TrainLayer::Dense(DenseLayer::new(feat, classes, w, vec![R::zero(); classes])?));

    Ok((TrainNet::new(layers), groups))
}

/// Export a trained stack back into an inference [`Network`], dropping
/// the classifier head. Batchnorm uses its running statistics; latent
/// binary weights are binarized once.
pub fn export_network<R: Real>(
    spec: &NetworkSpec,
    net: &TrainNet<R>,
    groups: &[usize],
) -> Result<Network<R>> {
    let mut out_layers: Vec<Layer<R>> = Vec::with_capacity(spec.layers.len());
    let mut cursor = 0usize;
    let mut input = spec.input;
    for (ls, &len) in spec.layers.iter().zip(groups) {
        let slice = &net.layers[cursor..cursor + len];
        cursor += len;
        let layer = match (*ls, slice) {
            (
                LayerSpec::StandardConv { kernel, stride, padding, out_channels, bias },
                [TrainLayer::Conv(c)],
            ) => Layer::Standard {
                spec: ConvSpec {
                    kernel,
                    stride,
                    padding,
                    in_channels: input.channels,
                    out_channels,
                    bias,
                },
                weights: c.weights.clone(),
                bias: c.bias.clone(),
            },
            (
                LayerSpec::Hbds(h),
                [TrainLayer::Depthwise(dw), TrainLayer::BatchNorm(bn), TrainLayer::Binarize(_), TrainLayer::BinaryConv(pw)],
            ) => Layer::Hbds(HbdsModule::new(
                h,
                dw.weights.clone(),
                dw.bias.clone(),
                bn_params(bn)?,
                BinaryConvWeights::binarize(&pw.latent),
            )?),
            (
                LayerSpec::BinaryConv { stride, padding, .. },
                [TrainLayer::BatchNorm(bn), TrainLayer::Binarize(_), TrainLayer::BinaryConv(bc)],
            ) => Layer::Binary(BinaryConvLayer::new(
                stride,
                padding,
                bn_params(bn)?,
                BinaryConvWeights::binarize(&bc.latent),
            )?),
            (LayerSpec::MaxPool { kernel, stride }, [TrainLayer::MaxPool(_)]) => {
                Layer::MaxPool { kernel, stride }
            }
            _ => {
                return Err(Error::InvalidParameter(
                    "trained stack does not line up with the spec".into(),
                ))
            }
        };
        out_layers.push(layer);
        input = ls.output_shape(&input)?;
    }
    Network::from_layers(spec.clone(), out_layers)
}

fn bn_params<R: Real>(bn: &BatchNormLayer<R>) -> Result<BatchNormParams<R>> {
    BatchNormParams::new(
        bn.gamma.clone(),
        bn.beta.clone(),
        bn.running_mean.clone(),
        bn.running_var.clone(),
        bn.epsilon,
    )
}

/// Loss history and final training accuracy.
#[derive(Clone, Debug)]
pub struct TrainReport {
    pub epoch_losses: Vec<f64>,
    pub train_accuracy: f64,
}

/// Train a network on a toy dataset; returns the inference network
/// (head discarded) plus the loss history.
pub fn train_toy<R: Real>(
    spec: &NetworkSpec,
    data: &ToyDataset<R>,
    cfg: &TrainConfig,
) -> Result<(Network<R>, TrainReport)> {
    cfg.validate()?;
    if data.images[0].shape() != &spec.input {
        return Err(Error::ShapeMismatch(format!(
            "dataset images are {}, network expects {}",
            data.images[0].shape(),
            spec.input
        )));
    }
    let (mut net, groups) =
        build_trainable::<R>(spec, data.classes, BinaryMode::Ste, cfg.ste_clip, cfg.seed)?;
    let mut optimizer = Optimizer::new(cfg.optimizer, cfg.learning_rate);
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(0x9e3779b9));

    let n = data.images.len();
    let mut order: Vec<usize> = (0..n).collect();
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        // Fisher-Yates with the dedicated stream keeps runs reproducible
        for i in (1..n).rev() {
            let j = shuffle_rng.random_range(0..=i);
            order.swap(i, j);
        }
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<FloatTensor<R>> =
                chunk.iter().map(|&i| data.images[i].clone()).collect();
            let labels: Vec<usize> = chunk.iter().map(|&i| data.labels[i]).collect();

            net.zero_grads();
            let logits = net.forward(&batch, true)?;
            let scale: R = real(1.0 / chunk.len() as f64);
            let mut grads = Vec::with_capacity(chunk.len());
            for (out, &label) in logits.iter().zip(&labels) {
                let (loss, grad) = softmax_cross_entropy(out.data(), label);
                if !loss.is_finite() {
                    return Err(Error::Divergence(format!("NaN loss at epoch {epoch}")));
                }
                epoch_loss += loss;
                grads.push(FloatTensor::new(
                    *out.shape(),
                    grad.into_iter().map(|g| g * scale).collect(),
                )?);
            }
            net.backward(&grads)?;
            optimizer.step(&mut net);
        }
        epoch_losses.push(epoch_loss / n as f64);
    }

    // evaluation pass with running statistics
    let mut correct = 0usize;
    for (img, &label) in data.images.iter().zip(&data.labels) {
        let logits = net.forward(&vec![img.clone()], false)?;
        let pred = argmax(logits[0].data());
        correct += usize::from(pred == label);
    }
    let report = TrainReport {
        epoch_losses,
        train_accuracy: correct as f64 / n as f64,
    };
    let network = export_network(spec, &net, &groups)?;
    Ok((network, report))
}

fn argmax<R: Real>(v: &[R]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

/// Mean cross-entropy of the stack on one batch (training-mode forward).
pub fn batch_loss<R: Real>(
    net: &mut TrainNet<R>,
    batch: &[FloatTensor<R>],
    labels: &[usize],
) -> Result<f64> {
    let logits = net.forward(&batch.to_vec(), true)?;
    let mut total = 0.0;
    for (out, &label) in logits.iter().zip(labels) {
        total += softmax_cross_entropy(out.data(), label).0;
    }
    Ok(total / batch.len() as f64)
}

/// Compare analytic gradients against central differences on up to
/// `samples` randomly chosen parameters; returns the maximum relative
/// error. The net should be built in [`BinaryMode::Surrogate`] so every
/// path is differentiable.
pub fn gradient_check<R: Real>(
    net: &mut TrainNet<R>,
    batch: &[FloatTensor<R>],
    labels: &[usize],
    samples: usize,
    seed: u64,
) -> Result<f64> {
    // analytic pass
    net.zero_grads();
    let logits = net.forward(&batch.to_vec(), true)?;
    let scale: R = real(1.0 / batch.len() as f64);
    let mut grads = Vec::with_capacity(batch.len());
    for (out, &label) in logits.iter().zip(labels) {
        let (_, grad) = softmax_cross_entropy(out.data(), label);
        grads.push(FloatTensor::new(
            *out.shape(),
            grad.into_iter().map(|g| g * scale).collect(),
        )?);
    }
    net.backward(&grads)?;

    let analytic: Vec<Vec<f64>> = net
        .param_groups()
        .iter()
        .map(|g| g.grads.iter().map(|v| v.to_f64().expect("finite")).collect())
        .collect();
    let sizes: Vec<usize> = analytic.iter().map(Vec::len).collect();
    let total: usize = sizes.iter().sum();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let count = samples.min(total);
    let picked = rand::seq::index::sample(&mut rng, total, count);

    let mut max_rel = 0.0f64;
    for flat in picked {
        // locate (group, offset)
        let mut group = 0;
        let mut offset = flat;
        while offset >= sizes[group] {
            offset -= sizes[group];
            group += 1;
        }
        let original = read_param(net, group, offset);
        let h = 1e-5 * original.abs().max(1.0);

        write_param(net, group, offset, original + h);
        let loss_plus = batch_loss(net, batch, labels)?;
        write_param(net, group, offset, original - h);
        let loss_minus = batch_loss(net, batch, labels)?;
        write_param(net, group, offset, original);

        let numeric = (loss_plus - loss_minus) / (2.0 * h);
        let exact = analytic[group][offset];
        let rel = (numeric - exact).abs() / numeric.abs().max(exact.abs()).max(1e-6);
        max_rel = max_rel.max(rel);
    }
    Ok(max_rel)
}

fn read_param<R: Real>(net: &mut TrainNet<R>, group: usize, offset: usize) -> f64 {
    net.param_groups()[group].values[offset].to_f64().expect("finite")
}

fn write_param<R: Real>(net: &mut TrainNet<R>, group: usize, offset: usize, value: f64) {
    net.param_groups()[group].values[offset] = real(value);
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hbds::{FirstStage, ForwardOptions, HBDSSpec};

    fn toy_spec() -> NetworkSpec {
        NetworkSpec {
            input: TensorShape { height: 16, width: 16, channels: 3 },
            layers: vec![
                LayerSpec::Hbds(HBDSSpec {
                    kernel: 5,
                    stride: 2,
                    out_channels: 8,
                    depth_multiplier: 2,
                }),
                LayerSpec::MaxPool { kernel: 2, stride: 2 },
            ],
            tap: 1,
        }
    }

    #[test]
    fn ste_is_clipped_identity() {
        assert_eq!(ste_backward(0.5f64, 2.0, 1.0), 2.0);
        assert_eq!(ste_backward(1.0f64, 2.0, 1.0), 2.0); // boundary included
        assert_eq!(ste_backward(1.5f64, 2.0, 1.0), 0.0);
        assert_eq!(ste_backward(-0.99f64, -3.0, 1.0), -3.0);
        assert_eq!(ste_backward(-1.01f64, -3.0, 1.0), 0.0);
        assert_eq!(ste_forward(0.0f64), 1.0);
        assert_eq!(ste_forward(-0.0f64), 1.0);
        assert_eq!(ste_forward(-2.0f64), -1.0);
    }

    #[test]
    fn ste_matches_hardtanh_finite_difference_inside_clip() {
        let h = 1e-6;
        let hardtanh = |x: f64| x.clamp(-1.0, 1.0);
        for &x in &[-0.9, -0.3, 0.0, 0.42, 0.95] {
            let numeric = (hardtanh(x + h) - hardtanh(x - h)) / (2.0 * h);
            let ste = ste_backward(x, 1.0, 1.0);
            assert!((numeric - ste).abs() < 1e-4, "x={x}");
        }
        for &x in &[-1.5, 1.5, 3.0] {
            let numeric = (hardtanh(x + h) - hardtanh(x - h)) / (2.0 * h);
            assert_eq!(numeric, 0.0);
            assert_eq!(ste_backward(x, 1.0, 1.0), 0.0);
        }
    }

    #[test]
    fn gradient_check_float_conv_net() {
        // single float conv + head
        let spec = NetworkSpec {
            input: TensorShape { height: 6, width: 6, channels: 2 },
            layers: vec![LayerSpec::StandardConv {
                kernel: 3,
                stride: 1,
                padding: 1,
                out_channels: 4,
                bias: true,
            }],
            tap: 0,
        };
        let (mut net, _) =
            build_trainable::<f64>(&spec, 3, BinaryMode::Surrogate, 1.0, 7).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let batch: Vec<_> =
            (0..3).map(|_| FloatTensor::<f64>::random(spec.input, &mut rng, -1.0, 1.0)).collect();
        let err = gradient_check(&mut net, &batch, &[0, 1, 2], 60, 99).unwrap();
        assert!(err < 1e-4, "max relative error {err}");
    }

    #[test]
    fn gradient_check_depthwise_bn_stack() {
        let spec = toy_spec();
        let (mut net, _) =
            build_trainable::<f64>(&spec, 2, BinaryMode::Surrogate, 1.0, 17).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(18);
        let batch: Vec<_> =
            (0..4).map(|_| FloatTensor::<f64>::random(spec.input, &mut rng, -1.0, 1.0)).collect();
        let err = gradient_check(&mut net, &batch, &[0, 1, 0, 1], 80, 3).unwrap();
        assert!(err < 1e-4, "max relative error {err}");
    }

    #[test]
    fn gradient_check_frozen_params_are_zero() {
        // zero upstream -> zero gradient everywhere, finite differences agree
        let spec = toy_spec();
        let (mut net, _) =
            build_trainable::<f64>(&spec, 2, BinaryMode::Surrogate, 1.0, 5).unwrap();
        net.zero_grads();
        for g in net.param_groups() {
            assert!(g.grads.iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn zero_learning_rate_leaves_parameters_unchanged() {
        let data = ToyDataset::<f64>::two_class_blobs(4, 16, 16, 3);
        let spec = toy_spec();
        let (mut net, _) = build_trainable::<f64>(&spec, 2, BinaryMode::Ste, 1.0, 11).unwrap();
        let before: Vec<Vec<f64>> =
            net.param_groups().iter().map(|g| g.values.to_vec()).collect();

        let mut opt = Optimizer::new(OptimizerKind::Sgd, 0.0);
        net.zero_grads();
        let logits = net.forward(&data.images[..4].to_vec(), true).unwrap();
        let grads: Vec<_> = logits
            .iter()
            .zip(&data.labels[..4])
            .map(|(out, &l)| {
                let (_, g) = softmax_cross_entropy(out.data(), l);
                FloatTensor::new(*out.shape(), g).unwrap()
            })
            .collect();
        net.backward(&grads).unwrap();
        opt.step(&mut net);

        let after: Vec<Vec<f64>> =
            net.param_groups().iter().map(|g| g.values.to_vec()).collect();
        assert_eq!(before, after);
    }

    #[test]
    fn training_is_deterministic_per_seed() {
        let data = ToyDataset::<f64>::two_class_blobs(6, 16, 16, 21);
        let spec = toy_spec();
        let cfg = TrainConfig { epochs: 3, seed: 42, ..TrainConfig::default() };
        let (net_a, rep_a) = train_toy(&spec, &data, &cfg).unwrap();
        let (net_b, rep_b) = train_toy(&spec, &data, &cfg).unwrap();
        assert_eq!(rep_a.epoch_losses, rep_b.epoch_losses);

        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = FloatTensor::<f64>::random(spec.input, &mut rng, 0.0, 1.0);
        let da = net_a.descriptor(&x, &ForwardOptions::default()).unwrap();
        let db = net_b.descriptor(&x, &ForwardOptions::default()).unwrap();
        assert_eq!(da, db);
    }

    #[test]
    fn repeated_batch_loss_mostly_non_increasing() {
        let data = ToyDataset::<f64>::two_class_blobs(4, 16, 16, 31);
        let spec = toy_spec();
        let (mut net, _) = build_trainable::<f64>(&spec, 2, BinaryMode::Ste, 1.0, 31).unwrap();
        let mut opt = Optimizer::new(OptimizerKind::Sgd, 1e-3);
        let batch = data.images.clone();
        let labels = data.labels.clone();

        let mut losses = Vec::new();
        for _ in 0..50 {
            net.zero_grads();
            let logits = net.forward(&batch, true).unwrap();
            let scale = 1.0 / batch.len() as f64;
            let mut total = 0.0;
            let grads: Vec<_> = logits
                .iter()
                .zip(&labels)
                .map(|(out, &l)| {
                    let (loss, g) = softmax_cross_entropy(out.data(), l);
                    total += loss;
                    FloatTensor::new(
                        *out.shape(),
                        g.into_iter().map(|v| v * scale).collect(),
                    )
                    .unwrap()
                })
                .collect();
            losses.push(total * scale);
            net.backward(&grads).unwrap();
            opt.step(&mut net);
        }
        let decreases =
            losses.windows(2).filter(|w| w[1] <= w[0] + 1e-12).count();
        assert!(
            decreases as f64 >= 0.9 * (losses.len() - 1) as f64,
            "only {decreases}/{} steps decreased",
            losses.len() - 1
        );
    }

    #[test]
    fn toy_training_reaches_target_accuracy() {
        let data = ToyDataset::<f64>::two_class_blobs(8, 16, 16, 5);
        let spec = toy_spec();
        let cfg = TrainConfig { epochs: 25, seed: 9, ..TrainConfig::default() };
        let (_, report) = train_toy(&spec, &data, &cfg).unwrap();
        assert!(
            report.train_accuracy >= 0.95,
            "accuracy {} after {} epochs",
            report.train_accuracy,
            cfg.epochs
        );
        // moving-average loss should not increase over training
        let k = report.epoch_losses.len() / 3;
        let head: f64 = report.epoch_losses[..k].iter().sum::<f64>() / k as f64;
        let tail: f64 =
            report.epoch_losses[report.epoch_losses.len() - k..].iter().sum::<f64>() / k as f64;
        assert!(tail <= head, "loss rose: head {head}, tail {tail}");
    }

    #[test]
    fn dataset_validation() {
        assert!(ToyDataset::<f64>::new(vec![], vec![], 2).is_err());
        let img = FloatTensor::<f64>::zeros(TensorShape { height: 2, width: 2, channels: 3 });
        assert!(ToyDataset::new(vec![img.clone()], vec![2], 2).is_err());
        assert!(ToyDataset::new(vec![img.clone()], vec![0], 1).is_err());
        assert!(ToyDataset::new(vec![img], vec![0], 2).is_ok());
    }

    #[test]
    fn standard_conv_spec_also_trains() {
        let spec = NetworkSpec {
            input: TensorShape { height: 12, width: 12, channels: 3 },
            layers: vec![
                LayerSpec::StandardConv {
                    kernel: 3,
                    stride: 2,
                    padding: 0,
                    out_channels: 6,
                    bias: false,
                },
                LayerSpec::MaxPool { kernel: 2, stride: 2 },
                LayerSpec::BinaryConv { kernel: 1, stride: 1, padding: 0, out_channels: 4 },
            ],
            tap: 2,
        };
        let data = ToyDataset::<f64>::two_class_blobs(4, 12, 12, 77);
        let cfg = TrainConfig { epochs: 2, ..TrainConfig::default() };
        let (net, report) = train_toy(&spec, &data, &cfg).unwrap();
        assert_eq!(report.epoch_losses.len(), 2);
        assert_eq!(net.spec().layers.len(), 3);
    }
}
