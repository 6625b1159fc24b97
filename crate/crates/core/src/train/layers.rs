//! Trainable layer stack with manual backpropagation.
//!
//! Training operates on batches of rank-3 tensors. Binary pieces keep
//! full-precision latent weights; the forward pass always sees their
//! binarization and gradients flow through the straight-through
//! estimator. Every binarization point can be switched to a `hardtanh`
//! surrogate, which makes the whole stack differentiable for finite
//! difference checks.

use crate::error::{Error, Result};
use crate::ops::{conv2d, depthwise_conv2d, ConvSpec, ConvWeights, DepthwiseSpec, DepthwiseWeights};
use crate::scalar::{real, Real};
use crate::tensor::{FloatTensor, TensorShape};

/// How non-differentiable sign points behave.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BinaryMode {
    /// Forward `sign`, backward clipped identity.
    Ste,
    /// Forward `hardtanh`, backward its exact derivative. Used to make
    /// finite-difference gradient checks meaningful.
    Surrogate,
}

/// One optimizable parameter block with its gradient and an optional
/// post-update clamp (latent binary weights stay in `[-clip, clip]`).
pub struct ParamGroup<'a, R> {
    pub values: &'a mut [R],
    pub grads: &'a [R],
    pub clamp: Option<R>,
}

type Batch<R> = Vec<FloatTensor<R>>;

// ── full-precision convolution ───────────────────────────────────────

pub struct ConvLayer<R> {
    spec: ConvSpec,
    pub weights: ConvWeights<R>,
    pub bias: Option<Vec<R>>,
    grad_w: Vec<R>,
    grad_b: Vec<R>,
    input: Batch<R>,
}

impl<R: Real> ConvLayer<R> {
    pub fn new(spec: ConvSpec, weights: ConvWeights<R>, bias: Option<Vec<R>>) -> Result<Self> {
        if bias.is_some() != spec.bias {
            return Err(Error::InvalidParameter("bias presence must match spec".into()));
        }
        let n = weights.data().len();
        Ok(Self { spec, weights, bias, grad_w: vec![R::zero(); n], grad_b: Vec::new(), input: Vec::new() })
    }

    fn forward(&mut self, batch: &Batch<R>) -> Result<Batch<R>> {
        self.input = batch.clone();
        batch.iter().map(|x| conv2d(x, &self.weights, self.bias.as_deref(), &self.spec)).collect()
    }

    fn backward(&mut self, grads: &Batch<R>) -> Result<Batch<R>> {
        if self.grad_b.len() != self.spec.out_channels {
            self.grad_b = vec![R::zero(); self.spec.out_channels];
        }
        let mut out = Vec::with_capacity(grads.len());
        for (x, dy) in self.input.iter().zip(grads) {
            let mut dx = FloatTensor::zeros(*x.shape());
            conv_grads(
                x,
                &self.weights,
                &self.spec,
                dy,
                &mut self.grad_w,
                self.bias.is_some().then_some(&mut self.grad_b),
                &mut dx,
            );
            out.push(dx);
        }
        Ok(out)
    }

    fn zero_grads(&mut self) {
        self.grad_w.iter_mut().for_each(|g| *g = R::zero());
        self.grad_b.iter_mut().for_each(|g| *g = R::zero());
    }

    fn params(&mut self) -> Vec<ParamGroup<'_, R>> {
        let mut groups = vec![ParamGroup {
            values: self.weights.data_mut(),
            grads: &self.grad_w,
            clamp: None,
        }];
        if let Some(b) = self.bias.as_mut() {
            if self.grad_b.len() == b.len() {
                groups.push(ParamGroup { values: b, grads: &self.grad_b, clamp: None });
            }
        }
        groups
    }
}

/// Accumulate weight/bias gradients and the input gradient of one
/// sample's standard convolution.
fn conv_grads<R: Real>(
    x: &FloatTensor<R>,
    w: &ConvWeights<R>,
    spec: &ConvSpec,
    dy: &FloatTensor<R>,
    grad_w: &mut [R],
    mut grad_b: Option<&mut Vec<R>>,
    dx: &mut FloatTensor<R>,
) {
    let (h_i, w_i, c_i) = (x.shape().height, x.shape().width, x.shape().channels);
    let (k, s, p, c_o) = (spec.kernel, spec.stride, spec.padding, spec.out_channels);
    for oy in 0..dy.shape().height {
        for ox in 0..dy.shape().width {
            for oc in 0..c_o {
                let g = dy.get(oy, ox, oc);
                if let Some(gb) = grad_b.as_deref_mut() {
                    gb[oc] += g;
                }
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
                        let (iy, ix) = (iy as usize, ix as usize);
                        for ci in 0..c_i {
                            let widx = ((ky * k + kx) * c_i + ci) * c_o + oc;
                            grad_w[widx] += x.get(iy, ix, ci) * g;
                            let dv = dx.get(iy, ix, ci) + w.get(ky, kx, ci, oc) * g;
                            dx.set(iy, ix, ci, dv);
                        }
                    }
                }
            }
        }
    }
}

// ── depthwise convolution ────────────────────────────────────────────

pub struct DepthwiseLayer<R> {
    spec: DepthwiseSpec,
    pub weights: DepthwiseWeights<R>,
    pub bias: Vec<R>,
    grad_w: Vec<R>,
    grad_b: Vec<R>,
    input: Batch<R>,
}

impl<R: Real> DepthwiseLayer<R> {
    pub fn new(spec: DepthwiseSpec, weights: DepthwiseWeights<R>, bias: Vec<R>) -> Result<Self> {
        if !spec.bias {
            return Err(Error::InvalidParameter("depthwise training layer carries a bias".into()));
        }
        let n = weights.data().len();
        let nb = bias.len();
        Ok(Self {
            spec,
            weights,
            bias,
            grad_w: vec![R::zero(); n],
            grad_b: vec![R::zero(); nb],
            input: Vec::new(),
        })
    }

    fn forward(&mut self, batch: &Batch<R>) -> Result<Batch<R>> {
        self.input = batch.clone();
        batch
            .iter()
            .map(|x| depthwise_conv2d(x, &self.weights, Some(&self.bias), &self.spec))
            .collect()
    }

    fn backward(&mut self, grads: &Batch<R>) -> Result<Batch<R>> {
        let (k, s, p, d) =
            (self.spec.kernel, self.spec.stride, self.spec.padding, self.spec.depth_multiplier);
        let mut out = Vec::with_capacity(grads.len());
        for (x, dy) in self.input.iter().zip(grads) {
            let (h_i, w_i, c_i) = (x.shape().height, x.shape().width, x.shape().channels);
            let mut dx = FloatTensor::zeros(*x.shape());
            for oy in 0..dy.shape().height {
                for ox in 0..dy.shape().width {
                    for ci in 0..c_i {
                        for m in 0..d {
                            let g = dy.get(oy, ox, ci * d + m);
                            self.grad_b[ci * d + m] += g;
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
                                    let (iy, ix) = (iy as usize, ix as usize);
                                    let widx = ((ky * k + kx) * c_i + ci) * d + m;
                                    self.grad_w[widx] += x.get(iy, ix, ci) * g;
                                    let dv =
                                        dx.get(iy, ix, ci) + self.weights.get(ky, kx, ci, m) * g;
                                    dx.set(iy, ix, ci, dv);
                                }
                            }
                        }
                    }
                }
            }
            out.push(dx);
        }
        Ok(out)
    }

    fn zero_grads(&mut self) {
        self.grad_w.iter_mut().for_each(|g| *g = R::zero());
        self.grad_b.iter_mut().for_each(|g| *g = R::zero());
    }

    fn params(&mut self) -> Vec<ParamGroup<'_, R>> {
        vec![
            ParamGroup { values: self.weights.data_mut(), grads: &self.grad_w, clamp: None },
            ParamGroup { values: &mut self.bias, grads: &self.grad_b, clamp: None },
        ]
    }
}

// ── batch normalization ──────────────────────────────────────────────

pub struct BatchNormLayer<R> {
    pub gamma: Vec<R>,
    pub beta: Vec<R>,
    pub running_mean: Vec<R>,
    pub running_var: Vec<R>,
    pub epsilon: R,
    momentum: R,
    grad_gamma: Vec<R>,
    grad_beta: Vec<R>,
    x_hat: Batch<R>,
    inv_std: Vec<R>,
    batch_elems: usize,
}

impl<R: Real> BatchNormLayer<R> {
    pub fn new(channels: usize) -> Self {
        Self {
            gamma: vec![R::one(); channels],
            beta: vec![R::zero(); channels],
            running_mean: vec![R::zero(); channels],
            running_var: vec![R::one(); channels],
            epsilon: real(1e-5),
            momentum: real(0.9),
            grad_gamma: vec![R::zero(); channels],
            grad_beta: vec![R::zero(); channels],
            x_hat: Vec::new(),
            inv_std: Vec::new(),
            batch_elems: 0,
        }
    }

    fn channels(&self) -> usize {
        self.gamma.len()
    }

    fn forward(&mut self, batch: &Batch<R>, training: bool) -> Result<Batch<R>> {
        let c = self.channels();
        let first = batch.first().ok_or_else(|| {
            Error::InvalidParameter("batchnorm needs a non-empty batch".into())
        })?;
        if first.shape().channels != c {
            return Err(Error::ShapeMismatch(format!(
                "batchnorm over {c} channels fed {} channels",
                first.shape().channels
            )));
        }

        if !training {
            let scale: Vec<R> = (0..c)
                .map(|i| self.gamma[i] / (self.running_var[i] + self.epsilon).sqrt())
                .collect();
            return Ok(batch
                .iter()
                .map(|x| {
                    FloatTensor::from_fn(*x.shape(), |y, xx, ch| {
                        scale[ch] * (x.get(y, xx, ch) - self.running_mean[ch]) + self.beta[ch]
                    })
                })
                .collect());
        }

        // per-channel statistics over batch * height * width
        let m = batch.iter().map(|x| x.shape().height * x.shape().width).sum::<usize>();
        let m_r: R = real(m as f64);
        let mut mean = vec![R::zero(); c];
        for x in batch {
            for (i, v) in x.data().iter().enumerate() {
                mean[i % c] += *v;
            }
        }
        mean.iter_mut().for_each(|v| *v /= m_r);
        let mut var = vec![R::zero(); c];
        for x in batch {
            for (i, v) in x.data().iter().enumerate() {
                let d = *v - mean[i % c];
                var[i % c] += d * d;
            }
        }
        var.iter_mut().for_each(|v| *v /= m_r);

        self.inv_std = (0..c).map(|i| R::one() / (var[i] + self.epsilon).sqrt()).collect();
        self.batch_elems = m;
        for i in 0..c {
            self.running_mean[i] =
                self.momentum * self.running_mean[i] + (R::one() - self.momentum) * mean[i];
            self.running_var[i] =
                self.momentum * self.running_var[i] + (R::one() - self.momentum) * var[i];
        }

        self.x_hat = batch
            .iter()
            .map(|x| {
                FloatTensor::from_fn(*x.shape(), |y, xx, ch| {
                    (x.get(y, xx, ch) - mean[ch]) * self.inv_std[ch]
                })
            })
            .collect();
        Ok(self
            .x_hat
            .iter()
            .map(|xh| {
                FloatTensor::from_fn(*xh.shape(), |y, xx, ch| {
                    self.gamma[ch] * xh.get(y, xx, ch) + self.beta[ch]
                })
            })
            .collect())
    }

    fn backward(&mut self, grads: &Batch<R>) -> Result<Batch<R>> {
        let c = self.channels();
        let m: R = real(self.batch_elems as f64);
        let mut sum_dy = vec![R::zero(); c];
        let mut sum_dy_xhat = vec![R::zero(); c];
        for (dy, xh) in grads.iter().zip(&self.x_hat) {
            for (i, (g, h)) in dy.data().iter().zip(xh.data()).enumerate() {
                sum_dy[i % c] += *g;
                sum_dy_xhat[i % c] += *g * *h;
            }
        }
        for ch in 0..c {
            self.grad_gamma[ch] += sum_dy_xhat[ch];
            self.grad_beta[ch] += sum_dy[ch];
        }
        let out = grads
            .iter()
            .zip(&self.x_hat)
            .map(|(dy, xh)| {
                FloatTensor::from_fn(*dy.shape(), |y, xx, ch| {
                    self.gamma[ch] * self.inv_std[ch]
                        * (dy.get(y, xx, ch)
                            - sum_dy[ch] / m
                            - xh.get(y, xx, ch) * sum_dy_xhat[ch] / m)
                })
            })
            .collect();
        Ok(out)
    }

    fn zero_grads(&mut self) {
        self.grad_gamma.iter_mut().for_each(|g| *g = R::zero());
        self.grad_beta.iter_mut().for_each(|g| *g = R::zero());
    }

    fn params(&mut self) -> Vec<ParamGroup<'_, R>> {
        vec![
            ParamGroup { values: &mut self.gamma, grads: &self.grad_gamma, clamp: None },
            ParamGroup { values: &mut self.beta, grads: &self.grad_beta, clamp: None },
        ]
    }
}

// ── sign / hardtanh activation ───────────────────────────────────────

pub struct BinarizeLayer<R> {
    mode: BinaryMode,
    clip: R,
    input: Batch<R>,
}

impl<R: Real> BinarizeLayer<R> {
    pub fn new(mode: BinaryMode, clip: R) -> Self {
        Self { mode, clip, input: Vec::new() }
    }

    fn forward(&mut self, batch: &Batch<R>) -> Batch<R> {
        self.input = batch.clone();
        batch
            .iter()
            .map(|x| match self.mode {
                BinaryMode::Ste => {
                    x.map(|v| if v >= R::zero() { R::one() } else { -R::one() })
                }
                BinaryMode::Surrogate => x.map(|v| v.max(-R::one()).min(R::one())),
            })
            .collect()
    }

    fn backward(&self, grads: &Batch<R>) -> Batch<R> {
        grads
            .iter()
            .zip(&self.input)
            .map(|(dy, x)| {
                FloatTensor::from_fn(*dy.shape(), |y, xx, c| {
                    let v = x.get(y, xx, c);
                    let pass = match self.mode {
                        BinaryMode::Ste => v.abs() <= self.clip,
                        BinaryMode::Surrogate => v.abs() < R::one(),
                    };
                    if pass {
                        dy.get(y, xx, c)
                    } else {
                        R::zero()
                    }
                })
            })
            .collect()
    }
}

// ── binary convolution with latent weights ───────────────────────────

pub struct BinaryConvSteLayer<R> {
    spec: ConvSpec,
    pub latent: ConvWeights<R>,
    mode: BinaryMode,
    clip: R,
    grad_latent: Vec<R>,
    effective: Option<ConvWeights<R>>,
    input: Batch<R>,
}

impl<R: Real> BinaryConvSteLayer<R> {
    pub fn new(spec: ConvSpec, latent: ConvWeights<R>, mode: BinaryMode, clip: R) -> Result<Self> {
        if spec.bias {
            return Err(Error::InvalidParameter("binary convolutions do not use bias".into()));
        }
        let n = latent.data().len();
        Ok(Self {
            spec,
            latent,
            mode,
            clip,
            grad_latent: vec![R::zero(); n],
            effective: None,
            input: Vec::new(),
        })
    }

    fn effective_weights(&self) -> ConvWeights<R> {
        let f = |v: R| match self.mode {
            BinaryMode::Ste => {
                if v >= R::zero() {
                    R::one()
                } else {
                    -R::one()
                }
            }
            BinaryMode::Surrogate => v.max(-R::one()).min(R::one()),
        };
        ConvWeights::new(
            self.latent.kernel(),
            self.latent.in_channels(),
            self.latent.out_channels(),
            self.latent.data().iter().map(|&v| f(v)).collect(),
        )
        .expect("same geometry")
    }

    fn forward(&mut self, batch: &Batch<R>) -> Result<Batch<R>> {
        self.input = batch.clone();
        let w_eff = self.effective_weights();
        let out: Result<Batch<R>> =
            batch.iter().map(|x| conv2d(x, &w_eff, None, &self.spec)).collect();
        self.effective = Some(w_eff);
        out
    }

    fn backward(&mut self, grads: &Batch<R>) -> Result<Batch<R>> {
        let w_eff = self.effective.as_ref().expect("forward before backward");
        let mut grad_eff = vec![R::zero(); self.latent.data().len()];
        let mut out = Vec::with_capacity(grads.len());
        for (x, dy) in self.input.iter().zip(grads) {
            let mut dx = FloatTensor::zeros(*x.shape());
            conv_grads(x, w_eff, &self.spec, dy, &mut grad_eff, None, &mut dx);
            out.push(dx);
        }
        // straight-through into the latent weights
        for (i, (&lv, ge)) in self.latent.data().iter().zip(&grad_eff).enumerate() {
            let pass = match self.mode {
                BinaryMode::Ste => lv.abs() <= self.clip,
                BinaryMode::Surrogate => lv.abs() < R::one(),
            };
            if pass {
                self.grad_latent[i] += *ge;
            }
        }
        Ok(out)
    }

    fn zero_grads(&mut self) {
        self.grad_latent.iter_mut().for_each(|g| *g = R::zero());
    }

    fn params(&mut self) -> Vec<ParamGroup<'_, R>> {
        vec![ParamGroup {
            values: self.latent.data_mut(),
            grads: &self.grad_latent,
            clamp: Some(self.clip),
        }]
    }
}

// ── max pooling ──────────────────────────────────────────────────────

pub struct MaxPoolLayer {
    pub kernel: usize,
    pub stride: usize,
    argmax: Vec<Vec<usize>>,
    in_shapes: Vec<TensorShape>,
}

impl MaxPoolLayer {
    pub fn new(kernel: usize, stride: usize) -> Self {
        Self { kernel, stride, argmax: Vec::new(), in_shapes: Vec::new() }
    }

    fn forward<R: Real>(&mut self, batch: &Batch<R>) -> Result<Batch<R>> {
        self.argmax.clear();
        self.in_shapes.clear();
        let (k, s) = (self.kernel, self.stride);
        batch
            .iter()
            .map(|x| {
                let (h_i, w_i, c) = (x.shape().height, x.shape().width, x.shape().channels);
                if h_i < k || w_i < k {
                    return Err(Error::ShapeMismatch("pool window larger than input".into()));
                }
                let out_shape =
                    TensorShape::new((h_i - k) / s + 1, (w_i - k) / s + 1, c)?;
                let mut out = FloatTensor::zeros(out_shape);
                let mut arg = vec![0usize; out_shape.element_count()];
                let mut oi = 0;
                for oy in 0..out_shape.height {
                    for ox in 0..out_shape.width {
                        for ch in 0..c {
                            let mut best = x.get(oy * s, ox * s, ch);
                            let mut best_idx = (oy * s * w_i + ox * s) * c + ch;
                            for ky in 0..k {
                                for kx in 0..k {
                                    let (iy, ix) = (oy * s + ky, ox * s + kx);
                                    let v = x.get(iy, ix, ch);
                                    if v > best {
                                        best = v;
                                        best_idx = (iy * w_i + ix) * c + ch;
                                    }
                                }
                            }
                            out.set(oy, ox, ch, best);
                            arg[oi] = best_idx;
                            oi += 1;
                        }
                    }
                }
                self.argmax.push(arg);
                self.in_shapes.push(*x.shape());
                Ok(out)
            })
            .collect()
    }

    fn backward<R: Real>(&self, grads: &Batch<R>) -> Batch<R> {
        grads
            .iter()
            .zip(self.argmax.iter().zip(&self.in_shapes))
            .map(|(dy, (arg, shape))| {
                let mut dx = FloatTensor::zeros(*shape);
                for (g, &idx) in dy.data().iter().zip(arg) {
                    dx.data_mut()[idx] += *g;
                }
                dx
            })
            .collect()
    }
}

// ── flatten and dense head ───────────────────────────────────────────

pub struct FlattenLayer {
    in_shapes: Vec<TensorShape>,
}

impl FlattenLayer {
    pub fn new() -> Self {
        Self { in_shapes: Vec::new() }
    }

    fn forward<R: Real>(&mut self, batch: &Batch<R>) -> Result<Batch<R>> {
        self.in_shapes = batch.iter().map(|x| *x.shape()).collect();
        batch
            .iter()
            .map(|x| {
                FloatTensor::new(
                    TensorShape::new(1, 1, x.shape().element_count())?,
                    x.data().to_vec(),
                )
            })
            .collect()
    }

    fn backward<R: Real>(&self, grads: &Batch<R>) -> Batch<R> {
        grads
            .iter()
            .zip(&self.in_shapes)
            .map(|(dy, shape)| {
                FloatTensor::new(*shape, dy.data().to_vec()).expect("same element count")
            })
            .collect()
    }
}

pub struct DenseLayer<R> {
    in_dim: usize,
    out_dim: usize,
    /// Layout `[in][out]`.
    pub weights: Vec<R>,
    pub bias: Vec<R>,
    grad_w: Vec<R>,
    grad_b: Vec<R>,
    input: Batch<R>,
}

impl<R: Real> DenseLayer<R> {
    pub fn new(in_dim: usize, out_dim: usize, weights: Vec<R>, bias: Vec<R>) -> Result<Self> {
        if weights.len() != in_dim * out_dim || bias.len() != out_dim {
            return Err(Error::LengthMismatch("dense layer parameter sizes".into()));
        }
        Ok(Self {
            in_dim,
            out_dim,
            weights,
            bias,
            grad_w: vec![R::zero(); in_dim * out_dim],
            grad_b: vec![R::zero(); out_dim],
            input: Vec::new(),
        })
    }

    fn forward(&mut self, batch: &Batch<R>) -> Result<Batch<R>> {
        self.input = batch.clone();
        batch
            .iter()
            .map(|x| {
                if x.shape().element_count() != self.in_dim {
                    return Err(Error::ShapeMismatch(format!(
                        "dense expects {} inputs, got {}",
                        self.in_dim,
                        x.shape().element_count()
                    )));
                }
                let xv = x.data();
                let mut y = self.bias.clone();
                for (i, &xi) in xv.iter().enumerate() {
                    let row = &self.weights[i * self.out_dim..(i + 1) * self.out_dim];
                    for (o, wv) in row.iter().enumerate() {
                        y[o] += xi * *wv;
                    }
                }
                FloatTensor::new(TensorShape::new(1, 1, self.out_dim)?, y)
            })
            .collect()
    }

    fn backward(&mut self, grads: &Batch<R>) -> Result<Batch<R>> {
        let mut out = Vec::with_capacity(grads.len());
        for (x, dy) in self.input.iter().zip(grads) {
            let (xv, gv) = (x.data(), dy.data());
            for (o, g) in gv.iter().enumerate() {
                self.grad_b[o] += *g;
            }
            let mut dx = vec![R::zero(); self.in_dim];
            for (i, &xi) in xv.iter().enumerate() {
                let row = i * self.out_dim;
                for (o, g) in gv.iter().enumerate() {
                    self.grad_w[row + o] += xi * *g;
                    dx[i] += self.weights[row + o] * *g;
                }
            }
            out.push(FloatTensor::new(TensorShape::new(1, 1, self.in_dim)?, dx)?);
        }
        Ok(out)
    }

    fn zero_grads(&mut self) {
        self.grad_w.iter_mut().for_each(|g| *g = R::zero());
        self.grad_b.iter_mut().for_each(|g| *g = R::zero());
    }

    fn params(&mut self) -> Vec<ParamGroup<'_, R>> {
        vec![
            ParamGroup { values: &mut self.weights, grads: &self.grad_w, clamp: None },
            ParamGroup { values: &mut self.bias, grads: &self.grad_b, clamp: None },
        ]
    }
}

// ── the stack ────────────────────────────────────────────────────────

pub enum TrainLayer<R> {
    Conv(ConvLayer<R>),
    Depthwise(DepthwiseLayer<R>),
    BatchNorm(BatchNormLayer<R>),
    Binarize(BinarizeLayer<R>),
    BinaryConv(BinaryConvSteLayer<R>),
    MaxPool(MaxPoolLayer),
    Flatten(FlattenLayer),
    Dense(DenseLayer<R>),
}

pub struct TrainNet<R> {
    pub layers: Vec<TrainLayer<R>>,
}

impl<R: Real> TrainNet<R> {
    pub fn new(layers: Vec<TrainLayer<R>>) -> Self {
        Self { layers }
    }

    pub fn forward(&mut self, batch: &Batch<R>, training: bool) -> Result<Batch<R>> {
        let mut current = batch.clone();
        for layer in &mut self.layers {
            current = match layer {
                TrainLayer::Conv(l) => l.forward(&current)?,
                TrainLayer::Depthwise(l) => l.forward(&current)?,
                TrainLayer::BatchNorm(l) => l.forward(&current, training)?,
                TrainLayer::Binarize(l) => l.forward(&current),
                TrainLayer::BinaryConv(l) => l.forward(&current)?,
                TrainLayer::MaxPool(l) => l.forward(&current)?,
                TrainLayer::Flatten(l) => l.forward(&current)?,
                TrainLayer::Dense(l) => l.forward(&current)?,
            };
        }
        Ok(current)
    }

    pub fn backward(&mut self, output_grads: &Batch<R>) -> Result<Batch<R>> {
        let mut current = output_grads.clone();
        for layer in self.layers.iter_mut().rev() {
            current = match layer {
                TrainLayer::Conv(l) => l.backward(&current)?,
                TrainLayer::Depthwise(l) => l.backward(&current)?,
                TrainLayer::BatchNorm(l) => l.backward(&current)?,
                TrainLayer::Binarize(l) => l.backward(&current),
                TrainLayer::BinaryConv(l) => l.backward(&current)?,
                TrainLayer::MaxPool(l) => l.backward(&current),
                TrainLayer::Flatten(l) => l.backward(&current),
                TrainLayer::Dense(l) => l.backward(&current)?,
            };
        }
        Ok(current)
    }

    pub fn zero_grads(&mut self) {
        for layer in &mut self.layers {
            match layer {
                TrainLayer::Conv(l) => l.zero_grads(),
                TrainLayer::Depthwise(l) => l.zero_grads(),
                TrainLayer::BatchNorm(l) => l.zero_grads(),
                TrainLayer::BinaryConv(l) => l.zero_grads(),
                TrainLayer::Dense(l) => l.zero_grads(),
                _ => {}
            }
        }
    }

    pub fn param_groups(&mut self) -> Vec<ParamGroup<'_, R>> {
        let mut groups = Vec::new();
        for layer in &mut self.layers {
            match layer {
                TrainLayer::Conv(l) => groups.extend(l.params()),
                TrainLayer::Depthwise(l) => groups.extend(l.params()),
                TrainLayer::BatchNorm(l) => groups.extend(l.params()),
                TrainLayer::BinaryConv(l) => groups.extend(l.params()),
                TrainLayer::Dense(l) => groups.extend(l.params()),
                _ => {}
            }
        }
        groups
    }
}

/// Softmax cross-entropy on one logit vector; returns the loss and the
/// logit gradient.
pub fn softmax_cross_entropy<R: Real>(logits: &[R], label: usize) -> (f64, Vec<R>) {
    let max = logits.iter().cloned().fold(R::neg_infinity(), R::max);
    let exps: Vec<f64> =
        logits.iter().map(|&v| (v - max).to_f64().expect("finite").exp()).collect();
    let z: f64 = exps.iter().sum();
    let probs: Vec<f64> = exps.iter().map(|e| e / z).collect();
    let loss = -probs[label].max(1e-300).ln();
    let grad = probs
        .iter()
        .enumerate()
        .map(|(i, &p)| real::<R>(p - if i == label { 1.0 } else { 0.0 }))
        .collect();
    (loss, grad)
}

// ── optimizer ────────────────────────────────────────────────────────

/// Optimizer choice for toy training.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub enum OptimizerKind {
    Sgd,
    Momentum(f64),
}

pub struct Optimizer<R> {
    kind: OptimizerKind,
    learning_rate: R,
    velocities: Vec<Vec<R>>,
}

impl<R: Real> Optimizer<R> {
    pub fn new(kind: OptimizerKind, learning_rate: f64) -> Self {
        Self { kind, learning_rate: real(learning_rate), velocities: Vec::new() }
    }

    /// Apply one update over the network's parameter groups.
    pub fn step(&mut self, net: &mut TrainNet<R>) {
        let mut groups = net.param_groups();
        if self.velocities.len() != groups.len() {
            self.velocities = groups.iter().map(|g| vec![R::zero(); g.values.len()]).collect();
        }
        for (group, vel) in groups.iter_mut().zip(&mut self.velocities) {
            match self.kind {
                OptimizerKind::Sgd => {
                    for (w, &g) in group.values.iter_mut().zip(group.grads) {
                        *w = *w - self.learning_rate * g;
                    }
                }
                OptimizerKind::Momentum(mu) => {
                    let mu: R = real(mu);
                    for ((w, &g), v) in
                        group.values.iter_mut().zip(group.grads).zip(vel.iter_mut())
                    {
                        *v = mu * *v - self.learning_rate * g;
                        *w = *w + *v;
                    }
                }
            }
            if let Some(clip) = group.clamp {
                for w in group.values.iter_mut() {
                    *w = w.max(-clip).min(clip);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softmax_ce_gradient_sums_to_zero() {
        let (loss, grad) = softmax_cross_entropy(&[0.5f64, -0.2, 1.0], 2);
        assert!(loss > 0.0);
        let s: f64 = grad.iter().sum();
        assert!(s.abs() < 1e-12);
        assert!(grad[2] < 0.0);
    }

    #[test]
    fn dense_forward_backward_shapes() {
        let mut l = DenseLayer::new(3, 2, vec![1.0f64; 6], vec![0.0; 2]).unwrap();
        let x = FloatTensor::new(TensorShape::new(1, 1, 3).unwrap(), vec![1.0, 2.0, 3.0]).unwrap();
        let y = l.forward(&vec![x]).unwrap();
        assert_eq!(y[0].data(), &[6.0, 6.0]);
        let g = FloatTensor::new(TensorShape::new(1, 1, 2).unwrap(), vec![1.0, 0.0]).unwrap();
        let dx = l.backward(&vec![g]).unwrap();
        assert_eq!(dx[0].data(), &[1.0, 1.0, 1.0]);
        assert_eq!(l.grad_w, vec![1.0, 0.0, 2.0, 0.0, 3.0, 0.0]);
        assert_eq!(l.grad_b, vec![1.0, 0.0]);
    }

    #[test]
    fn maxpool_backward_routes_to_argmax() {
        let mut l = MaxPoolLayer::new(2, 2);
        let x = FloatTensor::new(
            TensorShape::new(2, 2, 1).unwrap(),
            vec![1.0f64, 5.0, 2.0, 3.0],
        )
        .unwrap();
        let y = l.forward(&vec![x]).unwrap();
        assert_eq!(y[0].data(), &[5.0]);
        let g = FloatTensor::new(TensorShape::new(1, 1, 1).unwrap(), vec![2.0]).unwrap();
        let dx = l.backward::<f64>(&g.into_batch());
        assert_eq!(dx[0].data(), &[0.0, 2.0, 0.0, 0.0]);
    }

    trait IntoBatch<R> {
        fn into_batch(self) -> Vec<FloatTensor<R>>;
    }

    impl<R> IntoBatch<R> for FloatTensor<R> {
        fn into_batch(self) -> Vec<FloatTensor<R>> {
            vec![self]
        }
    }

    #[test]
    fn binarize_layer_modes() {
        let x = FloatTensor::new(
            TensorShape::new(1, 1, 4).unwrap(),
            vec![-1.5f64, -0.25, 0.0, 2.0],
        )
        .unwrap();
        let mut ste = BinarizeLayer::new(BinaryMode::Ste, 1.0);
        let y = ste.forward(&vec![x.clone()]);
        assert_eq!(y[0].data(), &[-1.0, -1.0, 1.0, 1.0]);
        let ones = FloatTensor::new(TensorShape::new(1, 1, 4).unwrap(), vec![1.0; 4]).unwrap();
        let dx = ste.backward(&vec![ones.clone()]);
        assert_eq!(dx[0].data(), &[0.0, 1.0, 1.0, 0.0]);

        let mut surr = BinarizeLayer::new(BinaryMode::Surrogate, 1.0);
        let y2 = surr.forward(&vec![x]);
        assert_eq!(y2[0].data(), &[-1.0, -0.25, 0.0, 1.0]);
        let dx2 = surr.backward(&vec![ones]);
        assert_eq!(dx2[0].data(), &[0.0, 1.0, 1.0, 0.0]);
    }
}
