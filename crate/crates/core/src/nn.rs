//! Dense feed-forward networks with hand-written reverse-mode gradients.
//!
//! Batches are row-major: one sample per row. Layer weights are stored
//! `out x in`, so a layer computes `z = x W^T + b`.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand_distr::{Distribution, Normal};

use crate::error::{check_len, Error, Result};
use crate::noise::RngStream;

pub const SELU_ALPHA: f64 = 1.673_263_242_354_377_2;
pub const SELU_LAMBDA: f64 = 1.050_700_987_355_480_5;
/// Clamp applied to predictions before taking logarithms in BCE.
pub const BCE_EPS: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Identity,
    Selu,
    Sigmoid,
}

impl Activation {
    pub fn tag(self) -> u8 {
        match self {
            Activation::Identity => 0,
            Activation::Selu => 1,
            Activation::Sigmoid => 2,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(Activation::Identity),
            1 => Some(Activation::Selu),
            2 => Some(Activation::Sigmoid),
            _ => None,
        }
    }

    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Identity => z,
            Activation::Selu => selu(z),
            Activation::Sigmoid => sigmoid(z),
        }
    }

    /// Derivative expressed through the activation `a = f(z)`.
    fn derivative(self, a: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Selu => {
                if a > 0.0 {
                    SELU_LAMBDA
                } else {
                    a + SELU_LAMBDA * SELU_ALPHA
                }
            }
            Activation::Sigmoid => a * (1.0 - a),
        }
    }
}

pub fn selu(z: f64) -> f64 {
    SELU_LAMBDA * z.max(0.0) + SELU_LAMBDA * SELU_ALPHA * (exp_nonpositive(z.min(0.0)) - 1.0)
}

/// `e^x` for `x <= 0`, branch-free so the SELU map vectorizes. Relative
/// error below 1e-14; inputs under -708 return `e^-708`.
#[inline(always)]
fn exp_nonpositive(x: f64) -> f64 {
    const SHIFT: f64 = 6_755_399_441_055_744.0; // 1.5 * 2^52
    const LN2_HI: f64 = 6.931_471_803_691_238_2e-1;
    const LN2_LO: f64 = 1.908_214_929_270_587_7e-10;
    let x = x.max(-708.0);
    let t = x * std::f64::consts::LOG2_E + SHIFT;
    let k = t - SHIFT;
    let r = x - k * LN2_HI - k * LN2_LO;
    let mut p = 1.0 / 39_916_800.0;
    for c in [
        1.0 / 3_628_800.0,
        1.0 / 362_880.0,
        1.0 / 40_320.0,
        1.0 / 5_040.0,
        1.0 / 720.0,
        1.0 / 120.0,
        1.0 / 24.0,
        1.0 / 6.0,
        0.5,
        1.0,
        1.0,
    ] {
        p = p * r + c;
    }
    let k_bits = t.to_bits().wrapping_sub(SHIFT.to_bits());
    p * f64::from_bits(k_bits.wrapping_add(1023) << 52)
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

/// Layered dense model: `hidden` activation on every layer but the last,
/// `output` activation on the last.
#[derive(Debug, Clone)]
pub struct Network {
    dims: Vec<usize>,
    layers: Vec<Dense>,
    hidden: Activation,
    output: Activation,
    generation: u64,
}

impl PartialEq for Network {
    fn eq(&self, other: &Self) -> bool {
        self.dims == other.dims
            && self.layers == other.layers
            && self.hidden == other.hidden
            && self.output == other.output
    }
}

/// Activations kept from a forward pass for [`Network::backward`].
#[derive(Debug, Clone)]
pub struct ForwardCache {
    generation: u64,
    input: Array2<f64>,
    /// Activation of each layer.
    post: Vec<Array2<f64>>,
}

impl ForwardCache {
    pub fn output(&self) -> &Array2<f64> {
        self.post.last().expect("network has at least one layer")
    }
}

#[derive(Debug, Clone)]
pub struct Gradients {
    /// Per-layer weight gradients; empty when parameter gradients were not requested.
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
    /// Gradient with respect to the network input.
    pub input: Array2<f64>,
}

impl Network {
    /// LeCun-normal weights (`std = 1/sqrt(fan_in)`), zero biases.
    pub fn new(
        dims: &[usize],
        hidden: Activation,
        output: Activation,
        rng: &mut RngStream,
    ) -> Result<Self> {
        Self::check_dims(dims)?;
        let layers = dims
            .windows(2)
            .map(|w| {
                let normal = Normal::new(0.0, 1.0 / (w[0] as f64).sqrt())
                    .expect("finite standard deviation");
                Dense {
                    weight: Array2::from_shape_simple_fn((w[1], w[0]), || normal.sample(rng)),
                    bias: Array1::zeros(w[1]),
                }
            })
            .collect();
        Ok(Self {
            dims: dims.to_vec(),
            layers,
            hidden,
            output,
            generation: 0,
        })
    }

    pub fn zeros(dims: &[usize], hidden: Activation, output: Activation) -> Result<Self> {
        Self::check_dims(dims)?;
        let layers = dims
            .windows(2)
            .map(|w| Dense {
                weight: Array2::zeros((w[1], w[0])),
                bias: Array1::zeros(w[1]),
            })
            .collect();
        Ok(Self {
            dims: dims.to_vec(),
            layers,
            hidden,
            output,
            generation: 0,
        })
    }

    /// Assembles a network from explicit layers, validating shapes and finiteness.
    pub fn from_layers(
        layers: Vec<Dense>,
        hidden: Activation,
        output: Activation,
    ) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidParameter("network needs at least one layer".into()));
        }
        let mut dims = vec![layers[0].weight.ncols()];
        for (k, layer) in layers.iter().enumerate() {
            let (out, inp) = layer.weight.dim();
            if inp != *dims.last().unwrap() || layer.bias.len() != out {
                return Err(Error::Dimension(format!("layer {k} has inconsistent shape")));
            }
            if layer.weight.iter().chain(layer.bias.iter()).any(|v| !v.is_finite()) {
                return Err(Error::Numeric(format!("layer {k} has non-finite parameters")));
            }
            dims.push(out);
        }
        Self::check_dims(&dims)?;
        Ok(Self {
            dims,
            layers,
            hidden,
            output,
            generation: 0,
        })
    }

    fn check_dims(dims: &[usize]) -> Result<()> {
        if dims.len() < 2 || dims.contains(&0) {
            return Err(Error::InvalidParameter(format!("bad layer dims {dims:?}")));
        }
        Ok(())
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.dims.last().unwrap()
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn hidden_activation(&self) -> Activation {
        self.hidden
    }

    pub fn output_activation(&self) -> Activation {
        self.output
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    /// Mutable parameter slices, weights then bias per layer. Invalidates caches.
    pub fn params_mut(&mut self) -> Vec<&mut [f64]> {
        self.generation += 1;
        self.layers
            .iter_mut()
            .flat_map(|l| {
                [
                    l.weight.as_slice_mut().expect("standard layout"),
                    l.bias.as_slice_mut().expect("standard layout"),
                ]
            })
            .collect()
    }

    fn activation_of(&self, layer: usize) -> Activation {
        if layer + 1 == self.layers.len() {
            self.output
        } else {
            self.hidden
        }
    }

    /// Batched inference without keeping intermediates.
    pub fn predict(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        check_len("network input", x.ncols(), self.input_dim())?;
        let mut a = x.to_owned();
        for (k, layer) in self.layers.iter().enumerate() {
            let act = self.activation_of(k);
            let mut z = a.dot(&layer.weight.t());
            z += &layer.bias;
            z.mapv_inplace(|v| act.apply(v));
            a = z;
        }
        Ok(a)
    }

    /// Batched forward pass keeping what [`Network::backward`] needs.
    pub fn forward_batch(&self, x: ArrayView2<f64>) -> Result<ForwardCache> {
        check_len("network input", x.ncols(), self.input_dim())?;
        let mut cache = ForwardCache {
            generation: self.generation,
            input: x.to_owned(),
            post: Vec::with_capacity(self.layers.len()),
        };
        for (k, layer) in self.layers.iter().enumerate() {
            let act = self.activation_of(k);
            let a = cache.post.last().unwrap_or(&cache.input);
            let mut z = a.dot(&layer.weight.t());
            z += &layer.bias;
            z.mapv_inplace(|v| act.apply(v));
            cache.post.push(z);
        }
        Ok(cache)
    }

    /// Single-sample forward pass.
    pub fn forward(&self, x: &[f64]) -> Result<(Vec<f64>, ForwardCache)> {
        let view = ArrayView2::from_shape((1, x.len()), x)
            .map_err(|e| Error::Dimension(e.to_string()))?;
        let cache = self.forward_batch(view)?;
        Ok((cache.output().row(0).to_vec(), cache))
    }

    /// Reverse pass from `dL/dy`. Parameter gradients are skipped when
    /// `param_grads` is false; the input gradient is always returned.
    pub fn backward(
        &self,
        cache: &ForwardCache,
        dy: ArrayView2<f64>,
        param_grads: bool,
    ) -> Result<Gradients> {
        self.reverse(cache, dy, param_grads, true)
    }

    /// Parameter gradients only; `input` of the result is empty.
    pub fn param_gradients(&self, cache: &ForwardCache, dy: ArrayView2<f64>) -> Result<Gradients> {
        self.reverse(cache, dy, true, false)
    }

    fn reverse(
        &self,
        cache: &ForwardCache,
        dy: ArrayView2<f64>,
        param_grads: bool,
        input_grad: bool,
    ) -> Result<Gradients> {
        if cache.generation != self.generation || cache.post.len() != self.layers.len() {
            return Err(Error::InvalidParameter(
                "forward cache does not belong to the current network parameters".into(),
            ));
        }
        if dy.dim() != cache.output().dim() {
            return Err(Error::Dimension(format!(
                "upstream gradient shape {:?}, expected {:?}",
                dy.dim(),
                cache.output().dim()
            )));
        }
        let n = self.layers.len();
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        let mut grad = dy.to_owned();
        for k in (0..n).rev() {
            let act = self.activation_of(k);
            ndarray::Zip::from(&mut grad)
                .and(&cache.post[k])
                .for_each(|g, &a| *g *= act.derivative(a));
            if param_grads {
                let input = if k == 0 { &cache.input } else { &cache.post[k - 1] };
                weights.push(grad.t().dot(input));
                biases.push(grad.sum_axis(Axis(0)));
            }
            if k > 0 || input_grad {
                grad = grad.dot(&self.layers[k].weight);
            } else {
                grad = Array2::zeros((grad.nrows(), 0));
            }
        }
        weights.reverse();
        biases.reverse();
        Ok(Gradients {
            weights,
            biases,
            input: grad,
        })
    }
}

impl Gradients {
    pub fn param_slices(&self) -> Vec<&[f64]> {
        self.weights
            .iter()
            .zip(&self.biases)
            .flat_map(|(w, b)| {
                [
                    w.as_slice().expect("standard layout"),
                    b.as_slice().expect("standard layout"),
                ]
            })
            .collect()
    }
}

/// Mean binary cross-entropy with predictions clamped to `[BCE_EPS, 1 - BCE_EPS]`.
pub fn loss_bce(pred: &[f64], target: &[f64]) -> Result<f64> {
    check_len("bce target", target.len(), pred.len())?;
    let sum: f64 = pred
        .iter()
        .zip(target)
        .map(|(&p, &t)| {
            let p = p.clamp(BCE_EPS, 1.0 - BCE_EPS);
            -(t * p.ln() + (1.0 - t) * (1.0 - p).ln())
        })
        .sum();
    Ok(sum / pred.len() as f64)
}

/// `dL/dpred` of [`loss_bce`], evaluated at the clamped prediction.
pub fn loss_bce_grad(pred: &[f64], target: &[f64]) -> Result<Vec<f64>> {
    check_len("bce target", target.len(), pred.len())?;
    let n = pred.len() as f64;
    Ok(pred
        .iter()
        .zip(target)
        .map(|(&p, &t)| {
            let p = p.clamp(BCE_EPS, 1.0 - BCE_EPS);
            (p - t) / (p * (1.0 - p)) / n
        })
        .collect())
}

pub fn loss_mse(pred: &[f64], target: &[f64]) -> Result<f64> {
    check_len("mse target", target.len(), pred.len())?;
    let sum: f64 = pred.iter().zip(target).map(|(p, t)| (p - t) * (p - t)).sum();
    Ok(sum / pred.len() as f64)
}

pub fn loss_mse_grad(pred: &[f64], target: &[f64]) -> Result<Vec<f64>> {
    check_len("mse target", target.len(), pred.len())?;
    let n = pred.len() as f64;
    Ok(pred.iter().zip(target).map(|(p, t)| 2.0 * (p - t) / n).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Loss {
    Bce,
    Mse,
}

impl Loss {
    pub fn value(self, pred: &[f64], target: &[f64]) -> Result<f64> {
        match self {
            Loss::Bce => loss_bce(pred, target),
            Loss::Mse => loss_mse(pred, target),
        }
    }

    pub fn grad(self, pred: &[f64], target: &[f64]) -> Result<Vec<f64>> {
        match self {
            Loss::Bce => loss_bce_grad(pred, target),
            Loss::Mse => loss_mse_grad(pred, target),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptimizerKind {
    Adam,
    /// Adam with decoupled weight decay.
    AdamW,
}

/// Adam / AdamW moments and hyperparameters.
#[derive(Debug, Clone)]
pub struct OptimizerState {
    pub kind: OptimizerKind,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    step: u64,
}

impl OptimizerState {
    pub fn adam(lr: f64) -> Self {
        Self::with_kind(OptimizerKind::Adam, lr, 0.0)
    }

    pub fn adamw(lr: f64, weight_decay: f64) -> Self {
        Self::with_kind(OptimizerKind::AdamW, lr, weight_decay)
    }

    fn with_kind(kind: OptimizerKind, lr: f64, weight_decay: f64) -> Self {
        Self {
            kind,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            m: Vec::new(),
            v: Vec::new(),
            step: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// One bias-corrected update of `params` along `grads`.
    ///
    /// Non-finite gradients abort before any parameter is touched.
    pub fn update(&mut self, params: &mut [&mut [f64]], grads: &[&[f64]]) -> Result<()> {
        check_len("gradient tensors", grads.len(), params.len())?;
        for (k, (p, g)) in params.iter().zip(grads).enumerate() {
            check_len("gradient tensor", g.len(), p.len())?;
            if g.iter().any(|v| !v.is_finite()) {
                return Err(Error::Numeric(format!("non-finite gradient in tensor {k}")));
            }
        }
        if self.m.is_empty() {
            self.m = params.iter().map(|p| vec![0.0; p.len()]).collect();
            self.v = self.m.clone();
        } else if self.m.len() != params.len()
            || self.m.iter().zip(params.iter()).any(|(m, p)| m.len() != p.len())
        {
            return Err(Error::Dimension("optimizer state does not match parameters".into()));
        }
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        let decay = match self.kind {
            OptimizerKind::AdamW => 1.0 - self.lr * self.weight_decay,
            OptimizerKind::Adam => 1.0,
        };
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.lr, self.eps);
            for (((p, &g), m), v) in p.iter_mut().zip(g.iter()).zip(m.iter_mut()).zip(v.iter_mut()) {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                let m_hat = *m / bc1;
                let v_hat = *v / bc2;
                *p = *p * decay - lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }

    /// Applies [`OptimizerState::update`] to every parameter of `net`.
    pub fn step(&mut self, net: &mut Network, grads: &Gradients) -> Result<()> {
        let g = grads.param_slices();
        let mut p = net.params_mut();
        self.update(&mut p, &g)
    }
}

/// Mini-batch supervised training settings.
#[derive(Debug, Clone)]
pub struct TrainSettings {
    pub loss: Loss,
    pub batch_size: usize,
    pub epochs: usize,
    /// Anneal the optimizer's learning rate to zero along a half cosine over
    /// all steps instead of keeping it constant.
    pub cosine_decay: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochReport {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
}

/// Trains `net` on row-aligned `inputs`/`targets`, shuffling with `rng` every
/// epoch. `on_epoch` receives the mean batch loss of each epoch and, when a
/// validation set is given, the loss on it.
pub fn train_supervised(
    net: &mut Network,
    opt: &mut OptimizerState,
    inputs: ArrayView2<f64>,
    targets: ArrayView2<f64>,
    validation: Option<(ArrayView2<f64>, ArrayView2<f64>)>,
    settings: &TrainSettings,
    rng: &mut RngStream,
    mut on_epoch: impl FnMut(&EpochReport),
) -> Result<()> {
    check_len("training targets", targets.nrows(), inputs.nrows())?;
    check_len("training targets", targets.ncols(), net.output_dim())?;
    if settings.batch_size == 0 {
        return Err(Error::InvalidParameter("batch size must be >= 1".into()));
    }
    let n = inputs.nrows();
    let mut order: Vec<usize> = (0..n).collect();
    let base_lr = opt.lr;
    let total_steps = (settings.epochs * n.div_ceil(settings.batch_size)).max(1) as f64;
    let mut step = 0usize;
    for epoch in 1..=settings.epochs {
        order.shuffle(rng);
        let mut total = 0.0;
        let mut batches = 0usize;
        for idx in order.chunks(settings.batch_size) {
            let x = inputs.select(Axis(0), idx);
            let t = targets.select(Axis(0), idx);
            let cache = net.forward_batch(x.view())?;
            let pred = cache.output();
            let pred_s = pred.as_slice().expect("standard layout");
            let t_s = t.as_slice().expect("standard layout");
            let loss = settings.loss.value(pred_s, t_s)?;
            if !loss.is_finite() {
                return Err(Error::Numeric(format!("non-finite loss at epoch {epoch}")));
            }
            let dy = Array2::from_shape_vec(pred.dim(), settings.loss.grad(pred_s, t_s)?)
                .expect("gradient shape matches prediction");
            let grads = net.param_gradients(&cache, dy.view())?;
            if settings.cosine_decay {
                opt.lr = base_lr * 0.5 * (1.0 + (std::f64::consts::PI * step as f64 / total_steps).cos());
            }
            step += 1;
            opt.step(net, &grads)?;
            total += loss;
            batches += 1;
        }
        let val_loss = match validation {
            Some((vx, vt)) if vx.nrows() > 0 => {
                let pred = net.predict(vx)?;
                let vt = vt.as_standard_layout();
                Some(settings.loss.value(
                    pred.as_slice().expect("standard layout"),
                    vt.as_slice().expect("standard layout"),
                )?)
            }
            _ => None,
        };
        on_epoch(&EpochReport {
            epoch,
            train_loss: if batches > 0 { total / batches as f64 } else { 0.0 },
            val_loss,
        });
    }
    opt.lr = base_lr;
    Ok(())
}
