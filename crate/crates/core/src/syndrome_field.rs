//! Continuous relaxation of syndrome measurement.
//!
//! Each stabilizer output is `(1 - cos(pi * x)) / 2`, where `x` is the sum of
//! the four error components the stabilizer touches. On binary inputs this is
//! exactly the parity; between them it is smooth, so a decoder can be trained
//! through it. The relaxation is available in closed form ([`FieldMode::Exact`])
//! or as a one-hidden-layer network fitted to it ([`FieldMode::Approximated`]).

use std::f64::consts::PI;

use ndarray::{Array2, ArrayView2};

use crate::error::{check_len, Error, Result};
use crate::lattice::CodeLayout;
use crate::nn::{
    train_supervised, Activation, EpochReport, ForwardCache, Loss, Network, OptimizerState,
    TrainSettings,
};
use crate::noise::{derive_stream, RngStream};

/// Closed-form relaxation of a single sample.
pub fn exact_f(layout: &CodeLayout, a: &[f64]) -> Result<Vec<f64>> {
    check_len("field input", a.len(), layout.error_len())?;
    Ok(layout
        .syndrome_support()
        .iter()
        .map(|q| relax(q.iter().map(|&k| a[k]).sum()))
        .collect())
}

/// `dL/da` for upstream `dL/df` at the point `a`.
pub fn exact_f_grad(layout: &CodeLayout, a: &[f64], upstream: &[f64]) -> Result<Vec<f64>> {
    check_len("field input", a.len(), layout.error_len())?;
    check_len("field upstream gradient", upstream.len(), layout.syndrome_len())?;
    let mut grad = vec![0.0; a.len()];
    for (q, &up) in layout.syndrome_support().iter().zip(upstream) {
        let x: f64 = q.iter().map(|&k| a[k]).sum();
        let d = relax_slope(x) * up;
        for &k in q {
            grad[k] += d;
        }
    }
    Ok(grad)
}

fn relax(x: f64) -> f64 {
    (1.0 - (PI * x).cos()) / 2.0
}

fn relax_slope(x: f64) -> f64 {
    PI * (PI * x).sin() / 2.0
}

#[derive(Debug, Clone)]
pub enum FieldMode {
    Exact,
    Approximated(Network),
}

/// The relaxed syndrome map for one code layout.
#[derive(Debug, Clone)]
pub struct SyndromeField {
    layout: CodeLayout,
    support: Vec<[usize; 4]>,
    mode: FieldMode,
}

/// Intermediate state of a batched field evaluation.
#[derive(Debug, Clone)]
pub struct FieldPass {
    input: Array2<f64>,
    output: Array2<f64>,
    cache: Option<ForwardCache>,
}

impl FieldPass {
    pub fn output(&self) -> &Array2<f64> {
        &self.output
    }
}

impl SyndromeField {
    pub fn exact(layout: CodeLayout) -> Self {
        let support = layout.syndrome_support();
        Self {
            layout,
            support,
            mode: FieldMode::Exact,
        }
    }

    /// Wraps a fitted approximator; it must map `4L^2 -> hidden -> 2L^2`.
    pub fn approximated(layout: CodeLayout, net: Network) -> Result<Self> {
        let dims = net.dims();
        if dims.len() != 3 || dims[0] != layout.error_len() || dims[2] != layout.syndrome_len() {
            return Err(Error::Dimension(format!(
                "approximator dims {dims:?} do not fit L = {} (need [{}, hidden, {}])",
                layout.distance(),
                layout.error_len(),
                layout.syndrome_len()
            )));
        }
        let support = layout.syndrome_support();
        Ok(Self {
            layout,
            support,
            mode: FieldMode::Approximated(net),
        })
    }

    pub fn layout(&self) -> &CodeLayout {
        &self.layout
    }

    pub fn mode(&self) -> &FieldMode {
        &self.mode
    }

    pub fn is_exact(&self) -> bool {
        matches!(self.mode, FieldMode::Exact)
    }

    /// Batched evaluation keeping what [`SyndromeField::backward_input`] needs.
    pub fn forward_batch(&self, a: ArrayView2<f64>) -> Result<FieldPass> {
        check_len("field input", a.ncols(), self.layout.error_len())?;
        match &self.mode {
            FieldMode::Exact => {
                let mut out = Array2::zeros((a.nrows(), self.support.len()));
                for (row, mut dst) in a.rows().into_iter().zip(out.rows_mut()) {
                    for (q, d) in self.support.iter().zip(dst.iter_mut()) {
                        *d = relax(q.iter().map(|&k| row[k]).sum());
                    }
                }
                Ok(FieldPass {
                    input: a.to_owned(),
                    output: out,
                    cache: None,
                })
            }
            FieldMode::Approximated(net) => {
                let cache = net.forward_batch(a)?;
                Ok(FieldPass {
                    input: Array2::zeros((0, 0)),
                    output: cache.output().clone(),
                    cache: Some(cache),
                })
            }
        }
    }

    /// Batched evaluation without intermediates.
    pub fn predict(&self, a: ArrayView2<f64>) -> Result<Array2<f64>> {
        match &self.mode {
            FieldMode::Exact => Ok(self.forward_batch(a)?.output),
            FieldMode::Approximated(net) => {
                check_len("field input", a.ncols(), self.layout.error_len())?;
                net.predict(a)
            }
        }
    }

    /// Gradient of the loss with respect to the field input. Field parameters
    /// are never differentiated.
    pub fn backward_input(&self, pass: &FieldPass, upstream: ArrayView2<f64>) -> Result<Array2<f64>> {
        if upstream.dim() != pass.output.dim() {
            return Err(Error::Dimension(format!(
                "upstream gradient shape {:?}, expected {:?}",
                upstream.dim(),
                pass.output.dim()
            )));
        }
        match (&self.mode, &pass.cache) {
            (FieldMode::Exact, None) => {
                let mut grad = Array2::zeros(pass.input.dim());
                for ((row, up), mut dst) in pass
                    .input
                    .rows()
                    .into_iter()
                    .zip(upstream.rows())
                    .zip(grad.rows_mut())
                {
                    for (q, &u) in self.support.iter().zip(up.iter()) {
                        let d = relax_slope(q.iter().map(|&k| row[k]).sum()) * u;
                        for &k in q {
                            dst[k] += d;
                        }
                    }
                }
                Ok(grad)
            }
            (FieldMode::Approximated(net), Some(cache)) => {
                Ok(net.backward(cache, upstream, false)?.input)
            }
            _ => Err(Error::InvalidParameter(
                "field pass was produced by a different field mode".into(),
            )),
        }
    }
}

/// One training pair for the approximator: uniform input and its exact image.
pub fn sample_approx_pair(layout: &CodeLayout, rng: &mut RngStream) -> (Vec<f64>, Vec<f64>) {
    let a: Vec<f64> = (0..layout.error_len()).map(|_| rng.uniform()).collect();
    let s = exact_f(layout, &a).expect("sampled input has layout length");
    (a, s)
}

/// `n` uniform pairs; pair `i` is drawn from `derive_stream(seed, i)`.
pub fn sample_approx_set(layout: &CodeLayout, n: usize, seed: u64) -> (Array2<f64>, Array2<f64>) {
    let mut inputs = Array2::zeros((n, layout.error_len()));
    let mut targets = Array2::zeros((n, layout.syndrome_len()));
    for i in 0..n {
        let (a, s) = sample_approx_pair(layout, &mut derive_stream(seed, i as u64));
        inputs.row_mut(i).assign(&ndarray::ArrayView1::from(&a));
        targets.row_mut(i).assign(&ndarray::ArrayView1::from(&s));
    }
    (inputs, targets)
}

/// Approximator training settings.
#[derive(Debug, Clone, PartialEq)]
pub struct ApproxConfig {
    /// Hidden width as a multiple of the input dimension `4L^2`.
    pub hidden_scale: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub batch_size: usize,
    pub epochs: usize,
    pub lr: f64,
    pub weight_decay: f64,
    /// Cosine-anneal the learning rate to zero; constant when false.
    pub cosine_decay: bool,
}

impl ApproxConfig {
    /// Published full-scale settings for distance `l`.
    pub fn full_scale(l: usize) -> Self {
        let large = l >= 7;
        Self {
            hidden_scale: if large { 750 } else { 1000 },
            n_train: if large { 10_000_000 } else { 1_000_000 },
            n_test: 10_000,
            batch_size: if large { 2048 } else { 512 },
            epochs: 30,
            lr: 1e-5,
            weight_decay: 0.01,
            cosine_decay: false,
        }
    }
}

/// Fresh approximator with LeCun-normal weights.
pub fn init_approximator(layout: &CodeLayout, hidden_scale: usize, rng: &mut RngStream) -> Result<Network> {
    if hidden_scale == 0 {
        return Err(Error::InvalidParameter("hidden_scale must be >= 1".into()));
    }
    let input = layout.error_len();
    Network::new(
        &[input, hidden_scale * input, layout.syndrome_len()],
        Activation::Selu,
        Activation::Sigmoid,
        rng,
    )
}

/// Fits a one-hidden-layer network to [`exact_f`] on uniform samples with MSE
/// and AdamW.
///
/// The initial weights come from `rng.fork(0)` and the training set from
/// `rng.fork(1)`; shuffling continues on `rng`.
pub fn train_approximator(
    layout: &CodeLayout,
    cfg: &ApproxConfig,
    rng: &mut RngStream,
    on_epoch: impl FnMut(&EpochReport),
) -> Result<Network> {
    let mut net = init_approximator(layout, cfg.hidden_scale, &mut rng.fork(0))?;
    let data_seed = rng.next_u64();
    if cfg.epochs == 0 {
        return Ok(net);
    }
    if cfg.n_train == 0 {
        return Err(Error::InvalidParameter("approximator needs training data".into()));
    }
    let (x, t) = sample_approx_set(layout, cfg.n_train, data_seed);
    let mut opt = OptimizerState::adamw(cfg.lr, cfg.weight_decay);
    let settings = TrainSettings {
        loss: Loss::Mse,
        batch_size: cfg.batch_size,
        epochs: cfg.epochs,
        cosine_decay: cfg.cosine_decay,
    };
    train_supervised(&mut net, &mut opt, x.view(), t.view(), None, &settings, rng, on_epoch)?;
    Ok(net)
}

/// Held-out quality of a field against the exact relaxation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ApproxMetrics {
    /// Mean per-sample cosine similarity over samples with a nonzero target.
    pub cosine: f64,
    pub mse: f64,
    pub mae: f64,
    /// Samples skipped for cosine because their target was the zero vector.
    pub zero_targets: usize,
    pub n: usize,
}

/// Compares `field` with the exact relaxation on `n_test` fresh uniform inputs.
pub fn evaluate_approximator(field: &SyndromeField, n_test: usize, rng: &mut RngStream) -> Result<ApproxMetrics> {
    if n_test == 0 {
        return Err(Error::InvalidParameter("n_test must be >= 1".into()));
    }
    let layout = field.layout();
    let (x, t) = sample_approx_set(layout, n_test, rng.next_u64());
    let y = field.predict(x.view())?;
    let (mut se, mut ae, mut cos_sum) = (0.0, 0.0, 0.0);
    let mut zero_targets = 0;
    for (yr, tr) in y.rows().into_iter().zip(t.rows()) {
        let (mut dot, mut ny, mut nt) = (0.0, 0.0, 0.0);
        for (&a, &b) in yr.iter().zip(tr.iter()) {
            se += (a - b) * (a - b);
            ae += (a - b).abs();
            dot += a * b;
            ny += a * a;
            nt += b * b;
        }
        if nt == 0.0 {
            zero_targets += 1;
        } else if ny > 0.0 {
            cos_sum += dot / (ny.sqrt() * nt.sqrt());
        }
    }
    let elems = y.len() as f64;
    let counted = n_test - zero_targets;
    Ok(ApproxMetrics {
        cosine: if counted > 0 { cos_sum / counted as f64 } else { 0.0 },
        mse: se / elems,
        mae: ae / elems,
        zero_targets,
        n: n_test,
    })
}
