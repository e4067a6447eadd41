//! A small feedforward network with hand-written backpropagation.
//!
//! Activations are stored one sample per row. Dense layers compute
//! `A = H·Wᵀ + b` with `W` stored `d_out × d_in`; conv layers are stride 1,
//! unpadded, and keep images flattened channel-major.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::baselines::{regularizer_gradient, BaselineError, RegularizerSpec};
use crate::linalg::{Matrix, SpectralEstimate};
use crate::params::{
    Architecture, ConvKernel, InputShape, LayerGeometry, LayerSpec, LayerWeights, NetworkParams, ParamsError,
    WeightTensor,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NnError {
    #[error(transparent)]
    Params(#[from] ParamsError),
    #[error("batch has {got} columns, network expects {expected}")]
    InputWidth { got: usize, expected: usize },
    #[error("{targets} targets for a batch of {batch}")]
    TargetCount { targets: usize, batch: usize },
    #[error("label {label} out of range for {classes} classes")]
    LabelRange { label: usize, classes: usize },
    #[error("target width {got} does not match output width {expected}")]
    TargetWidth { got: usize, expected: usize },
    #[error("cross-entropy needs class labels")]
    TargetKind,
    #[error("direction must be nonzero")]
    ZeroDirection,
    #[error("invalid training config: {0}")]
    Config(String),
    #[error(transparent)]
    Regularizer(#[from] Box<BaselineError>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    CrossEntropy,
    /// `½‖u − y‖²` per sample.
    Squared,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Targets {
    Classes(Vec<usize>),
    Values(Matrix),
}

impl Targets {
    pub fn len(&self) -> usize {
        match self {
            Targets::Classes(c) => c.len(),
            Targets::Values(m) => m.rows(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Rows selected by `idx`, in order.
    pub fn select(&self, idx: &[usize]) -> Targets {
        match self {
            Targets::Classes(c) => Targets::Classes(idx.iter().map(|&i| c[i]).collect()),
            Targets::Values(m) => Targets::Values(select_rows(m, idx)),
        }
    }
}

/// Copies the rows listed in `idx`.
pub fn select_rows(m: &Matrix, idx: &[usize]) -> Matrix {
    let mut data = Vec::with_capacity(idx.len() * m.cols());
    for &i in idx {
        data.extend_from_slice(m.row(i));
    }
    Matrix::new(idx.len(), m.cols(), data).expect("selected rows are finite")
}

/// He-Gaussian weights (`std = √(2/fan_in)`) and zero biases.
pub fn init_network(arch: &Architecture, seed: u64) -> Result<NetworkParams, NnError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let geometry = arch.geometry()?;
    let layers = geometry
        .iter()
        .map(|g| {
            let std = (2.0 / g.fan_in() as f64).sqrt();
            match (g.spec, g.input) {
                (LayerSpec::Dense { units, .. }, input) => {
                    let w = Matrix::random_gaussian(units, input.size(), std, &mut rng);
                    LayerWeights::dense(w, arch.bias.then(|| vec![0.0; units]))
                }
                (
                    LayerSpec::Conv {
                        channels,
                        kernel_h,
                        kernel_w,
                        ..
                    },
                    InputShape::Image { channels: cin, .. },
                ) => {
                    let slices = (0..kernel_h * kernel_w)
                        .map(|_| Matrix::random_gaussian(channels, cin, std, &mut rng))
                        .collect();
                    let k = ConvKernel::new(kernel_h, kernel_w, slices).expect("slices share one shape");
                    LayerWeights::conv(k, arch.bias.then(|| vec![0.0; channels]))
                }
                _ => unreachable!("geometry guarantees image input for conv"),
            }
        })
        .collect();
    Ok(NetworkParams::new(arch.clone(), layers)?)
}

/// Per-layer pre- and post-activation values of one forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardCache {
    pub input: Matrix,
    pub pre: Vec<Matrix>,
    pub post: Vec<Matrix>,
    /// ReLU gate pattern per layer (`None` for linear layers).
    pub gates: Vec<Option<Vec<bool>>>,
}

impl ForwardCache {
    pub fn output(&self) -> &Matrix {
        self.post.last().expect("networks have at least one layer")
    }

    /// Input to layer `idx`.
    pub fn layer_input(&self, idx: usize) -> &Matrix {
        if idx == 0 {
            &self.input
        } else {
            &self.post[idx - 1]
        }
    }
}

fn image_dims(shape: InputShape) -> (usize, usize, usize) {
    match shape {
        InputShape::Image {
            channels,
            height,
            width,
        } => (channels, height, width),
        InputShape::Flat { dim } => (dim, 1, 1),
    }
}

fn conv_forward(x: &Matrix, k: &ConvKernel, bias: Option<&[f64]>, g: &LayerGeometry) -> Matrix {
    let (cin, h, w) = image_dims(g.input);
    let (cout, oh, ow) = image_dims(g.output);
    let (kh, kw) = k.kernel_size();
    let mut out = Matrix::zeros(x.rows(), cout * oh * ow);
    for n in 0..x.rows() {
        let xin = x.row(n);
        let xo = out.row_mut(n);
        for o in 0..cout {
            let b = bias.map_or(0.0, |b| b[o]);
            xo[o * oh * ow..(o + 1) * oh * ow].fill(b);
        }
        for i in 0..kh {
            for j in 0..kw {
                let s = k.slice(i, j);
                for o in 0..cout {
                    for c in 0..cin {
                        let wv = s[(o, c)];
                        if wv == 0.0 {
                            continue;
                        }
                        for y in 0..oh {
                            let src = &xin[c * h * w + (y + i) * w + j..][..ow];
                            let dst = &mut xo[o * oh * ow + y * ow..][..ow];
                            for (d, v) in dst.iter_mut().zip(src) {
                                *d += wv * v;
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

/// Returns (kernel gradient, input gradient) for a conv layer.
fn conv_backward(
    x: &Matrix,
    k: &ConvKernel,
    g: &LayerGeometry,
    da: &Matrix,
    need_input_grad: bool,
) -> (ConvKernel, Option<Matrix>) {
    let (cin, h, w) = image_dims(g.input);
    let (cout, oh, ow) = image_dims(g.output);
    let (kh, kw) = k.kernel_size();
    let mut gslices = vec![Matrix::zeros(cout, cin); kh * kw];
    let mut dx = need_input_grad.then(|| Matrix::zeros(x.rows(), x.cols()));
    for n in 0..x.rows() {
        let xin = x.row(n);
        let dan = da.row(n);
        for i in 0..kh {
            for j in 0..kw {
                let sidx = i * kw + j;
                let s = k.slice(i, j);
                for o in 0..cout {
                    for c in 0..cin {
                        let mut acc = 0.0;
                        for y in 0..oh {
                            let src = &xin[c * h * w + (y + i) * w + j..][..ow];
                            let d = &dan[o * oh * ow + y * ow..][..ow];
                            acc += src.iter().zip(d).map(|(a, b)| a * b).sum::<f64>();
                        }
                        gslices[sidx][(o, c)] += acc;
                        if let Some(dx) = dx.as_mut() {
                            let wv = s[(o, c)];
                            let dxn = dx.row_mut(n);
                            for y in 0..oh {
                                let d = &dan[o * oh * ow + y * ow..][..ow];
                                let dst = &mut dxn[c * h * w + (y + i) * w + j..][..ow];
                                for (t, v) in dst.iter_mut().zip(d) {
                                    *t += wv * v;
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    let kernel = ConvKernel::new(kh, kw, gslices).expect("gradient mirrors kernel layout");
    (kernel, dx)
}

fn add_bias(a: &mut Matrix, bias: &[f64]) {
    for r in 0..a.rows() {
        for (v, b) in a.row_mut(r).iter_mut().zip(bias) {
            *v += b;
        }
    }
}

fn apply_gate(a: &Matrix, gate: &[bool]) -> Matrix {
    let mut h = a.clone();
    for (v, &open) in h.as_mut_slice().iter_mut().zip(gate) {
        if !open {
            *v = 0.0;
        }
    }
    h
}

pub fn forward(params: &NetworkParams, batch: &Matrix) -> Result<ForwardCache, NnError> {
    forward_gated(params, batch, None)
}

/// Forward pass with ReLU gates taken from `gates` instead of the sign of
/// the pre-activations. Used to hold the activation pattern fixed.
fn forward_gated(
    params: &NetworkParams,
    batch: &Matrix,
    gates: Option<&[Option<Vec<bool>>]>,
) -> Result<ForwardCache, NnError> {
    let expected = params.arch.input_dim();
    if batch.cols() != expected {
        return Err(NnError::InputWidth {
            got: batch.cols(),
            expected,
        });
    }
    let geometry = params.arch.geometry()?;
    let mut pre = Vec::with_capacity(params.num_layers());
    let mut post: Vec<Matrix> = Vec::with_capacity(params.num_layers());
    let mut gate_out = Vec::with_capacity(params.num_layers());
    for (idx, (layer, g)) in params.layers.iter().zip(&geometry).enumerate() {
        let x = if idx == 0 { batch } else { &post[idx - 1] };
        let a = match &layer.weights {
            WeightTensor::Dense(w) => {
                let mut a = x.matmul_t(w);
                if let Some(b) = &layer.bias {
                    add_bias(&mut a, b);
                }
                a
            }
            WeightTensor::Conv(k) => conv_forward(x, k, layer.bias.as_deref(), g),
        };
        let gate = if g.spec.relu() {
            Some(match gates.and_then(|gs| gs[idx].as_ref()) {
                Some(fixed) => fixed.clone(),
                None => a.as_slice().iter().map(|&v| v > 0.0).collect::<Vec<_>>(),
            })
        } else {
            None
        };
        let h = match &gate {
            Some(gate) => apply_gate(&a, gate),
            None => a.clone(),
        };
        pre.push(a);
        post.push(h);
        gate_out.push(gate);
    }
    Ok(ForwardCache {
        input: batch.clone(),
        pre,
        post,
        gates: gate_out,
    })
}

fn check_targets(output: &Matrix, targets: &Targets, kind: LossKind) -> Result<(), NnError> {
    if targets.len() != output.rows() {
        return Err(NnError::TargetCount {
            targets: targets.len(),
            batch: output.rows(),
        });
    }
    match targets {
        Targets::Classes(labels) => {
            if let Some(&label) = labels.iter().find(|&&l| l >= output.cols()) {
                return Err(NnError::LabelRange {
                    label,
                    classes: output.cols(),
                });
            }
        }
        Targets::Values(y) => {
            if kind == LossKind::CrossEntropy {
                return Err(NnError::TargetKind);
            }
            if y.cols() != output.cols() {
                return Err(NnError::TargetWidth {
                    got: y.cols(),
                    expected: output.cols(),
                });
            }
        }
    }
    Ok(())
}

/// Mean loss over the batch and its gradient with respect to the outputs.
pub fn loss_and_output_grad(output: &Matrix, targets: &Targets, kind: LossKind) -> Result<(f64, Matrix), NnError> {
    check_targets(output, targets, kind)?;
    let n = output.rows() as f64;
    let mut grad = Matrix::zeros(output.rows(), output.cols());
    let mut total = 0.0;
    match kind {
        LossKind::CrossEntropy => {
            let Targets::Classes(labels) = targets else {
                return Err(NnError::TargetKind);
            };
            for (r, &label) in labels.iter().enumerate() {
                let u = output.row(r);
                let max = u.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let denom: f64 = u.iter().map(|v| (v - max).exp()).sum();
                total += denom.ln() + max - u[label];
                let g = grad.row_mut(r);
                for (gv, uv) in g.iter_mut().zip(u) {
                    *gv = (uv - max).exp() / denom / n;
                }
                g[label] -= 1.0 / n;
            }
        }
        LossKind::Squared => {
            for r in 0..output.rows() {
                let u = output.row(r);
                let g = grad.row_mut(r);
                for (c, (gv, uv)) in g.iter_mut().zip(u).enumerate() {
                    let y = match targets {
                        Targets::Classes(labels) => f64::from(u8::from(labels[r] == c)),
                        Targets::Values(y) => y[(r, c)],
                    };
                    let diff = uv - y;
                    total += 0.5 * diff * diff;
                    *gv = diff / n;
                }
            }
        }
    }
    Ok((total / n, grad))
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = i;
        }
    }
    best
}

/// Number of rows whose argmax equals the class label.
pub fn count_correct(output: &Matrix, labels: &[usize]) -> usize {
    labels
        .iter()
        .enumerate()
        .filter(|(r, &l)| argmax(output.row(*r)) == l)
        .count()
}

fn backward_from_cache(params: &NetworkParams, cache: &ForwardCache, dout: Matrix) -> Result<NetworkParams, NnError> {
    let geometry = params.arch.geometry()?;
    let mut grads: Vec<Option<LayerWeights>> = vec![None; params.num_layers()];
    let mut dh = dout;
    for idx in (0..params.num_layers()).rev() {
        let layer = &params.layers[idx];
        let g = &geometry[idx];
        let mut da = dh;
        if let Some(gate) = &cache.gates[idx] {
            for (d, &open) in da.as_mut_slice().iter_mut().zip(gate) {
                if !open {
                    *d = 0.0;
                }
            }
        }
        let x = cache.layer_input(idx);
        let need_input = idx > 0;
        let (grad_weights, dx) = match &layer.weights {
            WeightTensor::Dense(w) => {
                let gw = da.t_matmul(x);
                let dx = need_input.then(|| da.matmul(w));
                (WeightTensor::Dense(gw), dx)
            }
            WeightTensor::Conv(k) => {
                let (gk, dx) = conv_backward(x, k, g, &da, need_input);
                (WeightTensor::Conv(gk), dx)
            }
        };
        let grad_bias = layer.bias.as_ref().map(|b| {
            let per_unit = da.cols() / b.len();
            let mut gb = vec![0.0; b.len()];
            for r in 0..da.rows() {
                for (c, v) in da.row(r).iter().enumerate() {
                    gb[c / per_unit] += v;
                }
            }
            gb
        });
        grads[idx] = Some(LayerWeights {
            weights: grad_weights,
            bias: grad_bias,
        });
        dh = dx.unwrap_or_else(|| Matrix::zeros(1, 1));
    }
    Ok(NetworkParams {
        arch: params.arch.clone(),
        layers: grads.into_iter().map(|g| g.expect("every layer visited")).collect(),
    })
}

/// Mean loss, its gradient, and the forward cache that produced them.
pub fn loss_and_gradient(
    params: &NetworkParams,
    batch: &Matrix,
    targets: &Targets,
    kind: LossKind,
) -> Result<(f64, NetworkParams, ForwardCache), NnError> {
    let cache = forward(params, batch)?;
    let (loss, dout) = loss_and_output_grad(cache.output(), targets, kind)?;
    let grad = backward_from_cache(params, &cache, dout)?;
    Ok((loss, grad, cache))
}

pub fn backward(
    params: &NetworkParams,
    batch: &Matrix,
    targets: &Targets,
    kind: LossKind,
) -> Result<(f64, NetworkParams), NnError> {
    let (loss, grad, _) = loss_and_gradient(params, batch, targets, kind)?;
    Ok((loss, grad))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    pub loss: f64,
    /// Present for class-label targets.
    pub accuracy: Option<f64>,
}

pub fn evaluate(
    params: &NetworkParams,
    batch: &Matrix,
    targets: &Targets,
    kind: LossKind,
) -> Result<Evaluation, NnError> {
    let cache = forward(params, batch)?;
    let (loss, _) = loss_and_output_grad(cache.output(), targets, kind)?;
    let accuracy = match targets {
        Targets::Classes(labels) if !labels.is_empty() => {
            Some(count_correct(cache.output(), labels) as f64 / labels.len() as f64)
        }
        _ => None,
    };
    Ok(Evaluation { loss, accuracy })
}

/// Mean absolute activation per unit (per channel for conv layers) divided
/// by the layer mean. A layer whose activations are all zero scores zero.
pub fn empirical_activity_scores(cache: &ForwardCache, params: &NetworkParams) -> Vec<Vec<f64>> {
    cache
        .post
        .iter()
        .zip(&params.layers)
        .map(|(h, layer)| {
            let units = match &layer.weights {
                WeightTensor::Dense(w) => w.rows(),
                WeightTensor::Conv(k) => k.out_channels(),
            };
            let per_unit = h.cols() / units;
            let mut mean_abs = vec![0.0; units];
            for r in 0..h.rows() {
                for (c, v) in h.row(r).iter().enumerate() {
                    mean_abs[c / per_unit] += v.abs();
                }
            }
            let denom = (h.rows() * per_unit) as f64;
            mean_abs.iter_mut().for_each(|v| *v /= denom);
            let layer_mean = mean_abs.iter().sum::<f64>() / units as f64;
            if layer_mean > 0.0 {
                mean_abs.iter().map(|v| v / layer_mean).collect()
            } else {
                vec![0.0; units]
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub optimizer: OptimizerKind,
    pub learning_rate: f64,
    /// Fraction of a chunk's steps over which the learning rate ramps up.
    pub warmup_fraction: f64,
    /// Global gradient-norm cap; zero disables clipping.
    pub grad_clip: f64,
    pub batch_size: usize,
    pub epochs_per_chunk: usize,
    pub seed: u64,
    pub regularizer: RegularizerSpec,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            optimizer: OptimizerKind::Adam,
            learning_rate: 1e-3,
            warmup_fraction: 0.1,
            grad_clip: 0.5,
            batch_size: 128,
            epochs_per_chunk: 50,
            seed: 0,
            regularizer: RegularizerSpec::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), NnError> {
        let bad = |m: &str| Err(NnError::Config(m.to_string()));
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be finite and nonnegative");
        }
        if !(0.0..1.0).contains(&self.warmup_fraction) {
            return bad("warmup_fraction must lie in [0, 1)");
        }
        if !(self.grad_clip >= 0.0) {
            return bad("grad_clip must be nonnegative");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if self.epochs_per_chunk == 0 {
            return bad("epochs_per_chunk must be positive");
        }
        self.regularizer.validate().map_err(|e| NnError::Config(e.to_string()))
    }
}

/// Optimizer state for one chunk of training; rebuilt at every chunk boundary.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub step: u64,
    pub warmup_steps: u64,
    m: Option<NetworkParams>,
    v: Option<NetworkParams>,
}

impl TrainState {
    /// `total_steps` is the number of steps planned for the chunk.
    pub fn new(config: &TrainConfig, total_steps: u64) -> Self {
        Self {
            step: 0,
            warmup_steps: (config.warmup_fraction * total_steps as f64).ceil() as u64,
            m: None,
            v: None,
        }
    }

    pub fn learning_rate(&self, config: &TrainConfig) -> f64 {
        if self.warmup_steps == 0 {
            config.learning_rate
        } else {
            config.learning_rate * ((self.step + 1) as f64 / self.warmup_steps as f64).min(1.0)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepStats {
    pub loss: f64,
    pub penalty: f64,
    /// Gradient norm before clipping, regularizer included.
    pub grad_norm: f64,
    pub learning_rate: f64,
    /// Correct predictions in the batch (class targets only).
    pub correct: usize,
}

/// One optimizer step. `anchor` holds the weights the L2-init penalty pulls toward.
pub fn train_step(
    params: &mut NetworkParams,
    state: &mut TrainState,
    batch: &Matrix,
    targets: &Targets,
    kind: LossKind,
    config: &TrainConfig,
    anchor: Option<&NetworkParams>,
) -> Result<StepStats, NnError> {
    let (loss, mut grad, cache) = loss_and_gradient(params, batch, targets, kind)?;
    let correct = match targets {
        Targets::Classes(labels) => count_correct(cache.output(), labels),
        Targets::Values(_) => 0,
    };
    let (penalty, reg) =
        regularizer_gradient(params, anchor, &config.regularizer).map_err(|e| NnError::Regularizer(Box::new(e)))?;
    if let Some(reg) = reg {
        grad.axpy(1.0, &reg);
    }
    let grad_norm = grad.norm();
    if config.grad_clip > 0.0 && grad_norm > config.grad_clip {
        grad.scale_mut(config.grad_clip / grad_norm);
    }
    let lr = state.learning_rate(config);
    match config.optimizer {
        OptimizerKind::Sgd => params.axpy(-lr, &grad),
        OptimizerKind::Adam => {
            let m = state.m.get_or_insert_with(|| params.zeros_like());
            let v = state.v.get_or_insert_with(|| params.zeros_like());
            m.zip_apply(&grad, |mv, g| *mv = ADAM_BETA1 * *mv + (1.0 - ADAM_BETA1) * g);
            v.zip_apply(&grad, |vv, g| *vv = ADAM_BETA2 * *vv + (1.0 - ADAM_BETA2) * g * g);
            let t = (state.step + 1) as i32;
            let c1 = 1.0 - ADAM_BETA1.powi(t);
            let c2 = 1.0 - ADAM_BETA2.powi(t);
            let mut update = m.clone();
            update.zip_apply(v, |u, vv| *u = (*u / c1) / ((vv / c2).sqrt() + ADAM_EPS));
            params.axpy(-lr, &update);
        }
    }
    state.step += 1;
    Ok(StepStats {
        loss,
        penalty,
        grad_norm,
        learning_rate: lr,
        correct,
    })
}

fn gated_gradient(
    params: &NetworkParams,
    batch: &Matrix,
    targets: &Targets,
    kind: LossKind,
    gates: &[Option<Vec<bool>>],
) -> Result<NetworkParams, NnError> {
    let cache = forward_gated(params, batch, Some(gates))?;
    let (_, dout) = loss_and_output_grad(cache.output(), targets, kind)?;
    backward_from_cache(params, &cache, dout)
}

/// Hessian-vector product by central differences of the gradient. The ReLU
/// gates are frozen at `params`, so the product is that of the Hessian of
/// the locally piecewise-smooth loss and never straddles a kink.
pub fn hvp(
    params: &NetworkParams,
    batch: &Matrix,
    targets: &Targets,
    kind: LossKind,
    direction: &NetworkParams,
) -> Result<NetworkParams, NnError> {
    params.ensure_same_layout(direction)?;
    let vnorm = direction.norm();
    if vnorm == 0.0 {
        return Err(NnError::ZeroDirection);
    }
    let pnorm = params.norm();
    let h = 1e-4 * if pnorm > 0.0 { pnorm } else { 1.0 } / vnorm;
    let mut plus = params.clone();
    plus.axpy(h, direction);
    let mut minus = params.clone();
    minus.axpy(-h, direction);
    let gates = forward(params, batch)?.gates;
    let mut gp = gated_gradient(&plus, batch, targets, kind, &gates)?;
    let gm = gated_gradient(&minus, batch, targets, kind, &gates)?;
    gp.axpy(-1.0, &gm);
    gp.scale_mut(1.0 / (2.0 * h));
    Ok(gp)
}

/// Largest absolute Hessian eigenvalue by power iteration on `v ← Hv/‖Hv‖`.
pub fn hessian_sigma_max(
    params: &NetworkParams,
    batch: &Matrix,
    targets: &Targets,
    kind: LossKind,
    tol: f64,
    max_iter: usize,
) -> Result<SpectralEstimate, NnError> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x4e55_1a2b);
    let mut v = params.zeros_like();
    v.map_values(|x| *x = rand_distr::Distribution::sample(&rand_distr::StandardNormal, &mut rng));
    let n = v.norm();
    v.scale_mut(1.0 / n);
    let mut value = 0.0;
    for it in 1..=max_iter {
        let mut w = hvp(params, batch, targets, kind, &v)?;
        let norm = w.norm();
        if norm == 0.0 {
            return Ok(SpectralEstimate {
                value: 0.0,
                converged: true,
                iterations: it,
            });
        }
        w.scale_mut(1.0 / norm);
        v = w;
        if it > 1 && (norm - value).abs() <= tol * norm {
            return Ok(SpectralEstimate {
                value: norm,
                converged: true,
                iterations: it,
            });
        }
        value = norm;
    }
    Ok(SpectralEstimate {
        value,
        converged: false,
        iterations: max_iter,
    })
}
