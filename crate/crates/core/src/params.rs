//! Network parameter containers shared by the reinitializers, metrics and
//! the trainer.
//!
//! Dense weights are stored `d_out × d_in`. Convolution kernels
//! `C_out × C_in × k_h × k_w` are stored as `k_h·k_w` spatial slices of shape
//! `C_out × C_in`, slice `(i, j)` at index `i * k_w + j`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::Matrix;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ParamsError {
    #[error("invalid architecture: {0}")]
    InvalidArchitecture(String),
    #[error("architecture mismatch: {0}")]
    ArchitectureMismatch(String),
    #[error("invalid conv kernel: {0}")]
    InvalidKernel(String),
    #[error("flat parameter vector has length {got}, expected {expected}")]
    FlatLength { got: usize, expected: usize },
    #[error("tensor `{name}`: {reason}")]
    Tensor { name: String, reason: String },
}

/// Shape of the activations flowing between layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InputShape {
    Flat {
        dim: usize,
    },
    Image {
        channels: usize,
        height: usize,
        width: usize,
    },
}

impl InputShape {
    pub fn size(&self) -> usize {
        match *self {
            InputShape::Flat { dim } => dim,
            InputShape::Image {
                channels,
                height,
                width,
            } => channels * height * width,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Dense {
        units: usize,
        relu: bool,
    },
    /// Stride-1, unpadded convolution.
    Conv {
        channels: usize,
        kernel_h: usize,
        kernel_w: usize,
        relu: bool,
    },
}

impl LayerSpec {
    pub fn relu(&self) -> bool {
        match *self {
            LayerSpec::Dense { relu, .. } | LayerSpec::Conv { relu, .. } => relu,
        }
    }
}

/// Resolved input/output shapes of one layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerGeometry {
    pub input: InputShape,
    pub output: InputShape,
    pub spec: LayerSpec,
}

impl LayerGeometry {
    pub fn fan_in(&self) -> usize {
        match (self.spec, self.input) {
            (LayerSpec::Dense { .. }, input) => input.size(),
            (LayerSpec::Conv { kernel_h, kernel_w, .. }, InputShape::Image { channels, .. }) => {
                channels * kernel_h * kernel_w
            }
            _ => unreachable!("conv geometry always has image input"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub input: InputShape,
    pub layers: Vec<LayerSpec>,
    pub bias: bool,
}

impl Architecture {
    /// ReLU MLP with a linear output layer.
    pub fn mlp(input_dim: usize, hidden: &[usize], outputs: usize, bias: bool) -> Self {
        let mut layers: Vec<LayerSpec> = hidden
            .iter()
            .map(|&units| LayerSpec::Dense { units, relu: true })
            .collect();
        layers.push(LayerSpec::Dense {
            units: outputs,
            relu: false,
        });
        Self {
            input: InputShape::Flat { dim: input_dim },
            layers,
            bias,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.input.size()
    }

    pub fn output_dim(&self) -> usize {
        self.geometry()
            .ok()
            .and_then(|g| g.last().map(|l| l.output.size()))
            .unwrap_or(0)
    }

    /// Resolves per-layer shapes. Conv layers must precede all dense layers;
    /// the first dense layer flattens its image input channel-major.
    pub fn geometry(&self) -> Result<Vec<LayerGeometry>, ParamsError> {
        let invalid = |msg: String| Err(ParamsError::InvalidArchitecture(msg));
        if self.layers.is_empty() {
            return invalid("no layers".into());
        }
        if self.input.size() == 0 {
            return invalid("input has zero size".into());
        }
        let mut shape = self.input;
        let mut out = Vec::with_capacity(self.layers.len());
        for (idx, &spec) in self.layers.iter().enumerate() {
            let output = match spec {
                LayerSpec::Dense { units, .. } => {
                    if units == 0 {
                        return invalid(format!("layer {idx}: zero units"));
                    }
                    InputShape::Flat { dim: units }
                }
                LayerSpec::Conv {
                    channels,
                    kernel_h,
                    kernel_w,
                    ..
                } => {
                    let InputShape::Image { height, width, .. } = shape else {
                        return invalid(format!("layer {idx}: conv after flat input"));
                    };
                    if channels == 0 || kernel_h == 0 || kernel_w == 0 {
                        return invalid(format!("layer {idx}: zero-sized conv"));
                    }
                    if kernel_h > height || kernel_w > width {
                        return invalid(format!(
                            "layer {idx}: kernel {kernel_h}x{kernel_w} exceeds input {height}x{width}"
                        ));
                    }
                    InputShape::Image {
                        channels,
                        height: height - kernel_h + 1,
                        width: width - kernel_w + 1,
                    }
                }
            };
            out.push(LayerGeometry {
                input: shape,
                output,
                spec,
            });
            shape = output;
        }
        Ok(out)
    }
}

/// Convolution kernel stored slice-wise over the spatial dimensions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvKernel {
    out_channels: usize,
    in_channels: usize,
    kernel_h: usize,
    kernel_w: usize,
    slices: Vec<Matrix>,
}

impl ConvKernel {
    pub fn new(kernel_h: usize, kernel_w: usize, slices: Vec<Matrix>) -> Result<Self, ParamsError> {
        if slices.len() != kernel_h * kernel_w || slices.is_empty() {
            return Err(ParamsError::InvalidKernel(format!(
                "{} slices for a {kernel_h}x{kernel_w} kernel",
                slices.len()
            )));
        }
        let (out_channels, in_channels) = slices[0].shape();
        if let Some(bad) = slices.iter().position(|s| s.shape() != (out_channels, in_channels)) {
            return Err(ParamsError::InvalidKernel(format!(
                "slice {bad} has shape {:?}, expected {:?}",
                slices[bad].shape(),
                (out_channels, in_channels)
            )));
        }
        Ok(Self {
            out_channels,
            in_channels,
            kernel_h,
            kernel_w,
            slices,
        })
    }

    /// Builds from a row-major `C_out × C_in × k_h × k_w` buffer.
    pub fn from_oihw(
        out_channels: usize,
        in_channels: usize,
        kernel_h: usize,
        kernel_w: usize,
        data: &[f64],
    ) -> Result<Self, ParamsError> {
        if data.len() != out_channels * in_channels * kernel_h * kernel_w {
            return Err(ParamsError::InvalidKernel(format!(
                "buffer of {} values for {out_channels}x{in_channels}x{kernel_h}x{kernel_w}",
                data.len()
            )));
        }
        let slices = (0..kernel_h * kernel_w)
            .map(|s| {
                Matrix::from_fn(out_channels, in_channels, |o, c| {
                    data[(o * in_channels + c) * kernel_h * kernel_w + s]
                })
            })
            .collect();
        Self::new(kernel_h, kernel_w, slices)
    }

    /// Row-major `C_out × C_in × k_h × k_w` copy.
    pub fn to_oihw(&self) -> Vec<f64> {
        let area = self.kernel_h * self.kernel_w;
        let mut out = vec![0.0; self.out_channels * self.in_channels * area];
        for (s, slice) in self.slices.iter().enumerate() {
            for o in 0..self.out_channels {
                for c in 0..self.in_channels {
                    out[(o * self.in_channels + c) * area + s] = slice[(o, c)];
                }
            }
        }
        out
    }

    pub fn out_channels(&self) -> usize {
        self.out_channels
    }

    pub fn in_channels(&self) -> usize {
        self.in_channels
    }

    pub fn kernel_size(&self) -> (usize, usize) {
        (self.kernel_h, self.kernel_w)
    }

    pub fn slices(&self) -> &[Matrix] {
        &self.slices
    }

    pub fn slices_mut(&mut self) -> &mut [Matrix] {
        &mut self.slices
    }

    pub fn slice(&self, i: usize, j: usize) -> &Matrix {
        &self.slices[i * self.kernel_w + j]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum WeightTensor {
    Dense(Matrix),
    Conv(ConvKernel),
}

impl WeightTensor {
    /// The 2-D matrices making up this tensor: one for dense, one per spatial
    /// slice for conv.
    pub fn matrices(&self) -> &[Matrix] {
        match self {
            WeightTensor::Dense(m) => std::slice::from_ref(m),
            WeightTensor::Conv(k) => k.slices(),
        }
    }

    pub fn matrices_mut(&mut self) -> &mut [Matrix] {
        match self {
            WeightTensor::Dense(m) => std::slice::from_mut(m),
            WeightTensor::Conv(k) => k.slices_mut(),
        }
    }

    pub fn shape(&self) -> Vec<usize> {
        match self {
            WeightTensor::Dense(m) => vec![m.rows(), m.cols()],
            WeightTensor::Conv(k) => {
                vec![k.out_channels, k.in_channels, k.kernel_h, k.kernel_w]
            }
        }
    }
}

/// One layer's weights plus an optional bias (biases are never orthogonalized).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerWeights {
    pub weights: WeightTensor,
    pub bias: Option<Vec<f64>>,
}

impl LayerWeights {
    pub fn dense(w: Matrix, bias: Option<Vec<f64>>) -> Self {
        Self {
            weights: WeightTensor::Dense(w),
            bias,
        }
    }

    pub fn conv(k: ConvKernel, bias: Option<Vec<f64>>) -> Self {
        Self {
            weights: WeightTensor::Conv(k),
            bias,
        }
    }

    pub fn is_conv(&self) -> bool {
        matches!(self.weights, WeightTensor::Conv(_))
    }

    pub fn dense_matrix(&self) -> Option<&Matrix> {
        match &self.weights {
            WeightTensor::Dense(m) => Some(m),
            WeightTensor::Conv(_) => None,
        }
    }

    fn buffers(&self) -> impl Iterator<Item = &[f64]> {
        self.weights
            .matrices()
            .iter()
            .map(Matrix::as_slice)
            .chain(self.bias.as_deref())
    }

    fn buffers_mut(&mut self) -> impl Iterator<Item = &mut [f64]> {
        let LayerWeights { weights, bias } = self;
        weights
            .matrices_mut()
            .iter_mut()
            .map(Matrix::as_mut_slice)
            .chain(bias.as_deref_mut())
    }

    fn same_layout(&self, other: &LayerWeights) -> bool {
        self.weights.shape() == other.weights.shape()
            && self.bias.as_ref().map(Vec::len) == other.bias.as_ref().map(Vec::len)
    }
}

/// Ordered layer weights together with the architecture that produced them.
///
/// Gradients, Hessian-vector products and optimizer moments reuse this type.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkParams {
    pub arch: Architecture,
    pub layers: Vec<LayerWeights>,
}

impl NetworkParams {
    /// Checks that layer tensors match the architecture.
    pub fn new(arch: Architecture, layers: Vec<LayerWeights>) -> Result<Self, ParamsError> {
        let geometry = arch.geometry()?;
        if geometry.len() != layers.len() {
            return Err(ParamsError::ArchitectureMismatch(format!(
                "{} layers for an architecture with {}",
                layers.len(),
                geometry.len()
            )));
        }
        for (idx, (g, layer)) in geometry.iter().zip(&layers).enumerate() {
            let expected = match (g.spec, g.input) {
                (LayerSpec::Dense { units, .. }, input) => vec![units, input.size()],
                (
                    LayerSpec::Conv {
                        channels,
                        kernel_h,
                        kernel_w,
                        ..
                    },
                    InputShape::Image { channels: cin, .. },
                ) => vec![channels, cin, kernel_h, kernel_w],
                _ => unreachable!(),
            };
            if layer.weights.shape() != expected {
                return Err(ParamsError::ArchitectureMismatch(format!(
                    "layer {idx}: weight shape {:?}, expected {expected:?}",
                    layer.weights.shape()
                )));
            }
            let bias_len = layer.bias.as_ref().map(Vec::len);
            let expected_bias = arch.bias.then(|| expected[0]);
            if bias_len != expected_bias {
                return Err(ParamsError::ArchitectureMismatch(format!(
                    "layer {idx}: bias length {bias_len:?}, expected {expected_bias:?}"
                )));
            }
        }
        Ok(Self { arch, layers })
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn num_params(&self) -> usize {
        self.buffers().map(<[f64]>::len).sum()
    }

    fn buffers(&self) -> impl Iterator<Item = &[f64]> {
        self.layers.iter().flat_map(LayerWeights::buffers)
    }

    fn buffers_mut(&mut self) -> impl Iterator<Item = &mut [f64]> {
        self.layers.iter_mut().flat_map(LayerWeights::buffers_mut)
    }

    /// True when both have the same architecture and tensor layout.
    pub fn same_layout(&self, other: &NetworkParams) -> bool {
        self.arch == other.arch
            && self.layers.len() == other.layers.len()
            && self.layers.iter().zip(&other.layers).all(|(a, b)| a.same_layout(b))
    }

    pub fn ensure_same_layout(&self, other: &NetworkParams) -> Result<(), ParamsError> {
        if self.same_layout(other) {
            Ok(())
        } else {
            Err(ParamsError::ArchitectureMismatch(
                "parameter sets have different layouts".into(),
            ))
        }
    }

    /// All parameters in layer order (weights, then bias).
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for b in self.buffers() {
            out.extend_from_slice(b);
        }
        out
    }

    /// Copy of `self` with values taken from `flat`.
    pub fn with_flat(&self, flat: &[f64]) -> Result<NetworkParams, ParamsError> {
        let expected = self.num_params();
        if flat.len() != expected {
            return Err(ParamsError::FlatLength {
                got: flat.len(),
                expected,
            });
        }
        let mut out = self.clone();
        let mut offset = 0;
        for b in out.buffers_mut() {
            b.copy_from_slice(&flat[offset..offset + b.len()]);
            offset += b.len();
        }
        Ok(out)
    }

    pub fn zeros_like(&self) -> NetworkParams {
        let mut out = self.clone();
        out.buffers_mut().for_each(|b| b.fill(0.0));
        out
    }

    /// `self += alpha * other`. Panics on layout mismatch.
    pub fn axpy(&mut self, alpha: f64, other: &NetworkParams) {
        assert!(self.same_layout(other), "axpy: layout mismatch");
        for (a, b) in self.buffers_mut().zip(other.buffers()) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += alpha * y);
        }
    }

    pub fn scale_mut(&mut self, s: f64) {
        self.buffers_mut().for_each(|b| b.iter_mut().for_each(|x| *x *= s));
    }

    pub fn dot(&self, other: &NetworkParams) -> f64 {
        assert!(self.same_layout(other), "dot: layout mismatch");
        self.buffers()
            .zip(other.buffers())
            .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>())
            .sum()
    }

    pub fn norm(&self) -> f64 {
        self.buffers()
            .map(|b| b.iter().map(|x| x * x).sum::<f64>())
            .sum::<f64>()
            .sqrt()
    }

    /// Applies `f` to every (self, other) value pair in place.
    pub fn zip_apply(&mut self, other: &NetworkParams, mut f: impl FnMut(&mut f64, f64)) {
        assert!(self.same_layout(other), "zip_apply: layout mismatch");
        for (a, b) in self.buffers_mut().zip(other.buffers()) {
            a.iter_mut().zip(b).for_each(|(x, &y)| f(x, y));
        }
    }

    pub fn map_values(&mut self, mut f: impl FnMut(&mut f64)) {
        self.buffers_mut().for_each(|b| b.iter_mut().for_each(&mut f));
    }

    /// Named tensors with their logical shapes, for persistence. Conv weights
    /// are emitted in `C_out × C_in × k_h × k_w` row-major order.
    pub fn named_tensors(&self) -> Vec<(String, Vec<usize>, Vec<f64>)> {
        let mut out = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            let data = match &layer.weights {
                WeightTensor::Dense(m) => m.as_slice().to_vec(),
                WeightTensor::Conv(k) => k.to_oihw(),
            };
            out.push((format!("layer{i}.weight"), layer.weights.shape(), data));
            if let Some(b) = &layer.bias {
                out.push((format!("layer{i}.bias"), vec![b.len()], b.clone()));
            }
        }
        out
    }

    /// Inverse of [`NetworkParams::named_tensors`].
    pub fn from_named_tensors(
        arch: Architecture,
        tensors: &[(String, Vec<usize>, Vec<f64>)],
    ) -> Result<NetworkParams, ParamsError> {
        let lookup = |name: &str| {
            tensors
                .iter()
                .find(|(n, _, _)| n == name)
                .ok_or_else(|| ParamsError::Tensor {
                    name: name.to_string(),
                    reason: "missing".into(),
                })
        };
        let tensor_err = |name: &str, reason: String| ParamsError::Tensor {
            name: name.to_string(),
            reason,
        };
        let mut layers = Vec::with_capacity(arch.layers.len());
        for i in 0..arch.layers.len() {
            let wname = format!("layer{i}.weight");
            let (_, shape, data) = lookup(&wname)?;
            let weights = match shape.as_slice() {
                &[rows, cols] => WeightTensor::Dense(
                    Matrix::new(rows, cols, data.clone()).map_err(|e| tensor_err(&wname, e.to_string()))?,
                ),
                &[o, c, kh, kw] => WeightTensor::Conv(ConvKernel::from_oihw(o, c, kh, kw, data)?),
                other => return Err(tensor_err(&wname, format!("unsupported shape {other:?}"))),
            };
            let bias = if arch.bias {
                let bname = format!("layer{i}.bias");
                let (_, _, b) = lookup(&bname)?;
                if b.iter().any(|v| !v.is_finite()) {
                    return Err(tensor_err(&bname, "non-finite value".into()));
                }
                Some(b.clone())
            } else {
                None
            };
            layers.push(LayerWeights { weights, bias });
        }
        NetworkParams::new(arch, layers)
    }
}
