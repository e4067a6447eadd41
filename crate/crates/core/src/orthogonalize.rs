//! FIRE reinitialization: Newton–Schulz orthogonalization of trained weights.
//!
//! Each weight matrix is normalized by its Frobenius norm and pushed toward
//! the nearest matrix with orthonormal columns by the odd polynomial
//! iteration
//!
//! ```text
//! X₀     = W / ‖W‖_F
//! A      = Xₖᵀ Xₖ
//! Xₖ₊₁   = a·Xₖ + Xₖ·(b·A + c·A²)
//! ```
//!
//! Wide matrices are transposed first so the Gram matrix is always formed on
//! the smaller dimension. Dense layers are then rescaled by `√(d_out/d_in)`;
//! conv kernels are processed one spatial slice at a time and rescaled by
//! `√(C_out/C_in) / (k_h·k_w)`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::Matrix;
use crate::params::{ConvKernel, LayerWeights, NetworkParams, WeightTensor};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OrthoError {
    #[error("cannot orthogonalize an all-zero matrix")]
    ZeroMatrix,
    #[error("iteration count must be at least 1")]
    ZeroIterations,
    #[error("expected a {expected} layer")]
    WrongLayerKind { expected: &'static str },
    #[error("conv slice {slice}: {source}")]
    Slice {
        slice: usize,
        #[source]
        source: Box<OrthoError>,
    },
    #[error("layer {layer}: {source}")]
    Layer {
        layer: usize,
        #[source]
        source: Box<OrthoError>,
    },
    #[error("layer mask has {got} entries for {expected} layers")]
    MaskLength { got: usize, expected: usize },
    #[error("unknown coefficient set `{0}` (expected cubic, quintic or muon)")]
    UnknownCoefficients(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CoefficientSet {
    PaperCubic,
    AppendixQuintic,
    MuonQuintic,
    Custom,
}

/// Polynomial coefficients `(a, b, c)` of one Newton–Schulz step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NsCoefficients {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub label: CoefficientSet,
}

impl NsCoefficients {
    /// Two-term cubic `1.5X − 0.5X(XᵀX)`.
    pub const PAPER_CUBIC: Self = Self {
        a: 1.5,
        b: -0.5,
        c: 0.0,
        label: CoefficientSet::PaperCubic,
    };

    /// Rectangular quintic `2X − 1.5X(XᵀX) + 0.5X(XᵀX)²`.
    pub const APPENDIX_QUINTIC: Self = Self {
        a: 2.0,
        b: -1.5,
        c: 0.5,
        label: CoefficientSet::AppendixQuintic,
    };

    /// Muon's tuned quintic; fast but oscillates around 1 rather than converging.
    pub const MUON_QUINTIC: Self = Self {
        a: 3.4445,
        b: -4.7750,
        c: 2.0315,
        label: CoefficientSet::MuonQuintic,
    };

    pub fn custom(a: f64, b: f64, c: f64) -> Self {
        Self {
            a,
            b,
            c,
            label: CoefficientSet::Custom,
        }
    }

    /// Iteration count used for network reinitialization when none is given.
    pub fn default_iters(&self) -> usize {
        match self.label {
            CoefficientSet::PaperCubic | CoefficientSet::Custom => 10,
            CoefficientSet::AppendixQuintic | CoefficientSet::MuonQuintic => 5,
        }
    }

    /// Scalar map applied to each singular value by one step.
    pub fn apply_scalar(&self, x: f64) -> f64 {
        let x2 = x * x;
        x * (self.a + self.b * x2 + self.c * x2 * x2)
    }
}

impl Default for NsCoefficients {
    fn default() -> Self {
        Self::PAPER_CUBIC
    }
}

impl FromStr for NsCoefficients {
    type Err = OrthoError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "cubic" | "paper_cubic" => Ok(Self::PAPER_CUBIC),
            "quintic" | "appendix_quintic" => Ok(Self::APPENDIX_QUINTIC),
            "muon" | "muon_quintic" => Ok(Self::MUON_QUINTIC),
            other => Err(OrthoError::UnknownCoefficients(other.to_string())),
        }
    }
}

impl fmt::Display for NsCoefficients {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.label {
            CoefficientSet::PaperCubic => write!(f, "cubic"),
            CoefficientSet::AppendixQuintic => write!(f, "quintic"),
            CoefficientSet::MuonQuintic => write!(f, "muon"),
            CoefficientSet::Custom => write!(f, "custom({}, {}, {})", self.a, self.b, self.c),
        }
    }
}

fn ns_step(x: &Matrix, coeffs: &NsCoefficients) -> Matrix {
    let gram = x.gram();
    let poly = if coeffs.c == 0.0 {
        gram.scale(coeffs.b)
    } else {
        let mut p = gram.matmul(&gram).scale(coeffs.c);
        p.axpy(coeffs.b, &gram);
        p
    };
    let mut next = x.matmul(&poly);
    next.axpy(coeffs.a, x);
    next
}

/// Every iterate `X₀ … X_iters` of the Newton–Schulz run, in the input's
/// orientation.
pub fn newton_schulz_trajectory(w: &Matrix, iters: usize, coeffs: &NsCoefficients) -> Result<Vec<Matrix>, OrthoError> {
    let norm = w.frobenius_norm();
    if norm == 0.0 {
        return Err(OrthoError::ZeroMatrix);
    }
    let wide = w.rows() < w.cols();
    let mut x = if wide { w.transpose() } else { w.clone() };
    x.scale_mut(1.0 / norm);
    let orient = |m: &Matrix| if wide { m.transpose() } else { m.clone() };

    let mut out = Vec::with_capacity(iters + 1);
    out.push(orient(&x));
    for _ in 0..iters {
        x = ns_step(&x, coeffs);
        out.push(orient(&x));
    }
    Ok(out)
}

/// Runs exactly `iters` Newton–Schulz steps from `W/‖W‖_F`.
pub fn newton_schulz(w: &Matrix, iters: usize, coeffs: &NsCoefficients) -> Result<Matrix, OrthoError> {
    let norm = w.frobenius_norm();
    if norm == 0.0 {
        return Err(OrthoError::ZeroMatrix);
    }
    let wide = w.rows() < w.cols();
    let mut x = if wide { w.transpose() } else { w.clone() };
    x.scale_mut(1.0 / norm);
    for _ in 0..iters {
        x = ns_step(&x, coeffs);
    }
    Ok(if wide { x.transpose() } else { x })
}

/// Output rescaling for a `d_out × d_in` dense weight.
pub fn dense_scale(d_out: usize, d_in: usize) -> f64 {
    (d_out as f64 / d_in as f64).sqrt()
}

/// Output rescaling for a conv kernel.
pub fn conv_scale(c_out: usize, c_in: usize, k_h: usize, k_w: usize) -> f64 {
    (c_out as f64 / c_in as f64).sqrt() / (k_h * k_w) as f64
}

/// FIRE on a dense `d_out × d_in` weight.
pub fn fire_dense(w: &Matrix, iters: usize, coeffs: &NsCoefficients) -> Result<Matrix, OrthoError> {
    if iters == 0 {
        return Err(OrthoError::ZeroIterations);
    }
    let mut q = newton_schulz(w, iters, coeffs)?;
    q.scale_mut(dense_scale(w.rows(), w.cols()));
    Ok(q)
}

/// FIRE on a conv layer: every spatial slice is orthogonalized on its own,
/// then all slices share the conv scale. The bias is copied unchanged.
pub fn fire_conv(layer: &LayerWeights, iters: usize, coeffs: &NsCoefficients) -> Result<LayerWeights, OrthoError> {
    let WeightTensor::Conv(kernel) = &layer.weights else {
        return Err(OrthoError::WrongLayerKind { expected: "conv" });
    };
    if iters == 0 {
        return Err(OrthoError::ZeroIterations);
    }
    let (kh, kw) = kernel.kernel_size();
    let scale = conv_scale(kernel.out_channels(), kernel.in_channels(), kh, kw);
    let slices = kernel
        .slices()
        .iter()
        .enumerate()
        .map(|(idx, s)| {
            let mut q = newton_schulz(s, iters, coeffs).map_err(|e| OrthoError::Slice {
                slice: idx,
                source: Box::new(e),
            })?;
            q.scale_mut(scale);
            Ok(q)
        })
        .collect::<Result<Vec<_>, OrthoError>>()?;
    let kernel = ConvKernel::new(kh, kw, slices).expect("slice layout is preserved");
    Ok(LayerWeights::conv(kernel, layer.bias.clone()))
}

/// FIRE on a single layer of either kind.
pub fn fire_layer(layer: &LayerWeights, iters: usize, coeffs: &NsCoefficients) -> Result<LayerWeights, OrthoError> {
    match &layer.weights {
        WeightTensor::Dense(w) => Ok(LayerWeights::dense(fire_dense(w, iters, coeffs)?, layer.bias.clone())),
        WeightTensor::Conv(_) => fire_conv(layer, iters, coeffs),
    }
}

/// Applies FIRE to every layer whose mask entry is `true`; other layers and
/// all biases are copied bit-for-bit.
pub fn fire_network(
    params: &NetworkParams,
    iters: usize,
    coeffs: &NsCoefficients,
    layer_mask: &[bool],
) -> Result<NetworkParams, OrthoError> {
    if layer_mask.len() != params.num_layers() {
        return Err(OrthoError::MaskLength {
            got: layer_mask.len(),
            expected: params.num_layers(),
        });
    }
    let layers = params
        .layers
        .iter()
        .zip(layer_mask)
        .enumerate()
        .map(|(idx, (layer, &on))| {
            if on {
                fire_layer(layer, iters, coeffs).map_err(|e| OrthoError::Layer {
                    layer: idx,
                    source: Box::new(e),
                })
            } else {
                Ok(layer.clone())
            }
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(NetworkParams {
        arch: params.arch.clone(),
        layers,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{polar_orthogonal_factor_exact, svd_small};
    use crate::metrics::dfi;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn gaussian(rows: usize, cols: usize, seed: u64) -> Matrix {
        Matrix::random_gaussian(rows, cols, 1.0, &mut ChaCha8Rng::seed_from_u64(seed))
    }

    #[test]
    fn coefficient_sets_match_published_values() {
        let c = NsCoefficients::PAPER_CUBIC;
        assert_eq!((c.a, c.b, c.c), (1.5, -0.5, 0.0));
        let q = NsCoefficients::APPENDIX_QUINTIC;
        assert_eq!((q.a, q.b, q.c), (2.0, -1.5, 0.5));
        let m = NsCoefficients::MUON_QUINTIC;
        assert_eq!((m.a, m.b, m.c), (3.4445, -4.7750, 2.0315));
        assert_eq!("muon".parse::<NsCoefficients>().unwrap(), m);
        assert!("septic".parse::<NsCoefficients>().is_err());
        assert_eq!(NsCoefficients::default().default_iters(), 10);
        assert_eq!(q.default_iters(), 5);
    }

    #[test]
    fn one_by_one_fixed_point() {
        let out = newton_schulz(&Matrix::from_rows(&[[0.5]]), 1, &NsCoefficients::PAPER_CUBIC).unwrap();
        assert_eq!(out[(0, 0)], 1.0);
    }

    #[test]
    fn zero_iterations_only_normalizes() {
        let out = newton_schulz(&Matrix::identity(2), 0, &NsCoefficients::PAPER_CUBIC).unwrap();
        let expected = Matrix::identity(2).scale(1.0 / 2f64.sqrt());
        assert!(out.max_abs_diff(&expected) < 1e-16);
    }

    #[test]
    fn zero_matrix_is_rejected() {
        assert_eq!(
            newton_schulz(&Matrix::zeros(3, 2), 3, &NsCoefficients::PAPER_CUBIC),
            Err(OrthoError::ZeroMatrix)
        );
        assert_eq!(
            fire_dense(&Matrix::identity(2), 0, &NsCoefficients::PAPER_CUBIC),
            Err(OrthoError::ZeroIterations)
        );
    }

    #[test]
    fn orthonormal_input_follows_scalar_recursion() {
        let q = polar_orthogonal_factor_exact(&gaussian(5, 3, 21)).unwrap();
        let out = newton_schulz(&q, 30, &NsCoefficients::PAPER_CUBIC).unwrap();
        // every singular value starts at 1/√3 and follows x ← 1.5x − 0.5x³
        let mut x = 1.0 / 3f64.sqrt();
        for _ in 0..30 {
            x = 1.5 * x - 0.5 * x * x * x;
        }
        assert!(out.max_abs_diff(&q.scale(x)) < 1e-12);
        assert!(out.max_abs_diff(&q) < 1e-4);
    }

    #[test]
    fn ten_iterations_reduce_dfi_on_random_input() {
        let w = gaussian(64, 32, 1);
        let rescaled = w.scale(32f64.sqrt() / w.frobenius_norm());
        let out = newton_schulz(&w, 10, &NsCoefficients::PAPER_CUBIC).unwrap();
        assert!(dfi(&out) < dfi(&rescaled));
    }

    #[test]
    fn wide_input_gets_orthonormal_rows() {
        let w = gaussian(3, 7, 2);
        let out = newton_schulz(&w, 60, &NsCoefficients::PAPER_CUBIC).unwrap();
        assert_eq!(out.shape(), (3, 7));
        assert!(out.matmul_t(&out).max_abs_diff(&Matrix::identity(3)) < 1e-9);
    }

    #[test]
    fn dense_scaling() {
        let w = gaussian(4, 2, 3);
        let ns = newton_schulz(&w, 30, &NsCoefficients::PAPER_CUBIC).unwrap();
        let fired = fire_dense(&w, 30, &NsCoefficients::PAPER_CUBIC).unwrap();
        assert!(fired.max_abs_diff(&ns.scale(2f64.sqrt())) < 1e-15);

        let q = polar_orthogonal_factor_exact(&gaussian(6, 6, 4)).unwrap();
        let fired = fire_dense(&q, 30, &NsCoefficients::PAPER_CUBIC).unwrap();
        assert!(fired.max_abs_diff(&q) < 1e-4);

        let fired = fire_dense(&gaussian(8, 8, 4), 30, &NsCoefficients::PAPER_CUBIC).unwrap();
        for s in svd_small(&fired).unwrap().singular_values {
            assert!((s - 1.0).abs() <= 1e-3, "singular value {s}");
        }
    }

    #[test]
    fn conv_scaling_and_slices() {
        assert!((conv_scale(8, 4, 3, 3) - 2f64.sqrt() / 9.0).abs() < 1e-16);

        let q = polar_orthogonal_factor_exact(&gaussian(4, 4, 5)).unwrap();
        let layer = LayerWeights::conv(ConvKernel::new(1, 1, vec![q.clone()]).unwrap(), Some(vec![1.0; 4]));
        let out = fire_conv(&layer, 30, &NsCoefficients::PAPER_CUBIC).unwrap();
        let WeightTensor::Conv(k) = &out.weights else {
            unreachable!()
        };
        assert!(k.slices()[0].max_abs_diff(&q) < 1e-4);
        assert_eq!(out.bias, layer.bias);

        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let slices = (0..9).map(|_| Matrix::random_gaussian(4, 4, 1.0, &mut rng)).collect();
        let layer = LayerWeights::conv(ConvKernel::new(3, 3, slices).unwrap(), None);
        let out = fire_conv(&layer, 30, &NsCoefficients::PAPER_CUBIC).unwrap();
        let WeightTensor::Conv(k) = &out.weights else {
            unreachable!()
        };
        let scale = conv_scale(4, 4, 3, 3);
        for s in k.slices() {
            assert!(dfi(&s.scale(1.0 / scale)) <= 1e-4);
        }
    }

    #[test]
    fn conv_errors_carry_slice_index() {
        let slices = vec![Matrix::identity(2), Matrix::zeros(2, 2)];
        let layer = LayerWeights::conv(ConvKernel::new(1, 2, slices).unwrap(), None);
        match fire_conv(&layer, 3, &NsCoefficients::PAPER_CUBIC) {
            Err(OrthoError::Slice { slice: 1, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
        let dense = LayerWeights::dense(Matrix::identity(2), None);
        assert!(matches!(
            fire_conv(&dense, 3, &NsCoefficients::PAPER_CUBIC),
            Err(OrthoError::WrongLayerKind { .. })
        ));
    }
}
