//! Stability and plasticity measurements, and numerical checks of the
//! inequalities that tie them to feature drift, curvature, effective rank
//! and neuron activity.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{polar_orthogonal_factor_exact, spectral_norm, svd_small, LinalgError, Matrix, RANK_TOLERANCE};
use crate::nn::{empirical_activity_scores, forward, hessian_sigma_max, LossKind, NnError, Targets};
use crate::params::{LayerWeights, NetworkParams, ParamsError, WeightTensor};

/// Absolute slack used by every bound check.
pub const BOUND_SLACK: f64 = 1e-9;
pub const DEFAULT_TAU: f64 = 0.025;
pub const DEFAULT_DELTA: f64 = 0.01;
/// Largest `‖ZᵀZ/n − I‖_max` accepted as a whitened batch.
pub const WHITENING_TOLERANCE: f64 = 1e-8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("shape mismatch: {left:?} vs {right:?}")]
    ShapeMismatch {
        left: (usize, usize),
        right: (usize, usize),
    },
    #[error(transparent)]
    Params(#[from] ParamsError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("features are all zero")]
    ZeroFeatures,
    #[error("spectrum is all zero")]
    AllZeroSpectrum,
    #[error("delta {0} outside (0, 1)")]
    InvalidDelta(f64),
    #[error("layer index {index} outside 1..={layers}")]
    LayerIndex { index: usize, layers: usize },
    #[error("bound not applicable: {0}")]
    NotApplicable(String),
    #[error("unsupported input: {0}")]
    Unsupported(String),
    #[error("batch is not whitened (max deviation {0:e})")]
    NotWhitened(f64),
}

/// Verdict of one inequality check: `holds ⇔ measured ≤ bound + 1e−9`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundCheck {
    pub measured: f64,
    pub bound: f64,
    pub holds: bool,
    pub context: String,
}

impl BoundCheck {
    pub fn new(measured: f64, bound: f64, context: impl Into<String>) -> Self {
        Self {
            measured,
            bound,
            holds: measured <= bound + BOUND_SLACK,
            context: context.into(),
        }
    }
}

impl fmt::Display for BoundCheck {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} measured={:.6e} bound={:.6e} [{}]",
            if self.holds { "ok" } else { "VIOLATED" },
            self.measured,
            self.bound,
            self.context
        )
    }
}

fn same_shape(a: &Matrix, b: &Matrix) -> Result<(), MetricsError> {
    if a.shape() != b.shape() {
        return Err(MetricsError::ShapeMismatch {
            left: a.shape(),
            right: b.shape(),
        });
    }
    Ok(())
}

/// Squared Frobenius error `‖W − W̃‖²_F`.
pub fn sfe(w: &Matrix, w_tilde: &Matrix) -> Result<f64, MetricsError> {
    same_shape(w, w_tilde)?;
    Ok(w.as_slice()
        .iter()
        .zip(w_tilde.as_slice())
        .map(|(a, b)| (a - b) * (a - b))
        .sum())
}

/// Sum of per-layer SFE over weight tensors; biases are excluded.
pub fn sfe_network(a: &NetworkParams, b: &NetworkParams) -> Result<f64, MetricsError> {
    a.ensure_same_layout(b)?;
    let mut total = 0.0;
    for (la, lb) in a.layers.iter().zip(&b.layers) {
        for (ma, mb) in la.weights.matrices().iter().zip(lb.weights.matrices()) {
            total += sfe(ma, mb)?;
        }
    }
    Ok(total)
}

/// Squared Frobenius norm of all weight tensors (biases excluded).
pub fn weight_norm_sq(params: &NetworkParams) -> f64 {
    params
        .layers
        .iter()
        .flat_map(|l| l.weights.matrices())
        .map(Matrix::frobenius_norm_sq)
        .sum()
}

fn gram_deviation(g: &Matrix) -> f64 {
    let mut total = 0.0;
    for r in 0..g.rows() {
        for (c, v) in g.row(r).iter().enumerate() {
            let d = if r == c { v - 1.0 } else { *v };
            total += d * d;
        }
    }
    total
}

/// Deviation from isometry `‖WᵀW − I‖²_F`, with the Gram matrix formed on
/// the smaller dimension.
pub fn dfi(w: &Matrix) -> f64 {
    gram_deviation(&w.gram_small())
}

/// `‖WᵀW − I‖²_F` on the column Gram regardless of orientation.
pub fn dfi_columns(w: &Matrix) -> f64 {
    gram_deviation(&w.gram())
}

/// Layer DfI; conv layers report the mean over spatial slices.
pub fn layer_dfi(layer: &LayerWeights) -> f64 {
    let mats = layer.weights.matrices();
    mats.iter().map(dfi).sum::<f64>() / mats.len() as f64
}

/// `HHᵀ / ‖H‖²_F`.
pub fn normalized_feature_covariance(h: &Matrix) -> Result<Matrix, MetricsError> {
    let norm_sq = h.frobenius_norm_sq();
    if norm_sq == 0.0 {
        return Err(MetricsError::ZeroFeatures);
    }
    Ok(h.matmul_t(h).scale(1.0 / norm_sq))
}

/// Smallest `k` whose top-`k` singular values hold a `1 − δ` share of the total.
pub fn srank(singular_values: &[f64], delta: f64) -> Result<usize, MetricsError> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(MetricsError::InvalidDelta(delta));
    }
    let total: f64 = singular_values.iter().sum();
    if !(total > 0.0) {
        return Err(MetricsError::AllZeroSpectrum);
    }
    let mut cum = 0.0;
    for (k, s) in singular_values.iter().enumerate() {
        cum += s;
        if cum / total >= 1.0 - delta {
            return Ok(k + 1);
        }
    }
    Ok(singular_values.len())
}

/// Singular values of `h`, computed from the eigenvalues of its smaller Gram.
pub fn feature_singular_values(h: &Matrix) -> Result<Vec<f64>, MetricsError> {
    let svd = svd_small(&h.gram_small())?;
    Ok(svd.singular_values.iter().map(|v| v.max(0.0).sqrt()).collect())
}

/// Activity scores `s_j = ‖w_j‖ / mean_k ‖w_k‖` over the columns of `w`.
pub fn activity_scores_closed_form(w: &Matrix) -> Result<Vec<f64>, MetricsError> {
    let norms = w.column_norms();
    let mean = norms.iter().sum::<f64>() / norms.len() as f64;
    if mean == 0.0 {
        return Err(MetricsError::ZeroFeatures);
    }
    Ok(norms.iter().map(|n| n / mean).collect())
}

/// Number of scores strictly below `tau`.
pub fn dormant_count(scores: &[f64], tau: f64) -> usize {
    scores.iter().filter(|&&s| s < tau).count()
}

/// Largest DfI that still rules out `tau`-dormant units.
pub fn corollary_dfi_threshold(tau: f64) -> f64 {
    let r = (1.0 - tau * tau) / (1.0 + tau * tau);
    r * r
}

fn largest_singular_value(m: &Matrix) -> Result<f64, MetricsError> {
    let est = spectral_norm(m, 1e-13, 20_000);
    if est.converged {
        Ok(est.value)
    } else {
        Ok(svd_small(m)?.singular_values[0])
    }
}

fn dense_bias_free(params: &NetworkParams, what: &str) -> Result<Vec<Matrix>, MetricsError> {
    params
        .layers
        .iter()
        .enumerate()
        .map(|(i, l)| match (&l.weights, &l.bias) {
            (WeightTensor::Dense(w), None) => Ok(w.clone()),
            (WeightTensor::Conv(_), _) => Err(MetricsError::Unsupported(format!("{what}: layer {i} is convolutional"))),
            (_, Some(_)) => Err(MetricsError::Unsupported(format!("{what}: layer {i} has a bias"))),
        })
        .collect()
}

/// Feature-covariance drift at `depth` (1-based) against the bound
/// `16‖Z‖²/m² · (Π_{k≤ℓ} B_k)² · Σ_{j≤ℓ} B_j⁻² · SFE(Θ, Θ̃)`.
pub fn check_theorem1(
    theta: &NetworkParams,
    theta_tilde: &NetworkParams,
    z: &Matrix,
    depth: usize,
) -> Result<BoundCheck, MetricsError> {
    theta.ensure_same_layout(theta_tilde)?;
    let ws = dense_bias_free(theta, "feature-drift bound")?;
    let wts = dense_bias_free(theta_tilde, "feature-drift bound")?;
    if depth == 0 || depth > ws.len() {
        return Err(MetricsError::LayerIndex {
            index: depth,
            layers: ws.len(),
        });
    }
    let h = &forward(theta, z)?.post[depth - 1];
    let ht = &forward(theta_tilde, z)?.post[depth - 1];
    let m = h.frobenius_norm().min(ht.frobenius_norm());
    if m == 0.0 {
        return Err(MetricsError::ZeroFeatures);
    }
    let c = normalized_feature_covariance(h)?;
    let ct = normalized_feature_covariance(ht)?;
    let measured = c.sub(&ct).frobenius_norm_sq();

    let mut b = Vec::with_capacity(depth);
    for (w, wt) in ws.iter().zip(&wts).take(depth) {
        b.push(largest_singular_value(w)?.max(largest_singular_value(wt)?));
    }
    // (Π B_k)² Σ_j B_j⁻² written as Σ_j Π_{k≠j} B_k², which stays finite when some B_j = 0.
    let spectral_factor: f64 = (0..depth)
        .map(|j| {
            b.iter()
                .enumerate()
                .filter(|(k, _)| *k != j)
                .map(|(_, v)| v * v)
                .product::<f64>()
        })
        .sum();
    let total_sfe = sfe_network(theta, theta_tilde)?;
    let bound = 16.0 * z.frobenius_norm_sq() / (m * m) * spectral_factor * total_sfe;
    Ok(BoundCheck::new(
        measured,
        bound,
        format!("feature drift depth={depth} m={m:.4e} B={b:?} sfe={total_sfe:.4e}"),
    ))
}

/// `β Σ_k Π_{j≠k} ν_j + 2γ Σ_{k<ℓ} Π_{j∉{k,ℓ}} ν_j`.
pub fn theorem2_bound(nu: &[f64], beta: f64, gamma: f64) -> f64 {
    let l = nu.len();
    let prod_except = |skip: &[usize]| -> f64 {
        nu.iter()
            .enumerate()
            .filter(|(j, _)| !skip.contains(j))
            .map(|(_, v)| v)
            .product()
    };
    let first: f64 = (0..l).map(|k| prod_except(&[k])).sum();
    let mut second = 0.0;
    for k in 0..l {
        for m in k + 1..l {
            second += prod_except(&[k, m]);
        }
    }
    beta * first + 2.0 * gamma * second
}

/// Rotates `z` so that `ZᵀZ/n = I` exactly (up to rounding).
pub fn whiten(z: &Matrix) -> Result<Matrix, MetricsError> {
    let n = z.rows() as f64;
    let cov = z.gram().scale(1.0 / n);
    let svd = svd_small(&cov)?;
    let smallest = *svd.singular_values.last().expect("nonempty");
    if !(smallest > RANK_TOLERANCE * svd.singular_values[0]) {
        return Err(MetricsError::Linalg(LinalgError::RankDeficient {
            smallest,
            threshold: RANK_TOLERANCE * svd.singular_values[0],
        }));
    }
    let mut u_scaled = svd.u.clone();
    for r in 0..u_scaled.rows() {
        for (v, s) in u_scaled.row_mut(r).iter_mut().zip(&svd.singular_values) {
            *v /= s.sqrt();
        }
    }
    Ok(z.matmul(&u_scaled.matmul_t(&svd.u)))
}

/// `max |ZᵀZ/n − I|`.
pub fn whitening_error(z: &Matrix) -> f64 {
    let cov = z.gram().scale(1.0 / z.rows() as f64);
    cov.max_abs_diff(&Matrix::identity(cov.rows()))
}

/// Hessian spectral norm against the DfI curvature bound, for a bias-free
/// dense network under squared loss on a whitened batch.
pub fn check_theorem2(
    params: &NetworkParams,
    z: &Matrix,
    targets: &Targets,
    loss: LossKind,
) -> Result<BoundCheck, MetricsError> {
    if loss != LossKind::Squared {
        return Err(MetricsError::Unsupported("curvature bound needs squared loss".into()));
    }
    let ws = dense_bias_free(params, "curvature bound")?;
    let werr = whitening_error(z);
    if werr > WHITENING_TOLERANCE {
        return Err(MetricsError::NotWhitened(werr));
    }
    let out = forward(params, z)?;
    let u = out.output();
    let mut gamma: f64 = 0.0;
    for r in 0..u.rows() {
        let res: f64 = match targets {
            Targets::Values(y) => u.row(r).iter().zip(y.row(r)).map(|(a, b)| (a - b) * (a - b)).sum(),
            Targets::Classes(c) => u
                .row(r)
                .iter()
                .enumerate()
                .map(|(j, a)| {
                    let d = a - f64::from(u8::from(c[r] == j));
                    d * d
                })
                .sum(),
        };
        gamma = gamma.max(res.sqrt());
    }
    let nu: Vec<f64> = ws.iter().map(|w| 1.0 + dfi(w).sqrt()).collect();
    let bound = theorem2_bound(&nu, 1.0, gamma);
    let est = hessian_sigma_max(params, z, targets, loss, 1e-10, 5_000)?;
    Ok(BoundCheck::new(
        est.value,
        bound,
        format!(
            "curvature nu={nu:?} gamma={gamma:.4e} power_iters={} converged={}",
            est.iterations, est.converged
        ),
    ))
}

/// `⌈x⌉` that ignores rounding noise just above an integer.
fn robust_ceil(x: f64) -> f64 {
    (x - 1e-9 * x.abs().max(1.0)).ceil()
}

/// Effective-rank lower bound for `Φ = ZW`, encoded as `−srank(Φ) ≤ −bound`.
pub fn check_theorem3(w: &Matrix, z: &Matrix, delta: f64) -> Result<BoundCheck, MetricsError> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(MetricsError::InvalidDelta(delta));
    }
    if w.rows() < w.cols() {
        return Err(MetricsError::NotApplicable(format!(
            "W is {}x{}, needs rows >= cols",
            w.rows(),
            w.cols()
        )));
    }
    if z.cols() != w.rows() {
        return Err(MetricsError::ShapeMismatch {
            left: z.shape(),
            right: w.shape(),
        });
    }
    let eps = dfi_columns(w).sqrt();
    if eps >= 1.0 {
        return Err(MetricsError::NotApplicable(format!("epsilon {eps:.4} >= 1")));
    }
    let q = polar_orthogonal_factor_exact(w)?;
    let sigma_z = z.gram().scale(1.0 / z.rows() as f64);
    let m = q.t_matmul(&sigma_z.matmul(&q));
    let eta = svd_small(&m)?.singular_values;
    let eta_max = eta[0];
    if eta_max == 0.0 {
        return Err(MetricsError::AllZeroSpectrum);
    }
    let positive: Vec<f64> = eta.iter().copied().filter(|&e| e > RANK_TOLERANCE * eta_max).collect();
    let d = positive.len();
    let eta_min = *positive.last().expect("eta_max is positive");

    let phi = z.matmul(w);
    let sv = svd_small(&phi)?.singular_values;
    let sv_max = sv[0];
    let nonzero: Vec<f64> = sv.into_iter().filter(|&s| s > RANK_TOLERANCE * sv_max).collect();
    let measured_rank = srank(&nonzero, delta)?;

    let kappa = ((1.0 + eps) / (1.0 - eps)).sqrt() * (eta_max / eta_min).sqrt();
    let real = (1.0 - delta) * d as f64 / (delta * kappa + (1.0 - delta));
    let bound = robust_ceil(real);
    Ok(BoundCheck::new(
        -(measured_rank as f64),
        -bound,
        format!(
            "effective rank srank={measured_rank} d={d} eps={eps:.4e} eta_ratio={:.4e} delta={delta}",
            eta_max / eta_min
        ),
    ))
}

/// Activity-score interval `√((1−ε)/(1+ε)) ≤ s_j ≤ √((1+ε)/(1−ε))`, with
/// `ε² = ‖WᵀW − I‖²_F` on the column Gram. `measured` is the worst excursion
/// outside the interval, so the bound is 0.
pub fn check_theorem4(w: &Matrix) -> Result<BoundCheck, MetricsError> {
    let eps = dfi_columns(w).sqrt();
    if eps >= 1.0 {
        return Err(MetricsError::NotApplicable(format!("epsilon {eps:.4} >= 1")));
    }
    let scores = activity_scores_closed_form(w)?;
    let lower = ((1.0 - eps) / (1.0 + eps)).sqrt();
    let upper = ((1.0 + eps) / (1.0 - eps)).sqrt();
    let hi = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lo = scores.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(BoundCheck::new(
        (hi - upper).max(lower - lo),
        0.0,
        format!("activity eps={eps:.4e} interval=[{lower:.6}, {upper:.6}] scores=[{lo:.6}, {hi:.6}]"),
    ))
}

/// Eigenvalues of the smaller Gram lie in `[1 − √DfI, 1 + √DfI]`.
pub fn check_spectral_lemma(w: &Matrix) -> Result<BoundCheck, MetricsError> {
    let eps = dfi(w).sqrt();
    let eig = svd_small(&w.gram_small())?.singular_values;
    let hi = eig[0];
    let lo = *eig.last().expect("nonempty");
    Ok(BoundCheck::new(
        (hi - (1.0 + eps)).max((1.0 - eps) - lo),
        0.0,
        format!("gram spectrum eps={eps:.4e} eig=[{lo:.6e}, {hi:.6e}]"),
    ))
}

/// Plasticity summary of one network snapshot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlasticityReport {
    pub dfi: Vec<f64>,
    /// SFE against the reference weights, when one was given.
    pub sfe: Option<f64>,
    /// SFE divided by the reference's squared weight norm.
    pub sfe_normalized: Option<f64>,
    pub srank: Vec<usize>,
    pub activity_scores: Vec<Vec<f64>>,
    pub dormant: Vec<usize>,
    pub hessian_sigma_max: Option<f64>,
}

impl PlasticityReport {
    pub fn mean_dfi(&self) -> f64 {
        self.dfi.iter().sum::<f64>() / self.dfi.len() as f64
    }

    pub fn total_dormant(&self) -> usize {
        self.dormant.iter().sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReportOptions {
    pub delta: f64,
    pub tau: f64,
}

impl Default for ReportOptions {
    fn default() -> Self {
        Self {
            delta: DEFAULT_DELTA,
            tau: DEFAULT_TAU,
        }
    }
}

/// DfI, SFE, srank, activity scores and dormant counts per layer. With a
/// probe batch, srank and activity come from the features it produces;
/// without one they come from the weights (closed-form scores over the
/// incoming weights of each unit). The Hessian entry is left for the caller.
pub fn plasticity_report(
    params: &NetworkParams,
    probe: Option<&Matrix>,
    reference: Option<&NetworkParams>,
    opts: ReportOptions,
) -> Result<PlasticityReport, MetricsError> {
    let dfi_values = params.layers.iter().map(layer_dfi).collect();
    let (sfe_value, sfe_normalized) = match reference {
        Some(r) => {
            let s = sfe_network(r, params)?;
            let norm = weight_norm_sq(r);
            (Some(s), Some(if norm > 0.0 { s / norm } else { 0.0 }))
        }
        None => (None, None),
    };
    let (srank_values, scores) = match probe {
        Some(batch) => {
            let cache = forward(params, batch)?;
            let mut ranks = Vec::with_capacity(params.num_layers());
            for h in &cache.post {
                let sv = feature_singular_values(h)?;
                ranks.push(srank(&sv, opts.delta).unwrap_or(0));
            }
            (ranks, empirical_activity_scores(&cache, params))
        }
        None => {
            let mut ranks = Vec::with_capacity(params.num_layers());
            let mut scores = Vec::with_capacity(params.num_layers());
            for layer in &params.layers {
                let rows = unit_weight_rows(layer);
                let sv = svd_small(&rows)?.singular_values;
                ranks.push(srank(&sv, opts.delta).unwrap_or(0));
                scores.push(activity_scores_closed_form(&rows.transpose()).unwrap_or_else(|_| vec![0.0; rows.rows()]));
            }
            (ranks, scores)
        }
    };
    let dormant = scores.iter().map(|s| dormant_count(s, opts.tau)).collect();
    Ok(PlasticityReport {
        dfi: dfi_values,
        sfe: sfe_value,
        sfe_normalized,
        srank: srank_values,
        activity_scores: scores,
        dormant,
        hessian_sigma_max: None,
    })
}

/// One row per unit holding all its incoming weights.
fn unit_weight_rows(layer: &LayerWeights) -> Matrix {
    match &layer.weights {
        WeightTensor::Dense(w) => w.clone(),
        WeightTensor::Conv(k) => {
            let slices = k.slices();
            let cin = k.in_channels();
            Matrix::from_fn(k.out_channels(), cin * slices.len(), |o, c| {
                slices[c / cin][(o, c % cin)]
            })
        }
    }
}
