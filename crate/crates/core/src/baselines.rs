//! Reinitializers and regularizers used as comparison points for FIRE.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::derive_seed;
use crate::linalg::Matrix;
use crate::nn::{init_network, NnError};
use crate::orthogonalize::{fire_network, CoefficientSet, NsCoefficients, OrthoError};
use crate::params::{Architecture, InputShape, NetworkParams, ParamsError, WeightTensor};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BaselineError {
    #[error(transparent)]
    Params(#[from] ParamsError),
    #[error("invalid spec: {0}")]
    InvalidSpec(String),
    #[error("l2_init regularization needs anchor weights")]
    MissingAnchor,
    #[error("activation statistics missing or malformed: {0}")]
    MissingStats(String),
    #[error(transparent)]
    Fire(#[from] OrthoError),
    #[error(transparent)]
    Init(#[from] Box<NnError>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReinitMethod {
    #[default]
    None,
    Fire,
    FullReset,
    ShrinkPerturb,
    Redo,
}

impl ReinitMethod {
    pub fn name(&self) -> &'static str {
        match self {
            ReinitMethod::None => "none",
            ReinitMethod::Fire => "fire",
            ReinitMethod::FullReset => "full_reset",
            ReinitMethod::ShrinkPerturb => "shrink_perturb",
            ReinitMethod::Redo => "redo",
        }
    }
}

/// What happens to the weights when a new chunk of data arrives.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReinitSpec {
    pub method: ReinitMethod,
    /// Shrink & Perturb mixing weight toward the fresh draw.
    pub lambda: f64,
    /// Newton–Schulz iterations for FIRE.
    pub iters: usize,
    pub coefficients: CoefficientSet,
    /// ReDo dormancy threshold.
    pub tau: f64,
    pub seed: u64,
    /// Layers FIRE touches; all layers when absent.
    pub layer_mask: Option<Vec<bool>>,
}

impl Default for ReinitSpec {
    fn default() -> Self {
        Self {
            method: ReinitMethod::None,
            lambda: 0.8,
            iters: 10,
            coefficients: CoefficientSet::PaperCubic,
            tau: 0.025,
            seed: 0,
            layer_mask: None,
        }
    }
}

impl ReinitSpec {
    pub fn validate(&self) -> Result<(), BaselineError> {
        let bad = |m: String| Err(BaselineError::InvalidSpec(m));
        if !(0.0..=1.0).contains(&self.lambda) {
            return bad(format!("lambda {} outside [0, 1]", self.lambda));
        }
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return bad(format!("tau {} outside (0, 1)", self.tau));
        }
        if self.method == ReinitMethod::Fire && self.iters == 0 {
            return bad("fire needs at least one iteration".into());
        }
        if self.coefficients == CoefficientSet::Custom {
            return bad("custom coefficients cannot be set from a spec".into());
        }
        Ok(())
    }

    pub fn ns_coefficients(&self) -> NsCoefficients {
        match self.coefficients {
            CoefficientSet::AppendixQuintic => NsCoefficients::APPENDIX_QUINTIC,
            CoefficientSet::MuonQuintic => NsCoefficients::MUON_QUINTIC,
            CoefficientSet::PaperCubic | CoefficientSet::Custom => NsCoefficients::PAPER_CUBIC,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegularizerKind {
    #[default]
    None,
    L2Init,
    Parseval,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RegularizerSpec {
    pub kind: RegularizerKind,
    pub strength: f64,
    pub parseval_scale: f64,
}

impl Default for RegularizerSpec {
    fn default() -> Self {
        Self {
            kind: RegularizerKind::None,
            strength: 0.0,
            parseval_scale: 1.0,
        }
    }
}

impl RegularizerSpec {
    pub fn validate(&self) -> Result<(), BaselineError> {
        if !(self.strength >= 0.0 && self.strength.is_finite()) {
            return Err(BaselineError::InvalidSpec(format!(
                "strength {} must be finite and nonnegative",
                self.strength
            )));
        }
        if !(self.parseval_scale > 0.0) {
            return Err(BaselineError::InvalidSpec(format!(
                "parseval_scale {} must be positive",
                self.parseval_scale
            )));
        }
        Ok(())
    }
}

/// Fresh parameters from the standard initializer.
pub fn full_reset(arch: &Architecture, seed: u64) -> Result<NetworkParams, BaselineError> {
    init_network(arch, seed).map_err(|e| BaselineError::Init(Box::new(e)))
}

/// `(1−λ)θ + λθ₀`, entrywise over weights and biases.
pub fn shrink_perturb(
    theta: &NetworkParams,
    theta0: &NetworkParams,
    lambda: f64,
) -> Result<NetworkParams, BaselineError> {
    theta.ensure_same_layout(theta0)?;
    if !(0.0..=1.0).contains(&lambda) {
        return Err(BaselineError::InvalidSpec(format!("lambda {lambda} outside [0, 1]")));
    }
    let mut out = theta.clone();
    out.zip_apply(theta0, |t, t0| *t = (1.0 - lambda) * *t + lambda * t0);
    Ok(out)
}

/// Penalty `λ Σ ‖W − W₀‖²_F` over weight matrices and its gradient
/// (zero on biases).
pub fn l2_init_gradient(
    theta: &NetworkParams,
    theta0: &NetworkParams,
    strength: f64,
) -> Result<(f64, NetworkParams), BaselineError> {
    theta.ensure_same_layout(theta0)?;
    let mut grad = theta.zeros_like();
    let mut penalty = 0.0;
    for ((g, t), t0) in grad.layers.iter_mut().zip(&theta.layers).zip(&theta0.layers) {
        let mats = t.weights.matrices().iter().zip(t0.weights.matrices());
        for (gm, (w, w0)) in g.weights.matrices_mut().iter_mut().zip(mats) {
            let diff = w.sub(w0);
            penalty += strength * diff.frobenius_norm_sq();
            *gm = diff.scale(2.0 * strength);
        }
    }
    Ok((penalty, grad))
}

/// Penalty `λ‖WWᵀ − sI‖²_F` and its gradient `4λ(WWᵀ − sI)W`.
pub fn parseval_gradient(w: &Matrix, strength: f64, s: f64) -> (f64, Matrix) {
    let mut dev = w.matmul_t(w);
    for i in 0..dev.rows() {
        dev[(i, i)] -= s;
    }
    let penalty = strength * dev.frobenius_norm_sq();
    (penalty, dev.matmul(w).scale(4.0 * strength))
}

/// Regularizer penalty and gradient for a whole network. Parseval applies to
/// every weight matrix except the output layer's.
pub fn regularizer_gradient(
    params: &NetworkParams,
    anchor: Option<&NetworkParams>,
    spec: &RegularizerSpec,
) -> Result<(f64, Option<NetworkParams>), BaselineError> {
    if spec.strength == 0.0 {
        return Ok((0.0, None));
    }
    match spec.kind {
        RegularizerKind::None => Ok((0.0, None)),
        RegularizerKind::L2Init => {
            let anchor = anchor.ok_or(BaselineError::MissingAnchor)?;
            let (p, g) = l2_init_gradient(params, anchor, spec.strength)?;
            Ok((p, Some(g)))
        }
        RegularizerKind::Parseval => {
            let mut grad = params.zeros_like();
            let mut penalty = 0.0;
            let hidden = params.num_layers() - 1;
            for (g, layer) in grad.layers.iter_mut().zip(&params.layers).take(hidden) {
                for (gm, w) in g.weights.matrices_mut().iter_mut().zip(layer.weights.matrices()) {
                    let (p, gw) = parseval_gradient(w, spec.strength, spec.parseval_scale);
                    penalty += p;
                    *gm = gw;
                }
            }
            Ok((penalty, Some(grad)))
        }
    }
}

fn units_of(t: &WeightTensor) -> usize {
    match t {
        WeightTensor::Dense(w) => w.rows(),
        WeightTensor::Conv(k) => k.out_channels(),
    }
}

/// ReDo recycling: every hidden unit whose score is strictly below `tau`
/// gets fresh He-initialized incoming weights, a zero bias, and zeroed
/// outgoing weights. `scores[ℓ]` holds per-unit scores of layer ℓ; entries
/// for the output layer, if present, are ignored.
pub fn redo_reset(
    params: &NetworkParams,
    scores: &[Vec<f64>],
    tau: f64,
    seed: u64,
) -> Result<NetworkParams, BaselineError> {
    let hidden = params.num_layers() - 1;
    if scores.len() < hidden {
        return Err(BaselineError::MissingStats(format!(
            "{} score vectors for {hidden} hidden layers",
            scores.len()
        )));
    }
    let geometry = params.arch.geometry()?;
    let mut out = params.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for l in 0..hidden {
        let units = units_of(&params.layers[l].weights);
        if scores[l].len() != units {
            return Err(BaselineError::MissingStats(format!(
                "layer {l}: {} scores for {units} units",
                scores[l].len()
            )));
        }
        let std = (2.0 / geometry[l].fan_in() as f64).sqrt();
        let spatial = match geometry[l].output {
            InputShape::Image { height, width, .. } => height * width,
            InputShape::Flat { .. } => 1,
        };
        for (j, &s) in scores[l].iter().enumerate() {
            if !(s < tau) {
                continue;
            }
            let layer = &mut out.layers[l];
            for m in layer.weights.matrices_mut() {
                let fresh = Matrix::random_gaussian(1, m.cols(), std, &mut rng);
                m.row_mut(j).copy_from_slice(fresh.as_slice());
            }
            if let Some(b) = layer.bias.as_mut() {
                b[j] = 0.0;
            }
            let next = &mut out.layers[l + 1];
            let cols = match &next.weights {
                WeightTensor::Dense(_) => j * spatial..(j + 1) * spatial,
                WeightTensor::Conv(_) => j..j + 1,
            };
            for m in next.weights.matrices_mut() {
                for r in 0..m.rows() {
                    m.row_mut(r)[cols.clone()].fill(0.0);
                }
            }
        }
    }
    Ok(out)
}

/// Applies `spec` at reinitialization event `event` (the index of the chunk
/// being entered). Random draws depend only on `(spec.seed, event)`.
pub fn reinitialize(
    params: &NetworkParams,
    spec: &ReinitSpec,
    event: u64,
    activity: Option<&[Vec<f64>]>,
) -> Result<NetworkParams, BaselineError> {
    match spec.method {
        ReinitMethod::None => Ok(params.clone()),
        ReinitMethod::Fire => {
            let all = vec![true; params.num_layers()];
            let mask = spec.layer_mask.as_deref().unwrap_or(&all);
            Ok(fire_network(params, spec.iters, &spec.ns_coefficients(), mask)?)
        }
        ReinitMethod::FullReset => full_reset(&params.arch, derive_seed(spec.seed, 1, event)),
        ReinitMethod::ShrinkPerturb => {
            let theta0 = full_reset(&params.arch, derive_seed(spec.seed, 2, event))?;
            shrink_perturb(params, &theta0, spec.lambda)
        }
        ReinitMethod::Redo => {
            let scores = activity.ok_or_else(|| BaselineError::MissingStats("no activations given".into()))?;
            redo_reset(params, scores, spec.tau, derive_seed(spec.seed, 3, event))
        }
    }
}
