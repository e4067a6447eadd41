//! Newton–Schulz iteration-count ablation.

use std::io::Write;
use std::path::Path;

use fire_core::baselines::ReinitMethod;
use fire_core::metrics::{dfi, sfe};
use fire_core::orthogonalize::{conv_scale, dense_scale, newton_schulz_trajectory};
use fire_core::params::WeightTensor;
use fire_core::NetworkParams;
use fire_core::NsCoefficients;

use crate::config::ExperimentConfig;
use crate::error::{io_err, HarnessError, Result};
use crate::records::MetricRecord;
use crate::runner::{last_pre_reset_params, run_experiment};

pub const TRAJECTORY_SCHEMA_LINE: &str = "# fire-trajectory schema v1";
pub const TRAJECTORY_FILE: &str = "ablation_trajectory.csv";

/// Absolute slack for comparing converged trajectory values, which settle
/// into round-off noise around 1e-30.
pub const TRAJECTORY_ROUNDOFF: f64 = 1e-12;

/// `values[1..]` never increases by more than round-off.
pub fn nonincreasing_after_first(values: &[f64]) -> bool {
    values.len() < 2 || values[1..].windows(2).all(|w| w[1] <= w[0] + TRAJECTORY_ROUNDOFF)
}

/// `values[1]` is the largest of `values[1..]`.
pub fn peaks_at_first(values: &[f64]) -> bool {
    values.len() < 2 || values[2..].iter().all(|v| *v <= values[1])
}

/// DfI of the Newton–Schulz iterate and SFE between the layer and its FIRE
/// output after `iteration` steps. Conv layers average over slices.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryPoint {
    pub run_id: String,
    pub seed: u64,
    pub layer: usize,
    pub iteration: usize,
    pub dfi: f64,
    pub sfe: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationResult {
    pub records: Vec<MetricRecord>,
    pub trajectory: Vec<TrajectoryPoint>,
}

/// Trajectory of every layer of `params` for iterations `0..=max_iter`.
pub fn weight_trajectory(
    params: &NetworkParams,
    max_iter: usize,
    coeffs: &NsCoefficients,
) -> Result<Vec<Vec<(f64, f64)>>> {
    let mut out = Vec::with_capacity(params.num_layers());
    for layer in &params.layers {
        let (mats, scale) = match &layer.weights {
            WeightTensor::Dense(w) => (vec![w.clone()], dense_scale(w.rows(), w.cols())),
            WeightTensor::Conv(k) => {
                let (kh, kw) = k.kernel_size();
                (
                    k.slices().to_vec(),
                    conv_scale(k.out_channels(), k.in_channels(), kh, kw),
                )
            }
        };
        let mut acc = vec![(0.0, 0.0); max_iter + 1];
        for w in &mats {
            let traj = newton_schulz_trajectory(w, max_iter, coeffs)?;
            for (slot, x) in acc.iter_mut().zip(&traj) {
                slot.0 += dfi(x);
                slot.1 += sfe(w, &x.scale(scale))?;
            }
        }
        let n = mats.len() as f64;
        out.push(acc.into_iter().map(|(d, s)| (d / n, s / n)).collect());
    }
    Ok(out)
}

/// One FIRE run per entry of `iters_list`, plus the SFE/DfI trajectory of
/// each run's last pre-reset weights up to the largest iteration count.
pub fn run_ablation_iters(cfg: &ExperimentConfig, iters_list: &[usize]) -> Result<AblationResult> {
    if iters_list.is_empty() {
        return Err(HarnessError::Config("iteration list is empty".into()));
    }
    let max_iter = *iters_list.iter().max().expect("nonempty");
    let mut records = Vec::new();
    let mut trajectory = Vec::new();
    for &iters in iters_list {
        let mut c = cfg.clone();
        c.reinit.method = ReinitMethod::Fire;
        c.reinit.iters = iters;
        records.extend(run_experiment(&c)?);
        let coeffs = c.reinit.ns_coefficients();
        for &seed in &c.seeds {
            let params = last_pre_reset_params(&c, seed)?;
            for (layer, points) in weight_trajectory(&params, max_iter, &coeffs)?.into_iter().enumerate() {
                for (iteration, (d, s)) in points.into_iter().enumerate() {
                    trajectory.push(TrajectoryPoint {
                        run_id: c.run_id(seed),
                        seed,
                        layer,
                        iteration,
                        dfi: d,
                        sfe: s,
                    });
                }
            }
        }
    }
    write_trajectory(&cfg.resolved_output_dir().join(TRAJECTORY_FILE), &trajectory)?;
    Ok(AblationResult { records, trajectory })
}

pub fn write_trajectory(path: &Path, points: &[TrajectoryPoint]) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(io_err(path))?;
    let mut text = format!("{TRAJECTORY_SCHEMA_LINE}\nrun_id,seed,layer,iteration,dfi,sfe\n");
    for p in points {
        text.push_str(&format!(
            "{},{},{},{},{},{}\n",
            p.run_id, p.seed, p.layer, p.iteration, p.dfi, p.sfe
        ));
    }
    f.write_all(text.as_bytes()).map_err(io_err(path))
}
