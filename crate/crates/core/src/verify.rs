//! Seeded randomized sweeps over the bound checks in [`crate::metrics`].

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::derive_seed;
use crate::linalg::{polar_orthogonal_factor_exact, Matrix};
use crate::metrics::{
    activity_scores_closed_form, check_spectral_lemma, check_theorem1, check_theorem2, check_theorem3, check_theorem4,
    corollary_dfi_threshold, dfi_columns, dormant_count, whiten, BoundCheck, MetricsError, DEFAULT_TAU,
};
use crate::nn::{forward, init_network, LossKind, Targets};
use crate::params::{Architecture, NetworkParams};

/// Number of applicable cases per check.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SuiteConfig {
    pub seed: u64,
    pub theorem1: usize,
    pub theorem2: usize,
    pub theorem3: usize,
    pub theorem4: usize,
    pub lemma: usize,
    pub corollary: usize,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            theorem1: 200,
            theorem2: 100,
            theorem3: 500,
            theorem4: 500,
            lemma: 500,
            corollary: 500,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SuiteEntry {
    pub name: &'static str,
    pub cases: usize,
    pub violations: usize,
    /// Draws rejected because the check did not apply to them.
    pub skipped: usize,
    /// Check with the largest `measured − bound`.
    pub tightest: Option<BoundCheck>,
    /// First few violating checks.
    pub failures: Vec<BoundCheck>,
}

impl SuiteEntry {
    fn new(name: &'static str) -> Self {
        Self {
            name,
            cases: 0,
            violations: 0,
            skipped: 0,
            tightest: None,
            failures: Vec::new(),
        }
    }

    fn record(&mut self, check: BoundCheck) {
        self.cases += 1;
        let gap = check.measured - check.bound;
        if !check.holds {
            self.violations += 1;
            if self.failures.len() < 5 {
                self.failures.push(check.clone());
            }
        }
        let tighter = self.tightest.as_ref().is_none_or(|t| gap > t.measured - t.bound);
        if tighter {
            self.tightest = Some(check);
        }
    }

    pub fn passed(&self) -> bool {
        self.violations == 0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SuiteReport {
    pub entries: Vec<SuiteEntry>,
}

impl SuiteReport {
    pub fn all_hold(&self) -> bool {
        self.entries.iter().all(SuiteEntry::passed)
    }
}

const MAX_DRAWS_PER_CASE: usize = 50;

/// Draws until `target` applicable cases were checked. `draw` returns
/// `Ok(None)` or a not-applicable error to reject a draw.
fn sweep(
    name: &'static str,
    target: usize,
    seed: u64,
    stream: u64,
    mut draw: impl FnMut(&mut ChaCha8Rng) -> Result<Option<BoundCheck>, MetricsError>,
) -> SuiteEntry {
    let mut entry = SuiteEntry::new(name);
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, stream, 0));
    let mut draws = 0;
    while entry.cases < target && draws < target * MAX_DRAWS_PER_CASE {
        draws += 1;
        match draw(&mut rng) {
            Ok(Some(check)) => entry.record(check),
            Ok(None)
            | Err(MetricsError::NotApplicable(_))
            | Err(MetricsError::ZeroFeatures)
            | Err(MetricsError::Linalg(_)) => entry.skipped += 1,
            Err(e) => {
                entry.record(BoundCheck {
                    measured: f64::NAN,
                    bound: f64::NAN,
                    holds: false,
                    context: format!("{name}: {e}"),
                });
            }
        }
    }
    entry
}

fn gaussian(rows: usize, cols: usize, std: f64, rng: &mut ChaCha8Rng) -> Matrix {
    Matrix::random_gaussian(rows, cols, std, rng)
}

/// `Q·(I + E)` with `Q` orthonormal-column and `E` Gaussian of size `spread`.
pub fn near_isometry(rows: usize, cols: usize, spread: f64, rng: &mut ChaCha8Rng) -> Matrix {
    let q = loop {
        if let Ok(q) = polar_orthogonal_factor_exact(&gaussian(rows, cols, 1.0, rng)) {
            break q;
        }
    };
    let mut mix = gaussian(cols, cols, spread / (cols as f64).sqrt(), rng);
    for i in 0..cols {
        mix[(i, i)] += 1.0;
    }
    q.matmul(&mix)
}

fn scaled_net(arch: &Architecture, rng: &mut ChaCha8Rng) -> NetworkParams {
    let mut p = init_network(arch, rng.random()).expect("valid architecture");
    for layer in &mut p.layers {
        let s = rng.random_range(0.5..2.0);
        for m in layer.weights.matrices_mut() {
            m.scale_mut(s);
        }
    }
    p
}

pub fn sweep_theorem1(n: usize, seed: u64) -> SuiteEntry {
    sweep("feature_drift", n, seed, 1, |rng| {
        let depth_total = rng.random_range(2..=3);
        let d0 = rng.random_range(1..=16);
        let hidden: Vec<usize> = (0..depth_total - 1).map(|_| rng.random_range(1..=16)).collect();
        let out = rng.random_range(1..=16);
        let arch = Architecture::mlp(d0, &hidden, out, false);
        let theta = scaled_net(&arch, rng);
        let theta_tilde = if rng.random_bool(0.25) {
            scaled_net(&arch, rng)
        } else {
            let mut t = theta.clone();
            for layer in &mut t.layers {
                if rng.random_bool(0.3) {
                    continue;
                }
                let scale = 10f64.powf(rng.random_range(-6.0..0.0));
                for m in layer.weights.matrices_mut() {
                    let noise = gaussian(m.rows(), m.cols(), scale, rng);
                    m.axpy(1.0, &noise);
                }
            }
            t
        };
        let rows = rng.random_range(1..=16);
        let z = gaussian(rows, d0, rng.random_range(0.1..3.0), rng);
        let depth = rng.random_range(1..=depth_total);
        check_theorem1(&theta, &theta_tilde, &z, depth).map(Some)
    })
}

pub fn sweep_theorem2(n: usize, seed: u64) -> SuiteEntry {
    sweep("curvature", n, seed, 2, |rng| {
        let d0 = rng.random_range(1..=8);
        let d1 = rng.random_range(1..=8);
        let d2 = rng.random_range(1..=8);
        let arch = Architecture::mlp(d0, &[d1], d2, false);
        let params = if rng.random_bool(0.5) {
            scaled_net(&arch, rng)
        } else {
            let spread = rng.random_range(0.0..0.5);
            let mut p = init_network(&arch, 0).expect("valid architecture");
            for layer in &mut p.layers {
                for m in layer.weights.matrices_mut() {
                    let (r, c) = m.shape();
                    *m = if r >= c {
                        near_isometry(r, c, spread, rng)
                    } else {
                        near_isometry(c, r, spread, rng).transpose()
                    };
                }
            }
            p
        };
        let rows = rng.random_range(d0 + 1..=4 * d0 + 4);
        let z = whiten(&gaussian(rows, d0, 1.0, rng))?;
        let y = gaussian(rows, d2, rng.random_range(0.1..2.0), rng);
        check_theorem2(&params, &z, &Targets::Values(y), LossKind::Squared).map(Some)
    })
}

pub fn sweep_theorem3(n: usize, seed: u64) -> SuiteEntry {
    sweep("effective_rank", n, seed, 3, |rng| {
        let a = rng.random_range(1..=10);
        let b = rng.random_range(1..=a);
        let w = near_isometry(a, b, rng.random_range(0.0..0.6), rng);
        let rows = rng.random_range(a..=3 * a + 2);
        let raw = gaussian(rows, a, 1.0, rng);
        let z = if rng.random_bool(0.5) {
            whiten(&raw)?
        } else {
            let scales: Vec<f64> = (0..a).map(|_| rng.random_range(0.2..3.0)).collect();
            raw.matmul(&Matrix::from_diag(&scales))
        };
        let delta = rng.random_range(0.02..0.98);
        check_theorem3(&w, &z, delta).map(Some)
    })
}

pub fn sweep_theorem4(n: usize, seed: u64) -> SuiteEntry {
    sweep("activity_interval", n, seed, 4, |rng| {
        let a = rng.random_range(1..=16);
        let b = rng.random_range(1..=a);
        let w = near_isometry(a, b, rng.random_range(0.0..0.6), rng).scale(rng.random_range(0.8..1.2));
        check_theorem4(&w).map(Some)
    })
}

pub fn sweep_lemma(n: usize, seed: u64) -> SuiteEntry {
    sweep("gram_spectrum", n, seed, 5, |rng| {
        let r = rng.random_range(1..=12);
        let c = rng.random_range(1..=12);
        let w = gaussian(r, c, rng.random_range(0.05..2.0), rng);
        check_spectral_lemma(&w).map(Some)
    })
}

/// Matrices rescaled so their DfI sits below the no-dormancy threshold;
/// `measured` is the dormant count.
pub fn sweep_corollary(n: usize, seed: u64) -> SuiteEntry {
    let threshold = corollary_dfi_threshold(DEFAULT_TAU);
    sweep("no_dormancy", n, seed, 6, move |rng| {
        let a = rng.random_range(1..=16);
        let b = rng.random_range(1..=a);
        let w = near_isometry(a, b, rng.random_range(0.0..1.5), rng);
        // ‖tG − I‖² = t²‖G‖² − 2t·tr G + b for the column Gram G; t = c².
        let g = w.gram();
        let (gg, tr) = (g.frobenius_norm_sq(), g.trace());
        let disc = tr * tr - gg * (b as f64 - threshold);
        if disc <= 0.0 {
            return Ok(None);
        }
        let (t1, t2) = ((tr - disc.sqrt()) / gg, (tr + disc.sqrt()) / gg);
        let t = rng.random_range(t1 + 0.01 * (t2 - t1)..=t2 - 0.01 * (t2 - t1));
        let scaled = w.scale(t.sqrt());
        let d = dfi_columns(&scaled);
        if d > threshold {
            return Ok(None);
        }
        let scores = activity_scores_closed_form(&scaled)?;
        let dormant = dormant_count(&scores, DEFAULT_TAU);
        Ok(Some(BoundCheck::new(
            dormant as f64,
            0.0,
            format!(
                "dormant count dfi={d:.6} min_score={:.6}",
                scores.iter().copied().fold(f64::INFINITY, f64::min)
            ),
        )))
    })
}

pub fn run_suite(cfg: &SuiteConfig) -> SuiteReport {
    SuiteReport {
        entries: vec![
            sweep_theorem1(cfg.theorem1, cfg.seed),
            sweep_theorem3(cfg.theorem3, cfg.seed),
            sweep_theorem4(cfg.theorem4, cfg.seed),
            sweep_lemma(cfg.lemma, cfg.seed),
            sweep_theorem2(cfg.theorem2, cfg.seed),
            sweep_corollary(cfg.corollary, cfg.seed),
        ],
    }
}

/// Interpolating two-layer network: targets equal the outputs, so the
/// residual term of the curvature bound vanishes.
pub fn interpolating_curvature_case(params: &NetworkParams, z: &Matrix) -> Result<BoundCheck, MetricsError> {
    let y = forward(params, z)?.output().clone();
    check_theorem2(params, z, &Targets::Values(y), LossKind::Squared)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_suite_runs_and_is_deterministic() {
        let cfg = SuiteConfig {
            seed: 1,
            theorem1: 5,
            theorem2: 3,
            theorem3: 5,
            theorem4: 5,
            lemma: 5,
            corollary: 5,
        };
        let a = run_suite(&cfg);
        assert_eq!(a, run_suite(&cfg));
        for e in &a.entries {
            assert!(e.cases > 0, "{}", e.name);
        }
    }

    #[test]
    fn near_isometry_has_orthonormal_limit() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let w = near_isometry(6, 4, 0.0, &mut rng);
        assert!(dfi_columns(&w) < 1e-20);
    }
}
