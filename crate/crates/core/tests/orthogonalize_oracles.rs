use fire_core::baselines::full_reset;
use fire_core::linalg::{polar_orthogonal_factor_exact, svd_small, Matrix};
use fire_core::metrics::{dfi, sfe, sfe_network};
use fire_core::nn::init_network;
use fire_core::orthogonalize::{fire_dense, fire_network, newton_schulz, newton_schulz_trajectory, NsCoefficients};
use fire_core::params::{Architecture, LayerWeights, NetworkParams};
use fire_oracles::{matrix_with_spectrum, random_orthonormal, scalar_ns};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn he_like(rows: usize, cols: usize, seed: u64) -> Matrix {
    Matrix::random_gaussian(rows, cols, (2.0 / cols as f64).sqrt(), &mut rng(seed))
}

fn conditioned(rows: usize, cols: usize, cond: f64, seed: u64) -> Matrix {
    let mut r = rng(seed);
    let sigmas: Vec<f64> = (0..cols)
        .map(|i| {
            if i == 0 {
                cond
            } else if i == 1 {
                1.0
            } else {
                r.random_range(1.0..cond)
            }
        })
        .collect();
    let d = matrix_with_spectrum(rows, cols, &sigmas, &mut r);
    Matrix::new(d.rows, d.cols, d.data).unwrap()
}

#[test]
fn converges_to_polar_factor_for_bounded_condition() {
    for seed in 0..20 {
        let (rows, cols) = [(8, 8), (16, 5), (30, 12), (64, 32)][seed as usize % 4];
        let w = conditioned(rows, cols, 20.0, seed);
        let q = polar_orthogonal_factor_exact(&w).unwrap();
        let x = newton_schulz(&w, 50, &NsCoefficients::PAPER_CUBIC).unwrap();
        assert!(x.sub(&q).frobenius_norm() <= 1e-4 * q.frobenius_norm(), "seed {seed}");
    }
}

#[test]
fn singular_values_follow_the_scalar_map() {
    for coeffs in [
        NsCoefficients::PAPER_CUBIC,
        NsCoefficients::APPENDIX_QUINTIC,
        NsCoefficients::MUON_QUINTIC,
    ] {
        for seed in 0..5 {
            let w = Matrix::random_gaussian(9, 6, 1.0, &mut rng(seed));
            let norm = w.frobenius_norm();
            let sv = svd_small(&w).unwrap().singular_values;
            for iters in [1, 3, 5] {
                let out = newton_schulz(&w, iters, &coeffs).unwrap();
                let mut expected: Vec<f64> = sv
                    .iter()
                    .map(|s| scalar_ns(s / norm, iters, coeffs.a, coeffs.b, coeffs.c).abs())
                    .collect();
                expected.sort_by(|a, b| b.partial_cmp(a).unwrap());
                let got = svd_small(&out).unwrap().singular_values;
                for (g, e) in got.iter().zip(&expected) {
                    assert!((g - e).abs() <= 1e-10, "{coeffs} iters={iters}: {g} vs {e}");
                }
            }
        }
    }
}

#[test]
fn dfi_decreases_along_iterations_on_seeded_family() {
    for seed in 0..10 {
        let w = he_like(64, 32, seed);
        let rescaled = w.scale(32f64.sqrt() / w.frobenius_norm());
        let d0 = dfi(&rescaled);
        let d5 = dfi(&newton_schulz(&w, 5, &NsCoefficients::PAPER_CUBIC).unwrap());
        let d30 = dfi(&newton_schulz(&w, 30, &NsCoefficients::PAPER_CUBIC).unwrap());
        assert!(d30 <= d5 && d5 <= d0, "seed {seed}: {d30} {d5} {d0}");
        assert!(d30 < dfi(&rescaled));
    }
}

#[test]
fn sfe_peaks_at_first_iteration_on_seeded_family() {
    for seed in 0..10 {
        let w = he_like(64, 32, seed);
        let traj = newton_schulz_trajectory(&w, 30, &NsCoefficients::PAPER_CUBIC).unwrap();
        let at = |k: usize| sfe(&w, &traj[k]).unwrap();
        for k in [5, 10, 30] {
            assert!(at(1) >= at(k), "seed {seed}: iteration {k}");
        }
    }
}

#[test]
fn procrustes_optimality_against_random_candidates() {
    for seed in 0..3 {
        let w = Matrix::random_gaussian(5, 3, 1.0, &mut rng(seed));
        let x = newton_schulz(&w, 50, &NsCoefficients::PAPER_CUBIC).unwrap();
        let best = sfe(&w, &x).unwrap();
        let mut r = rng(500 + seed);
        for _ in 0..10_000 {
            let d = random_orthonormal(5, 3, &mut r);
            let cand = Matrix::new(5, 3, d.data).unwrap();
            assert!(best <= sfe(&w, &cand).unwrap());
        }
    }
}

#[test]
fn fire_network_respects_mask() {
    let p = init_network(&Architecture::mlp(6, &[8, 8], 3, true), 1).unwrap();
    let cubic = NsCoefficients::PAPER_CUBIC;
    assert_eq!(fire_network(&p, 10, &cubic, &[false; 3]).unwrap(), p);

    let out = fire_network(&p, 10, &cubic, &[true, false, true]).unwrap();
    assert_eq!(out.layers[1], p.layers[1]);
    for (a, b) in out.layers.iter().zip(&p.layers) {
        assert_eq!(a.bias, b.bias);
        assert_eq!(a.weights.shape(), b.weights.shape());
    }
    assert!(fire_network(&p, 10, &cubic, &[true; 2]).is_err());

    let single = NetworkParams::new(
        Architecture::mlp(4, &[], 7, false),
        vec![LayerWeights::dense(he_like(7, 4, 3), None)],
    )
    .unwrap();
    let fired = fire_network(&single, 10, &cubic, &[true]).unwrap();
    let direct = fire_dense(single.layers[0].dense_matrix().unwrap(), 10, &cubic).unwrap();
    assert_eq!(fired.layers[0].dense_matrix().unwrap(), &direct);
}

#[test]
fn fire_moves_weights_less_than_full_reset() {
    let arch = Architecture::mlp(32, &[64, 64], 10, true);
    let p = init_network(&arch, 5).unwrap();
    let fired = fire_network(&p, 10, &NsCoefficients::PAPER_CUBIC, &[true; 3]).unwrap();
    let fire_sfe = sfe_network(&p, &fired).unwrap();
    let reset_mean = (0..20)
        .map(|s| sfe_network(&p, &full_reset(&arch, 1000 + s).unwrap()).unwrap())
        .sum::<f64>()
        / 20.0;
    assert!(fire_sfe > 0.0 && fire_sfe.is_finite());
    assert!(fire_sfe <= reset_mean, "{fire_sfe} vs {reset_mean}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn power_of_two_scaling_is_exact(seed in any::<u64>(), exp in -20i32..20, rows in 1usize..10, cols in 1usize..10) {
        let w = Matrix::random_gaussian(rows, cols, 1.0, &mut rng(seed));
        let c = 2f64.powi(exp);
        let a = newton_schulz(&w, 7, &NsCoefficients::PAPER_CUBIC).unwrap();
        let b = newton_schulz(&w.scale(c), 7, &NsCoefficients::PAPER_CUBIC).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn general_scaling_is_equivariant(seed in any::<u64>(), c in 1e-3f64..1e3) {
        let w = Matrix::random_gaussian(6, 4, 1.0, &mut rng(seed));
        let a = newton_schulz(&w, 10, &NsCoefficients::PAPER_CUBIC).unwrap();
        let b = newton_schulz(&w.scale(c), 10, &NsCoefficients::PAPER_CUBIC).unwrap();
        prop_assert!(a.max_abs_diff(&b) <= 1e-12);
    }

    #[test]
    fn fire_network_preserves_topology(seed in any::<u64>(), h1 in 1usize..12, h2 in 1usize..12) {
        let p = init_network(&Architecture::mlp(5, &[h1, h2], 3, true), seed).unwrap();
        let out = fire_network(&p, 3, &NsCoefficients::PAPER_CUBIC, &[true; 3]).unwrap();
        prop_assert!(out.ensure_same_layout(&p).is_ok());
    }
}
