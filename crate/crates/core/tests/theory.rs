mod common;

use common::rng;
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use proptest::prelude::*;
use rand::Rng;
use reparam_core::graph::{generate, GraphSpec};
use reparam_core::theory::{
    binomial_error, default_init_sigma, estimate_g_at_init, ideal_jacobian_dense, linear_rate_check,
    ntk_linear, psd_power, rate_of_loss_drop,
};
use reparam_core::{Error, Problem, SparseGraph};

/// Random PSD matrix with a chosen spectrum, plus its eigenbasis.
fn psd_with_spectrum(spectrum: &[f64], seed: u64) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = spectrum.len();
    let mut r = rng(seed);
    let q = DMatrix::from_fn(n, n, |_, _| r.random_range(-1.0..1.0)).qr().q();
    let g = &q * DMatrix::from_diagonal(&DVector::from_column_slice(spectrum)) * q.transpose();
    (g, q)
}

#[test]
fn ideal_jacobian_on_random_psd() {
    let mut r = rng(1);
    let spectrum: Vec<f64> = (0..50).map(|_| r.random_range(0.01..10.0)).collect();
    let (g, _) = psd_with_spectrum(&spectrum, 2);
    let j = ideal_jacobian_dense(&g).unwrap();
    let top = spectrum.iter().cloned().fold(0.0, f64::max);
    // independent root of G/λ_max via its own eigendecomposition
    let eig = SymmetricEigen::new(&g / top);
    let root = &eig.eigenvectors
        * DMatrix::from_diagonal(&eig.eigenvalues.map(|l| l.sqrt()))
        * eig.eigenvectors.transpose();
    let product = j.transpose() * &j * root;
    assert!((product - DMatrix::<f64>::identity(50, 50)).amax() < 1e-8);
}

#[test]
fn ideal_jacobian_rejects_indefinite_input() {
    let g = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, -0.5]));
    assert!(matches!(ideal_jacobian_dense(&g), Err(Error::NotPsd(_))));
}

#[test]
fn orthonormal_reparametrization_gives_inverse_root() {
    let mut r = rng(3);
    let spectrum: Vec<f64> = (0..40).map(|_| r.random_range(0.05..5.0)).collect();
    let (g, _) = psd_with_spectrum(&spectrum, 4);
    let (_, gamma) = psd_with_spectrum(&vec![1.0; 40], 5);
    let eta: f64 = 0.3;
    // J = √η Γ G^{-1/4}, ε̂ = I, Γᵀ Γ = I
    let j = gamma * psd_power(&g, -0.25).unwrap() * eta.sqrt();
    let lhs = j.transpose() * &j;
    let rhs = psd_power(&g, -0.5).unwrap() * eta;
    assert!((lhs - rhs).amax() < 1e-8);
}

#[test]
fn ntk_examples() {
    let k = ntk_linear(&DMatrix::identity(4, 4), &[0.2; 4]).unwrap();
    assert!((k - DMatrix::<f64>::identity(4, 4) * 0.2).amax() < 1e-15);
    // orthonormal rows
    let (_, q) = psd_with_spectrum(&[1.0; 5], 6);
    let j = q.rows(0, 3).into_owned();
    let k = ntk_linear(&j, &[1.0; 5]).unwrap();
    assert!((k - DMatrix::<f64>::identity(3, 3)).amax() < 1e-12);
    assert!(ntk_linear(&j, &[1.0; 4]).is_err());
}

#[test]
fn ntk_of_ideal_jacobian() {
    let mut r = rng(7);
    let spectrum: Vec<f64> = (0..30).map(|_| r.random_range(0.1..4.0)).collect();
    let (g, _) = psd_with_spectrum(&spectrum, 8);
    let eta = 0.05;
    let j = ideal_jacobian_dense(&g).unwrap();
    let k = ntk_linear(&j, &[eta; 30]).unwrap();
    let top = spectrum.iter().cloned().fold(0.0, f64::max);
    let expected = psd_power(&(&g / top), -0.5).unwrap() * eta;
    assert!((k - expected).amax() < 1e-8);
}

#[test]
fn rate_examples() {
    let i3 = DMatrix::<f64>::identity(3, 3);
    assert_eq!(rate_of_loss_drop(&i3, &i3).unwrap(), -3.0);
    assert_eq!(rate_of_loss_drop(&DMatrix::zeros(3, 3), &i3).unwrap(), 0.0);
    assert!(rate_of_loss_drop(&i3, &DMatrix::identity(2, 2)).is_err());
}

#[test]
fn one_step_rate_matches_trace_formula() {
    let p = Problem::kuramoto(generate(&GraphSpec::Circle(10), 0).unwrap()).unwrap();
    let mut r = rng(9);
    let m = 14;
    let j = DMatrix::from_fn(10, m, |_, _| r.random_range(-0.5..0.5));
    let eps: Vec<f64> = (0..m).map(|_| r.random_range(0.5..1.5)).collect();
    let theta = DVector::from_fn(m, |_, _| r.random_range(-1.0..1.0));
    let mut previous = f64::INFINITY;
    for dt in [1e-2, 1e-3, 1e-4] {
        let check = linear_rate_check(&p, &j, &eps, &theta, dt).unwrap();
        assert!(check.predicted < 0.0);
        let err = check.relative_error();
        assert!(err < previous, "dt {dt}: {err} >= {previous}");
        previous = err;
    }
    assert!(previous < 0.05);
}

#[test]
fn heat_prediction_on_an_edge() {
    let g = SparseGraph::from_edge_list(2, &[(0, 1, 1.0)]).unwrap();
    let p = Problem::heat(g, reparam_core::BoundaryCondition::none()).unwrap();
    let est = estimate_g_at_init(&p, 10, 0.5, 0).unwrap();
    let expected = DMatrix::from_row_slice(2, 2, &[1.0, -1.0, -1.0, 1.0]);
    assert!((est.prediction - expected).amax() < 1e-14);
}

#[test]
fn estimate_errors() {
    let p = Problem::kuramoto(generate(&GraphSpec::Circle(5), 0).unwrap()).unwrap();
    assert!(matches!(estimate_g_at_init(&p, 0, 0.1, 0), Err(Error::InsufficientSamples)));
    let cloud = Problem::persistence(10, 1.0, 1.0).unwrap();
    assert!(matches!(estimate_g_at_init(&cloud, 10, 0.1, 0), Err(Error::UnsupportedProblem(_))));
}

/// `G_ik = 4 Σ_jl A_ij A_kl e^{−2σ²} sinh(σ²(δ_ik − δ_il − δ_jk + δ_jl))`, the
/// exact mean of `∇L∇Lᵀ` for Kuramoto under independent N(0, σ²) phases.
fn kuramoto_exact_g(a: &DMatrix<f64>, sigma: f64) -> DMatrix<f64> {
    let n = a.nrows();
    let s2 = sigma * sigma;
    let delta = |x: usize, y: usize| if x == y { 1.0 } else { 0.0 };
    DMatrix::from_fn(n, n, |i, k| {
        let mut sum = 0.0;
        for j in 0..n {
            for l in 0..n {
                if a[(i, j)] != 0.0 && a[(k, l)] != 0.0 {
                    let cov = s2 * (delta(i, k) - delta(i, l) - delta(j, k) + delta(j, l));
                    sum += a[(i, j)] * a[(k, l)] * (-2.0 * s2).exp() * cov.sinh();
                }
            }
        }
        4.0 * sum
    })
}

#[test]
fn monte_carlo_g_approaches_its_exact_mean() {
    let g = generate(&GraphSpec::Circle(8), 0).unwrap();
    let a = g.adjacency().to_dense();
    let p = Problem::kuramoto(g).unwrap();
    let sigma = default_init_sigma(8);
    let exact = kuramoto_exact_g(&a, sigma);
    let est = estimate_g_at_init(&p, 20_000, sigma, 1).unwrap();
    let sampling = (&est.monte_carlo - &exact).norm() / exact.norm();
    assert!(sampling < 0.05, "{sampling}");
    // the small-σ limit of the exact mean is H²/n
    let tiny = 1e-3;
    let limit = kuramoto_exact_g(&a, tiny) / (tiny * tiny * 8.0);
    assert!((limit - &est.prediction).norm() / est.prediction.norm() < 1e-5);
}

#[test]
fn binomial_error_decreases_with_order() {
    let mut r = rng(12);
    let spectrum: Vec<f64> = (0..50).map(|_| r.random_range(0.1..0.9)).collect();
    let (h, _) = psd_with_spectrum(&spectrum, 13);
    let errors: Vec<f64> = (0..=3).map(|q| binomial_error(&h, q).unwrap()).collect();
    for w in errors.windows(2) {
        assert!(w[1] < w[0], "{errors:?}");
    }
    // worst eigenvalue 0.1: the q = 0 error is 1/√0.1 − 1
    assert!((errors[0] - (0.1f64.powf(-0.5) - 1.0)).abs() < 0.3);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]
    #[test]
    fn ntk_is_psd(
        n in 1usize..8,
        m in 1usize..10,
        seed in any::<u64>(),
    ) {
        let mut r = rng(seed);
        let j = DMatrix::from_fn(n, m, |_, _| r.random_range(-2.0..2.0));
        let eps: Vec<f64> = (0..m).map(|_| r.random_range(0.0..3.0)).collect();
        let k = ntk_linear(&j, &eps).unwrap();
        prop_assert!(SymmetricEigen::new(k).eigenvalues.min() >= -1e-10);
    }

    #[test]
    fn rate_is_nonpositive_for_psd_kernels(n in 1usize..8, seed in any::<u64>()) {
        let mut r = rng(seed);
        let g = DVector::from_fn(n, |_, _| r.random_range(-1.0..1.0));
        let b = DMatrix::from_fn(n, n, |_, _| r.random_range(-1.0..1.0));
        let k = &b * b.transpose();
        prop_assert!(rate_of_loss_drop(&(&g * g.transpose()), &k).unwrap() <= 1e-12);
    }
}
