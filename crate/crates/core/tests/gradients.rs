mod common;

use common::*;
use reparam_core::gcn::{ConcatMode, Squash};
use reparam_core::persistence::{persistence_loss, PointCloud};
use reparam_core::{HopfParams, Problem};

#[test]
fn loss_gradients_match_central_differences() {
    for (name, err) in gradient_suite(20) {
        assert!(err < 1e-5, "{name}: max relative error {err:e}");
    }
}

#[test]
fn hopf_kuramoto_gradient_across_regimes() {
    let (_, g) = families().remove(0);
    let mut r = rng(5);
    for (c, s1, s2) in [(1.0, 0.3, 0.0), (1.0, -0.9, 0.3), (2.0, 0.4, 4.5), (0.0, 1.0, 1.0)] {
        let p = Problem::hopf_kuramoto(g.clone(), HopfParams { c, s1, s2 }).unwrap();
        for _ in 0..5 {
            let w = random_state(g.n(), 1, 3.0, &mut r);
            let err = problem_gradient_error(&p, &w, 1e-5);
            assert!(err < 1e-5, "({c}, {s1}, {s2}): {err:e}");
        }
    }
}

#[test]
fn gcn_backward_last_only_concat() {
    let (_, g) = families().remove(1);
    let p = Problem::kuramoto(g.clone()).unwrap();
    for seed in 0..5 {
        let mut model = small_model(&g, 2, false, Squash::PhaseSigmoid, seed);
        let mut cfg = *model.config();
        cfg.concat = ConcatMode::LastOnly;
        let prop = model.propagation().clone();
        model = reparam_core::GcnModel::new(cfg, prop, &mut rng(seed)).unwrap();
        let err = gcn_gradient_error(&p, &mut model, 1e-5);
        assert!(err < 1e-5, "seed {seed}: {err:e}");
    }
}

#[test]
fn gcn_backward_two_dimensional_output() {
    let (_, g) = families().remove(2);
    let p = Problem::persistence(g.n(), 2.0, 1.0).unwrap();
    let mut cfg = reparam_core::GcnConfig::new(4, 1, 2);
    cfg.squash = Squash::Affine { scale: 2.0, offset: 0.0 };
    let prop = reparam_core::gcn::propagation_matrix(&g, reparam_core::PropagationRule::NormAdj).unwrap();
    let mut model = reparam_core::GcnModel::new(cfg, prop, &mut rng(3)).unwrap();
    let err = gcn_gradient_error(&p, &mut model, 1e-5);
    assert!(err < 1e-5, "{err:e}");
}

#[test]
fn persistence_gradient_with_unique_tree() {
    let mut r = rng(11);
    let cloud = PointCloud::random(50, 2.0, &mut r).unwrap();
    // Central differences are only valid if no two pairwise distances tie
    // within the probe step.
    let mut d: Vec<f64> = Vec::new();
    for i in 0..50 {
        for j in i + 1..50 {
            let (a, b) = (cloud.point(i), cloud.point(j));
            d.push(((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt());
        }
    }
    d.sort_by(f64::total_cmp);
    assert!(d.windows(2).all(|w| w[1] - w[0] > 1e-6));

    let (_, grad) = persistence_loss(&cloud).unwrap();
    let flat = cloud.positions().as_slice().to_vec();
    let numeric = numeric_gradient(
        |x| {
            let pc = PointCloud::new(nalgebra::DMatrix::from_column_slice(50, 2, x), 2.0).unwrap();
            persistence_loss(&pc).unwrap().0
        },
        &flat,
        1e-7,
    );
    let err = max_relative_error(grad.as_slice(), &numeric);
    assert!(err < 1e-5, "{err:e}");
}
