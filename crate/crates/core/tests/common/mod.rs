#![allow(dead_code)]

use nalgebra::DMatrix;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use reparam_core::gcn::{propagation_matrix, Activation, GcnConfig, GcnModel, PropagationRule, Squash};
use reparam_core::graph::{generate, GraphSpec};
use reparam_core::rng::seeded;
use reparam_core::{BoundaryCondition, HopfParams, Problem, SparseGraph, StateMatrix};

pub fn rng(seed: u64) -> ChaCha8Rng {
    seeded(seed)
}

/// Small members of three graph families.
pub fn families() -> Vec<(&'static str, SparseGraph)> {
    vec![
        ("lattice", generate(&"lattice2d 5 6".parse::<GraphSpec>().unwrap(), 0).unwrap()),
        ("tree", generate(&GraphSpec::Tree { branching: 2, depth: 4 }, 0).unwrap()),
        ("sbm", generate(&"sbm 3x10 0.4 0.1".parse::<GraphSpec>().unwrap(), 7).unwrap()),
    ]
}

pub fn random_state(n: usize, d: usize, scale: f64, rng: &mut impl Rng) -> StateMatrix {
    StateMatrix::from(DMatrix::from_fn(n, d, |_, _| rng.random_range(-scale..scale)))
}

/// Pins every fifth node alternately at 1 and 0.
pub fn some_pins(n: usize, exponent: u32) -> BoundaryCondition {
    let pinned = (0..n).step_by(5).enumerate().map(|(k, i)| (i, (k % 2) as f64)).collect();
    BoundaryCondition::new(pinned, 0.7, exponent)
}

/// Central differences of `f` at `x`.
pub fn numeric_gradient(mut f: impl FnMut(&[f64]) -> f64, x: &[f64], step: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|k| {
            probe[k] = x[k] + step;
            let up = f(&probe);
            probe[k] = x[k] - step;
            let down = f(&probe);
            probe[k] = x[k];
            (up - down) / (2.0 * step)
        })
        .collect()
}

/// Largest componentwise relative error. Components far below the gradient's
/// scale are compared against 1e-3 of that scale instead of their own size.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let scale = numeric.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let floor = (1e-3 * scale).max(1e-12);
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, f)| (a - f).abs() / a.abs().max(f.abs()).max(floor))
        .fold(0.0, f64::max)
}

/// Analytic against numeric gradient of a problem at `w`.
pub fn problem_gradient_error(p: &Problem, w: &StateMatrix, step: f64) -> f64 {
    let (_, grad) = p.eval(w).unwrap();
    let (n, d) = (w.n(), w.d());
    let numeric = numeric_gradient(
        |x| p.loss(&StateMatrix::from(DMatrix::from_column_slice(n, d, x))).unwrap(),
        w.values().as_slice(),
        step,
    );
    max_relative_error(grad.values().as_slice(), &numeric)
}

pub fn small_model(g: &SparseGraph, layers: usize, residual: bool, squash: Squash, seed: u64) -> GcnModel {
    let mut cfg = GcnConfig::new(4, layers, 1);
    cfg.residual = residual;
    cfg.squash = squash;
    cfg.activation = Activation::LeakyRelu { slope: 0.2 };
    let prop = propagation_matrix(g, PropagationRule::NormAdj).unwrap();
    GcnModel::new(cfg, prop, &mut rng(seed)).unwrap()
}

/// Gradient of `p(model(θ))` with respect to every trainable entry, checked
/// against central differences.
pub fn gcn_gradient_error(p: &Problem, model: &mut GcnModel, step: f64) -> f64 {
    let w = model.forward();
    let (_, grad_w) = p.eval(&w).unwrap();
    let bundle = model.backward(&grad_w).unwrap();
    let analytic: Vec<f64> = bundle.tensors().iter().flat_map(|t| t.iter().copied()).collect();
    let flat: Vec<f64> = model.tensors().iter().flat_map(|t| t.iter().copied()).collect();
    let mut probe = model.clone();
    let numeric = numeric_gradient(
        |x| {
            let mut offset = 0;
            for t in probe.tensors_mut() {
                let len = t.len();
                t.as_mut_slice().copy_from_slice(&x[offset..offset + len]);
                offset += len;
            }
            p.loss(&probe.evaluate()).unwrap()
        },
        &flat,
        step,
    );
    max_relative_error(&analytic, &numeric)
}

/// Worst finite-difference error per target over `states` random states on
/// each graph family.
pub fn gradient_suite(states: usize) -> Vec<(&'static str, f64)> {
    let mut worst = vec![
        ("heat p=2", 0.0f64),
        ("heat p=4", 0.0),
        ("kuramoto", 0.0),
        ("hopf-kuramoto", 0.0),
        ("gcn backward", 0.0),
    ];
    for (fi, (_, g)) in families().into_iter().enumerate() {
        let n = g.n();
        let heat2 = Problem::heat(g.clone(), some_pins(n, 2)).unwrap();
        let heat4 = Problem::heat(g.clone(), some_pins(n, 4)).unwrap();
        let kur = Problem::kuramoto(g.clone()).unwrap();
        let hk = Problem::hopf_kuramoto(g.clone(), HopfParams { c: 0.8, s1: 0.6, s2: 1.3 }).unwrap();
        let mut r = rng(100 + fi as u64);
        for s in 0..states {
            let w = random_state(n, 1, 2.0, &mut r);
            for (k, p) in [&heat2, &heat4, &kur, &hk].into_iter().enumerate() {
                worst[k].1 = worst[k].1.max(problem_gradient_error(p, &w, 1e-5));
            }
            let (p, squash, layers, residual) = match s % 3 {
                0 => (&kur, Squash::PhaseSigmoid, 1, false),
                1 => (&heat2, Squash::Identity, 2, true),
                _ => (&hk, Squash::PhaseSigmoid, 3, false),
            };
            let mut model = small_model(&g, layers, residual, squash, 1000 + s as u64);
            worst[4].1 = worst[4].1.max(gcn_gradient_error(p, &mut model, 1e-5));
        }
    }
    worst
}
