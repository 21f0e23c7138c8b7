use rand_distr::{Distribution, StandardNormal};

use super::SparseGraph;
use crate::error::{Error, Result};
use crate::rng::seeded;
use crate::sparse::SparseMatrix;

const ROW_SUM_TOL: f64 = 1e-12;

/// Cheap estimate of the largest eigenvalue of a symmetric PSD matrix.
///
/// Uses `(1ᵀM²1)/(1ᵀM1)` when `1ᵀM1` is nonzero. That quotient vanishes
/// for Laplacians (zero row sums), in which case `iters` rounds of power
/// iteration from a seeded Gaussian vector are used instead.
pub fn estimate_top_eigenvalue(m: &SparseMatrix, iters: usize, seed: u64) -> Result<f64> {
    if !m.is_square() {
        return Err(Error::dims(
            "square matrix",
            format!("{}x{}", m.n_rows(), m.n_cols()),
        ));
    }
    if m.values().iter().all(|&v| v == 0.0) {
        return Err(Error::ZeroMatrix);
    }
    let row_sums = m.row_sums();
    let first: f64 = row_sums.iter().sum();
    if first.abs() > ROW_SUM_TOL {
        let second: f64 = m.matvec(&row_sums).iter().sum();
        return Ok(second / first);
    }
    Ok(power_iteration(m, iters, seed))
}

fn power_iteration(m: &SparseMatrix, iters: usize, seed: u64) -> f64 {
    let mut rng = seeded(seed);
    let mut x: Vec<f64> = (0..m.n_rows()).map(|_| StandardNormal.sample(&mut rng)).collect();
    normalize(&mut x);
    let mut estimate = 0.0;
    for _ in 0..iters.max(1) {
        let y = m.matvec(&x);
        estimate = x.iter().zip(&y).map(|(a, b)| a * b).sum();
        x = y;
        if normalize(&mut x) == 0.0 {
            break;
        }
    }
    estimate
}

fn normalize(x: &mut [f64]) -> f64 {
    let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm > 0.0 {
        x.iter_mut().for_each(|v| *v /= norm);
    }
    norm
}

/// Competing estimates of the top Laplacian eigenvalue of a graph.
#[derive(Debug, Clone, PartialEq)]
pub struct TopEigenvalueReport {
    /// Mean degree `Tr[D]/n`.
    pub average_degree: f64,
    /// One-shot quotient applied to the degree matrix plus adjacency,
    /// `1ᵀ(D+A)²1 / 1ᵀ(D+A)1`; finite for any graph with an edge.
    pub one_shot_signless: f64,
    /// Power-iteration estimate on the Laplacian itself.
    pub power_iteration: f64,
}

impl TopEigenvalueReport {
    pub fn for_graph(g: &SparseGraph, iters: usize, seed: u64) -> Result<Self> {
        let laplacian = g.laplacian()?;
        let degree = g.degree_vector();
        let signless = SparseMatrix::diagonal(&degree).add_scaled(1.0, g.adjacency(), 1.0)?;
        Ok(Self {
            average_degree: degree.iter().sum::<f64>() / g.n() as f64,
            one_shot_signless: estimate_top_eigenvalue(&signless, iters, seed)?,
            power_iteration: estimate_top_eigenvalue(&laplacian, iters, seed)?,
        })
    }
}
