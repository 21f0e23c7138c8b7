//! Undirected weighted graphs and the matrices derived from them.

mod generate;
mod io;
mod spectral;

pub use generate::{generate, rgg_points, GraphSpec};
pub use io::{format_edge_list, parse_edge_list, read_edge_list, write_edge_list};
pub use spectral::{estimate_top_eigenvalue, TopEigenvalueReport};

use crate::error::{Error, Result};
use crate::sparse::SparseMatrix;

/// Weighted adjacency with nonnegative entries and no self loops.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseGraph {
    adjacency: SparseMatrix,
    symmetric: bool,
}

impl SparseGraph {
    /// Builds a symmetric graph from undirected edges. Each `(i, j, w)` adds
    /// weight `w` to both `(i, j)` and `(j, i)`; repeated edges accumulate.
    pub fn from_edge_list(n: usize, edges: &[(usize, usize, f64)]) -> Result<Self> {
        let mut triplets = Vec::with_capacity(2 * edges.len());
        for &(i, j, w) in edges {
            for index in [i, j] {
                if index >= n {
                    return Err(Error::IndexOutOfRange { index, n });
                }
            }
            if i == j {
                return Err(Error::SelfLoop(i));
            }
            if !(w > 0.0) || !w.is_finite() {
                return Err(Error::NonPositiveWeight { i, j, weight: w });
            }
            triplets.push((i, j, w));
            triplets.push((j, i, w));
        }
        let adjacency = SparseMatrix::from_triplets(n, n, triplets)?;
        Ok(Self {
            adjacency,
            symmetric: true,
        })
    }

    /// Wraps an existing adjacency matrix after checking square shape,
    /// nonnegative weights and an empty diagonal.
    pub fn from_adjacency(adjacency: SparseMatrix) -> Result<Self> {
        if !adjacency.is_square() {
            return Err(Error::dims(
                "square adjacency",
                format!("{}x{}", adjacency.n_rows(), adjacency.n_cols()),
            ));
        }
        for (i, j, w) in adjacency.triplets() {
            if i == j {
                return Err(Error::SelfLoop(i));
            }
            if w < 0.0 {
                return Err(Error::NonPositiveWeight { i, j, weight: w });
            }
        }
        let symmetric = adjacency.is_symmetric();
        Ok(Self {
            adjacency,
            symmetric,
        })
    }

    pub fn n(&self) -> usize {
        self.adjacency.n_rows()
    }

    pub fn adjacency(&self) -> &SparseMatrix {
        &self.adjacency
    }

    pub fn is_symmetric(&self) -> bool {
        self.symmetric
    }

    /// Number of undirected edges (stored entries above the diagonal).
    pub fn edge_count(&self) -> usize {
        self.adjacency.triplets().filter(|&(i, j, _)| i < j).count()
    }

    /// Canonical undirected edge list: `i < j`, sorted lexicographically.
    pub fn edges(&self) -> Vec<(usize, usize, f64)> {
        self.adjacency.triplets().filter(|&(i, j, _)| i < j).collect()
    }

    pub fn neighbors(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.adjacency.row(i)
    }

    pub fn degree_vector(&self) -> Vec<f64> {
        self.adjacency.row_sums()
    }

    fn require_symmetric(&self) -> Result<()> {
        if self.symmetric {
            Ok(())
        } else {
            Err(Error::AsymmetricInput)
        }
    }

    /// `L = D - A`.
    pub fn laplacian(&self) -> Result<SparseMatrix> {
        self.require_symmetric()?;
        let n = self.n();
        let degree = self.degree_vector();
        let triplets = self
            .adjacency
            .triplets()
            .map(|(i, j, w)| (i, j, -w))
            .chain((0..n).map(|i| (i, i, degree[i])));
        SparseMatrix::from_triplets(n, n, triplets)
    }

    /// `D^{-1/2} A D^{-1/2}`, or `D̃^{-1/2}(A + I)D̃^{-1/2}` with self loops,
    /// where `D̃` is the degree of `A + I`.
    pub fn normalized_adjacency(&self, add_self_loops: bool) -> Result<SparseMatrix> {
        self.require_symmetric()?;
        let n = self.n();
        let loop_weight = if add_self_loops { 1.0 } else { 0.0 };
        let degree: Vec<f64> = self.degree_vector().iter().map(|d| d + loop_weight).collect();
        if let Some(i) = degree.iter().position(|&d| d <= 0.0) {
            return Err(Error::IsolatedNode(i));
        }
        let inv_sqrt: Vec<f64> = degree.iter().map(|d| 1.0 / d.sqrt()).collect();
        let loops = (0..n)
            .filter(|_| add_self_loops)
            .map(|i| (i, i, inv_sqrt[i] * inv_sqrt[i]));
        let triplets = self
            .adjacency
            .triplets()
            .map(|(i, j, w)| (i, j, inv_sqrt[i] * w * inv_sqrt[j]))
            .chain(loops);
        SparseMatrix::from_triplets(n, n, triplets)
    }
}
