use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Node states `w ∈ R^{n×d}`, one row per node.
#[derive(Debug, Clone, PartialEq)]
pub struct StateMatrix {
    values: DMatrix<f64>,
}

impl StateMatrix {
    pub fn new(values: DMatrix<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::ShapeMismatch("state contains non-finite entries".into()));
        }
        Ok(Self { values })
    }

    pub fn zeros(n: usize, d: usize) -> Self {
        Self {
            values: DMatrix::zeros(n, d),
        }
    }

    /// Single-column state from a slice.
    pub fn from_column(values: &[f64]) -> Self {
        Self {
            values: DMatrix::from_column_slice(values.len(), 1, values),
        }
    }

    /// `n × d` state from row-major data.
    pub fn from_rows(n: usize, d: usize, data: &[f64]) -> Self {
        Self {
            values: DMatrix::from_row_slice(n, d, data),
        }
    }

    pub fn n(&self) -> usize {
        self.values.nrows()
    }

    pub fn d(&self) -> usize {
        self.values.ncols()
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut DMatrix<f64> {
        &mut self.values
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.values
    }

    /// The first column as a slice; phase and heat states are single-column.
    pub fn column(&self) -> &[f64] {
        &self.values.as_slice()[..self.n()]
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub(crate) fn require_shape(&self, n: usize, d: usize) -> Result<()> {
        if self.n() != n || self.d() != d {
            return Err(Error::dims(
                format!("{n}x{d} state"),
                format!("{}x{}", self.n(), self.d()),
            ));
        }
        Ok(())
    }
}

impl From<DMatrix<f64>> for StateMatrix {
    fn from(values: DMatrix<f64>) -> Self {
        Self { values }
    }
}
