//! Sparse-graph optimization with graph-convolutional reparametrization.

pub mod error;
pub mod experiment;
pub mod gcn;
pub mod graph;
pub mod losses;
pub mod optim;
pub mod persistence;
pub mod rng;
pub mod runner;
pub mod sparse;
pub mod theory;
pub mod state;

pub use error::{Error, Result};
pub use graph::{GraphSpec, SparseGraph};
pub use gcn::{GcnConfig, GcnModel, GradientBundle, PropagationRule};
pub use losses::{BoundaryCondition, HopfParams, Problem};
pub use optim::{OptimizerConfig, OptimizerKind, OptimizerState};
pub use runner::{RunRecord, SpeedupReport, StoppingRule};
pub use sparse::SparseMatrix;
pub use state::StateMatrix;
