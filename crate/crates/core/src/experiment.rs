//! Shared setup for benchmark runs: initial states, boundary pins, model
//! construction, and baseline-versus-candidate execution.

use std::f64::consts::TAU;

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gcn::{
    propagation_matrix, ConcatMode, EmbeddingInit, GcnConfig, GcnModel, PropagationRule, Squash,
};
use crate::graph::SparseGraph;
use crate::losses::{BoundaryCondition, Problem};
use crate::optim::OptimizerConfig;
use crate::persistence::{default_filtration, rips_adjacency, PointCloud};
use crate::rng::{substream, Stream};
use crate::runner::{prefit, run_hybrid, run_linear, run_reparam, RunRecord, StoppingRule};
use crate::state::StateMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelMode {
    Linear,
    Gcn,
    Hybrid,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSpec {
    pub mode: ModelMode,
    pub layers: usize,
    pub hidden: usize,
    pub residual: bool,
    pub propagation: PropagationRule,
    /// Problem-specific default when absent.
    pub squash: Option<Squash>,
    pub concat: ConcatMode,
}

impl Default for ModelSpec {
    fn default() -> Self {
        Self {
            mode: ModelMode::Hybrid,
            layers: 1,
            hidden: 10,
            residual: false,
            propagation: PropagationRule::NormAdj,
            squash: None,
            concat: ConcatMode::Full,
        }
    }
}

/// Prefit settings for point-cloud runs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PrefitSpec {
    pub learning_rate: f64,
    pub tol: f64,
    pub max_iters: usize,
}

impl Default for PrefitSpec {
    fn default() -> Self {
        Self {
            learning_rate: 0.01,
            tol: 1e-4,
            max_iters: 5000,
        }
    }
}

/// `hot` and `cold` fractions of the nodes pinned at 1 and 0, chosen from the
/// pin substream.
pub fn heat_pins(n: usize, hot: f64, cold: f64, strength: f64, seed: u64) -> Result<BoundaryCondition> {
    if !(0.0..=1.0).contains(&hot) || !(0.0..=1.0).contains(&cold) || hot + cold > 1.0 {
        return Err(Error::InvalidSpec(format!("pin fractions {hot} and {cold} out of range")));
    }
    let n_hot = (hot * n as f64).round() as usize;
    let n_cold = (cold * n as f64).round() as usize;
    let mut rng = substream(seed, Stream::Pins);
    let chosen = sample(&mut rng, n, (n_hot + n_cold).min(n)).into_vec();
    let pinned = chosen
        .into_iter()
        .enumerate()
        .map(|(k, node)| (node, if k < n_hot { 1.0 } else { 0.0 }))
        .collect();
    let bc = BoundaryCondition::new(pinned, strength, 2);
    bc.validate(n)?;
    Ok(bc)
}

/// Starting state of the plain run: random phases, a zero temperature field,
/// or a uniform cloud in the box.
pub fn initial_state(p: &Problem, seed: u64) -> Result<StateMatrix> {
    match p {
        Problem::Kuramoto { .. } | Problem::HopfKuramoto { .. } => {
            let mut rng = substream(seed, Stream::Init);
            let phases: Vec<f64> = (0..p.n()).map(|_| rng.random_range(0.0..TAU)).collect();
            Ok(StateMatrix::from_column(&phases))
        }
        Problem::Heat { .. } => Ok(StateMatrix::zeros(p.n(), 1)),
        Problem::PersistenceH0 { n, range, .. } => {
            let mut rng = substream(seed, Stream::Cloud);
            Ok(PointCloud::random(*n, *range, &mut rng)?.to_state())
        }
    }
}

fn default_squash(p: &Problem) -> Squash {
    match p {
        Problem::Kuramoto { .. } | Problem::HopfKuramoto { .. } => Squash::PhaseSigmoid,
        Problem::Heat { .. } => Squash::Identity,
        Problem::PersistenceH0 { range, .. } => Squash::Affine {
            scale: *range,
            offset: 0.0,
        },
    }
}

/// The graph the model propagates over: the problem graph, or for point
/// clouds the Rips graph of `initial` at the default filtration value.
pub fn model_graph(p: &Problem, initial: &StateMatrix) -> Result<SparseGraph> {
    if let Some(g) = p.graph() {
        return Ok(g.clone());
    }
    let Problem::PersistenceH0 { range, .. } = p else {
        unreachable!("only point-cloud problems lack a graph")
    };
    let cloud = PointCloud::new(initial.values().clone(), *range)?;
    let eps = default_filtration(&cloud).ok_or(Error::InvalidSpec(
        "point cloud needs two distinct points".into(),
    ))?;
    rips_adjacency(&cloud, eps)
}

pub fn build_model(p: &Problem, initial: &StateMatrix, spec: &ModelSpec, seed: u64) -> Result<GcnModel> {
    let graph = model_graph(p, initial)?;
    let propagation = propagation_matrix(&graph, spec.propagation)?;
    let config = GcnConfig {
        hidden: spec.hidden,
        layers: spec.layers,
        residual: spec.residual,
        concat: spec.concat,
        activation: crate::gcn::Activation::LeakyRelu { slope: 0.01 },
        squash: spec.squash.unwrap_or_else(|| default_squash(p)),
        embedding_init: if p.is_phase() {
            EmbeddingInit::UniformPhase
        } else {
            EmbeddingInit::Normal { std: 1.0 }
        },
        out_dim: p.dim(),
    };
    let mut rng = substream(seed, Stream::Model);
    GcnModel::new(config, propagation, &mut rng)
}

/// A fully specified run.
#[derive(Debug, Clone)]
pub struct RunPlan {
    pub problem: Problem,
    pub model: ModelSpec,
    pub optimizer: OptimizerConfig,
    pub stop: StoppingRule,
    pub switch_at: usize,
    pub prefit: PrefitSpec,
    pub seed: u64,
    /// Starting state; drawn from the seed when absent.
    pub initial: Option<StateMatrix>,
}

/// A finished run and, for reparametrized modes, the trained model.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub record: RunRecord,
    pub model: Option<GcnModel>,
}

impl RunPlan {
    pub fn new(problem: Problem, seed: u64) -> Self {
        Self {
            problem,
            model: ModelSpec::default(),
            optimizer: OptimizerConfig::adam(0.01),
            stop: StoppingRule::default(),
            switch_at: 100,
            prefit: PrefitSpec::default(),
            seed,
            initial: None,
        }
    }

    fn initial(&self) -> Result<StateMatrix> {
        match &self.initial {
            Some(w) => Ok(w.clone()),
            None => initial_state(&self.problem, self.seed),
        }
    }

    /// Runs in the plan's own mode.
    pub fn execute(&self) -> Result<RunRecord> {
        Ok(self.run(self.model.mode)?.record)
    }

    /// The plain-descent baseline from the same seed.
    pub fn execute_baseline(&self) -> Result<RunRecord> {
        Ok(self.run(ModelMode::Linear)?.record)
    }

    pub fn run(&self, mode: ModelMode) -> Result<RunOutcome> {
        let initial = self.initial()?;
        if mode == ModelMode::Linear {
            let record = run_linear(&self.problem, &initial, &self.optimizer, &self.stop)?;
            return Ok(RunOutcome { record, model: None });
        }
        let mut model = build_model(&self.problem, &initial, &self.model, self.seed)?;
        let mut prefit_ms = 0.0;
        if matches!(self.problem, Problem::PersistenceH0 { .. }) {
            let cfg = OptimizerConfig {
                learning_rate: self.prefit.learning_rate,
                ..self.optimizer
            };
            prefit_ms = prefit(&mut model, &initial, &cfg, self.prefit.tol, self.prefit.max_iters)?.wall_ms;
        }
        let mut record = match mode {
            ModelMode::Gcn => run_reparam(&self.problem, &mut model, &self.optimizer, &self.stop)?,
            _ => run_hybrid(
                &self.problem,
                &mut model,
                &self.optimizer,
                &self.optimizer,
                self.switch_at.min(self.stop.max_iters),
                &self.stop,
            )?,
        };
        record.prefit_ms = prefit_ms;
        Ok(RunOutcome {
            record,
            model: Some(model),
        })
    }
}
