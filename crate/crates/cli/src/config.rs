//! JSON run configuration.
//!
//! One document fully determines a run. Omitted fields take their defaults;
//! unknown keys are rejected.

use std::path::{Path, PathBuf};

use reparam_core::experiment::{heat_pins, ModelMode, ModelSpec, PrefitSpec, RunPlan};
use reparam_core::graph::generate;
use reparam_core::persistence::PointCloud;
use reparam_core::{GraphSpec, HopfParams, OptimizerConfig, OptimizerKind, Problem, StoppingRule};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

/// Switch point used by hybrid runs that do not set one.
pub const DEFAULT_SWITCH_AT: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProblemKind {
    Heat,
    Kuramoto,
    HopfKuramoto,
    Persistence,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HeatSection {
    /// Fraction of nodes pinned at temperature 1.
    pub hot: f64,
    /// Fraction of nodes pinned at temperature 0.
    pub cold: f64,
    pub strength: f64,
    pub exponent: u32,
}

impl Default for HeatSection {
    fn default() -> Self {
        Self {
            hot: 0.1,
            cold: 0.1,
            strength: 1.0,
            exponent: 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HopfSection {
    pub c: f64,
    pub s1: f64,
    pub s2: f64,
}

impl Default for HopfSection {
    fn default() -> Self {
        let p = HopfParams::default();
        Self {
            c: p.c,
            s1: p.s1,
            s2: p.s2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CloudSection {
    pub n: usize,
    pub range: f64,
    /// Weight of the box penalty.
    pub weight: f64,
    /// Starting cloud as `x,y` rows; drawn from the seed when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
}

impl Default for CloudSection {
    fn default() -> Self {
        Self {
            n: 100,
            range: 2.0,
            weight: 1.0,
            path: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerName {
    Sgd,
    Adam,
    Rmsprop,
    Adagrad,
    FullAdagrad,
}

/// Optimizer settings. Rule-specific knobs are only accepted for their rule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerSection {
    pub kind: OptimizerName,
    pub learning_rate: f64,
    pub epsilon: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub beta1: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub beta2: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub decay: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub discount: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub window: Option<usize>,
}

impl Default for OptimizerSection {
    fn default() -> Self {
        Self {
            kind: OptimizerName::Adam,
            learning_rate: 0.01,
            epsilon: 1e-8,
            beta1: None,
            beta2: None,
            decay: None,
            discount: None,
            window: None,
        }
    }
}

impl OptimizerSection {
    pub fn to_config(&self) -> CliResult<OptimizerConfig> {
        let stray = |key: &str| {
            Err(CliError::Validation(format!(
                "optimizer.{key} does not apply to optimizer.kind {:?}",
                self.kind
            )))
        };
        let allowed: &[&str] = match self.kind {
            OptimizerName::Adam => &["beta1", "beta2"],
            OptimizerName::Rmsprop => &["decay"],
            OptimizerName::FullAdagrad => &["discount", "window"],
            OptimizerName::Sgd | OptimizerName::Adagrad => &[],
        };
        let set = [
            ("beta1", self.beta1.is_some()),
            ("beta2", self.beta2.is_some()),
            ("decay", self.decay.is_some()),
            ("discount", self.discount.is_some()),
            ("window", self.window.is_some()),
        ];
        if let Some((key, _)) = set.iter().find(|(k, present)| *present && !allowed.contains(k)) {
            return stray(key);
        }
        let kind = match self.kind {
            OptimizerName::Sgd => OptimizerKind::Sgd,
            OptimizerName::Adam => OptimizerKind::Adam {
                beta1: self.beta1.unwrap_or(0.9),
                beta2: self.beta2.unwrap_or(0.999),
            },
            OptimizerName::Rmsprop => OptimizerKind::RmsProp {
                decay: self.decay.unwrap_or(0.9),
            },
            OptimizerName::Adagrad => OptimizerKind::AdaGradDiag,
            OptimizerName::FullAdagrad => OptimizerKind::FullMatrixAdaGrad {
                discount: self.discount.unwrap_or(1.0),
                window: self.window,
            },
        };
        let cfg = OptimizerConfig::new(kind, self.learning_rate).with_epsilon(self.epsilon);
        cfg.validate().map_err(|e| CliError::Validation(e.to_string()))?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub problem: ProblemKind,
    /// Required for graph problems, rejected for point clouds.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub graph: Option<GraphSpec>,
    #[serde(default)]
    pub heat: HeatSection,
    #[serde(default)]
    pub hopf: HopfSection,
    #[serde(default)]
    pub cloud: CloudSection,
    #[serde(default)]
    pub model: ModelSpec,
    #[serde(default)]
    pub optimizer: OptimizerSection,
    #[serde(default)]
    pub stop: StoppingRule,
    /// Hybrid only; defaults to [`DEFAULT_SWITCH_AT`].
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub switch_at: Option<usize>,
    #[serde(default)]
    pub prefit: PrefitSpec,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
}

/// Parses and validates a configuration document.
pub fn parse_config(text: &str) -> CliResult<RunConfig> {
    let cfg: RunConfig = serde_json::from_str(text).map_err(|e| CliError::Parse {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn serialize_config(cfg: &RunConfig) -> String {
    serde_json::to_string_pretty(cfg).expect("configuration serializes")
}

pub fn read_config(path: &Path) -> CliResult<RunConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    parse_config(&text)
}

impl RunConfig {
    pub fn switch_at(&self) -> usize {
        self.switch_at.unwrap_or(DEFAULT_SWITCH_AT)
    }

    pub fn validate(&self) -> CliResult<()> {
        let invalid = |m: String| Err(CliError::Validation(m));
        match (self.problem, &self.graph) {
            (ProblemKind::Persistence, Some(_)) => {
                return invalid("graph is set but problem persistence takes a point cloud".into())
            }
            (ProblemKind::Persistence, None) => {}
            (kind, None) => return invalid(format!("problem {kind:?} requires graph")),
            _ => {}
        }
        if let Some(at) = self.switch_at {
            if self.model.mode != ModelMode::Hybrid {
                return invalid(format!("switch_at is set but model.mode is {:?}", self.model.mode));
            }
            if at > self.stop.max_iters {
                return invalid(format!(
                    "switch_at {at} exceeds stop.max_iters {}",
                    self.stop.max_iters
                ));
            }
        }
        self.stop
            .validate()
            .map_err(|e| CliError::Validation(format!("stop: {e}")))?;
        if !(1..=3).contains(&self.model.layers) {
            return invalid(format!("model.layers must lie in 1..=3, got {}", self.model.layers));
        }
        if self.model.hidden == 0 {
            return invalid("model.hidden must be >= 1".into());
        }
        self.model
            .propagation
            .validate()
            .map_err(|e| CliError::Validation(format!("model.propagation: {e}")))?;
        self.optimizer.to_config()?;
        if let Some(g) = &self.graph {
            g.validate().map_err(|e| CliError::Validation(format!("graph: {e}")))?;
        }
        if self.problem == ProblemKind::Persistence {
            if self.cloud.n < 2 && self.cloud.path.is_none() {
                return invalid("cloud.n must be >= 2".into());
            }
            if !(self.cloud.range > 0.0) {
                return invalid(format!("cloud.range must be positive, got {}", self.cloud.range));
            }
        }
        if self.prefit.max_iters == 0 || !(self.prefit.learning_rate > 0.0) || !(self.prefit.tol > 0.0) {
            return invalid("prefit needs positive learning_rate, tol and max_iters".into());
        }
        Ok(())
    }

    /// Builds the problem and run plan for `seed`.
    pub fn plan(&self, seed: u64) -> CliResult<RunPlan> {
        let mut initial = None;
        let problem = match self.problem {
            ProblemKind::Persistence => {
                let n = match &self.cloud.path {
                    Some(path) => {
                        let cloud = PointCloud::read_csv(path, self.cloud.range)?;
                        let n = cloud.n();
                        initial = Some(cloud.to_state());
                        n
                    }
                    None => self.cloud.n,
                };
                Problem::persistence(n, self.cloud.range, self.cloud.weight)?
            }
            kind => {
                let spec = self.graph.as_ref().expect("validated");
                let graph = generate(spec, seed)?;
                match kind {
                    ProblemKind::Heat => {
                        let h = &self.heat;
                        let mut bc = heat_pins(graph.n(), h.hot, h.cold, h.strength, seed)?;
                        bc.exponent = h.exponent;
                        Problem::heat(graph, bc)?
                    }
                    ProblemKind::Kuramoto => Problem::kuramoto(graph)?,
                    _ => {
                        let h = &self.hopf;
                        let params = HopfParams {
                            c: h.c,
                            s1: h.s1,
                            s2: h.s2,
                        };
                        Problem::hopf_kuramoto(graph, params)?
                    }
                }
            }
        };
        let mut plan = RunPlan::new(problem, seed);
        plan.model = self.model;
        plan.optimizer = self.optimizer.to_config()?;
        plan.stop = self.stop;
        plan.switch_at = self.switch_at();
        plan.prefit = self.prefit;
        plan.initial = initial;
        Ok(plan)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_gets_defaults() {
        let cfg = parse_config(r#"{"problem": "kuramoto", "graph": "lattice2d 25 25"}"#).unwrap();
        assert_eq!(cfg.model.hidden, 10);
        assert_eq!(cfg.model.mode, ModelMode::Hybrid);
        assert_eq!(cfg.switch_at(), 100);
        assert_eq!(cfg.stop.patience, 10);
        assert_eq!(cfg.stop.fluctuation_tol, 1e-10);
        let opt = cfg.optimizer.to_config().unwrap();
        assert_eq!(opt, OptimizerConfig::adam(0.01));
    }

    #[test]
    fn empty_document_is_a_parse_error() {
        assert!(matches!(parse_config(""), Err(CliError::Parse { .. })));
    }

    #[test]
    fn unknown_key_reports_line() {
        let text = "{\n  \"problem\": \"kuramoto\",\n  \"graph\": \"circle 5\",\n  \"colour\": 1\n}";
        match parse_config(text) {
            Err(CliError::Parse { line, message, .. }) => {
                assert_eq!(line, 4);
                assert!(message.contains("colour"), "{message}");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn switch_at_outside_hybrid_is_rejected() {
        let text = r#"{"problem": "kuramoto", "graph": "circle 5", "model": {"mode": "linear"}, "switch_at": 5}"#;
        assert!(matches!(parse_config(text), Err(CliError::Validation(_))));
    }

    #[test]
    fn optimizer_knob_for_wrong_rule_is_rejected() {
        let text = r#"{"problem": "kuramoto", "graph": "circle 5", "optimizer": {"kind": "sgd", "beta1": 0.5}}"#;
        assert!(matches!(parse_config(text), Err(CliError::Validation(_))));
    }
}
