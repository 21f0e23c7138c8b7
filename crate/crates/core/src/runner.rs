//! Trajectory execution: plain descent, reparametrized descent, the
//! two-stage hybrid, prefitting and speedup reporting.

use std::io::Write;
use std::time::Instant;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, RunSide};
use crate::gcn::GcnModel;
use crate::losses::{order_parameter, Problem};
use crate::optim::{OptimizerConfig, OptimizerState};
use crate::state::StateMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StoppingRule {
    pub max_iters: usize,
    pub patience: usize,
    pub fluctuation_tol: f64,
}

impl Default for StoppingRule {
    fn default() -> Self {
        Self {
            max_iters: 1000,
            patience: 10,
            fluctuation_tol: 1e-10,
        }
    }
}

impl StoppingRule {
    pub fn new(max_iters: usize, patience: usize, fluctuation_tol: f64) -> Self {
        Self {
            max_iters,
            patience,
            fluctuation_tol,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.patience == 0 {
            return Err(Error::InvalidConfig("patience must be >= 1".into()));
        }
        if !(self.fluctuation_tol > 0.0) {
            return Err(Error::InvalidConfig("fluctuation_tol must be positive".into()));
        }
        Ok(())
    }

    fn with_max_iters(mut self, max_iters: usize) -> Self {
        self.max_iters = max_iters;
        self
    }
}

/// True iff the last `patience` successive differences are all below the tolerance.
pub fn convergence_check(history: &[f64], stop: &StoppingRule) -> bool {
    if stop.patience == 0 || history.len() < stop.patience + 1 {
        return false;
    }
    history[history.len() - stop.patience - 1..]
        .windows(2)
        .all(|w| (w[1] - w[0]).abs() < stop.fluctuation_tol)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterRecord {
    pub iter: usize,
    pub wall_ms: f64,
    pub loss: f64,
    pub order_param: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct RunRecord {
    pub history: Vec<IterRecord>,
    pub final_state: StateMatrix,
    pub converged: bool,
    pub switch_iter: Option<usize>,
    /// Time spent fitting the model before the run, counted against it.
    pub prefit_ms: f64,
}

impl RunRecord {
    fn empty(state: StateMatrix) -> Self {
        Self {
            history: Vec::new(),
            final_state: state,
            converged: false,
            switch_iter: None,
            prefit_ms: 0.0,
        }
    }

    pub fn iterations_run(&self) -> usize {
        self.history.len()
    }

    pub fn losses(&self) -> Vec<f64> {
        self.history.iter().map(|r| r.loss).collect()
    }

    pub fn final_loss(&self) -> Option<f64> {
        self.history.last().map(|r| r.loss)
    }

    pub fn final_order_param(&self) -> Option<f64> {
        self.history.last().and_then(|r| r.order_param)
    }

    pub fn write_csv(&self, out: &mut impl Write) -> Result<()> {
        writeln!(out, "iter,wall_ms,loss,order_param")?;
        for r in &self.history {
            match r.order_param {
                Some(rho) => writeln!(out, "{},{:?},{:?},{:?}", r.iter, r.wall_ms, r.loss, rho)?,
                None => writeln!(out, "{},{:?},{:?},", r.iter, r.wall_ms, r.loss)?,
            }
        }
        Ok(())
    }
}

/// Reads a trajectory written by [`RunRecord::write_csv`].
pub fn parse_trajectory_csv(text: &str) -> Result<Vec<IterRecord>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, "iter,wall_ms,loss,order_param")) => {}
        _ => {
            return Err(Error::Parse {
                line: 1,
                message: "expected header `iter,wall_ms,loss,order_param`".into(),
            })
        }
    }
    let mut out = Vec::new();
    for (idx, line) in lines {
        let bad = |message: String| Error::Parse { line: idx + 1, message };
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 4 {
            return Err(bad(format!("expected 4 fields, found {}", fields.len())));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|e| bad(format!("`{s}`: {e}")));
        out.push(IterRecord {
            iter: fields[0].parse().map_err(|e| bad(format!("`{}`: {e}", fields[0])))?,
            wall_ms: num(fields[1])?,
            loss: num(fields[2])?,
            order_param: if fields[3].is_empty() { None } else { Some(num(fields[3])?) },
        });
    }
    Ok(out)
}

struct Recorder<'a> {
    problem: &'a Problem,
    start: Instant,
    record: RunRecord,
    stage_losses: Vec<f64>,
}

impl<'a> Recorder<'a> {
    fn new(problem: &'a Problem, state: StateMatrix) -> Self {
        Self {
            problem,
            start: Instant::now(),
            record: RunRecord::empty(state),
            stage_losses: Vec::new(),
        }
    }

    /// Evaluates and records `w`; returns the gradient.
    fn observe(&mut self, w: StateMatrix) -> Result<StateMatrix> {
        let (loss, grad) = self.problem.eval(&w)?;
        let iter = self.record.history.len();
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss { iter, loss });
        }
        let order_param = self.problem.is_phase().then(|| order_parameter(&w));
        self.record.history.push(IterRecord {
            iter,
            wall_ms: self.start.elapsed().as_secs_f64() * 1e3,
            loss,
            order_param,
        });
        self.stage_losses.push(loss);
        self.record.final_state = w;
        Ok(grad)
    }

    fn converged(&self, stop: &StoppingRule) -> bool {
        convergence_check(&self.stage_losses, stop)
    }
}

fn require_state_shape(p: &Problem, w: &StateMatrix) -> Result<()> {
    w.require_shape(p.n(), p.dim())
}

fn linear_stage(
    rec: &mut Recorder<'_>,
    w0: &StateMatrix,
    cfg: &OptimizerConfig,
    stop: &StoppingRule,
) -> Result<()> {
    let mut w = w0.clone().into_inner();
    let mut state = OptimizerState::for_bundle(cfg, &[&w])?;
    for iter in 0..stop.max_iters {
        let grad = rec.observe(StateMatrix::from(w.clone()))?;
        if rec.converged(stop) {
            rec.record.converged = true;
            break;
        }
        if iter + 1 < stop.max_iters {
            state.step(cfg, &mut [&mut w], &[grad.values()])?;
        }
    }
    Ok(())
}

fn reparam_stage(
    rec: &mut Recorder<'_>,
    model: &mut GcnModel,
    cfg: &OptimizerConfig,
    stop: &StoppingRule,
) -> Result<()> {
    let mut state = OptimizerState::for_bundle(cfg, &model.tensors())?;
    for iter in 0..stop.max_iters {
        let w = model.forward();
        let grad_w = rec.observe(w)?;
        if rec.converged(stop) {
            rec.record.converged = true;
            break;
        }
        if iter + 1 < stop.max_iters {
            let grads = model.backward(&grad_w)?;
            state.step(cfg, &mut model.tensors_mut(), &grads.tensors())?;
        }
    }
    Ok(())
}

/// Plain descent on `w` itself.
pub fn run_linear(
    p: &Problem,
    w0: &StateMatrix,
    cfg: &OptimizerConfig,
    stop: &StoppingRule,
) -> Result<RunRecord> {
    require_state_shape(p, w0)?;
    cfg.validate()?;
    stop.validate()?;
    let mut rec = Recorder::new(p, w0.clone());
    linear_stage(&mut rec, w0, cfg, stop)?;
    Ok(rec.record)
}

/// Descent on the model parameters `θ` of `w(θ)`; `model` is trained in place.
pub fn run_reparam(
    p: &Problem,
    model: &mut GcnModel,
    cfg: &OptimizerConfig,
    stop: &StoppingRule,
) -> Result<RunRecord> {
    check_model(p, model)?;
    cfg.validate()?;
    stop.validate()?;
    let mut rec = Recorder::new(p, model.evaluate());
    reparam_stage(&mut rec, model, cfg, stop)?;
    Ok(rec.record)
}

fn check_model(p: &Problem, model: &GcnModel) -> Result<()> {
    if model.n() != p.n() || model.out_dim() != p.dim() {
        return Err(Error::dims(
            format!("model producing {}x{}", p.n(), p.dim()),
            format!("{}x{}", model.n(), model.out_dim()),
        ));
    }
    Ok(())
}

/// Reparametrized descent for up to `switch_at` iterations (less on a
/// plateau), then plain descent from the model's output.
///
/// The stage-2 optimizer starts with fresh state. Stage 2 re-evaluates the
/// switch point, so that loss appears twice in the history.
pub fn run_hybrid(
    p: &Problem,
    model: &mut GcnModel,
    cfg1: &OptimizerConfig,
    cfg2: &OptimizerConfig,
    switch_at: usize,
    stop: &StoppingRule,
) -> Result<RunRecord> {
    check_model(p, model)?;
    cfg1.validate()?;
    cfg2.validate()?;
    stop.validate()?;
    if switch_at > stop.max_iters {
        return Err(Error::InvalidConfig(format!(
            "switch_at {switch_at} exceeds max_iters {}",
            stop.max_iters
        )));
    }
    let mut rec = Recorder::new(p, model.evaluate());
    reparam_stage(&mut rec, model, cfg1, &stop.with_max_iters(switch_at))?;
    let stage1 = rec.record.history.len();
    let remaining = stop.max_iters - stage1;
    if remaining == 0 || switch_at == stop.max_iters {
        return Ok(rec.record);
    }
    rec.record.converged = false;
    rec.stage_losses.clear();
    rec.record.switch_iter = Some(stage1);
    let w0 = model.evaluate();
    linear_stage(&mut rec, &w0, cfg2, &stop.with_max_iters(remaining))?;
    Ok(rec.record)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrefitReport {
    pub iterations: usize,
    pub mse: f64,
    pub wall_ms: f64,
    pub reached: bool,
}

fn mse(w: &DMatrix<f64>, target: &DMatrix<f64>) -> f64 {
    (w - target).norm_squared() / w.len() as f64
}

/// Fits `model` so that its output reproduces `target` in mean squared error.
pub fn prefit(
    model: &mut GcnModel,
    target: &StateMatrix,
    cfg: &OptimizerConfig,
    tol: f64,
    max_iters: usize,
) -> Result<PrefitReport> {
    target.require_shape(model.n(), model.out_dim())?;
    cfg.validate()?;
    let start = Instant::now();
    let t = target.values();
    let mut state = OptimizerState::for_bundle(cfg, &model.tensors())?;
    let mut iterations = 0;
    let mut err = mse(model.evaluate().values(), t);
    while err > tol && iterations < max_iters {
        let w = model.forward();
        err = mse(w.values(), t);
        if !err.is_finite() {
            return Err(Error::NonFiniteLoss { iter: iterations, loss: err });
        }
        if err <= tol {
            break;
        }
        let scale = 2.0 / w.values().len() as f64;
        let grad_w = StateMatrix::from((w.values() - t) * scale);
        let grads = model.backward(&grad_w)?;
        state.step(cfg, &mut model.tensors_mut(), &grads.tensors())?;
        iterations += 1;
        err = mse(model.evaluate().values(), t);
    }
    Ok(PrefitReport {
        iterations,
        mse: err,
        wall_ms: start.elapsed().as_secs_f64() * 1e3,
        reached: err <= tol,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpeedupReport {
    pub iter_speedup_to_threshold: f64,
    pub wallclock_speedup: f64,
    pub threshold_loss: f64,
    pub baseline_final_loss: f64,
    pub candidate_final_loss: f64,
    pub baseline_iters: usize,
    pub candidate_iters: usize,
}

/// Default relative margin above the baseline's final loss.
pub const DEFAULT_MARGIN: f64 = 0.01;

/// `(iterations, wall_ms)` needed to get at or below `threshold`.
pub fn time_to_threshold(record: &RunRecord, threshold: f64) -> Option<(usize, f64)> {
    record
        .history
        .iter()
        .position(|r| r.loss <= threshold)
        .map(|idx| (idx + 1, record.history[idx].wall_ms + record.prefit_ms))
}

/// Compares iterations and wall time to reach `baseline final + margin·|final|`.
pub fn speedup(baseline: &RunRecord, candidate: &RunRecord, margin: f64) -> Result<SpeedupReport> {
    let base_final = baseline.final_loss().ok_or(Error::EmptyRecord)?;
    let cand_final = candidate.final_loss().ok_or(Error::EmptyRecord)?;
    let threshold = base_final + margin * base_final.abs();
    let (base_iters, base_ms) =
        time_to_threshold(baseline, threshold).ok_or(Error::ThresholdNotReached(RunSide::Baseline))?;
    let (cand_iters, cand_ms) =
        time_to_threshold(candidate, threshold).ok_or(Error::ThresholdNotReached(RunSide::Candidate))?;
    let wallclock_speedup = if cand_ms > 0.0 { base_ms / cand_ms } else { f64::INFINITY };
    Ok(SpeedupReport {
        iter_speedup_to_threshold: base_iters as f64 / cand_iters as f64,
        wallclock_speedup,
        threshold_loss: threshold,
        baseline_final_loss: base_final,
        candidate_final_loss: cand_final,
        baseline_iters: base_iters,
        candidate_iters: cand_iters,
    })
}

/// Median of a non-empty sample.
pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let mid = v.len() / 2;
    if v.len() % 2 == 0 {
        0.5 * (v[mid - 1] + v[mid])
    } else {
        v[mid]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::losses::BoundaryCondition;
    use crate::SparseGraph;

    fn rule(patience: usize, tol: f64) -> StoppingRule {
        StoppingRule::new(100, patience, tol)
    }

    #[test]
    fn convergence_truth_table() {
        let stop = rule(3, 1e-6);
        assert!(!convergence_check(&[1.0, 1.0, 1.0], &stop));
        assert!(convergence_check(&[1.0; 4], &stop));
        let falling: Vec<f64> = (0..10).map(|k| -(k as f64) * 2e-6).collect();
        assert!(!convergence_check(&falling, &stop));
    }

    #[test]
    fn zero_iterations() {
        let g = SparseGraph::from_edge_list(2, &[(0, 1, 1.0)]).unwrap();
        let p = Problem::kuramoto(g).unwrap();
        let rec = run_linear(
            &p,
            &StateMatrix::zeros(2, 1),
            &OptimizerConfig::sgd(0.1),
            &StoppingRule::new(0, 10, 1e-10),
        )
        .unwrap();
        assert_eq!(rec.iterations_run(), 0);
        assert!(!rec.converged);
    }

    #[test]
    fn heat_linear_matches_direct_solve() {
        let g = SparseGraph::from_edge_list(2, &[(0, 1, 1.0)]).unwrap();
        let bc = BoundaryCondition::new(vec![(0, 1.0)], 1.0, 2);
        let exact = crate::losses::heat_direct_solve(&g, &bc).unwrap();
        let p = Problem::heat(g, bc).unwrap();
        let rec = run_linear(
            &p,
            &StateMatrix::zeros(2, 1),
            &OptimizerConfig::sgd(0.1),
            &StoppingRule::new(5000, 10, 1e-14),
        )
        .unwrap();
        let gap = (rec.final_state.values() - exact.values()).amax();
        assert!(gap < 1e-4, "gap {gap}");
    }

    #[test]
    fn identical_records_give_unit_speedup() {
        let history = (0..5)
            .map(|k| IterRecord {
                iter: k,
                wall_ms: k as f64,
                loss: 10.0 - k as f64,
                order_param: None,
            })
            .collect();
        let rec = RunRecord {
            history,
            final_state: StateMatrix::zeros(1, 1),
            converged: true,
            switch_iter: None,
            prefit_ms: 0.0,
        };
        let report = speedup(&rec, &rec, DEFAULT_MARGIN).unwrap();
        assert_eq!(report.iter_speedup_to_threshold, 1.0);
        assert_eq!(report.wallclock_speedup, 1.0);
    }

    #[test]
    fn csv_round_trip() {
        let rec = RunRecord {
            history: vec![
                IterRecord { iter: 0, wall_ms: 0.5, loss: -1.25, order_param: Some(0.3) },
                IterRecord { iter: 1, wall_ms: 0.75, loss: -1.5, order_param: None },
            ],
            final_state: StateMatrix::zeros(1, 1),
            converged: false,
            switch_iter: None,
            prefit_ms: 0.0,
        };
        let mut buf = Vec::new();
        rec.write_csv(&mut buf).unwrap();
        let parsed = parse_trajectory_csv(std::str::from_utf8(&buf).unwrap()).unwrap();
        assert_eq!(parsed, rec.history);
    }

    #[test]
    fn median_values() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
    }
}
