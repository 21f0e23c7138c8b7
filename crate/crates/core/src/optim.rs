//! Parameter update rules shared by raw states and network parameters.
//!
//! A parameter bundle is an ordered list of dense tensors. The optimizer
//! state mirrors the bundle's shapes and is created once per bundle.

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest parameter count the dense full-matrix rule accepts.
pub const FULL_MATRIX_LIMIT: usize = 500;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum OptimizerKind {
    Sgd,
    Adam {
        beta1: f64,
        beta2: f64,
    },
    #[serde(rename = "rmsprop")]
    RmsProp {
        decay: f64,
    },
    #[serde(rename = "adagrad")]
    AdaGradDiag,
    #[serde(rename = "full_adagrad")]
    FullMatrixAdaGrad {
        discount: f64,
        window: Option<usize>,
    },
}

impl OptimizerKind {
    pub fn adam() -> Self {
        OptimizerKind::Adam {
            beta1: 0.9,
            beta2: 0.999,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    pub epsilon: f64,
}

impl OptimizerConfig {
    pub fn new(kind: OptimizerKind, learning_rate: f64) -> Self {
        Self {
            kind,
            learning_rate,
            epsilon: 1e-8,
        }
    }

    pub fn sgd(learning_rate: f64) -> Self {
        Self::new(OptimizerKind::Sgd, learning_rate)
    }

    /// Adam with β1 = 0.9, β2 = 0.999, ξ = 1e-8.
    pub fn adam(learning_rate: f64) -> Self {
        Self::new(OptimizerKind::adam(), learning_rate)
    }

    pub fn with_epsilon(mut self, epsilon: f64) -> Self {
        self.epsilon = epsilon;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        let open_unit = |x: f64| x > 0.0 && x < 1.0;
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return bad(format!("learning rate must be positive, got {}", self.learning_rate));
        }
        if !(self.epsilon >= 0.0 && self.epsilon < 1.0) {
            return bad(format!("epsilon must lie in [0, 1), got {}", self.epsilon));
        }
        match self.kind {
            OptimizerKind::Adam { beta1, beta2 } if !open_unit(beta1) || !open_unit(beta2) => {
                bad(format!("Adam betas must lie in (0, 1), got ({beta1}, {beta2})"))
            }
            OptimizerKind::RmsProp { decay } if !open_unit(decay) => {
                bad(format!("RMSProp decay must lie in (0, 1), got {decay}"))
            }
            OptimizerKind::FullMatrixAdaGrad { discount, window } => {
                if !(discount > 0.0 && discount <= 1.0) {
                    bad(format!("discount must lie in (0, 1], got {discount}"))
                } else if window == Some(0) {
                    bad("window must be at least 1".into())
                } else {
                    Ok(())
                }
            }
            _ => Ok(()),
        }
    }
}

/// Discounted gradient outer-product accumulator `G ← γG + ggᵀ`.
///
/// With a window of `Δt` steps only the most recent `Δt` gradients
/// contribute and reads divide by the number of contributing steps. Without
/// a window the sum is used as is, as in classic full-matrix AdaGrad.
#[derive(Debug, Clone)]
pub struct GradientCovariance {
    raw: DMatrix<f64>,
    discount: f64,
    window: Option<usize>,
    history: VecDeque<DVector<f64>>,
    steps: usize,
    cached_root: Option<(f64, DMatrix<f64>)>,
}

impl GradientCovariance {
    pub fn new(n: usize, discount: f64, window: Option<usize>) -> Result<Self> {
        if n > FULL_MATRIX_LIMIT {
            return Err(Error::SizeLimit {
                n,
                limit: FULL_MATRIX_LIMIT,
            });
        }
        Ok(Self {
            raw: DMatrix::zeros(n, n),
            discount,
            window,
            history: VecDeque::new(),
            steps: 0,
            cached_root: None,
        })
    }

    /// Starts from a given normalized matrix, as if accumulated over one step.
    pub fn from_matrix(g: DMatrix<f64>) -> Result<Self> {
        let mut acc = Self::new(g.nrows(), 1.0, None)?;
        acc.raw = g;
        acc.steps = 1;
        Ok(acc)
    }

    pub fn dim(&self) -> usize {
        self.raw.nrows()
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn accumulate(&mut self, g: &DVector<f64>) -> Result<()> {
        if g.len() != self.dim() {
            return Err(Error::ShapeMismatch(format!(
                "gradient of length {} for a {}-dimensional accumulator",
                g.len(),
                self.dim()
            )));
        }
        self.steps += 1;
        self.cached_root = None;
        match self.window {
            None => {
                self.raw *= self.discount;
                self.raw.ger(1.0, g, g, 1.0);
            }
            Some(window) => {
                self.history.push_front(g.clone());
                self.history.truncate(window);
                self.raw.fill(0.0);
                let mut weight = 1.0;
                for past in &self.history {
                    self.raw.ger(weight, past, past, 1.0);
                    weight *= self.discount;
                }
            }
        }
        Ok(())
    }

    /// Discounted sum without window normalization.
    pub fn raw(&self) -> &DMatrix<f64> {
        &self.raw
    }

    /// `G` read for the preconditioner: with a window, divided by the
    /// number of contributing steps; without one, the plain discounted sum.
    pub fn normalized(&self) -> DMatrix<f64> {
        match self.window {
            Some(w) if self.steps > 0 => &self.raw / self.steps.min(w) as f64,
            _ => self.raw.clone(),
        }
    }

    /// `(G + ξI)^{-1/2}`, recomputed only after `G` changes.
    pub fn inverse_root(&mut self, ridge: f64) -> &DMatrix<f64> {
        let stale = !matches!(&self.cached_root, Some((r, _)) if *r == ridge);
        if stale {
            let eig = SymmetricEigen::new(self.normalized());
            let scales = eig.eigenvalues.map(|l| {
                let shifted = l + ridge;
                if shifted > 0.0 {
                    shifted.powf(-0.5)
                } else {
                    0.0
                }
            });
            let v = &eig.eigenvectors;
            let root = v * DMatrix::from_diagonal(&scales) * v.transpose();
            self.cached_root = Some((ridge, root));
        }
        &self.cached_root.as_ref().expect("root cached above").1
    }
}

/// Per-tensor moment accumulators for one parameter bundle.
#[derive(Debug, Clone, Default)]
pub struct OptimizerState {
    step: u64,
    shapes: Vec<(usize, usize)>,
    first: Vec<DMatrix<f64>>,
    second: Vec<DMatrix<f64>>,
    full: Option<GradientCovariance>,
    initialized: bool,
}

impl OptimizerState {
    /// Fresh state sized for `params`.
    pub fn for_bundle(cfg: &OptimizerConfig, params: &[&DMatrix<f64>]) -> Result<Self> {
        cfg.validate()?;
        let shapes: Vec<_> = params.iter().map(|p| p.shape()).collect();
        let zeros = || shapes.iter().map(|&(r, c)| DMatrix::zeros(r, c)).collect::<Vec<_>>();
        let full = match cfg.kind {
            OptimizerKind::FullMatrixAdaGrad { discount, window } => {
                let total = shapes.iter().map(|(r, c)| r * c).sum();
                Some(GradientCovariance::new(total, discount, window)?)
            }
            _ => None,
        };
        Ok(Self {
            step: 0,
            first: zeros(),
            second: zeros(),
            shapes,
            full,
            initialized: true,
        })
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn second_moments(&self) -> &[DMatrix<f64>] {
        &self.second
    }

    pub fn covariance(&self) -> Option<&GradientCovariance> {
        self.full.as_ref()
    }

    pub fn step(
        &mut self,
        cfg: &OptimizerConfig,
        params: &mut [&mut DMatrix<f64>],
        grads: &[&DMatrix<f64>],
    ) -> Result<()> {
        if !self.initialized {
            return Err(Error::UninitializedState);
        }
        if params.len() != self.shapes.len() || grads.len() != self.shapes.len() {
            return Err(Error::ShapeMismatch(format!(
                "bundle of {} tensors, got {} parameters and {} gradients",
                self.shapes.len(),
                params.len(),
                grads.len()
            )));
        }
        for (k, &shape) in self.shapes.iter().enumerate() {
            if params[k].shape() != shape || grads[k].shape() != shape {
                return Err(Error::ShapeMismatch(format!(
                    "tensor {k}: expected {shape:?}, got parameter {:?} and gradient {:?}",
                    params[k].shape(),
                    grads[k].shape()
                )));
            }
        }
        self.step += 1;
        let lr = cfg.learning_rate;
        let eps = cfg.epsilon;
        let t = self.step as i32;
        match cfg.kind {
            OptimizerKind::Sgd => {
                for (p, g) in params.iter_mut().zip(grads) {
                    p.zip_apply(*g, |x, gi| *x -= lr * gi);
                }
            }
            OptimizerKind::Adam { beta1, beta2 } => {
                let c1 = 1.0 - beta1.powi(t);
                let c2 = 1.0 - beta2.powi(t);
                for k in 0..params.len() {
                    let g = grads[k];
                    let m = &mut self.first[k];
                    let v = &mut self.second[k];
                    let p = &mut *params[k];
                    for idx in 0..g.len() {
                        let gi = g[idx];
                        m[idx] = beta1 * m[idx] + (1.0 - beta1) * gi;
                        v[idx] = beta2 * v[idx] + (1.0 - beta2) * gi * gi;
                        let m_hat = m[idx] / c1;
                        let v_hat = v[idx] / c2;
                        p[idx] -= lr * m_hat / (v_hat.sqrt() + eps);
                    }
                }
            }
            OptimizerKind::RmsProp { decay } => {
                let c = 1.0 - decay.powi(t);
                for k in 0..params.len() {
                    let g = grads[k];
                    let v = &mut self.second[k];
                    let p = &mut *params[k];
                    for idx in 0..g.len() {
                        let gi = g[idx];
                        v[idx] = decay * v[idx] + (1.0 - decay) * gi * gi;
                        p[idx] -= lr * gi / ((v[idx] / c).sqrt() + eps);
                    }
                }
            }
            OptimizerKind::AdaGradDiag => {
                for k in 0..params.len() {
                    let g = grads[k];
                    let v = &mut self.second[k];
                    let p = &mut *params[k];
                    for idx in 0..g.len() {
                        let gi = g[idx];
                        v[idx] += gi * gi;
                        p[idx] -= lr * gi / (v[idx].sqrt() + eps);
                    }
                }
            }
            OptimizerKind::FullMatrixAdaGrad { .. } => {
                let acc = self.full.as_mut().ok_or(Error::UninitializedState)?;
                let flat = flatten(grads);
                acc.accumulate(&flat)?;
                let update = acc.inverse_root(eps) * &flat;
                let mut offset = 0;
                for p in params.iter_mut() {
                    for idx in 0..p.len() {
                        p[idx] -= lr * update[offset + idx];
                    }
                    offset += p.len();
                }
            }
        }
        Ok(())
    }
}

fn flatten(tensors: &[&DMatrix<f64>]) -> DVector<f64> {
    DVector::from_iterator(
        tensors.iter().map(|t| t.len()).sum(),
        tensors.iter().flat_map(|t| t.iter().copied()),
    )
}

/// `G ← γG + ggᵀ` on a full-matrix state.
pub fn accumulate_g(acc: &mut GradientCovariance, g: &DVector<f64>) -> Result<()> {
    acc.accumulate(g)
}

/// `p ← p − η (G + ξI)^{-1/2} g` using the accumulated (normalized) `G`.
pub fn full_matrix_step(
    acc: &mut GradientCovariance,
    params: &mut DVector<f64>,
    g: &DVector<f64>,
    learning_rate: f64,
    ridge: f64,
) -> Result<()> {
    if params.len() != acc.dim() || g.len() != acc.dim() {
        return Err(Error::ShapeMismatch(format!(
            "vectors of length {} and {} for a {}-dimensional accumulator",
            params.len(),
            g.len(),
            acc.dim()
        )));
    }
    let update = acc.inverse_root(ridge) * g;
    params.axpy(-learning_rate, &update, 1.0);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(v: f64) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, v)
    }

    fn one_step(cfg: &OptimizerConfig, p: f64, g: f64) -> f64 {
        let mut param = scalar(p);
        let grad = scalar(g);
        let mut state = OptimizerState::for_bundle(cfg, &[&param]).unwrap();
        state.step(cfg, &mut [&mut param], &[&grad]).unwrap();
        param[0]
    }

    #[test]
    fn sgd_step() {
        assert!((one_step(&OptimizerConfig::sgd(0.1), 1.0, 2.0) - 0.8).abs() < 1e-15);
    }

    #[test]
    fn adam_first_step_is_learning_rate() {
        let updated = one_step(&OptimizerConfig::adam(0.01), 0.0, 5.0);
        assert!((updated + 0.01).abs() < 1e-6);
    }

    #[test]
    fn zero_gradient_is_a_fixed_point() {
        let kinds = [
            OptimizerKind::Sgd,
            OptimizerKind::adam(),
            OptimizerKind::RmsProp { decay: 0.9 },
            OptimizerKind::AdaGradDiag,
            OptimizerKind::FullMatrixAdaGrad {
                discount: 0.9,
                window: None,
            },
        ];
        for kind in kinds {
            let cfg = OptimizerConfig::new(kind, 0.1);
            let mut p = DMatrix::from_row_slice(2, 2, &[1.0, -2.0, 3.0, 0.5]);
            let before = p.clone();
            let g = DMatrix::zeros(2, 2);
            let mut state = OptimizerState::for_bundle(&cfg, &[&p]).unwrap();
            for _ in 0..3 {
                state.step(&cfg, &mut [&mut p], &[&g]).unwrap();
            }
            assert_eq!(p, before, "{kind:?}");
        }
    }

    #[test]
    fn shape_and_state_errors() {
        let cfg = OptimizerConfig::sgd(0.1);
        let mut p = scalar(1.0);
        let mut state = OptimizerState::default();
        assert!(matches!(
            state.step(&cfg, &mut [&mut p], &[&scalar(1.0)]),
            Err(Error::UninitializedState)
        ));
        let mut state = OptimizerState::for_bundle(&cfg, &[&p]).unwrap();
        assert!(matches!(
            state.step(&cfg, &mut [&mut p], &[&DMatrix::zeros(2, 1)]),
            Err(Error::ShapeMismatch(_))
        ));
    }

    #[test]
    fn accumulate_examples() {
        let mut acc = GradientCovariance::new(2, 1.0, Some(10)).unwrap();
        acc.accumulate(&DVector::from_vec(vec![1.0, 0.0])).unwrap();
        assert_eq!(acc.raw(), &DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]));
        acc.accumulate(&DVector::from_vec(vec![0.0, 1.0])).unwrap();
        assert_eq!(acc.normalized(), DMatrix::from_row_slice(2, 2, &[0.5, 0.0, 0.0, 0.5]));
    }

    #[test]
    fn window_drops_old_gradients() {
        let mut acc = GradientCovariance::new(2, 0.5, Some(2)).unwrap();
        for g in [[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]] {
            acc.accumulate(&DVector::from_row_slice(&g)).unwrap();
        }
        // [1,1]ᵀ[1,1] + 0.5 e2 e2ᵀ
        assert_eq!(acc.raw(), &DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.5]));
        assert_eq!(acc.normalized(), acc.raw() / 2.0);
    }

    #[test]
    fn accumulator_size_limit() {
        assert!(matches!(
            GradientCovariance::new(FULL_MATRIX_LIMIT + 1, 1.0, None),
            Err(Error::SizeLimit { .. })
        ));
    }

    #[test]
    fn full_matrix_identity_is_sgd() {
        let mut acc = GradientCovariance::from_matrix(DMatrix::identity(3, 3)).unwrap();
        let mut p = DVector::from_vec(vec![1.0, 2.0, 3.0]);
        let g = DVector::from_vec(vec![0.5, -1.0, 2.0]);
        full_matrix_step(&mut acc, &mut p, &g, 0.1, 0.0).unwrap();
        let expected = DVector::from_vec(vec![0.95, 2.1, 2.8]);
        assert!((p - expected).amax() < 1e-14);
    }

    #[test]
    fn full_matrix_isotropic_step() {
        let mut acc =
            GradientCovariance::from_matrix(DMatrix::from_diagonal(&DVector::from_vec(vec![100.0, 1.0])))
                .unwrap();
        let mut p = DVector::zeros(2);
        let g = DVector::from_vec(vec![10.0, 1.0]);
        full_matrix_step(&mut acc, &mut p, &g, 0.1, 0.0).unwrap();
        assert!((p[0] + 0.1).abs() < 1e-14 && (p[1] + 0.1).abs() < 1e-14, "{p}");
    }

    #[test]
    fn config_validation() {
        assert!(OptimizerConfig::sgd(0.0).validate().is_err());
        assert!(OptimizerConfig::new(OptimizerKind::Adam { beta1: 1.0, beta2: 0.9 }, 0.1)
            .validate()
            .is_err());
        assert!(OptimizerConfig::new(OptimizerKind::RmsProp { decay: 0.0 }, 0.1)
            .validate()
            .is_err());
        assert!(OptimizerConfig::adam(0.01).with_epsilon(1.0).validate().is_err());
        assert!(OptimizerConfig::adam(0.01).validate().is_ok());
    }
}
