//! Dense diagnostics for the reparametrization theory (small `n` only).

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::gcn::BINOMIAL_COEFFS;
use crate::losses::{hessian_at_zero, Problem};
use crate::optim::FULL_MATRIX_LIMIT;
use crate::rng::{substream, Stream};
use crate::state::StateMatrix;

/// Eigenvalue floor used by the fractional powers below.
pub const CLAMP: f64 = 1e-8;

fn check_square(m: &DMatrix<f64>, what: &str) -> Result<()> {
    if !m.is_square() {
        return Err(Error::ShapeMismatch(format!("{what} is {}x{}", m.nrows(), m.ncols())));
    }
    if m.nrows() > FULL_MATRIX_LIMIT {
        return Err(Error::SizeLimit {
            n: m.nrows(),
            limit: FULL_MATRIX_LIMIT,
        });
    }
    Ok(())
}

fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// `G^power` for symmetric PSD `G`, eigenvalues below [`CLAMP`] raised to it.
pub fn psd_power(g: &DMatrix<f64>, power: f64) -> Result<DMatrix<f64>> {
    check_square(g, "matrix")?;
    let eig = SymmetricEigen::new(symmetrize(g));
    if let Some(&neg) = eig.eigenvalues.iter().find(|&&l| l < -CLAMP) {
        return Err(Error::NotPsd(neg));
    }
    let scales = eig.eigenvalues.map(|l| l.max(CLAMP).powf(power));
    let v = &eig.eigenvectors;
    Ok(v * DMatrix::from_diagonal(&scales) * v.transpose())
}

/// `J = (G/λ_max)^{-1/4}`, the canonical symmetric root.
pub fn ideal_jacobian_dense(g: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    check_square(g, "G")?;
    let eig = SymmetricEigen::new(symmetrize(g));
    if let Some(&neg) = eig.eigenvalues.iter().find(|&&l| l < -CLAMP) {
        return Err(Error::NotPsd(neg));
    }
    let top = eig.eigenvalues.max();
    if top <= 0.0 {
        return Err(Error::ZeroMatrix);
    }
    let scales = eig.eigenvalues.map(|l| (l.max(CLAMP) / top).powf(-0.25));
    let v = &eig.eigenvectors;
    Ok(v * DMatrix::from_diagonal(&scales) * v.transpose())
}

/// Neural tangent kernel of a linear map: `K = J diag(ε̂) Jᵀ`.
pub fn ntk_linear(j: &DMatrix<f64>, eps_hat: &[f64]) -> Result<DMatrix<f64>> {
    if eps_hat.len() != j.ncols() {
        return Err(Error::ShapeMismatch(format!(
            "{} rates for a Jacobian with {} columns",
            eps_hat.len(),
            j.ncols()
        )));
    }
    let mut scaled = j.clone();
    for (mut col, &e) in scaled.column_iter_mut().zip(eps_hat) {
        col *= e;
    }
    Ok(symmetrize(&(scaled * j.transpose())))
}

/// `dL/dt = −Tr[M Kᵀ]`.
pub fn rate_of_loss_drop(m: &DMatrix<f64>, k: &DMatrix<f64>) -> Result<f64> {
    if m.shape() != k.shape() || !m.is_square() {
        return Err(Error::ShapeMismatch(format!(
            "M is {:?}, K is {:?}",
            m.shape(),
            k.shape()
        )));
    }
    // Tr[M Kᵀ] = Σ_ij M_ij K_ij
    Ok(-m.component_mul(k).sum())
}

/// Monte-Carlo gradient covariance at random initialization next to the
/// analytic prediction `H²/n`.
#[derive(Debug, Clone)]
pub struct GEstimate {
    pub monte_carlo: DMatrix<f64>,
    pub prediction: DMatrix<f64>,
}

impl GEstimate {
    /// `‖G_mc − H²/n‖_F / ‖H²/n‖_F`.
    pub fn relative_gap(&self) -> f64 {
        (&self.monte_carlo - &self.prediction).norm() / self.prediction.norm()
    }
}

/// Standard deviation used for "normalized" initial states.
pub fn default_init_sigma(n: usize) -> f64 {
    1.0 / (n as f64).sqrt()
}

/// Averages `∇L(w)∇L(w)ᵀ` over `samples` draws of `w ~ N(0, σ²)`.
pub fn estimate_g_at_init(p: &Problem, samples: usize, sigma: f64, seed: u64) -> Result<GEstimate> {
    if matches!(p, Problem::PersistenceH0 { .. }) {
        return Err(Error::UnsupportedProblem("point-cloud losses have no fixed Hessian at zero"));
    }
    if samples == 0 {
        return Err(Error::InsufficientSamples);
    }
    let n = p.n();
    if n > FULL_MATRIX_LIMIT {
        return Err(Error::SizeLimit {
            n,
            limit: FULL_MATRIX_LIMIT,
        });
    }
    let normal = Normal::new(0.0, sigma).map_err(|e| Error::InvalidSpec(format!("sigma: {e}")))?;
    let mut rng = substream(seed, Stream::Diagnostics);
    let mut acc = DMatrix::zeros(n, n);
    for _ in 0..samples {
        let w = StateMatrix::from(DMatrix::from_fn(n, 1, |_, _| normal.sample(&mut rng)));
        let (_, grad) = p.eval(&w)?;
        let g = DVector::from_column_slice(grad.column());
        acc.ger(1.0, &g, &g, 1.0);
    }
    acc /= samples as f64;
    let h = hessian_at_zero(p)?.to_dense();
    Ok(GEstimate {
        monte_carlo: acc,
        prediction: &h * &h / n as f64,
    })
}

/// Operator-norm gap between the truncated binomial series and `H^{-1/2}`.
pub fn binomial_error(h_norm: &DMatrix<f64>, q: usize) -> Result<f64> {
    check_square(h_norm, "H")?;
    if q > 3 {
        return Err(Error::InvalidSpec(format!("binomial order must be at most 3, got {q}")));
    }
    let n = h_norm.nrows();
    let u = DMatrix::identity(n, n) - h_norm;
    let mut term = DMatrix::identity(n, n);
    let mut series = term.clone();
    for &c in BINOMIAL_COEFFS.iter().take(q + 1).skip(1) {
        term = &u * term;
        series += &term * c;
    }
    let exact = psd_power(h_norm, -0.5)?;
    let diff = symmetrize(&(series - exact));
    Ok(SymmetricEigen::new(diff).eigenvalues.amax())
}

/// Rates `ψ_iᵀ K̄ M̄ K̄ ψ_i` per eigenmode of `M̄` with the ideal kernel
/// `K̄ = (M̄/m_max)^{-1/2}` built in `M̄`'s own eigenbasis.
pub fn modal_rates(m_bar: &DMatrix<f64>) -> Result<Vec<f64>> {
    check_square(m_bar, "M")?;
    let eig = SymmetricEigen::new(symmetrize(m_bar));
    if let Some(&neg) = eig.eigenvalues.iter().find(|&&l| l < -CLAMP) {
        return Err(Error::NotPsd(neg));
    }
    let top = eig.eigenvalues.max();
    if top <= 0.0 {
        return Err(Error::ZeroMatrix);
    }
    let v = &eig.eigenvectors;
    let scales = eig.eigenvalues.map(|l| (l.max(CLAMP) / top).powf(-0.5));
    let k = v * DMatrix::from_diagonal(&scales) * v.transpose();
    let kmk = &k * symmetrize(m_bar) * &k;
    Ok(v
        .column_iter()
        .map(|psi| (psi.transpose() * &kmk * psi)[0])
        .collect())
}

/// Measured and predicted loss rate for one gradient step of a linear
/// reparametrization `w = J θ` with per-parameter rates `ε̂`.
#[derive(Debug, Clone, Copy)]
pub struct RateCheck {
    pub measured: f64,
    pub predicted: f64,
}

impl RateCheck {
    pub fn relative_error(&self) -> f64 {
        (self.measured - self.predicted).abs() / self.predicted.abs()
    }
}

/// Takes `θ ← θ − dt·diag(ε̂)·Jᵀ∇L` once and compares `ΔL/dt` with
/// `−Tr[M Kᵀ]`, `M = ggᵀ`, `K = J diag(ε̂) Jᵀ`.
pub fn linear_rate_check(
    p: &Problem,
    j: &DMatrix<f64>,
    eps_hat: &[f64],
    theta: &DVector<f64>,
    dt: f64,
) -> Result<RateCheck> {
    if j.nrows() != p.n() * p.dim() || j.ncols() != theta.len() {
        return Err(Error::ShapeMismatch(format!(
            "Jacobian {:?} for {} outputs and {} parameters",
            j.shape(),
            p.n() * p.dim(),
            theta.len()
        )));
    }
    let state = |w: DVector<f64>| StateMatrix::from(DMatrix::from_column_slice(p.n(), p.dim(), w.as_slice()));
    let (before, grad) = p.eval(&state(j * theta))?;
    let g = DVector::from_column_slice(grad.values().as_slice());
    let mut direction = j.transpose() * &g;
    for (d, &e) in direction.iter_mut().zip(eps_hat) {
        *d *= e;
    }
    let after = p.loss(&state(j * (theta - direction * dt)))?;
    let k = ntk_linear(j, eps_hat)?;
    let m = &g * g.transpose();
    Ok(RateCheck {
        measured: (after - before) / dt,
        predicted: rate_of_loss_drop(&m, &k)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ideal_jacobian_examples() {
        let j = ideal_jacobian_dense(&DMatrix::identity(3, 3)).unwrap();
        assert!((j - DMatrix::<f64>::identity(3, 3)).amax() < 1e-12);
        let g = DMatrix::from_diagonal(&DVector::from_vec(vec![16.0, 1.0]));
        let j = ideal_jacobian_dense(&g).unwrap();
        assert!((j[(0, 0)] - 1.0).abs() < 1e-12 && (j[(1, 1)] - 2.0).abs() < 1e-12);
        let bad = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, -1.0]));
        assert!(matches!(ideal_jacobian_dense(&bad), Err(Error::NotPsd(_))));
    }

    #[test]
    fn ntk_and_rate_examples() {
        let k = ntk_linear(&DMatrix::identity(3, 3), &[0.5; 3]).unwrap();
        assert!((k - DMatrix::<f64>::identity(3, 3) * 0.5).amax() < 1e-15);
        let id = DMatrix::identity(3, 3);
        assert_eq!(rate_of_loss_drop(&id, &id).unwrap(), -3.0);
        assert_eq!(rate_of_loss_drop(&DMatrix::zeros(3, 3), &id).unwrap(), 0.0);
        assert!(ntk_linear(&id, &[1.0; 2]).is_err());
    }

    #[test]
    fn heat_prediction_on_single_edge() {
        let g = crate::SparseGraph::from_edge_list(2, &[(0, 1, 1.0)]).unwrap();
        let p = Problem::heat(g, crate::BoundaryCondition::none()).unwrap();
        let est = estimate_g_at_init(&p, 10, 0.5, 0).unwrap();
        let expected = DMatrix::from_row_slice(2, 2, &[1.0, -1.0, -1.0, 1.0]);
        assert!((est.prediction - expected).amax() < 1e-12);
        assert!(matches!(estimate_g_at_init(&p, 0, 0.5, 0), Err(Error::InsufficientSamples)));
    }
}
