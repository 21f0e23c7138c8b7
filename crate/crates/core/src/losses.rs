//! Energies of the graph dynamics problems, their gradients and Hessians at
//! the origin.
//!
//! Conventions:
//! - heat: `L(w) = ½ wᵀLw + c Σ_{i∈S} (w_i − T_i)^p`, so the gradient is `Lw`
//!   plus the pin term and `dw/dt = −εLw` away from pins;
//! - Kuramoto: `L(w) = −Σ_{i,j} A_ji cos(w_i − w_j)` over ordered pairs, whose
//!   Hessian at the origin is `2L`;
//! - Hopf-Kuramoto: `c Σ_{i,j} A_ji [sin Δ_ij + s1 cos Δ_ij]
//!   + (s2/2) Σ_{i,j,k} A_ij A_jk [cos(Δ_ji + Δ_jk) + cos(Δ_ji − Δ_jk)]`
//!   with `Δ_ij = w_i − w_j`.

use std::collections::HashSet;

use nalgebra::{Complex, DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::SparseGraph;
use crate::persistence;
use crate::sparse::SparseMatrix;
use crate::state::StateMatrix;

/// Pinned nodes attached to fixed-temperature sources.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundaryCondition {
    pub pinned: Vec<(usize, f64)>,
    pub strength: f64,
    pub exponent: u32,
}

impl BoundaryCondition {
    pub fn new(pinned: Vec<(usize, f64)>, strength: f64, exponent: u32) -> Self {
        Self {
            pinned,
            strength,
            exponent,
        }
    }

    pub fn none() -> Self {
        Self::new(Vec::new(), 1.0, 2)
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        if !(self.strength > 0.0) || !self.strength.is_finite() {
            return Err(Error::InvalidSpec(format!(
                "boundary strength must be positive, got {}",
                self.strength
            )));
        }
        if self.exponent != 2 && self.exponent != 4 {
            return Err(Error::InvalidSpec(format!(
                "boundary exponent must be 2 or 4, got {}",
                self.exponent
            )));
        }
        let mut seen = HashSet::new();
        for &(node, target) in &self.pinned {
            if node >= n {
                return Err(Error::IndexOutOfRange { index: node, n });
            }
            if !seen.insert(node) {
                return Err(Error::InvalidSpec(format!("node {node} pinned twice")));
            }
            if !target.is_finite() {
                return Err(Error::InvalidSpec(format!("non-finite target at node {node}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HopfParams {
    pub c: f64,
    pub s1: f64,
    pub s2: f64,
}

impl Default for HopfParams {
    fn default() -> Self {
        Self {
            c: 1.0,
            s1: 0.0,
            s2: 0.0,
        }
    }
}

/// An optimization problem over node states.
#[derive(Debug, Clone)]
pub enum Problem {
    Heat {
        graph: SparseGraph,
        boundary: BoundaryCondition,
    },
    Kuramoto {
        graph: SparseGraph,
    },
    HopfKuramoto {
        graph: SparseGraph,
        params: HopfParams,
    },
    /// H0 topological loss on a planar cloud of `n` points.
    PersistenceH0 { n: usize, range: f64, weight: f64 },
}

impl Problem {
    pub fn heat(graph: SparseGraph, boundary: BoundaryCondition) -> Result<Self> {
        require_symmetric(&graph)?;
        boundary.validate(graph.n())?;
        Ok(Problem::Heat { graph, boundary })
    }

    pub fn kuramoto(graph: SparseGraph) -> Result<Self> {
        require_symmetric(&graph)?;
        Ok(Problem::Kuramoto { graph })
    }

    pub fn hopf_kuramoto(graph: SparseGraph, params: HopfParams) -> Result<Self> {
        require_symmetric(&graph)?;
        if ![params.c, params.s1, params.s2].iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidSpec("Hopf-Kuramoto parameters must be finite".into()));
        }
        Ok(Problem::HopfKuramoto { graph, params })
    }

    pub fn persistence(n: usize, range: f64, weight: f64) -> Result<Self> {
        if !(range > 0.0) {
            return Err(Error::InvalidSpec(format!("range must be positive, got {range}")));
        }
        Ok(Problem::PersistenceH0 { n, range, weight })
    }

    pub fn name(&self) -> &'static str {
        match self {
            Problem::Heat { .. } => "heat",
            Problem::Kuramoto { .. } => "kuramoto",
            Problem::HopfKuramoto { .. } => "hopf_kuramoto",
            Problem::PersistenceH0 { .. } => "persistence",
        }
    }

    pub fn n(&self) -> usize {
        match self {
            Problem::Heat { graph, .. }
            | Problem::Kuramoto { graph }
            | Problem::HopfKuramoto { graph, .. } => graph.n(),
            Problem::PersistenceH0 { n, .. } => *n,
        }
    }

    /// Columns of the state matrix.
    pub fn dim(&self) -> usize {
        match self {
            Problem::PersistenceH0 { .. } => 2,
            _ => 1,
        }
    }

    pub fn graph(&self) -> Option<&SparseGraph> {
        match self {
            Problem::Heat { graph, .. }
            | Problem::Kuramoto { graph }
            | Problem::HopfKuramoto { graph, .. } => Some(graph),
            Problem::PersistenceH0 { .. } => None,
        }
    }

    /// Whether states are oscillator phases (and the order parameter applies).
    pub fn is_phase(&self) -> bool {
        matches!(self, Problem::Kuramoto { .. } | Problem::HopfKuramoto { .. })
    }

    pub fn eval(&self, w: &StateMatrix) -> Result<(f64, StateMatrix)> {
        match self {
            Problem::Heat { graph, boundary } => heat_eval(graph, w, boundary),
            Problem::Kuramoto { graph } => kuramoto_eval(graph, w),
            Problem::HopfKuramoto { graph, params } => hopf_kuramoto_eval(graph, w, params),
            Problem::PersistenceH0 { n, range, weight } => {
                w.require_shape(*n, 2)?;
                persistence::weighted_persistence_loss(w.values(), *range, *weight)
            }
        }
    }

    pub fn loss(&self, w: &StateMatrix) -> Result<f64> {
        Ok(self.eval(w)?.0)
    }
}

fn require_symmetric(graph: &SparseGraph) -> Result<()> {
    if graph.is_symmetric() {
        Ok(())
    } else {
        Err(Error::AsymmetricInput)
    }
}

fn require_column(g: &SparseGraph, w: &StateMatrix) -> Result<()> {
    w.require_shape(g.n(), 1)
}

pub fn heat_eval(
    g: &SparseGraph,
    w: &StateMatrix,
    bc: &BoundaryCondition,
) -> Result<(f64, StateMatrix)> {
    require_column(g, w)?;
    let x = w.column();
    let mut grad = vec![0.0; g.n()];
    let mut loss = 0.0;
    // Lw = D w − A w, accumulated edge by edge.
    for (i, j, a) in g.adjacency().triplets() {
        let diff = x[i] - x[j];
        grad[i] += a * diff;
        loss += 0.25 * a * diff * diff;
    }
    let p = bc.exponent as i32;
    for &(node, target) in &bc.pinned {
        let diff = x[node] - target;
        loss += bc.strength * diff.powi(p);
        grad[node] += bc.strength * p as f64 * diff.powi(p - 1);
    }
    Ok((loss, StateMatrix::from_column(&grad)))
}

/// Steady state of heat diffusion with quadratic pins, by dense solve of
/// `(L + 2cP) w = 2cP t`.
pub fn heat_direct_solve(g: &SparseGraph, bc: &BoundaryCondition) -> Result<StateMatrix> {
    const LIMIT: usize = 5000;
    let n = g.n();
    if n > LIMIT {
        return Err(Error::SizeLimit { n, limit: LIMIT });
    }
    if bc.exponent != 2 {
        return Err(Error::InvalidSpec("direct solve needs exponent 2".into()));
    }
    bc.validate(n)?;
    let pinned: HashSet<usize> = bc.pinned.iter().map(|&(i, _)| i).collect();
    for component in connected_components(g) {
        if !component.iter().any(|i| pinned.contains(i)) {
            return Err(Error::SingularSystem(format!(
                "component containing node {} has no pinned node",
                component[0]
            )));
        }
    }
    let mut system = g.laplacian()?.to_dense();
    let mut rhs = DVector::zeros(n);
    for &(i, t) in &bc.pinned {
        system[(i, i)] += 2.0 * bc.strength;
        rhs[i] = 2.0 * bc.strength * t;
    }
    let solution = system
        .clone()
        .cholesky()
        .map(|c| c.solve(&rhs))
        .or_else(|| system.lu().solve(&rhs))
        .ok_or_else(|| Error::SingularSystem("factorization failed".into()))?;
    Ok(StateMatrix::from_column(solution.as_slice()))
}

pub(crate) fn connected_components(g: &SparseGraph) -> Vec<Vec<usize>> {
    let n = g.n();
    let mut label = vec![usize::MAX; n];
    let mut components = Vec::new();
    for start in 0..n {
        if label[start] != usize::MAX {
            continue;
        }
        let id = components.len();
        let mut members = vec![start];
        label[start] = id;
        let mut cursor = 0;
        while cursor < members.len() {
            let v = members[cursor];
            cursor += 1;
            for (u, _) in g.neighbors(v) {
                if label[u] == usize::MAX {
                    label[u] = id;
                    members.push(u);
                }
            }
        }
        components.push(members);
    }
    components
}

pub fn kuramoto_eval(g: &SparseGraph, w: &StateMatrix) -> Result<(f64, StateMatrix)> {
    require_column(g, w)?;
    let x = w.column();
    let mut grad = vec![0.0; g.n()];
    let mut loss = 0.0;
    for (i, j, a) in g.adjacency().triplets() {
        let (s, c) = (x[i] - x[j]).sin_cos();
        loss -= a * c;
        grad[i] += a * s;
        grad[j] -= a * s;
    }
    Ok((loss, StateMatrix::from_column(&grad)))
}

pub fn hopf_kuramoto_eval(
    g: &SparseGraph,
    w: &StateMatrix,
    hp: &HopfParams,
) -> Result<(f64, StateMatrix)> {
    require_column(g, w)?;
    let x = w.column();
    let n = g.n();
    let mut grad = vec![0.0; n];
    let mut loss = 0.0;
    // Stored entry (r, c, a) is A_rc; it enters the first-neighbour sum as
    // A_ji with j = r, i = c.
    for (j, i, a) in g.adjacency().triplets() {
        let (s, c) = (x[i] - x[j]).sin_cos();
        loss += hp.c * a * (s + hp.s1 * c);
        let d = hp.c * a * (c - hp.s1 * s);
        grad[i] += d;
        grad[j] -= d;
    }
    if hp.s2 != 0.0 {
        // With z = e^{iw} and S_j = Σ_i A_ji z_i the two-hop sum collapses to
        // Σ_j Re(z_j² conj(S_j)²) + |S_j|².
        let half = 0.5 * hp.s2;
        let z: Vec<Complex<f64>> = x.iter().map(|&t| Complex::from_polar(1.0, t)).collect();
        let mut s_sum = vec![Complex::new(0.0, 0.0); n];
        for (j, i, a) in g.adjacency().triplets() {
            s_sum[j] += z[i] * a;
        }
        let mut u = vec![Complex::new(0.0, 0.0); n];
        let mut v = vec![Complex::new(0.0, 0.0); n];
        for (m, j, a) in g.adjacency().triplets() {
            let s_conj = s_sum[j].conj();
            u[m] += z[j] * z[j] * s_conj * a;
            v[m] += s_conj * a;
        }
        for m in 0..n {
            let zs = z[m] * s_sum[m].conj();
            loss += half * ((zs * zs).re + s_sum[m].norm_sqr());
            grad[m] += 2.0 * half * ((z[m].conj() * u[m]).im - (z[m] * v[m]).im - (zs * zs).im);
        }
    }
    Ok((loss, StateMatrix::from_column(&grad)))
}

/// Hessian of the loss at `w = 0`.
pub fn hessian_at_zero(p: &Problem) -> Result<SparseMatrix> {
    match p {
        Problem::Heat { graph, boundary } => {
            let n = graph.n();
            let pexp = boundary.exponent as i32;
            let pins = boundary.pinned.iter().map(|&(i, t)| {
                let curvature = boundary.strength
                    * (pexp * (pexp - 1)) as f64
                    * (-t).powi(pexp - 2);
                (i, i, curvature)
            });
            let laplacian = graph.laplacian()?;
            SparseMatrix::from_triplets(n, n, laplacian.triplets().chain(pins))
        }
        Problem::Kuramoto { graph } => Ok(graph.laplacian()?.scale(2.0)),
        Problem::HopfKuramoto { graph, params } => {
            let n = graph.n();
            // The Hessian of a·cos(v·w) at the origin is −a vvᵀ; sin terms vanish.
            let mut triplets = Vec::new();
            let mut cos_term = |weight: f64, v: &[(usize, f64)]| {
                for &(r, vr) in v {
                    for &(c, vc) in v {
                        triplets.push((r, c, -weight * vr * vc));
                    }
                }
            };
            for (j, i, a) in graph.adjacency().triplets() {
                cos_term(params.c * params.s1 * a, &[(i, 1.0), (j, -1.0)]);
            }
            if params.s2 != 0.0 {
                let half = 0.5 * params.s2;
                for j in 0..n {
                    for (i, a_ij) in graph.neighbors(j) {
                        for (k, a_jk) in graph.neighbors(j) {
                            let weight = half * a_ij * a_jk;
                            cos_term(weight, &[(j, 2.0), (i, -1.0), (k, -1.0)]);
                            if i != k {
                                cos_term(weight, &[(k, 1.0), (i, -1.0)]);
                            }
                        }
                    }
                }
            }
            SparseMatrix::from_triplets(n, n, triplets)
        }
        Problem::PersistenceH0 { .. } => Err(Error::UnsupportedProblem("persistence loss")),
    }
}

/// Global phase coherence `ρ = |Σ_j e^{i w_j}| / N`.
pub fn order_parameter(w: &StateMatrix) -> f64 {
    let phases = w.column();
    if phases.is_empty() {
        return 0.0;
    }
    let (s, c) = phases
        .iter()
        .fold((0.0, 0.0), |(s, c), &p| (s + p.sin(), c + p.cos()));
    ((s * s + c * c).sqrt() / phases.len() as f64).min(1.0)
}

/// Dense Hessian by central differences of an analytic gradient; test and
/// diagnostics helper.
pub fn finite_difference_hessian(p: &Problem, at: &StateMatrix, step: f64) -> Result<DMatrix<f64>> {
    let m = at.n() * at.d();
    let mut h = DMatrix::zeros(m, m);
    for k in 0..m {
        let mut plus = at.clone();
        plus.values_mut().as_mut_slice()[k] += step;
        let mut minus = at.clone();
        minus.values_mut().as_mut_slice()[k] -= step;
        let gp = p.eval(&plus)?.1;
        let gm = p.eval(&minus)?.1;
        for r in 0..m {
            h[(r, k)] = (gp.values().as_slice()[r] - gm.values().as_slice()[r]) / (2.0 * step);
        }
    }
    Ok(h)
}
