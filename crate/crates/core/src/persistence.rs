//! Zero-dimensional persistent homology of planar point clouds.
//!
//! In the Vietoris-Rips filtration of a point cloud every component is born
//! at 0 and components merge exactly along minimum-spanning-tree edges, so
//! the finite H0 deaths are the MST edge lengths.

use std::fs;
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::graph::SparseGraph;
use crate::state::StateMatrix;

#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    positions: DMatrix<f64>,
    range: f64,
}

impl PointCloud {
    pub fn new(positions: DMatrix<f64>, range: f64) -> Result<Self> {
        if positions.ncols() != 2 {
            return Err(Error::dims("n x 2 positions", format!("{}x{}", positions.nrows(), positions.ncols())));
        }
        if positions.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidSpec("point positions must be finite".into()));
        }
        if !(range > 0.0) {
            return Err(Error::InvalidSpec(format!("range must be positive, got {range}")));
        }
        Ok(Self { positions, range })
    }

    /// Uniform sample in the square `[-range, range]²`.
    pub fn random(n: usize, range: f64, rng: &mut impl rand::Rng) -> Result<Self> {
        let positions = DMatrix::from_fn(n, 2, |_, _| rng.random_range(-range..range));
        Self::new(positions, range)
    }

    pub fn n(&self) -> usize {
        self.positions.nrows()
    }

    pub fn range(&self) -> f64 {
        self.range
    }

    pub fn positions(&self) -> &DMatrix<f64> {
        &self.positions
    }

    pub fn point(&self, i: usize) -> [f64; 2] {
        [self.positions[(i, 0)], self.positions[(i, 1)]]
    }

    pub fn to_state(&self) -> StateMatrix {
        StateMatrix::from(self.positions.clone())
    }

    /// Reads a CSV file with header `x,y`.
    pub fn read_csv(path: impl AsRef<Path>, range: f64) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::File {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        Self::parse_csv(&text, range)
    }

    pub fn parse_csv(text: &str, range: f64) -> Result<Self> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        match lines.next() {
            Some((_, header)) if header.trim().replace(' ', "") == "x,y" => {}
            _ => {
                return Err(Error::Parse {
                    line: 1,
                    message: "expected header `x,y`".into(),
                })
            }
        }
        let mut data = Vec::new();
        for (lineno, line) in lines {
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            let parsed: Option<Vec<f64>> = (fields.len() == 2)
                .then(|| fields.iter().map(|f| f.parse().ok()).collect())
                .flatten();
            let row = parsed.ok_or_else(|| Error::Parse {
                line: lineno + 1,
                message: format!("expected `x,y`, got `{line}`"),
            })?;
            data.extend(row);
        }
        Self::new(DMatrix::from_row_slice(data.len() / 2, 2, &data), range)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("x,y\n");
        for i in 0..self.n() {
            out.push_str(&format!("{:?},{:?}\n", self.positions[(i, 0)], self.positions[(i, 1)]));
        }
        out
    }
}

/// Death of an H0 class: the MST edge that merged it, or never.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Death {
    Edge { length: f64, edge: (usize, usize) },
    Infinite,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Feature {
    pub birth: f64,
    pub death: Death,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PersistenceDiagram {
    pub features: Vec<Feature>,
}

impl PersistenceDiagram {
    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn finite_deaths(&self) -> Vec<f64> {
        self.finite_edges().map(|(length, _)| length).collect()
    }

    pub fn finite_edges(&self) -> impl Iterator<Item = (f64, (usize, usize))> + '_ {
        self.features.iter().filter_map(|f| match f.death {
            Death::Edge { length, edge } => Some((length, edge)),
            Death::Infinite => None,
        })
    }
}

/// Union-find with path compression and union by rank.
#[derive(Debug, Clone)]
pub struct DisjointSet {
    parent: Vec<usize>,
    rank: Vec<u8>,
}

impl DisjointSet {
    pub fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
            rank: vec![0; n],
        }
    }

    pub fn find(&mut self, mut node: usize) -> usize {
        let mut root = node;
        while self.parent[root] != root {
            root = self.parent[root];
        }
        while self.parent[node] != root {
            let next = self.parent[node];
            self.parent[node] = root;
            node = next;
        }
        root
    }

    /// Merges the sets of `a` and `b`; false when already joined.
    pub fn union(&mut self, a: usize, b: usize) -> bool {
        let (mut a, mut b) = (self.find(a), self.find(b));
        if a == b {
            return false;
        }
        if self.rank[a] < self.rank[b] {
            std::mem::swap(&mut a, &mut b);
        }
        self.parent[b] = a;
        if self.rank[a] == self.rank[b] {
            self.rank[a] = self.rank[a].saturating_add(1);
        }
        true
    }
}

fn distance(p: &DMatrix<f64>, i: usize, j: usize) -> f64 {
    let dx = p[(i, 0)] - p[(j, 0)];
    let dy = p[(i, 1)] - p[(j, 1)];
    dx.hypot(dy)
}

/// Kruskal over the complete distance graph; ties break on `(i, j)`.
fn mst_edges(positions: &DMatrix<f64>) -> Vec<(f64, (usize, usize))> {
    let n = positions.nrows();
    let mut edges = Vec::with_capacity(n * n.saturating_sub(1) / 2);
    for i in 0..n {
        for j in i + 1..n {
            edges.push((distance(positions, i, j), (i, j)));
        }
    }
    edges.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let mut sets = DisjointSet::new(n);
    let mut tree = Vec::with_capacity(n.saturating_sub(1));
    for (length, (i, j)) in edges {
        if sets.union(i, j) {
            tree.push((length, (i, j)));
            if tree.len() + 1 == n {
                break;
            }
        }
    }
    tree
}

pub fn h0_diagram(pc: &PointCloud) -> PersistenceDiagram {
    diagram_of(pc.positions())
}

fn diagram_of(positions: &DMatrix<f64>) -> PersistenceDiagram {
    let mut features: Vec<Feature> = mst_edges(positions)
        .into_iter()
        .map(|(length, edge)| Feature {
            birth: 0.0,
            death: Death::Edge { length, edge },
        })
        .collect();
    if positions.nrows() > 0 {
        features.push(Feature {
            birth: 0.0,
            death: Death::Infinite,
        });
    }
    PersistenceDiagram { features }
}

/// Topological loss `−Σ ((d_i − b_i)/2)² + Σ_i max(0, ‖w_i‖_∞ − r)²` and its
/// subgradient.
pub fn persistence_loss(pc: &PointCloud) -> Result<(f64, DMatrix<f64>)> {
    let (loss, grad) = weighted_persistence_loss(pc.positions(), pc.range(), 1.0)?;
    Ok((loss, grad.into_inner()))
}

pub(crate) fn weighted_persistence_loss(
    positions: &DMatrix<f64>,
    range: f64,
    weight: f64,
) -> Result<(f64, StateMatrix)> {
    let n = positions.nrows();
    for i in 0..n {
        for j in i + 1..n {
            if positions[(i, 0)] == positions[(j, 0)] && positions[(i, 1)] == positions[(j, 1)] {
                return Err(Error::DegenerateCloud(i, j));
            }
        }
    }
    let diagram = diagram_of(positions);
    let mut grad = DMatrix::zeros(n, 2);
    let mut loss = 0.0;
    for (length, (i, j)) in diagram.finite_edges() {
        let half = 0.5 * length;
        loss -= weight * half * half;
        // ∂(−d²/4)/∂p_i = −(p_i − p_j)/2
        for axis in 0..2 {
            let delta = 0.5 * weight * (positions[(i, axis)] - positions[(j, axis)]);
            grad[(i, axis)] -= delta;
            grad[(j, axis)] += delta;
        }
    }
    for i in 0..n {
        let axis = if positions[(i, 0)].abs() >= positions[(i, 1)].abs() { 0 } else { 1 };
        let excess = positions[(i, axis)].abs() - range;
        if excess > 0.0 {
            loss += excess * excess;
            grad[(i, axis)] += 2.0 * excess * positions[(i, axis)].signum();
        }
    }
    Ok((loss, StateMatrix::from(grad)))
}

/// Unit-weight graph joining points at distance at most `eps_filt`.
pub fn rips_adjacency(pc: &PointCloud, eps_filt: f64) -> Result<SparseGraph> {
    if !(eps_filt > 0.0) {
        return Err(Error::InvalidSpec(format!("filtration value must be positive, got {eps_filt}")));
    }
    let p = pc.positions();
    let mut edges = Vec::new();
    for i in 0..pc.n() {
        for j in i + 1..pc.n() {
            if distance(p, i, j) <= eps_filt {
                edges.push((i, j, 1.0));
            }
        }
    }
    SparseGraph::from_edge_list(pc.n(), &edges)
}

/// Midpoint of the smallest and largest nonzero pairwise distance.
pub fn default_filtration(pc: &PointCloud) -> Option<f64> {
    let p = pc.positions();
    let mut lo = f64::INFINITY;
    let mut hi: f64 = 0.0;
    for i in 0..pc.n() {
        for j in i + 1..pc.n() {
            let d = distance(p, i, j);
            if d > 0.0 {
                lo = lo.min(d);
                hi = hi.max(d);
            }
        }
    }
    (hi > 0.0).then(|| 0.5 * (lo + hi))
}
