use std::collections::HashMap;
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::{read_edge_list, SparseGraph};
use crate::error::{Error, Result};
use crate::rng::{substream, Stream};

/// Graph families used by the experiments.
///
/// The textual form (used by config files and the CLI) is a kind followed by
/// its arguments, separated by whitespace or `:`:
///
/// ```text
/// lattice2d 25 25 [periodic]      lattice3d 8 8 8 [periodic]
/// circle 625                      tree 2 9
/// sbm 60,60,60,60 0.2 0.01        sbm 4x60 0.2 0.01
/// rgg 100 0.2 2                   file graph.txt
/// ```
#[derive(Debug, Clone, PartialEq)]
pub enum GraphSpec {
    Lattice2D {
        rows: usize,
        cols: usize,
        periodic: bool,
    },
    Lattice3D {
        nx: usize,
        ny: usize,
        nz: usize,
        periodic: bool,
    },
    Circle(usize),
    Tree {
        branching: usize,
        depth: usize,
    },
    Sbm {
        block_sizes: Vec<usize>,
        p_in: f64,
        p_out: f64,
    },
    Rgg {
        n: usize,
        radius: f64,
        dim: usize,
    },
    EdgeListFile(PathBuf),
}

impl GraphSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidSpec(msg.to_string()));
        match self {
            GraphSpec::Lattice2D { rows, cols, .. } if *rows == 0 || *cols == 0 => {
                bad("lattice dimensions must be >= 1")
            }
            GraphSpec::Lattice3D { nx, ny, nz, .. } if *nx == 0 || *ny == 0 || *nz == 0 => {
                bad("lattice dimensions must be >= 1")
            }
            GraphSpec::Circle(0) => bad("circle needs at least one node"),
            GraphSpec::Tree { branching, depth } if *branching == 0 || *depth == 0 => {
                bad("tree branching and depth must be >= 1")
            }
            GraphSpec::Sbm {
                block_sizes,
                p_in,
                p_out,
            } => {
                if block_sizes.is_empty() || block_sizes.contains(&0) {
                    bad("sbm block sizes must be >= 1")
                } else if !(0.0..=1.0).contains(p_in) || !(0.0..=1.0).contains(p_out) {
                    bad("sbm probabilities must lie in [0, 1]")
                } else {
                    Ok(())
                }
            }
            GraphSpec::Rgg { n, radius, dim } => {
                if *n == 0 || *dim == 0 {
                    bad("rgg node count and dimension must be >= 1")
                } else if !(*radius > 0.0) {
                    bad("rgg radius must be positive")
                } else {
                    Ok(())
                }
            }
            _ => Ok(()),
        }
    }
}

/// Builds the graph described by `spec`. Random families draw from `seed`;
/// the deterministic families ignore it. All generated edges have unit weight.
pub fn generate(spec: &GraphSpec, seed: u64) -> Result<SparseGraph> {
    spec.validate()?;
    let (n, edges) = match spec {
        GraphSpec::Lattice2D {
            rows,
            cols,
            periodic,
        } => lattice(&[*rows, *cols], *periodic),
        GraphSpec::Lattice3D {
            nx,
            ny,
            nz,
            periodic,
        } => lattice(&[*nx, *ny, *nz], *periodic),
        GraphSpec::Circle(n) => (*n, circle(*n)),
        GraphSpec::Tree { branching, depth } => tree(*branching, *depth),
        GraphSpec::Sbm {
            block_sizes,
            p_in,
            p_out,
        } => sbm(block_sizes, *p_in, *p_out, seed),
        GraphSpec::Rgg { n, radius, dim } => {
            let points = rgg_points(*n, *dim, seed);
            (*n, rgg_edges(&points, *radius))
        }
        GraphSpec::EdgeListFile(path) => {
            let g = read_edge_list(path)?;
            if g.n() == 0 {
                return Err(Error::EmptyGraph);
            }
            return Ok(g);
        }
    };
    if n == 0 {
        return Err(Error::EmptyGraph);
    }
    let weighted: Vec<_> = edges.into_iter().map(|(i, j)| (i, j, 1.0)).collect();
    SparseGraph::from_edge_list(n, &weighted)
}

/// Row-major hypercubic lattice. Periodic wrapping is applied only along axes
/// of length >= 3, where it cannot create loops or doubled edges.
fn lattice(shape: &[usize], periodic: bool) -> (usize, Vec<(usize, usize)>) {
    let n: usize = shape.iter().product();
    let mut strides = vec![1; shape.len()];
    for axis in (0..shape.len().saturating_sub(1)).rev() {
        strides[axis] = strides[axis + 1] * shape[axis + 1];
    }
    let mut edges = Vec::new();
    for node in 0..n {
        for (axis, &len) in shape.iter().enumerate() {
            let coord = (node / strides[axis]) % len;
            if coord + 1 < len {
                edges.push((node, node + strides[axis]));
            } else if periodic && len >= 3 {
                edges.push((node - coord * strides[axis], node));
            }
        }
    }
    (n, edges)
}

fn circle(n: usize) -> Vec<(usize, usize)> {
    match n {
        0 | 1 => Vec::new(),
        2 => vec![(0, 1)],
        _ => (0..n).map(|i| (i, (i + 1) % n)).collect(),
    }
}

/// Complete `branching`-ary tree whose leaves sit `depth` edges below the root.
fn tree(branching: usize, depth: usize) -> (usize, Vec<(usize, usize)>) {
    let mut edges = Vec::new();
    let mut level_start = 0;
    let mut level_len = 1;
    let mut next = 1;
    for _ in 0..depth {
        for parent in level_start..level_start + level_len {
            for _ in 0..branching {
                edges.push((parent, next));
                next += 1;
            }
        }
        level_start += level_len;
        level_len *= branching;
    }
    (next, edges)
}

fn sbm(block_sizes: &[usize], p_in: f64, p_out: f64, seed: u64) -> (usize, Vec<(usize, usize)>) {
    let block: Vec<usize> = block_sizes
        .iter()
        .enumerate()
        .flat_map(|(b, &size)| std::iter::repeat_n(b, size))
        .collect();
    let n = block.len();
    let mut rng = substream(seed, Stream::Graph);
    let mut edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            let p = if block[i] == block[j] { p_in } else { p_out };
            if rng.random::<f64>() < p {
                edges.push((i, j));
            }
        }
    }
    (n, edges)
}

/// Uniform sample of `n` points in the unit hypercube `[0, 1)^dim`, as used
/// by the random geometric graph family.
pub fn rgg_points(n: usize, dim: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = substream(seed, Stream::Graph);
    (0..n)
        .map(|_| (0..dim).map(|_| rng.random::<f64>()).collect())
        .collect()
}

/// Pairs within Euclidean distance `radius`, found through a uniform cell grid
/// with cell side `radius`.
fn rgg_edges(points: &[Vec<f64>], radius: f64) -> Vec<(usize, usize)> {
    let cell_of = |p: &[f64]| -> Vec<i64> { p.iter().map(|x| (x / radius).floor() as i64).collect() };
    let mut cells: HashMap<Vec<i64>, Vec<usize>> = HashMap::new();
    for (i, p) in points.iter().enumerate() {
        cells.entry(cell_of(p)).or_default().push(i);
    }
    let dim = points.first().map_or(0, Vec::len);
    let offsets: Vec<Vec<i64>> = (0..3usize.pow(dim as u32))
        .map(|mut code| {
            (0..dim)
                .map(|_| {
                    let o = (code % 3) as i64 - 1;
                    code /= 3;
                    o
                })
                .collect()
        })
        .collect();
    let r2 = radius * radius;
    let mut edges = Vec::new();
    for (i, p) in points.iter().enumerate() {
        let base = cell_of(p);
        for off in &offsets {
            let key: Vec<i64> = base.iter().zip(off).map(|(b, o)| b + o).collect();
            let Some(members) = cells.get(&key) else {
                continue;
            };
            for &j in members {
                if j <= i {
                    continue;
                }
                let d2: f64 = p.iter().zip(&points[j]).map(|(a, b)| (a - b) * (a - b)).sum();
                if d2 <= r2 {
                    edges.push((i, j));
                }
            }
        }
    }
    edges.sort_unstable();
    edges
}

impl fmt::Display for GraphSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let periodic = |p: &bool| if *p { " periodic" } else { "" };
        match self {
            GraphSpec::Lattice2D {
                rows,
                cols,
                periodic: p,
            } => write!(f, "lattice2d {rows} {cols}{}", periodic(p)),
            GraphSpec::Lattice3D {
                nx,
                ny,
                nz,
                periodic: p,
            } => write!(f, "lattice3d {nx} {ny} {nz}{}", periodic(p)),
            GraphSpec::Circle(n) => write!(f, "circle {n}"),
            GraphSpec::Tree { branching, depth } => write!(f, "tree {branching} {depth}"),
            GraphSpec::Sbm {
                block_sizes,
                p_in,
                p_out,
            } => {
                let sizes: Vec<String> = block_sizes.iter().map(usize::to_string).collect();
                write!(f, "sbm {} {p_in:?} {p_out:?}", sizes.join(","))
            }
            GraphSpec::Rgg { n, radius, dim } => write!(f, "rgg {n} {radius:?} {dim}"),
            GraphSpec::EdgeListFile(path) => write!(f, "file {}", path.display()),
        }
    }
}

impl FromStr for GraphSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if let Some(path) = s.strip_prefix("file:").or_else(|| s.strip_prefix("file ")) {
            return Ok(GraphSpec::EdgeListFile(PathBuf::from(path.trim())));
        }
        let tokens: Vec<&str> = s
            .split(|c: char| c == ':' || c.is_whitespace())
            .filter(|t| !t.is_empty())
            .collect();
        let bad = || Error::InvalidSpec(format!("cannot parse graph spec `{s}`"));
        let (kind, args) = tokens.split_first().ok_or_else(bad)?;
        let count = |k: usize| -> Result<usize> { args.get(k).ok_or_else(bad)?.parse().map_err(|_| bad()) };
        let real = |k: usize| -> Result<f64> { args.get(k).ok_or_else(bad)?.parse().map_err(|_| bad()) };
        let flag = |k: usize| -> Result<bool> {
            match args.get(k) {
                None => Ok(false),
                Some(&"periodic") => Ok(true),
                Some(&"open") => Ok(false),
                Some(_) => Err(bad()),
            }
        };
        let arity = |min: usize, max: usize| {
            if args.len() < min || args.len() > max {
                Err(bad())
            } else {
                Ok(())
            }
        };
        let spec = match kind.to_ascii_lowercase().as_str() {
            "lattice2d" | "lattice" | "grid" => {
                arity(2, 3)?;
                GraphSpec::Lattice2D {
                    rows: count(0)?,
                    cols: count(1)?,
                    periodic: flag(2)?,
                }
            }
            "lattice3d" => {
                arity(3, 4)?;
                GraphSpec::Lattice3D {
                    nx: count(0)?,
                    ny: count(1)?,
                    nz: count(2)?,
                    periodic: flag(3)?,
                }
            }
            "circle" | "cycle" => {
                arity(1, 1)?;
                GraphSpec::Circle(count(0)?)
            }
            "tree" => {
                arity(2, 2)?;
                GraphSpec::Tree {
                    branching: count(0)?,
                    depth: count(1)?,
                }
            }
            "sbm" => {
                arity(3, 3)?;
                let sizes = args[0];
                let block_sizes = if let Some((k, size)) = sizes.split_once('x') {
                    let k: usize = k.parse().map_err(|_| bad())?;
                    let size: usize = size.parse().map_err(|_| bad())?;
                    vec![size; k]
                } else {
                    sizes
                        .split(',')
                        .map(|t| t.parse().map_err(|_| bad()))
                        .collect::<Result<_>>()?
                };
                GraphSpec::Sbm {
                    block_sizes,
                    p_in: real(1)?,
                    p_out: real(2)?,
                }
            }
            "rgg" => {
                arity(2, 3)?;
                GraphSpec::Rgg {
                    n: count(0)?,
                    radius: real(1)?,
                    dim: if args.len() == 3 { count(2)? } else { 2 },
                }
            }
            _ => return Err(bad()),
        };
        spec.validate()?;
        Ok(spec)
    }
}

impl Serialize for GraphSpec {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for GraphSpec {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}
