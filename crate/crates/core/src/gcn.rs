//! Graph-convolutional reparametrization `w(θ)` with exact reverse mode.
//!
//! Forward pass for `l` layers:
//!
//! ```text
//! Z_0 = G_0
//! Z_k = act(f(A) Z_{k-1} W_k)  (+ Z_{k-1} with residual connections)
//! w   = squash([Z_0, …, Z_l] W + 1 bᵀ)      (or Z_l W + 1 bᵀ, last-only)
//! ```
//!
//! Trainable tensors, in bundle order: `G_0` (n×h), `W_1..W_l` (h×h), the
//! projection `W`, and the bias `b` (1×d).

use std::f64::consts::TAU;
use std::io::{Read, Write};

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::SparseGraph;
use crate::sparse::SparseMatrix;
use crate::state::StateMatrix;

/// Maclaurin coefficients of `(1 − u)^{-1/2}`.
pub const BINOMIAL_COEFFS: [f64; 4] = [1.0, 0.5, 0.375, 0.3125];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case", deny_unknown_fields)]
pub enum PropagationRule {
    /// `D̃^{-1/2}(A + I)D̃^{-1/2}`.
    NormAdj,
    /// `I − D^{-1/2}AD^{-1/2}`.
    IMinusAs,
    /// `(D^{-1/2}AD^{-1/2})²`.
    AsSquared,
    /// Unnormalized `A²`.
    AdjSquared,
    /// `Σ_{m≤q} c_m (I − H)^m` with `H = ξI + (1 − ξ)(I − A_s)/2`, applied
    /// as chained products.
    BinomialInvSqrt { q: usize, xi: f64 },
}

impl PropagationRule {
    pub fn validate(&self) -> Result<()> {
        match *self {
            PropagationRule::BinomialInvSqrt { q, xi } => {
                if !(1..=3).contains(&q) {
                    return Err(Error::InvalidSpec(format!("binomial order must be 1..=3, got {q}")));
                }
                if !(xi > 0.0 && xi < 0.1) {
                    return Err(Error::InvalidSpec(format!("xi must lie in (0, 0.1), got {xi}")));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }
}

/// A materialized propagation operator.
#[derive(Debug, Clone, PartialEq)]
pub enum Propagation {
    Matrix(SparseMatrix),
    Binomial { h_norm: SparseMatrix, q: usize },
}

impl Propagation {
    pub fn n(&self) -> usize {
        match self {
            Propagation::Matrix(m) => m.n_rows(),
            Propagation::Binomial { h_norm, .. } => h_norm.n_rows(),
        }
    }

    pub fn apply(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        match self {
            Propagation::Matrix(m) => m.mul_dense(x),
            Propagation::Binomial { h_norm, q } => binomial_series(x, *q, |v| h_norm.mul_dense(v)),
        }
    }

    pub fn apply_transpose(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        match self {
            Propagation::Matrix(m) => m.transpose_mul_dense(x),
            Propagation::Binomial { h_norm, q } => {
                binomial_series(x, *q, |v| h_norm.transpose_mul_dense(v))
            }
        }
    }

    /// Dense form, for diagnostics at small sizes.
    pub fn to_dense(&self) -> DMatrix<f64> {
        self.apply(&DMatrix::identity(self.n(), self.n()))
    }
}

fn binomial_series(
    x: &DMatrix<f64>,
    q: usize,
    apply_h: impl Fn(&DMatrix<f64>) -> DMatrix<f64>,
) -> DMatrix<f64> {
    let mut term = x.clone();
    let mut sum = x.clone();
    for coeff in BINOMIAL_COEFFS.iter().take(q + 1).skip(1) {
        // term ← (I − H) term
        term = &term - apply_h(&term);
        sum.zip_apply(&term, |s, t| *s += coeff * t);
    }
    sum
}

/// `Σ_{m=0}^{q} c_m (I − H)^m x` by `q` chained sparse products.
pub fn binomial_inv_sqrt_apply(h_norm: &SparseMatrix, x: &DMatrix<f64>, q: usize) -> Result<DMatrix<f64>> {
    if q > 3 {
        return Err(Error::InvalidSpec(format!("binomial order must be at most 3, got {q}")));
    }
    if !h_norm.is_square() || h_norm.n_cols() != x.nrows() {
        return Err(Error::ShapeMismatch(format!(
            "{}x{} operator applied to {} rows",
            h_norm.n_rows(),
            h_norm.n_cols(),
            x.nrows()
        )));
    }
    Ok(binomial_series(x, q, |v| h_norm.mul_dense(v)))
}

pub fn propagation_matrix(g: &SparseGraph, rule: PropagationRule) -> Result<Propagation> {
    rule.validate()?;
    let n = g.n();
    Ok(match rule {
        PropagationRule::NormAdj => Propagation::Matrix(g.normalized_adjacency(true)?),
        PropagationRule::IMinusAs => {
            let a_s = g.normalized_adjacency(false)?;
            Propagation::Matrix(SparseMatrix::identity(n).add_scaled(1.0, &a_s, -1.0)?)
        }
        PropagationRule::AsSquared => {
            let a_s = g.normalized_adjacency(false)?;
            Propagation::Matrix(a_s.matmul(&a_s)?)
        }
        PropagationRule::AdjSquared => {
            let a = g.adjacency();
            Propagation::Matrix(a.matmul(a)?)
        }
        PropagationRule::BinomialInvSqrt { q, xi } => {
            let a_s = g.normalized_adjacency(false)?;
            let identity = SparseMatrix::identity(n);
            let laplacian = identity.add_scaled(1.0, &a_s, -1.0)?;
            let h_norm = identity.add_scaled(xi, &laplacian, 0.5 * (1.0 - xi))?;
            Propagation::Binomial { h_norm, q }
        }
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Squash {
    /// `2π·sigmoid(x)`, for phases.
    PhaseSigmoid,
    Identity,
    Affine { scale: f64, offset: f64 },
}

impl Squash {
    fn apply(&self, x: f64) -> f64 {
        match *self {
            Squash::PhaseSigmoid => TAU * sigmoid(x),
            Squash::Identity => x,
            Squash::Affine { scale, offset } => scale * x + offset,
        }
    }

    fn derivative(&self, x: f64) -> f64 {
        match *self {
            Squash::PhaseSigmoid => {
                let s = sigmoid(x);
                TAU * s * (1.0 - s)
            }
            Squash::Identity => 1.0,
            Squash::Affine { scale, .. } => scale,
        }
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Activation {
    LeakyRelu { slope: f64 },
    Identity,
}

impl Activation {
    fn apply(&self, x: f64) -> f64 {
        match *self {
            Activation::LeakyRelu { slope } if x < 0.0 => slope * x,
            _ => x,
        }
    }

    fn derivative(&self, x: f64) -> f64 {
        match *self {
            Activation::LeakyRelu { slope } if x < 0.0 => slope,
            _ => 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConcatMode {
    /// Project `[Z_0, Z_1, …, Z_l]`.
    Full,
    /// Project `Z_l` only.
    LastOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EmbeddingInit {
    /// Entries uniform in `[0, 2π)`.
    UniformPhase,
    Normal { std: f64 },
}

/// Architecture hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GcnConfig {
    pub hidden: usize,
    pub layers: usize,
    pub residual: bool,
    pub concat: ConcatMode,
    pub activation: Activation,
    pub squash: Squash,
    pub embedding_init: EmbeddingInit,
    pub out_dim: usize,
}

impl GcnConfig {
    pub fn new(hidden: usize, layers: usize, out_dim: usize) -> Self {
        Self {
            hidden,
            layers,
            residual: false,
            concat: ConcatMode::Full,
            activation: Activation::LeakyRelu { slope: 0.01 },
            squash: Squash::Identity,
            embedding_init: EmbeddingInit::Normal { std: 1.0 },
            out_dim,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 || self.out_dim == 0 {
            return Err(Error::InvalidSpec("hidden and output widths must be >= 1".into()));
        }
        if !(1..=3).contains(&self.layers) {
            return Err(Error::InvalidSpec(format!("layers must be 1..=3, got {}", self.layers)));
        }
        Ok(())
    }

    fn projection_rows(&self) -> usize {
        match self.concat {
            ConcatMode::Full => self.hidden * (self.layers + 1),
            ConcatMode::LastOnly => self.hidden,
        }
    }
}

/// One gradient tensor per trainable, shape-matched to the model.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientBundle {
    pub embedding: DMatrix<f64>,
    pub layer_weights: Vec<DMatrix<f64>>,
    pub projection: DMatrix<f64>,
    pub bias: DMatrix<f64>,
}

impl GradientBundle {
    pub fn tensors(&self) -> Vec<&DMatrix<f64>> {
        let mut out = vec![&self.embedding];
        out.extend(self.layer_weights.iter());
        out.push(&self.projection);
        out.push(&self.bias);
        out
    }

    pub fn max_abs(&self) -> f64 {
        self.tensors().iter().map(|t| t.amax()).fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone)]
struct ForwardCache {
    /// `Z_0..Z_l`
    layers: Vec<DMatrix<f64>>,
    /// `f(A) Z_{k-1}` for k = 1..l
    propagated: Vec<DMatrix<f64>>,
    /// pre-activations `f(A) Z_{k-1} W_k`
    pre_activation: Vec<DMatrix<f64>>,
    /// projected output before the squash
    pre_squash: DMatrix<f64>,
}

/// Trainable tensor slots, for freezing.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Tensor {
    Embedding,
    Layer(usize),
    Projection,
    Bias,
}

#[derive(Debug, Clone)]
pub struct GcnModel {
    config: GcnConfig,
    embedding: DMatrix<f64>,
    layer_weights: Vec<DMatrix<f64>>,
    projection: DMatrix<f64>,
    bias: DMatrix<f64>,
    propagation: Propagation,
    frozen: Vec<Tensor>,
    cache: Option<ForwardCache>,
}

impl GcnModel {
    /// Random initialization: weights `~ N(0, 1/√fan_in)`, bias zero, the
    /// input embedding per `config.embedding_init`.
    pub fn new(config: GcnConfig, propagation: Propagation, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let n = propagation.n();
        let h = config.hidden;
        let embedding = match config.embedding_init {
            EmbeddingInit::UniformPhase => DMatrix::from_fn(n, h, |_, _| rng.random_range(0.0..TAU)),
            EmbeddingInit::Normal { std } => {
                let dist = Normal::new(0.0, std)
                    .map_err(|e| Error::InvalidSpec(format!("embedding std: {e}")))?;
                DMatrix::from_fn(n, h, |_, _| dist.sample(rng))
            }
        };
        let mut gaussian = |rows: usize, cols: usize| {
            let dist = Normal::new(0.0, 1.0 / (rows as f64).sqrt()).expect("positive std");
            DMatrix::from_fn(rows, cols, |_, _| dist.sample(rng))
        };
        let layer_weights = (0..config.layers).map(|_| gaussian(h, h)).collect();
        let projection = gaussian(config.projection_rows(), config.out_dim);
        Ok(Self {
            embedding,
            layer_weights,
            projection,
            bias: DMatrix::zeros(1, config.out_dim),
            propagation,
            frozen: Vec::new(),
            cache: None,
            config,
        })
    }

    /// Model with explicitly given tensors.
    pub fn from_parts(
        config: GcnConfig,
        propagation: Propagation,
        embedding: DMatrix<f64>,
        layer_weights: Vec<DMatrix<f64>>,
        projection: DMatrix<f64>,
        bias: DMatrix<f64>,
    ) -> Result<Self> {
        config.validate()?;
        let n = propagation.n();
        let h = config.hidden;
        let check = |name: &str, m: &DMatrix<f64>, shape: (usize, usize)| {
            if m.shape() != shape {
                Err(Error::ShapeMismatch(format!("{name}: expected {shape:?}, got {:?}", m.shape())))
            } else {
                Ok(())
            }
        };
        check("embedding", &embedding, (n, h))?;
        if layer_weights.len() != config.layers {
            return Err(Error::ShapeMismatch(format!(
                "{} layer weights for {} layers",
                layer_weights.len(),
                config.layers
            )));
        }
        for w in &layer_weights {
            check("layer weight", w, (h, h))?;
        }
        check("projection", &projection, (config.projection_rows(), config.out_dim))?;
        check("bias", &bias, (1, config.out_dim))?;
        Ok(Self {
            config,
            embedding,
            layer_weights,
            projection,
            bias,
            propagation,
            frozen: Vec::new(),
            cache: None,
        })
    }

    pub fn config(&self) -> &GcnConfig {
        &self.config
    }

    pub fn n(&self) -> usize {
        self.embedding.nrows()
    }

    pub fn out_dim(&self) -> usize {
        self.config.out_dim
    }

    pub fn propagation(&self) -> &Propagation {
        &self.propagation
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn freeze(&mut self, tensor: Tensor) {
        if !self.frozen.contains(&tensor) {
            self.frozen.push(tensor);
        }
    }

    pub fn tensors(&self) -> Vec<&DMatrix<f64>> {
        let mut out = vec![&self.embedding];
        out.extend(self.layer_weights.iter());
        out.push(&self.projection);
        out.push(&self.bias);
        out
    }

    /// Mutable view of the trainables in bundle order; drops the forward cache.
    pub fn tensors_mut(&mut self) -> Vec<&mut DMatrix<f64>> {
        self.cache = None;
        let mut out = vec![&mut self.embedding];
        out.extend(self.layer_weights.iter_mut());
        out.push(&mut self.projection);
        out.push(&mut self.bias);
        out
    }

    pub fn tensor_names(&self) -> Vec<String> {
        let mut names = vec!["embedding".to_string()];
        names.extend((1..=self.config.layers).map(|k| format!("layer.{k}")));
        names.push("projection".into());
        names.push("bias".into());
        names
    }

    fn run(&self) -> ForwardCache {
        let act = self.config.activation;
        let mut layers = vec![self.embedding.clone()];
        let mut propagated = Vec::with_capacity(self.config.layers);
        let mut pre_activation = Vec::with_capacity(self.config.layers);
        for weight in &self.layer_weights {
            let previous = layers.last().expect("at least the embedding");
            let spread = self.propagation.apply(previous);
            let pre = &spread * weight;
            let mut out = pre.map(|x| act.apply(x));
            if self.config.residual {
                out += previous;
            }
            propagated.push(spread);
            pre_activation.push(pre);
            layers.push(out);
        }
        let features = self.features(&layers);
        let mut pre_squash = &features * &self.projection;
        for mut row in pre_squash.row_iter_mut() {
            row += &self.bias;
        }
        ForwardCache {
            layers,
            propagated,
            pre_activation,
            pre_squash,
        }
    }

    fn features(&self, layers: &[DMatrix<f64>]) -> DMatrix<f64> {
        match self.config.concat {
            ConcatMode::LastOnly => layers.last().expect("nonempty").clone(),
            ConcatMode::Full => {
                let h = self.config.hidden;
                let mut out = DMatrix::zeros(self.n(), h * layers.len());
                for (k, z) in layers.iter().enumerate() {
                    out.columns_mut(k * h, h).copy_from(z);
                }
                out
            }
        }
    }

    /// Output without touching the cache.
    pub fn evaluate(&self) -> StateMatrix {
        let squash = self.config.squash;
        StateMatrix::from(self.run().pre_squash.map(|x| squash.apply(x)))
    }

    /// Output, caching intermediates for [`GcnModel::backward`].
    pub fn forward(&mut self) -> StateMatrix {
        let cache = self.run();
        let squash = self.config.squash;
        let out = cache.pre_squash.map(|x| squash.apply(x));
        self.cache = Some(cache);
        StateMatrix::from(out)
    }

    /// Reverse-mode gradients of `Σ grad_w ∘ w` with respect to every trainable.
    pub fn backward(&self, grad_w: &StateMatrix) -> Result<GradientBundle> {
        let cache = self.cache.as_ref().ok_or(Error::NoCachedForward)?;
        grad_w.require_shape(self.n(), self.config.out_dim)?;
        let squash = self.config.squash;
        let act = self.config.activation;
        let h = self.config.hidden;
        let l = self.config.layers;

        let d_pre = grad_w
            .values()
            .zip_map(&cache.pre_squash, |g, x| g * squash.derivative(x));
        let features = self.features(&cache.layers);
        let projection = features.transpose() * &d_pre;
        let bias = DMatrix::from_fn(1, d_pre.ncols(), |_, c| d_pre.column(c).sum());
        let d_features = &d_pre * self.projection.transpose();

        let mut d_layers: Vec<DMatrix<f64>> = vec![DMatrix::zeros(self.n(), h); l + 1];
        match self.config.concat {
            ConcatMode::Full => {
                for (k, d) in d_layers.iter_mut().enumerate() {
                    d.copy_from(&d_features.columns(k * h, h));
                }
            }
            ConcatMode::LastOnly => d_layers[l].copy_from(&d_features),
        }

        let mut layer_weights = vec![DMatrix::zeros(h, h); l];
        for k in (1..=l).rev() {
            let d_out = d_layers[k].clone();
            let d_pre_act = d_out.zip_map(&cache.pre_activation[k - 1], |g, x| g * act.derivative(x));
            layer_weights[k - 1] = cache.propagated[k - 1].transpose() * &d_pre_act;
            let d_spread = &d_pre_act * self.layer_weights[k - 1].transpose();
            let mut d_prev = self.propagation.apply_transpose(&d_spread);
            if self.config.residual {
                d_prev += &d_out;
            }
            d_layers[k - 1] += d_prev;
        }

        let mut bundle = GradientBundle {
            embedding: d_layers.swap_remove(0),
            layer_weights,
            projection,
            bias,
        };
        for tensor in &self.frozen {
            match *tensor {
                Tensor::Embedding => bundle.embedding.fill(0.0),
                Tensor::Layer(k) => {
                    if let Some(w) = bundle.layer_weights.get_mut(k) {
                        w.fill(0.0)
                    }
                }
                Tensor::Projection => bundle.projection.fill(0.0),
                Tensor::Bias => bundle.bias.fill(0.0),
            }
        }
        Ok(bundle)
    }

    /// Writes every trainable tensor in the binary checkpoint format:
    ///
    /// ```text
    /// magic   8 bytes  "RGCNCKPT"
    /// version u32 LE   1
    /// count   u32 LE   number of tensors
    /// per tensor:
    ///   name_len u32 LE, name (UTF-8)
    ///   rows u64 LE, cols u64 LE
    ///   rows*cols f64 LE, row-major
    /// ```
    pub fn write_checkpoint(&self, out: &mut impl Write) -> Result<()> {
        out.write_all(CHECKPOINT_MAGIC)?;
        out.write_all(&1u32.to_le_bytes())?;
        let tensors = self.tensors();
        out.write_all(&(tensors.len() as u32).to_le_bytes())?;
        for (name, t) in self.tensor_names().iter().zip(tensors) {
            out.write_all(&(name.len() as u32).to_le_bytes())?;
            out.write_all(name.as_bytes())?;
            out.write_all(&(t.nrows() as u64).to_le_bytes())?;
            out.write_all(&(t.ncols() as u64).to_le_bytes())?;
            for r in 0..t.nrows() {
                for c in 0..t.ncols() {
                    out.write_all(&t[(r, c)].to_le_bytes())?;
                }
            }
        }
        Ok(())
    }

    /// Loads tensors written by [`GcnModel::write_checkpoint`] into a model of
    /// the same architecture.
    pub fn read_checkpoint(&mut self, input: &mut impl Read) -> Result<()> {
        let bad = |m: String| Error::Parse { line: 0, message: m };
        let mut magic = [0u8; 8];
        input.read_exact(&mut magic)?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(bad("not a checkpoint".into()));
        }
        let version = read_u32(input)?;
        if version != 1 {
            return Err(bad(format!("unsupported checkpoint version {version}")));
        }
        let count = read_u32(input)? as usize;
        let names = self.tensor_names();
        if count != names.len() {
            return Err(bad(format!("{count} tensors, model has {}", names.len())));
        }
        let mut loaded = Vec::with_capacity(count);
        for expected in &names {
            let len = read_u32(input)? as usize;
            let mut name = vec![0u8; len];
            input.read_exact(&mut name)?;
            let name = String::from_utf8(name).map_err(|e| bad(e.to_string()))?;
            if &name != expected {
                return Err(bad(format!("expected tensor `{expected}`, found `{name}`")));
            }
            let rows = read_u64(input)? as usize;
            let cols = read_u64(input)? as usize;
            let mut data = Vec::with_capacity(rows * cols);
            for _ in 0..rows * cols {
                let mut buf = [0u8; 8];
                input.read_exact(&mut buf)?;
                data.push(f64::from_le_bytes(buf));
            }
            loaded.push(DMatrix::from_row_slice(rows, cols, &data));
        }
        for (slot, tensor) in self.tensors().iter().zip(&loaded) {
            if slot.shape() != tensor.shape() {
                return Err(Error::ShapeMismatch(format!(
                    "checkpoint tensor {:?} for slot {:?}",
                    tensor.shape(),
                    slot.shape()
                )));
            }
        }
        for (slot, tensor) in self.tensors_mut().into_iter().zip(loaded) {
            *slot = tensor;
        }
        Ok(())
    }
}

const CHECKPOINT_MAGIC: &[u8; 8] = b"RGCNCKPT";

fn read_u32(input: &mut impl Read) -> Result<u32> {
    let mut buf = [0u8; 4];
    input.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

fn read_u64(input: &mut impl Read) -> Result<u64> {
    let mut buf = [0u8; 8];
    input.read_exact(&mut buf)?;
    Ok(u64::from_le_bytes(buf))
}
