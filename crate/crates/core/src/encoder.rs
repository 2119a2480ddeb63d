//! Dual-tower MLP encoder and the exact-search embedding index.
//!
//! Each tower maps an L2-normalized sparse lexical vector through `L` affine
//! layers (ReLU and dropout between them) into a `d′`-dim embedding, which is
//! then normalized to unit length so that the dot product of a task and a
//! server embedding is their cosine similarity.
//!
//! Weights are stored input-major (`weights[i * out + j]` connects input `i`
//! to output `j`), which makes the first layer a cheap row gather for sparse
//! inputs.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt::Write as _;
use core::sync::atomic::{AtomicUsize, Ordering};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::{McpRecord, UnifiedText};
use crate::lexical::{SparseVector, Vocabulary};
use crate::math;
use crate::Normalized;

/// Tolerance for treating a vector as unit-norm.
pub const UNIT_NORM_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EncoderError {
    #[error("input dimension {found} does not match tower input {expected}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("semantic scores require normalized embeddings")]
    NotNormalized,
    #[error("invalid tower configuration: {0}")]
    InvalidConfig(&'static str),
    #[error("parameter vector has {found} values, expected {expected}")]
    ParamCount { expected: usize, found: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TowerConfig {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub output_dim: usize,
    /// Number of affine layers `L` (≥ 1).
    pub layers: usize,
    pub dropout: f64,
}

impl TowerConfig {
    /// Three layers, hidden 512, output 256, dropout 0.2.
    pub fn with_defaults(input_dim: usize) -> Self {
        TowerConfig { input_dim, hidden_dim: 512, output_dim: 256, layers: 3, dropout: 0.2 }
    }

    pub fn validate(&self) -> Result<(), EncoderError> {
        if self.layers == 0 {
            return Err(EncoderError::InvalidConfig("at least one layer is required"));
        }
        if self.input_dim == 0 || self.output_dim == 0 || (self.layers > 1 && self.hidden_dim == 0) {
            return Err(EncoderError::InvalidConfig("dimensions must be positive"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(EncoderError::InvalidConfig("dropout must lie in [0, 1)"));
        }
        Ok(())
    }

    /// `(in, out)` per layer.
    pub fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::with_capacity(self.layers);
        let mut prev = self.input_dim;
        for l in 0..self.layers {
            let out = if l + 1 == self.layers { self.output_dim } else { self.hidden_dim };
            dims.push((prev, out));
            prev = out;
        }
        dims
    }

    pub fn param_count(&self) -> usize {
        self.layer_dims().iter().map(|(i, o)| i * o + o).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    in_dim: usize,
    out_dim: usize,
    weights: Vec<f64>,
    bias: Vec<f64>,
}

impl Layer {
    fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Layer { in_dim, out_dim, weights: vec![0.0; in_dim * out_dim], bias: vec![0.0; out_dim] }
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    fn forward_sparse(&self, x: &SparseVector, out: &mut [f64]) {
        out.copy_from_slice(&self.bias);
        for (i, v) in x.iter() {
            let row = &self.weights[i * self.out_dim..(i + 1) * self.out_dim];
            for (o, w) in out.iter_mut().zip(row) {
                *o += v * w;
            }
        }
    }

    fn forward_dense(&self, x: &[f64], out: &mut [f64]) {
        out.copy_from_slice(&self.bias);
        for (i, &v) in x.iter().enumerate() {
            if v == 0.0 {
                continue;
            }
            let row = &self.weights[i * self.out_dim..(i + 1) * self.out_dim];
            for (o, w) in out.iter_mut().zip(row) {
                *o += v * w;
            }
        }
    }
}

/// Whether dropout is active.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

/// One tower: `L` affine layers with ReLU (and dropout in training) between
/// them. No activation or dropout after the last layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Tower {
    config: TowerConfig,
    layers: Vec<Layer>,
}

/// Activations cached by a training-mode forward pass.
#[derive(Debug, Clone)]
pub struct Trace {
    /// Pre-activation of each hidden layer.
    pre: Vec<Vec<f64>>,
    /// Input to each layer after the first (post ReLU and dropout).
    hidden: Vec<Vec<f64>>,
    /// Dropout scale per hidden unit: 0 or 1/(1-p).
    masks: Vec<Vec<f64>>,
    /// Unnormalized tower output `z`.
    pub output: Vec<f64>,
}

impl Trace {
    pub fn masks(&self) -> &[Vec<f64>] {
        &self.masks
    }

    pub fn pre_activations(&self) -> &[Vec<f64>] {
        &self.pre
    }
}

/// Parameter gradients, shaped like the tower.
#[derive(Debug, Clone, PartialEq)]
pub struct TowerGrads {
    weights: Vec<Vec<f64>>,
    bias: Vec<Vec<f64>>,
}

impl TowerGrads {
    pub fn zeros_like(tower: &Tower) -> Self {
        TowerGrads {
            weights: tower.layers.iter().map(|l| vec![0.0; l.weights.len()]).collect(),
            bias: tower.layers.iter().map(|l| vec![0.0; l.bias.len()]).collect(),
        }
    }

    pub fn reset(&mut self) {
        for v in self.weights.iter_mut().chain(self.bias.iter_mut()) {
            v.iter_mut().for_each(|x| *x = 0.0);
        }
    }

    /// Flat view in the same order as [`Tower::params`].
    pub fn slices(&self) -> Vec<&[f64]> {
        let mut out = Vec::with_capacity(2 * self.weights.len());
        for (w, b) in self.weights.iter().zip(&self.bias) {
            out.push(w.as_slice());
            out.push(b.as_slice());
        }
        out
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.slices().concat()
    }

    pub fn scale(&mut self, factor: f64) {
        for v in self.weights.iter_mut().chain(self.bias.iter_mut()) {
            v.iter_mut().for_each(|x| *x *= factor);
        }
    }
}

impl Tower {
    /// Uniform(−1/√fan_in, 1/√fan_in) weights, zero biases.
    pub fn init(config: TowerConfig, seed: u64) -> Result<Self, EncoderError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = config
            .layer_dims()
            .into_iter()
            .map(|(i, o)| {
                let bound = 1.0 / libm::sqrt(i as f64);
                let mut layer = Layer::zeros(i, o);
                for w in &mut layer.weights {
                    *w = rng.random_range(-bound..bound);
                }
                layer
            })
            .collect();
        Ok(Tower { config, layers })
    }

    /// Single square layer with identity weights and zero bias.
    pub fn identity(dim: usize) -> Self {
        let config = TowerConfig { input_dim: dim, hidden_dim: dim, output_dim: dim, layers: 1, dropout: 0.0 };
        let mut layer = Layer::zeros(dim, dim);
        for i in 0..dim {
            layer.weights[i * dim + i] = 1.0;
        }
        Tower { config, layers: vec![layer] }
    }

    /// Rebuild from a flat parameter vector laid out as [`Tower::params`].
    pub fn from_flat(config: TowerConfig, flat: &[f64]) -> Result<Self, EncoderError> {
        config.validate()?;
        let expected = config.param_count();
        if flat.len() != expected {
            return Err(EncoderError::ParamCount { expected, found: flat.len() });
        }
        let mut rest = flat;
        let mut layers = Vec::with_capacity(config.layers);
        for (i, o) in config.layer_dims() {
            let (w, r) = rest.split_at(i * o);
            let (b, r) = r.split_at(o);
            rest = r;
            layers.push(Layer { in_dim: i, out_dim: o, weights: w.to_vec(), bias: b.to_vec() });
        }
        Ok(Tower { config, layers })
    }

    pub fn config(&self) -> &TowerConfig {
        &self.config
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn params(&self) -> Vec<&[f64]> {
        let mut out = Vec::with_capacity(2 * self.layers.len());
        for l in &self.layers {
            out.push(l.weights.as_slice());
            out.push(l.bias.as_slice());
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::with_capacity(2 * self.layers.len());
        for l in &mut self.layers {
            out.push(l.weights.as_mut_slice());
            out.push(l.bias.as_mut_slice());
        }
        out
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.params().concat()
    }

    pub fn all_finite(&self) -> bool {
        self.params().iter().all(|p| p.iter().all(|x| x.is_finite()))
    }

    fn check_input(&self, x: &SparseVector) -> Result<(), EncoderError> {
        if x.dim() != self.config.input_dim {
            return Err(EncoderError::DimensionMismatch { expected: self.config.input_dim, found: x.dim() });
        }
        Ok(())
    }

    /// Inference-mode forward pass: unnormalized output `z`, no dropout.
    pub fn forward(&self, x: &SparseVector) -> Result<DenseEmbedding, EncoderError> {
        self.check_input(x)?;
        let mut cur = vec![0.0; self.layers[0].out_dim];
        self.layers[0].forward_sparse(x, &mut cur);
        for layer in &self.layers[1..] {
            relu_in_place(&mut cur);
            let mut next = vec![0.0; layer.out_dim];
            layer.forward_dense(&cur, &mut next);
            cur = next;
        }
        Ok(DenseEmbedding { values: cur, normalized: false })
    }

    /// Forward pass in either mode. Training mode draws dropout masks from `rng`.
    pub fn forward_mode<R: Rng + ?Sized>(
        &self,
        x: &SparseVector,
        mode: Mode,
        rng: &mut R,
    ) -> Result<Trace, EncoderError> {
        let masks = match mode {
            Mode::Infer => None,
            Mode::Train => Some(self.sample_masks(rng)),
        };
        self.forward_traced(x, masks)
    }

    /// Draw one set of inverted-dropout masks for the hidden layers.
    pub fn sample_masks<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<Vec<f64>> {
        let p = self.config.dropout;
        let keep = 1.0 / (1.0 - p);
        self.layers[..self.layers.len() - 1]
            .iter()
            .map(|l| {
                (0..l.out_dim)
                    .map(|_| if p > 0.0 && rng.random::<f64>() < p { 0.0 } else { keep })
                    .collect()
            })
            .collect()
    }

    /// Forward pass with explicit dropout masks (`None` disables dropout),
    /// caching everything [`Tower::backward`] needs.
    pub fn forward_traced(
        &self,
        x: &SparseVector,
        masks: Option<Vec<Vec<f64>>>,
    ) -> Result<Trace, EncoderError> {
        self.check_input(x)?;
        let hidden_layers = self.layers.len() - 1;
        let masks = masks.unwrap_or_else(|| {
            self.layers[..hidden_layers].iter().map(|l| vec![1.0; l.out_dim]).collect()
        });
        assert_eq!(masks.len(), hidden_layers, "one dropout mask per hidden layer");

        let mut pre = Vec::with_capacity(hidden_layers);
        let mut hidden = Vec::with_capacity(hidden_layers);
        let mut cur = vec![0.0; self.layers[0].out_dim];
        self.layers[0].forward_sparse(x, &mut cur);
        for (l, layer) in self.layers.iter().enumerate().skip(1) {
            let mask = &masks[l - 1];
            let act: Vec<f64> = cur.iter().zip(mask).map(|(&z, &m)| if z > 0.0 { z * m } else { 0.0 }).collect();
            pre.push(cur);
            let mut next = vec![0.0; layer.out_dim];
            layer.forward_dense(&act, &mut next);
            hidden.push(act);
            cur = next;
        }
        Ok(Trace { pre, hidden, masks, output: cur })
    }

    /// Accumulate parameter gradients given `d_output = ∂L/∂z`.
    pub fn backward(&self, x: &SparseVector, trace: &Trace, d_output: &[f64], grads: &mut TowerGrads) {
        let n = self.layers.len();
        let mut delta = d_output.to_vec();
        for l in (0..n).rev() {
            let layer = &self.layers[l];
            let out = layer.out_dim;
            for (g, d) in grads.bias[l].iter_mut().zip(&delta) {
                *g += d;
            }
            if l == 0 {
                let gw = &mut grads.weights[0];
                for (i, v) in x.iter() {
                    let row = &mut gw[i * out..(i + 1) * out];
                    for (g, d) in row.iter_mut().zip(&delta) {
                        *g += v * d;
                    }
                }
                break;
            }
            let input = &trace.hidden[l - 1];
            let gw = &mut grads.weights[l];
            let mut d_input = vec![0.0; layer.in_dim];
            for (i, &a) in input.iter().enumerate() {
                let row = &layer.weights[i * out..(i + 1) * out];
                d_input[i] = math::dot(row, &delta);
                if a != 0.0 {
                    let grow = &mut gw[i * out..(i + 1) * out];
                    for (g, d) in grow.iter_mut().zip(&delta) {
                        *g += a * d;
                    }
                }
            }
            // through dropout and ReLU of the previous layer's output
            let pre = &trace.pre[l - 1];
            let mask = &trace.masks[l - 1];
            delta = d_input
                .iter()
                .zip(pre)
                .zip(mask)
                .map(|((&d, &z), &m)| if z > 0.0 { d * m } else { 0.0 })
                .collect();
        }
    }
}

fn relu_in_place(v: &mut [f64]) {
    for x in v {
        if *x < 0.0 {
            *x = 0.0;
        }
    }
}

/// Dense embedding `z` or, once normalized, `ẑ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseEmbedding {
    pub values: Vec<f64>,
    pub normalized: bool,
}

impl DenseEmbedding {
    pub fn new(values: Vec<f64>) -> Self {
        DenseEmbedding { values, normalized: false }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn norm(&self) -> f64 {
        math::norm(&self.values)
    }

    /// Scale to unit length. The zero vector stays zero and is flagged
    /// degenerate; it then scores 0 against everything.
    pub fn normalize(&self) -> Normalized<DenseEmbedding> {
        let n = self.norm();
        if n == 0.0 || !n.is_finite() {
            return Normalized {
                vector: DenseEmbedding { values: vec![0.0; self.values.len()], normalized: true },
                degenerate: true,
            };
        }
        Normalized {
            vector: DenseEmbedding { values: self.values.iter().map(|v| v / n).collect(), normalized: true },
            degenerate: false,
        }
    }
}

/// Backpropagate `∂L/∂ẑ` through `ẑ = z/‖z‖`: `(g − ẑ(ẑ·g)) / ‖z‖`.
pub fn normalize_backward(z: &[f64], d_unit: &[f64]) -> Vec<f64> {
    let n = math::norm(z);
    if n == 0.0 {
        return vec![0.0; z.len()];
    }
    let unit: Vec<f64> = z.iter().map(|v| v / n).collect();
    let proj = math::dot(&unit, d_unit);
    d_unit.iter().zip(&unit).map(|(g, u)| (g - u * proj) / n).collect()
}

/// Cosine similarity of two normalized embeddings.
pub fn semantic_score(server: &DenseEmbedding, task: &DenseEmbedding) -> Result<f64, EncoderError> {
    if !server.normalized || !task.normalized {
        return Err(EncoderError::NotNormalized);
    }
    if server.dim() != task.dim() {
        return Err(EncoderError::DimensionMismatch { expected: server.dim(), found: task.dim() });
    }
    Ok(math::dot(&server.values, &task.values))
}

/// Vectors that can be searched exhaustively and averaged into a centroid.
pub trait Embedding: Clone {
    fn dot(&self, other: &Self) -> f64;

    /// `(query + Σ anchors) / (anchors.len() + 1)`, not re-normalized.
    fn centroid(query: &Self, anchors: &[&Self]) -> Self;

    /// Squared-norm check used when building an index; degenerate zero
    /// vectors are allowed.
    fn is_unit_or_zero(&self) -> bool;

    fn digest(&self, hasher: &mut Sha256);
}

impl Embedding for DenseEmbedding {
    fn dot(&self, other: &Self) -> f64 {
        math::dot(&self.values, &other.values)
    }

    fn centroid(query: &Self, anchors: &[&Self]) -> Self {
        let mut acc = query.values.clone();
        for a in anchors {
            for (x, y) in acc.iter_mut().zip(&a.values) {
                *x += y;
            }
        }
        let k = (anchors.len() + 1) as f64;
        acc.iter_mut().for_each(|x| *x /= k);
        DenseEmbedding { values: acc, normalized: false }
    }

    fn is_unit_or_zero(&self) -> bool {
        let n = self.norm();
        n == 0.0 || (n - 1.0).abs() <= UNIT_NORM_TOL
    }

    fn digest(&self, hasher: &mut Sha256) {
        for v in &self.values {
            hasher.update(v.to_le_bytes());
        }
    }
}

impl Embedding for SparseVector {
    fn dot(&self, other: &Self) -> f64 {
        SparseVector::dot(self, other)
    }

    fn centroid(query: &Self, anchors: &[&Self]) -> Self {
        let k = (anchors.len() + 1) as f64;
        let pairs = query
            .iter()
            .chain(anchors.iter().flat_map(|a| a.iter()))
            .map(|(i, v)| (i, v / k));
        SparseVector::from_pairs(query.dim(), pairs)
    }

    fn is_unit_or_zero(&self) -> bool {
        let n = self.norm();
        n == 0.0 || (n - 1.0).abs() <= UNIT_NORM_TOL
    }

    fn digest(&self, hasher: &mut Sha256) {
        for (i, v) in self.iter() {
            hasher.update((i as u64).to_le_bytes());
            hasher.update(v.to_le_bytes());
        }
    }
}

/// Anything that maps task and server text into a shared embedding space.
pub trait SemanticModel {
    type Embedding: Embedding;

    fn embed_task(&self, text: &str) -> Self::Embedding;
    fn embed_server(&self, text: &str) -> Self::Embedding;
}

impl<T: SemanticModel + ?Sized> SemanticModel for &T {
    type Embedding = T::Embedding;

    fn embed_task(&self, text: &str) -> Self::Embedding {
        (**self).embed_task(text)
    }

    fn embed_server(&self, text: &str) -> Self::Embedding {
        (**self).embed_server(text)
    }
}

/// Task tower and server tower sharing one output space.
#[derive(Debug, Clone, PartialEq)]
pub struct DualEncoder {
    pub task: Tower,
    pub server: Tower,
}

impl DualEncoder {
    /// Both towers with the same shape; seeds differ so the towers start apart.
    pub fn init(config: TowerConfig, seed: u64) -> Result<Self, EncoderError> {
        Ok(DualEncoder {
            task: Tower::init(config, seed)?,
            server: Tower::init(config, seed ^ 0x5eed_5eed_5eed_5eed)?,
        })
    }

    pub fn config(&self) -> &TowerConfig {
        self.task.config()
    }
}

/// Lexical vectors pushed through the trained towers.
#[derive(Debug, Clone)]
pub struct TwoTowerModel {
    pub vocab: Vocabulary,
    pub encoder: DualEncoder,
}

impl TwoTowerModel {
    fn embed(&self, tower: &Tower, text: &str) -> DenseEmbedding {
        let input = self.vocab.embed(text).vector;
        let z = tower.forward(&input).expect("vocabulary and tower dimensions agree");
        let n = z.normalize();
        if n.degenerate {
            log::warn!("tower produced a zero embedding; it will score 0 against everything");
        }
        n.vector
    }
}

impl SemanticModel for TwoTowerModel {
    type Embedding = DenseEmbedding;

    fn embed_task(&self, text: &str) -> DenseEmbedding {
        self.embed(&self.encoder.task, text)
    }

    fn embed_server(&self, text: &str) -> DenseEmbedding {
        self.embed(&self.encoder.server, text)
    }
}

/// Direct cosine between normalized lexical vectors (no learned projection).
#[derive(Debug, Clone)]
pub struct SparseCosineModel {
    pub vocab: Vocabulary,
}

impl SemanticModel for SparseCosineModel {
    type Embedding = SparseVector;

    fn embed_task(&self, text: &str) -> SparseVector {
        self.vocab.embed(text).vector
    }

    fn embed_server(&self, text: &str) -> SparseVector {
        self.vocab.embed(text).vector
    }
}

/// Immutable server-id → embedding table searched exhaustively.
///
/// Every full scan ([`EmbeddingIndex::scan`]) bumps a counter so callers can
/// verify how many corpus passes a request made.
#[derive(Debug)]
pub struct EmbeddingIndex<E> {
    ids: Vec<String>,
    vectors: Vec<E>,
    snapshot: String,
    scans: AtomicUsize,
}

impl<E: Clone> Clone for EmbeddingIndex<E> {
    fn clone(&self) -> Self {
        EmbeddingIndex {
            ids: self.ids.clone(),
            vectors: self.vectors.clone(),
            snapshot: self.snapshot.clone(),
            scans: AtomicUsize::new(0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum IndexError {
    #[error("embedding for `{0}` is not unit-norm")]
    NotNormalized(String),
    #[error("{ids} ids but {vectors} vectors")]
    LengthMismatch { ids: usize, vectors: usize },
}

impl<E: Embedding> EmbeddingIndex<E> {
    pub fn new(ids: Vec<String>, vectors: Vec<E>) -> Result<Self, IndexError> {
        if ids.len() != vectors.len() {
            return Err(IndexError::LengthMismatch { ids: ids.len(), vectors: vectors.len() });
        }
        let mut hasher = Sha256::new();
        for (id, v) in ids.iter().zip(&vectors) {
            if !v.is_unit_or_zero() {
                return Err(IndexError::NotNormalized(id.clone()));
            }
            hasher.update((id.len() as u64).to_le_bytes());
            hasher.update(id.as_bytes());
            v.digest(&mut hasher);
        }
        let mut snapshot = String::with_capacity(64);
        for b in hasher.finalize().iter() {
            let _ = write!(snapshot, "{b:02x}");
        }
        Ok(EmbeddingIndex { ids, vectors, snapshot, scans: AtomicUsize::new(0) })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn vectors(&self) -> &[E] {
        &self.vectors
    }

    pub fn get(&self, pos: usize) -> &E {
        &self.vectors[pos]
    }

    /// Content hash of ids and vectors.
    pub fn snapshot_id(&self) -> &str {
        &self.snapshot
    }

    /// Dot product of `query` against every entry, in index order.
    pub fn scan(&self, query: &E) -> Vec<f64> {
        self.scans.fetch_add(1, Ordering::Relaxed);
        self.vectors.iter().map(|v| v.dot(query)).collect()
    }

    /// Number of full scans served so far.
    pub fn scan_count(&self) -> usize {
        self.scans.load(Ordering::Relaxed)
    }
}

/// Embed every server once and freeze the result.
pub fn encode_corpus<M: SemanticModel>(model: &M, servers: &[McpRecord]) -> EmbeddingIndex<M::Embedding> {
    let ids = servers.iter().map(|s| s.id.clone()).collect();
    let vectors = servers.iter().map(|s| model.embed_server(&s.concat_text())).collect();
    EmbeddingIndex::new(ids, vectors).expect("model embeddings are normalized")
}
