//! Contrastive training of the dual-tower encoder.
//!
//! Each batch pairs `B` distinct tasks with one positive server each. The
//! score matrix `S[i][j] = ẑ_tᵢ · ẑ_mⱼ` is scaled by `1/τ` and each row is
//! treated as a softmax over the batch's servers with the diagonal as the
//! target; the symmetric variant averages this with the column-wise
//! (server → task) direction. Gradients flow back through the unit
//! normalization and both towers, and parameters are updated with AdamW.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, DatasetSplit, InteractionSet, UnifiedText};
use crate::encoder::{normalize_backward, DualEncoder, EncoderError, Embedding as _, Tower, TowerConfig, TowerGrads};
use crate::lexical::{SparseVector, Vocabulary};
use crate::math;
use crate::metrics;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    /// Task → server softmax only.
    OneSided,
    /// Mean of task → server and server → task.
    Symmetric,
    /// Point-wise binary cross-entropy over all in-batch pairs.
    Bce,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub temperature: f64,
    pub seed: u64,
    /// Epochs between validation passes.
    pub eval_every: usize,
    pub loss: LossKind,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 256,
            epochs: 200,
            learning_rate: 1e-3,
            weight_decay: 0.01,
            temperature: 0.07,
            seed: 0,
            eval_every: 1,
            loss: LossKind::Symmetric,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TrainError {
    #[error("temperature must be positive, got {0}")]
    Temperature(f64),
    #[error("invalid training configuration: {0}")]
    Config(&'static str),
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error("task and server batches differ in length ({tasks} vs {servers})")]
    BatchShape { tasks: usize, servers: usize },
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if !(self.temperature > 0.0) {
            return Err(TrainError::Temperature(self.temperature));
        }
        if self.batch_size == 0 {
            return Err(TrainError::Config("batch_size must be at least 1"));
        }
        if !(self.learning_rate > 0.0) {
            return Err(TrainError::Config("learning_rate must be positive"));
        }
        if self.eval_every == 0 {
            return Err(TrainError::Config("eval_every must be at least 1"));
        }
        Ok(())
    }
}

/// `(task_id, positive_server_id)` pairs; each task at most once.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Batch {
    pub pairs: Vec<(String, String)>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

/// Pick one positive uniformly from M⁺(t) for each task. Tasks without
/// positives are skipped with a warning; duplicate task ids are ignored.
pub fn sample_batch<R: Rng + ?Sized, S: AsRef<str>>(
    tasks: &[S],
    interactions: &InteractionSet,
    rng: &mut R,
) -> Batch {
    let mut pairs = Vec::with_capacity(tasks.len());
    let mut seen = alloc::collections::BTreeSet::new();
    for t in tasks {
        let t = t.as_ref();
        if !seen.insert(t) {
            continue;
        }
        match interactions.positives(t).and_then(|ps| ps.choose(rng)) {
            Some(m) => pairs.push((String::from(t), m.clone())),
            None => log::warn!("task `{t}` has no positives; skipped"),
        }
    }
    Batch { pairs }
}

/// Shuffle the tasks and cut them into batches of at most `batch_size`.
pub fn epoch_batches<R: Rng + ?Sized, S: AsRef<str>>(
    tasks: &[S],
    interactions: &InteractionSet,
    batch_size: usize,
    rng: &mut R,
) -> Vec<Batch> {
    let mut order: Vec<&str> = tasks.iter().map(|t| t.as_ref()).collect();
    order.shuffle(rng);
    order
        .chunks(batch_size.max(1))
        .map(|chunk| sample_batch(chunk, interactions, rng))
        .filter(|b| !b.is_empty())
        .collect()
}

/// Loss value and gradients with respect to the normalized embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct LossOutput {
    pub loss: f64,
    pub d_tasks: Vec<Vec<f64>>,
    pub d_servers: Vec<Vec<f64>>,
}

/// In-batch loss over normalized task/server embeddings (row `i` of each is
/// a matched pair). Servers shared by two tasks are not deduplicated: each
/// task's positive still counts as a negative for the other.
pub fn contrastive_loss(
    tasks: &[Vec<f64>],
    servers: &[Vec<f64>],
    temperature: f64,
    kind: LossKind,
) -> Result<LossOutput, TrainError> {
    if !(temperature > 0.0) {
        return Err(TrainError::Temperature(temperature));
    }
    if tasks.len() != servers.len() {
        return Err(TrainError::BatchShape { tasks: tasks.len(), servers: servers.len() });
    }
    let b = tasks.len();
    let dim = tasks.first().map_or(0, Vec::len);
    let bf = b as f64;
    let logits: Vec<Vec<f64>> = tasks
        .iter()
        .map(|t| servers.iter().map(|m| math::dot(t, m) / temperature).collect())
        .collect();

    // ∂L/∂S, filled per loss kind
    let mut grad_s = vec![vec![0.0; b]; b];
    let mut loss = 0.0;

    let row_term = |grad_s: &mut Vec<Vec<f64>>, weight: f64| -> f64 {
        let mut total = 0.0;
        for i in 0..b {
            let row = &logits[i];
            total += math::log_sum_exp(row) - row[i];
            let p = math::softmax(row);
            for j in 0..b {
                let target = if i == j { 1.0 } else { 0.0 };
                grad_s[i][j] += weight * (p[j] - target) / (bf * temperature);
            }
        }
        weight * total / bf
    };
    let col_term = |grad_s: &mut Vec<Vec<f64>>, weight: f64| -> f64 {
        let mut total = 0.0;
        for j in 0..b {
            let col: Vec<f64> = (0..b).map(|i| logits[i][j]).collect();
            total += math::log_sum_exp(&col) - col[j];
            let q = math::softmax(&col);
            for i in 0..b {
                let target = if i == j { 1.0 } else { 0.0 };
                grad_s[i][j] += weight * (q[i] - target) / (bf * temperature);
            }
        }
        weight * total / bf
    };

    match kind {
        LossKind::OneSided => loss += row_term(&mut grad_s, 1.0),
        LossKind::Symmetric => {
            loss += row_term(&mut grad_s, 0.5);
            loss += col_term(&mut grad_s, 0.5);
        }
        LossKind::Bce => {
            let n = bf * bf;
            for i in 0..b {
                for j in 0..b {
                    let x = logits[i][j];
                    let y = if i == j { 1.0 } else { 0.0 };
                    loss += (softplus(x) - y * x) / n;
                    grad_s[i][j] = (sigmoid(x) - y) / (n * temperature);
                }
            }
        }
    }

    let mut d_tasks = vec![vec![0.0; dim]; b];
    let mut d_servers = vec![vec![0.0; dim]; b];
    for i in 0..b {
        for j in 0..b {
            let g = grad_s[i][j];
            if g == 0.0 {
                continue;
            }
            for k in 0..dim {
                d_tasks[i][k] += g * servers[j][k];
                d_servers[j][k] += g * tasks[i][k];
            }
        }
    }
    Ok(LossOutput { loss, d_tasks, d_servers })
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + libm::log1p(libm::exp(-x))
    } else {
        libm::log1p(libm::exp(x))
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}

/// Gradients for both towers.
#[derive(Debug, Clone, PartialEq)]
pub struct DualGrads {
    pub task: TowerGrads,
    pub server: TowerGrads,
}

impl DualGrads {
    pub fn zeros_like(encoder: &DualEncoder) -> Self {
        DualGrads { task: TowerGrads::zeros_like(&encoder.task), server: TowerGrads::zeros_like(&encoder.server) }
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut v = self.task.flatten();
        v.extend(self.server.flatten());
        v
    }
}

/// Dropout masks for one batch: per item, per tower.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchMasks {
    pub task: Vec<Vec<Vec<f64>>>,
    pub server: Vec<Vec<Vec<f64>>>,
}

impl BatchMasks {
    pub fn sample<R: Rng + ?Sized>(encoder: &DualEncoder, batch: usize, rng: &mut R) -> Self {
        let task = (0..batch).map(|_| encoder.task.sample_masks(rng)).collect();
        let server = (0..batch).map(|_| encoder.server.sample_masks(rng)).collect();
        BatchMasks { task, server }
    }
}

/// Forward the batch through both towers (with the given dropout masks, or
/// none), evaluate the loss, and backpropagate into fresh gradients.
pub fn loss_and_grads(
    encoder: &DualEncoder,
    task_inputs: &[&SparseVector],
    server_inputs: &[&SparseVector],
    masks: Option<&BatchMasks>,
    temperature: f64,
    kind: LossKind,
) -> Result<(f64, DualGrads), TrainError> {
    if task_inputs.len() != server_inputs.len() {
        return Err(TrainError::BatchShape { tasks: task_inputs.len(), servers: server_inputs.len() });
    }
    let trace = |tower: &Tower, x: &SparseVector, m: Option<&Vec<Vec<f64>>>| tower.forward_traced(x, m.cloned());
    let mut t_traces = Vec::with_capacity(task_inputs.len());
    let mut m_traces = Vec::with_capacity(server_inputs.len());
    for (i, (t, m)) in task_inputs.iter().zip(server_inputs).enumerate() {
        t_traces.push(trace(&encoder.task, t, masks.map(|ms| &ms.task[i]))?);
        m_traces.push(trace(&encoder.server, m, masks.map(|ms| &ms.server[i]))?);
    }
    let unit = |z: &Vec<f64>| {
        crate::encoder::DenseEmbedding::new(z.clone()).normalize().vector.values
    };
    let t_hat: Vec<Vec<f64>> = t_traces.iter().map(|tr| unit(&tr.output)).collect();
    let m_hat: Vec<Vec<f64>> = m_traces.iter().map(|tr| unit(&tr.output)).collect();
    let out = contrastive_loss(&t_hat, &m_hat, temperature, kind)?;

    let mut grads = DualGrads::zeros_like(encoder);
    for i in 0..task_inputs.len() {
        let dz_t = normalize_backward(&t_traces[i].output, &out.d_tasks[i]);
        encoder.task.backward(task_inputs[i], &t_traces[i], &dz_t, &mut grads.task);
        let dz_m = normalize_backward(&m_traces[i].output, &out.d_servers[i]);
        encoder.server.backward(server_inputs[i], &m_traces[i], &dz_m, &mut grads.server);
    }
    Ok((out.loss, grads))
}

/// AdamW with bias-corrected moments and decoupled weight decay.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamW {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamW {
    pub fn new(learning_rate: f64, weight_decay: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        AdamW { learning_rate, weight_decay, beta1, beta2, eps, step: 0, m: Vec::new(), v: Vec::new() }
    }

    pub fn from_config(config: &TrainConfig) -> Self {
        Self::new(config.learning_rate, config.weight_decay, config.beta1, config.beta2, config.eps)
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Apply one update. Returns `false` (and leaves everything untouched)
    /// when any gradient is non-finite.
    pub fn step(&mut self, params: &mut [&mut [f64]], grads: &[&[f64]]) -> bool {
        assert_eq!(params.len(), grads.len(), "parameter/gradient group count");
        if grads.iter().any(|g| g.iter().any(|x| !x.is_finite())) {
            log::warn!("non-finite gradient; optimizer step skipped");
            return false;
        }
        if self.m.is_empty() {
            self.m = grads.iter().map(|g| vec![0.0; g.len()]).collect();
            self.v = self.m.clone();
        }
        self.step += 1;
        let t = self.step as f64;
        let bc1 = 1.0 - libm::pow(self.beta1, t);
        let bc2 = 1.0 - libm::pow(self.beta2, t);
        let decay = 1.0 - self.learning_rate * self.weight_decay;
        for ((p, g), (m, v)) in params.iter_mut().zip(grads).zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            assert_eq!(p.len(), g.len(), "parameter/gradient shape");
            for k in 0..p.len() {
                m[k] = self.beta1 * m[k] + (1.0 - self.beta1) * g[k];
                v[k] = self.beta2 * v[k] + (1.0 - self.beta2) * g[k] * g[k];
                let m_hat = m[k] / bc1;
                let v_hat = v[k] / bc2;
                p[k] = p[k] * decay - self.learning_rate * m_hat / (libm::sqrt(v_hat) + self.eps);
            }
        }
        true
    }
}

/// One row of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    #[serde(rename = "recall@10_valid")]
    pub recall_at_10_valid: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters of the best validation epoch (or the last epoch when there
    /// is no validation split; the initial parameters when `epochs == 0`).
    pub encoder: DualEncoder,
    pub log: Vec<EpochRecord>,
    pub best_epoch: Option<usize>,
    /// Epoch at which the loss became non-finite; training stopped there.
    pub diverged_at: Option<usize>,
}

/// Owns the parameters and optimizer state for one training run.
pub struct Trainer<'a> {
    corpus: &'a Corpus,
    vocab: &'a Vocabulary,
    config: TrainConfig,
    task_inputs: BTreeMap<&'a str, SparseVector>,
    server_inputs: BTreeMap<&'a str, SparseVector>,
}

impl<'a> Trainer<'a> {
    pub fn new(corpus: &'a Corpus, vocab: &'a Vocabulary, config: TrainConfig) -> Result<Self, TrainError> {
        config.validate()?;
        let task_inputs = corpus
            .tasks()
            .iter()
            .map(|t| (t.id.as_str(), vocab.embed(&t.concat_text()).vector))
            .collect();
        let server_inputs = corpus
            .servers()
            .iter()
            .map(|s| (s.id.as_str(), vocab.embed(&s.concat_text()).vector))
            .collect();
        Ok(Trainer { corpus, vocab, config, task_inputs, server_inputs })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    /// Train from freshly initialized towers.
    pub fn train(&self, tower: TowerConfig, split: &DatasetSplit) -> Result<TrainOutcome, TrainError> {
        if tower.input_dim != self.vocab.len() {
            return Err(EncoderError::DimensionMismatch { expected: self.vocab.len(), found: tower.input_dim }.into());
        }
        let encoder = DualEncoder::init(tower, self.config.seed)?;
        self.train_from(encoder, split)
    }

    pub fn train_from(&self, mut encoder: DualEncoder, split: &DatasetSplit) -> Result<TrainOutcome, TrainError> {
        let cfg = &self.config;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut optim_t = AdamW::from_config(cfg);
        let mut optim_m = AdamW::from_config(cfg);
        let interactions = self.corpus.interactions();
        let train_tasks: Vec<&str> = split
            .train
            .iter()
            .map(String::as_str)
            .filter(|t| self.task_inputs.contains_key(t))
            .collect();

        let mut log = Vec::with_capacity(cfg.epochs);
        let mut best: Option<(f64, usize, DualEncoder)> = None;
        let mut last_good = encoder.clone();

        for epoch in 1..=cfg.epochs {
            let batches = epoch_batches(&train_tasks, interactions, cfg.batch_size, &mut rng);
            let mut total = 0.0;
            let mut count = 0usize;
            for batch in &batches {
                let t_in: Vec<&SparseVector> = batch.pairs.iter().map(|(t, _)| &self.task_inputs[t.as_str()]).collect();
                let m_in: Vec<&SparseVector> =
                    batch.pairs.iter().map(|(_, m)| &self.server_inputs[m.as_str()]).collect();
                let masks = BatchMasks::sample(&encoder, batch.len(), &mut rng);
                let (loss, grads) = loss_and_grads(&encoder, &t_in, &m_in, Some(&masks), cfg.temperature, cfg.loss)?;
                total += loss * batch.len() as f64;
                count += batch.len();
                optim_t.step(&mut encoder.task.params_mut(), &grads.task.slices());
                optim_m.step(&mut encoder.server.params_mut(), &grads.server.slices());
            }
            let loss = if count == 0 { 0.0 } else { total / count as f64 };
            if !loss.is_finite() || !encoder.task.all_finite() || !encoder.server.all_finite() {
                log::error!("training diverged at epoch {epoch}");
                let (encoder, best_epoch) = match best {
                    Some((_, e, enc)) => (enc, Some(e)),
                    None => (last_good, None),
                };
                return Ok(TrainOutcome { encoder, log, best_epoch, diverged_at: Some(epoch) });
            }

            let evaluate = !split.valid.is_empty() && (epoch % cfg.eval_every == 0 || epoch == cfg.epochs);
            let recall = evaluate.then(|| self.validation_recall(&encoder, &split.valid, 10));
            log.push(EpochRecord { epoch, loss, recall_at_10_valid: recall });
            if let Some(r) = recall {
                if best.as_ref().is_none_or(|(b, _, _)| r >= *b) {
                    best = Some((r, epoch, encoder.clone()));
                }
            }
            last_good = encoder.clone();
        }

        let (encoder, best_epoch) = match best {
            Some((_, e, enc)) => (enc, Some(e)),
            None => (encoder, if cfg.epochs > 0 { Some(cfg.epochs) } else { None }),
        };
        Ok(TrainOutcome { encoder, log, best_epoch, diverged_at: None })
    }

    /// Macro Recall@k of pure semantic retrieval over the whole server corpus.
    pub fn validation_recall(&self, encoder: &DualEncoder, tasks: &[String], k: usize) -> f64 {
        let servers = self.corpus.servers();
        let server_embs: Vec<crate::encoder::DenseEmbedding> = servers
            .iter()
            .map(|s| encoder.server.forward(&self.server_inputs[s.id.as_str()]).expect("dims").normalize().vector)
            .collect();
        let mut sum = 0.0;
        let mut n = 0usize;
        for t in tasks {
            let (Some(input), Some(pos)) = (self.task_inputs.get(t.as_str()), self.corpus.interactions().positives(t))
            else {
                continue;
            };
            let q = encoder.task.forward(input).expect("dims").normalize().vector;
            let mut scored: Vec<(f64, &str)> =
                server_embs.iter().zip(servers).map(|(e, s)| (e.dot(&q), s.id.as_str())).collect();
            scored.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.cmp(b.1)));
            let top: Vec<&str> = scored.iter().take(k).map(|(_, id)| *id).collect();
            sum += metrics::recall_precision_f1(&top, pos, k).recall;
            n += 1;
        }
        if n == 0 {
            0.0
        } else {
            sum / n as f64
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Interaction;
    use alloc::format;

    fn unit(v: &[f64]) -> Vec<f64> {
        let n = math::norm(v);
        v.iter().map(|x| x / n).collect()
    }

    #[test]
    fn single_item_batch_has_zero_loss() {
        let t = vec![unit(&[0.3, 0.4, -0.2])];
        let m = vec![unit(&[-0.1, 0.9, 0.5])];
        for kind in [LossKind::OneSided, LossKind::Symmetric] {
            let out = contrastive_loss(&t, &m, 0.07, kind).unwrap();
            assert_eq!(out.loss, 0.0);
            assert!(out.d_tasks[0].iter().all(|g| g.abs() < 1e-12));
        }
    }

    #[test]
    fn equal_scores_give_ln2() {
        // every pairwise score is 0.6
        let t = vec![vec![1.0, 0.0], vec![1.0, 0.0]];
        let m = vec![vec![0.6, 0.8], vec![0.6, -0.8]];
        for kind in [LossKind::OneSided, LossKind::Symmetric] {
            let out = contrastive_loss(&t, &m, 1.0, kind).unwrap();
            assert!((out.loss - core::f64::consts::LN_2).abs() < 1e-12);
        }
    }

    #[test]
    fn dominant_positive_drives_loss_to_zero() {
        let t = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        let m = t.clone();
        let out = contrastive_loss(&t, &m, 0.001, LossKind::Symmetric).unwrap();
        assert!(out.loss < 1e-100, "loss {}", out.loss);
        assert!(out.loss >= 0.0);
    }

    #[test]
    fn nonpositive_temperature_is_rejected() {
        let t = vec![vec![1.0]];
        assert_eq!(
            contrastive_loss(&t, &t, 0.0, LossKind::Symmetric),
            Err(TrainError::Temperature(0.0))
        );
    }

    #[test]
    fn shared_positive_still_counts_as_negative() {
        // Tasks 0 and 1 have the same positive server vector. For task 0 the
        // denominator holds both copies, so its loss is ln 2 even with a
        // perfect score: the collision is not deduplicated.
        let t = vec![vec![1.0, 0.0], vec![1.0, 0.0]];
        let m = vec![vec![1.0, 0.0], vec![1.0, 0.0]];
        let out = contrastive_loss(&t, &m, 0.5, LossKind::OneSided).unwrap();
        assert!((out.loss - core::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn loss_gradient_matches_finite_differences() {
        let t = vec![unit(&[0.3, 0.4, -0.2]), unit(&[-0.5, 0.1, 0.7]), unit(&[0.2, -0.9, 0.1])];
        let m = vec![unit(&[0.1, 0.5, -0.1]), unit(&[-0.4, 0.3, 0.6]), unit(&[0.9, 0.1, 0.0])];
        for kind in [LossKind::OneSided, LossKind::Symmetric, LossKind::Bce] {
            let out = contrastive_loss(&t, &m, 0.2, kind).unwrap();
            for i in 0..3 {
                for k in 0..3 {
                    let eps = 1e-6;
                    let mut tp = t.clone();
                    tp[i][k] += eps;
                    let mut tm = t.clone();
                    tm[i][k] -= eps;
                    let num = (contrastive_loss(&tp, &m, 0.2, kind).unwrap().loss
                        - contrastive_loss(&tm, &m, 0.2, kind).unwrap().loss)
                        / (2.0 * eps);
                    assert!((num - out.d_tasks[i][k]).abs() < 1e-7, "{kind:?} task {i},{k}");
                    let mut mp = m.clone();
                    mp[i][k] += eps;
                    let mut mm = m.clone();
                    mm[i][k] -= eps;
                    let num = (contrastive_loss(&t, &mp, 0.2, kind).unwrap().loss
                        - contrastive_loss(&t, &mm, 0.2, kind).unwrap().loss)
                        / (2.0 * eps);
                    assert!((num - out.d_servers[i][k]).abs() < 1e-7, "{kind:?} server {i},{k}");
                }
            }
        }
    }

    #[test]
    fn adamw_zero_gradient_no_decay_is_identity() {
        let mut p = vec![0.5, -1.0, 2.0];
        let mut opt = AdamW::new(1e-3, 0.0, 0.9, 0.999, 1e-8);
        assert!(opt.step(&mut [p.as_mut_slice()], &[&[0.0, 0.0, 0.0]]));
        assert_eq!(p, vec![0.5, -1.0, 2.0]);
    }

    #[test]
    fn adamw_first_step_magnitude_is_lr() {
        let g = [0.37, -2.5, 1e-2];
        let mut p = vec![0.0; 3];
        let mut opt = AdamW::new(1e-3, 0.0, 0.9, 0.999, 1e-8);
        opt.step(&mut [p.as_mut_slice()], &[&g]);
        // m̂ = g, v̂ = g², update = lr·g/(|g| + eps)
        for (x, gi) in p.iter().zip(g) {
            let expected = -1e-3 * gi / (gi.abs() + 1e-8);
            assert!((x - expected).abs() < 1e-15);
            assert!((x.abs() - 1e-3).abs() < 1e-8);
        }
    }

    #[test]
    fn adamw_decay_is_decoupled() {
        let mut p = vec![2.0, -4.0];
        let mut opt = AdamW::new(0.1, 0.5, 0.9, 0.999, 1e-8);
        opt.step(&mut [p.as_mut_slice()], &[&[0.0, 0.0]]);
        assert!((p[0] - 2.0 * 0.95).abs() < 1e-15);
        assert!((p[1] + 4.0 * 0.95).abs() < 1e-15);
    }

    #[test]
    fn adamw_skips_non_finite() {
        let mut p = vec![1.0];
        let mut opt = AdamW::new(0.1, 0.1, 0.9, 0.999, 1e-8);
        assert!(!opt.step(&mut [p.as_mut_slice()], &[&[f64::NAN]]));
        assert_eq!(p, vec![1.0]);
        assert_eq!(opt.steps(), 0);
    }

    fn labels(n: usize, per: usize) -> InteractionSet {
        InteractionSet::new(
            (0..n)
                .map(|i| Interaction {
                    task_id: format!("t{i}"),
                    mcp_ids: (0..per).map(|j| format!("m{}", i * per + j)).collect(),
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn single_positive_is_always_chosen() {
        let l = labels(3, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..10 {
            let b = sample_batch(&["t1"], &l, &mut rng);
            assert_eq!(b.pairs, vec![("t1".into(), "m1".into())]);
        }
    }

    #[test]
    fn batch_has_distinct_tasks_and_valid_positives() {
        let l = labels(4, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let b = sample_batch(&["t0", "t1", "t2", "t3", "t1"], &l, &mut rng);
        assert_eq!(b.len(), 4);
        let ids: alloc::collections::BTreeSet<_> = b.pairs.iter().map(|(t, _)| t.clone()).collect();
        assert_eq!(ids.len(), 4);
        for (t, m) in &b.pairs {
            assert!(l.is_relevant(t, m));
        }
    }

    #[test]
    fn unlabeled_tasks_are_skipped() {
        let l = labels(2, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let b = sample_batch(&["t0", "nope"], &l, &mut rng);
        assert_eq!(b.len(), 1);
    }

    #[test]
    fn batch_sequence_is_seeded() {
        let l = labels(20, 4);
        let tasks: Vec<String> = (0..20).map(|i| format!("t{i}")).collect();
        let run = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..3).map(|_| epoch_batches(&tasks, &l, 6, &mut rng)).collect::<Vec<_>>()
        };
        assert_eq!(run(11), run(11));
        assert_ne!(run(11), run(12));
    }
}
