//! End-to-end inference: fused ranking, anchors, centroid expansion and
//! re-ranking.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::corpus::{McpRecord, TaskRecord};
use crate::encoder::{Embedding, EmbeddingIndex, SemanticModel};
use crate::metrics::Ranker;
use crate::rerank::{CandidateCard, RerankRequest, RerankStatus, Reranker, Violation};
use crate::structural::{Compatibility, FusionWeights, StructuralError, TaskQuery};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum RecommendError {
    #[error("K = {k} exceeds the pool size K2 = {k2}")]
    PoolTooSmall { k: usize, k2: usize },
    #[error("invalid config: {0}")]
    Config(&'static str),
    #[error(transparent)]
    Weights(#[from] StructuralError),
    #[error("index and server list disagree at position {0}")]
    IndexMismatch(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RecommendConfig {
    pub k1: usize,
    pub k2: usize,
    pub k: usize,
    pub weights: FusionWeights,
}

impl Default for RecommendConfig {
    fn default() -> Self {
        RecommendConfig { k1: 20, k2: 50, k: 10, weights: FusionWeights::default() }
    }
}

impl RecommendConfig {
    pub fn validate(&self) -> Result<(), RecommendError> {
        if self.k1 == 0 {
            return Err(RecommendError::Config("K1 must be at least 1"));
        }
        if self.k == 0 {
            return Err(RecommendError::Config("K must be at least 1"));
        }
        if self.k1 > self.k2 {
            return Err(RecommendError::Config("K1 must not exceed K2"));
        }
        if self.k > self.k2 {
            return Err(RecommendError::PoolTooSmall { k: self.k, k2: self.k2 });
        }
        self.weights.validate()?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StageScores {
    pub semantic: f64,
    pub structural: f64,
    pub fused: f64,
    /// Dot product with the centroid; absent when no centroid was formed.
    pub centroid: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Anchor,
    Expansion,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolEntry {
    pub id: String,
    pub provenance: Provenance,
    pub scores: StageScores,
}

/// Anchors (by fused score) followed by the centroid expansion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidatePool {
    pub anchors: Vec<PoolEntry>,
    pub expansion: Vec<PoolEntry>,
}

impl CandidatePool {
    pub fn len(&self) -> usize {
        self.anchors.len() + self.expansion.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn entries(&self) -> impl Iterator<Item = &PoolEntry> {
        self.anchors.iter().chain(&self.expansion)
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.entries().map(|e| e.id.as_str())
    }

    pub fn get(&self, id: &str) -> Option<&PoolEntry> {
        self.entries().find(|e| e.id == id)
    }

    /// Pool members by fused score descending, ties by ascending id.
    pub fn fused_order(&self) -> Vec<&PoolEntry> {
        let mut v: Vec<&PoolEntry> = self.entries().collect();
        v.sort_by(|a, b| by_score_then_id((a.scores.fused, &a.id), (b.scores.fused, &b.id)));
        v
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedItem {
    pub id: String,
    /// 1-based.
    pub rank: usize,
    pub provenance: Provenance,
    pub scores: StageScores,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedList {
    pub items: Vec<RankedItem>,
    pub status: RerankStatus,
    pub reason: Option<Violation>,
    pub explanation: Option<String>,
}

impl RankedList {
    pub fn ids(&self) -> Vec<String> {
        self.items.iter().map(|i| i.id.clone()).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Recommendation {
    pub list: RankedList,
    pub pool: CandidatePool,
}

fn by_score_then_id(a: (f64, &str), b: (f64, &str)) -> Ordering {
    b.0.partial_cmp(&a.0).unwrap_or(Ordering::Equal).then_with(|| a.1.cmp(b.1))
}

/// Positions of `scores` sorted descending, ties broken by ascending id.
pub fn rank_fused<S: AsRef<str>>(ids: &[S], scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..ids.len()).collect();
    order.sort_by(|&a, &b| by_score_then_id((scores[a], ids[a].as_ref()), (scores[b], ids[b].as_ref())));
    order
}

/// Prefix of a ranking of length `min(k1, M)`.
pub fn anchor(ranked: &[usize], k1: usize) -> &[usize] {
    &ranked[..k1.min(ranked.len())]
}

/// `(query + Σ anchors) / (|anchors| + 1)`; with no anchors the query itself.
pub fn centroid<E: Embedding>(query: &E, anchors: &[&E]) -> E {
    if anchors.is_empty() {
        log::warn!("empty anchor set; using the task embedding as the centroid");
        return query.clone();
    }
    E::centroid(query, anchors)
}

/// Top `count` positions by `sims`, skipping `exclude`, same tie rule as
/// [`rank_fused`].
pub fn expand<S: AsRef<str>>(ids: &[S], sims: &[f64], exclude: &[usize], count: usize) -> Vec<usize> {
    let excluded: BTreeSet<usize> = exclude.iter().copied().collect();
    let mut rest: Vec<usize> = (0..ids.len()).filter(|i| !excluded.contains(i)).collect();
    rest.sort_by(|&a, &b| by_score_then_id((sims[a], ids[a].as_ref()), (sims[b], ids[b].as_ref())));
    rest.truncate(count);
    rest
}

/// Constraint summary handed to the re-ranker.
pub fn constraint_summary(task: &TaskQuery) -> String {
    let mut parts = Vec::new();
    let mut push = |k: &str, v: &str| {
        if !v.is_empty() {
            parts.push(format!("{k}={v}"));
        }
    };
    push("category", &task.category);
    push("subcategory", &task.subcategory);
    push("language", &task.language);
    push("theme", &task.theme);
    if let Some(s) = task.system {
        push("system", s.as_str());
    }
    parts.join("; ")
}

/// Frozen server corpus with its embedding index and scoring components.
#[derive(Debug)]
pub struct Recommender<M: SemanticModel, C> {
    pub model: M,
    pub index: EmbeddingIndex<M::Embedding>,
    pub servers: Vec<McpRecord>,
    pub structural: C,
}

impl<M: SemanticModel, C: Compatibility> Recommender<M, C> {
    /// `index` must list `servers` in the same order.
    pub fn new(
        model: M,
        index: EmbeddingIndex<M::Embedding>,
        servers: Vec<McpRecord>,
        structural: C,
    ) -> Result<Self, RecommendError> {
        if index.len() != servers.len() {
            return Err(RecommendError::IndexMismatch(index.len().min(servers.len())));
        }
        if let Some(i) = index.ids().iter().zip(&servers).position(|(a, s)| *a != s.id) {
            return Err(RecommendError::IndexMismatch(i));
        }
        Ok(Recommender { model, index, servers, structural })
    }

    /// Build the candidate pool without re-ranking.
    pub fn candidates(&self, task: &TaskQuery, config: &RecommendConfig) -> Result<CandidatePool, RecommendError> {
        config.validate()?;
        let ids = self.index.ids();
        let w = &config.weights;
        let z_t = self.model.embed_task(&task.text);
        let semantic = self.index.scan(&z_t);
        let structural: Vec<f64> = self
            .servers
            .iter()
            .map(|m| w.structural_score(&self.structural.features(m, task)))
            .collect();
        let fused: Vec<f64> = semantic.iter().zip(&structural).map(|(s, t)| w.fuse(*s, *t)).collect();

        let ranked = rank_fused(ids, &fused);
        let anchors = anchor(&ranked, config.k1);
        let anchor_vecs: Vec<&M::Embedding> = anchors.iter().map(|&i| self.index.get(i)).collect();
        let c = centroid(&z_t, &anchor_vecs);
        let sims = self.index.scan(&c);
        let expansion = expand(ids, &sims, anchors, config.k2 - anchors.len().min(config.k2));

        let entry = |i: usize, provenance| PoolEntry {
            id: ids[i].clone(),
            provenance,
            scores: StageScores {
                semantic: semantic[i],
                structural: structural[i],
                fused: fused[i],
                centroid: Some(sims[i]),
            },
        };
        Ok(CandidatePool {
            anchors: anchors.iter().map(|&i| entry(i, Provenance::Anchor)).collect(),
            expansion: expansion.iter().map(|&i| entry(i, Provenance::Expansion)).collect(),
        })
    }

    pub fn recommend(
        &self,
        task: &TaskQuery,
        config: &RecommendConfig,
        reranker: Reranker<'_>,
    ) -> Result<Recommendation, RecommendError> {
        let pool = self.candidates(task, config)?;
        let order = pool.fused_order();
        let cards = order
            .iter()
            .map(|e| {
                let pos = self.index.ids().iter().position(|id| *id == e.id).expect("pool ids come from the index");
                CandidateCard::from_record(&self.servers[pos])
            })
            .collect();
        let request = RerankRequest {
            task_text: task.text.clone(),
            constraints: constraint_summary(task),
            cards,
            k: config.k.min(pool.len()),
        };
        let result = reranker.rerank(&request);
        let items = result
            .ids
            .iter()
            .enumerate()
            .map(|(i, id)| {
                let e = pool.get(id).expect("validated ids are pool members");
                RankedItem { id: id.clone(), rank: i + 1, provenance: e.provenance, scores: e.scores }
            })
            .collect();
        let list = RankedList { items, status: result.status, reason: result.reason, explanation: result.explanation };
        Ok(Recommendation { list, pool })
    }

    /// Adapter for the evaluation harness; the depth overrides `config.k`.
    pub fn ranker<'a>(&'a self, config: RecommendConfig, reranker: Reranker<'a>) -> PipelineRanker<'a, M, C> {
        PipelineRanker { recommender: self, config, reranker }
    }
}

pub struct PipelineRanker<'a, M: SemanticModel, C> {
    recommender: &'a Recommender<M, C>,
    config: RecommendConfig,
    reranker: Reranker<'a>,
}

impl<M: SemanticModel, C: Compatibility> Ranker for PipelineRanker<'_, M, C> {
    fn rank(&self, task: &TaskRecord, depth: usize) -> Vec<String> {
        let config = RecommendConfig { k: depth, ..self.config };
        match self.recommender.recommend(&TaskQuery::from_task(task), &config, self.reranker) {
            Ok(r) => r.list.ids(),
            Err(e) => {
                log::error!("recommend failed for {}: {e}", task.id);
                Vec::new()
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::System;
    use crate::encoder::DenseEmbedding;
    use crate::structural::CompatFeatures;
    use alloc::string::ToString;
    use alloc::vec;
    use core::cell::Cell;

    fn ids(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn rank_fused_examples() {
        let i = ids(&["m1", "m2", "m3"]);
        assert_eq!(rank_fused(&i, &[0.9, 0.5, 0.7]), vec![0, 2, 1]);
        let i = ids(&["b", "c", "a"]);
        assert_eq!(rank_fused(&i, &[0.3, 0.3, 0.3]), vec![2, 0, 1]);
        assert_eq!(rank_fused(&ids(&["x"]), &[0.1]), vec![0]);
        assert!(rank_fused::<String>(&[], &[]).is_empty());
    }

    #[test]
    fn anchor_examples() {
        let r = [0, 2, 1];
        assert_eq!(anchor(&r, 2), &[0, 2]);
        assert_eq!(anchor(&r, 9), &[0, 2, 1]);
        assert_eq!(anchor(&r, 1), &[0]);
    }

    fn d(v: &[f64]) -> DenseEmbedding {
        DenseEmbedding::new(v.to_vec())
    }

    #[test]
    fn centroid_examples() {
        let c = centroid(&d(&[1.0, 0.0]), &[&d(&[0.0, 1.0])]);
        assert_eq!(c.values, vec![0.5, 0.5]);
        let t = d(&[0.6, 0.8]);
        let fixed = centroid(&t, &[&t.clone(), &t.clone()]);
        assert!(fixed.values.iter().zip(&t.values).all(|(a, b)| (a - b).abs() < 1e-15));
        // anchors summing to -2·t
        let a = [d(&[-1.0, 0.0]), d(&[0.0, -1.0]), d(&[-0.2, -0.6])];
        let c = centroid(&t, &[&a[0], &a[1], &a[2]]);
        assert!((c.values[0] - (0.6 - 1.2) / 4.0).abs() < 1e-12);
        assert!((c.values[1] - (0.8 - 1.6) / 4.0).abs() < 1e-12);
        assert_eq!(centroid(&t, &[]).values, t.values);
    }

    #[test]
    fn expand_examples() {
        let i = ids(&["a", "b", "c", "d"]);
        let sims = [0.9, 0.1, 0.5, 0.7];
        assert!(expand(&i, &sims, &[0], 0).is_empty());
        assert_eq!(expand(&i, &sims, &[0], 2), vec![3, 2]);
        assert_eq!(expand(&i, &sims, &[0, 3], 5), vec![2, 1]);
    }

    struct Plain;

    impl Compatibility for Plain {
        fn features(&self, _: &McpRecord, _: &TaskQuery) -> CompatFeatures {
            CompatFeatures { category: 1.0, language: 1.0, theme: 1.0 }
        }
    }

    struct Axis {
        calls: Cell<usize>,
    }

    impl SemanticModel for Axis {
        type Embedding = DenseEmbedding;

        fn embed_task(&self, text: &str) -> DenseEmbedding {
            self.calls.set(self.calls.get() + 1);
            self.embed_server(text)
        }

        fn embed_server(&self, text: &str) -> DenseEmbedding {
            let angle: f64 = text.trim().parse().unwrap_or(0.0);
            d(&[libm::cos(angle), libm::sin(angle)])
        }
    }

    fn server(id: &str, angle: f64) -> McpRecord {
        McpRecord {
            id: id.into(),
            name: format!("{angle}"),
            description: String::new(),
            tools: vec![],
            category: String::new(),
            subcategory: String::new(),
            language: String::new(),
            system: System::Any,
            license: String::new(),
            official: false,
            repo_url: String::new(),
        }
    }

    fn fixture() -> Recommender<Axis, Plain> {
        let servers: Vec<McpRecord> = (0..12).map(|i| server(&format!("m{i:02}"), i as f64 * 0.25)).collect();
        let model = Axis { calls: Cell::new(0) };
        let vecs = servers.iter().map(|s| model.embed_server(&s.name)).collect();
        let index = EmbeddingIndex::new(servers.iter().map(|s| s.id.clone()).collect(), vecs).unwrap();
        Recommender::new(model, index, servers, Plain).unwrap()
    }

    #[test]
    fn pool_shape_and_complexity() {
        let r = fixture();
        let task = TaskQuery { text: "0.1".into(), ..Default::default() };
        let cfg = RecommendConfig { k1: 3, k2: 7, k: 5, weights: FusionWeights::default() };
        let out = r.recommend(&task, &cfg, Reranker::None).unwrap();
        assert_eq!(r.model.calls.get(), 1);
        assert_eq!(r.index.scan_count(), 2);
        assert_eq!(out.pool.anchors.len(), 3);
        assert_eq!(out.pool.len(), 7);
        assert_eq!(out.list.items.len(), 5);
        assert_eq!(out.list.ids(), ids(&["m00", "m01", "m02", "m03", "m04"]));
        let anchors: Vec<&str> = out.pool.anchors.iter().map(|e| e.id.as_str()).collect();
        assert!(out.pool.expansion.iter().all(|e| !anchors.contains(&e.id.as_str())));
    }

    #[test]
    fn k_above_k2_rejected() {
        let r = fixture();
        let cfg = RecommendConfig { k1: 2, k2: 4, k: 5, weights: FusionWeights::default() };
        assert!(matches!(
            r.recommend(&TaskQuery::default(), &cfg, Reranker::None),
            Err(RecommendError::PoolTooSmall { k: 5, k2: 4 })
        ));
    }

    #[test]
    fn small_corpus_saturates() {
        let r = fixture();
        let cfg = RecommendConfig { k1: 20, k2: 50, k: 10, weights: FusionWeights::default() };
        let out = r.recommend(&TaskQuery::default(), &cfg, Reranker::Builtin).unwrap();
        assert_eq!(out.pool.len(), 12);
        assert!(out.pool.expansion.is_empty());
        assert_eq!(out.list.items.len(), 10);
    }

    #[test]
    fn deterministic() {
        let r = fixture();
        let task = TaskQuery { text: "1.3".into(), ..Default::default() };
        let cfg = RecommendConfig { k1: 2, k2: 6, k: 4, weights: FusionWeights::default() };
        let a = r.recommend(&task, &cfg, Reranker::Builtin).unwrap();
        let b = r.recommend(&task, &cfg, Reranker::Builtin).unwrap();
        assert_eq!(a, b);
    }
}
