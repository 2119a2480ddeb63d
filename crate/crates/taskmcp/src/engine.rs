//! Loaded artifacts bundled into one shareable recommendation engine.

use std::collections::{BTreeSet, HashMap};
use std::path::PathBuf;

use taskmcp_core::encoder::{encode_corpus, Embedding, SemanticModel};
use taskmcp_core::recommend::{RecommendError, Recommendation};
use taskmcp_core::rerank::RerankBackend;
use taskmcp_core::{
    CompatRules, Compatibility, DenseEmbedding, EmbeddingIndex, McpRecord, RecommendConfig, Recommender, Reranker,
    SparseCosineModel, SparseVector, StructuralScorer, TaskQuery, TaskRecord, Taxonomy, TwoTowerModel, Vocabulary,
};

use crate::artifacts::{load_checkpoint, load_index, load_vocab, sha256_hex, IndexCodec};
use crate::data::{load_rules, load_taxonomy, read_jsonl, DataError};

/// How the semantic score is computed.
pub enum Pipeline {
    Dense(Recommender<TwoTowerModel, StructuralScorer>),
    /// Cosine over normalized lexical vectors, without the learned towers.
    Sparse(Recommender<SparseCosineModel, StructuralScorer>),
}

impl Pipeline {
    pub fn recommend(
        &self,
        task: &TaskQuery,
        config: &RecommendConfig,
        reranker: Reranker<'_>,
    ) -> Result<Recommendation, RecommendError> {
        match self {
            Pipeline::Dense(r) => r.recommend(task, config, reranker),
            Pipeline::Sparse(r) => r.recommend(task, config, reranker),
        }
    }

    pub fn snapshot_id(&self) -> &str {
        match self {
            Pipeline::Dense(r) => r.index.snapshot_id(),
            Pipeline::Sparse(r) => r.index.snapshot_id(),
        }
    }

    pub fn servers(&self) -> &[McpRecord] {
        match self {
            Pipeline::Dense(r) => &r.servers,
            Pipeline::Sparse(r) => &r.servers,
        }
    }

    pub fn vocab(&self) -> &Vocabulary {
        match self {
            Pipeline::Dense(r) => &r.model.vocab,
            Pipeline::Sparse(r) => &r.model.vocab,
        }
    }

    pub fn structural(&self) -> &StructuralScorer {
        match self {
            Pipeline::Dense(r) => &r.structural,
            Pipeline::Sparse(r) => &r.structural,
        }
    }
}

pub type SharedBackend = Box<dyn RerankBackend + Send + Sync>;

#[derive(Default)]
pub enum RerankChoice {
    #[default]
    None,
    Builtin,
    External(SharedBackend),
}

impl RerankChoice {
    pub fn reranker(&self) -> Reranker<'_> {
        match self {
            RerankChoice::None => Reranker::None,
            RerankChoice::Builtin => Reranker::Builtin,
            RerankChoice::External(b) => Reranker::Backend(b.as_ref()),
        }
    }

    pub fn name(&self) -> &str {
        match self {
            RerankChoice::None => "none",
            RerankChoice::Builtin => "builtin",
            RerankChoice::External(b) => b.name(),
        }
    }
}

impl std::fmt::Debug for RerankChoice {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Artifact locations. `checkpoint: None` selects the sparse pipeline;
/// `index: None` embeds the corpus at load time.
#[derive(Debug, Clone, Default)]
pub struct EnginePaths {
    pub mcp: PathBuf,
    pub vocab: PathBuf,
    pub checkpoint: Option<PathBuf>,
    pub index: Option<PathBuf>,
    pub taxonomy: Option<PathBuf>,
    pub rules: Option<PathBuf>,
    /// Optional task corpus; only its themes are used (for request parsing).
    pub tasks: Option<PathBuf>,
}

pub struct Engine {
    pub pipeline: Pipeline,
    pub config: RecommendConfig,
    pub rerank: RerankChoice,
    /// Known theme names, case-folded.
    pub themes: Vec<String>,
    positions: HashMap<String, usize>,
}

impl std::fmt::Debug for Engine {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Engine")
            .field("snapshot", &self.pipeline.snapshot_id())
            .field("servers", &self.pipeline.servers().len())
            .field("config", &self.config)
            .field("rerank", &self.rerank)
            .finish()
    }
}

fn checked_index<E: IndexCodec + Embedding, M: SemanticModel<Embedding = E>>(
    model: &M,
    servers: &[McpRecord],
    index_path: Option<&PathBuf>,
    source: &str,
) -> Result<EmbeddingIndex<E>, DataError> {
    let Some(path) = index_path else {
        return Ok(encode_corpus(model, servers));
    };
    let (header, index) = load_index::<E>(path)?;
    if header.source != source {
        return Err(DataError::invalid(path, "index was built from a different model"));
    }
    let ids: Vec<&str> = servers.iter().map(|s| s.id.as_str()).collect();
    if index.ids().iter().map(String::as_str).ne(ids.iter().copied()) {
        return Err(DataError::invalid(path, "index does not cover the server corpus in order"));
    }
    Ok(index)
}

/// Fingerprint tying an index to the model that produced it.
pub fn dense_source(checkpoint_bytes: &[u8]) -> String {
    sha256_hex(checkpoint_bytes)
}

impl Engine {
    pub fn new(pipeline: Pipeline, config: RecommendConfig, rerank: RerankChoice, themes: Vec<String>) -> Self {
        let positions = pipeline.servers().iter().enumerate().map(|(i, s)| (s.id.clone(), i)).collect();
        Engine { pipeline, config, rerank, themes, positions }
    }

    pub fn load(
        paths: &EnginePaths,
        config: RecommendConfig,
        rerank: RerankChoice,
    ) -> Result<Self, DataError> {
        let corpus = crate::data::load_server_corpus(&paths.mcp)?;
        let servers = corpus.servers().to_vec();
        let vocab = load_vocab(&paths.vocab)?;
        let taxonomy = match &paths.taxonomy {
            Some(p) => load_taxonomy(p)?,
            None => crate::data::taxonomy_from_corpus(&corpus),
        };
        let rules = match &paths.rules {
            Some(p) => load_rules(p)?,
            None => CompatRules::default(),
        };
        let mut themes: BTreeSet<String> = rules.theme_systems.keys().cloned().collect();
        if let Some(p) = &paths.tasks {
            let tasks: Vec<TaskRecord> = read_jsonl(p)?;
            themes.extend(tasks.iter().map(|t| t.normalized().theme).filter(|t| !t.is_empty()));
        }
        let structural = StructuralScorer::new(taxonomy, rules);
        let pipeline = match &paths.checkpoint {
            Some(cp) => {
                let bytes = std::fs::read(cp).map_err(|e| DataError::io(cp, e))?;
                let ckpt = load_checkpoint(cp, &vocab)?;
                let model = TwoTowerModel { vocab, encoder: ckpt.encoder };
                let index: EmbeddingIndex<DenseEmbedding> =
                    checked_index(&model, &servers, paths.index.as_ref(), &dense_source(&bytes))?;
                Pipeline::Dense(Recommender::new(model, index, servers, structural).expect("index built from servers"))
            }
            None => {
                let source = vocab.fingerprint();
                let model = SparseCosineModel { vocab };
                let index: EmbeddingIndex<SparseVector> =
                    checked_index(&model, &servers, paths.index.as_ref(), &source)?;
                Pipeline::Sparse(Recommender::new(model, index, servers, structural).expect("index built from servers"))
            }
        };
        Ok(Engine::new(pipeline, config, rerank, themes.into_iter().collect()))
    }

    /// Recommend with the engine's configured reranker; `k` overrides the
    /// configured list length.
    pub fn recommend(&self, task: &TaskQuery, k: Option<usize>) -> Result<Recommendation, RecommendError> {
        self.recommend_with(task, k, self.rerank.reranker())
    }

    pub fn recommend_with(
        &self,
        task: &TaskQuery,
        k: Option<usize>,
        reranker: Reranker<'_>,
    ) -> Result<Recommendation, RecommendError> {
        let config = RecommendConfig { k: k.unwrap_or(self.config.k), ..self.config };
        self.pipeline.recommend(task, &config, reranker)
    }

    pub fn server(&self, id: &str) -> Option<&McpRecord> {
        self.positions.get(id).map(|&i| &self.pipeline.servers()[i])
    }

    pub fn servers(&self) -> &[McpRecord] {
        self.pipeline.servers()
    }

    pub fn snapshot_id(&self) -> &str {
        self.pipeline.snapshot_id()
    }

    pub fn taxonomy(&self) -> &Taxonomy {
        &self.pipeline.structural().taxonomy
    }

    /// Whether any token of `text` is in the vocabulary.
    pub fn understands(&self, text: &str) -> bool {
        !self.pipeline.vocab().vectorize(text).is_zero()
    }

    pub fn structural_features(&self, server: &McpRecord, task: &TaskQuery) -> taskmcp_core::structural::CompatFeatures {
        self.pipeline.structural().features(server, task)
    }
}

/// Sparse-pipeline engine over in-memory records.
pub fn engine_from_records(
    servers: Vec<McpRecord>,
    taxonomy: Taxonomy,
    rules: CompatRules,
    vocab: Vocabulary,
    config: RecommendConfig,
    rerank: RerankChoice,
) -> Engine {
    let mut themes: Vec<String> = rules.theme_systems.keys().cloned().collect();
    themes.sort();
    let servers: Vec<McpRecord> = servers.iter().map(McpRecord::normalized).collect();
    let model = SparseCosineModel { vocab };
    let index = encode_corpus(&model, &servers);
    let structural = StructuralScorer::new(taxonomy, rules);
    let pipeline = Pipeline::Sparse(Recommender::new(model, index, servers, structural).expect("index built from servers"));
    Engine::new(pipeline, config, rerank, themes)
}
