//! Task-to-tool-server recommendation core.
//!
//! Given a development task (free text plus a few structured attributes) this
//! crate ranks candidate tool servers from a corpus. Ranking happens in stages:
//!
//! 1. [`lexical`] turns task and server text into L2-normalized sparse vectors
//!    over a shared vocabulary.
//! 2. [`encoder`] projects those vectors through two MLP towers into a shared
//!    unit-norm embedding space; [`train`] fits the towers with an in-batch
//!    contrastive objective and AdamW.
//! 3. [`structural`] scores taxonomy, language and theme/system compatibility
//!    and fuses it with the semantic score.
//! 4. [`recommend`] selects an anchor set, expands it around the centroid of
//!    task and anchor embeddings, and hands the pool to [`rerank`], which
//!    accepts a reordered list only when it satisfies strict constraints.
//!
//! [`metrics`] implements the Recall/Precision/F1/NDCG@k evaluation harness.
//!
//! The crate is `no_std` and only needs `alloc`. File formats, the CLI and the
//! HTTP service live in the `taskmcp` crate.

#![no_std]
#![forbid(unsafe_code)]

extern crate alloc;

#[cfg(any(test, feature = "std"))]
extern crate std;

pub mod corpus;
pub mod encoder;
pub mod lexical;
pub mod metrics;
pub mod recommend;
pub mod rerank;
pub mod structural;
pub mod text;
pub mod train;

pub(crate) mod math;

/// Result of an L2 normalization. A zero input stays zero and is flagged
/// `degenerate` instead of producing NaNs.
#[derive(Debug, Clone, PartialEq)]
pub struct Normalized<V> {
    pub vector: V,
    pub degenerate: bool,
}

pub use corpus::{Corpus, CorpusError, DatasetSplit, InteractionSet, McpRecord, System, TaskRecord};
pub use encoder::{DenseEmbedding, DualEncoder, EmbeddingIndex, SemanticModel, SparseCosineModel, Tower, TowerConfig, TwoTowerModel};
pub use lexical::{SparseVector, Vocabulary, VocabConfig};
pub use metrics::{EvalReport, Ranker};
pub use recommend::{CandidatePool, RankedList, RecommendConfig, Recommendation, Recommender};
pub use rerank::{RerankBackend, RerankResult, RerankStatus, Reranker};
pub use structural::{CompatRules, Compatibility, FusionWeights, StructuralScorer, TaskQuery, Taxonomy};
pub use train::{TrainConfig, Trainer};
