//! Command-line entry points.
//!
//! Exit codes: 0 success, 1 usage, 2 data error, 3 runtime failure.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::anyhow;
use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::Serialize;
use taskmcp_core::metrics::{evaluate_rankings, Judged};
use taskmcp_core::recommend::{Provenance, RecommendError, StageScores};
use taskmcp_core::corpus::UnifiedText as _;
use taskmcp_core::train::LossKind;
use taskmcp_core::{
    Corpus, DatasetSplit, FusionWeights, RecommendConfig, SparseCosineModel, System, TaskQuery, TaskRecord,
    TowerConfig, TrainConfig, Trainer, TwoTowerModel, VocabConfig, Vocabulary,
};

use crate::artifacts::{
    load_checkpoint, load_split, load_vocab, save_checkpoint, save_index, save_report, save_split, save_train_log,
    save_vocab, Checkpoint, CheckpointHeader,
};
use crate::data::{load_corpus, read_jsonl, taxonomy_offenders, write_jsonl, CorpusPaths, DataError};
use crate::engine::{dense_source, Engine, EnginePaths, RerankChoice};
use crate::external::{ExternalBackend, ExternalConfig};
use crate::service::{serve, AppState, ServiceConfig, DEFAULT_SERVICE_K};

pub const VOCAB_FILE: &str = "vocab.tsv";
pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const INDEX_FILE: &str = "index.bin";
pub const SPLIT_FILE: &str = "split.json";
pub const TRAIN_LOG_FILE: &str = "train_log.jsonl";
pub const RECOMMENDATIONS_FILE: &str = "recommendations.jsonl";
pub const REPORT_STEM: &str = "eval_report";

#[derive(Debug, Parser)]
#[command(name = "taskmcp", version, about = "Recommend tool servers for development tasks")]
pub struct Cli {
    /// Directory holding mcp.jsonl, tasks.jsonl, interactions.jsonl and
    /// optionally taxonomy.json and rules.json.
    #[arg(long, global = true, default_value = "data")]
    pub data: PathBuf,
    /// Directory read for vocabulary, checkpoint, index and split.
    #[arg(long, global = true, default_value = "artifacts")]
    pub artifacts: PathBuf,
    /// Output directory; defaults to the artifacts directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build the shared vocabulary and the train/valid/test split.
    BuildVocab(VocabArgs),
    /// Train the dual-tower encoder.
    Train(TrainArgs),
    /// Embed the server corpus into an index file.
    Index(IndexArgs),
    /// Rank servers for one task or a file of tasks.
    Recommend(RecommendArgs),
    /// Score a ranker on a split.
    Evaluate(EvaluateArgs),
    /// Run the HTTP service.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
pub struct VocabArgs {
    #[arg(long, default_value_t = 1)]
    pub min_doc_freq: usize,
    #[arg(long, default_value_t = 1.0)]
    pub max_doc_freq_ratio: f64,
    /// Raw term frequencies without idf.
    #[arg(long)]
    pub no_idf: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum LossArg {
    /// Symmetric in-batch contrastive loss.
    Contrastive,
    /// Task-to-server direction only.
    OneSided,
    /// Point-wise binary cross-entropy.
    Bce,
}

impl From<LossArg> for LossKind {
    fn from(l: LossArg) -> Self {
        match l {
            LossArg::Contrastive => LossKind::Symmetric,
            LossArg::OneSided => LossKind::OneSided,
            LossArg::Bce => LossKind::Bce,
        }
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long, default_value_t = 200)]
    pub epochs: usize,
    #[arg(long, default_value_t = 256)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 0.01)]
    pub weight_decay: f64,
    #[arg(long, default_value_t = 0.07)]
    pub temperature: f64,
    #[arg(long, default_value_t = 512)]
    pub hidden: usize,
    #[arg(long, default_value_t = 256)]
    pub output_dim: usize,
    #[arg(long, default_value_t = 3)]
    pub layers: usize,
    #[arg(long, default_value_t = 0.2)]
    pub dropout: f64,
    #[arg(long, value_enum, default_value = "contrastive")]
    pub loss: LossArg,
    #[arg(long, default_value_t = 1)]
    pub eval_every: usize,
}

#[derive(Debug, Args)]
pub struct IndexArgs {
    /// Index normalized lexical vectors instead of the learned towers.
    #[arg(long)]
    pub no_two_tower: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum RerankerArg {
    None,
    Builtin,
    External,
}

#[derive(Debug, Clone, Args)]
pub struct PipelineArgs {
    #[arg(long, default_value_t = 20)]
    pub k1: usize,
    #[arg(long, default_value_t = 50)]
    pub k2: usize,
    /// Semantic scores from normalized lexical vectors.
    #[arg(long)]
    pub no_two_tower: bool,
    /// Rank on the semantic score alone.
    #[arg(long)]
    pub no_structural: bool,
    #[arg(long, value_enum, default_value = "none")]
    pub reranker: RerankerArg,
    #[arg(long)]
    pub rerank_url: Option<String>,
    #[arg(long)]
    pub rerank_model: Option<String>,
    #[arg(long)]
    pub rerank_timeout: Option<f64>,
    /// Log re-rank prompts and answers.
    #[arg(long)]
    pub rerank_debug: bool,
    /// `{category: [subcategory]}`; defaults to <data>/taxonomy.json, then to
    /// the pairs found in the corpus.
    #[arg(long)]
    pub taxonomy: Option<PathBuf>,
    /// `{theme: [system]}`; defaults to <data>/rules.json when present.
    #[arg(long)]
    pub rules: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RecommendArgs {
    #[command(flatten)]
    pub pipeline: PipelineArgs,
    #[arg(long, default_value_t = 10)]
    pub k: usize,
    /// Free-text task.
    #[arg(long, conflicts_with = "tasks", required_unless_present = "tasks")]
    pub text: Option<String>,
    /// JSONL file of task records.
    #[arg(long)]
    pub tasks: Option<PathBuf>,
    #[arg(long, requires = "text")]
    pub language: Option<String>,
    #[arg(long, requires = "text")]
    pub category: Option<String>,
    #[arg(long, requires = "text")]
    pub subcategory: Option<String>,
    #[arg(long, requires = "text")]
    pub theme: Option<String>,
    #[arg(long, requires = "text")]
    pub system: Option<String>,
    /// Write recommendations.jsonl under --out.
    #[arg(long)]
    pub save: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SplitArg {
    Train,
    Valid,
    Test,
    All,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub pipeline: PipelineArgs,
    #[arg(long, value_delimiter = ',', default_value = "5,10")]
    pub ks: Vec<usize>,
    #[arg(long, value_enum, default_value = "test")]
    pub split: SplitArg,
    /// Rank the labeled positives first (harness sanity check).
    #[arg(long)]
    pub oracle: bool,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[command(flatten)]
    pub pipeline: PipelineArgs,
    #[arg(long, default_value = "127.0.0.1:8080")]
    pub addr: SocketAddr,
    /// Default list length per response.
    #[arg(long, default_value_t = DEFAULT_SERVICE_K)]
    pub k: usize,
    /// Append-only session log, replayed at startup.
    #[arg(long)]
    pub session_log: Option<PathBuf>,
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Runtime(#[from] anyhow::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Runtime(_) => 3,
        }
    }
}

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

/// Parse `args` (including the program name), run, and return the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn execute(cli: &Cli) -> Result<(), CliError> {
    let out = cli.out.clone().unwrap_or_else(|| cli.artifacts.clone());
    match &cli.command {
        Command::BuildVocab(a) => build_vocab(cli, &out, a),
        Command::Train(a) => train(cli, &out, a),
        Command::Index(a) => index(cli, &out, a),
        Command::Recommend(a) => recommend(cli, &out, a),
        Command::Evaluate(a) => evaluate(cli, &out, a),
        Command::Serve(a) => serve_cmd(cli, a),
    }
}

fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| DataError::io(dir, e).into())
}

fn corpus(cli: &Cli) -> Result<Corpus, CliError> {
    Ok(load_corpus(&CorpusPaths::in_dir(&cli.data))?)
}

fn labeled_split(corpus: &Corpus, seed: u64) -> Result<DatasetSplit, CliError> {
    let ids: Vec<&str> = corpus.interactions().task_ids().collect();
    taskmcp_core::corpus::split_dataset(&ids, seed).map_err(|e| DataError::Corpus(e).into())
}

fn build_vocab(cli: &Cli, out: &Path, a: &VocabArgs) -> Result<(), CliError> {
    let corpus = corpus(cli)?;
    let texts: Vec<String> = corpus
        .tasks()
        .iter()
        .map(|t| t.concat_text())
        .chain(corpus.servers().iter().map(|s| s.concat_text()))
        .collect();
    let config = VocabConfig { min_doc_freq: a.min_doc_freq, max_doc_freq_ratio: a.max_doc_freq_ratio, use_idf: !a.no_idf };
    let vocab = Vocabulary::build(&texts, config).map_err(|e| usage(e.to_string()))?;
    let split = labeled_split(&corpus, cli.seed)?;
    ensure_dir(out)?;
    save_vocab(&out.join(VOCAB_FILE), &vocab)?;
    save_split(&out.join(SPLIT_FILE), &split)?;
    let (tr, va, te) = split.sizes();
    println!("vocabulary: {} tokens; split: {tr} train / {va} valid / {te} test", vocab.len());
    Ok(())
}

fn split_for(cli: &Cli, corpus: &Corpus) -> Result<DatasetSplit, CliError> {
    let path = cli.artifacts.join(SPLIT_FILE);
    if path.exists() {
        Ok(load_split(&path)?)
    } else {
        log::warn!("{} not found; splitting with seed {}", path.display(), cli.seed);
        labeled_split(corpus, cli.seed)
    }
}

fn train(cli: &Cli, out: &Path, a: &TrainArgs) -> Result<(), CliError> {
    let corpus = corpus(cli)?;
    let vocab = load_vocab(&cli.artifacts.join(VOCAB_FILE))?;
    let split = split_for(cli, &corpus)?;
    let config = TrainConfig {
        batch_size: a.batch_size,
        epochs: a.epochs,
        learning_rate: a.lr,
        weight_decay: a.weight_decay,
        temperature: a.temperature,
        seed: cli.seed,
        eval_every: a.eval_every,
        loss: a.loss.into(),
        ..TrainConfig::default()
    };
    let tower = TowerConfig {
        input_dim: vocab.len(),
        hidden_dim: a.hidden,
        output_dim: a.output_dim,
        layers: a.layers,
        dropout: a.dropout,
    };
    tower.validate().map_err(|e| usage(e.to_string()))?;
    let trainer = Trainer::new(&corpus, &vocab, config.clone()).map_err(|e| usage(e.to_string()))?;
    let outcome = trainer.train(tower, &split).map_err(|e| anyhow!(e))?;
    ensure_dir(out)?;
    save_train_log(&out.join(TRAIN_LOG_FILE), &outcome.log)?;
    save_split(&out.join(SPLIT_FILE), &split)?;
    if let Some(epoch) = outcome.diverged_at {
        return Err(anyhow!("training diverged at epoch {epoch}; no checkpoint written").into());
    }
    let ckpt = Checkpoint {
        header: CheckpointHeader {
            vocab_fingerprint: vocab.fingerprint(),
            tower,
            train: Some(config),
            best_epoch: outcome.best_epoch,
        },
        encoder: outcome.encoder,
    };
    save_checkpoint(&out.join(CHECKPOINT_FILE), &ckpt)?;
    match outcome.best_epoch {
        Some(e) => println!("trained {} epochs; best validation epoch {e}", outcome.log.len()),
        None => println!("trained {} epochs", outcome.log.len()),
    }
    Ok(())
}

fn index(cli: &Cli, out: &Path, a: &IndexArgs) -> Result<(), CliError> {
    let servers = crate::data::load_server_corpus(&cli.data.join("mcp.jsonl"))?.servers().to_vec();
    let vocab_path = cli.artifacts.join(VOCAB_FILE);
    let vocab = load_vocab(&vocab_path)?;
    ensure_dir(out)?;
    let path = out.join(INDEX_FILE);
    if a.no_two_tower {
        let source = vocab.fingerprint();
        let model = SparseCosineModel { vocab };
        let index = taskmcp_core::encoder::encode_corpus(&model, &servers);
        save_index(&path, &index, &source)?;
        println!("indexed {} servers (sparse, snapshot {})", servers.len(), index.snapshot_id());
    } else {
        let cp = cli.artifacts.join(CHECKPOINT_FILE);
        let bytes = std::fs::read(&cp).map_err(|e| DataError::io(&cp, e))?;
        let ckpt = load_checkpoint(&cp, &vocab)?;
        let model = TwoTowerModel { vocab, encoder: ckpt.encoder };
        let index = taskmcp_core::encoder::encode_corpus(&model, &servers);
        save_index(&path, &index, &dense_source(&bytes))?;
        println!("indexed {} servers (dense, snapshot {})", servers.len(), index.snapshot_id());
    }
    Ok(())
}

fn rerank_choice(p: &PipelineArgs) -> Result<RerankChoice, CliError> {
    Ok(match p.reranker {
        RerankerArg::None => RerankChoice::None,
        RerankerArg::Builtin => RerankChoice::Builtin,
        RerankerArg::External => {
            let config = ExternalConfig::resolve(p.rerank_url.clone(), p.rerank_model.clone(), p.rerank_timeout, p.rerank_debug)
                .map_err(|e| usage(e.to_string()))?;
            RerankChoice::External(Box::new(ExternalBackend::new(config)))
        }
    })
}

fn recommend_config(p: &PipelineArgs, k: usize) -> Result<RecommendConfig, CliError> {
    let weights = if p.no_structural { FusionWeights::with_alpha(1.0) } else { FusionWeights::default() };
    let config = RecommendConfig { k1: p.k1, k2: p.k2, k, weights };
    config.validate().map_err(|e| usage(e.to_string()))?;
    Ok(config)
}

fn existing(path: PathBuf) -> Option<PathBuf> {
    path.exists().then_some(path)
}

fn engine_paths(cli: &Cli, p: &PipelineArgs) -> EnginePaths {
    let checkpoint = (!p.no_two_tower).then(|| cli.artifacts.join(CHECKPOINT_FILE));
    // a saved index only matches the pipeline it was built for
    let index = if p.no_two_tower { None } else { existing(cli.artifacts.join(INDEX_FILE)) };
    EnginePaths {
        mcp: cli.data.join("mcp.jsonl"),
        vocab: cli.artifacts.join(VOCAB_FILE),
        checkpoint,
        index,
        taxonomy: p.taxonomy.clone().or_else(|| existing(cli.data.join("taxonomy.json"))),
        rules: p.rules.clone().or_else(|| existing(cli.data.join("rules.json"))),
        tasks: existing(cli.data.join("tasks.jsonl")),
    }
}

fn load_engine(cli: &Cli, p: &PipelineArgs, k: usize) -> Result<Engine, CliError> {
    let config = recommend_config(p, k)?;
    let rerank = rerank_choice(p)?;
    Ok(Engine::load(&engine_paths(cli, p), config, rerank)?)
}

fn recommend_error(e: RecommendError) -> CliError {
    match e {
        RecommendError::PoolTooSmall { .. } | RecommendError::Config(_) | RecommendError::Weights(_) => usage(e.to_string()),
        other => CliError::Runtime(anyhow!(other)),
    }
}

#[derive(Debug, Serialize)]
struct RecommendationRow {
    rank: usize,
    id: String,
    provenance: Provenance,
    scores: StageScores,
}

#[derive(Debug, Serialize)]
struct RecommendationRecord {
    task_id: Option<String>,
    task_text: String,
    snapshot: String,
    status: taskmcp_core::RerankStatus,
    #[serde(skip_serializing_if = "Option::is_none")]
    reason: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    explanation: Option<String>,
    pool_size: usize,
    items: Vec<RecommendationRow>,
}

fn provenance_name(p: Provenance) -> &'static str {
    match p {
        Provenance::Anchor => "anchor",
        Provenance::Expansion => "expansion",
    }
}

fn render(record: &RecommendationRecord) -> String {
    let mut s = String::new();
    let head = record.task_id.as_deref().unwrap_or(&record.task_text);
    let _ = writeln!(s, "task: {head}");
    let _ = writeln!(s, "{:>4}  {:<32} {:>8} {:>8} {:>8}  {}", "rank", "id", "s_sem", "s_str", "s", "stage");
    for r in &record.items {
        let _ = writeln!(
            s,
            "{:>4}  {:<32} {:>8.4} {:>8.4} {:>8.4}  {}",
            r.rank,
            r.id,
            r.scores.semantic,
            r.scores.structural,
            r.scores.fused,
            provenance_name(r.provenance)
        );
    }
    if let Some(reason) = &record.reason {
        let _ = writeln!(s, "re-rank fell back to fused order: {reason}");
    }
    s
}

fn recommend(cli: &Cli, out: &Path, a: &RecommendArgs) -> Result<(), CliError> {
    let engine = load_engine(cli, &a.pipeline, a.k)?;
    let queries: Vec<(Option<String>, TaskQuery)> = match (&a.text, &a.tasks) {
        (Some(text), _) => {
            let norm = |v: &Option<String>| v.as_deref().map(taskmcp_core::text::normalize_category).unwrap_or_default();
            vec![(
                None,
                TaskQuery {
                    text: text.clone(),
                    category: norm(&a.category),
                    subcategory: norm(&a.subcategory),
                    language: norm(&a.language),
                    theme: norm(&a.theme),
                    system: a.system.as_deref().map(System::parse_lenient),
                },
            )]
        }
        (None, Some(path)) => {
            let tasks: Vec<TaskRecord> = read_jsonl(path)?;
            tasks.iter().map(|t| (Some(t.id.clone()), TaskQuery::from_task(&t.normalized()))).collect()
        }
        (None, None) => return Err(usage("either --text or --tasks is required")),
    };
    let mut records = Vec::with_capacity(queries.len());
    for (task_id, query) in queries {
        let rec = engine.recommend(&query, Some(a.k)).map_err(recommend_error)?;
        let record = RecommendationRecord {
            task_id,
            task_text: query.text.clone(),
            snapshot: engine.snapshot_id().to_string(),
            status: rec.list.status,
            reason: rec.list.reason.as_ref().map(|r| r.to_string()),
            explanation: rec.list.explanation.clone(),
            pool_size: rec.pool.len(),
            items: rec
                .list
                .items
                .iter()
                .map(|i| RecommendationRow { rank: i.rank, id: i.id.clone(), provenance: i.provenance, scores: i.scores })
                .collect(),
        };
        print!("{}", render(&record));
        records.push(record);
    }
    if a.save {
        ensure_dir(out)?;
        write_jsonl(&out.join(RECOMMENDATIONS_FILE), &records)?;
    }
    Ok(())
}

fn split_tasks<'c>(corpus: &'c Corpus, split: &DatasetSplit, which: SplitArg) -> Vec<&'c TaskRecord> {
    let ids: Vec<&String> = match which {
        SplitArg::Train => split.train.iter().collect(),
        SplitArg::Valid => split.valid.iter().collect(),
        SplitArg::Test => split.test.iter().collect(),
        SplitArg::All => split.train.iter().chain(&split.valid).chain(&split.test).collect(),
    };
    ids.into_iter().filter_map(|id| corpus.task(id)).collect()
}

fn label(p: &PipelineArgs, oracle: bool) -> String {
    if oracle {
        return "oracle".to_string();
    }
    let mut s = String::from(if p.no_two_tower { "sparse" } else { "two-tower" });
    if !p.no_structural {
        s.push_str("+struct");
    }
    match p.reranker {
        RerankerArg::None => {}
        RerankerArg::Builtin => s.push_str("+builtin"),
        RerankerArg::External => s.push_str("+external"),
    }
    s
}

fn evaluate(cli: &Cli, out: &Path, a: &EvaluateArgs) -> Result<(), CliError> {
    if a.ks.is_empty() || a.ks.contains(&0) {
        return Err(usage("--ks needs positive cutoffs"));
    }
    let depth = a.ks.iter().copied().max().expect("non-empty");
    let corpus = corpus(cli)?;
    let split = split_for(cli, &corpus)?;
    let tasks = split_tasks(&corpus, &split, a.split);
    let interactions = corpus.interactions();
    let empty: Vec<String> = Vec::new();
    let rankings: Vec<Vec<String>> = if a.oracle {
        tasks
            .iter()
            .map(|t| {
                let pos = interactions.positives(&t.id).unwrap_or(&empty);
                let rest = corpus.servers().iter().map(|s| &s.id).filter(|id| !pos.contains(id));
                pos.iter().chain(rest).take(depth.max(pos.len())).cloned().collect()
            })
            .collect()
    } else {
        let engine = load_engine(cli, &a.pipeline, depth)?;
        let corpus_check = taxonomy_offenders(&corpus, engine.taxonomy());
        if !corpus_check.is_empty() {
            log::warn!("{} record(s) outside the taxonomy, e.g. {}", corpus_check.len(), corpus_check[0]);
        }
        tasks
            .par_iter()
            .map(|t| {
                engine
                    .recommend(&TaskQuery::from_task(&t.normalized()), Some(depth))
                    .map(|r| r.list.ids())
                    .map_err(recommend_error)
            })
            .collect::<Result<_, _>>()?
    };
    let rows: Vec<Judged<'_>> = tasks
        .iter()
        .zip(rankings)
        .map(|(t, ranking)| Judged {
            task_id: t.id.as_str(),
            ranking,
            positives: interactions.positives(&t.id).unwrap_or(&empty),
        })
        .collect();
    let report = evaluate_rankings(&rows, &a.ks).map_err(|e| anyhow!(e))?;
    ensure_dir(out)?;
    let name = label(&a.pipeline, a.oracle);
    save_report(out, REPORT_STEM, &name, &report)?;
    print!("{}", report.table(&name));
    Ok(())
}

fn serve_cmd(cli: &Cli, a: &ServeArgs) -> Result<(), CliError> {
    // fail on bad flags before binding
    let config = recommend_config(&a.pipeline, a.k)?;
    let rerank = rerank_choice(&a.pipeline)?;
    let paths = engine_paths(cli, &a.pipeline);
    if !paths.mcp.exists() {
        return Err(DataError::io(&paths.mcp, std::io::Error::from(std::io::ErrorKind::NotFound)).into());
    }
    let service = ServiceConfig { k: a.k, session_log: a.session_log.clone() };
    let state = Arc::new(AppState::new(None, service).map_err(|e| anyhow!(e))?);
    let runtime = tokio::runtime::Runtime::new().map_err(|e| anyhow!(e))?;
    let addr = a.addr;
    runtime.block_on(async move {
        let loader = state.clone();
        let load = tokio::task::spawn_blocking(move || -> Result<(), DataError> {
            let engine = Engine::load(&paths, config, rerank)?;
            log::info!("engine ready: {} servers, snapshot {}", engine.servers().len(), engine.snapshot_id());
            loader.swap_engine(engine);
            Ok(())
        });
        let server = serve(addr, state);
        tokio::pin!(server);
        tokio::select! {
            res = &mut server => res.map_err(|e| CliError::Runtime(anyhow!(e))),
            loaded = load => {
                loaded.map_err(|e| anyhow!(e))??;
                server.await.map_err(|e| CliError::Runtime(anyhow!(e)))
            }
        }
    })
}
