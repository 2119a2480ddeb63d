//! Line-delimited corpus files, taxonomy and theme rules.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;
use taskmcp_core::corpus::{Interaction, InteractionSet};
use taskmcp_core::structural::StructuralError;
use taskmcp_core::{CompatRules, Corpus, CorpusError, McpRecord, System, TaskRecord, Taxonomy};

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{}:{line}: {message}", path.display())]
    Parse { path: PathBuf, line: usize, message: String },
    #[error("{}: {message}", path.display())]
    Invalid { path: PathBuf, message: String },
    #[error(transparent)]
    Corpus(#[from] CorpusError),
}

impl DataError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        DataError::Io { path: path.to_path_buf(), source }
    }

    pub fn invalid(path: &Path, message: impl ToString) -> Self {
        DataError::Invalid { path: path.to_path_buf(), message: message.to_string() }
    }
}

pub fn read_to_string(path: &Path) -> Result<String, DataError> {
    fs::read_to_string(path).map_err(|e| DataError::io(path, e))
}

/// One JSON value per line; blank lines are skipped.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, DataError> {
    let text = read_to_string(path)?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let value = serde_json::from_str(line).map_err(|e| DataError::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(value);
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<(), DataError> {
    let file = fs::File::create(path).map_err(|e| DataError::io(path, e))?;
    let mut w = BufWriter::new(file);
    for item in items {
        let line = serde_json::to_string(item).map_err(|e| DataError::invalid(path, e))?;
        writeln!(w, "{line}").map_err(|e| DataError::io(path, e))?;
    }
    w.flush().map_err(|e| DataError::io(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), DataError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| DataError::invalid(path, e))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| DataError::io(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, DataError> {
    let text = read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| DataError::Parse {
        path: path.to_path_buf(),
        line: e.line(),
        message: e.to_string(),
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CorpusPaths {
    pub mcp: PathBuf,
    pub tasks: PathBuf,
    pub interactions: PathBuf,
}

impl CorpusPaths {
    /// `mcp.jsonl`, `tasks.jsonl` and `interactions.jsonl` under `dir`.
    pub fn in_dir(dir: &Path) -> Self {
        CorpusPaths {
            mcp: dir.join("mcp.jsonl"),
            tasks: dir.join("tasks.jsonl"),
            interactions: dir.join("interactions.jsonl"),
        }
    }
}

pub fn load_servers(path: &Path) -> Result<Vec<McpRecord>, DataError> {
    read_jsonl(path)
}

pub fn load_corpus(paths: &CorpusPaths) -> Result<Corpus, DataError> {
    let servers: Vec<McpRecord> = read_jsonl(&paths.mcp)?;
    let tasks: Vec<TaskRecord> = read_jsonl(&paths.tasks)?;
    let interactions: Vec<Interaction> = read_jsonl(&paths.interactions)?;
    let interactions = InteractionSet::new(interactions)?;
    Ok(Corpus::new(servers, tasks, interactions)?)
}

/// Server-only corpus for serving.
pub fn load_server_corpus(path: &Path) -> Result<Corpus, DataError> {
    let servers = load_servers(path)?;
    Ok(Corpus::new(servers, Vec::new(), InteractionSet::new(Vec::new())?)?)
}

pub fn save_corpus(corpus: &Corpus, paths: &CorpusPaths) -> Result<(), DataError> {
    for path in [&paths.mcp, &paths.tasks, &paths.interactions] {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(|e| DataError::io(dir, e))?;
        }
    }
    write_jsonl(&paths.mcp, corpus.servers())?;
    write_jsonl(&paths.tasks, corpus.tasks())?;
    write_jsonl(&paths.interactions, corpus.interactions().entries())
}

/// `{category: [subcategory, ...]}`.
pub fn load_taxonomy(path: &Path) -> Result<Taxonomy, DataError> {
    let tree: BTreeMap<String, Vec<String>> = read_json(path)?;
    Taxonomy::new(tree).map_err(|e: StructuralError| DataError::invalid(path, e))
}

/// Every category/subcategory pair used by the corpus.
pub fn taxonomy_from_corpus(corpus: &Corpus) -> Taxonomy {
    let mut tree: BTreeMap<String, std::collections::BTreeSet<String>> = BTreeMap::new();
    let pairs = corpus
        .servers()
        .iter()
        .map(|s| (&s.category, &s.subcategory))
        .chain(corpus.tasks().iter().map(|t| (&t.category, &t.subcategory)));
    for (c, s) in pairs {
        tree.entry(c.clone()).or_default().insert(s.clone());
    }
    Taxonomy::new(tree.into_iter().map(|(c, s)| (c, s.into_iter().collect::<Vec<_>>())))
        .expect("sets hold no duplicates")
}

/// Records whose category/subcategory pair is missing from the taxonomy.
pub fn taxonomy_offenders(corpus: &Corpus, taxonomy: &Taxonomy) -> Vec<String> {
    let servers = corpus.servers().iter().map(|s| (&s.id, &s.category, &s.subcategory));
    let tasks = corpus.tasks().iter().map(|t| (&t.id, &t.category, &t.subcategory));
    servers
        .chain(tasks)
        .filter(|(_, c, s)| taxonomy.node(c, s).is_none())
        .map(|(id, c, s)| format!("{id} ({c}/{s})"))
        .collect()
}

/// `{theme: [system, ...]}`.
pub fn load_rules(path: &Path) -> Result<CompatRules, DataError> {
    let raw: BTreeMap<String, Vec<String>> = read_json(path)?;
    let map = raw
        .into_iter()
        .map(|(theme, systems)| (theme, systems.iter().map(|s| System::parse_lenient(s)).collect()))
        .collect();
    Ok(CompatRules::new(map))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_error_names_line() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("mcp.jsonl");
        fs::write(&p, "{\"id\":\"m1\",\"name\":\"a\"}\n\n{broken\n").unwrap();
        let err = load_servers(&p).unwrap_err();
        assert!(matches!(err, DataError::Parse { line: 3, .. }), "{err}");
        assert!(err.to_string().contains("mcp.jsonl:3"));
    }

    #[test]
    fn rules_are_lenient_about_system_names() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("rules.json");
        fs::write(&p, r#"{"Mobile": ["ios", "Android"]}"#).unwrap();
        let r = load_rules(&p).unwrap();
        assert_eq!(r.theme_systems["mobile"], vec![System::Ios, System::Any]);
    }
}
