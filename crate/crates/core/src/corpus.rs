//! Tool-server and task records, interaction labels and dataset splits.
//!
//! Records are normalized on construction of a [`Corpus`]: free text is trimmed
//! and NFC-normalized, categorical fields (category, subcategory, language,
//! theme) are additionally case-folded. A `Corpus` is immutable afterwards.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::text::{join_segments, normalize_category, normalize_text};

/// Operating system a tool server targets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub enum System {
    Windows,
    Ios,
    Linux,
    /// Unspecified or cross-platform. Unknown labels map here.
    #[default]
    Any,
}

impl System {
    pub const ALL: [System; 4] = [System::Windows, System::Ios, System::Linux, System::Any];

    pub fn as_str(self) -> &'static str {
        match self {
            System::Windows => "Windows",
            System::Ios => "iOS",
            System::Linux => "Linux",
            System::Any => "any",
        }
    }

    /// Case-insensitive parse. Anything unrecognized is [`System::Any`].
    pub fn parse_lenient(s: &str) -> System {
        match normalize_category(s).as_str() {
            "windows" | "win" | "win32" | "win64" => System::Windows,
            "ios" | "macos" | "osx" | "darwin" | "mac" => System::Ios,
            "linux" | "ubuntu" | "debian" | "unix" => System::Linux,
            _ => System::Any,
        }
    }
}

impl fmt::Display for System {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl Serialize for System {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for System {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let raw: Option<String> = Option::deserialize(deserializer)?;
        Ok(raw.map(|s| System::parse_lenient(&s)).unwrap_or_default())
    }
}

/// One tool server.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct McpRecord {
    pub id: String,
    pub name: String,
    #[serde(default)]
    pub description: String,
    #[serde(default)]
    pub tools: Vec<String>,
    #[serde(default)]
    pub category: String,
    #[serde(default)]
    pub subcategory: String,
    #[serde(default)]
    pub language: String,
    #[serde(default)]
    pub system: System,
    #[serde(default)]
    pub license: String,
    #[serde(default)]
    pub official: bool,
    #[serde(default)]
    pub repo_url: String,
}

/// One development task.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskRecord {
    pub id: String,
    pub name: String,
    pub description: String,
    #[serde(default)]
    pub language: String,
    #[serde(default)]
    pub category: String,
    #[serde(default)]
    pub subcategory: String,
    #[serde(default)]
    pub theme: String,
}

/// One line of the interaction file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Interaction {
    pub task_id: String,
    pub mcp_ids: Vec<String>,
}

/// Records whose text can be fed to the vectorizer.
pub trait UnifiedText {
    /// The record's fields joined into the single text field used for
    /// vectorization. Empty fields are skipped; segments are separated by a
    /// single space.
    fn concat_text(&self) -> String;
}

impl UnifiedText for TaskRecord {
    fn concat_text(&self) -> String {
        join_segments([
            self.name.as_str(),
            self.description.as_str(),
            self.language.as_str(),
            self.category.as_str(),
            self.theme.as_str(),
        ])
    }
}

impl UnifiedText for McpRecord {
    fn concat_text(&self) -> String {
        let system = match self.system {
            System::Any => "",
            s => s.as_str(),
        };
        let tools = join_segments(self.tools.iter().map(String::as_str));
        join_segments([
            self.name.as_str(),
            self.description.as_str(),
            self.language.as_str(),
            system,
            tools.as_str(),
            self.category.as_str(),
            self.subcategory.as_str(),
        ])
    }
}

impl McpRecord {
    /// Return a copy with every field normalized.
    pub fn normalized(&self) -> McpRecord {
        McpRecord {
            id: self.id.trim().to_string(),
            name: normalize_text(&self.name),
            description: normalize_text(&self.description),
            tools: self
                .tools
                .iter()
                .map(|t| normalize_text(t))
                .filter(|t| !t.is_empty())
                .collect(),
            category: normalize_category(&self.category),
            subcategory: normalize_category(&self.subcategory),
            language: normalize_category(&self.language),
            system: self.system,
            license: normalize_text(&self.license),
            official: self.official,
            repo_url: normalize_text(&self.repo_url),
        }
    }
}

impl TaskRecord {
    /// Return a copy with every field normalized.
    pub fn normalized(&self) -> TaskRecord {
        TaskRecord {
            id: self.id.trim().to_string(),
            name: normalize_text(&self.name),
            description: normalize_text(&self.description),
            language: normalize_category(&self.language),
            category: normalize_category(&self.category),
            subcategory: normalize_category(&self.subcategory),
            theme: normalize_category(&self.theme),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum CorpusError {
    #[error("duplicate {kind} id `{id}`")]
    DuplicateId { kind: &'static str, id: String },
    #[error("duplicate repo_url `{url}` shared by servers {first} and {second}")]
    DuplicateRepoUrl {
        url: String,
        first: String,
        second: String,
    },
    #[error("task `{0}` has an empty description")]
    EmptyDescription(String),
    #[error("interactions reference unknown ids (tasks: {tasks:?}, servers: {servers:?})")]
    DanglingReferences {
        tasks: Vec<String>,
        servers: Vec<String>,
    },
    #[error("task `{0}` has no positive servers")]
    EmptyPositives(String),
    #[error("task `{task}` lists server `{server}` more than once")]
    DuplicatePositive { task: String, server: String },
    #[error("need at least {required} labeled tasks to split, found {found}")]
    TooFewTasks { found: usize, required: usize },
}

/// Curated task → relevant-server mapping.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct InteractionSet {
    entries: Vec<Interaction>,
    by_task: BTreeMap<String, usize>,
}

impl InteractionSet {
    /// Build from entries, rejecting duplicate task ids, empty lists and
    /// repeated servers within a list. Referential integrity is checked by
    /// [`Corpus::new`].
    pub fn new(entries: Vec<Interaction>) -> Result<Self, CorpusError> {
        let mut by_task = BTreeMap::new();
        let mut clean = Vec::with_capacity(entries.len());
        for entry in entries {
            let task_id = entry.task_id.trim().to_string();
            if entry.mcp_ids.is_empty() {
                return Err(CorpusError::EmptyPositives(task_id));
            }
            let mut seen = BTreeSet::new();
            let mut ids = Vec::with_capacity(entry.mcp_ids.len());
            for id in &entry.mcp_ids {
                let id = id.trim().to_string();
                if !seen.insert(id.clone()) {
                    return Err(CorpusError::DuplicatePositive { task: task_id, server: id });
                }
                ids.push(id);
            }
            if by_task.insert(task_id.clone(), clean.len()).is_some() {
                return Err(CorpusError::DuplicateId { kind: "interaction task", id: task_id });
            }
            clean.push(Interaction { task_id, mcp_ids: ids });
        }
        Ok(InteractionSet { entries: clean, by_task })
    }

    /// M⁺(t); `None` when the task is unlabeled.
    pub fn positives(&self, task_id: &str) -> Option<&[String]> {
        self.by_task.get(task_id).map(|&i| self.entries[i].mcp_ids.as_slice())
    }

    /// Binary relevance label.
    pub fn is_relevant(&self, task_id: &str, server_id: &str) -> bool {
        self.positives(task_id)
            .is_some_and(|ps| ps.iter().any(|p| p == server_id))
    }

    pub fn entries(&self) -> &[Interaction] {
        &self.entries
    }

    pub fn task_ids(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.task_id.as_str())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Validated, normalized corpora. Immutable after construction.
#[derive(Debug, Clone)]
pub struct Corpus {
    servers: Vec<McpRecord>,
    tasks: Vec<TaskRecord>,
    interactions: InteractionSet,
    server_index: BTreeMap<String, usize>,
    task_index: BTreeMap<String, usize>,
}

impl Corpus {
    pub fn new(
        servers: Vec<McpRecord>,
        tasks: Vec<TaskRecord>,
        interactions: InteractionSet,
    ) -> Result<Self, CorpusError> {
        let servers: Vec<McpRecord> = servers.iter().map(McpRecord::normalized).collect();
        let tasks: Vec<TaskRecord> = tasks.iter().map(TaskRecord::normalized).collect();

        let mut server_index = BTreeMap::new();
        let mut repo_owner: BTreeMap<&str, &str> = BTreeMap::new();
        for (i, s) in servers.iter().enumerate() {
            if server_index.insert(s.id.clone(), i).is_some() {
                return Err(CorpusError::DuplicateId { kind: "server", id: s.id.clone() });
            }
            if !s.repo_url.is_empty() {
                if let Some(first) = repo_owner.insert(s.repo_url.as_str(), s.id.as_str()) {
                    return Err(CorpusError::DuplicateRepoUrl {
                        url: s.repo_url.clone(),
                        first: first.to_string(),
                        second: s.id.clone(),
                    });
                }
            }
        }

        let mut task_index = BTreeMap::new();
        for (i, t) in tasks.iter().enumerate() {
            if task_index.insert(t.id.clone(), i).is_some() {
                return Err(CorpusError::DuplicateId { kind: "task", id: t.id.clone() });
            }
            if t.description.is_empty() {
                return Err(CorpusError::EmptyDescription(t.id.clone()));
            }
        }

        let mut missing_tasks = BTreeSet::new();
        let mut missing_servers = BTreeSet::new();
        for e in interactions.entries() {
            if !task_index.contains_key(&e.task_id) {
                missing_tasks.insert(e.task_id.clone());
            }
            for id in &e.mcp_ids {
                if !server_index.contains_key(id) {
                    missing_servers.insert(id.clone());
                }
            }
        }
        if !missing_tasks.is_empty() || !missing_servers.is_empty() {
            return Err(CorpusError::DanglingReferences {
                tasks: missing_tasks.into_iter().collect(),
                servers: missing_servers.into_iter().collect(),
            });
        }

        Ok(Corpus { servers, tasks, interactions, server_index, task_index })
    }

    pub fn servers(&self) -> &[McpRecord] {
        &self.servers
    }

    pub fn tasks(&self) -> &[TaskRecord] {
        &self.tasks
    }

    pub fn interactions(&self) -> &InteractionSet {
        &self.interactions
    }

    pub fn server(&self, id: &str) -> Option<&McpRecord> {
        self.server_index.get(id).map(|&i| &self.servers[i])
    }

    pub fn task(&self, id: &str) -> Option<&TaskRecord> {
        self.task_index.get(id).map(|&i| &self.tasks[i])
    }

    /// Position of a server in [`Corpus::servers`].
    pub fn server_position(&self, id: &str) -> Option<usize> {
        self.server_index.get(id).copied()
    }

    /// `(servers, tasks, labeled tasks)`.
    pub fn counts(&self) -> (usize, usize, usize) {
        (self.servers.len(), self.tasks.len(), self.interactions.len())
    }
}

/// Minimum number of labeled tasks accepted by [`split_dataset`].
pub const MIN_SPLIT_TASKS: usize = 5;

/// Disjoint train/valid/test task-id sets.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train: Vec<String>,
    pub valid: Vec<String>,
    pub test: Vec<String>,
    pub seed: u64,
}

impl DatasetSplit {
    pub fn sizes(&self) -> (usize, usize, usize) {
        (self.train.len(), self.valid.len(), self.test.len())
    }
}

/// Seeded 60/20/20 split: sort and dedup ids, shuffle uniformly, then slice.
pub fn split_dataset<S: AsRef<str>>(task_ids: &[S], seed: u64) -> Result<DatasetSplit, CorpusError> {
    let mut ids: Vec<String> = task_ids.iter().map(|s| s.as_ref().to_string()).collect();
    ids.sort();
    ids.dedup();
    let n = ids.len();
    if n < MIN_SPLIT_TASKS {
        return Err(CorpusError::TooFewTasks { found: n, required: MIN_SPLIT_TASKS });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ids.shuffle(&mut rng);

    // round(0.6n) and round(0.2n) in integer arithmetic
    let n_train = (6 * n + 5) / 10;
    let n_valid = (2 * n + 5) / 10;
    let test = ids.split_off(n_train + n_valid);
    let valid = ids.split_off(n_train);
    Ok(DatasetSplit { train: ids, valid, test, seed })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::format;
    use alloc::vec;

    pub(crate) fn server(id: &str) -> McpRecord {
        McpRecord {
            id: id.into(),
            name: format!("server {id}"),
            description: "does things".into(),
            tools: vec!["run".into()],
            category: "Dev".into(),
            subcategory: "Build".into(),
            language: "Python".into(),
            system: System::Linux,
            license: "MIT".into(),
            official: false,
            repo_url: format!("https://example.org/{id}"),
        }
    }

    fn task(id: &str) -> TaskRecord {
        TaskRecord {
            id: id.into(),
            name: format!("task {id}"),
            description: "build a thing".into(),
            language: "Python".into(),
            category: "Dev".into(),
            subcategory: "Build".into(),
            theme: "automation".into(),
        }
    }

    fn labels(pairs: &[(&str, &[&str])]) -> InteractionSet {
        InteractionSet::new(
            pairs
                .iter()
                .map(|(t, ms)| Interaction {
                    task_id: (*t).into(),
                    mcp_ids: ms.iter().map(|m| (*m).into()).collect(),
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn load_counts() {
        let c = Corpus::new(
            vec![server("m1"), server("m2"), server("m3")],
            vec![task("t1"), task("t2")],
            labels(&[("t1", &["m1"]), ("t2", &["m2", "m3"])]),
        )
        .unwrap();
        assert_eq!(c.counts(), (3, 2, 2));
        assert!(c.interactions().is_relevant("t2", "m3"));
        assert!(!c.interactions().is_relevant("t1", "m3"));
    }

    #[test]
    fn duplicate_repo_url_is_rejected() {
        let mut b = server("m2");
        b.repo_url = "https://example.org/m1".into();
        let err = Corpus::new(vec![server("m1"), b], vec![], InteractionSet::default()).unwrap_err();
        match err {
            CorpusError::DuplicateRepoUrl { url, .. } => assert_eq!(url, "https://example.org/m1"),
            e => panic!("unexpected {e:?}"),
        }
    }

    #[test]
    fn dangling_server_is_named() {
        let err = Corpus::new(
            vec![server("m1")],
            vec![task("t1")],
            labels(&[("t1", &["m1", "mX"])]),
        )
        .unwrap_err();
        assert_eq!(
            err,
            CorpusError::DanglingReferences { tasks: vec![], servers: vec!["mX".into()] }
        );
        assert!(err.to_string().contains("mX"));
    }

    #[test]
    fn duplicate_ids_are_rejected() {
        let err = Corpus::new(vec![server("m1"), server("m1")], vec![], InteractionSet::default());
        assert!(matches!(err, Err(CorpusError::DuplicateId { kind: "server", .. })));
        let err = Corpus::new(vec![], vec![task("t1"), task("t1")], InteractionSet::default());
        assert!(matches!(err, Err(CorpusError::DuplicateId { kind: "task", .. })));
    }

    #[test]
    fn interaction_list_rules() {
        let empty = InteractionSet::new(vec![Interaction { task_id: "t".into(), mcp_ids: vec![] }]);
        assert_eq!(empty, Err(CorpusError::EmptyPositives("t".into())));
        let dup = InteractionSet::new(vec![Interaction {
            task_id: "t".into(),
            mcp_ids: vec!["a".into(), "a".into()],
        }]);
        assert!(matches!(dup, Err(CorpusError::DuplicatePositive { .. })));
    }

    #[test]
    fn empty_task_description_is_rejected() {
        let mut t = task("t1");
        t.description = "   ".into();
        let err = Corpus::new(vec![], vec![t], InteractionSet::default()).unwrap_err();
        assert_eq!(err, CorpusError::EmptyDescription("t1".into()));
    }

    #[test]
    fn normalization_folds_categoricals_only() {
        let mut s = server("m1");
        s.name = "  My Server ".into();
        s.language = " Python".into();
        let c = Corpus::new(vec![s], vec![], InteractionSet::default()).unwrap();
        let s = &c.servers()[0];
        assert_eq!(s.name, "My Server");
        assert_eq!(s.language, "python");
        assert_eq!(s.category, "dev");
    }

    #[test]
    fn task_text_order() {
        let t = TaskRecord {
            id: "t".into(),
            name: "A".into(),
            description: "B".into(),
            language: "Python".into(),
            category: "C".into(),
            subcategory: "ignored".into(),
            theme: "D".into(),
        };
        assert_eq!(t.concat_text(), "A B Python C D");
    }

    #[test]
    fn server_text_skips_empty_segments() {
        let mut s = server("m");
        s.name = "S".into();
        s.description = String::new();
        s.tools.clear();
        let text = s.concat_text();
        assert_eq!(text, "S Python Linux Dev Build");
        assert!(!text.contains("  "));

        s.tools = vec!["fetch".into(), "parse".into()];
        assert_eq!(s.concat_text(), "S Python Linux fetch parse Dev Build");
    }

    #[test]
    fn unknown_system_maps_to_any() {
        let s: McpRecord = serde_json::from_str(
            r#"{"id":"x","name":"n","system":"Plan9"}"#,
        )
        .unwrap();
        assert_eq!(s.system, System::Any);
        let s: McpRecord = serde_json::from_str(r#"{"id":"x","name":"n","system":"linux"}"#).unwrap();
        assert_eq!(s.system, System::Linux);
        let s: McpRecord = serde_json::from_str(r#"{"id":"x","name":"n","system":null}"#).unwrap();
        assert_eq!(s.system, System::Any);
    }

    #[test]
    fn split_sizes() {
        let ids: Vec<String> = (0..10).map(|i| format!("t{i}")).collect();
        assert_eq!(split_dataset(&ids, 7).unwrap().sizes(), (6, 2, 2));
        let ids: Vec<String> = (0..4800).map(|i| format!("t{i}")).collect();
        assert_eq!(split_dataset(&ids, 1).unwrap().sizes(), (2880, 960, 960));
    }

    #[test]
    fn split_is_deterministic_and_order_free() {
        let ids: Vec<String> = (0..37).map(|i| format!("t{i}")).collect();
        let a = split_dataset(&ids, 3).unwrap();
        let mut rev = ids.clone();
        rev.reverse();
        assert_eq!(a, split_dataset(&rev, 3).unwrap());
        assert_ne!(a, split_dataset(&ids, 4).unwrap());
    }

    #[test]
    fn split_needs_five_tasks() {
        let err = split_dataset(&["a", "b", "c", "d"], 0).unwrap_err();
        assert_eq!(err, CorpusError::TooFewTasks { found: 4, required: 5 });
    }

    #[test]
    fn split_partitions_exhaustively() {
        for n in 5..120 {
            let ids: Vec<String> = (0..n).map(|i| format!("t{i}")).collect();
            let s = split_dataset(&ids, n as u64).unwrap();
            let (a, b, c) = s.sizes();
            assert_eq!(a + b + c, n);
            let nf = n as f64;
            assert!((a as f64 - 0.6 * nf).abs() <= 1.0, "n={n} train={a}");
            assert!((b as f64 - 0.2 * nf).abs() <= 1.0, "n={n} valid={b}");
            assert!((c as f64 - 0.2 * nf).abs() <= 1.0, "n={n} test={c}");
            let all: BTreeSet<&String> = s.train.iter().chain(&s.valid).chain(&s.test).collect();
            assert_eq!(all.len(), n);
        }
    }
}
