//! Rule-based structural compatibility and semantic/structural fusion.
//!
//! Three features compare a server's structured attributes with a task's:
//!
//! * taxonomy proximity `φ_cat = 1 − d/4`, where `d` is the tree distance
//!   between the two subcategory nodes of a two-level taxonomy (0, 2 or 4);
//! * language compatibility `φ_lan ∈ {0, 1}`;
//! * theme/system compatibility `φ_the ∈ {0, 1}`.
//!
//! They are combined with positive weights into `s_str ∈ [0, 1]`, which is
//! then fused with the semantic score as `α_sem·s_sem + α_str·s_str`.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::corpus::{McpRecord, System, TaskRecord, UnifiedText};
use crate::text::normalize_category;

const WEIGHT_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum StructuralError {
    #[error("unknown taxonomy node ({category}, {subcategory})")]
    UnknownNode { category: String, subcategory: String },
    #[error("taxonomy lists subcategory `{subcategory}` twice under `{category}`")]
    DuplicateSubcategory { category: String, subcategory: String },
    #[error("invalid weights: {0}")]
    Weights(&'static str),
}

/// Index of a node in a [`Taxonomy`]. Node 0 is the root.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(usize);

#[derive(Debug, Clone, PartialEq)]
struct Node {
    name: String,
    parent: Option<NodeId>,
    depth: usize,
}

/// Rooted tree: root → categories → subcategories. Names are case-folded.
#[derive(Debug, Clone, PartialEq)]
pub struct Taxonomy {
    nodes: Vec<Node>,
    categories: BTreeMap<String, NodeId>,
    leaves: BTreeMap<(String, String), NodeId>,
}

impl Taxonomy {
    pub fn new<C, S, I>(tree: I) -> Result<Self, StructuralError>
    where
        C: AsRef<str>,
        S: AsRef<str>,
        I: IntoIterator<Item = (C, Vec<S>)>,
    {
        let mut nodes = alloc::vec![Node { name: String::new(), parent: None, depth: 0 }];
        let mut categories = BTreeMap::new();
        let mut leaves = BTreeMap::new();
        for (cat, subs) in tree {
            let cat = normalize_category(cat.as_ref());
            let cat_id = *categories.entry(cat.clone()).or_insert_with(|| {
                nodes.push(Node { name: cat.clone(), parent: Some(NodeId(0)), depth: 1 });
                NodeId(nodes.len() - 1)
            });
            for sub in subs {
                let sub = normalize_category(sub.as_ref());
                if leaves.contains_key(&(cat.clone(), sub.clone())) {
                    return Err(StructuralError::DuplicateSubcategory { category: cat, subcategory: sub });
                }
                nodes.push(Node { name: sub.clone(), parent: Some(cat_id), depth: 2 });
                leaves.insert((cat.clone(), sub), NodeId(nodes.len() - 1));
            }
        }
        Ok(Taxonomy { nodes, categories, leaves })
    }

    pub fn root(&self) -> NodeId {
        NodeId(0)
    }

    /// Subcategory node for a `(category, subcategory)` pair.
    pub fn node(&self, category: &str, subcategory: &str) -> Option<NodeId> {
        self.leaves
            .get(&(normalize_category(category), normalize_category(subcategory)))
            .copied()
    }

    pub fn category(&self, name: &str) -> Option<NodeId> {
        self.categories.get(&normalize_category(name)).copied()
    }

    pub fn leaves(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.leaves.values().copied()
    }

    /// `(category, subcategory)` pairs in sorted order.
    pub fn leaf_names(&self) -> impl Iterator<Item = (&str, &str)> + '_ {
        self.leaves.keys().map(|(c, s)| (c.as_str(), s.as_str()))
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn parent(&self, node: NodeId) -> Option<NodeId> {
        self.nodes[node.0].parent
    }

    pub fn depth(&self, node: NodeId) -> usize {
        self.nodes[node.0].depth
    }

    pub fn name(&self, node: NodeId) -> &str {
        &self.nodes[node.0].name
    }

    /// Lowest common ancestor by walking parents.
    pub fn lca(&self, a: NodeId, b: NodeId) -> NodeId {
        let (mut a, mut b) = (a, b);
        while self.depth(a) > self.depth(b) {
            a = self.parent(a).expect("non-root has a parent");
        }
        while self.depth(b) > self.depth(a) {
            b = self.parent(b).expect("non-root has a parent");
        }
        while a != b {
            a = self.parent(a).expect("non-root has a parent");
            b = self.parent(b).expect("non-root has a parent");
        }
        a
    }

    /// `depth(a) + depth(b) − 2·depth(LCA(a, b))`.
    pub fn distance(&self, a: NodeId, b: NodeId) -> usize {
        self.depth(a) + self.depth(b) - 2 * self.depth(self.lca(a, b))
    }

    /// Distance between the subcategory nodes named by two pairs.
    pub fn distance_by_name(
        &self,
        server: (&str, &str),
        task: (&str, &str),
    ) -> Result<usize, StructuralError> {
        let find = |(c, s): (&str, &str)| {
            self.node(c, s).ok_or_else(|| StructuralError::UnknownNode {
                category: c.to_string(),
                subcategory: s.to_string(),
            })
        };
        Ok(self.distance(find(server)?, find(task)?))
    }
}

/// `1 − d/4`.
pub fn category_feature(distance: usize) -> f64 {
    1.0 - distance as f64 / 4.0
}

fn is_wildcard(v: &str) -> bool {
    v.is_empty() || v == "any"
}

/// 1 when the languages match case-insensitively or either side is a
/// wildcard (`any` or missing).
pub fn language_feature(task_language: &str, server_language: &str) -> f64 {
    let t = normalize_category(task_language);
    let m = normalize_category(server_language);
    if is_wildcard(&t) || is_wildcard(&m) || t == m {
        1.0
    } else {
        0.0
    }
}

/// Theme → allowed systems hints. Themes without an entry are compatible
/// with every system.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CompatRules {
    pub theme_systems: BTreeMap<String, Vec<System>>,
}

impl CompatRules {
    pub fn new(theme_systems: BTreeMap<String, Vec<System>>) -> Self {
        let theme_systems = theme_systems
            .into_iter()
            .map(|(k, v)| (normalize_category(&k), v))
            .collect();
        CompatRules { theme_systems }
    }

    /// Task-side theme (and optional explicit system requirement) against the
    /// server's system. A server targeting `any` is always compatible; an
    /// explicit requirement takes precedence over the theme table.
    pub fn theme_feature(&self, theme: &str, required: Option<System>, server: System) -> f64 {
        if server == System::Any {
            return 1.0;
        }
        if let Some(req) = required {
            return if req == System::Any || req == server { 1.0 } else { 0.0 };
        }
        match self.theme_systems.get(&normalize_category(theme)) {
            Some(allowed) if !allowed.is_empty() => {
                if allowed.iter().any(|s| *s == server || *s == System::Any) {
                    1.0
                } else {
                    0.0
                }
            }
            _ => 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CompatFeatures {
    pub category: f64,
    pub language: f64,
    pub theme: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FusionWeights {
    pub w_cat: f64,
    pub w_lan: f64,
    pub w_the: f64,
    pub alpha_sem: f64,
    pub alpha_str: f64,
}

impl Default for FusionWeights {
    fn default() -> Self {
        FusionWeights { w_cat: 1.0 / 3.0, w_lan: 1.0 / 3.0, w_the: 1.0 / 3.0, alpha_sem: 0.9, alpha_str: 0.1 }
    }
}

impl FusionWeights {
    /// Default structural weights with a custom semantic share.
    pub fn with_alpha(alpha_sem: f64) -> Self {
        FusionWeights { alpha_sem, alpha_str: 1.0 - alpha_sem, ..Default::default() }
    }

    pub fn validate(&self) -> Result<(), StructuralError> {
        let ws = [self.w_cat, self.w_lan, self.w_the];
        if ws.iter().any(|w| !(*w > 0.0)) {
            return Err(StructuralError::Weights("structural weights must be positive"));
        }
        if (ws.iter().sum::<f64>() - 1.0).abs() > WEIGHT_TOL {
            return Err(StructuralError::Weights("structural weights must sum to 1"));
        }
        if !(self.alpha_sem >= 0.0) || !(self.alpha_str >= 0.0) {
            return Err(StructuralError::Weights("fusion weights must be non-negative"));
        }
        if (self.alpha_sem + self.alpha_str - 1.0).abs() > WEIGHT_TOL {
            return Err(StructuralError::Weights("fusion weights must sum to 1"));
        }
        Ok(())
    }

    pub fn structural_score(&self, f: &CompatFeatures) -> f64 {
        self.w_cat * f.category + self.w_lan * f.language + self.w_the * f.theme
    }

    pub fn fuse(&self, semantic: f64, structural: f64) -> f64 {
        self.alpha_sem * semantic + self.alpha_str * structural
    }
}

/// The task side of a recommendation request.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TaskQuery {
    /// Text fed to the semantic model.
    pub text: String,
    pub category: String,
    pub subcategory: String,
    pub language: String,
    pub theme: String,
    /// Explicit platform requirement, when the user stated one.
    pub system: Option<System>,
}

impl TaskQuery {
    pub fn from_task(task: &TaskRecord) -> Self {
        TaskQuery {
            text: task.concat_text(),
            category: task.category.clone(),
            subcategory: task.subcategory.clone(),
            language: task.language.clone(),
            theme: task.theme.clone(),
            system: None,
        }
    }
}

/// Something that scores a server against a task on structured attributes.
pub trait Compatibility {
    fn features(&self, server: &McpRecord, task: &TaskQuery) -> CompatFeatures;
}

impl<T: Compatibility + ?Sized> Compatibility for &T {
    fn features(&self, server: &McpRecord, task: &TaskQuery) -> CompatFeatures {
        (**self).features(server, task)
    }
}

#[derive(Debug, Clone)]
pub struct StructuralScorer {
    pub taxonomy: Taxonomy,
    pub rules: CompatRules,
}

impl StructuralScorer {
    pub fn new(taxonomy: Taxonomy, rules: CompatRules) -> Self {
        StructuralScorer { taxonomy, rules }
    }

    /// `φ_cat`; unknown nodes on either side count as maximally distant. A
    /// task with no category at all scores 0 against every server silently.
    pub fn category_feature(&self, server: &McpRecord, task: &TaskQuery) -> f64 {
        if task.category.is_empty() && task.subcategory.is_empty() {
            return 0.0;
        }
        match self.taxonomy.distance_by_name(
            (&server.category, &server.subcategory),
            (&task.category, &task.subcategory),
        ) {
            Ok(d) => category_feature(d),
            Err(e) => {
                log::warn!("{e}; treating as maximally distant");
                0.0
            }
        }
    }
}

impl Compatibility for StructuralScorer {
    fn features(&self, server: &McpRecord, task: &TaskQuery) -> CompatFeatures {
        CompatFeatures {
            category: self.category_feature(server, task),
            language: language_feature(&task.language, &server.language),
            theme: self.rules.theme_feature(&task.theme, task.system, server.system),
        }
    }
}
