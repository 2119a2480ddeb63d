//! Evidence cards for recommended servers and the format, correctness and
//! truthfulness checks they must pass before being returned.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use taskmcp_core::recommend::{Provenance, Recommendation, StageScores};
use taskmcp_core::structural::language_feature;
use taskmcp_core::text::tokenize;
use taskmcp_core::{McpRecord, RerankStatus, System};

use super::parse::StructuredTaskSpec;
use crate::engine::Engine;

const MAX_CAPABILITY_NOTES: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metadata {
    pub category: String,
    pub subcategory: String,
    pub language: String,
    pub system: System,
    pub license: String,
    pub official: bool,
}

impl Metadata {
    pub fn of(m: &McpRecord) -> Self {
        Metadata {
            category: m.category.clone(),
            subcategory: m.subcategory.clone(),
            language: m.language.clone(),
            system: m.system,
            license: m.license.clone(),
            official: m.official,
        }
    }
}

/// A corpus field of the server that shares terms with the task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CapabilityNote {
    /// `tools`, `name` or `description`.
    pub field: String,
    pub value: String,
    pub matched_terms: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstraintNote {
    pub constraint: String,
    pub requested: String,
    pub server_value: String,
    pub satisfied: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evidence {
    pub metadata: Metadata,
    pub repo_url: String,
    pub provenance: Provenance,
    pub capabilities: Vec<CapabilityNote>,
    pub constraints: Vec<ConstraintNote>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub explanation: Option<String>,
    pub guidance: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Card {
    pub id: String,
    pub name: String,
    pub rank: usize,
    pub scores: StageScores,
    pub evidence: Evidence,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Draft {
    pub cards: Vec<Card>,
}

pub struct DraftContext<'a> {
    pub spec: &'a StructuredTaskSpec,
    pub recommendation: &'a Recommendation,
    pub engine: &'a Engine,
    pub k: usize,
}

impl DraftContext<'_> {
    fn expected_len(&self) -> usize {
        self.k.min(self.recommendation.pool.len())
    }

    fn explanation(&self) -> Option<String> {
        let list = &self.recommendation.list;
        (list.status == RerankStatus::Accepted).then(|| list.explanation.clone()).flatten()
    }
}

/// Produces a draft response from a recommendation.
pub trait ResponseGenerator: Send + Sync {
    /// `strict` is set on the single retry after a failed check.
    fn generate(&self, ctx: &DraftContext<'_>, strict: bool) -> Draft;
}

/// Fixed-wording guidance filled from corpus fields.
pub fn guidance(m: &McpRecord) -> String {
    let or = |v: &str, d: &str| if v.is_empty() { d.to_string() } else { v.to_string() };
    format!(
        "Setup: {}. Language: {}. System: {}. License: {}{}.",
        or(&m.repo_url, "no repository listed"),
        or(&m.language, "not stated"),
        m.system.as_str(),
        or(&m.license, "not stated"),
        if m.official { " (official server)" } else { "" },
    )
}

fn shared_terms(value: &str, intent: &BTreeSet<String>) -> Vec<String> {
    let v: BTreeSet<String> = tokenize(value).into_iter().collect();
    v.intersection(intent).cloned().collect()
}

pub fn capability_notes(m: &McpRecord, intent: &str, strict: bool) -> Vec<CapabilityNote> {
    let intent: BTreeSet<String> = tokenize(intent).into_iter().collect();
    let mut notes = Vec::new();
    for tool in &m.tools {
        let terms = shared_terms(tool, &intent);
        if !terms.is_empty() {
            notes.push(CapabilityNote { field: "tools".into(), value: tool.clone(), matched_terms: terms });
        }
    }
    if !strict {
        for (field, value) in [("name", &m.name), ("description", &m.description)] {
            let terms = shared_terms(value, &intent);
            if !terms.is_empty() {
                notes.push(CapabilityNote { field: field.into(), value: value.clone(), matched_terms: terms });
            }
        }
    }
    notes.truncate(MAX_CAPABILITY_NOTES);
    notes
}

pub fn constraint_notes(engine: &Engine, m: &McpRecord, spec: &StructuredTaskSpec) -> Vec<ConstraintNote> {
    let c = &spec.constraints;
    let query = spec.to_query();
    let mut notes = Vec::new();
    if let Some(l) = &c.language {
        notes.push(ConstraintNote {
            constraint: "language".into(),
            requested: l.clone(),
            server_value: m.language.clone(),
            satisfied: language_feature(l, &m.language) == 1.0,
        });
    }
    if let Some(s) = c.system {
        notes.push(ConstraintNote {
            constraint: "system".into(),
            requested: s.as_str().into(),
            server_value: m.system.as_str().into(),
            satisfied: m.system == System::Any || m.system == s,
        });
    }
    if let Some(t) = &c.theme {
        notes.push(ConstraintNote {
            constraint: "theme".into(),
            requested: t.clone(),
            server_value: m.system.as_str().into(),
            satisfied: engine.structural_features(m, &query).theme == 1.0,
        });
    }
    if let (Some(cat), Some(sub)) = (&c.category, &c.subcategory) {
        notes.push(ConstraintNote {
            constraint: "category".into(),
            requested: format!("{cat}/{sub}"),
            server_value: format!("{}/{}", m.category, m.subcategory),
            satisfied: *cat == m.category && *sub == m.subcategory,
        });
    }
    notes
}

#[derive(Debug, Clone, Copy, Default)]
pub struct TemplateGenerator;

impl ResponseGenerator for TemplateGenerator {
    fn generate(&self, ctx: &DraftContext<'_>, strict: bool) -> Draft {
        let explanation = ctx.explanation();
        let cards = ctx
            .recommendation
            .list
            .items
            .iter()
            .filter_map(|item| {
                let m = ctx.engine.server(&item.id)?;
                Some(Card {
                    id: item.id.clone(),
                    name: m.name.clone(),
                    rank: item.rank,
                    scores: item.scores,
                    evidence: Evidence {
                        metadata: Metadata::of(m),
                        repo_url: m.repo_url.clone(),
                        provenance: item.provenance,
                        capabilities: capability_notes(m, &ctx.spec.intent, strict),
                        constraints: constraint_notes(ctx.engine, m, ctx.spec),
                        explanation: explanation.clone(),
                        guidance: guidance(m),
                    },
                })
            })
            .collect();
        Draft { cards }
    }
}

/// Draft built only from corpus metadata and engine scores.
pub fn metadata_bundle(ctx: &DraftContext<'_>) -> Draft {
    let cards = ctx
        .recommendation
        .list
        .items
        .iter()
        .filter_map(|item| {
            let m = ctx.engine.server(&item.id)?;
            Some(Card {
                id: item.id.clone(),
                name: m.name.clone(),
                rank: item.rank,
                scores: item.scores,
                evidence: Evidence {
                    metadata: Metadata::of(m),
                    repo_url: m.repo_url.clone(),
                    provenance: item.provenance,
                    capabilities: Vec::new(),
                    constraints: Vec::new(),
                    explanation: None,
                    guidance: guidance(m),
                },
            })
        })
        .collect();
    Draft { cards }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckStage {
    Format,
    Correctness,
    Truthfulness,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, thiserror::Error)]
#[error("{stage:?} check failed: {detail}")]
pub struct CheckFailure {
    pub stage: CheckStage,
    pub detail: String,
}

fn fail(stage: CheckStage, detail: impl Into<String>) -> Result<(), CheckFailure> {
    Err(CheckFailure { stage, detail: detail.into() })
}

fn check_format(draft: &Draft) -> Result<(), CheckFailure> {
    for (i, c) in draft.cards.iter().enumerate() {
        if c.rank != i + 1 {
            return fail(CheckStage::Format, format!("card {} has rank {}", i + 1, c.rank));
        }
        if c.id.is_empty() || c.name.is_empty() {
            return fail(CheckStage::Format, format!("card {} lacks an id or name", i + 1));
        }
        let s = &c.scores;
        if ![s.semantic, s.structural, s.fused].iter().all(|x| x.is_finite()) {
            return fail(CheckStage::Format, format!("card {} has a non-finite score", c.id));
        }
        if c.evidence.guidance.is_empty() {
            return fail(CheckStage::Format, format!("card {} has no guidance", c.id));
        }
    }
    Ok(())
}

fn check_correctness(draft: &Draft, ctx: &DraftContext<'_>) -> Result<(), CheckFailure> {
    let want = ctx.expected_len();
    if draft.cards.len() != want {
        return fail(CheckStage::Correctness, format!("{} cards, expected {want}", draft.cards.len()));
    }
    let mut seen = BTreeSet::new();
    for c in &draft.cards {
        if ctx.recommendation.pool.get(&c.id).is_none() {
            return fail(CheckStage::Correctness, format!("{} is not in the candidate pool", c.id));
        }
        if !seen.insert(&c.id) {
            return fail(CheckStage::Correctness, format!("{} appears twice", c.id));
        }
    }
    Ok(())
}

fn check_truth(draft: &Draft, ctx: &DraftContext<'_>) -> Result<(), CheckFailure> {
    let t = CheckStage::Truthfulness;
    let intent: BTreeSet<String> = tokenize(&ctx.spec.intent).into_iter().collect();
    let explanation = ctx.explanation();
    for c in &draft.cards {
        let Some(m) = ctx.engine.server(&c.id) else {
            return fail(t, format!("{} has no corpus record", c.id));
        };
        let entry = ctx.recommendation.pool.get(&c.id).expect("checked for correctness");
        let e = &c.evidence;
        if c.name != m.name {
            return fail(t, format!("{}: name differs from the corpus", c.id));
        }
        if e.metadata != Metadata::of(m) {
            return fail(t, format!("{}: metadata differs from the corpus", c.id));
        }
        if e.repo_url != m.repo_url {
            return fail(t, format!("{}: repository link differs from the corpus", c.id));
        }
        if c.scores != entry.scores || e.provenance != entry.provenance {
            return fail(t, format!("{}: scores differ from the engine's", c.id));
        }
        for n in &e.capabilities {
            let grounded = match n.field.as_str() {
                "tools" => m.tools.contains(&n.value),
                "name" => n.value == m.name,
                "description" => n.value == m.description,
                _ => false,
            };
            if !grounded {
                return fail(t, format!("{}: capability `{}` is not a {} entry", c.id, n.value, n.field));
            }
            let value_terms: BTreeSet<String> = tokenize(&n.value).into_iter().collect();
            if n.matched_terms.is_empty()
                || n.matched_terms.iter().any(|x| !value_terms.contains(x) || !intent.contains(x))
            {
                return fail(t, format!("{}: matched terms for `{}` are not shared with the task", c.id, n.value));
            }
        }
        if e.constraints != constraint_notes(ctx.engine, m, ctx.spec) {
            return fail(t, format!("{}: constraint notes do not match the record", c.id));
        }
        if e.explanation != explanation {
            return fail(t, format!("{}: explanation was not produced by the re-ranker", c.id));
        }
        if e.guidance != guidance(m) {
            return fail(t, format!("{}: guidance is not grounded in the record", c.id));
        }
    }
    Ok(())
}

/// Format, then correctness, then truthfulness.
pub fn reliability_check(draft: &Draft, ctx: &DraftContext<'_>) -> Result<(), CheckFailure> {
    check_format(draft)?;
    check_correctness(draft, ctx)?;
    check_truth(draft, ctx)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reliability {
    Pass,
    Regenerated,
    Fallback,
}

/// Generate, check, retry once in strict mode, then fall back to metadata.
pub fn assemble(generator: &dyn ResponseGenerator, ctx: &DraftContext<'_>) -> (Draft, Reliability, Vec<CheckFailure>) {
    let mut failures = Vec::new();
    for (strict, outcome) in [(false, Reliability::Pass), (true, Reliability::Regenerated)] {
        let draft = generator.generate(ctx, strict);
        match reliability_check(&draft, ctx) {
            Ok(()) => return (draft, outcome, failures),
            Err(f) => {
                log::warn!("response draft rejected: {f}");
                failures.push(f);
            }
        }
    }
    (metadata_bundle(ctx), Reliability::Fallback, failures)
}
