//! Constrained list-wise re-ranking of a candidate pool.
//!
//! A backend sees a prompt describing the task and every pool member and
//! answers with a JSON object naming `K` ids. The answer is accepted only if
//! it is well formed, has length `K`, names pool members exactly and without
//! repeats, and brings in at most [`MAX_SUBSTITUTIONS`] ids from outside the
//! pre-rerank top-`K`. Anything else falls back to the pre-rerank prefix.

use alloc::borrow::ToOwned;
use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt::Write;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::corpus::{McpRecord, System};
use crate::text::tokenize;

pub const MAX_SUBSTITUTIONS: usize = 2;

/// What the backend sees of one candidate server.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateCard {
    pub id: String,
    pub name: String,
    pub description: String,
    pub tools: Vec<String>,
    pub category: String,
    pub subcategory: String,
    pub language: String,
    pub system: System,
    pub license: String,
    pub official: bool,
}

impl CandidateCard {
    pub fn from_record(m: &McpRecord) -> Self {
        CandidateCard {
            id: m.id.clone(),
            name: m.name.clone(),
            description: m.description.clone(),
            tools: m.tools.clone(),
            category: m.category.clone(),
            subcategory: m.subcategory.clone(),
            language: m.language.clone(),
            system: m.system,
            license: m.license.clone(),
            official: m.official,
        }
    }

    fn text(&self) -> String {
        let mut s = format!("{} {} {} {}", self.name, self.description, self.category, self.subcategory);
        for t in &self.tools {
            s.push(' ');
            s.push_str(t);
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RerankRequest {
    pub task_text: String,
    /// Human-readable summary of the task's structured constraints.
    pub constraints: String,
    /// Pool members in pre-rerank (fused) order.
    pub cards: Vec<CandidateCard>,
    pub k: usize,
}

impl RerankRequest {
    pub fn pre_order(&self) -> impl Iterator<Item = &str> {
        self.cards.iter().map(|c| c.id.as_str())
    }

    /// The fallback answer: the first `K` pool ids.
    pub fn prefix(&self) -> Vec<String> {
        self.cards.iter().take(self.k).map(|c| c.id.clone()).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RerankStatus {
    Accepted,
    Fallback,
}

/// Why an answer was rejected.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, thiserror::Error)]
#[serde(tag = "reason", content = "detail", rename_all = "snake_case")]
pub enum Violation {
    #[error("output is not a JSON object with an MCP_servers string list: {0}")]
    Format(String),
    #[error("expected {expected} ids, got {found}")]
    Length { expected: usize, found: usize },
    #[error("`{0}` is not in the candidate pool")]
    Membership(String),
    #[error("`{0}` appears more than once")]
    Duplicate(String),
    #[error("`{given}` is an altered form of pool id `{pool_id}`")]
    Identifier { given: String, pool_id: String },
    #[error("{0} ids come from outside the pre-rerank top-K")]
    Substitution(usize),
    #[error("backend failed: {0}")]
    Backend(BackendError),
}

impl Violation {
    pub fn code(&self) -> &'static str {
        match self {
            Violation::Format(_) => "format",
            Violation::Length { .. } => "length",
            Violation::Membership(_) => "membership",
            Violation::Duplicate(_) => "duplicate",
            Violation::Identifier { .. } => "identifier",
            Violation::Substitution(_) => "substitution",
            Violation::Backend(_) => "backend",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RerankResult {
    pub ids: Vec<String>,
    pub explanation: Option<String>,
    pub status: RerankStatus,
    pub reason: Option<Violation>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl RerankResult {
    pub fn fallback(request: &RerankRequest, reason: Violation) -> Self {
        log::info!("re-rank fallback: {reason}");
        RerankResult { ids: request.prefix(), explanation: None, status: RerankStatus::Fallback, reason: Some(reason), warnings: Vec::new() }
    }

    fn identity(request: &RerankRequest) -> Self {
        RerankResult { ids: request.prefix(), explanation: None, status: RerankStatus::Accepted, reason: None, warnings: Vec::new() }
    }

    pub fn is_accepted(&self) -> bool {
        self.status == RerankStatus::Accepted
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, thiserror::Error)]
#[serde(rename_all = "snake_case")]
pub enum BackendError {
    #[error("timed out")]
    Timeout,
    #[error("transport error: {0}")]
    Transport(String),
    #[error("{0}")]
    Other(String),
}

/// Text-in/text-out model that answers a re-rank prompt.
///
/// Implementations should request deterministic decoding and enforce their
/// own timeout.
pub trait RerankBackend {
    fn name(&self) -> &str;
    fn complete(&self, prompt: &str, request: &RerankRequest) -> Result<String, BackendError>;
}

fn one_line(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for (i, w) in s.split_whitespace().enumerate() {
        if i > 0 {
            out.push(' ');
        }
        out.push_str(w);
    }
    out
}

fn or_any(s: &str) -> &str {
    if s.is_empty() {
        "any"
    } else {
        s
    }
}

pub fn build_prompt(request: &RerankRequest) -> String {
    let k = request.k;
    let mut p = String::new();
    p.push_str("## Role\n");
    p.push_str("You are a ranking component inside a tool-server recommender. ");
    p.push_str("You reorder a fixed list of candidate servers for one software task. ");
    p.push_str("You never invent servers.\n\n");

    p.push_str("## Input\n\n### (a) Task Data\n");
    let _ = writeln!(p, "Task: {}", one_line(&request.task_text));
    let constraints = one_line(&request.constraints);
    let _ = writeln!(p, "Constraints: {}\n", if constraints.is_empty() { "none" } else { &constraints });

    p.push_str("### (b) Ranking Criteria\n");
    p.push_str("1. How directly the server's tools perform the task.\n");
    p.push_str("2. Fit with the stated language and platform constraints.\n");
    p.push_str("3. Closeness of category and subcategory to the task.\n");
    p.push_str("4. When otherwise equal, official servers and the given order win.\n\n");

    let _ = writeln!(p, "### (c) Candidate Cards ({} cards, current order)", request.cards.len());
    for (i, c) in request.cards.iter().enumerate() {
        let _ = writeln!(p, "[{}] id: {}", i + 1, c.id);
        let _ = writeln!(p, "    name: {}", one_line(&c.name));
        let _ = writeln!(p, "    description: {}", one_line(&c.description));
        let tools: Vec<String> = c.tools.iter().map(|t| one_line(t)).collect();
        let _ = writeln!(p, "    tools: {}", if tools.is_empty() { String::from("-") } else { tools.join(", ") });
        let _ = writeln!(
            p,
            "    meta: category={}; subcategory={}; language={}; system={}; license={}; official={}",
            one_line(&c.category),
            one_line(&c.subcategory),
            or_any(&one_line(&c.language)),
            c.system.as_str(),
            or_any(&one_line(&c.license)),
            if c.official { "yes" } else { "no" },
        );
    }
    p.push('\n');

    p.push_str("### (d) Rules\n");
    let _ = writeln!(p, "- Return exactly {k} MCP server identifiers in ranked order, best first.");
    p.push_str("- Every identifier must be the `id` of a card above, copied character for character.\n");
    p.push_str("- No identifier may appear twice.\n");
    let _ = writeln!(
        p,
        "- At most {MAX_SUBSTITUTIONS} of your identifiers may come from outside cards [1]..[{k}]."
    );
    p.push_str("- Reply with the JSON object only, with no text before or after it.\n\n");

    p.push_str("## Output\n");
    p.push_str("{\"Task\": \"<task restated in one line>\", \"MCP_servers\": [\"<id>\", ...], \"Explanation\": \"<brief reason for the order>\"}\n");
    p
}

/// Strip one enclosing markdown code fence, if present.
fn unfence(raw: &str) -> &str {
    let t = raw.trim();
    if let Some(rest) = t.strip_prefix("```") {
        if let Some(body) = rest.strip_suffix("```") {
            let body = body.strip_prefix("json").unwrap_or(body);
            return body.trim();
        }
    }
    t
}

struct Parsed {
    ids: Vec<String>,
    explanation: Option<String>,
    warnings: Vec<String>,
}

fn parse(raw: &str) -> Result<Parsed, Violation> {
    let value: Value = serde_json::from_str(unfence(raw)).map_err(|e| Violation::Format(e.to_string()))?;
    let obj = value.as_object().ok_or_else(|| Violation::Format("top level is not an object".to_owned()))?;
    let list = obj
        .get("MCP_servers")
        .and_then(Value::as_array)
        .ok_or_else(|| Violation::Format("missing MCP_servers list".to_owned()))?;
    let ids = list
        .iter()
        .map(|v| v.as_str().map(str::to_owned))
        .collect::<Option<Vec<_>>>()
        .ok_or_else(|| Violation::Format("MCP_servers holds a non-string".to_owned()))?;
    let mut warnings = Vec::new();
    let explanation = match obj.get("Explanation") {
        Some(Value::String(s)) => Some(s.clone()),
        Some(_) => {
            warnings.push("Explanation is not a string; ignored".to_owned());
            None
        }
        None => {
            warnings.push("Explanation missing".to_owned());
            None
        }
    };
    if !obj.contains_key("Task") {
        warnings.push("Task missing".to_owned());
    }
    Ok(Parsed { ids, explanation, warnings })
}

fn check(request: &RerankRequest, ids: &[String]) -> Result<(), Violation> {
    if ids.len() != request.k {
        return Err(Violation::Length { expected: request.k, found: ids.len() });
    }
    let pool: BTreeSet<&str> = request.pre_order().collect();
    for id in ids {
        if pool.contains(id.as_str()) {
            continue;
        }
        let folded = id.trim().to_lowercase();
        if let Some(p) = pool.iter().find(|p| p.to_lowercase() == folded) {
            return Err(Violation::Identifier { given: id.clone(), pool_id: (*p).to_owned() });
        }
        return Err(Violation::Membership(id.clone()));
    }
    let mut seen = BTreeSet::new();
    for id in ids {
        if !seen.insert(id.as_str()) {
            return Err(Violation::Duplicate(id.clone()));
        }
    }
    let top: BTreeSet<&str> = request.pre_order().take(request.k).collect();
    let outside = seen.difference(&top).count();
    if outside > MAX_SUBSTITUTIONS {
        return Err(Violation::Substitution(outside));
    }
    Ok(())
}

/// Parse and check a backend answer. Never fails: every violation becomes a
/// fallback to the pre-rerank prefix.
pub fn validate(raw: &str, request: &RerankRequest) -> RerankResult {
    let parsed = match parse(raw) {
        Ok(p) => p,
        Err(v) => return RerankResult::fallback(request, v),
    };
    if let Err(v) = check(request, &parsed.ids) {
        return RerankResult::fallback(request, v);
    }
    for w in &parsed.warnings {
        log::warn!("re-rank answer accepted with warning: {w}");
    }
    RerankResult {
        ids: parsed.ids,
        explanation: parsed.explanation,
        status: RerankStatus::Accepted,
        reason: None,
        warnings: parsed.warnings,
    }
}

/// Deterministic offline backend ranking cards by token overlap with the
/// task text.
///
/// Starting from the pre-rerank top-K, up to [`MAX_SUBSTITUTIONS`] outsiders
/// replace the weakest members when they overlap strictly more. The result is
/// ordered by overlap, then by pre-rerank position.
#[derive(Debug, Clone, Copy, Default)]
pub struct BuiltinHeuristic;

impl BuiltinHeuristic {
    pub fn overlaps(request: &RerankRequest) -> Vec<usize> {
        let task: BTreeSet<String> = tokenize(&request.task_text).into_iter().collect();
        request
            .cards
            .iter()
            .map(|c| {
                let card: BTreeSet<String> = tokenize(&c.text()).into_iter().collect();
                task.intersection(&card).count()
            })
            .collect()
    }

    pub fn rank(request: &RerankRequest) -> Vec<String> {
        let k = request.k.min(request.cards.len());
        let score = Self::overlaps(request);
        let mut chosen: Vec<usize> = (0..k).collect();
        let mut outsiders: Vec<usize> = (k..request.cards.len()).collect();
        // best outsider first; equal overlap keeps pool order
        outsiders.sort_by(|a, b| score[*b].cmp(&score[*a]).then(a.cmp(b)));
        for &o in outsiders.iter().take(MAX_SUBSTITUTIONS) {
            let weakest = chosen
                .iter()
                .enumerate()
                .min_by(|(_, a), (_, b)| score[**a].cmp(&score[**b]).then(b.cmp(a)))
                .map(|(slot, _)| slot);
            match weakest {
                Some(slot) if score[o] > score[chosen[slot]] => chosen[slot] = o,
                _ => break,
            }
        }
        chosen.sort_by(|a, b| score[*b].cmp(&score[*a]).then(a.cmp(b)));
        chosen.into_iter().map(|i| request.cards[i].id.clone()).collect()
    }
}

impl RerankBackend for BuiltinHeuristic {
    fn name(&self) -> &str {
        "builtin"
    }

    fn complete(&self, _prompt: &str, request: &RerankRequest) -> Result<String, BackendError> {
        let ids = Self::rank(request);
        let answer = serde_json::json!({
            "Task": one_line(&request.task_text),
            "MCP_servers": ids,
            "Explanation": "Ordered by the number of task terms each server's card mentions.",
        });
        Ok(answer.to_string())
    }
}

/// Re-ranking strategy chosen per request.
#[derive(Clone, Copy, Default)]
pub enum Reranker<'a> {
    /// Keep the pre-rerank order.
    #[default]
    None,
    Builtin,
    Backend(&'a dyn RerankBackend),
}

impl core::fmt::Debug for Reranker<'_> {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            Reranker::None => f.write_str("None"),
            Reranker::Builtin => f.write_str("Builtin"),
            Reranker::Backend(b) => write!(f, "Backend({})", b.name()),
        }
    }
}

impl Reranker<'_> {
    /// At most one backend call, then strict validation.
    pub fn rerank(&self, request: &RerankRequest) -> RerankResult {
        match self {
            Reranker::None => RerankResult::identity(request),
            Reranker::Builtin => rerank(request, &BuiltinHeuristic),
            Reranker::Backend(b) => rerank(request, *b),
        }
    }
}

pub fn rerank<B: RerankBackend + ?Sized>(request: &RerankRequest, backend: &B) -> RerankResult {
    let prompt = build_prompt(request);
    match backend.complete(&prompt, request) {
        Ok(raw) => validate(&raw, request),
        Err(e) => RerankResult::fallback(request, Violation::Backend(e)),
    }
}
