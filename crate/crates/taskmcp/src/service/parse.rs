//! Rule-based conversion of free text into a structured task.

use serde::{Deserialize, Serialize};
use taskmcp_core::text::normalize_category;
use taskmcp_core::{System, TaskQuery, Taxonomy};

/// Canonical language name and the words that select it.
const LANGUAGES: &[(&str, &[&str])] = &[
    ("python", &["python", "python3", "py"]),
    ("javascript", &["javascript", "js", "node", "nodejs"]),
    ("typescript", &["typescript", "ts"]),
    ("go", &["golang"]),
    ("rust", &["rust"]),
    ("java", &["java"]),
    ("kotlin", &["kotlin"]),
    ("swift", &["swift"]),
    ("ruby", &["ruby"]),
    ("php", &["php"]),
    ("c#", &["c#", "csharp"]),
    ("c++", &["c++", "cpp"]),
    ("shell", &["shell", "bash"]),
];

const SYSTEMS: &[(&str, System)] = &[
    ("linux", System::Linux),
    ("ubuntu", System::Linux),
    ("debian", System::Linux),
    ("fedora", System::Linux),
    ("windows", System::Windows),
    ("win32", System::Windows),
    ("ios", System::Ios),
    ("iphone", System::Ios),
    ("ipad", System::Ios),
    ("macos", System::Ios),
    ("osx", System::Ios),
    ("mac", System::Ios),
];

/// Words that may precede a lowercase "go" meaning the language.
const GO_CUES: &[&str] = &["in", "using", "with", "use", "it", "written"];

const FILLER: &[&str] = &[
    "a", "actually", "an", "and", "be", "but", "for", "i", "in", "instead", "it", "just", "language", "make", "need",
    "now", "on", "only", "or", "please", "should", "switch", "the", "to", "use", "using", "want", "with", "written",
];

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Constraints {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub language: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub system: Option<System>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub theme: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub category: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub subcategory: Option<String>,
}

impl Constraints {
    /// Fields set in `newer` replace ours.
    pub fn merge(&mut self, newer: &Constraints) {
        if newer.language.is_some() {
            self.language.clone_from(&newer.language);
        }
        if newer.system.is_some() {
            self.system = newer.system;
        }
        if newer.theme.is_some() {
            self.theme.clone_from(&newer.theme);
        }
        if newer.category.is_some() {
            self.category.clone_from(&newer.category);
            self.subcategory.clone_from(&newer.subcategory);
        }
    }

    pub fn is_empty(&self) -> bool {
        *self == Constraints::default()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StructuredTaskSpec {
    pub intent: String,
    pub constraints: Constraints,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub priorities: Vec<String>,
    pub complete: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub clarifications: Vec<String>,
}

impl StructuredTaskSpec {
    pub fn to_query(&self) -> TaskQuery {
        let c = &self.constraints;
        TaskQuery {
            text: self.intent.clone(),
            category: c.category.clone().unwrap_or_default(),
            subcategory: c.subcategory.clone().unwrap_or_default(),
            language: c.language.clone().unwrap_or_default(),
            theme: c.theme.clone().unwrap_or_default(),
            system: c.system,
        }
    }
}

/// What the parser may consult about the loaded engine.
pub struct ParseContext<'a> {
    pub themes: &'a [String],
    pub taxonomy: &'a Taxonomy,
    /// True when the text carries at least one term the engine can match.
    pub understands: &'a dyn Fn(&str) -> bool,
}

pub trait RequestParser: Send + Sync {
    fn parse(&self, text: &str, previous: Option<&StructuredTaskSpec>, ctx: &ParseContext<'_>) -> StructuredTaskSpec;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct RuleParser;

struct Word<'a> {
    raw: &'a str,
    lower: String,
}

fn words(text: &str) -> Vec<Word<'_>> {
    text.split(|c: char| !(c.is_alphanumeric() || c == '+' || c == '#'))
        .filter(|w| !w.is_empty())
        .map(|raw| Word { raw, lower: raw.to_lowercase() })
        .collect()
}

fn language_of(words: &[Word<'_>], i: usize) -> Option<&'static str> {
    let w = &words[i];
    if w.lower == "go" {
        let cued = i > 0 && GO_CUES.contains(&words[i - 1].lower.as_str());
        return (w.raw == "Go" || w.raw == "GO" || cued).then_some("go");
    }
    LANGUAGES.iter().find(|(_, aliases)| aliases.contains(&w.lower.as_str())).map(|(name, _)| *name)
}

/// Longest phrase from `candidates` occurring in `text` on word boundaries.
fn find_phrase<'a>(text: &str, candidates: impl Iterator<Item = &'a str>) -> Option<&'a str> {
    let padded = format!(" {} ", words(text).iter().map(|w| w.lower.as_str()).collect::<Vec<_>>().join(" "));
    candidates
        .filter(|c| !c.is_empty())
        .filter(|c| {
            let needle = format!(" {} ", words(c).iter().map(|w| w.lower.as_str()).collect::<Vec<_>>().join(" "));
            !needle.trim().is_empty() && padded.contains(&needle)
        })
        .max_by_key(|c| c.len())
}

impl RuleParser {
    /// Constraints found in `text`, clarification questions for conflicts, and
    /// the words that are neither constraints nor filler.
    pub fn extract(&self, text: &str, ctx: &ParseContext<'_>) -> (Constraints, Vec<String>, Vec<String>) {
        let ws = words(text);
        let mut languages: Vec<&str> = Vec::new();
        let mut systems: Vec<System> = Vec::new();
        let mut consumed = vec![false; ws.len()];
        for i in 0..ws.len() {
            if let Some(l) = language_of(&ws, i) {
                consumed[i] = true;
                if !languages.contains(&l) {
                    languages.push(l);
                }
            } else if let Some(&(_, s)) = SYSTEMS.iter().find(|(w, _)| *w == ws[i].lower) {
                consumed[i] = true;
                if !systems.contains(&s) {
                    systems.push(s);
                }
            }
        }

        let mut clarifications = Vec::new();
        let mut c = Constraints::default();
        match languages.as_slice() {
            [] => {}
            [one] => c.language = Some(one.to_string()),
            many => clarifications.push(format!("Which language should the server support: {}?", many.join(" or "))),
        }
        match systems.as_slice() {
            [] => {}
            [one] => c.system = Some(*one),
            many => {
                let names: Vec<&str> = many.iter().map(|s| s.as_str()).collect();
                clarifications.push(format!("Which platform should the server run on: {}?", names.join(" or ")));
            }
        }

        c.theme = find_phrase(text, ctx.themes.iter().map(String::as_str)).map(normalize_category);
        let leaves: Vec<(&str, &str)> = ctx.taxonomy.leaf_names().collect();
        if let Some(sub) = find_phrase(text, leaves.iter().map(|(_, s)| *s)) {
            let owners: Vec<&str> = leaves.iter().filter(|(_, s)| *s == sub).map(|(cat, _)| *cat).collect();
            if let [cat] = owners.as_slice() {
                c.category = Some(cat.to_string());
                c.subcategory = Some(sub.to_string());
            }
        }

        let leftover: Vec<&str> = ws
            .iter()
            .zip(&consumed)
            .filter(|(w, used)| !**used && !FILLER.contains(&w.lower.as_str()))
            .map(|(w, _)| w.raw)
            .collect();
        (c, clarifications, leftover.into_iter().map(str::to_string).collect())
    }
}

impl RequestParser for RuleParser {
    fn parse(&self, text: &str, previous: Option<&StructuredTaskSpec>, ctx: &ParseContext<'_>) -> StructuredTaskSpec {
        let (found, mut clarifications, leftover) = self.extract(text, ctx);
        // a turn that only adjusts constraints keeps the earlier intent
        let refinement_only = leftover.is_empty() && previous.is_some_and(|p| !p.intent.is_empty());
        let (intent, mut constraints, mut priorities) = match previous {
            Some(p) if refinement_only => (p.intent.clone(), p.constraints.clone(), p.priorities.clone()),
            Some(p) => (text.trim().to_string(), p.constraints.clone(), p.priorities.clone()),
            None => (text.trim().to_string(), Constraints::default(), Vec::new()),
        };
        constraints.merge(&found);
        for p in priorities_of(text) {
            if !priorities.contains(&p) {
                priorities.push(p);
            }
        }
        if !(ctx.understands)(&intent) {
            clarifications.push(
                "What should the tool server do? Describe the task in a sentence (for example: \"summarize YouTube videos\")."
                    .to_string(),
            );
        }
        StructuredTaskSpec { intent, constraints, priorities, complete: clarifications.is_empty(), clarifications }
    }
}

fn priorities_of(text: &str) -> Vec<String> {
    let lower = text.to_lowercase();
    let mut out = Vec::new();
    if lower.contains("official") {
        out.push("official".to_string());
    }
    if lower.contains("open source") || lower.contains("open-source") {
        out.push("open source".to_string());
    }
    out
}
