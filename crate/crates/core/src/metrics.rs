//! Macro-averaged top-k metrics under binary relevance.

use alloc::collections::BTreeSet;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::corpus::{InteractionSet, TaskRecord};

/// Cutoffs reported by default.
pub const DEFAULT_KS: [usize; 2] = [5, 10];

/// `|topk ∩ positives|` over the first `k` entries of `ranked`.
pub fn hits<S: AsRef<str>, P: AsRef<str>>(ranked: &[S], positives: &[P], k: usize) -> usize {
    let pos: BTreeSet<&str> = positives.iter().map(AsRef::as_ref).collect();
    ranked.iter().take(k).filter(|id| pos.contains(id.as_ref())).count()
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Prf {
    pub recall: f64,
    pub precision: f64,
    pub f1: f64,
}

/// Per-task recall, precision and F1 at `k`. F1 is 0 when both are 0.
pub fn recall_precision_f1<S: AsRef<str>, P: AsRef<str>>(ranked: &[S], positives: &[P], k: usize) -> Prf {
    if positives.is_empty() || k == 0 {
        return Prf::default();
    }
    let h = hits(ranked, positives, k) as f64;
    let recall = h / positives.len() as f64;
    let precision = h / k as f64;
    let f1 = if precision + recall > 0.0 { 2.0 * precision * recall / (precision + recall) } else { 0.0 };
    Prf { recall, precision, f1 }
}

/// Binary-gain NDCG@k with `log₂(i + 1)` discounts; the ideal ranking places
/// `min(k, |M⁺|)` relevant items first.
pub fn ndcg<S: AsRef<str>, P: AsRef<str>>(ranked: &[S], positives: &[P], k: usize) -> f64 {
    if positives.is_empty() || k == 0 {
        return 0.0;
    }
    let pos: BTreeSet<&str> = positives.iter().map(AsRef::as_ref).collect();
    let dcg: f64 = ranked
        .iter()
        .take(k)
        .enumerate()
        .filter(|(_, id)| pos.contains(id.as_ref()))
        .map(|(i, _)| discount(i + 1))
        .sum();
    let ideal: f64 = (1..=k.min(pos.len())).map(discount).sum();
    dcg / ideal
}

fn discount(rank: usize) -> f64 {
    1.0 / libm::log2(rank as f64 + 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsAtK {
    pub k: usize,
    pub recall: f64,
    pub precision: f64,
    pub f1: f64,
    pub ndcg: f64,
}

impl MetricsAtK {
    pub fn compute<S: AsRef<str>, P: AsRef<str>>(ranked: &[S], positives: &[P], k: usize) -> Self {
        let prf = recall_precision_f1(ranked, positives, k);
        MetricsAtK { k, recall: prf.recall, precision: prf.precision, f1: prf.f1, ndcg: ndcg(ranked, positives, k) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskMetrics {
    pub task_id: String,
    pub metrics: Vec<MetricsAtK>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub ks: Vec<usize>,
    /// Macro averages, one entry per k in `ks` order.
    pub averages: Vec<MetricsAtK>,
    pub per_task: Vec<TaskMetrics>,
    pub task_count: usize,
    /// Tasks dropped because they had no positives.
    pub excluded: usize,
}

impl EvalReport {
    pub fn at(&self, k: usize) -> Option<&MetricsAtK> {
        self.averages.iter().find(|m| m.k == k)
    }

    /// Plain-text table: metric-major columns (all Recall@k, then Precision,
    /// F1, NDCG), four decimals.
    pub fn table(&self, label: &str) -> String {
        let names = ["Recall", "Precision", "F1", "NDCG"];
        let mut header = alloc::format!("{:<16}", "Model");
        let mut row = alloc::format!("{label:<16}");
        for (mi, name) in names.iter().enumerate() {
            for m in &self.averages {
                let v = match mi {
                    0 => m.recall,
                    1 => m.precision,
                    2 => m.f1,
                    _ => m.ndcg,
                };
                let col = alloc::format!("{name}@{}", m.k);
                let w = col.len().max(6);
                let _ = write!(header, " {col:>w$}");
                let _ = write!(row, " {v:>w$.4}");
            }
        }
        alloc::format!("{header}\n{row}\n")
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MetricsError {
    #[error("ranking for task `{task}` repeats server `{server}`")]
    DuplicateInRanking { task: String, server: String },
    #[error("no cutoffs requested")]
    NoCutoffs,
}

/// One evaluation row: a task's ranking and its positives.
pub struct Judged<'a> {
    pub task_id: &'a str,
    pub ranking: Vec<String>,
    pub positives: &'a [String],
}

/// Macro-average over precomputed rankings. Rows with no positives are
/// excluded and counted; rankings with repeated ids are rejected.
pub fn evaluate_rankings(rows: &[Judged<'_>], ks: &[usize]) -> Result<EvalReport, MetricsError> {
    if ks.is_empty() {
        return Err(MetricsError::NoCutoffs);
    }
    let mut per_task = Vec::with_capacity(rows.len());
    let mut excluded = 0;
    for row in rows {
        let mut seen = BTreeSet::new();
        for id in &row.ranking {
            if !seen.insert(id.as_str()) {
                return Err(MetricsError::DuplicateInRanking { task: row.task_id.into(), server: id.clone() });
            }
        }
        if row.positives.is_empty() {
            excluded += 1;
            continue;
        }
        let metrics = ks.iter().map(|&k| MetricsAtK::compute(&row.ranking, row.positives, k)).collect();
        per_task.push(TaskMetrics { task_id: row.task_id.into(), metrics });
    }
    if excluded > 0 {
        log::warn!("{excluded} task(s) without positives excluded from evaluation");
    }
    let n = per_task.len();
    let averages = ks
        .iter()
        .enumerate()
        .map(|(ki, &k)| {
            let mut acc = MetricsAtK { k, recall: 0.0, precision: 0.0, f1: 0.0, ndcg: 0.0 };
            for t in &per_task {
                let m = &t.metrics[ki];
                acc.recall += m.recall;
                acc.precision += m.precision;
                acc.f1 += m.f1;
                acc.ndcg += m.ndcg;
            }
            if n > 0 {
                let nf = n as f64;
                acc.recall /= nf;
                acc.precision /= nf;
                acc.f1 /= nf;
                acc.ndcg /= nf;
            }
            acc
        })
        .collect();
    Ok(EvalReport { ks: ks.to_vec(), averages, per_task, task_count: n, excluded })
}

/// Anything that can produce a ranked list of server ids for a task.
pub trait Ranker {
    fn rank(&self, task: &TaskRecord, depth: usize) -> Vec<String>;
}

impl<F> Ranker for F
where
    F: Fn(&TaskRecord, usize) -> Vec<String>,
{
    fn rank(&self, task: &TaskRecord, depth: usize) -> Vec<String> {
        self(task, depth)
    }
}

/// Run `ranker` on every task (sequentially) and macro-average.
pub fn evaluate<R: Ranker + ?Sized>(
    ranker: &R,
    tasks: &[&TaskRecord],
    interactions: &InteractionSet,
    ks: &[usize],
) -> Result<EvalReport, MetricsError> {
    let depth = ks.iter().copied().max().unwrap_or(0);
    let empty: &[String] = &[];
    let rows: Vec<Judged<'_>> = tasks
        .iter()
        .map(|t| Judged {
            task_id: t.id.as_str(),
            ranking: ranker.rank(t, depth),
            positives: interactions.positives(&t.id).unwrap_or(empty),
        })
        .collect();
    evaluate_rankings(&rows, ks)
}
