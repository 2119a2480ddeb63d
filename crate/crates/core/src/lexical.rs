//! Shared vocabulary and L2-normalized sparse lexical vectors.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt::Write as _;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::text::tokenize;
use crate::Normalized;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VocabConfig {
    /// Tokens appearing in fewer documents are dropped.
    pub min_doc_freq: usize,
    /// Tokens appearing in a larger fraction of documents are dropped.
    pub max_doc_freq_ratio: f64,
    /// Multiply term frequencies by a smoothed idf.
    pub use_idf: bool,
}

impl Default for VocabConfig {
    fn default() -> Self {
        VocabConfig { min_doc_freq: 1, max_doc_freq_ratio: 1.0, use_idf: true }
    }
}

impl VocabConfig {
    /// Raw term counts, no filtering.
    pub fn counts() -> Self {
        VocabConfig { use_idf: false, ..Default::default() }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum LexicalError {
    #[error("cannot build a vocabulary from an empty corpus")]
    EmptyCorpus,
    #[error("document-frequency bounds removed every token")]
    EmptyVocabulary,
    #[error("malformed vocabulary line {line}: {reason}")]
    Malformed { line: usize, reason: String },
}

/// Token → index map shared by tasks and servers.
///
/// Indices are dense in `[0, d)` and assigned in lexicographic token order.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: BTreeMap<String, u32>,
    idf: Vec<f64>,
    n_docs: usize,
    config: VocabConfig,
}

/// Sparse vector with strictly increasing indices.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SparseVector {
    indices: Vec<u32>,
    values: Vec<f64>,
    dim: usize,
}

impl Vocabulary {
    pub fn build<S: AsRef<str>>(texts: &[S], config: VocabConfig) -> Result<Self, LexicalError> {
        let mut df: BTreeMap<String, usize> = BTreeMap::new();
        let mut n_docs = 0usize;
        for text in texts {
            let toks: BTreeSet<String> = tokenize(text.as_ref()).into_iter().collect();
            n_docs += 1;
            for t in toks {
                *df.entry(t).or_insert(0) += 1;
            }
        }
        if df.is_empty() {
            return Err(LexicalError::EmptyCorpus);
        }

        let max_df = config.max_doc_freq_ratio * n_docs as f64;
        let mut tokens = Vec::new();
        let mut idf = Vec::new();
        for (tok, count) in df {
            if count < config.min_doc_freq || count as f64 > max_df {
                continue;
            }
            idf.push(smoothed_idf(n_docs, count));
            tokens.push(tok);
        }
        if tokens.is_empty() {
            return Err(LexicalError::EmptyVocabulary);
        }
        Ok(Self::from_parts(tokens, idf, n_docs, config))
    }

    fn from_parts(tokens: Vec<String>, idf: Vec<f64>, n_docs: usize, config: VocabConfig) -> Self {
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        Vocabulary { tokens, index, idf, n_docs, config }
    }

    /// Vocabulary size `d`.
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn index_of(&self, token: &str) -> Option<usize> {
        self.index.get(token).map(|&i| i as usize)
    }

    pub fn token(&self, index: usize) -> Option<&str> {
        self.tokens.get(index).map(String::as_str)
    }

    pub fn idf(&self, index: usize) -> f64 {
        self.idf[index]
    }

    pub fn config(&self) -> &VocabConfig {
        &self.config
    }

    /// Term-frequency vector (times idf when enabled). Out-of-vocabulary
    /// tokens are dropped; empty text gives the zero vector.
    pub fn vectorize(&self, text: &str) -> SparseVector {
        let mut counts: BTreeMap<u32, f64> = BTreeMap::new();
        for tok in tokenize(text) {
            if let Some(&i) = self.index.get(&tok) {
                *counts.entry(i).or_insert(0.0) += 1.0;
            }
        }
        let (indices, values) = counts
            .into_iter()
            .map(|(i, c)| {
                let w = if self.config.use_idf { c * self.idf[i as usize] } else { c };
                (i, w)
            })
            .unzip();
        SparseVector { indices, values, dim: self.len() }
    }

    /// `vectorize` followed by L2 normalization.
    pub fn embed(&self, text: &str) -> Normalized<SparseVector> {
        self.vectorize(text).l2_normalize()
    }

    /// Line-oriented serialization: a header line followed by one
    /// `token<TAB>index<TAB>idf` line per entry.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "#vocab\tv1\tdocs={}\tmin_df={}\tmax_df_ratio={}\tuse_idf={}",
            self.n_docs, self.config.min_doc_freq, self.config.max_doc_freq_ratio, self.config.use_idf
        );
        for (i, (tok, idf)) in self.tokens.iter().zip(&self.idf).enumerate() {
            let _ = writeln!(out, "{tok}\t{i}\t{idf}");
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self, LexicalError> {
        let bad = |line: usize, reason: &str| LexicalError::Malformed { line, reason: reason.to_string() };
        let mut lines = text.lines().enumerate();
        let (_, header) = lines.next().ok_or_else(|| bad(1, "missing header"))?;
        let mut fields = header.split('\t');
        if fields.next() != Some("#vocab") || fields.next() != Some("v1") {
            return Err(bad(1, "expected `#vocab\\tv1` header"));
        }
        let mut n_docs = None;
        let mut config = VocabConfig::default();
        for kv in fields {
            let (k, v) = kv.split_once('=').ok_or_else(|| bad(1, "expected key=value"))?;
            let parsed = match k {
                "docs" => v.parse().map(|x| n_docs = Some(x)).is_ok(),
                "min_df" => v.parse().map(|x| config.min_doc_freq = x).is_ok(),
                "max_df_ratio" => v.parse().map(|x| config.max_doc_freq_ratio = x).is_ok(),
                "use_idf" => v.parse().map(|x| config.use_idf = x).is_ok(),
                _ => false,
            };
            if !parsed {
                return Err(bad(1, &format!("bad header field `{kv}`")));
            }
        }
        let n_docs = n_docs.ok_or_else(|| bad(1, "missing docs count"))?;

        let mut tokens = Vec::new();
        let mut idf = Vec::new();
        for (i, line) in lines {
            let lineno = i + 1;
            if line.is_empty() {
                continue;
            }
            let mut parts = line.split('\t');
            let (Some(tok), Some(idx), Some(w), None) = (parts.next(), parts.next(), parts.next(), parts.next())
            else {
                return Err(bad(lineno, "expected three tab-separated fields"));
            };
            let idx: usize = idx.parse().map_err(|_| bad(lineno, "bad index"))?;
            if idx != tokens.len() {
                return Err(bad(lineno, "indices must be dense and in order"));
            }
            if tokens.last().is_some_and(|prev: &String| prev.as_str() >= tok) {
                return Err(bad(lineno, "tokens must be strictly increasing"));
            }
            let w: f64 = w.parse().map_err(|_| bad(lineno, "bad idf"))?;
            if !w.is_finite() {
                return Err(bad(lineno, "idf must be finite"));
            }
            tokens.push(tok.to_string());
            idf.push(w);
        }
        if tokens.is_empty() {
            return Err(LexicalError::EmptyVocabulary);
        }
        Ok(Self::from_parts(tokens, idf, n_docs, config))
    }

    /// Hex SHA-256 of [`Vocabulary::to_text`]; checkpoints record it so a
    /// model is never paired with a different vocabulary.
    pub fn fingerprint(&self) -> String {
        let digest = Sha256::digest(self.to_text().as_bytes());
        let mut out = String::with_capacity(64);
        for b in digest.iter() {
            let _ = write!(out, "{b:02x}");
        }
        out
    }
}

/// `ln((1 + N) / (1 + df)) + 1`
pub fn smoothed_idf(n_docs: usize, df: usize) -> f64 {
    libm::log((1.0 + n_docs as f64) / (1.0 + df as f64)) + 1.0
}

impl SparseVector {
    /// Build from unsorted `(index, value)` pairs; duplicate indices are summed
    /// and explicit zeros are dropped.
    ///
    /// Panics if an index is out of range or a value is not finite.
    pub fn from_pairs(dim: usize, pairs: impl IntoIterator<Item = (usize, f64)>) -> Self {
        let mut acc: BTreeMap<u32, f64> = BTreeMap::new();
        for (i, v) in pairs {
            assert!(i < dim, "index {i} out of range for dim {dim}");
            assert!(v.is_finite(), "non-finite sparse value");
            *acc.entry(i as u32).or_insert(0.0) += v;
        }
        let (indices, values) = acc.into_iter().filter(|(_, v)| *v != 0.0).unzip();
        SparseVector { indices, values, dim }
    }

    pub fn zeros(dim: usize) -> Self {
        SparseVector { indices: Vec::new(), values: Vec::new(), dim }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|v| *v == 0.0)
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.indices.iter().map(|&i| i as usize).zip(self.values.iter().copied())
    }

    pub fn get(&self, index: usize) -> f64 {
        match self.indices.binary_search(&(index as u32)) {
            Ok(p) => self.values[p],
            Err(_) => 0.0,
        }
    }

    pub fn norm(&self) -> f64 {
        libm::sqrt(self.values.iter().map(|v| v * v).sum())
    }

    pub fn dot(&self, other: &SparseVector) -> f64 {
        let (mut i, mut j, mut acc) = (0, 0, 0.0);
        while i < self.indices.len() && j < other.indices.len() {
            match self.indices[i].cmp(&other.indices[j]) {
                core::cmp::Ordering::Less => i += 1,
                core::cmp::Ordering::Greater => j += 1,
                core::cmp::Ordering::Equal => {
                    acc += self.values[i] * other.values[j];
                    i += 1;
                    j += 1;
                }
            }
        }
        acc
    }

    pub fn scale(&self, factor: f64) -> SparseVector {
        SparseVector {
            indices: self.indices.clone(),
            values: self.values.iter().map(|v| v * factor).collect(),
            dim: self.dim,
        }
    }

    /// Unit Euclidean norm. The zero vector is returned unchanged and flagged
    /// degenerate.
    pub fn l2_normalize(&self) -> Normalized<SparseVector> {
        let n = self.norm();
        if n == 0.0 {
            return Normalized { vector: self.clone(), degenerate: true };
        }
        Normalized { vector: self.scale(1.0 / n), degenerate: false }
    }

    pub fn to_dense(&self) -> Vec<f64> {
        let mut out = alloc::vec![0.0; self.dim];
        for (i, v) in self.iter() {
            out[i] = v;
        }
        out
    }
}
