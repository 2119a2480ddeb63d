//! Vocabulary, checkpoint, index, split, training log and report files.
//!
//! Checkpoints and indexes share one binary layout: an 8-byte magic, a
//! little-endian `u32` format version, a `u32` header length, a JSON header,
//! then a little-endian payload.

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use taskmcp_core::train::EpochRecord;
use taskmcp_core::{
    DatasetSplit, DenseEmbedding, DualEncoder, EmbeddingIndex, EvalReport, SparseVector, Tower, TowerConfig,
    TrainConfig, Vocabulary,
};

use crate::data::{read_to_string, write_json, write_jsonl, DataError};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"TMCPCKPT";
pub const INDEX_MAGIC: &[u8; 8] = b"TMCPINDX";
pub const FORMAT_VERSION: u32 = 1;

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn save_vocab(path: &Path, vocab: &Vocabulary) -> Result<(), DataError> {
    fs::write(path, vocab.to_text()).map_err(|e| DataError::io(path, e))
}

pub fn load_vocab(path: &Path) -> Result<Vocabulary, DataError> {
    let text = read_to_string(path)?;
    Vocabulary::from_text(&text).map_err(|e| DataError::invalid(path, e))
}

fn frame<H: Serialize>(magic: &[u8; 8], header: &H, payload: &[u8]) -> Vec<u8> {
    let header = serde_json::to_vec(header).expect("headers serialize");
    let mut out = Vec::with_capacity(16 + header.len() + payload.len());
    out.extend_from_slice(magic);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(&header);
    out.extend_from_slice(payload);
    out
}

fn unframe<'a, H: DeserializeOwned>(path: &Path, magic: &[u8; 8], bytes: &'a [u8]) -> Result<(H, &'a [u8]), DataError> {
    if bytes.len() < 16 || &bytes[..8] != magic {
        return Err(DataError::invalid(path, "unrecognized file signature"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(DataError::invalid(path, format!("unsupported format version {version}")));
    }
    let len = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
    let header = bytes.get(16..16 + len).ok_or_else(|| DataError::invalid(path, "truncated header"))?;
    let header = serde_json::from_slice(header).map_err(|e| DataError::invalid(path, format!("bad header: {e}")))?;
    Ok((header, &bytes[16 + len..]))
}

/// Cursor over an index payload.
pub struct Reader<'a> {
    buf: &'a [u8],
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        if self.buf.len() < n {
            return None;
        }
        let (head, rest) = self.buf.split_at(n);
        self.buf = rest;
        Some(head)
    }

    fn u32(&mut self) -> Option<u32> {
        self.take(4).map(|b| u32::from_le_bytes(b.try_into().unwrap()))
    }

    fn f64(&mut self) -> Option<f64> {
        self.take(8).map(|b| f64::from_le_bytes(b.try_into().unwrap()))
    }

    fn f64s(&mut self, n: usize) -> Option<Vec<f64>> {
        (0..n).map(|_| self.f64()).collect()
    }
}

fn put_f64s(out: &mut Vec<u8>, xs: &[f64]) {
    for x in xs {
        out.extend_from_slice(&x.to_le_bytes());
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub vocab_fingerprint: String,
    pub tower: TowerConfig,
    pub train: Option<TrainConfig>,
    pub best_epoch: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub encoder: DualEncoder,
}

pub fn encode_checkpoint(ckpt: &Checkpoint) -> Vec<u8> {
    let mut payload = Vec::new();
    put_f64s(&mut payload, &ckpt.encoder.task.flatten());
    put_f64s(&mut payload, &ckpt.encoder.server.flatten());
    frame(CHECKPOINT_MAGIC, &ckpt.header, &payload)
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<(), DataError> {
    fs::write(path, encode_checkpoint(ckpt)).map_err(|e| DataError::io(path, e))
}

/// Loads a checkpoint and checks it was trained against `vocab`.
pub fn load_checkpoint(path: &Path, vocab: &Vocabulary) -> Result<Checkpoint, DataError> {
    let bytes = fs::read(path).map_err(|e| DataError::io(path, e))?;
    let (header, payload): (CheckpointHeader, _) = unframe(path, CHECKPOINT_MAGIC, &bytes)?;
    if header.vocab_fingerprint != vocab.fingerprint() {
        return Err(DataError::invalid(path, "checkpoint was trained against a different vocabulary"));
    }
    if header.tower.input_dim != vocab.len() {
        return Err(DataError::invalid(path, "tower input size does not match the vocabulary"));
    }
    let n = header.tower.param_count();
    let mut r = Reader { buf: payload };
    let task = r.f64s(n).ok_or_else(|| DataError::invalid(path, "truncated task tower"))?;
    let server = r.f64s(n).ok_or_else(|| DataError::invalid(path, "truncated server tower"))?;
    if !r.buf.is_empty() {
        return Err(DataError::invalid(path, "trailing bytes after parameters"));
    }
    let tower = |flat: &[f64]| Tower::from_flat(header.tower, flat).map_err(|e| DataError::invalid(path, e));
    let encoder = DualEncoder { task: tower(&task)?, server: tower(&server)? };
    Ok(Checkpoint { header, encoder })
}

/// Embedding types that can live in an index file.
pub trait IndexCodec: Sized {
    const KIND: &'static str;
    fn dim(&self) -> usize;
    fn encode(&self, out: &mut Vec<u8>);
    fn decode(r: &mut Reader<'_>, dim: usize) -> Option<Self>;
}

impl IndexCodec for DenseEmbedding {
    const KIND: &'static str = "dense";

    fn dim(&self) -> usize {
        self.values.len()
    }

    fn encode(&self, out: &mut Vec<u8>) {
        put_f64s(out, &self.values);
    }

    fn decode(r: &mut Reader<'_>, dim: usize) -> Option<Self> {
        let mut e = DenseEmbedding::new(r.f64s(dim)?);
        e.normalized = true;
        Some(e)
    }
}

impl IndexCodec for SparseVector {
    const KIND: &'static str = "sparse";

    fn dim(&self) -> usize {
        SparseVector::dim(self)
    }

    fn encode(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&(self.nnz() as u32).to_le_bytes());
        for (i, v) in self.iter() {
            out.extend_from_slice(&(i as u32).to_le_bytes());
            out.extend_from_slice(&v.to_le_bytes());
        }
    }

    fn decode(r: &mut Reader<'_>, dim: usize) -> Option<Self> {
        let nnz = r.u32()? as usize;
        let mut pairs = Vec::with_capacity(nnz);
        for _ in 0..nnz {
            let i = r.u32()? as usize;
            if i >= dim {
                return None;
            }
            pairs.push((i, r.f64()?));
        }
        Some(SparseVector::from_pairs(dim, pairs))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexHeader {
    pub kind: String,
    pub dim: usize,
    pub count: usize,
    pub snapshot: String,
    /// Fingerprint of the model that produced the vectors.
    pub source: String,
}

pub fn save_index<E: IndexCodec + taskmcp_core::encoder::Embedding>(
    path: &Path,
    index: &EmbeddingIndex<E>,
    source: &str,
) -> Result<(), DataError> {
    let dim = index.vectors().first().map(IndexCodec::dim).unwrap_or(0);
    let header = IndexHeader {
        kind: E::KIND.to_string(),
        dim,
        count: index.len(),
        snapshot: index.snapshot_id().to_string(),
        source: source.to_string(),
    };
    let mut payload = Vec::new();
    for (id, v) in index.ids().iter().zip(index.vectors()) {
        payload.extend_from_slice(&(id.len() as u32).to_le_bytes());
        payload.extend_from_slice(id.as_bytes());
        v.encode(&mut payload);
    }
    fs::write(path, frame(INDEX_MAGIC, &header, &payload)).map_err(|e| DataError::io(path, e))
}

pub fn load_index<E: IndexCodec + taskmcp_core::encoder::Embedding>(
    path: &Path,
) -> Result<(IndexHeader, EmbeddingIndex<E>), DataError> {
    let bytes = fs::read(path).map_err(|e| DataError::io(path, e))?;
    let (header, payload): (IndexHeader, _) = unframe(path, INDEX_MAGIC, &bytes)?;
    if header.kind != E::KIND {
        return Err(DataError::invalid(path, format!("index holds {} vectors, expected {}", header.kind, E::KIND)));
    }
    let mut r = Reader { buf: payload };
    let mut ids = Vec::with_capacity(header.count);
    let mut vectors = Vec::with_capacity(header.count);
    for _ in 0..header.count {
        let entry = (|| {
            let n = r.u32()? as usize;
            let id = String::from_utf8(r.take(n)?.to_vec()).ok()?;
            Some((id, E::decode(&mut r, header.dim)?))
        })();
        let (id, v) = entry.ok_or_else(|| DataError::invalid(path, "truncated or corrupt entry"))?;
        ids.push(id);
        vectors.push(v);
    }
    if !r.buf.is_empty() {
        return Err(DataError::invalid(path, "trailing bytes after entries"));
    }
    let index = EmbeddingIndex::new(ids, vectors).map_err(|e| DataError::invalid(path, e))?;
    if index.snapshot_id() != header.snapshot {
        return Err(DataError::invalid(path, "snapshot hash does not match contents"));
    }
    Ok((header, index))
}

pub fn save_split(path: &Path, split: &DatasetSplit) -> Result<(), DataError> {
    write_json(path, split)
}

pub fn load_split(path: &Path) -> Result<DatasetSplit, DataError> {
    crate::data::read_json(path)
}

pub fn save_train_log(path: &Path, log: &[EpochRecord]) -> Result<(), DataError> {
    write_jsonl(path, log)
}

/// `<stem>.txt` holds the table, `<stem>.json` the full report.
pub fn save_report(dir: &Path, stem: &str, label: &str, report: &EvalReport) -> Result<(), DataError> {
    let txt = dir.join(format!("{stem}.txt"));
    fs::write(&txt, report.table(label)).map_err(|e| DataError::io(&txt, e))?;
    write_json(&dir.join(format!("{stem}.json")), report)
}


#[cfg(test)]
mod tests {
    use super::*;
    use taskmcp_core::encoder::encode_corpus;
    use taskmcp_core::{SparseCosineModel, VocabConfig};

    fn vocab() -> Vocabulary {
        Vocabulary::build(&["alpha beta", "beta gamma delta"], VocabConfig::default()).unwrap()
    }

    #[test]
    fn checkpoint_round_trip() {
        let v = vocab();
        let cfg = TowerConfig { input_dim: v.len(), hidden_dim: 3, output_dim: 2, layers: 2, dropout: 0.1 };
        let ckpt = Checkpoint {
            header: CheckpointHeader { vocab_fingerprint: v.fingerprint(), tower: cfg, train: None, best_epoch: Some(3) },
            encoder: DualEncoder::init(cfg, 9).unwrap(),
        };
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.bin");
        save_checkpoint(&p, &ckpt).unwrap();
        assert_eq!(load_checkpoint(&p, &v).unwrap(), ckpt);

        let other = Vocabulary::build(&["alpha beta zeta"], VocabConfig::default()).unwrap();
        let err = load_checkpoint(&p, &other).unwrap_err();
        assert!(err.to_string().contains("different vocabulary"));

        let bytes = fs::read(&p).unwrap();
        fs::write(&p, &bytes[..bytes.len() - 3]).unwrap();
        assert!(load_checkpoint(&p, &v).is_err());
    }

    #[test]
    fn sparse_index_round_trip() {
        let v = vocab();
        let model = SparseCosineModel { vocab: v.clone() };
        let servers: Vec<taskmcp_core::McpRecord> = serde_json::from_str(
            r#"[{"id":"m1","name":"alpha"},{"id":"m2","name":"gamma delta"},{"id":"m3","name":"nothing"}]"#,
        )
        .unwrap();
        let index = encode_corpus(&model, &servers);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("i.bin");
        save_index(&p, &index, &v.fingerprint()).unwrap();
        let (h, back) = load_index::<SparseVector>(&p).unwrap();
        assert_eq!(h.source, v.fingerprint());
        assert_eq!(back.ids(), index.ids());
        assert_eq!(back.vectors(), index.vectors());
        assert!(load_index::<DenseEmbedding>(&p).is_err());
    }
}
