//! Exact flat index over onboarded example questions.
//!
//! Retrieval is scoped to a dataset and ranks every entry of that dataset by
//! cosine similarity; ties are broken by ascending id so results are fully
//! deterministic. The on-disk form is a single versioned file:
//!
//! ```text
//! "GENIDX1" | dim: u32 | count: u32 | count × (len: u32 | record)
//! record = id: u64 | dataset | question | sql | tag_count: u32 | tags | dim × f32
//! ```
//!
//! Strings are a `u32` byte length followed by UTF-8; all integers and floats
//! are little-endian.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::embedding::{cosine_similarity, EmbeddingVector};

pub const MAGIC: &[u8; 7] = b"GENIDX1";

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum IndexError {
    #[error("embedding dimension {got} does not match index dimension {expected}")]
    Dimension { expected: usize, got: usize },
    #[error("question already present in dataset `{dataset_id}`: {question}")]
    Duplicate { dataset_id: String, question: String },
    #[error("entry field `{0}` must be non-empty")]
    EmptyField(&'static str),
    #[error("dataset `{0}` is unknown to the index")]
    UnknownDataset(String),
    #[error("k must be at least 1")]
    ZeroK,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum FormatError {
    #[error("bad magic, not an index file")]
    BadMagic,
    #[error("unsupported index version `{0}`")]
    Version(String),
    #[error("file truncated at byte {0}")]
    Truncated(usize),
    #[error("invalid UTF-8 at byte {0}")]
    Utf8(usize),
    #[error("corrupt record {record}: {detail}")]
    Corrupt { record: usize, detail: String },
}

/// An example to be onboarded; the index assigns the id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NewEntry {
    pub dataset_id: String,
    pub question: String,
    pub sql: String,
    pub embedding: EmbeddingVector,
    #[serde(default)]
    pub tags: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExampleEntry {
    pub id: u64,
    pub dataset_id: String,
    pub question: String,
    pub sql: String,
    pub embedding: EmbeddingVector,
    #[serde(default)]
    pub tags: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SearchHit<'a> {
    pub entry: &'a ExampleEntry,
    pub score: f64,
    /// 1-based.
    pub rank: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VectorIndex {
    dim: usize,
    next_id: u64,
    entries: Vec<ExampleEntry>,
    by_dataset: BTreeMap<String, Vec<usize>>,
    questions: BTreeSet<(String, String)>,
}

impl VectorIndex {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            next_id: 1,
            entries: Vec::new(),
            by_dataset: BTreeMap::new(),
            questions: BTreeSet::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[ExampleEntry] {
        &self.entries
    }

    pub fn get(&self, id: u64) -> Option<&ExampleEntry> {
        self.entries
            .binary_search_by_key(&id, |e| e.id)
            .ok()
            .map(|pos| &self.entries[pos])
    }

    /// Makes a dataset known even before it has entries.
    pub fn register_dataset(&mut self, dataset_id: &str) {
        self.by_dataset.entry(dataset_id.into()).or_default();
    }

    pub fn has_dataset(&self, dataset_id: &str) -> bool {
        self.by_dataset.contains_key(dataset_id)
    }

    pub fn datasets(&self) -> impl Iterator<Item = &str> {
        self.by_dataset.keys().map(String::as_str)
    }

    /// Entries of one dataset, in id order.
    pub fn dataset_entries<'a>(&'a self, dataset_id: &str) -> impl Iterator<Item = &'a ExampleEntry> {
        self.by_dataset
            .get(dataset_id)
            .into_iter()
            .flatten()
            .map(|pos| &self.entries[*pos])
    }

    pub fn dataset_len(&self, dataset_id: &str) -> usize {
        self.by_dataset.get(dataset_id).map_or(0, Vec::len)
    }

    /// Checks an entry without inserting it.
    pub fn validate(&self, entry: &NewEntry) -> Result<(), IndexError> {
        if entry.embedding.dim() != self.dim {
            return Err(IndexError::Dimension { expected: self.dim, got: entry.embedding.dim() });
        }
        if entry.dataset_id.is_empty() {
            return Err(IndexError::EmptyField("dataset_id"));
        }
        if entry.question.trim().is_empty() {
            return Err(IndexError::EmptyField("question"));
        }
        if entry.sql.trim().is_empty() {
            return Err(IndexError::EmptyField("sql"));
        }
        if self.questions.contains(&(entry.dataset_id.clone(), entry.question.clone())) {
            return Err(IndexError::Duplicate {
                dataset_id: entry.dataset_id.clone(),
                question: entry.question.clone(),
            });
        }
        Ok(())
    }

    pub fn add_entry(&mut self, entry: NewEntry) -> Result<u64, IndexError> {
        self.validate(&entry)?;
        let id = self.next_id;
        self.insert(ExampleEntry {
            id,
            dataset_id: entry.dataset_id,
            question: entry.question,
            sql: entry.sql,
            embedding: entry.embedding,
            tags: entry.tags,
        });
        Ok(id)
    }

    /// Validates the whole batch before inserting any of it.
    pub fn add_all(&mut self, entries: Vec<NewEntry>) -> Result<Vec<u64>, (usize, IndexError)> {
        let mut seen = BTreeSet::new();
        for (i, e) in entries.iter().enumerate() {
            self.validate(e).map_err(|err| (i, err))?;
            if !seen.insert((e.dataset_id.as_str(), e.question.as_str())) {
                return Err((
                    i,
                    IndexError::Duplicate { dataset_id: e.dataset_id.clone(), question: e.question.clone() },
                ));
            }
        }
        Ok(entries
            .into_iter()
            .map(|e| self.add_entry(e).expect("validated above"))
            .collect())
    }

    fn insert(&mut self, entry: ExampleEntry) {
        self.next_id = self.next_id.max(entry.id + 1);
        self.questions.insert((entry.dataset_id.clone(), entry.question.clone()));
        self.by_dataset
            .entry(entry.dataset_id.clone())
            .or_default()
            .push(self.entries.len());
        self.entries.push(entry);
    }

    /// Top-`k` entries of `dataset_id` by cosine similarity to `query`.
    pub fn search(&self, query: &EmbeddingVector, k: usize, dataset_id: &str) -> Result<Vec<SearchHit<'_>>, IndexError> {
        if k == 0 {
            return Err(IndexError::ZeroK);
        }
        if query.dim() != self.dim {
            return Err(IndexError::Dimension { expected: self.dim, got: query.dim() });
        }
        let positions = self
            .by_dataset
            .get(dataset_id)
            .ok_or_else(|| IndexError::UnknownDataset(dataset_id.into()))?;
        let mut scored: Vec<(f64, &ExampleEntry)> = positions
            .iter()
            .map(|pos| {
                let entry = &self.entries[*pos];
                let score = cosine_similarity(query, &entry.embedding).expect("dimension checked on insert");
                (score, entry)
            })
            .collect();
        let order = |a: &(f64, &ExampleEntry), b: &(f64, &ExampleEntry)| -> Ordering {
            b.0.total_cmp(&a.0).then(a.1.id.cmp(&b.1.id))
        };
        if scored.len() > k {
            scored.select_nth_unstable_by(k - 1, order);
            scored.truncate(k);
        }
        scored.sort_unstable_by(order);
        Ok(scored
            .into_iter()
            .enumerate()
            .map(|(i, (score, entry))| SearchHit { entry, score, rank: i + 1 })
            .collect())
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + self.entries.len() * (self.dim * 4 + 64));
        out.extend_from_slice(MAGIC);
        put_u32(&mut out, self.dim as u32);
        put_u32(&mut out, self.entries.len() as u32);
        for e in &self.entries {
            let mut rec = Vec::new();
            rec.extend_from_slice(&e.id.to_le_bytes());
            put_str(&mut rec, &e.dataset_id);
            put_str(&mut rec, &e.question);
            put_str(&mut rec, &e.sql);
            put_u32(&mut rec, e.tags.len() as u32);
            for t in &e.tags {
                put_str(&mut rec, t);
            }
            for v in e.embedding.values() {
                rec.extend_from_slice(&v.to_le_bytes());
            }
            put_u32(&mut out, rec.len() as u32);
            out.extend_from_slice(&rec);
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, FormatError> {
        let mut r = Reader { bytes, pos: 0 };
        let magic = r.take(MAGIC.len())?;
        if magic != MAGIC {
            if magic.starts_with(b"GENIDX") {
                return Err(FormatError::Version(String::from_utf8_lossy(&magic[6..]).into_owned()));
            }
            return Err(FormatError::BadMagic);
        }
        let dim = r.u32()? as usize;
        let count = r.u32()? as usize;
        let mut index = VectorIndex::new(dim);
        for record in 0..count {
            let len = r.u32()? as usize;
            let end = r.pos.checked_add(len).filter(|e| *e <= bytes.len()).ok_or(FormatError::Truncated(bytes.len()))?;
            let id = u64::from_le_bytes(r.take(8)?.try_into().expect("8 bytes"));
            let dataset_id = r.string()?;
            let question = r.string()?;
            let sql = r.string()?;
            let tag_count = r.u32()? as usize;
            let tags = (0..tag_count).map(|_| r.string()).collect::<Result<Vec<_>, _>>()?;
            let values = (0..dim)
                .map(|_| r.take(4).map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes"))))
                .collect::<Result<Vec<_>, _>>()?;
            if r.pos != end {
                return Err(FormatError::Corrupt { record, detail: format!("length prefix {len} disagrees with contents") });
            }
            let embedding = EmbeddingVector::new(values)
                .map_err(|e| FormatError::Corrupt { record, detail: format!("{e}") })?;
            if index.entries.last().is_some_and(|last| last.id >= id) {
                return Err(FormatError::Corrupt { record, detail: format!("id {id} out of order") });
            }
            if index.questions.contains(&(dataset_id.clone(), question.clone())) {
                return Err(FormatError::Corrupt { record, detail: "duplicate question".into() });
            }
            index.insert(ExampleEntry { id, dataset_id, question, sql, embedding, tags });
        }
        if r.pos != bytes.len() {
            return Err(FormatError::Corrupt { record: count, detail: format!("{} trailing bytes", bytes.len() - r.pos) });
        }
        Ok(index)
    }
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    put_u32(out, s.len() as u32);
    out.extend_from_slice(s.as_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], FormatError> {
        let end = self.pos.checked_add(n).filter(|e| *e <= self.bytes.len()).ok_or(FormatError::Truncated(self.bytes.len()))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32, FormatError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn string(&mut self) -> Result<String, FormatError> {
        let len = self.u32()? as usize;
        let at = self.pos;
        let raw = self.take(len)?;
        core::str::from_utf8(raw).map(String::from).map_err(|_| FormatError::Utf8(at))
    }
}
