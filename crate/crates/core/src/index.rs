//! Exact cosine top-k over unit-normalized vectors, with a binary snapshot
//! format.
//!
//! Snapshot layout, all integers little-endian:
//!
//! ```text
//! magic   b"MTLX"
//! u32     format version (1)
//! u32     dimension d
//! u64     entry count
//! entry*  u32 id length, id bytes (UTF-8),
//!         u32 payload length, payload JSON bytes,
//!         d x f32 (IEEE-754)
//! ```

use std::cmp::Ordering;
use std::collections::{BTreeSet, HashMap};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::sync::{Arc, RwLock};

use serde::{Deserialize, Serialize};

use crate::corpus::SourceKind;
use crate::statement::StatementKind;

pub const SNAPSHOT_MAGIC: [u8; 4] = *b"MTLX";
pub const SNAPSHOT_VERSION: u32 = 1;
pub const DEFAULT_INSTRUCTION: &str =
    "Given a mathematical query, retrieve theorem statements that answer or match it:";

#[derive(Debug, thiserror::Error)]
pub enum IndexError {
    #[error("vector has dimension {got}, index has {expected}")]
    Dimension { expected: usize, got: usize },
    #[error("vector contains a non-finite value")]
    NonFinite,
    #[error("zero vector cannot be normalized")]
    ZeroVector,
    #[error("{0:?} is already indexed")]
    DuplicateId(String),
    #[error("snapshot i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad snapshot: {0}")]
    Format(String),
}

/// Scale to unit L2 norm. Rejects non-finite and zero vectors.
pub fn normalize(values: &[f32]) -> Result<Vec<f32>, IndexError> {
    if values.iter().any(|v| !v.is_finite()) {
        return Err(IndexError::NonFinite);
    }
    let norm = values.iter().map(|&v| f64::from(v) * f64::from(v)).sum::<f64>().sqrt();
    if norm == 0.0 {
        return Err(IndexError::ZeroVector);
    }
    Ok(values.iter().map(|&v| (f64::from(v) / norm) as f32).collect())
}

/// Dot product accumulated in f64, in index order.
pub fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| f64::from(x) * f64::from(y)).sum()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Payload {
    pub doc_id: String,
    #[serde(default)]
    pub label: Option<String>,
    pub kind: StatementKind,
    pub year: u32,
    #[serde(default)]
    pub journal_id: Option<String>,
    pub source_kind: SourceKind,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IndexEntry {
    pub stmt_id: String,
    pub vector: Vec<f32>,
    pub payload: Payload,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchFilters {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kinds: Option<BTreeSet<StatementKind>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub year_from: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub year_to: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub journal_ids: Option<BTreeSet<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_kind: Option<SourceKind>,
}

impl SearchFilters {
    pub fn matches(&self, p: &Payload) -> bool {
        self.kinds.as_ref().is_none_or(|k| k.contains(&p.kind))
            && self.year_from.is_none_or(|y| p.year >= y)
            && self.year_to.is_none_or(|y| p.year <= y)
            && self
                .journal_ids
                .as_ref()
                .is_none_or(|js| p.journal_id.as_ref().is_some_and(|j| js.contains(j)))
            && self.source_kind.is_none_or(|s| p.source_kind == s)
    }

    pub fn is_empty(&self) -> bool {
        *self == SearchFilters::default()
    }
}

/// A retrieval query before embedding.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Query {
    pub text: String,
    pub k: usize,
    #[serde(default)]
    pub filters: SearchFilters,
}

/// The text embedded for a query: the instruction, a newline, then the
/// query. Only queries go through here; indexed statements are embedded
/// as-is.
pub fn build_query_text(query: &Query, instruction: &str) -> String {
    if instruction.is_empty() {
        query.text.clone()
    } else {
        format!("{instruction}\n{}", query.text)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hit {
    pub stmt_id: String,
    pub score: f64,
    pub payload: Payload,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    pub hits: Vec<Hit>,
}

#[derive(Debug, Default)]
pub struct AddReport {
    pub inserted: usize,
    pub replaced: usize,
    pub rejected: Vec<(String, IndexError)>,
}

impl AddReport {
    pub fn added(&self) -> usize {
        self.inserted + self.replaced
    }
}

/// Exact flat index. Vectors are stored contiguously, unit-normalized.
#[derive(Debug, Clone, PartialEq)]
pub struct FlatIndex {
    dimension: usize,
    ids: Vec<String>,
    payloads: Vec<Payload>,
    vectors: Vec<f32>,
    position: HashMap<String, usize>,
}

impl FlatIndex {
    pub fn new(dimension: usize) -> Self {
        Self {
            dimension,
            ids: Vec::new(),
            payloads: Vec::new(),
            vectors: Vec::new(),
            position: HashMap::new(),
        }
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn contains(&self, stmt_id: &str) -> bool {
        self.position.contains_key(stmt_id)
    }

    pub fn vector(&self, stmt_id: &str) -> Option<&[f32]> {
        let i = *self.position.get(stmt_id)?;
        Some(&self.vectors[i * self.dimension..(i + 1) * self.dimension])
    }

    pub fn payload(&self, stmt_id: &str) -> Option<&Payload> {
        self.position.get(stmt_id).map(|&i| &self.payloads[i])
    }

    /// Stored ids in insertion order.
    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    /// Insert entries, normalizing each vector. With `replace`, an existing
    /// id is overwritten in place; otherwise it is rejected. Bad entries are
    /// reported and skipped, the rest still go in.
    pub fn add(&mut self, entries: Vec<IndexEntry>, replace: bool) -> AddReport {
        let mut report = AddReport::default();
        for e in entries {
            if e.vector.len() != self.dimension {
                let err = IndexError::Dimension {
                    expected: self.dimension,
                    got: e.vector.len(),
                };
                report.rejected.push((e.stmt_id, err));
                continue;
            }
            let unit = match normalize(&e.vector) {
                Ok(v) => v,
                Err(err) => {
                    report.rejected.push((e.stmt_id, err));
                    continue;
                }
            };
            match self.position.get(&e.stmt_id) {
                Some(&i) if replace => {
                    self.vectors[i * self.dimension..(i + 1) * self.dimension].copy_from_slice(&unit);
                    self.payloads[i] = e.payload;
                    report.replaced += 1;
                }
                Some(_) => {
                    let id = e.stmt_id.clone();
                    report.rejected.push((e.stmt_id, IndexError::DuplicateId(id)));
                }
                None => {
                    self.position.insert(e.stmt_id.clone(), self.ids.len());
                    self.ids.push(e.stmt_id);
                    self.payloads.push(e.payload);
                    self.vectors.extend_from_slice(&unit);
                    report.inserted += 1;
                }
            }
        }
        report
    }

    /// Drop every entry whose payload belongs to `doc_id`; returns how many.
    pub fn remove_doc(&mut self, doc_id: &str) -> usize {
        let keep: Vec<bool> = self.payloads.iter().map(|p| p.doc_id != doc_id).collect();
        let removed = keep.iter().filter(|k| !**k).count();
        if removed == 0 {
            return 0;
        }
        let d = self.dimension;
        let mut next = FlatIndex::new(d);
        for (i, k) in keep.into_iter().enumerate() {
            if k {
                next.position.insert(self.ids[i].clone(), next.ids.len());
                next.ids.push(self.ids[i].clone());
                next.payloads.push(self.payloads[i].clone());
                next.vectors.extend_from_slice(&self.vectors[i * d..(i + 1) * d]);
            }
        }
        *self = next;
        removed
    }

    /// Exact top-`k` by cosine similarity among entries passing `filters`.
    /// Ties are broken by ascending stmt_id.
    pub fn search(&self, query: &[f32], k: usize, filters: &SearchFilters) -> Result<SearchResult, IndexError> {
        if query.len() != self.dimension {
            return Err(IndexError::Dimension {
                expected: self.dimension,
                got: query.len(),
            });
        }
        if k == 0 {
            return Ok(SearchResult::default());
        }
        let q = normalize(query)?;
        let d = self.dimension;
        let mut scored: Vec<(f64, usize)> = (0..self.len())
            .filter(|&i| filters.matches(&self.payloads[i]))
            .map(|i| (dot(&self.vectors[i * d..(i + 1) * d], &q), i))
            .collect();
        let rank = |a: &(f64, usize), b: &(f64, usize)| -> Ordering {
            b.0.total_cmp(&a.0).then_with(|| self.ids[a.1].cmp(&self.ids[b.1]))
        };
        if k < scored.len() {
            scored.select_nth_unstable_by(k - 1, rank);
            scored.truncate(k);
        }
        scored.sort_by(rank);
        Ok(SearchResult {
            hits: scored
                .into_iter()
                .map(|(score, i)| Hit {
                    stmt_id: self.ids[i].clone(),
                    score,
                    payload: self.payloads[i].clone(),
                })
                .collect(),
        })
    }

    pub fn write_snapshot<W: Write>(&self, w: &mut W) -> Result<(), IndexError> {
        w.write_all(&SNAPSHOT_MAGIC)?;
        w.write_all(&SNAPSHOT_VERSION.to_le_bytes())?;
        w.write_all(&(self.dimension as u32).to_le_bytes())?;
        w.write_all(&(self.len() as u64).to_le_bytes())?;
        let d = self.dimension;
        for i in 0..self.len() {
            let id = self.ids[i].as_bytes();
            w.write_all(&(id.len() as u32).to_le_bytes())?;
            w.write_all(id)?;
            let payload = serde_json::to_vec(&self.payloads[i]).expect("payload serializes");
            w.write_all(&(payload.len() as u32).to_le_bytes())?;
            w.write_all(&payload)?;
            for v in &self.vectors[i * d..(i + 1) * d] {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_snapshot<R: Read>(r: &mut R) -> Result<Self, IndexError> {
        fn take<const N: usize, R: Read>(r: &mut R) -> Result<[u8; N], IndexError> {
            let mut buf = [0u8; N];
            r.read_exact(&mut buf)
                .map_err(|e| IndexError::Format(format!("truncated snapshot: {e}")))?;
            Ok(buf)
        }
        fn bytes<R: Read>(r: &mut R, n: usize) -> Result<Vec<u8>, IndexError> {
            let mut buf = Vec::new();
            r.take(n as u64).read_to_end(&mut buf)?;
            if buf.len() != n {
                return Err(IndexError::Format("truncated snapshot".into()));
            }
            Ok(buf)
        }
        if take::<4, _>(r)? != SNAPSHOT_MAGIC {
            return Err(IndexError::Format("bad magic".into()));
        }
        let version = u32::from_le_bytes(take(r)?);
        if version != SNAPSHOT_VERSION {
            return Err(IndexError::Format(format!("unsupported version {version}")));
        }
        let dimension = u32::from_le_bytes(take(r)?) as usize;
        let count = u64::from_le_bytes(take(r)?);
        let mut index = FlatIndex::new(dimension);
        for _ in 0..count {
            let id_len = u32::from_le_bytes(take(r)?) as usize;
            let id = String::from_utf8(bytes(r, id_len)?)
                .map_err(|_| IndexError::Format("id is not UTF-8".into()))?;
            let payload_len = u32::from_le_bytes(take(r)?) as usize;
            let payload: Payload = serde_json::from_slice(&bytes(r, payload_len)?)
                .map_err(|e| IndexError::Format(format!("payload of {id}: {e}")))?;
            if index.position.insert(id.clone(), index.ids.len()).is_some() {
                return Err(IndexError::DuplicateId(id));
            }
            for _ in 0..dimension {
                index.vectors.push(f32::from_le_bytes(take(r)?));
            }
            index.ids.push(id);
            index.payloads.push(payload);
        }
        let mut trailing = [0u8; 1];
        if r.read(&mut trailing)? != 0 {
            return Err(IndexError::Format("trailing bytes after last entry".into()));
        }
        Ok(index)
    }

    pub fn save(&self, path: &Path) -> Result<(), IndexError> {
        let mut buf = BufWriter::new(Vec::new());
        self.write_snapshot(&mut buf)?;
        let bytes = buf.into_inner().map_err(|e| e.into_error())?;
        crate::store::write_file_atomic(path, &bytes)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, IndexError> {
        let mut r = BufReader::new(std::fs::File::open(path)?);
        Self::read_snapshot(&mut r)
    }
}

/// An index shared between readers and an occasional writer. Readers hold
/// an `Arc` to a complete index; writers swap in a new one.
#[derive(Debug)]
pub struct SharedIndex {
    current: RwLock<Arc<FlatIndex>>,
}

impl SharedIndex {
    pub fn new(index: FlatIndex) -> Self {
        Self {
            current: RwLock::new(Arc::new(index)),
        }
    }

    pub fn snapshot(&self) -> Arc<FlatIndex> {
        self.current.read().unwrap().clone()
    }

    pub fn replace(&self, index: FlatIndex) {
        *self.current.write().unwrap() = Arc::new(index);
    }

    /// Apply `f` to a copy and publish the result.
    pub fn update<T>(&self, f: impl FnOnce(&mut FlatIndex) -> T) -> T {
        let mut guard = self.current.write().unwrap();
        let mut next = (**guard).clone();
        let out = f(&mut next);
        *guard = Arc::new(next);
        out
    }
}
