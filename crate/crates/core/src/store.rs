//! File-backed document and artifact store.
//!
//! Layout under the store root:
//!
//! ```text
//! docs/<key>/document.md        OCR markdown, UTF-8
//! docs/<key>/meta.json          DocumentRecord sidecar
//! docs/<key>/patterns.<p>.json  cached PatternSet from provider <p>
//! docs/<key>/statements.jsonl   stmt/v1 records
//! docs/<key>/report.json        extraction report
//! docs/<key>/graph.json         graph export
//! docs/<key>/unfolded.jsonl     unfolded/v1 records
//! index.mtlx                    vector index snapshot
//! ```
//!
//! `<key>` is the doc_id with every byte outside `[A-Za-z0-9_-]` written as
//! `%XX`. Every file is replaced atomically by rename.

use std::collections::HashMap;
use std::fs;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::corpus::{CorpusError, Document, DocumentMeta};
use crate::index::{FlatIndex, IndexError};
use crate::jsonl::{self, JsonlError};
use crate::locator::PatternSet;
use crate::statement::{StructuredStatement, STATEMENT_SCHEMA};

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("{path}: {source}")]
    Jsonl {
        path: PathBuf,
        #[source]
        source: JsonlError,
    },
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error("document {0:?} already ingested (use replace)")]
    Duplicate(String),
    #[error("unknown document {0:?}")]
    NotFound(String),
    #[error("index snapshot {path}: {source}")]
    Index {
        path: PathBuf,
        #[source]
        source: IndexError,
    },
}

/// The metadata sidecar stored next to each document.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DocumentRecord {
    pub meta: DocumentMeta,
    /// Set once extraction finds no statements in the document.
    #[serde(default)]
    pub no_statements: bool,
}

/// Derived per-document artifacts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Artifact {
    Statements,
    Report,
    Graph,
    Unfolded,
}

impl Artifact {
    fn file_name(self) -> &'static str {
        match self {
            Artifact::Statements => "statements.jsonl",
            Artifact::Report => "report.json",
            Artifact::Graph => "graph.json",
            Artifact::Unfolded => "unfolded.jsonl",
        }
    }
}

const DOCUMENT_FILE: &str = "document.md";
const META_FILE: &str = "meta.json";
const INDEX_FILE: &str = "index.mtlx";

pub struct Store {
    root: PathBuf,
    locks: Mutex<HashMap<String, Arc<RwLock<()>>>>,
    index_lock: Mutex<()>,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> StoreError + '_ {
    move |source| StoreError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Filesystem-safe key for a doc_id.
pub fn doc_key(doc_id: &str) -> String {
    let mut out = String::with_capacity(doc_id.len());
    for b in doc_id.bytes() {
        if b.is_ascii_alphanumeric() || b == b'_' || b == b'-' {
            out.push(b as char);
        } else {
            out.push_str(&format!("%{b:02X}"));
        }
    }
    out
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), StoreError> {
    let dir = path.parent().unwrap_or(Path::new("."));
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io_err(dir))?;
    tmp.write_all(bytes).map_err(io_err(path))?;
    tmp.persist(path).map_err(|e| StoreError::Io {
        path: path.to_path_buf(),
        source: e.error,
    })?;
    Ok(())
}

fn remove_if_exists(path: &Path) -> Result<(), StoreError> {
    match fs::remove_file(path) {
        Err(e) if e.kind() != std::io::ErrorKind::NotFound => Err(io_err(path)(e)),
        _ => Ok(()),
    }
}

impl Store {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, StoreError> {
        let root = root.into();
        let docs = root.join("docs");
        fs::create_dir_all(&docs).map_err(io_err(&docs))?;
        Ok(Self {
            root,
            locks: Mutex::new(HashMap::new()),
            index_lock: Mutex::new(()),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn index_path(&self) -> PathBuf {
        self.root.join(INDEX_FILE)
    }

    fn doc_dir(&self, doc_id: &str) -> PathBuf {
        self.root.join("docs").join(doc_key(doc_id))
    }

    fn lock(&self, doc_id: &str) -> Arc<RwLock<()>> {
        self.locks
            .lock()
            .unwrap()
            .entry(doc_id.to_string())
            .or_default()
            .clone()
    }

    pub fn contains(&self, doc_id: &str) -> bool {
        self.doc_dir(doc_id).join(META_FILE).is_file()
    }

    /// Store a document. Without `replace`, an existing doc_id is an error.
    /// Replacing drops every derived artifact of the document, including its
    /// index entries.
    pub fn ingest_document(
        &self,
        markdown: &str,
        meta: DocumentMeta,
        replace: bool,
    ) -> Result<Document, StoreError> {
        let doc = Document::new(markdown, meta)?;
        let lock = self.lock(doc.doc_id());
        let _guard = lock.write().unwrap();
        let dir = self.doc_dir(doc.doc_id());
        let existed = dir.join(META_FILE).is_file();
        if existed && !replace {
            return Err(StoreError::Duplicate(doc.doc_id().to_string()));
        }
        if existed {
            self.invalidate_locked(doc.doc_id())?;
        }
        let record = DocumentRecord {
            meta: doc.meta.clone(),
            no_statements: false,
        };
        write_atomic(&dir.join(DOCUMENT_FILE), doc.markdown.as_bytes())?;
        let json = serde_json::to_vec_pretty(&record).expect("record serializes");
        write_atomic(&dir.join(META_FILE), &json)?;
        Ok(doc)
    }

    fn invalidate_locked(&self, doc_id: &str) -> Result<(), StoreError> {
        let dir = self.doc_dir(doc_id);
        if let Ok(entries) = fs::read_dir(&dir) {
            for entry in entries.flatten() {
                let name = entry.file_name();
                let name = name.to_string_lossy();
                if name != DOCUMENT_FILE && name != META_FILE {
                    remove_if_exists(&entry.path())?;
                }
            }
        }
        let _index = self.index_lock.lock().unwrap();
        let path = self.index_path();
        if path.is_file() {
            let mut index = FlatIndex::load(&path).map_err(|source| StoreError::Index {
                path: path.clone(),
                source,
            })?;
            if index.remove_doc(doc_id) > 0 {
                index.save(&path).map_err(|source| StoreError::Index { path, source })?;
            }
        }
        Ok(())
    }

    pub fn get_document(&self, doc_id: &str) -> Result<Document, StoreError> {
        let lock = self.lock(doc_id);
        let _guard = lock.read().unwrap();
        let record = self.read_record_locked(doc_id)?;
        let path = self.doc_dir(doc_id).join(DOCUMENT_FILE);
        let markdown = fs::read_to_string(&path).map_err(io_err(&path))?;
        Ok(Document::new(markdown, record.meta)?)
    }

    pub fn document_record(&self, doc_id: &str) -> Result<DocumentRecord, StoreError> {
        let lock = self.lock(doc_id);
        let _guard = lock.read().unwrap();
        self.read_record_locked(doc_id)
    }

    fn read_record_locked(&self, doc_id: &str) -> Result<DocumentRecord, StoreError> {
        let path = self.doc_dir(doc_id).join(META_FILE);
        let bytes = match fs::read(&path) {
            Ok(b) => b,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                return Err(StoreError::NotFound(doc_id.to_string()))
            }
            Err(e) => return Err(io_err(&path)(e)),
        };
        serde_json::from_slice(&bytes).map_err(|source| StoreError::Json { path, source })
    }

    pub fn set_no_statements(&self, doc_id: &str, flag: bool) -> Result<(), StoreError> {
        let lock = self.lock(doc_id);
        let _guard = lock.write().unwrap();
        let mut record = self.read_record_locked(doc_id)?;
        if record.no_statements != flag {
            record.no_statements = flag;
            let json = serde_json::to_vec_pretty(&record).expect("record serializes");
            write_atomic(&self.doc_dir(doc_id).join(META_FILE), &json)?;
        }
        Ok(())
    }

    /// All stored doc_ids, sorted.
    pub fn doc_ids(&self) -> Result<Vec<String>, StoreError> {
        let docs = self.root.join("docs");
        let mut ids = Vec::new();
        for entry in fs::read_dir(&docs).map_err(io_err(&docs))? {
            let entry = entry.map_err(io_err(&docs))?;
            let path = entry.path().join(META_FILE);
            if !path.is_file() {
                continue;
            }
            let bytes = fs::read(&path).map_err(io_err(&path))?;
            let record: DocumentRecord =
                serde_json::from_slice(&bytes).map_err(|source| StoreError::Json { path, source })?;
            ids.push(record.meta.doc_id);
        }
        ids.sort();
        Ok(ids)
    }

    fn artifact_path(&self, doc_id: &str, artifact: Artifact) -> PathBuf {
        self.doc_dir(doc_id).join(artifact.file_name())
    }

    fn ensure_doc(&self, doc_id: &str) -> Result<(), StoreError> {
        if self.contains(doc_id) {
            Ok(())
        } else {
            Err(StoreError::NotFound(doc_id.to_string()))
        }
    }

    /// Write a JSON artifact (report or graph).
    pub fn write_json<T: Serialize>(&self, doc_id: &str, artifact: Artifact, value: &T) -> Result<(), StoreError> {
        self.ensure_doc(doc_id)?;
        let lock = self.lock(doc_id);
        let _guard = lock.write().unwrap();
        let json = serde_json::to_vec_pretty(value).expect("artifact serializes");
        write_atomic(&self.artifact_path(doc_id, artifact), &json)
    }

    pub fn read_json<T: DeserializeOwned>(&self, doc_id: &str, artifact: Artifact) -> Result<Option<T>, StoreError> {
        let lock = self.lock(doc_id);
        let _guard = lock.read().unwrap();
        let path = self.artifact_path(doc_id, artifact);
        match fs::read(&path) {
            Ok(bytes) => serde_json::from_slice(&bytes)
                .map(Some)
                .map_err(|source| StoreError::Json { path, source }),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(io_err(&path)(e)),
        }
    }

    /// Write schema-tagged JSON Lines (statements or unfolded statements).
    pub fn write_records<T: Serialize>(
        &self,
        doc_id: &str,
        artifact: Artifact,
        schema: &str,
        items: &[T],
    ) -> Result<(), StoreError> {
        self.ensure_doc(doc_id)?;
        let lock = self.lock(doc_id);
        let _guard = lock.write().unwrap();
        let path = self.artifact_path(doc_id, artifact);
        let mut buf = Vec::new();
        jsonl::write_versioned(&mut buf, schema, items).map_err(|source| StoreError::Jsonl {
            path: path.clone(),
            source,
        })?;
        write_atomic(&path, &buf)
    }

    pub fn read_records<T: DeserializeOwned>(
        &self,
        doc_id: &str,
        artifact: Artifact,
        schema: &str,
    ) -> Result<Option<Vec<T>>, StoreError> {
        let lock = self.lock(doc_id);
        let _guard = lock.read().unwrap();
        let path = self.artifact_path(doc_id, artifact);
        match fs::File::open(&path) {
            Ok(f) => jsonl::read_versioned(BufReader::new(f), schema)
                .map(Some)
                .map_err(|source| StoreError::Jsonl { path, source }),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(io_err(&path)(e)),
        }
    }

    pub fn write_statements(&self, doc_id: &str, statements: &[StructuredStatement]) -> Result<(), StoreError> {
        self.write_records(doc_id, Artifact::Statements, STATEMENT_SCHEMA, statements)
    }

    /// Extracted statements; empty when extraction has not run.
    pub fn read_statements(&self, doc_id: &str) -> Result<Vec<StructuredStatement>, StoreError> {
        Ok(self
            .read_records(doc_id, Artifact::Statements, STATEMENT_SCHEMA)?
            .unwrap_or_default())
    }

    fn patterns_path(&self, doc_id: &str, provider: &str) -> PathBuf {
        self.doc_dir(doc_id).join(format!("patterns.{}.json", doc_key(provider)))
    }

    pub fn write_patterns(&self, provider: &str, set: &PatternSet) -> Result<(), StoreError> {
        self.ensure_doc(&set.doc_id)?;
        let lock = self.lock(&set.doc_id);
        let _guard = lock.write().unwrap();
        let json = serde_json::to_vec_pretty(set).expect("pattern set serializes");
        write_atomic(&self.patterns_path(&set.doc_id, provider), &json)
    }

    pub fn read_patterns(&self, doc_id: &str, provider: &str) -> Result<Option<PatternSet>, StoreError> {
        let lock = self.lock(doc_id);
        let _guard = lock.read().unwrap();
        let path = self.patterns_path(doc_id, provider);
        match fs::read(&path) {
            Ok(bytes) => serde_json::from_slice(&bytes)
                .map(Some)
                .map_err(|source| StoreError::Json { path, source }),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(io_err(&path)(e)),
        }
    }

    pub fn save_index(&self, index: &FlatIndex) -> Result<(), StoreError> {
        let _guard = self.index_lock.lock().unwrap();
        let path = self.index_path();
        index.save(&path).map_err(|source| StoreError::Index { path, source })
    }

    /// The saved index, if one exists.
    pub fn load_index(&self) -> Result<Option<FlatIndex>, StoreError> {
        let _guard = self.index_lock.lock().unwrap();
        let path = self.index_path();
        if !path.is_file() {
            return Ok(None);
        }
        FlatIndex::load(&path)
            .map(Some)
            .map_err(|source| StoreError::Index { path, source })
    }
}

pub(crate) fn write_file_atomic(path: &Path, bytes: &[u8]) -> Result<(), std::io::Error> {
    write_atomic(path, bytes).map_err(|e| match e {
        StoreError::Io { source, .. } => source,
        other => std::io::Error::other(other.to_string()),
    })
}
