//! Journal selection from ICM citation counts, and the document types the
//! rest of the pipeline consumes.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::text::CharIndex;

/// Inclusive citation window used for journal selection.
pub const DEFAULT_YEAR_LO: u32 = 2007;
pub const DEFAULT_YEAR_HI: u32 = 2021;
/// A journal needs strictly more than this many ICM citations.
pub const DEFAULT_CITATION_THRESHOLD: u64 = 50;
/// A journal needs at least this many papers in the window.
pub const DEFAULT_MIN_PAPERS: u64 = 100;

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum CorpusError {
    #[error("duplicate journal_id {0:?} in metadata")]
    DuplicateJournal(String),
    #[error("document markdown is empty")]
    EmptyMarkdown,
    #[error("invalid document metadata: {0}")]
    InvalidMeta(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JournalRecord {
    pub journal_id: String,
    #[serde(default)]
    pub name: String,
    #[serde(default)]
    pub papers_2007_2021: u64,
    #[serde(default)]
    pub icm_citations_2007_2021: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CitationEvent {
    pub citing_proceeding_id: String,
    pub cited_journal_id: String,
    pub cited_paper_year: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceKind {
    JournalPaper,
    Textbook,
}

impl SourceKind {
    pub fn as_str(self) -> &'static str {
        match self {
            SourceKind::JournalPaper => "journal_paper",
            SourceKind::Textbook => "textbook",
        }
    }
}

impl std::str::FromStr for SourceKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "journal_paper" => Ok(SourceKind::JournalPaper),
            "textbook" => Ok(SourceKind::Textbook),
            other => Err(format!("unknown source kind {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DocumentMeta {
    pub doc_id: String,
    pub source_kind: SourceKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub journal_id: Option<String>,
    pub year: u32,
    #[serde(default)]
    pub title: String,
}

impl DocumentMeta {
    pub fn validate(&self) -> Result<(), CorpusError> {
        if self.doc_id.trim().is_empty() {
            return Err(CorpusError::InvalidMeta("doc_id is empty".into()));
        }
        if self.year == 0 {
            return Err(CorpusError::InvalidMeta(format!(
                "{}: year must be positive",
                self.doc_id
            )));
        }
        if self.source_kind == SourceKind::JournalPaper && self.journal_id.is_none() {
            return Err(CorpusError::InvalidMeta(format!(
                "{}: journal papers need a journal_id",
                self.doc_id
            )));
        }
        Ok(())
    }
}

/// One OCR-markdown paper or textbook.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Document {
    pub meta: DocumentMeta,
    pub markdown: String,
    #[serde(skip)]
    chars: OnceLock<CharIndex>,
}

impl PartialEq for Document {
    fn eq(&self, other: &Self) -> bool {
        self.meta == other.meta && self.markdown == other.markdown
    }
}

impl Document {
    pub fn new(markdown: impl Into<String>, meta: DocumentMeta) -> Result<Self, CorpusError> {
        let markdown = markdown.into();
        if markdown.trim().is_empty() {
            return Err(CorpusError::EmptyMarkdown);
        }
        meta.validate()?;
        Ok(Self {
            meta,
            markdown,
            chars: OnceLock::new(),
        })
    }

    pub fn doc_id(&self) -> &str {
        &self.meta.doc_id
    }

    pub fn char_index(&self) -> &CharIndex {
        self.chars.get_or_init(|| CharIndex::new(&self.markdown))
    }

    /// Length in chars, the unit of every span offset.
    pub fn len_chars(&self) -> usize {
        self.char_index().len_chars()
    }

    /// Text between char offsets `[start, end)`, clamped to the document.
    pub fn slice(&self, start: usize, end: usize) -> &str {
        self.char_index().slice(&self.markdown, start, end)
    }
}

/// Per-journal citation counts; journals never seen count as zero.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CitationCounts(pub BTreeMap<String, u64>);

impl CitationCounts {
    pub fn get(&self, journal_id: &str) -> u64 {
        self.0.get(journal_id).copied().unwrap_or(0)
    }

    pub fn total(&self) -> u64 {
        self.0.values().sum()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Count citation events whose cited paper falls in `[year_lo, year_hi]`.
///
/// Every event counts, including repeated citations from one proceeding to
/// the same paper. A reversed window is empty.
pub fn count_icm_citations(events: &[CitationEvent], year_lo: u32, year_hi: u32) -> CitationCounts {
    let mut counts = BTreeMap::new();
    for ev in events {
        if (year_lo..=year_hi).contains(&ev.cited_paper_year) {
            *counts.entry(ev.cited_journal_id.clone()).or_insert(0) += 1;
        }
    }
    CitationCounts(counts)
}

/// Overwrite each record's citation count with the counted value.
pub fn apply_citation_counts(records: &mut [JournalRecord], counts: &CitationCounts) {
    for r in records {
        r.icm_citations_2007_2021 = counts.get(&r.journal_id);
    }
}

/// Journals with `icm_citations > citation_threshold` and
/// `papers >= min_papers`.
pub fn select_journals(
    records: &[JournalRecord],
    citation_threshold: u64,
    min_papers: u64,
) -> Result<BTreeSet<String>, CorpusError> {
    let mut seen = HashSet::with_capacity(records.len());
    for r in records {
        if !seen.insert(r.journal_id.as_str()) {
            return Err(CorpusError::DuplicateJournal(r.journal_id.clone()));
        }
    }
    Ok(records
        .iter()
        .filter(|r| r.icm_citations_2007_2021 > citation_threshold && r.papers_2007_2021 >= min_papers)
        .map(|r| r.journal_id.clone())
        .collect())
}
