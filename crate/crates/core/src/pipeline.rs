//! Store-driven pipeline steps: locate, extract, graph, unfold, index.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::config::{Components, PipelineConfig};
use crate::embed::EmbedError;
use crate::graph::{build_document_graph, unfold, GraphError, GraphExport, UnfoldedStatement, UNFOLDED_SCHEMA};
use crate::index::{build_query_text, AddReport, FlatIndex, IndexEntry, IndexError, Payload, Query, SearchResult};
use crate::locator::{locate_candidates, CandidateSpan, LocateError, ProviderError};
use crate::statement::StructuredStatement;
use crate::store::{Artifact, Store, StoreError};
use crate::structurer::{extract_statements, ExtractionReport, StructureError};

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error(transparent)]
    Locate(#[from] LocateError),
    #[error(transparent)]
    Structure(#[from] StructureError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    Index(#[from] IndexError),
    #[error("{doc_id}: no {what} yet; run the earlier step first")]
    Missing { doc_id: String, what: &'static str },
    #[error("query text is empty")]
    EmptyQuery,
}

/// Per-document outcome of a full run.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DocSummary {
    pub doc_id: String,
    pub candidates: usize,
    pub statements: usize,
    pub low_confidence: usize,
    pub edges: usize,
    pub removed_edges: usize,
    pub depth: usize,
}

pub struct Pipeline {
    config: PipelineConfig,
    store: Arc<Store>,
    components: Components,
}

impl Pipeline {
    pub fn new(config: PipelineConfig, store: Arc<Store>, components: Components) -> Self {
        Self {
            config,
            store,
            components,
        }
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    pub fn store(&self) -> &Arc<Store> {
        &self.store
    }

    pub fn components(&self) -> &Components {
        &self.components
    }

    pub fn locate(&self, doc_id: &str) -> Result<Vec<CandidateSpan>, PipelineError> {
        let doc = self.store.get_document(doc_id)?;
        let patterns = self.components.provider.propose(&doc)?;
        Ok(locate_candidates(&doc, &patterns, &self.config.locate_options())?)
    }

    /// Locate and structure one document, writing its statements and report.
    /// A document without statements is flagged `no_statements`.
    pub fn extract(&self, doc_id: &str) -> Result<(Vec<StructuredStatement>, ExtractionReport), PipelineError> {
        let doc = self.store.get_document(doc_id)?;
        let patterns = self.components.provider.propose(&doc)?;
        let candidates = locate_candidates(&doc, &patterns, &self.config.locate_options())?;
        let (statements, mut report) = extract_statements(
            &doc,
            &candidates,
            self.components.structurer.as_ref(),
            &self.config.extract_options(),
        )?;
        report.patterns = patterns.patterns.len();
        self.store.write_statements(doc_id, &statements)?;
        self.store.write_json(doc_id, Artifact::Report, &report)?;
        self.store.set_no_statements(doc_id, statements.is_empty())?;
        log::info!(
            "{doc_id}: {} candidates, {} statements ({} low confidence)",
            report.candidates,
            statements.len(),
            report.low_confidence
        );
        Ok((statements, report))
    }

    pub fn graph(&self, doc_id: &str) -> Result<GraphExport, PipelineError> {
        let statements = self.statements(doc_id)?;
        let (_, export) = build_document_graph(&statements)?;
        for e in &export.removed_edges {
            log::warn!("{doc_id}: cycle repair removed {} -> {}", e.from, e.to);
        }
        self.store.write_json(doc_id, Artifact::Graph, &export)?;
        Ok(export)
    }

    pub fn unfold(&self, doc_id: &str) -> Result<Vec<UnfoldedStatement>, PipelineError> {
        let statements = self.statements(doc_id)?;
        let export = match self.store.read_json::<GraphExport>(doc_id, Artifact::Graph)? {
            Some(g) => g,
            None => self.graph(doc_id)?,
        };
        let dag = export.to_graph()?;
        let unfolded = unfold(&dag, &statements, self.components.expander.as_ref(), self.config.budget)?;
        self.store.write_records(doc_id, Artifact::Unfolded, UNFOLDED_SCHEMA, &unfolded)?;
        Ok(unfolded)
    }

    /// Extract, graph and unfold one document.
    pub fn process(&self, doc_id: &str) -> Result<DocSummary, PipelineError> {
        let (statements, report) = self.extract(doc_id)?;
        let graph = self.graph(doc_id)?;
        self.unfold(doc_id)?;
        Ok(DocSummary {
            doc_id: doc_id.to_string(),
            candidates: report.candidates,
            statements: statements.len(),
            low_confidence: report.low_confidence,
            edges: graph.edges.len(),
            removed_edges: graph.removed_edges.len(),
            depth: graph.nodes.iter().map(|n| n.layer + 1).max().unwrap_or(0),
        })
    }

    /// Process documents in parallel, at most `caps.documents` at a time.
    /// Results come back in input order.
    pub fn process_all(&self, doc_ids: &[String]) -> Vec<(String, Result<DocSummary, PipelineError>)> {
        use rayon::prelude::*;
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(self.config.caps.documents)
            .build()
            .expect("thread pool builds");
        pool.install(|| {
            doc_ids
                .par_iter()
                .map(|id| (id.clone(), self.process(id)))
                .collect()
        })
    }

    fn statements(&self, doc_id: &str) -> Result<Vec<StructuredStatement>, PipelineError> {
        if !self.store.contains(doc_id) {
            return Err(StoreError::NotFound(doc_id.to_string()).into());
        }
        let statements = self.store.read_statements(doc_id)?;
        if statements.is_empty() && !self.store.document_record(doc_id)?.no_statements {
            return Err(PipelineError::Missing {
                doc_id: doc_id.to_string(),
                what: "statements",
            });
        }
        Ok(statements)
    }

    /// Embed every unfolded statement in the store into a fresh index and
    /// save it. Statement text is embedded as-is, without the query
    /// instruction.
    pub fn build_index(&self) -> Result<(FlatIndex, AddReport), PipelineError> {
        let embedder = &self.components.embedder;
        let mut index = FlatIndex::new(embedder.dimension());
        let mut report = AddReport::default();
        for doc_id in self.store.doc_ids()? {
            let record = self.store.document_record(&doc_id)?;
            let unfolded: Vec<UnfoldedStatement> =
                self.store.read_records(&doc_id, Artifact::Unfolded, UNFOLDED_SCHEMA)?.unwrap_or_default();
            if unfolded.is_empty() {
                continue;
            }
            let statements = self.store.read_statements(&doc_id)?;
            let by_id: std::collections::HashMap<&str, &StructuredStatement> =
                statements.iter().map(|s| (s.stmt_id.as_str(), s)).collect();
            let texts: Vec<String> = unfolded.iter().map(|u| u.unfolded_text.clone()).collect();
            let vectors = embedder.embed(&texts)?;
            let entries = unfolded
                .iter()
                .zip(vectors)
                .filter_map(|(u, vector)| {
                    let s = by_id.get(u.stmt_id.as_str())?;
                    Some(IndexEntry {
                        stmt_id: u.stmt_id.clone(),
                        vector,
                        payload: Payload {
                            doc_id: doc_id.clone(),
                            label: s.label.clone(),
                            kind: s.kind,
                            year: record.meta.year,
                            journal_id: record.meta.journal_id.clone(),
                            source_kind: record.meta.source_kind,
                        },
                    })
                })
                .collect();
            let r = index.add(entries, false);
            report.inserted += r.inserted;
            report.rejected.extend(r.rejected);
        }
        for (id, err) in &report.rejected {
            log::warn!("not indexed: {id}: {err}");
        }
        self.store.save_index(&index)?;
        Ok((index, report))
    }

    /// Instruction-prefix, embed and search.
    pub fn search(&self, index: &FlatIndex, query: &Query) -> Result<SearchResult, PipelineError> {
        search_with(index, self.components.embedder.as_ref(), &self.config.instruction, query)
    }
}

/// The query path on its own, for callers holding an index snapshot.
pub fn search_with(
    index: &FlatIndex,
    embedder: &dyn crate::embed::Embedder,
    instruction: &str,
    query: &Query,
) -> Result<SearchResult, PipelineError> {
    if query.k == 0 {
        return Ok(SearchResult::default());
    }
    if query.text.trim().is_empty() {
        return Err(PipelineError::EmptyQuery);
    }
    let text = build_query_text(query, instruction);
    let vector = embedder.embed(&[text])?.pop().expect("one vector per text");
    Ok(index.search(&vector, query.k, &query.filters)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{DocumentMeta, SourceKind};
    use crate::embed::HashingEmbedder;
    use crate::index::SearchFilters;

    const DOC: &str = "# Notes\n\n**Definition 1.** A widget is a frobnicated gadget.\n\n\
**Lemma 2.** By Definition 1, every widget spins.\n\n*Proof.* Clear.\n\n\
**Theorem 3.** By Lemma 2, widgets hum loudly.\n";

    fn setup(docs: &[(&str, &str)]) -> (tempfile::TempDir, Pipeline) {
        let dir = tempfile::tempdir().unwrap();
        let store = Arc::new(Store::open(dir.path()).unwrap());
        for (id, text) in docs {
            let meta = DocumentMeta {
                doc_id: id.to_string(),
                source_kind: SourceKind::JournalPaper,
                journal_id: Some("jams".into()),
                year: 2010,
                title: "t".into(),
            };
            store.ingest_document(text, meta, false).unwrap();
        }
        let p = Pipeline::new(PipelineConfig::default(), store, Components::offline(256));
        (dir, p)
    }

    #[test]
    fn full_run_writes_artifacts() {
        let (_dir, p) = setup(&[("a", DOC), ("empty", "Just prose, no statements.\n")]);
        let results = p.process_all(&["a".into(), "empty".into()]);
        let a = results[0].1.as_ref().unwrap();
        assert_eq!((a.statements, a.edges, a.depth), (3, 2, 3));
        assert_eq!(results[1].1.as_ref().unwrap().statements, 0);
        assert!(p.store().document_record("empty").unwrap().no_statements);
        assert!(!p.store().document_record("a").unwrap().no_statements);

        let unfolded: Vec<UnfoldedStatement> = p.store().read_records("a", Artifact::Unfolded, UNFOLDED_SCHEMA).unwrap().unwrap();
        let thm = unfolded.last().unwrap();
        assert_eq!(thm.layer, 2);
        assert!(thm.unfolded_text.contains("frobnicated"));
        assert!(thm.unfolded_text.ends_with("By Lemma 2, widgets hum loudly."));

        let (index, report) = p.build_index().unwrap();
        assert_eq!((index.len(), report.inserted), (3, 3));
        assert_eq!(p.store().load_index().unwrap().unwrap(), index);
    }

    #[test]
    fn search_prefixes_instruction_for_queries_only() {
        let (_dir, p) = setup(&[("a", DOC)]);
        p.process("a").unwrap();
        let (index, _) = p.build_index().unwrap();
        let lemma = format!("a:{}", DOC.find("**Lemma").unwrap());
        let theorem = format!("a:{}", DOC.find("**Theorem").unwrap());
        let stored = index.vector(&lemma).map(<[f32]>::to_vec);
        let unfolded: Vec<UnfoldedStatement> = p.store().read_records("a", Artifact::Unfolded, UNFOLDED_SCHEMA).unwrap().unwrap();
        let raw = HashingEmbedder::new(256).embed_one(&unfolded[1].unfolded_text);
        assert_eq!(unfolded[1].stmt_id, lemma);
        assert_eq!(stored.unwrap(), crate::index::normalize(&raw).unwrap());

        let q = Query {
            text: "widgets hum loudly".into(),
            k: 1,
            filters: SearchFilters::default(),
        };
        let hits = p.search(&index, &q).unwrap().hits;
        assert_eq!(hits[0].stmt_id, theorem);
        let empty = Query { text: " ".into(), ..q };
        assert!(matches!(p.search(&index, &empty), Err(PipelineError::EmptyQuery)));
    }

    #[test]
    fn graph_before_extract_is_reported() {
        let (_dir, p) = setup(&[("a", DOC)]);
        assert!(matches!(p.graph("a"), Err(PipelineError::Missing { .. })));
        assert!(matches!(p.graph("nope"), Err(PipelineError::Store(StoreError::NotFound(_)))));
    }
}
