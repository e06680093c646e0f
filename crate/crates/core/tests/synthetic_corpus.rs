//! Offline pipeline over the seeded synthetic corpus, checked against the
//! generator's ground truth.

use std::collections::{BTreeSet, HashMap};
use std::sync::Arc;

use matlas_core::graph::UNFOLDED_SCHEMA;
use matlas_core::store::{Artifact, StoreError};
use matlas_core::synth::{generate, SynthOptions};
use matlas_core::{Components, Pipeline, PipelineConfig, SearchFilters, Store, UnfoldedStatement};

fn pipeline(dir: &std::path::Path) -> Pipeline {
    let store = Arc::new(Store::open(dir).unwrap());
    Pipeline::new(PipelineConfig::default(), store, Components::offline(256))
}

#[test]
fn extraction_recovers_ground_truth() {
    let corpus = generate(&SynthOptions::default());
    let dir = tempfile::tempdir().unwrap();
    let p = pipeline(dir.path());
    for d in &corpus {
        p.store().ingest_document(&d.markdown, d.meta.clone(), false).unwrap();
    }
    let ids: Vec<String> = corpus.iter().map(|d| d.meta.doc_id.clone()).collect();
    for (id, r) in p.process_all(&ids) {
        let summary = r.unwrap();
        assert_eq!(summary.removed_edges, 0, "{id}");
        assert_eq!(summary.low_confidence, 0, "{id}");
    }

    for d in &corpus {
        let doc_id = &d.meta.doc_id;
        let got = p.store().read_statements(doc_id).unwrap();
        let by_id: HashMap<&str, _> = got.iter().map(|s| (s.stmt_id.as_str(), s)).collect();
        assert_eq!(got.len(), d.statements.len(), "{doc_id}: no spurious statements");
        for t in &d.statements {
            let s = by_id.get(t.stmt_id.as_str()).unwrap_or_else(|| panic!("missed {}", t.stmt_id));
            assert_eq!((s.kind, s.label.as_deref(), s.content.as_str()), (t.kind, Some(t.label.as_str()), t.content.as_str()));
            let resolved: BTreeSet<&str> = s.local_deps.iter().filter_map(|d| d.stmt_id.as_deref()).collect();
            let expected: BTreeSet<&str> = t.deps.iter().map(String::as_str).collect();
            assert_eq!(resolved, expected, "{}", t.stmt_id);
        }

        // Unfolded texts contain every ancestor's content.
        let unfolded: Vec<UnfoldedStatement> = p
            .store()
            .read_records(doc_id, Artifact::Unfolded, UNFOLDED_SCHEMA)
            .unwrap()
            .unwrap();
        let truth: HashMap<&str, _> = d.statements.iter().map(|t| (t.stmt_id.as_str(), t)).collect();
        for u in &unfolded {
            let mut stack = vec![u.stmt_id.as_str()];
            let mut ancestors = BTreeSet::new();
            while let Some(v) = stack.pop() {
                for dep in &truth[v].deps {
                    if ancestors.insert(dep.clone()) {
                        stack.push(dep);
                    }
                }
            }
            assert_eq!(u.ancestors, ancestors);
            for a in &ancestors {
                assert!(u.unfolded_text.contains(&truth[a.as_str()].content));
            }
            assert!(u.unfolded_text.ends_with(&truth[u.stmt_id.as_str()].content));
        }
    }

    let (index, report) = p.build_index().unwrap();
    assert!(report.rejected.is_empty());
    assert_eq!(index.len(), corpus.iter().map(|d| d.statements.len()).sum::<usize>());
    for d in &corpus {
        let q = matlas_core::Query {
            text: d.planted.query.clone(),
            k: 3,
            filters: SearchFilters::default(),
        };
        assert_eq!(p.search(&index, &q).unwrap().hits[0].stmt_id, d.planted.stmt_id);
    }
}

#[test]
fn replace_invalidates_derived_artifacts() {
    let corpus = generate(&SynthOptions {
        documents: 2,
        ..Default::default()
    });
    let dir = tempfile::tempdir().unwrap();
    let p = pipeline(dir.path());
    for d in &corpus {
        p.store().ingest_document(&d.markdown, d.meta.clone(), false).unwrap();
        p.process(&d.meta.doc_id).unwrap();
    }
    let (index, _) = p.build_index().unwrap();
    let first = &corpus[0].meta.doc_id;
    let before = index.len();

    let err = p.store().ingest_document(&corpus[0].markdown, corpus[0].meta.clone(), false);
    assert!(matches!(err, Err(StoreError::Duplicate(_))));

    p.store().ingest_document(&corpus[0].markdown, corpus[0].meta.clone(), true).unwrap();
    assert!(p.store().read_statements(first).unwrap().is_empty());
    assert!(p.store().read_json::<serde_json::Value>(first, Artifact::Graph).unwrap().is_none());
    let index = p.store().load_index().unwrap().unwrap();
    assert_eq!(index.len(), before - corpus[0].statements.len());
    assert!(index.ids().iter().all(|id| !id.starts_with(&format!("{first}:"))));
}

#[test]
fn reingest_is_byte_identical() {
    let corpus = generate(&SynthOptions {
        documents: 1,
        ..Default::default()
    });
    let dir = tempfile::tempdir().unwrap();
    let store = Store::open(dir.path()).unwrap();
    let d = &corpus[0];
    let read_all = |store: &Store| {
        let mut files: Vec<(std::path::PathBuf, Vec<u8>)> = Vec::new();
        let mut stack = vec![store.root().to_path_buf()];
        while let Some(p) = stack.pop() {
            for e in std::fs::read_dir(&p).unwrap() {
                let path = e.unwrap().path();
                if path.is_dir() {
                    stack.push(path);
                } else {
                    files.push((path.clone(), std::fs::read(&path).unwrap()));
                }
            }
        }
        files.sort();
        files
    };
    store.ingest_document(&d.markdown, d.meta.clone(), true).unwrap();
    let once = read_all(&store);
    store.ingest_document(&d.markdown, d.meta.clone(), true).unwrap();
    assert_eq!(read_all(&store), once);
    assert_eq!(store.get_document(&d.meta.doc_id).unwrap().markdown, d.markdown);
}
