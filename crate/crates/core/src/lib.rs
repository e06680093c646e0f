//! Statement extraction, dependency unfolding and dense retrieval over
//! OCR'd mathematical documents.

pub mod client;
pub mod config;
pub mod corpus;
pub mod embed;
pub mod graph;
pub mod index;
pub mod jsonl;
pub mod locator;
pub mod pipeline;
pub mod statement;
pub mod store;
pub mod structurer;
pub mod synth;
pub mod text;

pub use config::{Components, PipelineConfig};
pub use corpus::{Document, DocumentMeta, SourceKind};
pub use graph::{DependencyGraph, GraphExport, LayerAssignment, UnfoldedStatement};
pub use index::{FlatIndex, Hit, Payload, Query, SearchFilters, SearchResult};
pub use pipeline::{Pipeline, PipelineError};
pub use statement::{LocalDep, StatementKind, StructuredStatement};
pub use store::Store;
