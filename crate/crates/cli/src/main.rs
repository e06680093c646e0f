use std::fs::File;
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use matlas_core::config::{ClientKind, EmbedderKind, ExpanderKind, ProviderKind};
use matlas_core::corpus::{
    apply_citation_counts, count_icm_citations, select_journals, CitationEvent, DocumentMeta, JournalRecord,
    SourceKind, DEFAULT_CITATION_THRESHOLD, DEFAULT_MIN_PAPERS, DEFAULT_YEAR_HI, DEFAULT_YEAR_LO,
};
use matlas_core::graph::{partition_layers, GraphExport};
use matlas_core::index::{Query, SearchFilters};
use matlas_core::locator::CachedProvider;
use matlas_core::store::{doc_key, Artifact};
use matlas_core::synth::{generate, SynthOptions};
use matlas_core::{jsonl, Pipeline, PipelineConfig, StatementKind, Store};

#[derive(Parser)]
#[command(name = "matlas", version, about = "Extract, unfold and search mathematical statements")]
struct Cli {
    /// Config file (TOML, or JSON by extension).
    #[arg(long, global = true, env = "MATLAS_CONFIG")]
    config: Option<PathBuf>,
    /// Store directory; overrides the config.
    #[arg(long, global = true, env = "MATLAS_STORE")]
    store: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Journal selection and document ingestion.
    #[command(subcommand)]
    Corpus(CorpusCmd),
    /// Candidate localization and statement structuring.
    #[command(subcommand)]
    Extract(ExtractCmd),
    /// Dependency graphs and layers.
    #[command(subcommand)]
    Graph(GraphCmd),
    /// Unfold statements of documents with built graphs.
    Unfold {
        #[command(flatten)]
        target: Target,
        #[arg(long)]
        expander: Option<ExpanderKind>,
        /// Char budget for each unfolded text.
        #[arg(long)]
        budget: Option<usize>,
    },
    /// Vector index.
    #[command(subcommand)]
    Index(IndexCmd),
    /// Search the saved index.
    Search(SearchArgs),
    /// Run the HTTP service.
    Serve {
        /// Listen address; MATLAS_BIND takes precedence.
        #[arg(long)]
        bind: Option<String>,
    },
    /// Print the effective configuration as TOML.
    Config,
}

#[derive(Subcommand)]
enum CorpusCmd {
    /// Print journals passing the citation and size thresholds.
    SelectJournals {
        /// JournalRecord JSON Lines.
        #[arg(long)]
        metadata: PathBuf,
        /// CitationEvent JSON Lines; recounts citations over the year window.
        #[arg(long)]
        events: Option<PathBuf>,
        #[arg(long, default_value_t = DEFAULT_CITATION_THRESHOLD)]
        citations: u64,
        #[arg(long, default_value_t = DEFAULT_MIN_PAPERS)]
        min_papers: u64,
        #[arg(long, default_value_t = DEFAULT_YEAR_LO)]
        year_lo: u32,
        #[arg(long, default_value_t = DEFAULT_YEAR_HI)]
        year_hi: u32,
    },
    /// Ingest `<dir>/<doc_id>.md` for every record of a DocumentMeta JSON Lines file.
    Ingest {
        dir: PathBuf,
        #[arg(long)]
        meta: PathBuf,
        /// Replace documents already in the store.
        #[arg(long)]
        replace: bool,
    },
    /// Write a seeded synthetic corpus with ground truth.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 10)]
        docs: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
}

#[derive(Args)]
struct Target {
    /// Document id.
    doc_id: Option<String>,
    /// Every document in the store.
    #[arg(long, conflicts_with = "doc_id")]
    all: bool,
}

#[derive(Subcommand)]
enum ExtractCmd {
    /// Print candidate spans as JSON Lines.
    Locate {
        doc_id: String,
        #[arg(long)]
        provider: Option<ProviderKind>,
    },
    /// Structure statements and store them.
    Run {
        #[command(flatten)]
        target: Target,
        #[arg(long)]
        provider: Option<ProviderKind>,
        #[arg(long)]
        client: Option<ClientKind>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        window: Option<usize>,
        #[arg(long)]
        overlap: Option<usize>,
    },
}

#[derive(Subcommand)]
enum GraphCmd {
    /// Build and store the dependency graph.
    Build {
        #[command(flatten)]
        target: Target,
    },
    /// Print `{stmt_id, label, layer}` lines from the stored graph.
    Layers { doc_id: String },
}

#[derive(Subcommand)]
enum IndexCmd {
    /// Embed all unfolded statements and save the index.
    Build {
        #[arg(long)]
        embedder: Option<EmbedderKind>,
    },
    Search(SearchArgs),
}

#[derive(Args)]
struct SearchArgs {
    query: String,
    #[arg(short, long, default_value_t = 10)]
    k: usize,
    #[arg(long = "kind")]
    kinds: Vec<String>,
    #[arg(long)]
    year_from: Option<u32>,
    #[arg(long)]
    year_to: Option<u32>,
    #[arg(long = "journal")]
    journals: Vec<String>,
    #[arg(long)]
    source_kind: Option<SourceKind>,
    #[arg(long)]
    embedder: Option<EmbedderKind>,
}

fn load_config(cli: &Cli) -> Result<PipelineConfig> {
    let mut config = match &cli.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(s) = &cli.store {
        config.store = s.clone();
    }
    Ok(config)
}

fn open_pipeline(config: PipelineConfig) -> Result<Pipeline> {
    config.validate()?;
    let store = Arc::new(Store::open(&config.store)?);
    let mut components = config.components()?;
    if config.provider == ProviderKind::Model {
        components.provider = Arc::new(CachedProvider::new(components.provider, store.clone()));
    }
    Ok(Pipeline::new(config, store, components))
}

fn targets(p: &Pipeline, t: &Target) -> Result<Vec<String>> {
    match (&t.doc_id, t.all) {
        (Some(id), _) => Ok(vec![id.clone()]),
        (None, true) => Ok(p.store().doc_ids()?),
        (None, false) => bail!("give a doc_id or --all"),
    }
}

fn read_jsonl<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    jsonl::read(BufReader::new(f)).with_context(|| format!("reading {}", path.display()))
}

fn write_jsonl<T: serde::Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    jsonl::write(BufWriter::new(f), items)?;
    Ok(())
}

fn print_lines<T: serde::Serialize>(items: impl IntoIterator<Item = T>) -> Result<()> {
    let mut out = io::stdout().lock();
    for item in items {
        serde_json::to_writer(&mut out, &item)?;
        writeln!(out)?;
    }
    Ok(())
}

fn for_each_doc<T: serde::Serialize>(ids: &[String], mut f: impl FnMut(&str) -> Result<T>) -> Result<()> {
    let mut failed = 0;
    for id in ids {
        match f(id) {
            Ok(v) => print_lines([v])?,
            Err(e) => {
                log::error!("{id}: {e:#}");
                failed += 1;
            }
        }
    }
    if failed > 0 {
        bail!("{failed} of {} documents failed", ids.len());
    }
    Ok(())
}

fn corpus(cmd: CorpusCmd, config: PipelineConfig) -> Result<()> {
    match cmd {
        CorpusCmd::SelectJournals {
            metadata,
            events,
            citations,
            min_papers,
            year_lo,
            year_hi,
        } => {
            let mut records: Vec<JournalRecord> = read_jsonl(&metadata)?;
            if let Some(path) = events {
                let events: Vec<CitationEvent> = read_jsonl(&path)?;
                apply_citation_counts(&mut records, &count_icm_citations(&events, year_lo, year_hi));
            }
            let selected = select_journals(&records, citations, min_papers)?;
            log::info!("{} of {} journals selected", selected.len(), records.len());
            let mut out = io::stdout().lock();
            for id in selected {
                writeln!(out, "{id}")?;
            }
        }
        CorpusCmd::Ingest { dir, meta, replace } => {
            let store = Store::open(&config.store)?;
            let metas: Vec<DocumentMeta> = read_jsonl(&meta)?;
            for m in metas {
                let plain = dir.join(format!("{}.md", m.doc_id));
                let path = if plain.is_file() {
                    plain
                } else {
                    dir.join(format!("{}.md", doc_key(&m.doc_id)))
                };
                let text =
                    std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
                let doc_id = m.doc_id.clone();
                store
                    .ingest_document(&text, m, replace)
                    .with_context(|| format!("ingesting {doc_id}"))?;
                println!("{doc_id}");
            }
        }
        CorpusCmd::Synth { out, docs, seed } => {
            std::fs::create_dir_all(&out)?;
            let corpus = generate(&SynthOptions {
                seed,
                documents: docs,
                ..SynthOptions::default()
            });
            for d in &corpus {
                std::fs::write(out.join(format!("{}.md", doc_key(&d.meta.doc_id))), &d.markdown)?;
            }
            let metas: Vec<_> = corpus.iter().map(|d| d.meta.clone()).collect();
            write_jsonl(&out.join("meta.jsonl"), &metas)?;
            let truth: Vec<_> = corpus.iter().flat_map(|d| d.statements.clone()).collect();
            write_jsonl(&out.join("truth.jsonl"), &truth)?;
            let queries: Vec<_> = corpus.iter().map(|d| d.planted.clone()).collect();
            write_jsonl(&out.join("queries.jsonl"), &queries)?;
            println!("{} documents, {} statements in {}", corpus.len(), truth.len(), out.display());
        }
    }
    Ok(())
}

fn search(args: SearchArgs, mut config: PipelineConfig) -> Result<()> {
    if let Some(e) = args.embedder {
        config.embedder.kind = e;
    }
    let store = Store::open(&config.store)?;
    let index = store
        .load_index()?
        .context("no index in the store; run `matlas index build` first")?;
    let kinds = (!args.kinds.is_empty())
        .then(|| args.kinds.iter().map(|k| k.parse::<StatementKind>()).collect::<Result<_, _>>())
        .transpose()
        .map_err(|e| anyhow::anyhow!("{e}"))?;
    let query = Query {
        text: args.query,
        k: args.k,
        filters: SearchFilters {
            kinds,
            year_from: args.year_from,
            year_to: args.year_to,
            journal_ids: (!args.journals.is_empty()).then(|| args.journals.into_iter().collect()),
            source_kind: args.source_kind,
        },
    };
    let embedder = config.embedder()?;
    let result = matlas_core::pipeline::search_with(&index, embedder.as_ref(), &config.instruction, &query)?;
    print_lines(result.hits)
}

fn run(cli: Cli) -> Result<()> {
    let mut config = load_config(&cli)?;
    match cli.command {
        Command::Corpus(cmd) => corpus(cmd, config),
        Command::Extract(ExtractCmd::Locate { doc_id, provider }) => {
            if let Some(p) = provider {
                config.provider = p;
            }
            print_lines(open_pipeline(config)?.locate(&doc_id)?)
        }
        Command::Extract(ExtractCmd::Run {
            target,
            provider,
            client,
            batch_size,
            window,
            overlap,
        }) => {
            config.provider = provider.unwrap_or(config.provider);
            config.client.kind = client.unwrap_or(config.client.kind);
            config.batch_size = batch_size.unwrap_or(config.batch_size);
            config.window_length = window.unwrap_or(config.window_length);
            config.overlap = overlap.unwrap_or(config.overlap);
            let p = open_pipeline(config)?;
            for_each_doc(&targets(&p, &target)?, |id| Ok(p.extract(id)?.1))
        }
        Command::Graph(GraphCmd::Build { target }) => {
            let p = open_pipeline(config)?;
            for_each_doc(&targets(&p, &target)?, |id| {
                let g = p.graph(id)?;
                Ok(serde_json::json!({
                    "doc_id": id,
                    "nodes": g.nodes.len(),
                    "edges": g.edges.len(),
                    "removed_edges": g.removed_edges,
                    "report": g.report,
                }))
            })
        }
        Command::Graph(GraphCmd::Layers { doc_id }) => {
            let store = Store::open(&config.store)?;
            let g: GraphExport = store
                .read_json(&doc_id, Artifact::Graph)?
                .with_context(|| format!("no graph for {doc_id}; run `matlas graph build` first"))?;
            let layers = partition_layers(&g.to_graph()?)?;
            print_lines(g.nodes.iter().map(|n| {
                serde_json::json!({"stmt_id": n.stmt_id, "label": n.label, "layer": layers.layer(&n.stmt_id)})
            }))
        }
        Command::Unfold {
            target,
            expander,
            budget,
        } => {
            config.expander = expander.unwrap_or(config.expander);
            config.budget = budget.unwrap_or(config.budget);
            let p = open_pipeline(config)?;
            for_each_doc(&targets(&p, &target)?, |id| {
                let unfolded = p.unfold(id)?;
                Ok(serde_json::json!({
                    "doc_id": id,
                    "statements": unfolded.len(),
                    "truncated": unfolded.iter().filter(|u| u.truncated).count(),
                    "fallback": unfolded.iter().filter(|u| u.fallback).count(),
                }))
            })
        }
        Command::Index(IndexCmd::Build { embedder }) => {
            config.embedder.kind = embedder.unwrap_or(config.embedder.kind);
            let p = open_pipeline(config)?;
            let (index, report) = p.build_index()?;
            print_lines([serde_json::json!({
                "entries": index.len(),
                "dimension": index.dimension(),
                "rejected": report.rejected.len(),
                "path": p.store().index_path(),
            })])
        }
        Command::Index(IndexCmd::Search(args)) | Command::Search(args) => search(args, config),
        Command::Serve { bind } => {
            config.bind = bind.unwrap_or(config.bind);
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(matlas_server::serve(config))?;
            Ok(())
        }
        Command::Config => {
            print!("{}", config.to_toml());
            Ok(())
        }
    }
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
