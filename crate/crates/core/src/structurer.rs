//! Stage two of extraction: overlapping candidate batches, forward context
//! windows, structuring through a pluggable client, and reconciliation of
//! the overlapping results.

use std::collections::HashMap;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::client::{extract_json_block, ClientError, CompletionClient};
use crate::corpus::Document;
use crate::locator::CandidateSpan;
use crate::statement::{stmt_id, LocalDep, StatementKind, StructuredStatement};
use crate::text::{normalize_ws, CharIndex};

pub const DEFAULT_BATCH_SIZE: usize = 5;
pub const DEFAULT_OVERLAP: usize = 1;
pub const DEFAULT_WINDOW_LENGTH: usize = 4000;
/// Placed between non-adjacent intervals of a merged context.
pub const GAP_MARKER: &str = "\n⟦…⟧\n";

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum StructureError {
    #[error("invalid batching: batch_size {batch_size}, overlap {overlap}")]
    InvalidBatching { batch_size: usize, overlap: usize },
    #[error("batch member {index} out of range for {len} candidates")]
    InvalidMember { index: usize, len: usize },
    #[error("structurer client failed after {attempts} attempts: {source}")]
    Client {
        attempts: u32,
        #[source]
        source: ClientError,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Batch {
    pub ordinal: usize,
    pub members: Vec<usize>,
}

/// Split `n_candidates` into contiguous batches; batch `k` starts at
/// `k * (batch_size - overlap)` and consecutive batches share `overlap`
/// members.
pub fn make_batches(n_candidates: usize, batch_size: usize, overlap: usize) -> Result<Vec<Batch>, StructureError> {
    if batch_size == 0 || overlap >= batch_size {
        return Err(StructureError::InvalidBatching { batch_size, overlap });
    }
    let stride = batch_size - overlap;
    let mut out = Vec::new();
    let mut start = 0;
    while start < n_candidates {
        let end = (start + batch_size).min(n_candidates);
        out.push(Batch {
            ordinal: out.len(),
            members: (start..end).collect(),
        });
        if end == n_candidates {
            break;
        }
        start += stride;
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ContextWindow {
    pub start: usize,
    pub end: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MergedContext {
    pub intervals: Vec<ContextWindow>,
    pub text: String,
}

impl MergedContext {
    /// Char offset in `text` of document offset `doc_offset`, if covered.
    pub fn context_offset(&self, doc_offset: usize) -> Option<usize> {
        let mut base = 0;
        let gap = GAP_MARKER.chars().count();
        for w in &self.intervals {
            if (w.start..w.end).contains(&doc_offset) {
                return Some(base + doc_offset - w.start);
            }
            base += w.end - w.start + gap;
        }
        None
    }

    /// Covered document text inside `[start, end)`; uncovered parts are skipped.
    pub fn doc_text(&self, start: usize, end: usize) -> String {
        let idx = CharIndex::new(&self.text);
        let gap = GAP_MARKER.chars().count();
        let mut base = 0;
        let mut out = String::new();
        for w in &self.intervals {
            let (s, e) = (start.max(w.start), end.min(w.end));
            if s < e {
                out.push_str(idx.slice(&self.text, base + s - w.start, base + e - w.start));
            }
            base += w.end - w.start + gap;
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WindowOptions {
    pub window_length: usize,
    /// Chars of context before each candidate start.
    pub back_margin: usize,
}

impl Default for WindowOptions {
    fn default() -> Self {
        Self {
            window_length: DEFAULT_WINDOW_LENGTH,
            back_margin: 0,
        }
    }
}

/// Merge windows that overlap or touch into sorted, disjoint intervals.
pub fn merge_windows(mut windows: Vec<ContextWindow>) -> Vec<ContextWindow> {
    windows.sort();
    let mut out: Vec<ContextWindow> = Vec::with_capacity(windows.len());
    for w in windows {
        match out.last_mut() {
            Some(last) if w.start <= last.end => last.end = last.end.max(w.end),
            _ => out.push(w),
        }
    }
    out
}

/// One forward window per batch member, merged and assembled into text.
pub fn build_windows(
    document: &Document,
    batch: &Batch,
    candidates: &[CandidateSpan],
    opts: &WindowOptions,
) -> Result<MergedContext, StructureError> {
    let len = document.len_chars();
    let mut raw = Vec::with_capacity(batch.members.len());
    for &i in &batch.members {
        let c = candidates.get(i).ok_or(StructureError::InvalidMember {
            index: i,
            len: candidates.len(),
        })?;
        let start = c.start.saturating_sub(opts.back_margin).min(len);
        let end = c.start.saturating_add(opts.window_length).min(len);
        if start < end {
            raw.push(ContextWindow { start, end });
        }
    }
    let intervals = merge_windows(raw);
    let text = intervals
        .iter()
        .map(|w| document.slice(w.start, w.end))
        .collect::<Vec<_>>()
        .join(GAP_MARKER);
    Ok(MergedContext { intervals, text })
}

/// What the structurer client is asked to structure.
#[derive(Debug, Clone, Copy)]
pub struct StructureRequest<'a> {
    pub doc_id: &'a str,
    pub context: &'a MergedContext,
    pub candidates: &'a [CandidateSpan],
    /// True on the single re-ask after a malformed reply.
    pub reprompt: bool,
}

/// Turns a localized batch into a JSON array of statement objects:
/// `[{"start": <doc offset>, "kind": "...", "label": "...", "content": "...",
/// "deps": ["Lemma 2.1", ...]}]`.
pub trait StructurerClient: Send + Sync {
    fn structure(&self, request: &StructureRequest<'_>) -> Result<String, ClientError>;
}

impl<T: StructurerClient + ?Sized> StructurerClient for std::sync::Arc<T> {
    fn structure(&self, request: &StructureRequest<'_>) -> Result<String, ClientError> {
        (**self).structure(request)
    }
}

impl<T: StructurerClient + ?Sized> StructurerClient for &T {
    fn structure(&self, request: &StructureRequest<'_>) -> Result<String, ClientError> {
        (**self).structure(request)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReplyStatement {
    pub start: usize,
    #[serde(default)]
    pub kind: Option<StatementKind>,
    #[serde(default)]
    pub label: Option<String>,
    #[serde(default)]
    pub content: String,
    #[serde(default)]
    pub deps: Vec<String>,
}

/// Structurer backed by a completion model.
pub struct ModelStructurer<C> {
    client: C,
}

impl<C: CompletionClient> ModelStructurer<C> {
    pub fn new(client: C) -> Self {
        Self { client }
    }

    pub fn prompt(request: &StructureRequest<'_>) -> String {
        let mut listing = String::new();
        for c in request.candidates {
            let first_line = request
                .context
                .doc_text(c.start, c.end)
                .lines()
                .next()
                .unwrap_or("")
                .chars()
                .take(120)
                .collect::<String>();
            listing.push_str(&format!("- start={}: {}\n", c.start, first_line));
        }
        let kinds: Vec<&str> = StatementKind::ALL.iter().map(|k| k.as_str()).collect();
        let mut prompt = format!(
            "Below is an excerpt of a mathematical document (OCR markdown). Pieces of the \
             document that were skipped are marked with ⟦…⟧.\n\
             Each listed candidate begins a formal statement. For every candidate return one \
             JSON object with fields:\n\
             start (the candidate's start number, unchanged), kind (one of {kinds}), label \
             (e.g. \"Theorem 3.1\", or null), content (the full statement text without its proof), \
             deps (labels of earlier statements in this document that the statement directly uses).\n\
             Reply with a JSON array only.\n\nCandidates:\n{listing}\nExcerpt:\n<<<\n{}\n>>>\n",
            request.context.text,
            kinds = kinds.join(", "),
        );
        if request.reprompt {
            prompt.push_str(
                "\nYour previous reply was not valid JSON. Reply with the JSON array and nothing else.\n",
            );
        }
        prompt
    }
}

impl<C: CompletionClient> StructurerClient for ModelStructurer<C> {
    fn structure(&self, request: &StructureRequest<'_>) -> Result<String, ClientError> {
        self.client.complete(&Self::prompt(request))
    }
}

fn header_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(
            r"^[ \t>]*(?:#{1,6}[ \t]+)?[*_]{0,2}[ \t]*(Theorem|Lemma|Proposition|Corollary|Definition|Remark|Notation|Assumption|Conjecture|Claim)[ \t]+(\d+(?:\.\d+)*)[ \t]*(?:\([^)\n]*\))?[ \t]*[*_]{0,2}[ \t]*[.:]?[ \t]*[*_]{0,2}",
        )
        .unwrap()
    })
}

fn reference_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"\b(Theorem|Lemma|Proposition|Corollary|Definition|Remark|Notation|Assumption)\s+(\d+(?:\.\d+)*)\b")
            .unwrap()
    })
}

/// Deterministic stand-in for the model structurer. For each candidate it
/// reads the numbered header (`Theorem 2.1.`, `**Lemma 4**`, ...), takes the
/// first paragraph after the header as the content, and reports every
/// `<Kind> <number>` reference in that content as a dependency. Candidates
/// without a recognizable header are left out of the reply.
#[derive(Debug, Clone, Copy, Default)]
pub struct MockStructurer;

impl MockStructurer {
    pub fn parse(text: &str, start: usize) -> Option<ReplyStatement> {
        let caps = header_re().captures(text)?;
        let kind = StatementKind::parse_lenient(&caps[1]);
        let label = format!("{} {}", &caps[1], &caps[2]);
        let rest = &text[caps.get(0)?.end()..];
        let rest = rest.trim_start_matches([' ', '\t']);
        let rest = rest.strip_prefix('\n').unwrap_or(rest);
        let paragraph = rest.split("\n\n").next().unwrap_or("").trim();
        if paragraph.is_empty() {
            return None;
        }
        let mut deps: Vec<String> = Vec::new();
        for r in reference_re().captures_iter(paragraph) {
            let dep = format!("{} {}", &r[1], &r[2]);
            if dep != label && !deps.contains(&dep) {
                deps.push(dep);
            }
        }
        Some(ReplyStatement {
            start,
            kind: Some(kind),
            label: Some(label),
            content: paragraph.to_string(),
            deps,
        })
    }
}

impl StructurerClient for MockStructurer {
    fn structure(&self, request: &StructureRequest<'_>) -> Result<String, ClientError> {
        let parsed: Vec<ReplyStatement> = request
            .candidates
            .iter()
            .filter_map(|c| Self::parse(&request.context.doc_text(c.start, c.end), c.start))
            .collect();
        Ok(serde_json::to_string(&parsed).expect("reply serializes"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StructureOptions {
    /// Transport retries after the first attempt.
    pub max_retries: u32,
}

impl Default for StructureOptions {
    fn default() -> Self {
        Self { max_retries: 2 }
    }
}

/// Result of structuring one batch.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct BatchOutcome {
    pub statements: Vec<StructuredStatement>,
    /// The reply stayed malformed after the re-ask; every candidate fell back.
    pub malformed: bool,
}

fn parse_reply(reply: &str) -> Option<Vec<ReplyStatement>> {
    let block = extract_json_block(reply, '[', ']')?;
    let values: Vec<serde_json::Value> = serde_json::from_str(block).ok()?;
    // Entries that do not fit the schema are skipped, not fatal.
    Some(
        values
            .into_iter()
            .filter_map(|v| serde_json::from_value(v).ok())
            .collect(),
    )
}

/// Fallback record for a candidate the client did not structure.
pub fn fallback_statement(context: &MergedContext, candidate: &CandidateSpan) -> StructuredStatement {
    let raw = context.doc_text(candidate.start, candidate.end);
    let content = match raw.trim() {
        "" => raw,
        t => t.to_string(),
    };
    StructuredStatement {
        stmt_id: stmt_id(&candidate.doc_id, candidate.start),
        doc_id: candidate.doc_id.clone(),
        span: (candidate.start, candidate.end),
        kind: StatementKind::Other,
        label: None,
        content,
        local_deps: Vec::new(),
        low_confidence: true,
    }
}

/// Structure every candidate of a batch: exactly one statement per
/// candidate, in candidate order. Candidates the client skips or returns
/// without content fall back to `kind = other` with the raw span text and
/// `low_confidence`. A malformed reply is re-asked once.
pub fn structure_batch(
    context: &MergedContext,
    batch_candidates: &[CandidateSpan],
    client: &dyn StructurerClient,
    opts: &StructureOptions,
) -> Result<BatchOutcome, StructureError> {
    let Some(first) = batch_candidates.first() else {
        return Ok(BatchOutcome::default());
    };
    let mut parsed = None;
    for reprompt in [false, true] {
        let request = StructureRequest {
            doc_id: &first.doc_id,
            context,
            candidates: batch_candidates,
            reprompt,
        };
        let mut attempts = 0;
        let reply = loop {
            attempts += 1;
            match client.structure(&request) {
                Ok(r) => break r,
                Err(e) if attempts <= opts.max_retries && !matches!(e, ClientError::Exhausted) => {
                    log::warn!("{}: structurer attempt {attempts} failed: {e}", first.doc_id);
                }
                Err(source) => return Err(StructureError::Client { attempts, source }),
            }
        };
        parsed = parse_reply(&reply);
        if parsed.is_some() {
            break;
        }
        log::warn!("{}: malformed structurer reply (reprompt={reprompt})", first.doc_id);
    }
    let malformed = parsed.is_none();
    let replies = parsed.unwrap_or_default();
    let by_start: HashMap<usize, &ReplyStatement> = replies.iter().rev().map(|r| (r.start, r)).collect();
    let statements = batch_candidates
        .iter()
        .map(|c| match by_start.get(&c.start) {
            Some(r) if !r.content.trim().is_empty() => StructuredStatement {
                stmt_id: stmt_id(&c.doc_id, c.start),
                doc_id: c.doc_id.clone(),
                span: (c.start, c.end),
                kind: r.kind.or(c.kind_hint).unwrap_or(StatementKind::Other),
                label: r.label.as_deref().map(normalize_ws).filter(|l| !l.is_empty()),
                content: r.content.trim().to_string(),
                local_deps: r
                    .deps
                    .iter()
                    .map(|d| normalize_ws(d))
                    .filter(|d| !d.is_empty())
                    .map(LocalDep::unresolved)
                    .collect(),
                low_confidence: false,
            },
            _ => fallback_statement(context, c),
        })
        .collect();
    Ok(BatchOutcome { statements, malformed })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UnresolvedDep {
    pub stmt_id: String,
    pub label: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KindConflict {
    pub stmt_id: String,
    pub kept: StatementKind,
    pub seen: StatementKind,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReconcileReport {
    pub unresolved_deps: Vec<UnresolvedDep>,
    pub conflicts: Vec<KindConflict>,
}

/// Merge overlapping batch results: one statement per `(doc_id, start)`,
/// first occurrence wins for kind, label and content, dependencies are the
/// union over all occurrences. Dependency labels are then resolved against
/// the nearest earlier statement of the same document carrying that label.
pub fn reconcile(batch_results: Vec<Vec<StructuredStatement>>) -> (Vec<StructuredStatement>, ReconcileReport) {
    let mut report = ReconcileReport::default();
    let mut out: Vec<StructuredStatement> = Vec::new();
    let mut seen: HashMap<(String, usize), usize> = HashMap::new();
    for stmt in batch_results.into_iter().flatten() {
        let key = (stmt.doc_id.clone(), stmt.span.0);
        match seen.get(&key) {
            None => {
                seen.insert(key, out.len());
                out.push(stmt);
            }
            Some(&i) => {
                let kept = &mut out[i];
                if kept.kind != stmt.kind && !stmt.low_confidence && !kept.low_confidence {
                    report.conflicts.push(KindConflict {
                        stmt_id: kept.stmt_id.clone(),
                        kept: kept.kind,
                        seen: stmt.kind,
                    });
                }
                if kept.low_confidence && !stmt.low_confidence {
                    // a real parse beats a fallback regardless of order
                    let deps = std::mem::take(&mut kept.local_deps);
                    *kept = stmt;
                    for d in deps {
                        if !kept.local_deps.iter().any(|k| k.label == d.label) {
                            kept.local_deps.push(d);
                        }
                    }
                    continue;
                }
                for d in stmt.local_deps {
                    if !kept.local_deps.iter().any(|k| k.label == d.label) {
                        kept.local_deps.push(d);
                    }
                }
            }
        }
    }
    out.sort_by(|a, b| a.doc_id.cmp(&b.doc_id).then(a.span.0.cmp(&b.span.0)));

    // label -> positions, per document, in document order
    let mut labels: HashMap<(&str, String), Vec<(usize, String)>> = HashMap::new();
    for s in &out {
        if let Some(l) = &s.label {
            labels
                .entry((s.doc_id.as_str(), normalize_ws(l)))
                .or_default()
                .push((s.span.0, s.stmt_id.clone()));
        }
    }
    let mut resolutions = Vec::new();
    for (i, s) in out.iter().enumerate() {
        for (j, dep) in s.local_deps.iter().enumerate() {
            if dep.stmt_id.is_some() {
                continue;
            }
            let target = labels
                .get(&(s.doc_id.as_str(), normalize_ws(&dep.label)))
                .and_then(|v| v.iter().rev().find(|(start, _)| *start < s.span.0))
                .map(|(_, id)| id.clone());
            match target {
                Some(id) => resolutions.push((i, j, id)),
                None => report.unresolved_deps.push(UnresolvedDep {
                    stmt_id: s.stmt_id.clone(),
                    label: dep.label.clone(),
                }),
            }
        }
    }
    for (i, j, id) in resolutions {
        out[i].local_deps[j].stmt_id = Some(id);
    }
    (out, report)
}

pub const REPORT_SCHEMA: &str = "report/v1";

/// Per-document extraction summary.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtractionReport {
    pub schema: String,
    pub doc_id: String,
    pub patterns: usize,
    pub candidates: usize,
    pub structured: usize,
    pub low_confidence: usize,
    pub unresolved_deps: Vec<UnresolvedDep>,
    pub conflicts: Vec<KindConflict>,
    pub batches: usize,
    pub failed_batches: usize,
    pub malformed_batches: usize,
}

impl ExtractionReport {
    pub fn new(doc_id: &str) -> Self {
        Self {
            schema: REPORT_SCHEMA.to_string(),
            doc_id: doc_id.to_string(),
            patterns: 0,
            candidates: 0,
            structured: 0,
            low_confidence: 0,
            unresolved_deps: Vec::new(),
            conflicts: Vec::new(),
            batches: 0,
            failed_batches: 0,
            malformed_batches: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ExtractOptions {
    pub batch_size: usize,
    pub overlap: usize,
    pub window: WindowOptions,
    pub structure: StructureOptions,
}

impl Default for ExtractOptions {
    fn default() -> Self {
        Self {
            batch_size: DEFAULT_BATCH_SIZE,
            overlap: DEFAULT_OVERLAP,
            window: WindowOptions::default(),
            structure: StructureOptions::default(),
        }
    }
}

/// Run stage two over a document's candidates. Batches are processed in
/// ordinal order; a batch whose client keeps failing is reported and its
/// candidates fall back.
pub fn extract_statements(
    document: &Document,
    candidates: &[CandidateSpan],
    client: &dyn StructurerClient,
    opts: &ExtractOptions,
) -> Result<(Vec<StructuredStatement>, ExtractionReport), StructureError> {
    let mut report = ExtractionReport::new(document.doc_id());
    report.candidates = candidates.len();
    let batches = make_batches(candidates.len(), opts.batch_size, opts.overlap)?;
    report.batches = batches.len();
    let mut results = Vec::with_capacity(batches.len());
    for batch in &batches {
        let context = build_windows(document, batch, candidates, &opts.window)?;
        let members: Vec<CandidateSpan> = batch.members.iter().map(|&i| candidates[i].clone()).collect();
        match structure_batch(&context, &members, client, &opts.structure) {
            Ok(outcome) => {
                report.malformed_batches += usize::from(outcome.malformed);
                results.push(outcome.statements);
            }
            Err(StructureError::Client { attempts, source }) => {
                log::error!(
                    "{}: batch {} failed after {attempts} attempts: {source}",
                    document.doc_id(),
                    batch.ordinal
                );
                report.failed_batches += 1;
                results.push(members.iter().map(|c| fallback_statement(&context, c)).collect());
            }
            Err(e) => return Err(e),
        }
    }
    let (statements, rec) = reconcile(results);
    report.structured = statements.iter().filter(|s| !s.low_confidence).count();
    report.low_confidence = statements.len() - report.structured;
    report.unresolved_deps = rec.unresolved_deps;
    report.conflicts = rec.conflicts;
    Ok((statements, report))
}
