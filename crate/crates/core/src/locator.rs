//! Stage one of extraction: document-specific header patterns and the
//! candidate spans they localize.
//!
//! Pattern dialect: the syntax of the `regex` crate (no backreferences, no
//! look-around, linear-time matching). Patterns are compiled in multi-line
//! mode, so `^` and `$` match at line boundaries. Compiled programs larger
//! than [`PATTERN_SIZE_LIMIT`] bytes are refused.

use std::sync::{Arc, OnceLock};

use regex::{Regex, RegexBuilder};
use serde::{Deserialize, Serialize};

use crate::client::{extract_json_block, ClientError, CompletionClient};
use crate::corpus::Document;
use crate::statement::StatementKind;
use crate::store::{Store, StoreError};
use crate::text::truncate_chars;

pub const DEFAULT_SPAN_CAP: usize = 4000;
pub const DEFAULT_MATCH_BUDGET: u64 = 1_000_000;
pub const PATTERN_SIZE_LIMIT: usize = 1 << 20;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatternSpec {
    pub regex: String,
    #[serde(default)]
    pub kind: Option<StatementKind>,
}

impl PatternSpec {
    pub fn new(regex: impl Into<String>, kind: Option<StatementKind>) -> Self {
        Self {
            regex: regex.into(),
            kind,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatternSet {
    pub doc_id: String,
    pub patterns: Vec<PatternSpec>,
}

impl PatternSet {
    pub fn is_empty(&self) -> bool {
        self.patterns.is_empty()
    }

    /// Drop patterns that do not compile in the locator dialect, logging each.
    pub fn retain_valid(&mut self) {
        let doc_id = &self.doc_id;
        self.patterns.retain(|p| match compile_pattern(&p.regex) {
            Ok(_) => true,
            Err(e) => {
                log::warn!("{doc_id}: dropping pattern {:?}: {e}", p.regex);
                false
            }
        });
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CandidateSpan {
    pub doc_id: String,
    pub start: usize,
    pub end: usize,
    pub kind_hint: Option<StatementKind>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LocateOptions {
    /// Longest span a candidate may cover, in chars.
    pub span_cap: usize,
    /// Maximum number of pattern matches examined per document.
    pub match_budget: u64,
}

impl Default for LocateOptions {
    fn default() -> Self {
        Self {
            span_cap: DEFAULT_SPAN_CAP,
            match_budget: DEFAULT_MATCH_BUDGET,
        }
    }
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum LocateError {
    #[error("pattern {pattern:?} does not compile: {message}")]
    InvalidPattern { pattern: String, message: String },
    #[error("pattern {pattern:?} exceeded the match budget of {budget}")]
    MatchBudgetExceeded { pattern: String, budget: u64 },
}

#[derive(Debug, thiserror::Error)]
pub enum ProviderError {
    #[error("pattern client failed: {0}")]
    Client(#[from] ClientError),
    #[error("could not parse patterns from reply: {0}")]
    Parse(String),
    #[error("pattern cache: {0}")]
    Cache(#[from] StoreError),
}

pub fn compile_pattern(source: &str) -> Result<Regex, regex::Error> {
    RegexBuilder::new(source)
        .multi_line(true)
        .size_limit(PATTERN_SIZE_LIMIT)
        .build()
}

struct RawMatch {
    start: usize,
    end: usize,
    pattern: usize,
    kind: Option<StatementKind>,
}

/// Turn pattern matches into sorted, non-overlapping candidate spans.
///
/// Each surviving match start opens a candidate that runs to the next
/// candidate start, the span cap, or the end of the document, whichever
/// comes first. Matches sharing a start or nested inside an earlier match
/// are dropped in favour of the earliest-starting, then longest, match.
pub fn locate_candidates(
    document: &Document,
    patterns: &PatternSet,
    opts: &LocateOptions,
) -> Result<Vec<CandidateSpan>, LocateError> {
    let compiled = patterns
        .patterns
        .iter()
        .map(|p| {
            compile_pattern(&p.regex).map_err(|e| LocateError::InvalidPattern {
                pattern: p.regex.clone(),
                message: e.to_string(),
            })
        })
        .collect::<Result<Vec<_>, _>>()?;

    let idx = document.char_index();
    let len = idx.len_chars();
    let mut steps = 0u64;
    let mut raw = Vec::new();
    for (pi, re) in compiled.iter().enumerate() {
        for m in re.find_iter(&document.markdown) {
            steps += 1;
            if steps > opts.match_budget {
                return Err(LocateError::MatchBudgetExceeded {
                    pattern: patterns.patterns[pi].regex.clone(),
                    budget: opts.match_budget,
                });
            }
            let start = idx.char_of(m.start());
            if start >= len {
                continue;
            }
            raw.push(RawMatch {
                start,
                end: idx.char_of(m.end()),
                pattern: pi,
                kind: patterns.patterns[pi].kind.or_else(|| header_kind(m.as_str())),
            });
        }
    }
    raw.sort_by(|a, b| {
        a.start
            .cmp(&b.start)
            .then((b.end - b.start).cmp(&(a.end - a.start)))
            .then(a.pattern.cmp(&b.pattern))
    });

    let mut kept: Vec<RawMatch> = Vec::with_capacity(raw.len());
    for m in raw {
        if let Some(last) = kept.last() {
            if m.start == last.start || m.start < last.end {
                continue;
            }
        }
        kept.push(m);
    }

    let doc_id = document.doc_id();
    let spans = kept
        .iter()
        .enumerate()
        .map(|(i, m)| {
            let next = kept.get(i + 1).map_or(len, |n| n.start);
            CandidateSpan {
                doc_id: doc_id.to_string(),
                start: m.start,
                end: next.min(m.start.saturating_add(opts.span_cap.max(1))).min(len),
                kind_hint: m.kind,
            }
        })
        .collect();
    Ok(spans)
}

/// Statement kind named by a header such as `**Lemma 4**` or
/// `\begin{theorem}`, if it names one.
pub fn header_kind(header: &str) -> Option<StatementKind> {
    let word = match header.find("\\begin{") {
        Some(i) => header[i + 7..].split(|c: char| !c.is_ascii_alphabetic()).next()?,
        None => header
            .trim_start_matches(|c: char| !c.is_alphabetic())
            .split(|c: char| !c.is_alphabetic())
            .next()?,
    };
    match word.to_ascii_lowercase().as_str() {
        "conjecture" | "claim" => Some(StatementKind::Other),
        "thm" | "lem" | "dfn" => Some(StatementKind::parse_lenient(word)),
        w => match StatementKind::parse_lenient(w) {
            StatementKind::Other => None,
            k => Some(k),
        },
    }
}

/// Produces the per-document pattern set.
pub trait PatternProvider: Send + Sync {
    /// Short name, used as the cache key.
    fn name(&self) -> &str;
    fn propose(&self, document: &Document) -> Result<PatternSet, ProviderError>;
}

impl<P: PatternProvider + ?Sized> PatternProvider for Arc<P> {
    fn name(&self) -> &str {
        (**self).name()
    }
    fn propose(&self, document: &Document) -> Result<PatternSet, ProviderError> {
        (**self).propose(document)
    }
}

const HEADER_NAMES: &[(StatementKind, &[&str])] = &[
    (StatementKind::Theorem, &["Theorem", "THEOREM", r"Thm\."]),
    (StatementKind::Lemma, &["Lemma", "LEMMA", r"Lem\."]),
    (StatementKind::Proposition, &["Proposition", "PROPOSITION", r"Prop\."]),
    (StatementKind::Corollary, &["Corollary", "COROLLARY", r"Cor\."]),
    (StatementKind::Definition, &["Definition", "DEFINITION", r"Defn\.", r"Def\."]),
    (StatementKind::Remark, &["Remark", "REMARK"]),
    (StatementKind::Notation, &["Notation", "NOTATION"]),
    (StatementKind::Assumption, &["Assumption", "ASSUMPTION", "Hypothesis", "HYPOTHESIS"]),
    (StatementKind::Other, &["Conjecture", "CONJECTURE", "Claim", "CLAIM"]),
];

const ENV_NAMES: &[(StatementKind, &str)] = &[
    (StatementKind::Theorem, "theorem|thm"),
    (StatementKind::Lemma, "lemma|lem"),
    (StatementKind::Proposition, "proposition|prop"),
    (StatementKind::Corollary, "corollary|cor"),
    (StatementKind::Definition, "definition|defn|dfn"),
    (StatementKind::Remark, "remark|rem"),
    (StatementKind::Notation, "notation"),
    (StatementKind::Assumption, "assumption|hypothesis"),
    (StatementKind::Other, "conjecture|claim"),
];

/// The full built-in header pattern list, in priority order.
pub fn builtin_patterns() -> &'static [PatternSpec] {
    static PATTERNS: OnceLock<Vec<PatternSpec>> = OnceLock::new();
    PATTERNS.get_or_init(|| {
        // line start, optional quote marker, heading hashes and emphasis
        let prefix = r"^[ \t]*(?:>[ \t]*)?(?:#{1,6}[ \t]+)?(?:\*{1,2}|_{1,2})?[ \t]*";
        let num = r"(?:\d+(?:\.\d+)*[a-z]?|[A-Z](?:\.\d+)*\b)";
        let title = r"\([^)\n]{0,120}\)";
        let after = format!(r"(?:[ \t]+{num}(?:[ \t]*{title})?|[ \t]*{title}|[ \t]*[.:])");
        let tail = r"(?:[ \t]*(?:\*{1,2}|_{1,2}))?(?:[ \t]*[.:])?(?:\*{1,2}|_{1,2})?";
        let mut out: Vec<PatternSpec> = HEADER_NAMES
            .iter()
            .map(|(kind, names)| {
                PatternSpec::new(
                    format!("{prefix}(?:{}){after}{tail}", names.join("|")),
                    Some(*kind),
                )
            })
            .collect();
        out.extend(ENV_NAMES.iter().map(|(kind, envs)| {
            PatternSpec::new(
                format!(r"^[ \t]*\\begin\{{(?:{envs})\*?\}}(?:\[[^\]\n]{{0,120}}\])?"),
                Some(*kind),
            )
        }));
        out
    })
}

/// Built-in patterns for common header styles, keeping only those that match
/// somewhere in the document.
#[derive(Debug, Clone, Copy, Default)]
pub struct HeuristicProvider;

impl PatternProvider for HeuristicProvider {
    fn name(&self) -> &str {
        "heuristic"
    }

    fn propose(&self, document: &Document) -> Result<PatternSet, ProviderError> {
        static COMPILED: OnceLock<Vec<Regex>> = OnceLock::new();
        let compiled = COMPILED.get_or_init(|| {
            builtin_patterns()
                .iter()
                .map(|p| compile_pattern(&p.regex).expect("builtin pattern compiles"))
                .collect()
        });
        let patterns = builtin_patterns()
            .iter()
            .zip(compiled)
            .filter(|(_, re)| re.is_match(&document.markdown))
            .map(|(p, _)| p.clone())
            .collect();
        Ok(PatternSet {
            doc_id: document.doc_id().to_string(),
            patterns,
        })
    }
}

pub const DEFAULT_SAMPLE_CHARS: usize = 6000;

/// Asks a completion model for header patterns, given the opening of the
/// document.
pub struct ModelPatternProvider<C> {
    client: C,
    sample_chars: usize,
}

impl<C: CompletionClient> ModelPatternProvider<C> {
    pub fn new(client: C) -> Self {
        Self {
            client,
            sample_chars: DEFAULT_SAMPLE_CHARS,
        }
    }

    pub fn with_sample_chars(mut self, n: usize) -> Self {
        self.sample_chars = n;
        self
    }

    pub fn prompt(&self, document: &Document) -> String {
        let (sample, cut) = truncate_chars(&document.markdown, self.sample_chars);
        let kinds: Vec<&str> = StatementKind::ALL.iter().map(|k| k.as_str()).collect();
        format!(
            "You are given the beginning of a mathematical document converted to markdown by OCR.\n\
             Write regular expressions that match the header line of every formal statement \
             (definition, theorem, lemma, ...) in this document's own formatting style.\n\
             Rules:\n\
             - Use Rust `regex` syntax: no backreferences, no look-ahead or look-behind.\n\
             - Patterns run in multi-line mode; anchor headers with `^`.\n\
             - Match only the header (e.g. `**Theorem 2.1.**`), not the statement body.\n\
             - kind is one of: {kinds}.\n\
             Reply with JSON only: {{\"patterns\": [{{\"regex\": \"...\", \"kind\": \"theorem\"}}]}}\n\n\
             Document sample{}:\n<<<\n{sample}\n>>>\n",
            if cut { " (truncated)" } else { "" },
            kinds = kinds.join(", "),
        )
    }
}

#[derive(Deserialize)]
#[serde(untagged)]
enum ReplyPattern {
    Bare(String),
    Spec {
        regex: String,
        #[serde(default)]
        kind: Option<String>,
    },
}

#[derive(Deserialize)]
struct ReplyObject {
    patterns: Vec<ReplyPattern>,
}

/// Parse a model reply into pattern specs; accepts an object with a
/// `patterns` array or a bare array, of strings or `{regex, kind}` objects.
pub fn parse_pattern_reply(reply: &str) -> Result<Vec<PatternSpec>, ProviderError> {
    let items: Vec<ReplyPattern> = if let Some(obj) = extract_json_block(reply, '{', '}')
        .and_then(|b| serde_json::from_str::<ReplyObject>(b).ok())
    {
        obj.patterns
    } else {
        let block = extract_json_block(reply, '[', ']')
            .ok_or_else(|| ProviderError::Parse("no JSON found in reply".into()))?;
        serde_json::from_str(block).map_err(|e| ProviderError::Parse(e.to_string()))?
    };
    Ok(items
        .into_iter()
        .map(|p| match p {
            ReplyPattern::Bare(regex) => PatternSpec::new(regex, None),
            ReplyPattern::Spec { regex, kind } => {
                PatternSpec::new(regex, kind.map(|k| StatementKind::parse_lenient(&k)))
            }
        })
        .collect())
}

impl<C: CompletionClient> PatternProvider for ModelPatternProvider<C> {
    fn name(&self) -> &str {
        "model"
    }

    fn propose(&self, document: &Document) -> Result<PatternSet, ProviderError> {
        let reply = self.client.complete(&self.prompt(document))?;
        let mut set = PatternSet {
            doc_id: document.doc_id().to_string(),
            patterns: parse_pattern_reply(&reply)?,
        };
        set.retain_valid();
        if set.is_empty() {
            return Err(ProviderError::Parse("no usable patterns in reply".into()));
        }
        Ok(set)
    }
}

/// Tries `primary`, and on any error uses `fallback` instead.
pub struct WithFallback<A, B> {
    pub primary: A,
    pub fallback: B,
}

impl<A: PatternProvider, B: PatternProvider> PatternProvider for WithFallback<A, B> {
    fn name(&self) -> &str {
        self.primary.name()
    }

    fn propose(&self, document: &Document) -> Result<PatternSet, ProviderError> {
        self.primary.propose(document).or_else(|e| {
            log::warn!(
                "{}: {} provider failed ({e}); using {}",
                document.doc_id(),
                self.primary.name(),
                self.fallback.name()
            );
            self.fallback.propose(document)
        })
    }
}

/// Serves pattern sets from the store, asking the inner provider only on a
/// cache miss.
pub struct CachedProvider<P> {
    inner: P,
    store: Arc<Store>,
}

impl<P: PatternProvider> CachedProvider<P> {
    pub fn new(inner: P, store: Arc<Store>) -> Self {
        Self { inner, store }
    }
}

impl<P: PatternProvider> PatternProvider for CachedProvider<P> {
    fn name(&self) -> &str {
        self.inner.name()
    }

    fn propose(&self, document: &Document) -> Result<PatternSet, ProviderError> {
        if let Some(hit) = self.store.read_patterns(document.doc_id(), self.inner.name())? {
            return Ok(hit);
        }
        let set = self.inner.propose(document)?;
        self.store.write_patterns(self.inner.name(), &set)?;
        Ok(set)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::client::ScriptedCompletion;
    use crate::corpus::{DocumentMeta, SourceKind};
    use proptest::prelude::*;

    fn doc(text: &str) -> Document {
        Document::new(
            text,
            DocumentMeta {
                doc_id: "d".into(),
                source_kind: SourceKind::Textbook,
                journal_id: None,
                year: 2000,
                title: String::new(),
            },
        )
        .unwrap()
    }

    fn set(patterns: &[&str]) -> PatternSet {
        PatternSet {
            doc_id: "d".into(),
            patterns: patterns.iter().map(|p| PatternSpec::new(*p, None)).collect(),
        }
    }

    fn first_match(text: &str) -> Option<(String, Option<StatementKind>)> {
        builtin_patterns().iter().find_map(|p| {
            compile_pattern(&p.regex)
                .unwrap()
                .find(text)
                .map(|m| (m.as_str().to_string(), p.kind))
        })
    }

    #[test]
    fn builtin_patterns_recognize_common_headers() {
        let cases = [
            ("Theorem 3.1. Let X be compact.", "Theorem 3.1.", StatementKind::Theorem),
            ("Definition 2. A ring is", "Definition 2.", StatementKind::Definition),
            ("**Lemma 4** Suppose", "**Lemma 4**", StatementKind::Lemma),
            ("**Lemma 4.1.** Suppose", "**Lemma 4.1.**", StatementKind::Lemma),
            ("\\begin{theorem}[Brouwer] Every", "\\begin{theorem}[Brouwer]", StatementKind::Theorem),
            ("### Corollary 1.2 (Main). Hence", "### Corollary 1.2 (Main).", StatementKind::Corollary),
            ("  *Remark.* Note that", "  *Remark.*", StatementKind::Remark),
            ("Thm. 5 says", "Thm. 5", StatementKind::Theorem),
            ("PROPOSITION 7. If", "PROPOSITION 7.", StatementKind::Proposition),
        ];
        for (text, header, kind) in cases {
            let (m, k) = first_match(text).unwrap_or_else(|| panic!("no match in {text:?}"));
            assert_eq!(m, header, "{text:?}");
            assert_eq!(k, Some(kind), "{text:?}");
        }
    }

    #[test]
    fn builtin_patterns_ignore_prose() {
        for text in [
            "Theorems 2 and 3 imply",
            "Theorem proving is hard",
            "as shown in Theorem 2.1. Next",
            "Lemmas are useful.",
        ] {
            assert_eq!(first_match(text), None, "{text:?}");
        }
    }

    #[test]
    fn heuristic_provider_keeps_only_matching_patterns() {
        let d = doc("Intro text.\n\nTheorem 2.1. Every map has a point.\n");
        let set = HeuristicProvider.propose(&d).unwrap();
        assert_eq!(set.patterns.len(), 1);
        assert_eq!(set.patterns[0].kind, Some(StatementKind::Theorem));
        let re = compile_pattern(&set.patterns[0].regex).unwrap();
        let header_shape = Regex::new(r"Theorem\s+\d+(\.\d+)*\.").unwrap();
        let m = re.find(&d.markdown).unwrap();
        assert_eq!(m.start(), 13);
        assert!(header_shape.is_match(m.as_str()));

        let plain = doc("No statements here, only prose.");
        let set = HeuristicProvider.propose(&plain).unwrap();
        assert!(set.is_empty());
        assert!(locate_candidates(&plain, &set, &LocateOptions::default()).unwrap().is_empty());
    }

    #[test]
    fn planted_headers_give_expected_spans() {
        let len = 3000;
        let mut body = vec!['.'; len];
        for (i, c) in body.iter_mut().enumerate() {
            if i % 80 == 79 {
                *c = '\n';
            }
        }
        for &off in &[100usize, 900, 2500] {
            body[off - 1] = '\n';
            for (j, ch) in "Lemma 1.".chars().enumerate() {
                body[off + j] = ch;
            }
        }
        let d = doc(&body.iter().collect::<String>());
        let spans = locate_candidates(&d, &set(&[r"^Lemma \d+\."]), &LocateOptions::default()).unwrap();
        let got: Vec<_> = spans.iter().map(|s| (s.start, s.end)).collect();
        assert_eq!(got, vec![(100, 900), (900, 2500), (2500, (2500 + 4000).min(len))]);
        assert!(spans.iter().all(|s| s.kind_hint == Some(StatementKind::Lemma)));
    }

    #[test]
    fn span_cap_limits_end() {
        let d = doc(&format!("Lemma 1.{}", "a".repeat(100)));
        let opts = LocateOptions {
            span_cap: 10,
            ..LocateOptions::default()
        };
        let spans = locate_candidates(&d, &set(&[r"^Lemma 1\."]), &opts).unwrap();
        assert_eq!((spans[0].start, spans[0].end), (0, 10));
    }

    #[test]
    fn shared_start_is_deduplicated() {
        let d = doc(&format!("{}\nTheorem 1. text", "p".repeat(99)));
        let spans =
            locate_candidates(&d, &set(&[r"^Theorem 1\.", r"^Theorem \d+"]), &LocateOptions::default())
                .unwrap();
        assert_eq!(spans.len(), 1);
        assert_eq!(spans[0].start, 100);
    }

    #[test]
    fn nested_matches_keep_longest() {
        let d = doc("Lemma 3. A B");
        let spans = locate_candidates(&d, &set(&[r"mma", r"^Lemma 3\."]), &LocateOptions::default()).unwrap();
        assert_eq!(spans.len(), 1);
        assert_eq!(spans[0].start, 0);
    }

    #[test]
    fn offsets_count_chars_not_bytes() {
        let d = doc("∎∎∎\nLemma 1. ∎\nLemma 2. x");
        let spans = locate_candidates(&d, &set(&[r"^Lemma \d\."]), &LocateOptions::default()).unwrap();
        assert_eq!(spans[0].start, 4);
        assert_eq!(spans[1].start, 15);
        assert_eq!(spans[1].end, d.len_chars());
        assert_eq!(d.slice(spans[1].start, spans[1].end), "Lemma 2. x");
    }

    #[test]
    fn budget_violation_names_pattern() {
        let d = doc(&"word ".repeat(100));
        let opts = LocateOptions {
            match_budget: 50,
            ..LocateOptions::default()
        };
        let err = locate_candidates(&d, &set(&[r"^zzz", r"\w+"]), &opts).unwrap_err();
        assert_eq!(
            err,
            LocateError::MatchBudgetExceeded {
                pattern: r"\w+".into(),
                budget: 50
            }
        );
    }

    #[test]
    fn invalid_pattern_is_typed_error() {
        let d = doc("x");
        let err = locate_candidates(&d, &set(&[r"(\w)\1"]), &LocateOptions::default()).unwrap_err();
        assert!(matches!(err, LocateError::InvalidPattern { .. }));
    }

    #[test]
    fn model_provider_uses_scripted_patterns() {
        let reply = r#"Sure:
```json
{"patterns": [{"regex": "^\\*\\*Theorem \\d+\\.\\*\\*", "kind": "theorem"}, {"regex": "^Lemma \\d+", "kind": "Lemma"}]}
```"#;
        let client = ScriptedCompletion::new([reply]);
        let provider = ModelPatternProvider::new(&client).with_sample_chars(10);
        let d = doc("**Theorem 1.** a\nLemma 2 b and more text past the sample");
        let set = provider.propose(&d).unwrap();
        assert_eq!(
            set.patterns,
            vec![
                PatternSpec::new(r"^\*\*Theorem \d+\.\*\*", Some(StatementKind::Theorem)),
                PatternSpec::new(r"^Lemma \d+", Some(StatementKind::Lemma)),
            ]
        );
        let prompt = &client.prompts()[0];
        assert!(prompt.contains("(truncated)"));
        assert!(!prompt.contains("past the sample"));
        let spans = locate_candidates(&d, &set, &LocateOptions::default()).unwrap();
        assert_eq!(spans.len(), 2);
    }

    #[test]
    fn model_provider_drops_bad_regexes_and_reports_failures() {
        let client = ScriptedCompletion::new([r#"["^Lemma", "(a)\\1", "^Theorem"]"#, "nonsense"]);
        let provider = ModelPatternProvider::new(&client);
        let d = doc("Lemma");
        let set = provider.propose(&d).unwrap();
        assert_eq!(set.patterns.len(), 2);
        assert!(matches!(provider.propose(&d), Err(ProviderError::Parse(_))));
        assert!(matches!(provider.propose(&d), Err(ProviderError::Client(ClientError::Exhausted))));
    }

    #[test]
    fn fallback_provider_recovers() {
        let client = ScriptedCompletion::new(Vec::<String>::new());
        let provider = WithFallback {
            primary: ModelPatternProvider::new(&client),
            fallback: HeuristicProvider,
        };
        let set = provider.propose(&doc("Lemma 1. x")).unwrap();
        assert_eq!(set.patterns.len(), 1);

        let client = ScriptedCompletion::new([r#"["(a)\\1"]"#]);
        let provider = WithFallback {
            primary: ModelPatternProvider::new(&client),
            fallback: HeuristicProvider,
        };
        let set = provider.propose(&doc("Lemma 1. x")).unwrap();
        assert_eq!(set.patterns.len(), 1, "no compilable patterns falls back");
    }

    fn arb_doc() -> impl Strategy<Value = String> {
        proptest::collection::vec(
            prop_oneof![
                Just("Lemma 1. ".to_string()),
                Just("\n".to_string()),
                Just("Theorem 2.3.".to_string()),
                Just("∎ ".to_string()),
                "[a-z ]{0,30}",
            ],
            1..40,
        )
        .prop_map(|parts| parts.concat())
        .prop_filter("non-empty", |s| !s.trim().is_empty())
    }

    proptest! {
        #[test]
        fn spans_sorted_disjoint_in_bounds(
            text in arb_doc(),
            cap in 1usize..200,
            pats in proptest::sample::subsequence(vec![r"^Lemma", r"Lemma \d", r"\d+", r"Theorem \d+\.\d+", r"(?m)$", r"em"], 0..6),
        ) {
            let d = doc(&text);
            let ps = set(&pats);
            let opts = LocateOptions { span_cap: cap, ..LocateOptions::default() };
            let spans = locate_candidates(&d, &ps, &opts).unwrap();
            let again = locate_candidates(&d, &ps, &opts).unwrap();
            prop_assert_eq!(&spans, &again);
            for s in &spans {
                prop_assert!(s.start < s.end && s.end <= d.len_chars());
                prop_assert!(s.end - s.start <= cap);
            }
            for w in spans.windows(2) {
                prop_assert!(w[0].end <= w[1].start);
            }
        }
    }
}
