//! Seeded synthetic corpus with ground truth, for end-to-end evaluation.
//!
//! Each document is OCR-style markdown with numbered statement headers in
//! mixed styles, prose and proofs between them, and dependencies written
//! into the statement body as "By Lemma 3 and Definition 1, ...". Every
//! statement carries content words that occur nowhere else in the corpus,
//! so a query built from them has a single correct answer.

use std::collections::HashSet;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{DocumentMeta, SourceKind};
use crate::statement::{stmt_id, StatementKind};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SynthOptions {
    pub seed: u64,
    pub documents: usize,
    pub min_statements: usize,
    pub max_statements: usize,
    /// Most direct dependencies any statement gets.
    pub max_deps: usize,
}

impl Default for SynthOptions {
    fn default() -> Self {
        Self {
            seed: 7,
            documents: 10,
            min_statements: 6,
            max_statements: 14,
            max_deps: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TruthStatement {
    pub stmt_id: String,
    pub kind: StatementKind,
    pub label: String,
    /// Char offset of the header line.
    pub start: usize,
    pub content: String,
    /// stmt_ids of direct dependencies.
    pub deps: Vec<String>,
}

/// A query whose only correct answer is `stmt_id`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlantedQuery {
    pub stmt_id: String,
    pub query: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SynthDocument {
    pub meta: DocumentMeta,
    pub markdown: String,
    pub statements: Vec<TruthStatement>,
    pub planted: PlantedQuery,
}

const KINDS: [StatementKind; 5] = [
    StatementKind::Definition,
    StatementKind::Lemma,
    StatementKind::Proposition,
    StatementKind::Theorem,
    StatementKind::Corollary,
];

const FILLER: [&str; 6] = [
    "In this section we fix notation and recall standard facts.",
    "Throughout, ε > 0 denotes a fixed constant and ℝ the real line.",
    "The following results are used repeatedly below.",
    "We now turn to the main estimates; the reader may skip the proofs on a first reading.",
    "Recall that all spaces are assumed separable — a convention we keep below.",
    "Examples show that none of the hypotheses can be dropped.",
];

struct Words {
    rng: ChaCha8Rng,
    used: HashSet<String>,
}

impl Words {
    /// A fresh lowercase word never handed out before.
    fn fresh(&mut self) -> String {
        const CONSONANTS: &[u8] = b"bcdfghjklmnpqrstvwxz";
        const VOWELS: &[u8] = b"aeiouy";
        loop {
            let syllables = self.rng.random_range(3..=4);
            let mut w = String::new();
            for _ in 0..syllables {
                w.push(*CONSONANTS.choose(&mut self.rng).unwrap() as char);
                w.push(*VOWELS.choose(&mut self.rng).unwrap() as char);
            }
            if self.used.insert(w.clone()) {
                return w;
            }
        }
    }

    fn phrase(&mut self, n: usize) -> Vec<String> {
        (0..n).map(|_| self.fresh()).collect()
    }
}

fn kind_word(kind: StatementKind) -> &'static str {
    match kind {
        StatementKind::Definition => "Definition",
        StatementKind::Lemma => "Lemma",
        StatementKind::Proposition => "Proposition",
        StatementKind::Theorem => "Theorem",
        StatementKind::Corollary => "Corollary",
        _ => "Remark",
    }
}

fn header(style: usize, word: &str, number: &str, title: Option<&str>) -> (String, bool) {
    let title = title.map(|t| format!(" ({t})")).unwrap_or_default();
    // (header, body continues on the same line)
    match style % 5 {
        0 => (format!("**{word} {number}{title}.**"), true),
        1 => (format!("### {word} {number}{title}"), false),
        2 => (format!("{word} {number}{title}."), true),
        3 => (format!("> *{word} {number}{title}.*"), true),
        _ => (format!("__{word} {number}.__"), true),
    }
}

fn join_refs(labels: &[String]) -> String {
    match labels {
        [] => String::new(),
        [one] => one.clone(),
        [init @ .., last] => format!("{} and {last}", init.join(", ")),
    }
}

/// Generate a corpus. The same options always give the same corpus.
pub fn generate(opts: &SynthOptions) -> Vec<SynthDocument> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut words = Words {
        rng: ChaCha8Rng::seed_from_u64(opts.seed ^ 0x9e37_79b9_7f4a_7c15),
        used: HashSet::new(),
    };
    (0..opts.documents)
        .map(|d| generate_document(d, opts, &mut rng, &mut words))
        .collect()
}

fn generate_document(d: usize, opts: &SynthOptions, rng: &mut ChaCha8Rng, words: &mut Words) -> SynthDocument {
    let doc_id = format!("synth-{d:03}");
    let n = rng.random_range(opts.min_statements.max(2)..=opts.max_statements.max(opts.min_statements.max(2)));
    let section = rng.random_range(1..=4);
    let dotted = rng.random_bool(0.5);

    let mut md = String::new();
    let title = words.phrase(3).join(" ");
    md.push_str(&format!("# On {title}\n\n## {section}. Preliminaries\n\n"));
    md.push_str(&format!("{}\n\n", FILLER.choose(rng).unwrap()));

    let mut statements: Vec<TruthStatement> = Vec::with_capacity(n);
    // The last statement is the planted theorem: one dependency, no dependents.
    for i in 0..n {
        let planted = i + 1 == n;
        let kind = if i == 0 {
            StatementKind::Definition
        } else if planted {
            StatementKind::Theorem
        } else {
            *KINDS.choose(rng).unwrap()
        };
        let number = if dotted {
            format!("{section}.{}", i + 1)
        } else {
            (i + 1).to_string()
        };
        let label = format!("{} {number}", kind_word(kind));

        let mut deps: Vec<usize> = Vec::new();
        if planted {
            deps.push(0);
        } else if i > 0 && kind != StatementKind::Definition {
            let k = rng.random_range(0..=opts.max_deps.min(i));
            let mut pool: Vec<usize> = (0..i).collect();
            for _ in 0..k {
                let j = rng.random_range(0..pool.len());
                deps.push(pool.swap_remove(j));
            }
            deps.sort_unstable();
        }

        let own = words.phrase(if planted { 12 } else { 6 });
        let body = format!("Suppose {} {}. Then {}.", own[0], own[1], own[2..].join(" "));
        let dep_labels: Vec<String> = deps.iter().map(|&j| statements[j].label.clone()).collect();
        let content = if dep_labels.is_empty() {
            body
        } else {
            format!("By {}, {}", join_refs(&dep_labels), body.replacen("Suppose", "suppose", 1))
        };

        let titled = rng.random_bool(0.3).then(|| words.phrase(2).join(" "));
        let (head, inline) = header(rng.random_range(0..5), kind_word(kind), &number, titled.as_deref());
        let start = md.chars().count();
        let sep = if inline { " " } else { "\n" };
        md.push_str(&format!("{head}{sep}{content}\n\n"));
        if kind != StatementKind::Definition && rng.random_bool(0.6) {
            md.push_str(&format!("*Proof.* This follows from the above; see also {}. ∎\n\n", words.fresh()));
        }
        if rng.random_bool(0.25) {
            md.push_str(&format!("{}\n\n", FILLER.choose(rng).unwrap()));
        }

        statements.push(TruthStatement {
            stmt_id: stmt_id(&doc_id, start),
            kind,
            label,
            start,
            content,
            deps: deps.iter().map(|&j| statements[j].stmt_id.clone()).collect(),
        });
        if planted {
            let query = own.join(" ");
            let last = statements.last().unwrap();
            let planted = PlantedQuery {
                stmt_id: last.stmt_id.clone(),
                query,
            };
            let textbook = d % 4 == 3;
            let meta = DocumentMeta {
                doc_id: doc_id.clone(),
                source_kind: if textbook {
                    SourceKind::Textbook
                } else {
                    SourceKind::JournalPaper
                },
                journal_id: (!textbook).then(|| format!("journal-{}", d % 3)),
                year: 2007 + (d as u32 * 3) % 15,
                title: format!("On {title}"),
            };
            return SynthDocument {
                meta,
                markdown: md,
                statements,
                planted,
            };
        }
    }
    unreachable!("the loop returns at the planted statement")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn char_slice(s: &str, start: usize, len: usize) -> String {
        s.chars().skip(start).take(len).collect()
    }

    #[test]
    fn deterministic() {
        let opts = SynthOptions::default();
        assert_eq!(generate(&opts), generate(&opts));
        let other = SynthOptions { seed: 8, ..opts.clone() };
        assert_ne!(generate(&opts), generate(&other));
    }

    #[test]
    fn truth_is_consistent_with_text() {
        for doc in generate(&SynthOptions::default()) {
            let mut seen = HashSet::new();
            for (i, s) in doc.statements.iter().enumerate() {
                assert_eq!(s.stmt_id, stmt_id(&doc.meta.doc_id, s.start));
                let line = char_slice(&doc.markdown, s.start, 200);
                let word = s.label.split(' ').next().unwrap();
                assert!(line.trim_start_matches(['>', ' ', '*', '_', '#']).starts_with(word), "{line}");
                assert!(doc.markdown.contains(&s.content));
                for d in &s.deps {
                    assert!(doc.statements[..i].iter().any(|p| &p.stmt_id == d), "forward dep");
                }
                assert!(seen.insert(s.label.clone()), "labels unique");
            }
            let target = doc.statements.last().unwrap();
            assert_eq!(doc.planted.stmt_id, target.stmt_id);
            assert_eq!(target.deps.len(), 1);
            assert!(doc.statements.iter().all(|s| !s.deps.contains(&target.stmt_id)));
            assert!(doc.meta.validate().is_ok());
        }
    }

    #[test]
    fn planted_words_are_unique_to_target() {
        let corpus = generate(&SynthOptions::default());
        for doc in &corpus {
            for w in doc.planted.query.split(' ') {
                let holders: Vec<_> = corpus
                    .iter()
                    .flat_map(|d| &d.statements)
                    .filter(|s| s.content.split(|c: char| !c.is_alphanumeric()).any(|t| t == w))
                    .map(|s| s.stmt_id.clone())
                    .collect();
                assert_eq!(holders, vec![doc.planted.stmt_id.clone()]);
            }
        }
    }
}
