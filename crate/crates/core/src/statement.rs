//! The typed statement records produced by extraction.

use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// Statement types the structurer may emit. Anything unrecognized maps to
/// [`StatementKind::Other`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum StatementKind {
    Definition,
    Theorem,
    Lemma,
    Proposition,
    Corollary,
    Remark,
    Notation,
    Assumption,
    Other,
}

impl StatementKind {
    pub const ALL: [StatementKind; 9] = [
        StatementKind::Definition,
        StatementKind::Theorem,
        StatementKind::Lemma,
        StatementKind::Proposition,
        StatementKind::Corollary,
        StatementKind::Remark,
        StatementKind::Notation,
        StatementKind::Assumption,
        StatementKind::Other,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            StatementKind::Definition => "definition",
            StatementKind::Theorem => "theorem",
            StatementKind::Lemma => "lemma",
            StatementKind::Proposition => "proposition",
            StatementKind::Corollary => "corollary",
            StatementKind::Remark => "remark",
            StatementKind::Notation => "notation",
            StatementKind::Assumption => "assumption",
            StatementKind::Other => "other",
        }
    }

    /// Lenient parse of a kind name or common abbreviation, any case.
    pub fn parse_lenient(s: &str) -> StatementKind {
        let s = s.trim().trim_end_matches('.').to_ascii_lowercase();
        match s.as_str() {
            "definition" | "defn" | "def" => StatementKind::Definition,
            "theorem" | "thm" => StatementKind::Theorem,
            "lemma" | "lem" => StatementKind::Lemma,
            "proposition" | "prop" => StatementKind::Proposition,
            "corollary" | "cor" => StatementKind::Corollary,
            "remark" | "rem" => StatementKind::Remark,
            "notation" => StatementKind::Notation,
            "assumption" | "hypothesis" => StatementKind::Assumption,
            _ => StatementKind::Other,
        }
    }
}

impl fmt::Display for StatementKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for StatementKind {
    type Err = std::convert::Infallible;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(StatementKind::parse_lenient(s))
    }
}

impl Serialize for StatementKind {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for StatementKind {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        Ok(StatementKind::parse_lenient(&s))
    }
}

/// A dependency reference as seen by the structurer: always a label, plus the
/// resolved statement id once reconciliation finds it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LocalDep {
    pub label: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stmt_id: Option<String>,
}

impl LocalDep {
    pub fn unresolved(label: impl Into<String>) -> Self {
        Self {
            label: label.into(),
            stmt_id: None,
        }
    }

    pub fn resolved(stmt_id: impl Into<String>, label: impl Into<String>) -> Self {
        Self {
            label: label.into(),
            stmt_id: Some(stmt_id.into()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StructuredStatement {
    pub stmt_id: String,
    pub doc_id: String,
    /// `[start, end)` in document chars.
    pub span: (usize, usize),
    pub kind: StatementKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    pub content: String,
    #[serde(default)]
    pub local_deps: Vec<LocalDep>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub low_confidence: bool,
}

impl StructuredStatement {
    pub fn start(&self) -> usize {
        self.span.0
    }

    /// Label when present, otherwise the id.
    pub fn display_name(&self) -> &str {
        self.label.as_deref().unwrap_or(&self.stmt_id)
    }
}

/// Statement ids are the document id plus the span start.
pub fn stmt_id(doc_id: &str, start: usize) -> String {
    format!("{doc_id}:{start}")
}

pub const STATEMENT_SCHEMA: &str = "stmt/v1";
