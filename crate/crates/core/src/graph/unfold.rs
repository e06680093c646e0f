//! Layer-by-layer unfolding of statements into self-contained text.
//!
//! Each statement is expanded from its direct dependencies only, which are
//! already unfolded because they sit in earlier layers.

use std::collections::{BTreeSet, HashMap, HashSet};

use serde::{Deserialize, Serialize};

use super::{peel, DependencyGraph, GraphError};
use crate::client::{ClientError, CompletionClient};
use crate::statement::StructuredStatement;
use crate::text::truncate_chars;

pub const DEFAULT_BUDGET: usize = 20_000;
pub const UNFOLDED_SCHEMA: &str = "unfolded/v1";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UnfoldedStatement {
    pub stmt_id: String,
    pub layer: usize,
    pub unfolded_text: String,
    pub ancestors: BTreeSet<String>,
    pub truncated: bool,
    /// The expander failed and the text came from plain concatenation.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub fallback: bool,
    /// Ancestors in the order their text is emitted.
    #[serde(default)]
    pub sources: Vec<String>,
}

#[derive(Debug, thiserror::Error)]
pub enum ExpandError {
    #[error("expander client failed: {0}")]
    Client(#[from] ClientError),
    #[error("expander returned empty text")]
    Empty,
}

/// Lookups an expander may need beyond the direct dependencies.
pub struct ExpandContext<'a> {
    pub statements: &'a HashMap<&'a str, &'a StructuredStatement>,
    /// Maximum chars of output; `usize::MAX` for no limit.
    pub budget: usize,
}

impl ExpandContext<'_> {
    fn name_of<'s>(&'s self, id: &'s str) -> &'s str {
        self.statements.get(id).map_or(id, |s| s.display_name())
    }

    fn content_of(&self, id: &str) -> &str {
        self.statements.get(id).map_or("", |s| s.content.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Expansion {
    pub text: String,
    pub truncated: bool,
}

impl Expansion {
    fn within(text: &str, budget: usize) -> Self {
        let (cut, truncated) = truncate_chars(text, budget);
        Self {
            text: cut.to_string(),
            truncated,
        }
    }
}

pub trait Expander: Send + Sync {
    /// Expand `statement` given its direct dependencies, already unfolded and
    /// in document order.
    fn expand(
        &self,
        statement: &StructuredStatement,
        deps: &[&UnfoldedStatement],
        ctx: &ExpandContext<'_>,
    ) -> Result<Expansion, ExpandError>;
}

/// Ancestors of a statement in emission order: for each direct dependency in
/// document order, its own not-yet-emitted ancestors, then the dependency.
pub fn ancestor_order(deps: &[&UnfoldedStatement]) -> Vec<String> {
    let mut seen = HashSet::new();
    let mut order = Vec::new();
    for d in deps {
        for a in d.sources.iter().chain(std::iter::once(&d.stmt_id)) {
            if seen.insert(a.as_str()) {
                order.push(a.clone());
            }
        }
    }
    order
}

/// Emits `[Requires <label>] <content>` for every ancestor once, in
/// [`ancestor_order`], followed by the statement's own content, all joined
/// by single spaces and cut at the budget.
#[derive(Debug, Clone, Copy, Default)]
pub struct ConcatExpander;

impl Expander for ConcatExpander {
    fn expand(
        &self,
        statement: &StructuredStatement,
        deps: &[&UnfoldedStatement],
        ctx: &ExpandContext<'_>,
    ) -> Result<Expansion, ExpandError> {
        let mut text = String::new();
        for id in ancestor_order(deps) {
            text.push_str("[Requires ");
            text.push_str(ctx.name_of(&id));
            text.push_str("] ");
            text.push_str(ctx.content_of(&id));
            text.push(' ');
        }
        text.push_str(&statement.content);
        Ok(Expansion::within(&text, ctx.budget))
    }
}

/// Asks a completion model to rewrite the statement with its dependencies
/// inlined.
pub struct ModelExpander<C> {
    client: C,
}

impl<C: CompletionClient> ModelExpander<C> {
    pub fn new(client: C) -> Self {
        Self { client }
    }

    pub fn prompt(statement: &StructuredStatement, deps: &[&UnfoldedStatement], ctx: &ExpandContext<'_>) -> String {
        let mut prompt = String::from(
            "Rewrite the target mathematical statement so that it is self-contained: inline the \
             definitions, notation and assumptions it uses from the listed prerequisites. Keep the \
             mathematical meaning unchanged and do not add a proof. Reply with the rewritten \
             statement only.\n\n",
        );
        for d in deps {
            prompt.push_str(&format!("Prerequisite {}:\n{}\n\n", ctx.name_of(&d.stmt_id), d.unfolded_text));
        }
        prompt.push_str(&format!("Target {}:\n{}\n", statement.display_name(), statement.content));
        prompt
    }
}

impl<C: CompletionClient> Expander for ModelExpander<C> {
    fn expand(
        &self,
        statement: &StructuredStatement,
        deps: &[&UnfoldedStatement],
        ctx: &ExpandContext<'_>,
    ) -> Result<Expansion, ExpandError> {
        if deps.is_empty() {
            return Ok(Expansion::within(&statement.content, ctx.budget));
        }
        let reply = self.client.complete(&Self::prompt(statement, deps, ctx))?;
        let reply = reply.trim();
        if reply.is_empty() {
            return Err(ExpandError::Empty);
        }
        Ok(Expansion::within(reply, ctx.budget))
    }
}

/// Unfold every statement of an acyclic graph, layer 0 first and in document
/// order within a layer. Output is in document order. Expander failures fall
/// back to [`ConcatExpander`] and are flagged.
pub fn unfold(
    dag: &DependencyGraph,
    statements: &[StructuredStatement],
    expander: &dyn Expander,
    budget: usize,
) -> Result<Vec<UnfoldedStatement>, GraphError> {
    let by_id: HashMap<&str, &StructuredStatement> =
        statements.iter().map(|s| (s.stmt_id.as_str(), s)).collect();
    let nodes: Vec<&StructuredStatement> = dag
        .nodes()
        .iter()
        .map(|id| by_id.get(id.as_str()).copied().ok_or_else(|| GraphError::MissingStatement(id.clone())))
        .collect::<Result<_, _>>()?;
    let layers = peel(dag)?;
    let inn = dag.in_adjacency();
    let mut order: Vec<usize> = (0..dag.len()).collect();
    order.sort_by_key(|&v| (layers[v], v));

    let ctx = ExpandContext {
        statements: &by_id,
        budget,
    };
    let mut done: Vec<Option<UnfoldedStatement>> = vec![None; dag.len()];
    for v in order {
        let deps: Vec<&UnfoldedStatement> = inn[v]
            .iter()
            .map(|&u| done[u].as_ref().expect("dependencies sit in earlier layers"))
            .collect();
        let (expansion, fallback) = match expander.expand(nodes[v], &deps, &ctx) {
            Ok(e) => (e, false),
            Err(e) => {
                log::warn!("{}: expander failed ({e}); concatenating", nodes[v].stmt_id);
                let e = ConcatExpander.expand(nodes[v], &deps, &ctx).expect("concatenation is infallible");
                (e, true)
            }
        };
        let sources = ancestor_order(&deps);
        done[v] = Some(UnfoldedStatement {
            stmt_id: nodes[v].stmt_id.clone(),
            layer: layers[v],
            unfolded_text: expansion.text,
            ancestors: sources.iter().cloned().collect(),
            truncated: expansion.truncated,
            fallback,
            sources,
        });
    }
    Ok(done.into_iter().map(|u| u.expect("every node unfolded")).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::client::ScriptedCompletion;
    use crate::graph::ancestor_sets;
    use crate::statement::{stmt_id, StatementKind};
    use proptest::prelude::*;

    fn st(i: usize, content: &str) -> StructuredStatement {
        StructuredStatement {
            stmt_id: stmt_id("d", i),
            doc_id: "d".into(),
            span: (i, i + 1),
            kind: StatementKind::Lemma,
            label: Some(format!("L{i}")),
            content: content.into(),
            local_deps: vec![],
            low_confidence: false,
        }
    }

    fn graph(n: usize, edges: &[(usize, usize)]) -> DependencyGraph {
        DependencyGraph::new("d", (0..n).map(|i| stmt_id("d", i)).collect(), edges.iter().copied()).unwrap()
    }

    fn run(n: usize, edges: &[(usize, usize)], contents: &[&str], budget: usize) -> Vec<UnfoldedStatement> {
        let stmts: Vec<_> = (0..n).map(|i| st(i, contents[i])).collect();
        unfold(&graph(n, edges), &stmts, &ConcatExpander, budget).unwrap()
    }

    #[test]
    fn isolated_node_is_its_content() {
        let out = run(1, &[], &["alpha"], usize::MAX);
        assert_eq!(out[0].unfolded_text, "alpha");
        assert!(out[0].ancestors.is_empty());
        assert_eq!(out[0].layer, 0);
    }

    #[test]
    fn single_dependency_golden_format() {
        let out = run(2, &[(0, 1)], &["T", "C"], usize::MAX);
        assert_eq!(out[1].unfolded_text, "[Requires L0] T C");
    }

    #[test]
    fn chain_contains_every_ancestor() {
        let out = run(3, &[(0, 1), (1, 2)], &["AAA", "BBB", "CCC"], usize::MAX);
        assert_eq!(out[2].unfolded_text, "[Requires L0] AAA [Requires L1] BBB CCC");
        assert_eq!(out[2].ancestors, ["d:0", "d:1"].iter().map(|s| s.to_string()).collect());
        assert_eq!(out[2].layer, 2);
    }

    #[test]
    fn diamond_emits_shared_ancestor_once() {
        let out = run(4, &[(0, 1), (0, 2), (1, 3), (2, 3)], &["AAA", "BBB", "CCC", "DDD"], usize::MAX);
        assert_eq!(out[3].unfolded_text.matches("AAA").count(), 1);
        assert_eq!(out[3].unfolded_text, "[Requires L0] AAA [Requires L1] BBB [Requires L2] CCC DDD");
    }

    #[test]
    fn budget_truncates() {
        let long = "x".repeat(500);
        let out = run(2, &[(0, 1)], &[&long, "tail"], 100);
        assert_eq!(out[1].unfolded_text.chars().count(), 100);
        assert!(out[1].truncated);
        assert!(out[0].truncated);
    }

    #[test]
    fn unfolding_requires_acyclic_graph_and_statements() {
        let stmts = vec![st(0, "a"), st(1, "b")];
        assert!(matches!(unfold(&graph(2, &[(0, 1), (1, 0)]), &stmts, &ConcatExpander, 10), Err(GraphError::Cycle(2))));
        assert!(matches!(unfold(&graph(3, &[]), &stmts, &ConcatExpander, 10), Err(GraphError::MissingStatement(_))));
    }

    #[test]
    fn model_expander_and_fallback() {
        let stmts = vec![st(0, "A"), st(1, "B"), st(2, "C")];
        let client = ScriptedCompletion::from_results([Ok("  B, where A holds. ".to_string()), Err(ClientError::Transport("x".into()))]);
        let out = unfold(&graph(3, &[(0, 1), (1, 2)]), &stmts, &ModelExpander::new(&client), usize::MAX).unwrap();
        assert_eq!(out[0].unfolded_text, "A");
        assert_eq!(out[1].unfolded_text, "B, where A holds.");
        assert!(!out[1].fallback);
        assert!(out[2].fallback);
        assert_eq!(out[2].unfolded_text, "[Requires L0] A [Requires L1] B C");
        let prompts = client.prompts();
        assert_eq!(prompts.len(), 2);
        assert!(prompts[1].contains("Prerequisite L1:\nB, where A holds."));
    }

    proptest! {
        #[test]
        fn concat_is_complete_and_deterministic(
            (n, edges) in (1usize..=20).prop_flat_map(|n| {
                let pairs: Vec<(usize, usize)> = (0..n).flat_map(|a| (a + 1..n).map(move |b| (a, b))).collect();
                let len = pairs.len();
                (Just(n), proptest::sample::subsequence(pairs, 0..=len.min(60)))
            })
        ) {
            let sentinels: Vec<String> = (0..n).map(|i| format!("<S{i}>")).collect();
            let refs: Vec<&str> = sentinels.iter().map(String::as_str).collect();
            let out = run(n, &edges, &refs, usize::MAX);
            prop_assert_eq!(&out, &run(n, &edges, &refs, usize::MAX));
            let anc = ancestor_sets(&graph(n, &edges));
            for v in 0..n {
                for (u, s) in sentinels.iter().enumerate() {
                    let want = usize::from(u == v || anc[v].contains(&u));
                    prop_assert_eq!(out[v].unfolded_text.matches(s.as_str()).count(), want);
                }
            }
        }
    }
}
