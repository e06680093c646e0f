//! Per-document dependency graphs: construction from reconciled statements,
//! cycle repair, peel layering, and export.
//!
//! Nodes are kept in document order (by span start); an edge `(a, b)` means
//! statement `b` depends on statement `a`.

mod unfold;

pub use unfold::{
    ancestor_order, unfold, ConcatExpander, ExpandContext, ExpandError, Expander, Expansion,
    ModelExpander, UnfoldedStatement, DEFAULT_BUDGET, UNFOLDED_SCHEMA,
};

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};

use petgraph::graph::{DiGraph, NodeIndex};
use serde::{Deserialize, Serialize};

use crate::statement::{StatementKind, StructuredStatement};

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum GraphError {
    #[error("statements span several documents ({0:?} and {1:?})")]
    MixedDocuments(String, String),
    #[error("duplicate node {0:?}")]
    DuplicateNode(String),
    #[error("edge endpoint {0} out of range")]
    EdgeOutOfRange(usize),
    #[error("self-loop on {0:?}")]
    SelfLoop(String),
    #[error("graph has a cycle through {0} unpeeled nodes")]
    Cycle(usize),
    #[error("no statement for node {0:?}")]
    MissingStatement(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DependencyGraph {
    pub doc_id: String,
    nodes: Vec<String>,
    edges: BTreeSet<(usize, usize)>,
    position: HashMap<String, usize>,
}

impl DependencyGraph {
    /// Graph over `nodes` (in document order) with edges given as node
    /// positions. Self-loops and out-of-range endpoints are rejected.
    pub fn new(
        doc_id: impl Into<String>,
        nodes: Vec<String>,
        edges: impl IntoIterator<Item = (usize, usize)>,
    ) -> Result<Self, GraphError> {
        let mut position = HashMap::with_capacity(nodes.len());
        for (i, n) in nodes.iter().enumerate() {
            if position.insert(n.clone(), i).is_some() {
                return Err(GraphError::DuplicateNode(n.clone()));
            }
        }
        let mut set = BTreeSet::new();
        for (a, b) in edges {
            for e in [a, b] {
                if e >= nodes.len() {
                    return Err(GraphError::EdgeOutOfRange(e));
                }
            }
            if a == b {
                return Err(GraphError::SelfLoop(nodes[a].clone()));
            }
            set.insert((a, b));
        }
        Ok(Self {
            doc_id: doc_id.into(),
            nodes,
            edges: set,
            position,
        })
    }

    pub fn nodes(&self) -> &[String] {
        &self.nodes
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn position(&self, stmt_id: &str) -> Option<usize> {
        self.position.get(stmt_id).copied()
    }

    /// Edges as `(from, to)` node positions, sorted.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.edges.iter().copied()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn has_edge(&self, from: usize, to: usize) -> bool {
        self.edges.contains(&(from, to))
    }

    /// Edges as `(from, to)` stmt ids.
    pub fn edge_ids(&self) -> Vec<(String, String)> {
        self.edges
            .iter()
            .map(|&(a, b)| (self.nodes[a].clone(), self.nodes[b].clone()))
            .collect()
    }

    /// Direct dependencies of each node, ascending by position.
    pub fn in_adjacency(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.nodes.len()];
        for &(a, b) in &self.edges {
            adj[b].push(a);
        }
        for v in &mut adj {
            v.sort_unstable();
        }
        adj
    }

    /// Direct dependents of each node, ascending by position.
    pub fn out_adjacency(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.nodes.len()];
        for &(a, b) in &self.edges {
            adj[a].push(b);
        }
        adj
    }

    pub fn is_acyclic(&self) -> bool {
        peel(self).is_ok()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EdgeRef {
    pub from: String,
    pub to: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DanglingRef {
    pub stmt_id: String,
    pub dep: String,
}

/// What `build_graph` dropped and why.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BuildReport {
    pub self_loops: Vec<String>,
    pub forward_refs: Vec<EdgeRef>,
    pub dangling: Vec<DanglingRef>,
    pub duplicate_edges: usize,
    pub unresolved: usize,
}

/// Build the dependency graph of one document's statements. Every resolved
/// local dependency becomes an edge from the dependency to the dependent;
/// self-loops, references to later statements and references to unknown ids
/// are dropped and reported.
pub fn build_graph(statements: &[StructuredStatement]) -> Result<(DependencyGraph, BuildReport), GraphError> {
    let doc_id = statements.first().map(|s| s.doc_id.clone()).unwrap_or_default();
    if let Some(other) = statements.iter().find(|s| s.doc_id != doc_id) {
        return Err(GraphError::MixedDocuments(doc_id, other.doc_id.clone()));
    }
    let mut ordered: Vec<&StructuredStatement> = statements.iter().collect();
    ordered.sort_by(|a, b| a.span.0.cmp(&b.span.0).then_with(|| a.stmt_id.cmp(&b.stmt_id)));
    let nodes: Vec<String> = ordered.iter().map(|s| s.stmt_id.clone()).collect();
    let mut graph = DependencyGraph::new(doc_id, nodes, [])?;

    let mut report = BuildReport::default();
    let mut edges = BTreeSet::new();
    for (to, s) in ordered.iter().enumerate() {
        for dep in &s.local_deps {
            let Some(id) = &dep.stmt_id else {
                report.unresolved += 1;
                continue;
            };
            if *id == s.stmt_id {
                report.self_loops.push(s.stmt_id.clone());
                continue;
            }
            let Some(from) = graph.position(id) else {
                report.dangling.push(DanglingRef {
                    stmt_id: s.stmt_id.clone(),
                    dep: id.clone(),
                });
                continue;
            };
            if from > to {
                report.forward_refs.push(EdgeRef {
                    from: id.clone(),
                    to: s.stmt_id.clone(),
                });
                continue;
            }
            if !edges.insert((from, to)) {
                report.duplicate_edges += 1;
            }
        }
    }
    graph.edges = edges;
    Ok((graph, report))
}

/// Make the graph acyclic: inside every strongly connected component with
/// more than one node, drop each edge whose source comes later in the
/// document than its target. Edges outside such components are untouched.
pub fn repair_cycles(graph: &DependencyGraph) -> (DependencyGraph, Vec<EdgeRef>) {
    let mut pg: DiGraph<(), ()> = DiGraph::with_capacity(graph.len(), graph.edge_count());
    let idx: Vec<NodeIndex> = (0..graph.len()).map(|_| pg.add_node(())).collect();
    for (a, b) in graph.edges() {
        pg.add_edge(idx[a], idx[b], ());
    }
    let mut component = vec![usize::MAX; graph.len()];
    for (c, members) in petgraph::algo::tarjan_scc(&pg).into_iter().enumerate() {
        if members.len() > 1 {
            for m in members {
                component[m.index()] = c;
            }
        }
    }
    let mut kept = BTreeSet::new();
    let mut removed = Vec::new();
    for (a, b) in graph.edges() {
        let cyclic = component[a] != usize::MAX && component[a] == component[b];
        if cyclic && a > b {
            removed.push(EdgeRef {
                from: graph.nodes[a].clone(),
                to: graph.nodes[b].clone(),
            });
        } else {
            kept.insert((a, b));
        }
    }
    let repaired = DependencyGraph {
        edges: kept,
        ..graph.clone()
    };
    (repaired, removed)
}

/// Peel layer of every node position; layer `k` is the set of nodes with
/// no remaining dependencies once layers `0..k` are removed.
pub(crate) fn peel(graph: &DependencyGraph) -> Result<Vec<usize>, GraphError> {
    let n = graph.len();
    let out = graph.out_adjacency();
    let mut indegree = vec![0usize; n];
    for (_, b) in graph.edges() {
        indegree[b] += 1;
    }
    let mut layer = vec![usize::MAX; n];
    let mut frontier: Vec<usize> = (0..n).filter(|&v| indegree[v] == 0).collect();
    let mut depth = 0;
    let mut assigned = 0;
    while !frontier.is_empty() {
        let mut next = Vec::new();
        for &v in &frontier {
            layer[v] = depth;
            assigned += 1;
            for &w in &out[v] {
                indegree[w] -= 1;
                if indegree[w] == 0 {
                    next.push(w);
                }
            }
        }
        next.sort_unstable();
        frontier = next;
        depth += 1;
    }
    if assigned < n {
        return Err(GraphError::Cycle(n - assigned));
    }
    Ok(layer)
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerAssignment {
    pub layers: BTreeMap<String, usize>,
}

impl LayerAssignment {
    pub fn layer(&self, stmt_id: &str) -> Option<usize> {
        self.layers.get(stmt_id).copied()
    }

    /// Number of layers.
    pub fn depth(&self) -> usize {
        self.layers.values().max().map_or(0, |m| m + 1)
    }
}

/// Partition an acyclic graph into peel layers.
pub fn partition_layers(dag: &DependencyGraph) -> Result<LayerAssignment, GraphError> {
    let layer = peel(dag)?;
    Ok(LayerAssignment {
        layers: dag.nodes.iter().cloned().zip(layer).collect(),
    })
}

pub const GRAPH_SCHEMA: &str = "graph/v1";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExportNode {
    pub stmt_id: String,
    #[serde(default)]
    pub label: Option<String>,
    pub kind: StatementKind,
    pub layer: usize,
}

/// Graph as stored and served: nodes with layers, edges, and what was
/// dropped while building and repairing it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphExport {
    pub schema: String,
    pub doc_id: String,
    pub nodes: Vec<ExportNode>,
    pub edges: Vec<EdgeRef>,
    #[serde(default)]
    pub removed_edges: Vec<EdgeRef>,
    #[serde(default)]
    pub report: BuildReport,
}

impl GraphExport {
    pub fn new(
        dag: &DependencyGraph,
        layers: &LayerAssignment,
        statements: &[StructuredStatement],
        removed_edges: Vec<EdgeRef>,
        report: BuildReport,
    ) -> Self {
        let by_id: HashMap<&str, &StructuredStatement> =
            statements.iter().map(|s| (s.stmt_id.as_str(), s)).collect();
        let nodes = dag
            .nodes
            .iter()
            .map(|id| {
                let s = by_id.get(id.as_str());
                ExportNode {
                    stmt_id: id.clone(),
                    label: s.and_then(|s| s.label.clone()),
                    kind: s.map_or(StatementKind::Other, |s| s.kind),
                    layer: layers.layer(id).unwrap_or(0),
                }
            })
            .collect();
        let edges = dag
            .edge_ids()
            .into_iter()
            .map(|(from, to)| EdgeRef { from, to })
            .collect();
        Self {
            schema: GRAPH_SCHEMA.to_string(),
            doc_id: dag.doc_id.clone(),
            nodes,
            edges,
            removed_edges,
            report,
        }
    }

    /// Rebuild the graph structure from an export.
    pub fn to_graph(&self) -> Result<DependencyGraph, GraphError> {
        let nodes: Vec<String> = self.nodes.iter().map(|n| n.stmt_id.clone()).collect();
        let pos: HashMap<&str, usize> = nodes.iter().enumerate().map(|(i, n)| (n.as_str(), i)).collect();
        let mut edges = Vec::with_capacity(self.edges.len());
        for e in &self.edges {
            let from = *pos.get(e.from.as_str()).ok_or_else(|| GraphError::MissingStatement(e.from.clone()))?;
            let to = *pos.get(e.to.as_str()).ok_or_else(|| GraphError::MissingStatement(e.to.clone()))?;
            edges.push((from, to));
        }
        DependencyGraph::new(self.doc_id.clone(), nodes, edges)
    }
}

/// Build, repair and layer a document's graph in one go.
pub fn build_document_graph(statements: &[StructuredStatement]) -> Result<(DependencyGraph, GraphExport), GraphError> {
    let (graph, report) = build_graph(statements)?;
    let (dag, removed) = repair_cycles(&graph);
    let layers = partition_layers(&dag)?;
    let export = GraphExport::new(&dag, &layers, statements, removed, report);
    Ok((dag, export))
}

/// Nodes reachable backwards from each node (its transitive dependencies).
pub fn ancestor_sets(graph: &DependencyGraph) -> Vec<HashSet<usize>> {
    let inn = graph.in_adjacency();
    (0..graph.len())
        .map(|v| {
            let mut seen = HashSet::new();
            let mut stack = inn[v].clone();
            while let Some(u) = stack.pop() {
                if seen.insert(u) {
                    stack.extend(inn[u].iter().copied());
                }
            }
            seen
        })
        .collect()
}
