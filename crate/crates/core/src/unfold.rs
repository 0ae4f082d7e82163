//! Unfolding an ATG into its transfer tree (xtree).
//!
//! An edge is an arc indexed by the walk from it to the leader. The tree
//! contains every walk to the leader along which no node is entered twice;
//! the branch stops as soon as the walk's start node already received on it,
//! or has no ingoing arcs at all.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::Serialize;
use thiserror::Error;

use crate::graph::{in_semiconnected_witness, Arc, Digraph, GraphError, NodeId, Walk};

pub const DEFAULT_EDGE_BUDGET: usize = 100_000;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum UnfoldError {
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("xtree exceeds the edge budget of {budget} (size bound for {nodes} nodes: {bound})")]
    TooLarge { budget: usize, nodes: usize, bound: String },
    #[error("size bound is defined for n >= 1, got {0}")]
    BadSize(i64),
}

/// An arc indexed by its walk to the root. `walk.leaf() == Some(&arc)`.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct Edge {
    pub arc: Arc,
    pub walk: Walk,
}

impl Edge {
    pub fn depth(&self) -> usize {
        self.walk.len()
    }

    pub fn sender(&self) -> &NodeId {
        &self.arc.sender
    }

    pub fn receiver(&self) -> &NodeId {
        &self.arc.receiver
    }
}

/// Index of an edge in pre-order. Displayed 1-based.
pub type EdgeIx = usize;

#[derive(Clone, Debug)]
pub struct Xtree {
    leader: NodeId,
    source: Digraph,
    edges: Vec<Edge>,
    parent: Vec<Option<EdgeIx>>,
    children: Vec<Vec<EdgeIx>>,
    by_walk: BTreeMap<Walk, EdgeIx>,
}

/// Edges of one arc on one tree level.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct EdgeGroup {
    pub arc: Arc,
    pub depth: usize,
    pub edges: Vec<EdgeIx>,
}

pub fn unfold(d: &Digraph, leader: &NodeId) -> Result<Xtree, UnfoldError> {
    unfold_with_budget(d, leader, DEFAULT_EDGE_BUDGET)
}

pub fn unfold_with_budget(d: &Digraph, leader: &NodeId, budget: usize) -> Result<Xtree, UnfoldError> {
    if let Some(w) = in_semiconnected_witness(d, leader)? {
        return Err(GraphError::NotInSemiconnected { leader: leader.clone(), witness: w }.into());
    }
    let mut t = Xtree {
        leader: leader.clone(),
        source: d.clone(),
        edges: Vec::new(),
        parent: Vec::new(),
        children: Vec::new(),
        by_walk: BTreeMap::new(),
    };
    let too_large = || UnfoldError::TooLarge {
        budget,
        nodes: d.nodes().len(),
        bound: size_bound(d.nodes().len() as i64).map(|b| b.to_string()).unwrap_or_default(),
    };
    // Explicit stack of (parent, walk); children pushed in reverse so they
    // pop in arc order, giving a pre-order numbering.
    let mut stack: Vec<(Option<EdgeIx>, Walk)> =
        d.in_arcs(leader).map(|a| (None, Walk::single(a.clone()))).collect();
    stack.reverse();
    while let Some((parent, walk)) = stack.pop() {
        if t.edges.len() >= budget {
            return Err(too_large());
        }
        let ix = t.edges.len();
        let arc = walk.leaf().expect("non-empty walk").clone();
        if let Some(p) = parent {
            t.children[p].push(ix);
        }
        let start = arc.sender.clone();
        // The walk stops once its start node has already received on it.
        if !walk.has_receiver(&start) {
            for a in d.in_arcs(&start).collect::<Vec<_>>().into_iter().rev() {
                stack.push((Some(ix), walk.extend_leaf(a.clone())));
            }
        }
        t.by_walk.insert(walk.clone(), ix);
        t.edges.push(Edge { arc, walk });
        t.parent.push(parent);
        t.children.push(Vec::new());
    }
    Ok(t)
}

impl Xtree {
    pub fn leader(&self) -> &NodeId {
        &self.leader
    }

    pub fn source(&self) -> &Digraph {
        &self.source
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn edge(&self, i: EdgeIx) -> &Edge {
        &self.edges[i]
    }

    pub fn len(&self) -> usize {
        self.edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }

    pub fn depth_of(&self, i: EdgeIx) -> usize {
        self.edges[i].depth()
    }

    /// Maximum edge depth; 0 for the empty tree.
    pub fn depth(&self) -> usize {
        self.edges.iter().map(Edge::depth).max().unwrap_or(0)
    }

    pub fn parent(&self, i: EdgeIx) -> Option<EdgeIx> {
        self.parent[i]
    }

    pub fn children(&self, i: EdgeIx) -> &[EdgeIx] {
        &self.children[i]
    }

    pub fn index_of(&self, walk: &Walk) -> Option<EdgeIx> {
        self.by_walk.get(walk).copied()
    }

    pub fn contains(&self, e: &Edge) -> bool {
        self.index_of(&e.walk).is_some()
    }

    /// Depth-1 edges.
    pub fn roots(&self) -> impl Iterator<Item = EdgeIx> + '_ {
        (0..self.len()).filter(|&i| self.parent[i].is_none())
    }

    /// `i` and all its ancestors, leaf to root.
    pub fn on_path_to_root(&self, i: EdgeIx) -> Vec<EdgeIx> {
        let mut out = vec![i];
        let mut cur = i;
        while let Some(p) = self.parent[cur] {
            out.push(p);
            cur = p;
        }
        out
    }

    /// Edges ending at leaves of the tree.
    pub fn leaves(&self) -> impl Iterator<Item = EdgeIx> + '_ {
        (0..self.len()).filter(|&i| self.children[i].is_empty())
    }

    /// Root-to-leaf walks, i.e. the tree as its set of maximal paths.
    pub fn maximal_walks(&self) -> Vec<&Walk> {
        self.leaves().map(|i| &self.edges[i].walk).collect()
    }

    /// Size of the tree counted path by path: the total length of all
    /// maximal walks. For complete digraphs this is the closed form
    /// [`size_bound`].
    pub fn path_arc_count(&self) -> usize {
        self.leaves().map(|i| self.depth_of(i)).sum()
    }

    /// Partition by (arc, depth), ordered by arc then depth.
    pub fn edge_groups(&self) -> Vec<EdgeGroup> {
        let mut m: BTreeMap<(Arc, usize), Vec<EdgeIx>> = BTreeMap::new();
        for (i, e) in self.edges.iter().enumerate() {
            m.entry((e.arc.clone(), e.depth())).or_default().push(i);
        }
        m.into_iter().map(|((arc, depth), edges)| EdgeGroup { arc, depth, edges }).collect()
    }

    /// Duplicate families: all representatives of each arc.
    pub fn families(&self) -> BTreeMap<Arc, Vec<EdgeIx>> {
        let mut m: BTreeMap<Arc, Vec<EdgeIx>> = BTreeMap::new();
        for (i, e) in self.edges.iter().enumerate() {
            m.entry(e.arc.clone()).or_default().push(i);
        }
        m
    }

    /// Users appearing in the tree.
    pub fn users(&self) -> BTreeSet<NodeId> {
        let mut s: BTreeSet<NodeId> = self
            .edges
            .iter()
            .flat_map(|e| [e.arc.sender.clone(), e.arc.receiver.clone()])
            .collect();
        s.insert(self.leader.clone());
        s
    }

    /// Edges with `user` as sender or receiver.
    pub fn edges_of<'a>(&'a self, user: &'a NodeId) -> impl Iterator<Item = EdgeIx> + 'a {
        (0..self.len()).filter(move |&i| self.edges[i].arc.involves(user))
    }

    /// Graphviz rendering; labels are pre-order numbers, colours mark
    /// duplicate families.
    pub fn to_dot(&self) -> String {
        const PALETTE: [&str; 10] = [
            "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2",
            "#7f7f7f", "#bcbd22", "#17becf",
        ];
        let fam: BTreeMap<Arc, usize> =
            self.families().keys().enumerate().map(|(k, a)| (a.clone(), k)).collect();
        let mut s = String::from("digraph xtree {\n  rankdir=BT;\n  root [label=\"");
        s.push_str(self.leader.as_str());
        s.push_str("\"];\n");
        for (i, e) in self.edges.iter().enumerate() {
            let _ = writeln!(s, "  n{i} [label=\"{}\"];", e.arc.sender);
        }
        for (i, e) in self.edges.iter().enumerate() {
            let target = match self.parent[i] {
                Some(p) => format!("n{p}"),
                None => "root".to_string(),
            };
            let colour = PALETTE[fam[&e.arc] % PALETTE.len()];
            let _ = writeln!(s, "  n{i} -> {target} [label=\"{}\", color=\"{colour}\"];", i + 1);
        }
        s.push_str("}\n");
        s
    }

    /// JSON view: one object per edge with its pre-order number.
    pub fn to_json(&self) -> serde_json::Value {
        let edges: Vec<serde_json::Value> = self
            .edges
            .iter()
            .enumerate()
            .map(|(i, e)| {
                serde_json::json!({
                    "id": i + 1,
                    "arc": e.arc,
                    "depth": e.depth(),
                    "parent": self.parent[i].map(|p| p + 1),
                    "walk": e.walk,
                })
            })
            .collect();
        serde_json::json!({
            "leader": self.leader,
            "depth": self.depth(),
            "edges": edges,
        })
    }
}

/// `Σ_{i=1}^{n−1} (n−1)!/(n−1−i)! · i(i+1)`: the number of arcs on all
/// root-to-leaf paths of the xtree of the complete digraph on `n` nodes.
pub fn size_bound(n: i64) -> Result<u128, UnfoldError> {
    if n < 1 {
        return Err(UnfoldError::BadSize(n));
    }
    let m = (n - 1) as u128;
    let mut total: u128 = 0;
    let mut falling: u128 = 1; // (n-1)!/(n-1-i)!
    for i in 1..=m {
        falling = falling.checked_mul(m - i + 1).ok_or(UnfoldError::BadSize(n))?;
        let term = falling.checked_mul(i * (i + 1)).ok_or(UnfoldError::BadSize(n))?;
        total = total.checked_add(term).ok_or(UnfoldError::BadSize(n))?;
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn n(s: &str) -> NodeId {
        NodeId::new(s)
    }

    #[test]
    fn two_party_swap() {
        let d = Digraph::from_pairs(&[("A", "B"), ("B", "A")]).unwrap();
        let t = unfold(&d, &n("A")).unwrap();
        assert_eq!(t.len(), 2);
        assert_eq!(t.edge(0).walk.to_string(), "[(B,A)]");
        assert_eq!(t.edge(1).walk.to_string(), "[(A,B),(B,A)]");
        assert_eq!(t.depth(), 2);
        assert_eq!(t.edge_groups().len(), 2);
    }

    #[test]
    fn single_arc_and_cycle() {
        let d = Digraph::from_pairs(&[("A", "B")]).unwrap();
        let t = unfold(&d, &n("B")).unwrap();
        assert_eq!(t.len(), 1);
        assert!(matches!(unfold(&d, &n("A")), Err(UnfoldError::Graph(GraphError::NotInSemiconnected { .. }))));

        let c = unfold(&Digraph::cycle(3), &n("A")).unwrap();
        assert_eq!(c.len(), 3);
        assert_eq!(c.depth(), 3);
        assert_eq!(c.on_path_to_root(2), vec![2, 1, 0]);
        assert_eq!(c.on_path_to_root(1), vec![1, 0]);
        assert_eq!(c.on_path_to_root(0), vec![0]);
    }

    #[test]
    fn single_node_is_empty_tree() {
        let d = Digraph::new([n("A")], []).unwrap();
        let t = unfold(&d, &n("A")).unwrap();
        assert!(t.is_empty());
        assert_eq!(t.depth(), 0);
    }

    #[test]
    fn three_party_numbering() {
        // Pre-order numbering with children in sender order.
        let t = unfold(&Digraph::complete(3), &n("A")).unwrap();
        let got: Vec<String> = t.edges().iter().map(|e| e.arc.to_string()).collect();
        assert_eq!(
            got,
            ["(B,A)", "(A,B)", "(C,B)", "(A,C)", "(B,C)", "(C,A)", "(A,C)", "(B,C)", "(A,B)", "(C,B)"]
        );
        // ② and ⑨ are the same arc on different levels.
        assert_eq!(t.edge(1).arc, t.edge(8).arc);
        assert_ne!(t.depth_of(1), t.depth_of(8));
        assert_eq!(t.depth(), 3);
        assert_eq!(t.path_arc_count(), 16);
    }

    #[test]
    fn closed_form() {
        let v: Vec<u128> = (1..=5).map(|k| size_bound(k).unwrap()).collect();
        assert_eq!(v, [0, 2, 16, 114, 848]);
        assert!(size_bound(0).is_err());
    }

    #[test]
    fn budget() {
        let err = unfold_with_budget(&Digraph::complete(5), &n("A"), 100).unwrap_err();
        assert!(matches!(err, UnfoldError::TooLarge { budget: 100, .. }));
    }
}
