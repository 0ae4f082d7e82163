//! Atomic transfer graphs: arcs, walks, in-semiconnectivity and composition.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use crate::ids::NodeId;
use crate::ids::{FundId, TamId};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GraphError {
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
    #[error("loop arc on {0}")]
    Loop(NodeId),
    #[error("duplicate arc {0}")]
    DuplicateArc(Arc),
    #[error("graph has no nodes")]
    Empty,
    #[error("graph is not in-semiconnected w.r.t. {leader}: {witness} has no walk to it")]
    NotInSemiconnected { leader: NodeId, witness: NodeId },
    #[error("invalid graph spec: {0}")]
    Spec(String),
}

/// A directed transfer `sender → receiver`; `tag` separates parallel arcs.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Arc {
    pub sender: NodeId,
    pub receiver: NodeId,
    #[serde(default, skip_serializing_if = "is_zero")]
    pub tag: u32,
}

fn is_zero(t: &u32) -> bool {
    *t == 0
}

impl Arc {
    pub fn new(sender: impl Into<NodeId>, receiver: impl Into<NodeId>) -> Arc {
        Arc { sender: sender.into(), receiver: receiver.into(), tag: 0 }
    }

    pub fn tagged(sender: impl Into<NodeId>, receiver: impl Into<NodeId>, tag: u32) -> Arc {
        Arc { sender: sender.into(), receiver: receiver.into(), tag }
    }

    pub fn involves(&self, n: &NodeId) -> bool {
        &self.sender == n || &self.receiver == n
    }
}

impl fmt::Display for Arc {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.tag == 0 {
            write!(f, "({},{})", self.sender, self.receiver)
        } else {
            write!(f, "({},{})#{}", self.sender, self.receiver, self.tag)
        }
    }
}

impl fmt::Debug for Arc {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Digraph {
    nodes: BTreeSet<NodeId>,
    arcs: BTreeSet<Arc>,
}

impl Digraph {
    pub fn new(
        nodes: impl IntoIterator<Item = NodeId>,
        arcs: impl IntoIterator<Item = Arc>,
    ) -> Result<Digraph, GraphError> {
        let nodes: BTreeSet<NodeId> = nodes.into_iter().collect();
        if nodes.is_empty() {
            return Err(GraphError::Empty);
        }
        let mut set = BTreeSet::new();
        for a in arcs {
            if a.sender == a.receiver {
                return Err(GraphError::Loop(a.sender));
            }
            for n in [&a.sender, &a.receiver] {
                if !nodes.contains(n) {
                    return Err(GraphError::UnknownNode(n.clone()));
                }
            }
            if !set.insert(a.clone()) {
                return Err(GraphError::DuplicateArc(a));
            }
        }
        Ok(Digraph { nodes, arcs: set })
    }

    /// Convenience constructor from `(sender, receiver)` name pairs; nodes
    /// are the arc endpoints.
    pub fn from_pairs(pairs: &[(&str, &str)]) -> Result<Digraph, GraphError> {
        let arcs: Vec<Arc> = pairs.iter().map(|(s, r)| Arc::new(*s, *r)).collect();
        let nodes: Vec<NodeId> = arcs.iter().flat_map(|a| [a.sender.clone(), a.receiver.clone()]).collect();
        Digraph::new(nodes, arcs)
    }

    /// Complete digraph on nodes `A, B, C, …`.
    pub fn complete(n: usize) -> Digraph {
        let names = node_names(n);
        let mut arcs = Vec::new();
        for s in &names {
            for r in &names {
                if s != r {
                    arcs.push(Arc::new(s.clone(), r.clone()));
                }
            }
        }
        Digraph::new(names, arcs).expect("complete digraph is well formed")
    }

    /// Directed cycle `A → B → … → A`.
    pub fn cycle(n: usize) -> Digraph {
        let names = node_names(n);
        let arcs = (0..n).map(|i| Arc::new(names[i].clone(), names[(i + 1) % n].clone()));
        Digraph::new(names.clone(), arcs.collect::<Vec<_>>()).expect("cycle is well formed")
    }

    pub fn nodes(&self) -> &BTreeSet<NodeId> {
        &self.nodes
    }

    pub fn arcs(&self) -> &BTreeSet<Arc> {
        &self.arcs
    }

    pub fn contains_node(&self, n: &NodeId) -> bool {
        self.nodes.contains(n)
    }

    /// Arcs ending in `n`, in deterministic (sender, tag) order.
    pub fn in_arcs<'a>(&'a self, n: &'a NodeId) -> impl Iterator<Item = &'a Arc> + 'a {
        self.arcs.iter().filter(move |a| &a.receiver == n)
    }

    pub fn out_arcs<'a>(&'a self, n: &'a NodeId) -> impl Iterator<Item = &'a Arc> + 'a {
        self.arcs.iter().filter(move |a| &a.sender == n)
    }

    fn check_node(&self, n: &NodeId) -> Result<(), GraphError> {
        if self.nodes.contains(n) {
            Ok(())
        } else {
            Err(GraphError::UnknownNode(n.clone()))
        }
    }
}

pub fn node_names(n: usize) -> Vec<NodeId> {
    (0..n)
        .map(|i| {
            if i < 26 {
                NodeId::new(((b'A' + i as u8) as char).to_string())
            } else {
                NodeId::new(format!("N{i}"))
            }
        })
        .collect()
}

/// A walk, stored leaf-first: element 0 is the arc farthest from the root and
/// the last element ends at the root.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Walk(pub Vec<Arc>);

impl Walk {
    pub fn single(a: Arc) -> Walk {
        Walk(vec![a])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn arcs(&self) -> &[Arc] {
        &self.0
    }

    /// The leaf-most arc.
    pub fn leaf(&self) -> Option<&Arc> {
        self.0.first()
    }

    /// Node the walk ends in.
    pub fn end(&self) -> Option<&NodeId> {
        self.0.last().map(|a| &a.receiver)
    }

    /// Node the walk starts from.
    pub fn start(&self) -> Option<&NodeId> {
        self.0.first().map(|a| &a.sender)
    }

    /// Consecutive arcs chain up: receiver of each arc is the sender of the
    /// next one towards the root.
    pub fn is_chained(&self) -> bool {
        self.0.windows(2).all(|w| w[0].receiver == w[1].sender)
    }

    /// `a ++ self`, i.e. the walk extended by one arc at the leaf end.
    pub fn extend_leaf(&self, a: Arc) -> Walk {
        let mut v = Vec::with_capacity(self.0.len() + 1);
        v.push(a);
        v.extend(self.0.iter().cloned());
        Walk(v)
    }

    /// The walk without its leaf arc.
    pub fn parent(&self) -> Walk {
        Walk(self.0[1.min(self.0.len())..].to_vec())
    }

    pub fn receivers(&self) -> impl Iterator<Item = &NodeId> {
        self.0.iter().map(|a| &a.receiver)
    }

    pub fn has_receiver(&self, n: &NodeId) -> bool {
        self.0.iter().any(|a| &a.receiver == n)
    }
}

impl fmt::Display for Walk {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("[")?;
        for (i, a) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            write!(f, "{a}")?;
        }
        f.write_str("]")
    }
}

impl fmt::Debug for Walk {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

/// `w1` is a suffix of `w2` (at the root end): `w2 = w ++ w1`.
pub fn is_suffix(w2: &Walk, w1: &Walk) -> bool {
    w1.len() <= w2.len() && w2.0[w2.len() - w1.len()..] == w1.0[..]
}

/// All nodes other than `a` that have a walk to `a`.
pub fn extended_in_neighbourhood(d: &Digraph, a: &NodeId) -> Result<BTreeSet<NodeId>, GraphError> {
    d.check_node(a)?;
    let mut seen = BTreeSet::new();
    let mut queue = VecDeque::from([a.clone()]);
    while let Some(n) = queue.pop_front() {
        for arc in d.in_arcs(&n) {
            if &arc.sender != a && seen.insert(arc.sender.clone()) {
                queue.push_back(arc.sender.clone());
            }
        }
    }
    Ok(seen)
}

pub fn is_in_semiconnected(d: &Digraph, leader: &NodeId) -> Result<bool, GraphError> {
    Ok(in_semiconnected_witness(d, leader)?.is_none())
}

/// A node with no walk to `leader`, if any.
pub fn in_semiconnected_witness(d: &Digraph, leader: &NodeId) -> Result<Option<NodeId>, GraphError> {
    let reach = extended_in_neighbourhood(d, leader)?;
    Ok(d.nodes.iter().find(|n| *n != leader && !reach.contains(*n)).cloned())
}

pub fn leaders(d: &Digraph) -> BTreeSet<NodeId> {
    d.nodes
        .iter()
        .filter(|n| is_in_semiconnected(d, n).unwrap_or(false))
        .cloned()
        .collect()
}

/// Union of two graphs, joined by `(a1,a2)` and `(a2,a1)` unless the
/// leaders coincide. The result is in-semiconnected w.r.t. both leaders.
pub fn compose(d1: &Digraph, a1: &NodeId, d2: &Digraph, a2: &NodeId) -> Result<Digraph, GraphError> {
    for (d, a) in [(d1, a1), (d2, a2)] {
        if let Some(w) = in_semiconnected_witness(d, a)? {
            return Err(GraphError::NotInSemiconnected { leader: a.clone(), witness: w });
        }
    }
    let mut nodes = d1.nodes.clone();
    nodes.extend(d2.nodes.iter().cloned());
    let mut arcs = d1.arcs.clone();
    arcs.extend(d2.arcs.iter().cloned());
    if a1 != a2 {
        for (s, r) in [(a1, a2), (a2, a1)] {
            // Keep arc identities unique if the inputs already connect the two.
            let mut tag = 0;
            while arcs.contains(&Arc::tagged(s.clone(), r.clone(), tag)) {
                tag += 1;
            }
            arcs.insert(Arc::tagged(s.clone(), r.clone(), tag));
        }
    }
    Ok(Digraph { nodes, arcs })
}

/// Random digraph on `n` nodes whose every ordered pair is an arc with
/// probability `p`.
pub fn random_digraph<R: Rng>(rng: &mut R, n: usize, p: f64) -> Digraph {
    let names = node_names(n);
    let mut arcs = Vec::new();
    for s in &names {
        for r in &names {
            if s != r && rng.gen_bool(p) {
                arcs.push(Arc::new(s.clone(), r.clone()));
            }
        }
    }
    Digraph::new(names, arcs).expect("random digraph is well formed")
}

/// Random in-semiconnected digraph with `2..=max_nodes` nodes and a leader
/// drawn uniformly from its leaders.
pub fn random_in_semiconnected<R: Rng>(rng: &mut R, max_nodes: usize) -> (Digraph, NodeId) {
    assert!(max_nodes >= 2);
    loop {
        let n = rng.gen_range(2..=max_nodes);
        let p = rng.gen_range(0.3..0.9);
        let d = random_digraph(rng, n, p);
        let ls: Vec<NodeId> = leaders(&d).into_iter().collect();
        if !d.arcs.is_empty() && !ls.is_empty() {
            let l = ls[rng.gen_range(0..ls.len())].clone();
            return (d, l);
        }
    }
}

// ---------------------------------------------------------------------------
// JSON graph specs

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArcSpec {
    pub from: NodeId,
    pub to: NodeId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tag: Option<u32>,
    pub tam: TamId,
    pub fund: FundId,
}

impl ArcSpec {
    pub fn arc(&self) -> Arc {
        Arc::tagged(self.from.clone(), self.to.clone(), self.tag.unwrap_or(0))
    }
}

/// The JSON ingestion format: an ATG plus, per arc, the TAM hosting it and
/// the fund it transfers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraphSpec {
    pub id: String,
    pub nodes: Vec<NodeId>,
    pub arcs: Vec<ArcSpec>,
    pub leader: NodeId,
    /// Start of the execution phase, in time units.
    pub t0: f64,
}

impl GraphSpec {
    pub fn digraph(&self) -> Result<Digraph, GraphError> {
        Digraph::new(self.nodes.iter().cloned(), self.arcs.iter().map(ArcSpec::arc))
    }

    /// Arc → (tam, fund) assignment.
    pub fn assignment(&self) -> BTreeMap<Arc, (TamId, FundId)> {
        self.arcs.iter().map(|a| (a.arc(), (a.tam.clone(), a.fund.clone()))).collect()
    }

    /// Spec for `d` where every sender hosts its outgoing arcs on its own TAM
    /// `tam-X` and every arc gets a fresh fund.
    pub fn with_sender_tams(id: &str, d: &Digraph, leader: &NodeId, t0: f64) -> GraphSpec {
        let arcs = d
            .arcs()
            .iter()
            .map(|a| ArcSpec {
                from: a.sender.clone(),
                to: a.receiver.clone(),
                tag: (a.tag != 0).then_some(a.tag),
                tam: TamId::new(format!("tam-{}", a.sender)),
                fund: FundId::new(if a.tag == 0 {
                    format!("f-{}{}", a.sender, a.receiver)
                } else {
                    format!("f-{}{}-{}", a.sender, a.receiver, a.tag)
                }),
            })
            .collect();
        GraphSpec {
            id: id.to_string(),
            nodes: d.nodes().iter().cloned().collect(),
            arcs,
            leader: leader.clone(),
            t0,
        }
    }
}
