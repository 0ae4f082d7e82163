//! Tree specifications and their CTLC batches.
//!
//! Every duplicate family (all edges of one arc) becomes one CTLC; every tree
//! level the family occupies becomes one subcontract with timelock
//! `t0 + level·Δ`. The subcontract can be claimed with the root-path secrets
//! of any of its edges.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{Arc, Digraph, GraphError, GraphSpec, NodeId};
use crate::ids::{FundId, TamId, TreeId};
use crate::time::Time;
use crate::unfold::{unfold, EdgeIx, UnfoldError, Xtree};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SynthError {
    #[error(transparent)]
    Unfold(#[from] UnfoldError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("Δ must be positive")]
    NonPositiveDelta,
    #[error("invalid tree spec: {0}")]
    InvalidSpec(String),
    #[error("specs are not well formed: {0:?}")]
    NotWellFormed(Vec<Diagnostic>),
}

/// The secret of one tree edge, owned by the edge's receiver. Identified by
/// the tree and the edge's pre-order number, which is in bijection with its
/// walk.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Secret {
    pub tree: TreeId,
    pub edge: u32,
    pub owner: NodeId,
}

impl fmt::Display for Secret {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "s[{}#{}]", self.tree, self.edge)
    }
}

impl fmt::Debug for Secret {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct FundToken {
    pub id: FundId,
    pub owner: NodeId,
    pub tam: TamId,
}

#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct CtlcId {
    pub tree: TreeId,
    pub sender: NodeId,
    pub receiver: NodeId,
    #[serde(default, skip_serializing_if = "is_zero")]
    pub tag: u32,
}

fn is_zero(t: &u32) -> bool {
    *t == 0
}

impl CtlcId {
    pub fn for_arc(tree: &TreeId, a: &Arc) -> CtlcId {
        CtlcId { tree: tree.clone(), sender: a.sender.clone(), receiver: a.receiver.clone(), tag: a.tag }
    }

    pub fn arc(&self) -> Arc {
        Arc::tagged(self.sender.clone(), self.receiver.clone(), self.tag)
    }

    pub fn involves(&self, u: &NodeId) -> bool {
        &self.sender == u || &self.receiver == u
    }
}

impl fmt::Display for CtlcId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "c[{}:{}]", self.tree, self.arc())
    }
}

impl fmt::Debug for CtlcId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Subcontract {
    pub level: u32,
    pub timelock: Time,
    /// Alternative secret sets; one of them must be revealed to claim.
    /// Ordered by the pre-order number of the edge each set belongs to.
    pub condition: Vec<BTreeSet<Secret>>,
}

impl Subcontract {
    pub fn secrets(&self) -> impl Iterator<Item = &Secret> {
        self.condition.iter().flatten()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Ctlc {
    pub id: CtlcId,
    pub fund: FundToken,
    /// Ascending by level (and hence by timelock); position = index + 1.
    pub subcontracts: Vec<Subcontract>,
}

impl Ctlc {
    pub fn sender(&self) -> &NodeId {
        &self.id.sender
    }

    pub fn receiver(&self) -> &NodeId {
        &self.id.receiver
    }

    pub fn tam(&self) -> &TamId {
        &self.fund.tam
    }

    pub fn subcontract(&self, level: u32) -> Option<&Subcontract> {
        self.subcontracts.iter().find(|s| s.level == level)
    }

    pub fn levels(&self) -> impl Iterator<Item = u32> + '_ {
        self.subcontracts.iter().map(|s| s.level)
    }

    pub fn last_level(&self) -> u32 {
        self.subcontracts.last().map(|s| s.level).unwrap_or(0)
    }

    pub fn secrets(&self) -> impl Iterator<Item = &Secret> {
        self.subcontracts.iter().flat_map(Subcontract::secrets)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Batch {
    pub tree: TreeId,
    /// Sorted by id.
    pub ctlcs: Vec<Ctlc>,
}

impl Batch {
    pub fn get(&self, id: &CtlcId) -> Option<&Ctlc> {
        self.ctlcs.binary_search_by(|c| c.id.cmp(id)).ok().map(|i| &self.ctlcs[i])
    }

    pub fn users(&self) -> BTreeSet<NodeId> {
        self.ctlcs.iter().flat_map(|c| [c.id.sender.clone(), c.id.receiver.clone()]).collect()
    }

    pub fn secrets(&self) -> BTreeSet<Secret> {
        self.ctlcs.iter().flat_map(|c| c.secrets().cloned()).collect()
    }

    /// Secrets of the batch owned by `user`.
    pub fn secrets_of(&self, user: &NodeId) -> BTreeSet<Secret> {
        self.ctlcs.iter().flat_map(|c| c.secrets()).filter(|s| &s.owner == user).cloned().collect()
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "tree": self.tree,
            "ctlcs": self.ctlcs.iter().map(|c| serde_json::json!({
                "id": c.id.to_string(),
                "tam": c.fund.tam,
                "fund": c.fund.id,
                "subcontracts": c.subcontracts.iter().map(|s| serde_json::json!({
                    "level": s.level,
                    "timelock": s.timelock.as_units_f64(),
                    "condition": s.condition.iter()
                        .map(|set| set.iter().map(|x| x.to_string()).collect::<Vec<_>>())
                        .collect::<Vec<_>>(),
                })).collect::<Vec<_>>(),
            })).collect::<Vec<_>>(),
        })
    }
}

/// A tree with its start time and the (tam, fund) of every edge.
#[derive(Clone, Debug)]
pub struct TreeSpec {
    pub id: TreeId,
    pub xtree: Xtree,
    pub t0: Time,
    /// Indexed by edge.
    pub spec: Vec<(TamId, FundToken)>,
}

impl TreeSpec {
    /// Unfold the graph of `g` at its leader and assign every edge the tam
    /// and fund of its arc.
    pub fn from_graph_spec(g: &GraphSpec) -> Result<TreeSpec, SynthError> {
        let d: Digraph = g.digraph()?;
        let xtree = unfold(&d, &g.leader)?;
        let assign = g.assignment();
        let spec = xtree
            .edges()
            .iter()
            .map(|e| {
                let (tam, fund) = assign[&e.arc].clone();
                (tam.clone(), FundToken { id: fund, owner: e.arc.sender.clone(), tam })
            })
            .collect();
        Ok(TreeSpec { id: TreeId::new(&g.id), xtree, t0: Time::from_units_f64(g.t0), spec })
    }

    pub fn secret(&self, e: EdgeIx) -> Secret {
        Secret { tree: self.id.clone(), edge: e as u32 + 1, owner: self.xtree.edge(e).receiver().clone() }
    }

    /// Secrets of `e` and all edges above it.
    pub fn h_sec(&self, e: EdgeIx) -> BTreeSet<Secret> {
        self.xtree.on_path_to_root(e).into_iter().map(|i| self.secret(i)).collect()
    }

    pub fn ctlc_id(&self, e: EdgeIx) -> CtlcId {
        CtlcId::for_arc(&self.id, &self.xtree.edge(e).arc)
    }

    pub fn tam(&self, e: EdgeIx) -> &TamId {
        &self.spec[e].0
    }

    /// Latest timelock of the tree.
    pub fn horizon(&self, delta: Time) -> Time {
        self.t0 + delta * self.xtree.depth() as i64
    }
}

/// Problems found by [`validate_treeobj`].
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub enum Diagnostic {
    DuplicateTreeId(TreeId),
    /// Two edges get the same (tam, fund) but are different arcs, or the
    /// other way round.
    InvalidSpec { tree: TreeId, edge: u32, other: u32 },
    FundNotOwnedBySender { tree: TreeId, edge: u32 },
    /// One fund serves two different contracts.
    SharedFund { fund: FundId, first: CtlcId, second: CtlcId },
    NonPositiveStart(TreeId),
}

pub fn validate_treeobj(specs: &[TreeSpec]) -> Vec<Diagnostic> {
    let mut out = Vec::new();
    let mut ids = BTreeSet::new();
    let mut funds: BTreeMap<FundId, CtlcId> = BTreeMap::new();
    for ts in specs {
        if !ids.insert(ts.id.clone()) {
            out.push(Diagnostic::DuplicateTreeId(ts.id.clone()));
        }
        if ts.t0 <= Time::ZERO {
            out.push(Diagnostic::NonPositiveStart(ts.id.clone()));
        }
        let edges = ts.xtree.edges();
        for i in 0..edges.len() {
            if ts.spec[i].1.owner != edges[i].arc.sender {
                out.push(Diagnostic::FundNotOwnedBySender { tree: ts.id.clone(), edge: i as u32 + 1 });
            }
            for j in i + 1..edges.len() {
                let same_spec = ts.spec[i] == ts.spec[j];
                let same_arc = edges[i].arc == edges[j].arc;
                if same_spec != same_arc {
                    out.push(Diagnostic::InvalidSpec {
                        tree: ts.id.clone(),
                        edge: i as u32 + 1,
                        other: j as u32 + 1,
                    });
                }
            }
            let cid = ts.ctlc_id(i);
            match funds.get(&ts.spec[i].1.id) {
                Some(prev) if prev != &cid => out.push(Diagnostic::SharedFund {
                    fund: ts.spec[i].1.id.clone(),
                    first: prev.clone(),
                    second: cid,
                }),
                Some(_) => {}
                None => {
                    funds.insert(ts.spec[i].1.id.clone(), cid);
                }
            }
        }
    }
    out
}

pub fn synthesize_batch(ts: &TreeSpec, delta: Time) -> Result<Batch, SynthError> {
    if delta <= Time::ZERO {
        return Err(SynthError::NonPositiveDelta);
    }
    let t = &ts.xtree;
    if ts.spec.len() != t.len() {
        return Err(SynthError::InvalidSpec(format!(
            "{} edges but {} spec entries",
            t.len(),
            ts.spec.len()
        )));
    }
    let mut ctlcs = Vec::new();
    for (arc, reps) in t.families() {
        let first = reps[0];
        let fund = ts.spec[first].1.clone();
        if reps.iter().any(|&r| ts.spec[r] != ts.spec[first]) {
            return Err(SynthError::InvalidSpec(format!("duplicates of {arc} differ in (tam, fund)")));
        }
        let mut by_level: BTreeMap<u32, Vec<EdgeIx>> = BTreeMap::new();
        for &r in &reps {
            by_level.entry(t.depth_of(r) as u32).or_default().push(r);
        }
        let subcontracts = by_level
            .into_iter()
            .map(|(level, edges)| Subcontract {
                level,
                timelock: ts.t0 + delta * level as i64,
                condition: edges.iter().map(|&e| ts.h_sec(e)).collect(),
            })
            .collect();
        ctlcs.push(Ctlc { id: CtlcId::for_arc(&ts.id, &arc), fund, subcontracts });
    }
    ctlcs.sort_by(|a, b| a.id.cmp(&b.id));
    Ok(Batch { tree: ts.id.clone(), ctlcs })
}

/// Image of an edge in the batch: its contract, its subcontract level and
/// the secret set that claims it.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct EdgeImage {
    pub ctlc: CtlcId,
    pub level: u32,
    pub secrets: BTreeSet<Secret>,
}

pub fn edge_map(ts: &TreeSpec, e: EdgeIx) -> Result<EdgeImage, SynthError> {
    if e >= ts.xtree.len() {
        return Err(SynthError::InvalidSpec(format!("edge #{} not in tree", e + 1)));
    }
    Ok(EdgeImage { ctlc: ts.ctlc_id(e), level: ts.xtree.depth_of(e) as u32, secrets: ts.h_sec(e) })
}

/// A tree spec compiled against a fixed Δ, with the lookups the strategies
/// and checkers need.
#[derive(Clone, Debug)]
pub struct CompiledTree {
    pub spec: TreeSpec,
    pub batch: Batch,
    /// Per edge: index of its CTLC in `batch.ctlcs`.
    pub edge_ctlc: Vec<usize>,
    pub edge_secret: Vec<Secret>,
    pub edge_hsec: Vec<BTreeSet<Secret>>,
    images: BTreeMap<EdgeImage, EdgeIx>,
    /// The source graph (for end-to-end checks), when known.
    pub graph: Option<GraphSpec>,
}

impl CompiledTree {
    pub fn compile(spec: TreeSpec, delta: Time) -> Result<CompiledTree, SynthError> {
        let batch = synthesize_batch(&spec, delta)?;
        let n = spec.xtree.len();
        let mut edge_ctlc = Vec::with_capacity(n);
        let mut images = BTreeMap::new();
        for e in 0..n {
            let img = edge_map(&spec, e)?;
            edge_ctlc.push(batch.ctlcs.binary_search_by(|c| c.id.cmp(&img.ctlc)).expect("family has a ctlc"));
            images.insert(img, e);
        }
        let edge_secret = (0..n).map(|e| spec.secret(e)).collect();
        let edge_hsec = (0..n).map(|e| spec.h_sec(e)).collect();
        Ok(CompiledTree { spec, batch, edge_ctlc, edge_secret, edge_hsec, images, graph: None })
    }

    pub fn id(&self) -> &TreeId {
        &self.spec.id
    }

    pub fn xtree(&self) -> &Xtree {
        &self.spec.xtree
    }

    pub fn ctlc_of(&self, e: EdgeIx) -> &Ctlc {
        &self.batch.ctlcs[self.edge_ctlc[e]]
    }

    pub fn level_of(&self, e: EdgeIx) -> u32 {
        self.spec.xtree.depth_of(e) as u32
    }

    pub fn subcontract_of(&self, e: EdgeIx) -> &Subcontract {
        self.ctlc_of(e).subcontract(self.level_of(e)).expect("edge level has a subcontract")
    }

    /// Inverse of [`edge_map`].
    pub fn edge_of_claim(&self, ctlc: &CtlcId, level: u32, secrets: &BTreeSet<Secret>) -> Option<EdgeIx> {
        // Avoid cloning the key by probing with a borrowed image.
        self.images
            .get(&EdgeImage { ctlc: ctlc.clone(), level, secrets: secrets.clone() })
            .copied()
    }
}

/// Every tree of a simulation, compiled against one global Δ.
#[derive(Clone, Debug)]
pub struct Scenario {
    pub delta: Time,
    pub trees: Vec<CompiledTree>,
}

impl Scenario {
    pub fn new(specs: Vec<TreeSpec>, delta: Time) -> Result<Scenario, SynthError> {
        if delta <= Time::ZERO {
            return Err(SynthError::NonPositiveDelta);
        }
        let diags = validate_treeobj(&specs);
        if !diags.is_empty() {
            return Err(SynthError::NotWellFormed(diags));
        }
        let trees = specs.into_iter().map(|s| CompiledTree::compile(s, delta)).collect::<Result<_, _>>()?;
        Ok(Scenario { delta, trees })
    }

    pub fn from_graph_specs(graphs: &[GraphSpec], delta: Time) -> Result<Scenario, SynthError> {
        let specs = graphs.iter().map(TreeSpec::from_graph_spec).collect::<Result<Vec<_>, _>>()?;
        let mut s = Scenario::new(specs, delta)?;
        for (t, g) in s.trees.iter_mut().zip(graphs) {
            t.graph = Some(g.clone());
        }
        Ok(s)
    }

    pub fn tree(&self, id: &TreeId) -> Option<&CompiledTree> {
        self.trees.iter().find(|t| t.id() == id)
    }

    pub fn ctlc(&self, id: &CtlcId) -> Option<&Ctlc> {
        self.tree(&id.tree).and_then(|t| t.batch.get(id))
    }

    pub fn users(&self) -> BTreeSet<NodeId> {
        self.trees.iter().flat_map(|t| t.xtree().users()).collect()
    }

    /// Who participates in each tam: both endpoints of every contract it hosts.
    pub fn membership(&self) -> BTreeMap<TamId, BTreeSet<NodeId>> {
        let mut m: BTreeMap<TamId, BTreeSet<NodeId>> = BTreeMap::new();
        for t in &self.trees {
            for c in &t.batch.ctlcs {
                let e = m.entry(c.fund.tam.clone()).or_default();
                e.insert(c.id.sender.clone());
                e.insert(c.id.receiver.clone());
            }
        }
        m
    }

    /// Time after which every timelock has passed.
    pub fn horizon(&self) -> Time {
        self.trees.iter().map(|t| t.spec.horizon(self.delta)).max().unwrap_or(Time::ZERO)
    }

    /// Latest start that still leaves the whole setup window:
    /// `min(t0 − depth·Δ)`.
    pub fn latest_start(&self) -> Time {
        self.trees
            .iter()
            .map(|t| t.spec.t0 - self.delta * t.xtree().depth() as i64)
            .min()
            .unwrap_or(Time::ZERO)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Digraph;

    fn swap_spec(t0: f64) -> GraphSpec {
        let d = Digraph::from_pairs(&[("A", "B"), ("B", "A")]).unwrap();
        GraphSpec::with_sender_tams("swap", &d, &NodeId::new("A"), t0)
    }

    fn names(s: &BTreeSet<Secret>) -> Vec<u32> {
        s.iter().map(|x| x.edge).collect()
    }

    #[test]
    fn two_party_batch() {
        let ts = TreeSpec::from_graph_spec(&swap_spec(21.0)).unwrap();
        let b = synthesize_batch(&ts, Time::units(10)).unwrap();
        assert_eq!(b.ctlcs.len(), 2);
        let ab = b.get(&CtlcId::for_arc(&ts.id, &Arc::new("A", "B"))).unwrap();
        let ba = b.get(&CtlcId::for_arc(&ts.id, &Arc::new("B", "A"))).unwrap();
        assert_eq!(ba.subcontracts.len(), 1);
        assert_eq!(ba.subcontracts[0].timelock, Time::units(31));
        assert_eq!(ba.subcontracts[0].condition.len(), 1);
        assert_eq!(names(&ba.subcontracts[0].condition[0]), [1]);
        assert_eq!(ab.subcontracts[0].timelock, Time::units(41));
        assert_eq!(names(&ab.subcontracts[0].condition[0]), [1, 2]);
        assert_eq!(ab.fund.owner, NodeId::new("A"));

        let img = edge_map(&ts, 1).unwrap();
        assert_eq!(img.level, 2);
        assert_eq!(img.ctlc, ab.id);
        assert!(edge_map(&ts, 7).is_err());
    }

    #[test]
    fn three_party_contract_ab() {
        let d = Digraph::complete(3);
        let g = GraphSpec::with_sender_tams("k3", &d, &NodeId::new("A"), 31.0);
        let ts = TreeSpec::from_graph_spec(&g).unwrap();
        let b = synthesize_batch(&ts, Time::units(10)).unwrap();
        let ab = b.get(&CtlcId::for_arc(&ts.id, &Arc::new("A", "B"))).unwrap();
        // Edges ② (level 2) and ⑨ (level 3).
        assert_eq!(ab.subcontracts.len(), 2);
        assert_eq!(names(&ab.subcontracts[0].condition[0]), [1, 2]);
        assert_eq!(names(&ab.subcontracts[1].condition[0]), [6, 8, 9]);
        assert!(ab.subcontracts[0].timelock < ab.subcontracts[1].timelock);
    }

    #[test]
    fn same_level_duplicates_share_a_subcontract() {
        // Both C→B edges at level 2 when B has two incoming paths... use K4.
        let g = GraphSpec::with_sender_tams("k4", &Digraph::complete(4), &NodeId::new("A"), 41.0);
        let c = CompiledTree::compile(TreeSpec::from_graph_spec(&g).unwrap(), Time::units(10)).unwrap();
        let t = c.xtree();
        let groups = t.edge_groups();
        let g2 = groups.iter().find(|g| g.edges.len() > 1).expect("K4 has same-level duplicates");
        let (e1, e2) = (g2.edges[0], g2.edges[1]);
        assert_eq!(c.subcontract_of(e1), c.subcontract_of(e2));
        assert_ne!(c.edge_hsec[e1], c.edge_hsec[e2]);
        for e in 0..t.len() {
            let img = edge_map(&c.spec, e).unwrap();
            assert_eq!(c.edge_of_claim(&img.ctlc, img.level, &img.secrets), Some(e));
        }
    }

    #[test]
    fn diagnostics() {
        let ts = TreeSpec::from_graph_spec(&swap_spec(21.0)).unwrap();
        assert!(validate_treeobj(std::slice::from_ref(&ts)).is_empty());
        assert!(matches!(validate_treeobj(&[ts.clone(), ts.clone()])[0], Diagnostic::DuplicateTreeId(_)));

        let mut shared = ts.clone();
        shared.spec[1] = shared.spec[0].clone();
        assert!(validate_treeobj(&[shared]).iter().any(|d| matches!(d, Diagnostic::InvalidSpec { .. })));

        let mut other = TreeSpec::from_graph_spec(&swap_spec(21.0)).unwrap();
        other.id = TreeId::new("swap2");
        assert!(validate_treeobj(&[ts, other]).iter().any(|d| matches!(d, Diagnostic::SharedFund { .. })));
    }

    #[test]
    fn empty_tree_gives_empty_batch() {
        let g = GraphSpec { id: "solo".into(), nodes: vec![NodeId::new("A")], arcs: vec![], leader: NodeId::new("A"), t0: 5.0 };
        let ts = TreeSpec::from_graph_spec(&g).unwrap();
        assert!(synthesize_batch(&ts, Time::units(1)).unwrap().ctlcs.is_empty());
        assert_eq!(synthesize_batch(&ts, Time::ZERO), Err(SynthError::NonPositiveDelta));
    }
}
