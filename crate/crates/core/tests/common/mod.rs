//! Brute-force oracles and fixtures shared by the integration tests.
//!
//! The oracles are written straight from the definitions, without the
//! library's search structure: walks are enumerated as raw arc sequences and
//! outcomes as raw edge subsets.

#![allow(dead_code)]

use std::collections::BTreeSet;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use atg::graph::{random_in_semiconnected, Arc, Digraph, NodeId};
use atg::unfold::Xtree;

pub fn n(s: &str) -> NodeId {
    NodeId::new(s)
}

/// `count` random in-semiconnected graphs with 2..=max_nodes nodes and their
/// leaders, reproducible from `seed`.
pub fn family(seed: u64, count: usize, max_nodes: usize) -> Vec<(Digraph, NodeId)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count).map(|_| random_in_semiconnected(&mut rng, max_nodes)).collect()
}

/// `seq` is root first. Checks the full-walk conditions literally: ends at
/// the leader, chained, no node received twice, and stops at a sender that
/// already received on the walk or has no ingoing arcs.
fn is_full_walk(d: &Digraph, leader: &NodeId, seq: &[Arc]) -> bool {
    if seq.is_empty() || &seq[0].receiver != leader {
        return false;
    }
    if seq.windows(2).any(|w| w[1].receiver != w[0].sender) {
        return false;
    }
    for i in 0..seq.len() {
        for j in 0..seq.len() {
            if i != j && seq[i].receiver == seq[j].receiver {
                return false;
            }
        }
    }
    let top = seq.last().unwrap();
    let received_before = seq[..seq.len() - 1].iter().any(|a| a.receiver == top.sender);
    let no_in = !d.arcs().iter().any(|a| a.receiver == top.sender);
    received_before || no_in
}

/// Every walk (leaf first) that is an edge of the unfolding: all suffixes of
/// full walks. Candidates are all arc sequences up to |N| arcs, the longest
/// a walk with distinct receivers can be.
pub fn oracle_unfold(d: &Digraph, leader: &NodeId) -> BTreeSet<Vec<Arc>> {
    let max = d.nodes().len();
    let mut full: Vec<Vec<Arc>> = Vec::new();
    let mut frontier: Vec<Vec<Arc>> = d.arcs().iter().filter(|a| &a.receiver == leader).map(|a| vec![a.clone()]).collect();
    while let Some(seq) = frontier.pop() {
        if is_full_walk(d, leader, &seq) {
            full.push(seq.clone());
        }
        if seq.len() >= max {
            continue;
        }
        let last = seq.last().unwrap().clone();
        for a in d.arcs().iter().filter(|a| a.receiver == last.sender) {
            let mut next = seq.clone();
            next.push(a.clone());
            frontier.push(next);
        }
    }
    let mut out = BTreeSet::new();
    for root_first in full {
        for k in 1..=root_first.len() {
            let mut leaf_first: Vec<Arc> = root_first[..k].to_vec();
            leaf_first.reverse();
            out.insert(leaf_first);
        }
    }
    out
}

/// Sum of lengths of the full walks: arcs on all root-to-leaf paths.
pub fn oracle_path_arc_count(d: &Digraph, leader: &NodeId) -> usize {
    let edges = oracle_unfold(d, leader);
    // Full walks are edges that are no proper suffix of another edge.
    edges.iter().filter(|w| !edges.iter().any(|o| o.len() == w.len() + 1 && o[1..] == w[..])).map(Vec::len).sum()
}

pub fn walks_of(x: &Xtree) -> BTreeSet<Vec<Arc>> {
    x.edges().iter().map(|e| e.walk.0.clone()).collect()
}

fn involves(a: &Arc, b: &NodeId) -> bool {
    &a.sender == b || &a.receiver == b
}

/// Outcome predicates, over edge indices of `x`.
pub fn oracle_is_outcome(x: &Xtree, b: &NodeId, omega: &BTreeSet<usize>) -> bool {
    let w = |i: usize| &x.edge(i).walk.0;
    // Partial tree: every edge's walk minus its leaf arc is in omega too.
    let partial = omega.iter().all(|&i| w(i).len() == 1 || omega.iter().any(|&j| w(j)[..] == w(i)[1..]));
    let no_dup = omega.iter().all(|&i| {
        omega.iter().all(|&j| {
            let (ai, aj) = (&x.edge(i).arc, &x.edge(j).arc);
            !(ai.sender == aj.sender && ai.receiver == aj.receiver && involves(ai, b)) || i == j
        })
    });
    let honest_root = (0..x.len()).all(|i| !(w(i).len() == 1 && &x.edge(i).arc.receiver == b) || omega.contains(&i));
    let eager_pull = (0..x.len()).all(|i1| {
        let e1 = x.edge(i1);
        if &e1.arc.receiver != b {
            return true;
        }
        omega.iter().all(|&i2| {
            let e2 = x.edge(i2);
            let extends = &e2.arc.sender == b && w(i1).len() == w(i2).len() + 1 && w(i1)[1..] == w(i2)[..];
            !extends
                || omega.iter().any(|&i3| {
                    let e3 = x.edge(i3);
                    e3.arc.sender == e1.arc.sender && e3.arc.receiver == e1.arc.receiver && w(i3).len() <= w(i1).len()
                })
        })
    });
    partial && no_dup && honest_root && eager_pull
}

/// Outcomes of `b` by enumerating all 2^|T| edge subsets.
pub fn oracle_outcomes(x: &Xtree, b: &NodeId) -> BTreeSet<BTreeSet<usize>> {
    assert!(x.len() <= 18, "subset oracle is for small trees");
    (0u64..1 << x.len())
        .map(|mask| (0..x.len()).filter(|i| mask >> i & 1 == 1).collect::<BTreeSet<usize>>())
        .filter(|omega| oracle_is_outcome(x, b, omega))
        .collect()
}

/// The safety statement for `b`: edges of `b` represent distinct arcs, and
/// an executed outgoing arc means every ingoing arc of `b` executed.
pub fn oracle_safe(d: &Digraph, x: &Xtree, b: &NodeId, omega: &BTreeSet<usize>) -> bool {
    let mine: Vec<&Arc> = omega.iter().map(|&i| &x.edge(i).arc).filter(|a| involves(a, b)).collect();
    let distinct = mine.iter().collect::<BTreeSet<_>>().len() == mine.len() && mine.iter().all(|a| d.arcs().contains(*a));
    let pays = mine.iter().any(|a| &a.sender == b);
    let gets_all = d.in_arcs(b).all(|a| mine.contains(&a));
    distinct && (!pays || gets_all)
}
pub mod rules;
