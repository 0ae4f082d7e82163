//! Outcome sets: the partial executions of an xtree that an honest user can
//! end up with, and the underwater criterion they are judged by.
//!
//! Besides the brute-force enumeration (small trees only) there are two exact
//! searches that scale to the trees of five-node graphs:
//!
//! * [`projected_outcomes`] enumerates `{ω ∩ E_B | ω ∈ Outcomes_B}`. All three
//!   predicates only look at edges involving `B`, and `ω ∩ E_B = S` is
//!   realisable iff the downward closure of `S` adds no further `B`-edge, so
//!   every projection is the projection of `closure(S)`.
//! * [`common_outcomes`] enumerates the intersection of all users' outcome
//!   sets directly.

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;
use thiserror::Error;

use crate::graph::{Arc, Digraph, NodeId};
use crate::unfold::{EdgeIx, Xtree};

pub const DEFAULT_ENUMERATION_BUDGET: usize = 20;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum OutcomeError {
    #[error("edge #{0} is not in the tree")]
    UnknownEdge(usize),
    #[error("tree has {edges} edges, enumeration budget is {budget}")]
    TooLarge { edges: usize, budget: usize },
}

/// A set of tree edges, by pre-order index.
#[derive(Clone, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(transparent)]
pub struct Outcome(pub BTreeSet<EdgeIx>);

impl Outcome {
    pub fn empty() -> Outcome {
        Outcome(BTreeSet::new())
    }

    pub fn full(t: &Xtree) -> Outcome {
        Outcome((0..t.len()).collect())
    }

    pub fn contains(&self, i: EdgeIx) -> bool {
        self.0.contains(&i)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// 1-based pre-order numbers, as used in reports.
    pub fn numbers(&self) -> Vec<usize> {
        self.0.iter().map(|i| i + 1).collect()
    }
}

impl FromIterator<EdgeIx> for Outcome {
    fn from_iter<I: IntoIterator<Item = EdgeIx>>(it: I) -> Self {
        Outcome(it.into_iter().collect())
    }
}

fn check_edges(t: &Xtree, omega: &Outcome) -> Result<(), OutcomeError> {
    match omega.0.iter().find(|&&i| i >= t.len()) {
        Some(&i) => Err(OutcomeError::UnknownEdge(i + 1)),
        None => Ok(()),
    }
}

/// Every edge's parent is present as well.
pub fn is_partial_tree(t: &Xtree, omega: &Outcome) -> bool {
    omega.0.iter().all(|&i| t.parent(i).is_none_or(|p| omega.contains(p)))
}

pub fn no_dup(t: &Xtree, user: &NodeId, omega: &Outcome) -> bool {
    let mut seen = BTreeSet::new();
    omega
        .0
        .iter()
        .filter(|&&i| t.edge(i).arc.involves(user))
        .all(|&i| seen.insert(&t.edge(i).arc))
}

pub fn honest_root(t: &Xtree, user: &NodeId, omega: &Outcome) -> bool {
    t.roots().filter(|&i| t.edge(i).receiver() == user).all(|i| omega.contains(i))
}

pub fn eager_pull(t: &Xtree, user: &NodeId, omega: &Outcome) -> bool {
    let min_depth = min_depths(t, omega);
    omega.0.iter().filter(|&&p| t.edge(p).sender() == user).all(|&p| {
        t.children(p).iter().all(|&c| {
            min_depth.get(&t.edge(c).arc).is_some_and(|&d| d <= t.depth_of(c))
        })
    })
}

fn min_depths<'a>(t: &'a Xtree, omega: &Outcome) -> BTreeMap<&'a Arc, usize> {
    let mut m: BTreeMap<&Arc, usize> = BTreeMap::new();
    for &i in &omega.0 {
        let d = t.depth_of(i);
        m.entry(&t.edge(i).arc).and_modify(|x| *x = (*x).min(d)).or_insert(d);
    }
    m
}

pub fn check_outcome(t: &Xtree, user: &NodeId, omega: &Outcome) -> Result<bool, OutcomeError> {
    check_edges(t, omega)?;
    Ok(is_partial_tree(t, omega)
        && no_dup(t, user, omega)
        && honest_root(t, user, omega)
        && eager_pull(t, user, omega))
}

/// All outcomes of `user`, by exhaustive search over partial trees.
pub fn enumerate_outcomes(t: &Xtree, user: &NodeId) -> Result<BTreeSet<Outcome>, OutcomeError> {
    enumerate_outcomes_with_budget(t, user, DEFAULT_ENUMERATION_BUDGET)
}

pub fn enumerate_outcomes_with_budget(
    t: &Xtree,
    user: &NodeId,
    budget: usize,
) -> Result<BTreeSet<Outcome>, OutcomeError> {
    if t.len() > budget {
        return Err(OutcomeError::TooLarge { edges: t.len(), budget });
    }
    let mut out = BTreeSet::new();
    partial_trees(t, 0, &mut Vec::new(), &mut vec![false; t.len()], &mut |omega| {
        if check_outcome(t, user, omega).expect("edges from tree") {
            out.insert(omega.clone());
        }
    });
    Ok(out)
}

/// Visits every downward-closed edge set. Pre-order guarantees a parent is
/// decided before its children.
fn partial_trees(
    t: &Xtree,
    i: usize,
    chosen: &mut Vec<EdgeIx>,
    mask: &mut Vec<bool>,
    visit: &mut dyn FnMut(&Outcome),
) {
    if i == t.len() {
        visit(&chosen.iter().copied().collect());
        return;
    }
    partial_trees(t, i + 1, chosen, mask, visit);
    if t.parent(i).is_none_or(|p| mask[p]) {
        mask[i] = true;
        chosen.push(i);
        partial_trees(t, i + 1, chosen, mask, visit);
        chosen.pop();
        mask[i] = false;
    }
}

/// The smallest partial tree containing `s`.
pub fn closure(t: &Xtree, s: &BTreeSet<EdgeIx>) -> Outcome {
    let mut out = BTreeSet::new();
    for &i in s {
        out.extend(t.on_path_to_root(i));
    }
    Outcome(out)
}

/// `S = ω ∩ E_user` is the projection of some outcome (namely of
/// `closure(S)`).
pub fn is_projected_outcome(t: &Xtree, user: &NodeId, s: &BTreeSet<EdgeIx>) -> bool {
    if s.iter().any(|&i| i >= t.len() || !t.edge(i).arc.involves(user)) {
        return false;
    }
    let c = closure(t, s);
    let consistent = c.0.iter().filter(|&&i| t.edge(i).arc.involves(user)).all(|i| s.contains(i));
    consistent && check_outcome(t, user, &c).unwrap_or(false)
}

/// Exact enumeration of `{ω ∩ E_user | ω ∈ Outcomes_user}` for trees far
/// beyond the brute-force budget.
pub fn projected_outcomes(t: &Xtree, user: &NodeId) -> Vec<BTreeSet<EdgeIx>> {
    let order = by_depth(t, |i| t.edge(i).arc.involves(user));
    // For each user edge, the user edges strictly above it on its path.
    let above: Vec<Vec<EdgeIx>> = (0..t.len())
        .map(|i| {
            t.on_path_to_root(i)
                .into_iter()
                .skip(1)
                .filter(|&j| t.edge(j).arc.involves(user))
                .collect()
        })
        .collect();
    let mut search = Search::new(t, order, Some(user.clone()));
    search.eligible = Box::new(move |i, chosen| above[i].iter().all(|&j| chosen[j]));
    search.run();
    search.results
}

/// Exact enumeration of `⋂_B Outcomes_B` over all users of the tree.
pub fn common_outcomes(t: &Xtree) -> Vec<Outcome> {
    let order = by_depth(t, |_| true);
    let parent: Vec<Option<EdgeIx>> = (0..t.len()).map(|i| t.parent(i)).collect();
    let mut search = Search::new(t, order, None);
    search.eligible = Box::new(move |i, chosen| parent[i].is_none_or(|p| chosen[p]));
    search.run();
    search.results.into_iter().map(Outcome).collect()
}

fn by_depth(t: &Xtree, keep: impl Fn(EdgeIx) -> bool) -> Vec<EdgeIx> {
    let mut v: Vec<EdgeIx> = (0..t.len()).filter(|&i| keep(i)).collect();
    v.sort_by_key(|&i| (t.depth_of(i), i));
    v
}

type Eligible = Box<dyn Fn(EdgeIx, &[bool]) -> bool>;

/// Level-by-level include/exclude search. With `user = Some(B)` the
/// predicates are those of `B` over `E_B`; with `None` they are those of
/// every user at once (one representative per arc, all roots,
/// eager pull everywhere).
struct Search<'a> {
    t: &'a Xtree,
    order: Vec<EdgeIx>,
    user: Option<NodeId>,
    eligible: Eligible,
    chosen: Vec<bool>,
    used: BTreeMap<&'a Arc, usize>,
    results: Vec<BTreeSet<EdgeIx>>,
}

impl<'a> Search<'a> {
    fn new(t: &'a Xtree, order: Vec<EdgeIx>, user: Option<NodeId>) -> Search<'a> {
        Search {
            t,
            order,
            user,
            eligible: Box::new(|_, _| true),
            chosen: vec![false; t.len()],
            used: BTreeMap::new(),
            results: Vec::new(),
        }
    }

    fn run(&mut self) {
        self.go(0);
    }

    fn forced_root(&self, i: EdgeIx) -> bool {
        self.t.parent(i).is_none()
            && match &self.user {
                Some(u) => self.t.edge(i).receiver() == u,
                None => true,
            }
    }

    fn go(&mut self, k: usize) {
        let t = self.t;
        // Level boundary: everything up to the previous edge's depth is
        // decided, so eager pull can be checked for parents above it.
        if k > 0 {
            let prev = t.depth_of(self.order[k - 1]);
            let boundary = k == self.order.len() || t.depth_of(self.order[k]) != prev;
            if boundary {
                let bound = if k == self.order.len() { usize::MAX } else { prev - 1 };
                if !self.pull_ok(bound) {
                    return;
                }
            }
        }
        if k == self.order.len() {
            let s = (0..t.len()).filter(|&i| self.chosen[i]).collect();
            self.results.push(s);
            return;
        }
        let i = self.order[k];
        let arc = &t.edge(i).arc;
        let can = (self.eligible)(i, &self.chosen) && !self.used.contains_key(arc);
        let forced = self.forced_root(i);
        if forced && !can {
            return;
        }
        if can {
            self.chosen[i] = true;
            self.used.insert(arc, t.depth_of(i));
            self.go(k + 1);
            self.chosen[i] = false;
            self.used.remove(arc);
        }
        if !forced {
            self.go(k + 1);
        }
    }

    /// Eager pull for chosen outgoing edges up to depth `bound`. Each arc has
    /// at most one chosen representative, so `used` holds its depth.
    fn pull_ok(&self, bound: usize) -> bool {
        let t = self.t;
        self.order
            .iter()
            .filter(|&&p| self.chosen[p] && t.depth_of(p) <= bound)
            .filter(|&&p| self.user.as_ref().is_none_or(|u| t.edge(p).sender() == u))
            .all(|&p| {
                t.children(p)
                    .iter()
                    .all(|&c| self.used.get(&t.edge(c).arc).is_some_and(|&m| m <= t.depth_of(c)))
            })
    }
}

/// Arcs represented in `omega`.
pub fn project(t: &Xtree, omega: &Outcome) -> BTreeSet<Arc> {
    omega.0.iter().map(|&i| t.edge(i).arc.clone()).collect()
}

/// Some outgoing arc of `user` was executed while some ingoing arc was not.
pub fn is_underwater(d: &Digraph, user: &NodeId, executed: &BTreeSet<Arc>) -> bool {
    let paid = d.out_arcs(user).any(|a| executed.contains(a));
    let missing = d.in_arcs(user).any(|a| !executed.contains(a));
    paid && missing
}

pub fn check_full_coverage(d: &Digraph, t: &Xtree, omega: &Outcome) -> bool {
    &project(t, omega) == d.arcs()
}
