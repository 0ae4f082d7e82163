//! Checkers for the end-to-end guarantees on completed runs.
//!
//! * security: every honest user's claimed edges are the projection of one
//!   of its outcomes (or nothing happened because the setup never
//!   completed);
//! * correctness: in an all-honest run started on time, the claimed edges
//!   form a common outcome that covers every arc exactly once;
//! * end-to-end security: no honest user ends up underwater in the graph
//!   and no arc is paid twice;
//! * setup correctness: in an all-honest run, every level is enabled by the
//!   grid time at which the protocol needs it.

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;

use crate::graph::{Arc, NodeId};
use crate::ids::TreeId;
use crate::outcomes::{
    check_full_coverage, check_outcome, enumerate_outcomes, is_projected_outcome, is_underwater, Outcome,
};
use crate::run::Run;
use crate::runner::RunOutcome;
use crate::semantics::{Action, HbeState};
use crate::synth::{CompiledTree, Scenario};
use crate::time::Time;
use crate::unfold::EdgeIx;

/// Trees up to this many edges are also checked by brute-force enumeration.
pub const ENUMERATION_LIMIT: usize = 20;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Pass,
    Fail,
    /// Preconditions of the check do not hold.
    Declined,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Report {
    pub check: &'static str,
    pub tree_id: TreeId,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub user: Option<NodeId>,
    pub verdict: Verdict,
    /// 1-based pre-order numbers.
    pub witness_edges: Vec<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub counterexample: Option<String>,
    pub method: String,
}

impl Report {
    fn new(check: &'static str, tree: &CompiledTree, user: Option<&NodeId>) -> Report {
        Report {
            check,
            tree_id: tree.id().clone(),
            user: user.cloned(),
            verdict: Verdict::Pass,
            witness_edges: Vec::new(),
            counterexample: None,
            method: String::new(),
        }
    }

    fn fail(mut self, why: impl Into<String>) -> Report {
        self.verdict = Verdict::Fail;
        self.counterexample = Some(why.into());
        self
    }

    fn declined(mut self, why: impl Into<String>) -> Report {
        self.verdict = Verdict::Declined;
        self.counterexample = Some(why.into());
        self
    }

    pub fn passed(&self) -> bool {
        self.verdict == Verdict::Pass
    }
}

fn numbers(s: &BTreeSet<EdgeIx>) -> Vec<usize> {
    s.iter().map(|i| i + 1).collect()
}

/// Claim actions of `run` mapped back to edges of `tree`, in run order.
pub fn claimed_edges(tree: &CompiledTree, run: &Run) -> Vec<EdgeIx> {
    run.actions()
        .filter_map(|a| match a {
            Action::Claim { ctlc, level, secrets } if &ctlc.tree == tree.id() => {
                tree.edge_of_claim(ctlc, *level, secrets)
            }
            _ => None,
        })
        .collect()
}

/// Whether the tree's whole first level was live at once while its
/// subcontracts could still be claimed. An adversary that enables a
/// first-level contract only once it expired has made the setup fail.
fn setup_completed(tree: &CompiledTree, run: &Run) -> bool {
    let roots: Vec<EdgeIx> = tree.xtree().roots().collect();
    let deadline = roots.iter().map(|&r| tree.subcontract_of(r).timelock).min();
    run.states().any(|s| {
        deadline.is_some_and(|d| s.time < d)
            && roots.iter().all(|&r| s.is_sub_enabled(&tree.ctlc_of(r).id, tree.level_of(r)))
    })
}

/// Security of one honest user in every tree.
pub fn verify_protocol_security(outcome: &RunOutcome, scenario: &Scenario, user: &NodeId) -> Vec<Report> {
    scenario.trees.iter().map(|t| security_report(t, outcome, user)).collect()
}

fn security_report(tree: &CompiledTree, outcome: &RunOutcome, user: &NodeId) -> Report {
    let mut r = Report::new("security", tree, Some(user));
    if !outcome.is_final() {
        return r.declined("run is not final");
    }
    if !outcome.honest.contains(user) {
        return r.declined(format!("{user} did not follow the honest strategy"));
    }
    let x = tree.xtree();
    let claims = claimed_edges(tree, &outcome.run);
    let s: BTreeSet<EdgeIx> = claims.iter().copied().filter(|&e| x.edge(e).arc.involves(user)).collect();
    r.witness_edges = numbers(&s);
    let constructive = is_projected_outcome(x, user, &s);
    r.method = "constructive".into();
    if x.len() <= ENUMERATION_LIMIT {
        match enumerate_outcomes(x, user) {
            Ok(all) => {
                let by_enum = all.iter().any(|o| {
                    o.0.iter().copied().filter(|&e| x.edge(e).arc.involves(user)).collect::<BTreeSet<_>>() == s
                });
                r.method = "enumeration".into();
                if by_enum != constructive {
                    return r.fail(format!(
                        "enumeration ({by_enum}) and constructive check ({constructive}) disagree"
                    ));
                }
            }
            Err(_) => r.method = "constructive".into(),
        }
    }
    if constructive {
        return r;
    }
    if s.is_empty() && !setup_completed(tree, &outcome.run) {
        r.method.push_str("+empty");
        return r;
    }
    let why = violated_condition(tree, user, &s);
    r.fail(format!("claimed edges {:?} of {user} are no outcome projection: {why}", numbers(&s)))
}

fn violated_condition(tree: &CompiledTree, user: &NodeId, s: &BTreeSet<EdgeIx>) -> String {
    let x = tree.xtree();
    let omega = crate::outcomes::closure(x, s);
    if !crate::outcomes::honest_root(x, user, &omega) {
        "a first-level ingoing edge was not claimed".into()
    } else if !crate::outcomes::no_dup(x, user, &omega) {
        "an arc was claimed twice".into()
    } else if !crate::outcomes::eager_pull(x, user, &omega) {
        "an outgoing edge was claimed without a matching ingoing claim".into()
    } else {
        "claims are not closed upwards".into()
    }
}

/// Correctness of an all-honest run started on time.
pub fn verify_protocol_correctness(outcome: &RunOutcome, scenario: &Scenario) -> Vec<Report> {
    scenario.trees.iter().map(|t| correctness_report(t, outcome, scenario)).collect()
}

fn correctness_report(tree: &CompiledTree, outcome: &RunOutcome, scenario: &Scenario) -> Report {
    let mut r = Report::new("correctness", tree, None);
    r.method = "claims".into();
    if !outcome.is_final() {
        return r.declined("run is not final");
    }
    let users = tree.xtree().users();
    if let Some(u) = users.iter().find(|u| !outcome.honest.contains(u)) {
        return r.declined(format!("{u} is not honest"));
    }
    if outcome.start >= scenario.latest_start() {
        return r.declined(format!(
            "run started at {} but must start before {}",
            outcome.start,
            scenario.latest_start()
        ));
    }
    let x = tree.xtree();
    let claims = claimed_edges(tree, &outcome.run);
    let omega = Outcome(claims.iter().copied().collect());
    r.witness_edges = omega.numbers();
    if omega.len() != claims.len() {
        return r.fail("an edge was claimed twice");
    }
    for u in &users {
        if !check_outcome(x, u, &omega).unwrap_or(false) {
            return r.fail(format!("claimed edges are not an outcome for {u}"));
        }
    }
    if !check_full_coverage(x.source(), x, &omega) {
        return r.fail("claimed edges do not cover every arc exactly once");
    }
    r
}

/// Underwater and double-payment check for every honest user.
pub fn verify_end_to_end_security(outcome: &RunOutcome, scenario: &Scenario) -> Vec<Report> {
    let mut out = Vec::new();
    for tree in &scenario.trees {
        let x = tree.xtree();
        let claims = claimed_edges(tree, &outcome.run);
        let mut arcs: BTreeMap<&Arc, usize> = BTreeMap::new();
        for &e in &claims {
            *arcs.entry(&x.edge(e).arc).or_default() += 1;
        }
        let executed: BTreeSet<Arc> = arcs.keys().map(|a| (*a).clone()).collect();
        let twice: Vec<String> = arcs.iter().filter(|(_, n)| **n > 1).map(|(a, _)| a.to_string()).collect();
        for user in x.users().iter().filter(|u| outcome.honest.contains(*u)) {
            let mut r = Report::new("end_to_end_security", tree, Some(user));
            r.method = "claims".into();
            r.witness_edges = claims.iter().filter(|&&e| x.edge(e).arc.involves(user)).map(|e| e + 1).collect();
            r.witness_edges.sort_unstable();
            if !twice.is_empty() {
                r = r.fail(format!("arcs claimed twice: {}", twice.join(", ")));
            } else if is_underwater(x.source(), user, &executed) {
                r = r.fail(format!("{user} is underwater"));
            }
            out.push(r);
        }
    }
    out
}

/// Levels that must be live at time `t < t0`: every edge with depth at
/// least `depth − m` where `t ≥ t0 − (depth − m)Δ`.
fn required_min_depth(tree: &CompiledTree, t: Time, delta: Time) -> Option<usize> {
    let t0 = tree.spec.t0;
    let depth = tree.xtree().depth() as i64;
    if t >= t0 {
        return None;
    }
    // Largest m with t0 − (depth − m)Δ ≤ t, i.e. m ≤ depth − (t0 − t)/Δ.
    let lag = (t0 - t).ticks();
    let m = depth - (lag + delta.ticks() - 1) / delta.ticks();
    (m >= 0).then(|| (depth - m) as usize)
}

fn setup_gap(tree: &CompiledTree, s: &HbeState, delta: Time) -> Option<EdgeIx> {
    let min_depth = required_min_depth(tree, s.time, delta)?;
    (0..tree.xtree().len()).find(|&e| {
        tree.xtree().depth_of(e) >= min_depth && !s.is_sub_enabled(&tree.ctlc_of(e).id, tree.level_of(e))
    })
}

/// At every state before `t0`, everything the grid time requires is live.
pub fn verify_setup_correctness(outcome: &RunOutcome, scenario: &Scenario) -> Vec<Report> {
    scenario
        .trees
        .iter()
        .map(|tree| {
            let mut r = Report::new("setup_correctness", tree, None);
            r.method = "states".into();
            if let Some(u) = tree.xtree().users().iter().find(|u| !outcome.honest.contains(*u)) {
                return r.declined(format!("{u} is not honest"));
            }
            if outcome.start >= scenario.latest_start() {
                return r.declined("run started too late");
            }
            for (i, s) in outcome.run.states().enumerate() {
                if let Some(e) = setup_gap(tree, s, scenario.delta) {
                    return r.fail(format!("edge #{} not enabled at t = {} (state {i})", e + 1, s.time));
                }
            }
            r
        })
        .collect()
}

/// Every applicable check for a completed run.
pub fn verify_all(outcome: &RunOutcome, scenario: &Scenario) -> Vec<Report> {
    let mut out = Vec::new();
    for u in &outcome.honest {
        out.extend(verify_protocol_security(outcome, scenario, u).into_iter().filter(|r| {
            scenario.tree(&r.tree_id).is_some_and(|t| t.xtree().users().contains(u))
        }));
    }
    out.extend(verify_end_to_end_security(outcome, scenario));
    if outcome.corrupted.is_empty() {
        out.extend(verify_protocol_correctness(outcome, scenario));
        out.extend(verify_setup_correctness(outcome, scenario));
    }
    out
}
