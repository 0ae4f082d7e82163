//! The honest user strategy over a set of tree specifications.
//!
//! Per tree the strategy has four parts: advertising and committing to the
//! batch, the bottom-up enabling ladder (advertise → authorize → enable →
//! enable subcontract), timeouts and refunds, and the top-down execution
//! phase (share → reveal → claim → execute). When none of them yields an
//! action the user elapses time to the next grid point `t0 + jΔ`.
//!
//! A user sticks to its previous output: as long as an earlier action is
//! still valid and was not taken, it is output again instead of computing
//! new actions.

use std::collections::BTreeSet;
use std::sync::Arc as Shared;

use crate::graph::NodeId;
use crate::run::Run;
use crate::semantics::{check_liquidity, is_valid, Action, HbeState, TamEnv};
use crate::synth::{CompiledTree, Scenario, Secret};
use crate::time::Time;
use crate::unfold::EdgeIx;

/// Honest strategy of one user, evaluated incrementally along a run.
///
/// [`HonestStrategy::next`] must be called once for every prefix of the
/// run, in order; [`honest_strategy`] does that for a complete run.
#[derive(Clone, Debug)]
pub struct HonestStrategy {
    user: NodeId,
    previous: Option<Vec<Action>>,
}

impl HonestStrategy {
    pub fn new(user: NodeId) -> HonestStrategy {
        HonestStrategy { user, previous: None }
    }

    pub fn user(&self) -> &NodeId {
        &self.user
    }

    /// Output for the run `run`, whose one-shorter prefix was the argument
    /// of the previous call (if any).
    pub fn next(&mut self, scenario: &Scenario, run: &Run) -> Vec<Action> {
        let state = run.last_state();
        let pending: Vec<Action> = match &self.previous {
            Some(prev) if !run.is_empty() => prev
                .iter()
                .filter(|a| !a.is_elapse() && !run.contains_action(a) && is_valid(state, a))
                .cloned()
                .collect(),
            _ => Vec::new(),
        };
        let out = if pending.is_empty() { local(&self.user, scenario, run) } else { pending };
        self.previous = Some(out.clone());
        out
    }
}

/// The strategy's output after `run`, as a pure function of the run.
pub fn honest_strategy(user: &NodeId, scenario: &Scenario, run: &Run) -> Vec<Action> {
    let mut s = HonestStrategy::new(user.clone());
    let mut out = Vec::new();
    for n in 0..=run.len() {
        out = s.next(scenario, &run.prefix(n));
    }
    out
}

/// All sub-strategies, or an elapse to the next grid point when they are
/// all empty.
pub fn local(user: &NodeId, scenario: &Scenario, run: &Run) -> Vec<Action> {
    let temp = temp(user, scenario, run);
    if temp.is_empty() {
        vec![Action::Elapse { delta: next_delta(scenario, run.last_state().time) }]
    } else {
        temp
    }
}

/// Time until the next point `t0 + jΔ` of any tree's grid.
pub fn next_delta(scenario: &Scenario, now: Time) -> Time {
    scenario
        .trees
        .iter()
        .map(|t| now.distance_to_next_grid(t.spec.t0, scenario.delta))
        .min()
        .unwrap_or(scenario.delta)
}

/// Union of every sub-strategy over all trees and edges, restricted to
/// valid actions, in a deterministic order without repetitions.
pub fn temp(user: &NodeId, scenario: &Scenario, run: &Run) -> Vec<Action> {
    let mut out = Out::new(run.last_state());
    for tree in &scenario.trees {
        let ctx = TreeCtx { user, tree, run, state: run.last_state(), delta: scenario.delta };
        ctx.new_batch(&mut out);
        for e in 0..tree.xtree().len() {
            ctx.enable_phase(e, &mut out);
            ctx.timeouts(e, &mut out);
            ctx.execution(e, &mut out);
        }
    }
    out.actions
}

struct Out<'a> {
    state: &'a HbeState,
    seen: BTreeSet<Action>,
    actions: Vec<Action>,
}

impl<'a> Out<'a> {
    fn new(state: &'a HbeState) -> Self {
        Out { state, seen: BTreeSet::new(), actions: Vec::new() }
    }

    fn push(&mut self, a: Action) {
        if is_valid(self.state, &a) && self.seen.insert(a.clone()) {
            self.actions.push(a);
        }
    }
}

struct TreeCtx<'a> {
    user: &'a NodeId,
    tree: &'a CompiledTree,
    run: &'a Run,
    state: &'a HbeState,
    delta: Time,
}

impl TreeCtx<'_> {
    fn t(&self) -> Time {
        self.state.time
    }

    fn t0(&self) -> Time {
        self.tree.spec.t0
    }

    fn batch_advertised(&self) -> bool {
        self.state.batches.get(self.tree.id()).is_some_and(|b| **b == self.tree.batch)
    }

    fn env(&self, e: EdgeIx) -> Option<&TamEnv> {
        self.state.tams.get(self.tree.ctlc_of(e).tam())
    }

    fn liquid(&self) -> bool {
        check_liquidity(self.state, [&self.tree.batch]).is_empty()
    }

    /// Advertise the batch early enough, then commit to one's secrets.
    fn new_batch(&self, out: &mut Out<'_>) {
        let depth = self.tree.xtree().depth() as i64;
        if !self.state.batches.contains_key(self.tree.id()) {
            if self.liquid() && self.t() <= self.t0() - self.delta * depth {
                out.push(Action::AdvBatch { batch: Shared::new(self.tree.batch.clone()) });
            }
            return;
        }
        if !self.batch_advertised() {
            return;
        }
        let mine = self.tree.batch.secrets_of(self.user);
        let uncommitted = self.state.tams.values().any(|env| !mine.is_subset(&env.committed));
        if !mine.is_empty() && self.t() < self.t0() && uncommitted && self.liquid() {
            out.push(Action::CommitBatch { user: self.user.clone(), tree: self.tree.id().clone() });
        }
    }

    fn sub_enabled(&self, e: EdgeIx) -> bool {
        self.state.is_sub_enabled(&self.tree.ctlc_of(e).id, self.tree.level_of(e))
    }

    /// Whether the user's part of the tree below `e` is in place so that
    /// `e` may be enabled. A subcontract serves every edge of its arc at its
    /// level, so a sender waits until all of them have their extensions
    /// live, not just `e`.
    fn ingoing(&self, e: EdgeIx) -> bool {
        let x = self.tree.xtree();
        let level = self.tree.level_of(e);
        let below_ready = x.edge(e).receiver() == self.user
            || (0..x.len())
                .filter(|&o| self.tree.edge_ctlc[o] == self.tree.edge_ctlc[e] && self.tree.level_of(o) == level)
                .all(|o| x.children(o).iter().all(|&c| self.sub_enabled(c)));
        below_ready && self.t() < self.t0() && self.batch_advertised() && !self.sub_enabled(e)
    }

    fn enable_phase(&self, e: EdgeIx, out: &mut Out<'_>) {
        if !self.ingoing(e) {
            return;
        }
        let c = self.tree.ctlc_of(e);
        let level = self.tree.level_of(e);
        let Some(env) = self.env(e) else { return };
        let is_sender = c.sender() == self.user;
        let advertised = env.advertised.contains_key(&c.id);
        let enabled = env.enabled.contains_key(&c.id);
        let authorized = |who: &NodeId| env.authorizations.contains(&(who.clone(), c.id.clone()));
        if is_sender && advertised && enabled {
            out.push(Action::EnableSubC { user: self.user.clone(), ctlc: c.id.clone(), level });
        } else if is_sender && advertised && !enabled && authorized(c.sender()) && authorized(c.receiver()) {
            // Enabling a contract makes its last subcontract live, so only
            // that subcontract's edge may trigger it.
            if level == c.last_level() {
                out.push(Action::EnableCtlc { tam: c.tam().clone(), ctlc: c.id.clone() });
            }
        } else if advertised
            && !enabled
            && env.available.contains_key(&c.fund.id)
            && (!is_sender || authorized(c.receiver()))
        {
            let auth = Action::AuthCtlc { user: self.user.clone(), ctlc: c.id.clone() };
            if !self.run.contains_action(&auth) {
                out.push(auth);
            }
        } else if is_sender && !advertised && !enabled && c.secrets().all(|s| env.committed.contains(s)) {
            out.push(Action::AdvCtlc { tam: c.tam().clone(), ctlc: c.id.clone() });
        }
    }

    /// Time out the lowest remaining subcontract, or refund the contract
    /// once only its last subcontract is left and expired.
    fn timeouts(&self, e: EdgeIx, out: &mut Out<'_>) {
        let c = self.tree.ctlc_of(e);
        if !c.id.involves(self.user) {
            return;
        }
        let Some(env) = self.env(e) else { return };
        let (Some(adv), true) = (env.advertised.get(&c.id), env.enabled.contains_key(&c.id)) else {
            return;
        };
        let level = self.tree.level_of(e);
        let expired = |l: u32| c.subcontract(l).is_some_and(|s| s.timelock <= self.t());
        if adv.len() > 1 && adv.first() == Some(&level) && expired(level) {
            out.push(Action::Timeout { ctlc: c.id.clone(), level });
        }
        if adv.len() == 1 && expired(*adv.first().expect("non-empty")) {
            let refund = Action::Refund { ctlc: c.id.clone() };
            if !self.run.contains_action(&refund) {
                out.push(refund);
            }
        }
    }

    /// `h(e)` is enabled and nothing with an earlier timelock is left in
    /// front of it.
    fn claimable_position(&self, e: EdgeIx) -> bool {
        let c = self.tree.ctlc_of(e);
        let Some(env) = self.env(e) else { return false };
        let level = self.tree.level_of(e);
        let Some(en) = env.enabled.get(&c.id) else { return false };
        let tl = self.tree.subcontract_of(e).timelock;
        en.contains(&level)
            && env.advertised.get(&c.id).is_some_and(|adv| {
                adv.iter().all(|&l| c.subcontract(l).is_none_or(|s| s.timelock >= tl))
            })
    }

    fn claimed_with_own_set(&self, e: EdgeIx) -> bool {
        let c = self.tree.ctlc_of(e);
        self.run.contains_action(&Action::Claim {
            ctlc: c.id.clone(),
            level: self.tree.level_of(e),
            secrets: self.tree.edge_hsec[e].clone(),
        })
    }

    /// `e` is an ingoing edge of the user whose pull is due: its parent was
    /// claimed, or — at the first level — every first-level edge is live.
    fn is_ingoing(&self, e: EdgeIx) -> bool {
        let x = self.tree.xtree();
        if x.edge(e).receiver() != self.user {
            return false;
        }
        match x.parent(e) {
            Some(p) => self.claimed_with_own_set(p),
            None => x.roots().all(|r| self.sub_enabled(r) || self.claimed_with_own_set(r)),
        }
    }

    fn execution(&self, e: EdgeIx, out: &mut Out<'_>) {
        let x = self.tree.xtree();
        if x.edge(e).receiver() != self.user {
            return;
        }
        let c = self.tree.ctlc_of(e);
        let level = self.tree.level_of(e);
        let Some(env) = self.env(e) else { return };
        if env.claimed.get(&c.id) == Some(&level) {
            out.push(Action::Execute { ctlc: c.id.clone(), level });
            return;
        }
        if !self.claimable_position(e) || !self.is_ingoing(e) {
            return;
        }
        let sc = self.tree.subcontract_of(e);
        let own = &self.tree.edge_secret[e];
        let missing = |set: &BTreeSet<Secret>| set.iter().filter(|s| !env.revealed.contains(s)).count();
        let secrets_av = sc.condition.iter().any(|set| set.iter().all(|s| env.revealed.contains(s) || s == own));
        let in_window = self.t0() <= self.t() && self.t() < sc.timelock;
        if secrets_av && in_window {
            if let Some(full) = sc.condition.iter().find(|set| missing(set) == 0) {
                out.push(Action::Claim { ctlc: c.id.clone(), level, secrets: full.clone() });
            } else {
                // The edge's own condition set is the one missing only `own`.
                let set = &self.tree.edge_hsec[e];
                if set.contains(own) && !env.revealed.contains(own) && missing(set) == 1 && self.nodupl(e) {
                    out.push(Action::RevealSecret { user: self.user.clone(), tam: c.tam().clone(), secret: own.clone() });
                }
            }
            return;
        }
        for s in sc.secrets() {
            if env.revealed.contains(s) {
                continue;
            }
            let elsewhere = self
                .state
                .tams_of(self.user)
                .any(|t| t != c.tam() && self.state.is_revealed(t, s));
            if elsewhere {
                out.push(Action::ShareSecret { user: self.user.clone(), tam: c.tam().clone(), secret: s.clone() });
            }
        }
    }

    /// No other edge of the same arc has had its secret revealed anywhere.
    fn nodupl(&self, e: EdgeIx) -> bool {
        let x = self.tree.xtree();
        let arc = &x.edge(e).arc;
        x.edges().iter().enumerate().all(|(i, other)| {
            i == e
                || other.arc.sender != arc.sender
                || other.arc.receiver != arc.receiver
                || !self.state.tams.values().any(|env| env.revealed.contains(&self.tree.edge_secret[i]))
        })
    }
}
