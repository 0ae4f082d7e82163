//! Premise-violation cases for every semantics rule, built on two compliant
//! fixture runs, and the per-step state invariants.

use std::collections::BTreeSet;
use std::sync::Arc as Shared;

use atg::graph::{Arc, Digraph, GraphSpec, NodeId};
use atg::ids::{TamId, TreeId};
use atg::run::Run;
use atg::runner::{simulate, RunConfig};
use atg::semantics::{Action, Code, HbeState, Rule};
use atg::synth::{CtlcId, Scenario, Secret, Subcontract};
use atg::time::Time;

pub const RULES: [Rule; 13] = [
    Rule::AdvBatch,
    Rule::CommitBatch,
    Rule::AdvCtlc,
    Rule::AuthCtlc,
    Rule::EnableCtlc,
    Rule::EnableSubC,
    Rule::RevealSecret,
    Rule::ShareSecret,
    Rule::Timeout,
    Rule::Refund,
    Rule::Claim,
    Rule::Execute,
    Rule::Elapse,
];

pub fn n(s: &str) -> NodeId {
    NodeId::new(s)
}

pub fn tam(s: &str) -> TamId {
    TamId::new(s)
}

pub struct Fixture {
    pub tree: TreeId,
    pub scenario: Scenario,
    pub run: Run,
}

impl Fixture {
    pub fn new(id: &str, d: &Digraph, t0: f64) -> Fixture {
        let spec = GraphSpec::with_sender_tams(id, d, &n("A"), t0);
        let scenario = Scenario::from_graph_specs(&[spec], Time::units(10)).unwrap();
        let run = simulate(&scenario, &RunConfig::new(&scenario, BTreeSet::new()), "compliant", 0).unwrap().run;
        Fixture { tree: TreeId::new(id), scenario, run }
    }

    /// The 3-cycle A→B→C→A; its compliant run is the one listed in
    /// `cycle_run_shape`.
    pub fn cycle() -> Fixture {
        Fixture::new("cyc", &Digraph::cycle(3), 31.0)
    }

    pub fn k3() -> Fixture {
        Fixture::new("k3", &Digraph::complete(3), 31.0)
    }

    /// State after the first `k` actions.
    pub fn at(&self, k: usize) -> HbeState {
        self.run.prefix(k).last_state().clone()
    }

    pub fn first(&self, p: impl Fn(&HbeState) -> bool) -> HbeState {
        self.run.states().find(|s| p(s)).expect("fixture reaches the state").clone()
    }

    pub fn c(&self, from: &str, to: &str) -> CtlcId {
        CtlcId::for_arc(&self.tree, &Arc::new(from, to))
    }

    pub fn s(&self, edge: u32, owner: &str) -> Secret {
        Secret { tree: self.tree.clone(), edge, owner: n(owner) }
    }

    pub fn adv_batch(&self) -> Action {
        Action::AdvBatch { batch: Shared::new(self.scenario.trees[0].batch.clone()) }
    }
}

pub struct Case {
    pub name: &'static str,
    pub state: HbeState,
    pub action: Action,
    pub code: Code,
}

pub fn case(name: &'static str, state: HbeState, action: Action, code: Code) -> Case {
    Case { name, state, action, code }
}

pub fn cycle_cases() -> Vec<Case> {
    let f = Fixture::cycle();
    let (ab, bc, ca) = (f.c("A", "B"), f.c("B", "C"), f.c("C", "A"));
    let (s1, s2) = (f.s(1, "A"), f.s(2, "C"));
    let tree = f.tree.clone();
    let mut out = Vec::new();

    // AdvBatch
    let mut bad = f.scenario.trees[0].batch.clone();
    bad.ctlcs[0].fund.owner = n("B");
    out.push(case("batch funded by the receiver", f.at(0), Action::AdvBatch { batch: Shared::new(bad) }, Code::MalformedBatch));
    let mut bad = f.scenario.trees[0].batch.clone();
    bad.ctlcs[0].subcontracts.push(Subcontract { level: 4, timelock: Time::units(1), condition: vec![[s1.clone()].into()] });
    out.push(case("timelocks decrease", f.at(0), Action::AdvBatch { batch: Shared::new(bad) }, Code::TimelocksNotOrdered));
    let mut st = f.at(0);
    st.honest.clear();
    out.push(case("nobody honest", st, f.adv_batch(), Code::NoHonestUser));
    out.push(case("batch advertised twice", f.at(1), f.adv_batch(), Code::DuplicateAdvertisement));
    let mut st = f.at(0);
    st.tams.get_mut(&tam("tam-A")).unwrap().available.clear();
    out.push(case("fund missing", st, f.adv_batch(), Code::FundUnavailable));
    let mut st = f.at(0);
    st.membership.insert(tam("tam-A"), [n("A")].into());
    out.push(case("receiver not in tam", st, f.adv_batch(), Code::UsersNotInTam));
    let mut st = f.at(0);
    st.tams.get_mut(&tam("tam-B")).unwrap().committed.insert(s1.clone());
    out.push(case("secret in use", st, f.adv_batch(), Code::SecretReused));

    // CommitBatch
    let commit = |u: &str| Action::CommitBatch { user: n(u), tree: tree.clone() };
    out.push(case("commit before advertisement", f.at(0), commit("A"), Code::BatchNotAdvertised));
    out.push(case("commit to unknown tree", f.at(1), Action::CommitBatch { user: n("A"), tree: TreeId::new("zz") }, Code::BatchNotAdvertised));
    out.push(case("outsider commits", f.at(1), commit("D"), Code::UserNotInBatch));
    out.push(case("commit twice", f.at(2), commit("A"), Code::SecretsAlreadyCommitted));

    // AdvCTLC (state 4: batch advertised, all committed)
    let adv = |t: &str, c: &CtlcId| Action::AdvCtlc { tam: tam(t), ctlc: c.clone() };
    out.push(case("unknown tam", f.at(4), adv("tam-Z", &ab), Code::UnknownTam));
    out.push(case("contract of no batch", f.at(4), adv("tam-A", &f.c("A", "C")), Code::NotInBatch));
    out.push(case("advertised twice", f.at(5), adv("tam-A", &ab), Code::AlreadyAdvertised));
    out.push(case("secrets not committed", f.at(2), adv("tam-A", &ab), Code::SecretsNotCommitted));
    let mut st = f.at(4);
    st.tams.get_mut(&tam("tam-A")).unwrap().available.clear();
    out.push(case("fund gone", st, adv("tam-A", &ab), Code::FundUnavailable));
    let mut st = f.at(4);
    st.honest.clear();
    out.push(case("no honest party", st, adv("tam-A", &ab), Code::NoHonestUser));
    let mut st = f.at(4);
    st.membership.insert(tam("tam-A"), [n("A")].into());
    out.push(case("party outside tam", st, adv("tam-A", &ab), Code::UsersNotInTam));

    // AuthCTLC (state 5: c(A,B) advertised)
    let auth = |u: &str, c: &CtlcId| Action::AuthCtlc { user: n(u), ctlc: c.clone() };
    out.push(case("authorize unadvertised", f.at(5), auth("C", &bc), Code::NotAdvertised));
    out.push(case("authorize twice", f.at(6), auth("B", &ab), Code::AlreadyAuthorized));
    out.push(case("third party authorizes", f.at(5), auth("C", &ab), Code::NotAParty));
    out.push(case("sender before receiver", f.at(5), auth("A", &ab), Code::ReceiverFirst));
    let mut st = f.at(5);
    st.tams.get_mut(&tam("tam-A")).unwrap().available.clear();
    out.push(case("authorize without fund", st, auth("B", &ab), Code::FundUnavailable));

    // EnableCTLC (state 7: both parties authorized c(A,B))
    let enable = |t: &str, c: &CtlcId| Action::EnableCtlc { tam: tam(t), ctlc: c.clone() };
    out.push(case("enable in unknown tam", f.at(7), enable("tam-Z", &ab), Code::UnknownTam));
    out.push(case("enable with one authorization", f.at(6), enable("tam-A", &ab), Code::MissingAuthorization));
    out.push(case("enable twice", f.at(8), enable("tam-A", &ab), Code::AlreadyEnabled));
    out.push(case("enable in the wrong tam", f.at(7), enable("tam-B", &ab), Code::NotAdvertised));
    out.push(case("enable unadvertised", f.at(4), enable("tam-A", &ab), Code::NotAdvertised));
    let mut st = f.at(7);
    st.tams.get_mut(&tam("tam-A")).unwrap().available.clear();
    out.push(case("enable without fund", st, enable("tam-A", &ab), Code::FundUnavailable));

    // RevealSecret (state 20: t = t0, nothing revealed)
    let reveal = |u: &str, t: &str, x: &Secret| Action::RevealSecret { user: n(u), tam: tam(t), secret: x.clone() };
    out.push(case("reveal uncommitted", f.at(1), reveal("A", "tam-C", &s1), Code::SecretNotCommitted));
    // Revealing moves a secret out of `committed`; a twice-listed secret can
    // only come from a corrupted state.
    let mut st = f.at(21);
    st.tams.get_mut(&tam("tam-C")).unwrap().committed.insert(s1.clone());
    out.push(case("reveal twice", st, reveal("A", "tam-C", &s1), Code::AlreadyRevealed));
    out.push(case("reveal after revealing", f.at(21), reveal("A", "tam-C", &s1), Code::SecretNotCommitted));
    out.push(case("reveal someone else's", f.at(20), reveal("C", "tam-C", &s1), Code::NotSecretOwner));
    out.push(case("reveal outside own tams", f.at(20), reveal("A", "tam-B", &s1), Code::OwnerNotInTam));
    out.push(case("reveal in unknown tam", f.at(20), reveal("A", "tam-Z", &s1), Code::UnknownTam));

    // ShareSecret (state 21: s1 revealed in tam-C)
    let share = |u: &str, t: &str, x: &Secret| Action::ShareSecret { user: n(u), tam: tam(t), secret: x.clone() };
    out.push(case("share unrevealed", f.at(20), share("C", "tam-B", &s1), Code::SecretNotRevealedElsewhere));
    out.push(case("share into its own source", f.at(21), share("C", "tam-C", &s1), Code::SecretNotRevealedElsewhere));
    out.push(case("share twice", f.at(24), share("C", "tam-B", &s1), Code::AlreadyRevealed));
    out.push(case("share into a foreign tam", f.at(21), share("A", "tam-B", &s1), Code::UserNotInTam));
    out.push(case("share from a foreign tam", f.at(21), share("B", "tam-B", &s1), Code::UserNotInSourceTam));

    // Timeout / Refund on single-level contracts
    out.push(case("time out the only subcontract", f.at(16), Action::Timeout { ctlc: ca.clone(), level: 1 }, Code::LastSubcontract));
    out.push(case("time out unenabled", f.at(13), Action::Timeout { ctlc: ca.clone(), level: 1 }, Code::NotEnabled));
    out.push(case("time out unadvertised", f.at(4), Action::Timeout { ctlc: ca.clone(), level: 1 }, Code::NotAdvertised));
    out.push(case("refund early", f.at(16), Action::Refund { ctlc: ca.clone() }, Code::TimelockNotReached));
    out.push(case("refund unenabled", f.at(13), Action::Refund { ctlc: ca.clone() }, Code::NotEnabled));
    out.push(case("refund unadvertised", f.at(4), Action::Refund { ctlc: ca.clone() }, Code::NotAdvertised));
    out.push(case("refund claimed", f.at(22), Action::Refund { ctlc: ca.clone() }, Code::NotAdvertised));

    // Claim (state 21: s1 revealed in tam-C)
    let claim = |c: &CtlcId, level: u32, set: &[&Secret]| Action::Claim {
        ctlc: c.clone(),
        level,
        secrets: set.iter().map(|x| (*x).clone()).collect(),
    };
    out.push(case("claim before reveal", f.at(20), claim(&ca, 1, &[&s1]), Code::SecretsNotRevealed));
    out.push(case("claim with a wrong set", f.at(21), claim(&ca, 1, &[&s2]), Code::NotACondition));
    out.push(case("claim a missing level", f.at(21), claim(&ca, 2, &[&s1]), Code::SubcontractNotEnabled));
    out.push(case("claim unenabled", f.at(13), claim(&ca, 1, &[&s1]), Code::NotEnabled));
    out.push(case("claim twice", f.at(22), claim(&ca, 1, &[&s1]), Code::NotAdvertised));
    let mut st = f.at(21);
    st.tams.get_mut(&tam("tam-C")).unwrap().reserved.clear();
    out.push(case("claim without reserved fund", st, claim(&ca, 1, &[&s1]), Code::FundNotReserved));

    // Execute (state 22: c(C,A) claimed at level 1)
    let exec = |c: &CtlcId, level: u32| Action::Execute { ctlc: c.clone(), level };
    out.push(case("execute unclaimed", f.at(21), exec(&ca, 1), Code::NotClaimed));
    out.push(case("execute other level", f.at(22), exec(&ca, 2), Code::WrongSubcontract));
    out.push(case("execute twice", f.at(23), exec(&ca, 1), Code::NotClaimed));
    out.push(case("execute unknown contract", f.at(22), exec(&f.c("A", "C"), 1), Code::NotClaimed));
    let mut st = f.at(22);
    st.tams.get_mut(&tam("tam-C")).unwrap().reserved.clear();
    out.push(case("execute without reserved fund", st, exec(&ca, 1), Code::FundNotReserved));

    // Elapse
    out.push(case("elapse zero", f.at(0), Action::Elapse { delta: Time::ZERO }, Code::NonPositiveDelay));
    out.push(case("elapse backwards", f.at(0), Action::Elapse { delta: Time(-5) }, Code::NonPositiveDelay));
    let mut st = f.at(0);
    st.time = Time(i64::MAX - 1);
    out.push(case("elapse past the end of time", st, Action::Elapse { delta: Time(10) }, Code::TimeOverflow));
    out
}

pub fn k3_cases() -> Vec<Case> {
    let f = Fixture::k3();
    let ab = f.c("A", "B");
    let enabled = |s: &HbeState| s.is_enabled(&ab);
    let both = |s: &HbeState| s.is_sub_enabled(&ab, 2);
    let advertised = |s: &HbeState| s.is_advertised(&ab);
    let sub = |u: &str, level: u32| Action::EnableSubC { user: n(u), ctlc: ab.clone(), level };
    let mut out = vec![
        case("sub-enable before enable", f.first(advertised), sub("A", 2), Code::NotEnabled),
        case("sub-enable the last level again", f.first(enabled), sub("A", 3), Code::SubcontractNotPending),
        case("sub-enable a missing level", f.first(enabled), sub("A", 7), Code::SubcontractNotPending),
        case("receiver sub-enables", f.first(enabled), sub("B", 2), Code::NotSender),
        case("sub-enable unadvertised", f.at(1), sub("A", 2), Code::NotAdvertised),
        case("time out a lower level first", f.first(both), Action::Timeout { ctlc: ab.clone(), level: 3 }, Code::NotTopLevel),
        case("time out an unknown level", f.first(both), Action::Timeout { ctlc: ab.clone(), level: 9 }, Code::UnknownSubcontract),
        case("time out early", f.first(both), Action::Timeout { ctlc: ab.clone(), level: 2 }, Code::TimelockNotReached),
        case("refund with two levels left", f.first(both), Action::Refund { ctlc: ab.clone() }, Code::NotLastSubcontract),
    ];
    // A claim of the lower level while the higher level is still pending.
    let mut st = f.first(both);
    let set: BTreeSet<Secret> = f.scenario.trees[0].ctlc_of(8).subcontract(3).unwrap().condition[0].clone();
    for x in &set {
        st.tams.get_mut(&tam("tam-A")).unwrap().revealed.insert(x.clone());
    }
    out.push(case("claim behind a pending level", st, Action::Claim { ctlc: ab, level: 3, secrets: set }, Code::NotTopLevel));
    out
}

/// Fund conservation, secret monotonicity, time monotonicity and the
/// structural invariants, across one transition.
pub fn assert_step_invariants(before: &HbeState, a: &Action, after: &HbeState, scenario: &Scenario) {
    after.check_invariants().unwrap_or_else(|e| panic!("after {a}: {e}"));
    assert_eq!(before.fund_ids().keys().collect::<Vec<_>>(), after.fund_ids().keys().collect::<Vec<_>>(), "funds after {a}");
    for tree in &scenario.trees {
        for c in &tree.batch.ctlcs {
            let owner = after.owner_of(&c.fund.id).expect("fund exists");
            assert!(owner == c.sender() || owner == c.receiver(), "{} owned by {owner} after {a}", c.fund.id);
        }
    }
    for (t, env) in &before.tams {
        assert!(env.revealed.is_subset(&after.tams[t].revealed), "secrets hidden again by {a}");
    }
    assert!(after.time >= before.time);
    if !a.is_elapse() {
        assert_eq!(after.time, before.time);
    }
}


/// Every negative case of both fixtures.
pub fn all_cases() -> Vec<Case> {
    cycle_cases().into_iter().chain(k3_cases()).collect()
}
