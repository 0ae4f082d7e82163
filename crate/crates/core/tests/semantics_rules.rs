//! Table-driven premise checks for every semantics rule, with the state
//! invariants asserted after every step of every fixture run.

mod common;

use std::collections::{BTreeMap, BTreeSet};

use atg::semantics::{check, enabled_actions, step, Action, Code, Rule};
use atg::time::Time;
use common::rules::*;

#[test]
fn cycle_run_shape() {
    let f = Fixture::cycle();
    let kinds: Vec<Rule> = f.run.actions().map(Action::rule).collect();
    use Rule::*;
    assert_eq!(kinds[..4], [AdvBatch, CommitBatch, CommitBatch, CommitBatch]);
    assert_eq!(kinds[4..8], [AdvCtlc, AuthCtlc, AuthCtlc, EnableCtlc]);
    assert_eq!(kinds[16..20], [Elapse; 4]);
    assert_eq!(kinds[20..23], [RevealSecret, Claim, Execute]);
    assert_eq!(f.at(20).time, Time::units(31));
}

#[test]
fn every_rule_rejects_its_broken_premises() {
    let cases: Vec<Case> = all_cases().into_iter().collect();
    let mut per_rule: BTreeMap<Rule, usize> = BTreeMap::new();
    let mut failures = Vec::new();
    for c in &cases {
        match check(&c.state, &c.action) {
            Err(v) if v.code == c.code && v.rule == c.action.rule() => *per_rule.entry(v.rule).or_default() += 1,
            other => failures.push(format!("{}: expected {}, got {other:?}", c.name, c.code)),
        }
        // A rejected action never changes the state.
        assert!(step(&c.state, &c.action).is_err(), "{}", c.name);
    }
    assert!(failures.is_empty(), "{}", failures.join("\n"));
    assert!(cases.len() >= 39, "{} cases", cases.len());
    for rule in RULES {
        let k = per_rule.get(&rule).copied().unwrap_or(0);
        assert!(k >= 3, "{rule:?} has {k} negative cases");
    }
}

#[test]
fn every_premise_code_is_exercised() {
    let hit: BTreeSet<Code> = all_cases().into_iter().map(|c| c.code).collect();
    let missing: Vec<&str> = Code::ALL.iter().filter(|c| !hit.contains(c)).map(|c| c.as_str()).collect();
    assert!(missing.is_empty(), "untested premises: {missing:?}");
}

#[test]
fn fixture_runs_keep_the_invariants() {
    for f in [Fixture::cycle(), Fixture::k3()] {
        let mut prev = f.run.initial();
        for (a, s) in f.run.steps() {
            assert_step_invariants(prev, a, s, &f.scenario);
            prev = s;
        }
    }
}

#[test]
fn enabled_actions_are_exactly_the_valid_ones() {
    let f = Fixture::cycle();
    for (i, s) in f.run.states().enumerate() {
        let en = enabled_actions(s, &f.scenario);
        for a in &en.actions {
            let next = step(s, a).unwrap_or_else(|v| panic!("state {i}: {a} listed but invalid: {v}"));
            assert_step_invariants(s, a, &next, &f.scenario);
        }
        // The run's own next action is among them (or is an elapse).
        if let Some((a, _)) = f.run.steps().get(i) {
            assert!(a.is_elapse() || en.actions.contains(a), "state {i}: {a} missing");
        }
    }
}

#[test]
fn enabled_actions_walk_keeps_the_invariants() {
    // Random walks over enabled actions, including adversarial orders the
    // honest strategies never produce.
    use rand::{Rng, SeedableRng};
    let f = Fixture::k3();
    for seed in 0..20 {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut s = f.run.initial().clone();
        for _ in 0..200 {
            let en = enabled_actions(&s, &f.scenario);
            let a = if en.actions.is_empty() || rng.gen_bool(0.1) {
                Action::Elapse { delta: Time::units(rng.gen_range(1..15)) }
            } else {
                en.actions[rng.gen_range(0..en.actions.len())].clone()
            };
            let next = step(&s, &a).unwrap();
            assert_step_invariants(&s, &a, &next, &f.scenario);
            s = next;
        }
    }
}
