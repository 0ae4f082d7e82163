//! Randomized invariants over graphs, runs and traces.

use std::collections::BTreeSet;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use atg::adversary::BUILTIN;
use atg::graph::{random_in_semiconnected, GraphSpec, NodeId};
use atg::runner::{replay, simulate, RunConfig, RunOutcome, Trace};
use atg::sweep::spec_for;
use atg::synth::Scenario;
use atg::time::Time;
use atg::unfold::unfold;
use atg::verifier::verify_all;

struct Case {
    spec: GraphSpec,
    scenario: Scenario,
    corrupted: BTreeSet<NodeId>,
    adversary: &'static str,
    seed: u64,
}

fn make_case(graph_seed: u64, max_nodes: usize, corrupt_mask: u32, adv: usize, seed: u64) -> Case {
    let mut rng = ChaCha8Rng::seed_from_u64(graph_seed);
    let (d, leader) = random_in_semiconnected(&mut rng, max_nodes);
    let spec = spec_for("p", &d, &leader, Time::units(10), Time::ZERO).unwrap();
    let scenario = Scenario::from_graph_specs(std::slice::from_ref(&spec), Time::units(10)).unwrap();
    let users: Vec<NodeId> = scenario.users().into_iter().collect();
    // Keep at least one user honest.
    let corrupted: BTreeSet<NodeId> =
        users.iter().enumerate().skip(1).filter(|(i, _)| corrupt_mask >> i & 1 == 1).map(|(_, u)| u.clone()).collect();
    Case { spec, scenario, corrupted, adversary: BUILTIN[adv % BUILTIN.len()], seed }
}

fn simulate_case(c: &Case) -> RunOutcome {
    let config = RunConfig::new(&c.scenario, c.corrupted.clone());
    simulate(&c.scenario, &config, c.adversary, c.seed).unwrap()
}

fn trace(c: &Case, o: &RunOutcome) -> Trace {
    o.trace(std::slice::from_ref(&c.spec), c.scenario.delta, c.seed, c.adversary)
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, ..ProptestConfig::default() })]

    #[test]
    fn runs_conserve_funds_and_keep_time_and_secrets_monotone(
        g in any::<u64>(), mask in any::<u32>(), adv in 0usize..8, seed in any::<u64>(),
    ) {
        let c = make_case(g, 4, mask, adv, seed);
        let o = simulate_case(&c);
        let funds: BTreeSet<_> = o.run.initial().fund_ids().into_keys().collect();
        let mut prev = o.run.initial();
        for (a, s) in o.run.steps() {
            prop_assert!(s.check_invariants().is_ok(), "after {}", a);
            prop_assert_eq!(&s.fund_ids().into_keys().collect::<BTreeSet<_>>(), &funds);
            for ct in &c.scenario.trees[0].batch.ctlcs {
                let owner = s.owner_of(&ct.fund.id).unwrap();
                prop_assert!(owner == ct.sender() || owner == ct.receiver());
            }
            prop_assert!(s.time >= prev.time);
            prop_assert!(a.is_elapse() || s.time == prev.time);
            for (t, env) in &prev.tams {
                prop_assert!(env.revealed.is_subset(&s.tams[t].revealed));
            }
            prev = s;
        }
    }

    #[test]
    fn honest_users_never_lose(
        g in any::<u64>(), mask in any::<u32>(), adv in 0usize..8, seed in any::<u64>(),
    ) {
        let c = make_case(g, 4, mask, adv, seed);
        let o = simulate_case(&c);
        prop_assert!(o.is_final(), "{:?}", o.status);
        for r in verify_all(&o, &c.scenario) {
            prop_assert!(r.passed(), "{:?}", r);
        }
    }

    #[test]
    fn simulation_is_deterministic_and_traces_replay(
        g in any::<u64>(), mask in any::<u32>(), adv in 0usize..8, seed in any::<u64>(),
    ) {
        let c = make_case(g, 4, mask, adv, seed);
        let first = trace(&c, &simulate_case(&c)).to_jsonl();
        let second = trace(&c, &simulate_case(&c)).to_jsonl();
        prop_assert_eq!(&first, &second);
        let t = Trace::from_jsonl(&first).unwrap();
        prop_assert!(replay(&t).is_ok());
    }

    #[test]
    fn unfolding_is_a_prefix_closed_preorder(g in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(g);
        let (d, leader) = random_in_semiconnected(&mut rng, 5);
        let x = unfold(&d, &leader).unwrap();
        for i in 0..x.len() {
            let e = x.edge(i);
            prop_assert!(d.arcs().contains(&e.arc));
            match x.parent(i) {
                None => prop_assert_eq!(&e.arc.receiver, &leader),
                Some(p) => {
                    prop_assert!(p < i, "pre-order puts parents first");
                    prop_assert_eq!(&e.walk.0[1..], &x.edge(p).walk.0[..]);
                    prop_assert!(x.children(p).contains(&i));
                }
            }
            // Receivers along a walk are distinct.
            let receivers: BTreeSet<_> = e.walk.0.iter().map(|a| &a.receiver).collect();
            prop_assert_eq!(receivers.len(), e.walk.0.len());
        }
        // Every arc is represented.
        let arcs: BTreeSet<_> = x.edges().iter().map(|e| e.arc.clone()).collect();
        prop_assert_eq!(&arcs, d.arcs());
    }

    #[test]
    fn batch_timelocks_grow_with_depth(g in any::<u64>()) {
        let c = make_case(g, 5, 0, 0, 0);
        let tree = &c.scenario.trees[0];
        for ct in &tree.batch.ctlcs {
            let locks: Vec<Time> = ct.subcontracts.iter().map(|s| s.timelock).collect();
            prop_assert!(locks.windows(2).all(|w| w[0] < w[1]), "{:?}", locks);
            prop_assert!(locks[0] > Time::units(c.spec.t0 as i64 - 1));
        }
    }
}
