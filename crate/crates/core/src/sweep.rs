//! Randomised security sweeps over small graphs.

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::graph::{random_in_semiconnected, Digraph, GraphSpec, NodeId};
use crate::runner::{default_t0, simulate, RunConfig, RunnerError, Status};
use crate::synth::{Scenario, TreeSpec};
use crate::time::Time;
use crate::unfold::unfold;
use crate::verifier::{verify_all, Report};

/// A graph spec with sender-hosted TAMs and the default `t0` after `start`.
pub fn spec_for(id: &str, d: &Digraph, leader: &NodeId, delta: Time, start: Time) -> Result<GraphSpec, RunnerError> {
    let mut spec = GraphSpec::with_sender_tams(id, d, leader, 0.0);
    spec.t0 = default_t0(&spec, delta, start)?.as_units_f64();
    Ok(spec)
}

#[derive(Clone, Debug)]
pub struct SweepConfig {
    pub max_nodes: usize,
    pub runs: usize,
    pub seed: u64,
    pub adversaries: Vec<String>,
    pub delta: Time,
    /// Corrupt every user but one (otherwise nobody).
    pub corrupt_all_but_one: bool,
}

impl SweepConfig {
    pub fn security(max_nodes: usize, runs: usize, seed: u64) -> SweepConfig {
        SweepConfig {
            max_nodes,
            runs,
            seed,
            adversaries: ["reorder", "withhold", "starve"].map(String::from).to_vec(),
            delta: Time::units(10),
            corrupt_all_but_one: true,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct CaseResult {
    pub index: usize,
    pub seed: u64,
    pub adversary: String,
    pub graph: GraphSpec,
    pub honest: Vec<NodeId>,
    pub status: Status,
    pub steps: usize,
    pub max_gap: usize,
    pub failures: Vec<Report>,
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct SweepSummary {
    pub runs: usize,
    pub final_runs: usize,
    pub not_final: usize,
    pub failed_reports: usize,
    pub security_failures: usize,
    pub underwater: usize,
    pub double_claims: usize,
    pub max_steps: usize,
    pub max_gap: usize,
    /// The first few failing cases, for inspection.
    pub examples: Vec<CaseResult>,
}

impl SweepSummary {
    pub fn clean(&self) -> bool {
        self.not_final == 0 && self.failed_reports == 0
    }
}

/// The random case `index` of a sweep.
pub fn case(cfg: &SweepConfig, index: usize) -> (u64, String, GraphSpec, BTreeSet<NodeId>) {
    let seed = cfg.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(index as u64);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (d, leader) = random_in_semiconnected(&mut rng, cfg.max_nodes);
    let spec = spec_for(&format!("g{index}"), &d, &leader, cfg.delta, Time::ZERO).expect("leader is valid");
    let adversary = cfg.adversaries[index % cfg.adversaries.len()].clone();
    let users: Vec<NodeId> = unfold(&d, &leader).expect("leader is valid").users().into_iter().collect();
    let corrupted = if cfg.corrupt_all_but_one {
        let keep = rng.gen_range(0..users.len());
        users.iter().enumerate().filter(|(i, _)| *i != keep).map(|(_, u)| u.clone()).collect()
    } else {
        BTreeSet::new()
    };
    (seed, adversary, spec, corrupted)
}

pub fn run_case(cfg: &SweepConfig, index: usize) -> Result<CaseResult, RunnerError> {
    let (seed, adversary, spec, corrupted) = case(cfg, index);
    let scenario = Scenario::new(vec![TreeSpec::from_graph_spec(&spec)?], cfg.delta)?;
    let mut scenario = scenario;
    scenario.trees[0].graph = Some(spec.clone());
    let config = RunConfig::new(&scenario, corrupted);
    let outcome = simulate(&scenario, &config, &adversary, seed)?;
    let failures = if outcome.is_final() {
        verify_all(&outcome, &scenario).into_iter().filter(|r| !r.passed()).collect()
    } else {
        Vec::new()
    };
    Ok(CaseResult {
        index,
        seed,
        adversary,
        graph: spec,
        honest: outcome.honest.iter().cloned().collect(),
        status: outcome.status.clone(),
        steps: outcome.stats.steps,
        max_gap: outcome.stats.max_gap,
        failures,
    })
}

/// Run `cfg.runs` random cases in parallel and aggregate.
pub fn sweep(cfg: &SweepConfig) -> Result<SweepSummary, RunnerError> {
    let results: Vec<CaseResult> =
        (0..cfg.runs).into_par_iter().map(|i| run_case(cfg, i)).collect::<Result<_, _>>()?;
    let mut s = SweepSummary { runs: results.len(), ..Default::default() };
    for r in results {
        let is_final = r.status == Status::Final;
        if is_final {
            s.final_runs += 1;
        } else {
            s.not_final += 1;
        }
        s.max_steps = s.max_steps.max(r.steps);
        s.max_gap = s.max_gap.max(r.max_gap);
        s.failed_reports += r.failures.len();
        for f in &r.failures {
            match f.check {
                "security" => s.security_failures += 1,
                "end_to_end_security" => {
                    if f.counterexample.as_deref().is_some_and(|c| c.contains("twice")) {
                        s.double_claims += 1;
                    } else {
                        s.underwater += 1;
                    }
                }
                _ => {}
            }
        }
        if (!is_final || !r.failures.is_empty()) && s.examples.len() < 5 {
            s.examples.push(r);
        }
    }
    Ok(s)
}
