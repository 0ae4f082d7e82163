//! The conformance loop: honest users propose, the adversary schedules,
//! the runner checks the scheduling contract and extends the run.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::adversary::{self, AdvContext, Adversary};
use crate::graph::{GraphSpec, NodeId};
use crate::unfold::unfold;
use crate::honest::{next_delta, HonestStrategy};
use crate::run::Run;
use crate::semantics::{check_liquidity, initial_state, Action, LiquidityIssue, SemanticsError, Violation};
use crate::synth::{Scenario, SynthError};
use crate::time::Time;

/// The default time unit multiple used for Δ.
pub const DEFAULT_DELTA_UNITS: i64 = 10;
/// Default bound on the length of a run.
pub const DEFAULT_STEP_BUDGET: usize = 200_000;
/// Default per-round cap factor on actions not taken from the mempool.
pub const DEFAULT_CAP_FACTOR: usize = 10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stop {
    /// Until time exceeds every timelock.
    Final,
    MaxSteps(usize),
    TargetTime(Time),
}

impl std::str::FromStr for Stop {
    type Err = String;

    /// `final`, `steps:N` or `time:T` (T in time units).
    fn from_str(s: &str) -> Result<Stop, String> {
        match s.split_once(':') {
            None if s == "final" => Ok(Stop::Final),
            Some(("steps", n)) => n.parse().map(Stop::MaxSteps).map_err(|e| format!("steps: {e}")),
            Some(("time", t)) => {
                t.parse::<f64>().map(|u| Stop::TargetTime(Time::from_units_f64(u))).map_err(|e| format!("time: {e}"))
            }
            _ => Err(format!("expected final, steps:N or time:T, got {s:?}")),
        }
    }
}

#[derive(Clone, Debug)]
pub struct RunConfig {
    pub honest: BTreeSet<NodeId>,
    pub corrupted: BTreeSet<NodeId>,
    pub start: Time,
    pub stop: Stop,
    /// Smallest elapse an adversary may schedule.
    pub epsilon: Time,
    pub cap_factor: usize,
    pub step_budget: usize,
}

impl RunConfig {
    /// Every user of `scenario` honest except `corrupted`.
    pub fn new(scenario: &Scenario, corrupted: BTreeSet<NodeId>) -> RunConfig {
        let honest = scenario.users().difference(&corrupted).cloned().collect();
        RunConfig {
            honest,
            corrupted,
            start: Time::ZERO,
            stop: Stop::Final,
            epsilon: Time((scenario.delta.0 / 1000).max(1)),
            cap_factor: DEFAULT_CAP_FACTOR,
            step_budget: DEFAULT_STEP_BUDGET,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum Status {
    Final,
    MaxSteps,
    TargetTime,
    /// The step budget ran out before the stop condition.
    OutOfSteps,
    /// The adversary had nothing to schedule.
    Stuck { reason: String },
    /// The adversary broke the scheduling contract.
    Rejected { index: usize, action: String, reason: String },
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct RunStats {
    pub steps: usize,
    pub elapses: usize,
    /// Longest stretch of actions without an elapse.
    pub max_gap: usize,
}

#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub run: Run,
    pub status: Status,
    pub stats: RunStats,
    pub honest: BTreeSet<NodeId>,
    pub corrupted: BTreeSet<NodeId>,
    pub start: Time,
}

impl RunOutcome {
    pub fn is_final(&self) -> bool {
        self.status == Status::Final
    }

    pub fn trace(&self, specs: &[GraphSpec], delta: Time, seed: u64, adversary: &str) -> Trace {
        let header = TraceHeader {
            specs: specs.to_vec(),
            delta,
            seed,
            adversary: adversary.into(),
            honest: self.honest.iter().cloned().collect(),
            corrupted: self.corrupted.iter().cloned().collect(),
            start: self.start,
        };
        Trace::record(header, &self.run)
    }
}

#[derive(Debug, Error)]
pub enum RunnerError {
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error(transparent)]
    Semantics(#[from] SemanticsError),
    #[error("initial state is not liquid: {0:?}")]
    NotLiquid(Vec<LiquidityIssue>),
    #[error("unknown adversary {0:?}")]
    UnknownAdversary(String),
    #[error("user {0} is both honest and corrupted")]
    Overlap(NodeId),
    #[error("step {index}: {violation}")]
    Replay { index: usize, violation: Violation },
    #[error("graph spec: {0}")]
    Spec(String),
    #[error("trace: {0}")]
    Trace(String),
    #[error("final state digest {actual} differs from recorded {recorded}")]
    Digest { recorded: String, actual: String },
}

/// Why the runner refused an adversary action, if it did.
fn contract_violation(
    run: &Run,
    a: &Action,
    mempool: &[(NodeId, Vec<Action>)],
    agreed: Option<Time>,
    epsilon: Time,
    from_mempool: bool,
    own_budget: usize,
) -> Option<String> {
    if let Err(v) = crate::semantics::check(run.last_state(), a) {
        return Some(format!("invalid: {v}"));
    }
    if let Some(actor) = a.actor() {
        if let Some((_, out)) = mempool.iter().find(|(u, _)| u == actor) {
            if !out.contains(a) {
                return Some(format!("restricted action of honest {actor} not in its output"));
            }
        }
    }
    if let Action::Elapse { delta } = a {
        match agreed {
            None => return Some("honest users do not agree to elapse".into()),
            Some(max) if *delta > max => return Some(format!("elapse {delta} exceeds agreed {max}")),
            _ if *delta < epsilon => return Some(format!("elapse {delta} below ε = {epsilon}")),
            _ => {}
        }
    } else if !from_mempool && own_budget == 0 {
        return Some("too many adversary actions in a row".into());
    }
    None
}

/// Run honest strategies for `config.honest` against `adversary` until the
/// stop condition.
pub fn run_protocol(
    scenario: &Scenario,
    config: &RunConfig,
    adversary: &mut dyn Adversary,
) -> Result<RunOutcome, RunnerError> {
    if let Some(u) = config.honest.intersection(&config.corrupted).next() {
        return Err(RunnerError::Overlap(u.clone()));
    }
    let init = initial_state(scenario, scenario.membership(), config.honest.clone(), config.start)?;
    let issues = check_liquidity(&init, scenario.trees.iter().map(|t| &t.batch));
    if !issues.is_empty() {
        return Err(RunnerError::NotLiquid(issues));
    }
    let mut run = Run::new(init);
    let mut honest: Vec<HonestStrategy> = config.honest.iter().cloned().map(HonestStrategy::new).collect();
    let mut puppets: Vec<HonestStrategy> = config.corrupted.iter().cloned().map(HonestStrategy::new).collect();
    let mut stats = RunStats::default();
    let mut gap = 0usize;
    let mut own = 0usize;
    let horizon = scenario.horizon();

    let status = loop {
        let t = run.last_state().time;
        match config.stop {
            Stop::Final if t > horizon => break Status::Final,
            Stop::MaxSteps(n) if run.len() >= n => break Status::MaxSteps,
            Stop::TargetTime(target) if t >= target => break Status::TargetTime,
            _ => {}
        }
        if run.len() >= config.step_budget {
            break Status::OutOfSteps;
        }
        let mempool: Vec<(NodeId, Vec<Action>)> = honest
            .iter_mut()
            .map(|h| {
                let out = h.next(scenario, &run);
                let known = run.last_state().knowledge(h.user());
                let out = out.into_iter().filter(|a| knows(a, &known)).collect();
                (h.user().clone(), out)
            })
            .collect();
        let puppet_out: Vec<(NodeId, Vec<Action>)> =
            puppets.iter_mut().map(|p| (p.user().clone(), p.next(scenario, &run))).collect();
        let agreed = agreed_delta(scenario, &run, &mempool, &puppet_out);
        let non_elapse = mempool.iter().flat_map(|(_, v)| v).filter(|a| !a.is_elapse()).count();
        let cap = config.cap_factor * non_elapse.max(1);
        let ctx = AdvContext {
            scenario,
            run: &run,
            mempool: &mempool,
            puppets: &puppet_out,
            corrupted: &config.corrupted,
            agreed_delta: agreed,
            epsilon: config.epsilon,
            own_budget: cap.saturating_sub(own),
        };
        let Some(a) = adversary.pick(&ctx) else {
            break Status::Stuck { reason: format!("no action at step {} (t = {t})", run.len()) };
        };
        let from_mempool = mempool.iter().any(|(_, v)| v.contains(&a));
        if let Some(reason) =
            contract_violation(&run, &a, &mempool, agreed, config.epsilon, from_mempool, ctx.own_budget)
        {
            break Status::Rejected { index: run.len(), action: a.to_string(), reason };
        }
        if a.is_elapse() {
            stats.elapses += 1;
            stats.max_gap = stats.max_gap.max(gap);
            gap = 0;
            own = 0;
        } else {
            gap += 1;
            if from_mempool {
                own = 0;
            } else {
                own += 1;
            }
        }
        run.extend(a).expect("checked above");
    };
    stats.steps = run.len();
    stats.max_gap = stats.max_gap.max(gap);
    Ok(RunOutcome {
        run,
        status,
        stats,
        honest: config.honest.clone(),
        corrupted: config.corrupted.clone(),
        start: config.start,
    })
}

/// A restricted action only uses secrets its actor knows.
fn knows(a: &Action, known: &BTreeSet<crate::synth::Secret>) -> bool {
    match a {
        Action::RevealSecret { secret, .. } | Action::ShareSecret { secret, .. } => known.contains(secret),
        _ => true,
    }
}

/// The largest elapse all honest users agree to: every output is empty or
/// an elapse, and the minimum of those elapses.
fn agreed_delta(
    scenario: &Scenario,
    run: &Run,
    mempool: &[(NodeId, Vec<Action>)],
    puppets: &[(NodeId, Vec<Action>)],
) -> Option<Time> {
    let mut min: Option<Time> = None;
    for (_, out) in mempool {
        for a in out {
            match a {
                Action::Elapse { delta } => min = Some(min.map_or(*delta, |m| m.min(*delta))),
                _ => return None,
            }
        }
    }
    if mempool.is_empty() {
        // Nobody honest to ask; follow the strategy grid anyway.
        let puppet = puppets.iter().flat_map(|(_, v)| v).find_map(|a| match a {
            Action::Elapse { delta } => Some(*delta),
            _ => None,
        });
        return Some(puppet.unwrap_or_else(|| next_delta(scenario, run.last_state().time)));
    }
    min.or_else(|| Some(next_delta(scenario, run.last_state().time)))
}

/// Run with a built-in adversary chosen by name.
pub fn simulate(
    scenario: &Scenario,
    config: &RunConfig,
    adversary: &str,
    seed: u64,
) -> Result<RunOutcome, RunnerError> {
    let mut adv = adversary::by_name(adversary, seed).ok_or_else(|| RunnerError::UnknownAdversary(adversary.into()))?;
    run_protocol(scenario, config, adv.as_mut())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceHeader {
    pub specs: Vec<GraphSpec>,
    /// Δ in ticks.
    pub delta: Time,
    pub seed: u64,
    pub adversary: String,
    pub honest: Vec<NodeId>,
    pub corrupted: Vec<NodeId>,
    pub start: Time,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum TraceLine {
    Header(TraceHeader),
    Action(Action),
    Digest(String),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trace {
    pub header: TraceHeader,
    pub actions: Vec<Action>,
    /// Digest of the final state.
    pub digest: String,
}

impl Trace {
    pub fn record(header: TraceHeader, run: &Run) -> Trace {
        Trace { header, actions: run.actions().cloned().collect(), digest: run.last_state().digest() }
    }

    pub fn write_jsonl(&self, mut w: impl Write) -> std::io::Result<()> {
        let mut line = |l: &TraceLine| -> std::io::Result<()> {
            serde_json::to_writer(&mut w, l)?;
            w.write_all(b"\n")
        };
        line(&TraceLine::Header(self.header.clone()))?;
        for a in &self.actions {
            line(&TraceLine::Action(a.clone()))?;
        }
        line(&TraceLine::Digest(self.digest.clone()))
    }

    pub fn to_jsonl(&self) -> String {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("JSON is UTF-8")
    }

    pub fn read_jsonl(r: impl BufRead) -> Result<Trace, RunnerError> {
        let mut header = None;
        let mut actions = Vec::new();
        let mut digest = None;
        for (i, line) in r.lines().enumerate() {
            let line = line.map_err(|e| RunnerError::Trace(e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            let parsed: TraceLine =
                serde_json::from_str(&line).map_err(|e| RunnerError::Trace(format!("line {}: {e}", i + 1)))?;
            match parsed {
                TraceLine::Header(h) if header.is_none() => header = Some(h),
                TraceLine::Header(_) => return Err(RunnerError::Trace(format!("line {}: second header", i + 1))),
                TraceLine::Action(a) => actions.push(a),
                TraceLine::Digest(d) => digest = Some(d),
            }
        }
        let header = header.ok_or_else(|| RunnerError::Trace("missing header".into()))?;
        let digest = digest.ok_or_else(|| RunnerError::Trace("missing digest".into()))?;
        Ok(Trace { header, actions, digest })
    }

    pub fn from_jsonl(s: &str) -> Result<Trace, RunnerError> {
        Trace::read_jsonl(s.as_bytes())
    }

    pub fn scenario(&self) -> Result<Scenario, RunnerError> {
        Ok(Scenario::from_graph_specs(&self.header.specs, self.header.delta)?)
    }
}

/// Rebuild a run from a trace, reporting the first action that does not
/// apply and checking the final digest.
pub fn replay(trace: &Trace) -> Result<(Scenario, Run), RunnerError> {
    let scenario = trace.scenario()?;
    let honest: BTreeSet<NodeId> = trace.header.honest.iter().cloned().collect();
    let init = initial_state(&scenario, scenario.membership(), honest, trace.header.start)?;
    let mut run = Run::new(init);
    for (index, a) in trace.actions.iter().enumerate() {
        run.extend(a.clone()).map_err(|violation| RunnerError::Replay { index, violation })?;
    }
    let actual = run.last_state().digest();
    if actual != trace.digest {
        return Err(RunnerError::Digest { recorded: trace.digest.clone(), actual });
    }
    Ok((scenario, run))
}

/// Replay a trace and wrap it as an outcome for the verifier. The run
/// counts as final when its last time exceeds the scenario horizon.
pub fn outcome_of_trace(trace: &Trace) -> Result<(Scenario, RunOutcome), RunnerError> {
    let (scenario, run) = replay(trace)?;
    let status = if run.last_state().time > scenario.horizon() { Status::Final } else { Status::TargetTime };
    let steps: Vec<&Action> = run.actions().collect();
    let mut stats = RunStats { steps: steps.len(), ..Default::default() };
    let mut gap = 0;
    for a in steps {
        if a.is_elapse() {
            stats.elapses += 1;
            stats.max_gap = stats.max_gap.max(gap);
            gap = 0;
        } else {
            gap += 1;
        }
    }
    stats.max_gap = stats.max_gap.max(gap);
    let outcome = RunOutcome {
        run,
        status,
        stats,
        honest: trace.header.honest.iter().cloned().collect(),
        corrupted: trace.header.corrupted.iter().cloned().collect(),
        start: trace.header.start,
    };
    Ok((scenario, outcome))
}

/// `t0 = start + depth·Δ + 1`: the execution phase begins one unit after a
/// setup window that fits every level.
pub fn default_t0(spec: &GraphSpec, delta: Time, start: Time) -> Result<Time, RunnerError> {
    let d = spec.digraph().map_err(SynthError::from)?;
    let depth = unfold(&d, &spec.leader).map_err(SynthError::from)?.depth() as i64;
    Ok(start + delta * depth + Time::units(1))
}

/// Graph specs from JSON: one object or an array of them. A missing `t0`
/// defaults to [`default_t0`].
pub fn parse_graph_specs(json: &str, delta: Time, start: Time) -> Result<Vec<GraphSpec>, RunnerError> {
    let value: serde_json::Value = serde_json::from_str(json).map_err(|e| RunnerError::Spec(e.to_string()))?;
    let items = match value {
        serde_json::Value::Array(v) => v,
        other => vec![other],
    };
    items
        .into_iter()
        .map(|mut item| {
            let missing_t0 = item.as_object_mut().is_some_and(|o| {
                let missing = !o.contains_key("t0");
                if missing {
                    o.insert("t0".into(), 0.0.into());
                }
                missing
            });
            let mut spec: GraphSpec =
                serde_json::from_value(item).map_err(|e| RunnerError::Spec(e.to_string()))?;
            if missing_t0 {
                spec.t0 = default_t0(&spec, delta, start)?.as_units_f64();
            }
            Ok(spec)
        })
        .collect()
}

/// Scenario for graph specs with the default Δ of 10 units.
pub fn default_scenario(specs: &[GraphSpec]) -> Result<Scenario, RunnerError> {
    Ok(Scenario::from_graph_specs(specs, Time::units(DEFAULT_DELTA_UNITS))?)
}

/// Stable per-user grouping of a run's claims, used in reports.
pub fn claims_by_tree(run: &Run) -> BTreeMap<String, Vec<String>> {
    let mut m: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for a in run.actions() {
        if let Action::Claim { ctlc, .. } = a {
            m.entry(ctlc.tree.to_string()).or_default().push(a.to_string());
        }
    }
    m
}
