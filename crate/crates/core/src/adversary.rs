//! Schedulers that pick the next action of a run.
//!
//! An adversary sees the run, the honest users' current outputs (the
//! mempool) and the outputs the honest strategy would give the corrupted
//! users (their "puppet" outputs, which it may use or ignore). The runner
//! enforces the scheduling contract: only valid actions, honest restricted
//! actions only from the mempool, and time only elapses when every honest
//! user agrees.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::graph::NodeId;
use crate::run::Run;
use crate::semantics::{is_valid, Action, HbeState};
use crate::synth::Scenario;
use crate::time::Time;

/// Everything an adversary may look at when choosing the next action.
pub struct AdvContext<'a> {
    pub scenario: &'a Scenario,
    pub run: &'a Run,
    /// Outputs of the honest users, by user.
    pub mempool: &'a [(NodeId, Vec<Action>)],
    /// Honest-strategy outputs for the corrupted users.
    pub puppets: &'a [(NodeId, Vec<Action>)],
    pub corrupted: &'a BTreeSet<NodeId>,
    /// Largest elapse every honest user agrees to, if they all agree.
    pub agreed_delta: Option<Time>,
    /// Smallest allowed elapse.
    pub epsilon: Time,
    /// How many more non-mempool actions the runner accepts before the next
    /// inclusion of a mempool action or an elapse.
    pub own_budget: usize,
}

impl AdvContext<'_> {
    pub fn state(&self) -> &HbeState {
        self.run.last_state()
    }

    /// Non-elapse mempool actions in user order, without repetitions.
    pub fn honest_actions(&self) -> Vec<Action> {
        dedup(self.mempool.iter().flat_map(|(_, v)| v).filter(|a| !a.is_elapse()))
    }

    /// Valid non-elapse puppet actions, without repetitions.
    pub fn puppet_actions(&self) -> Vec<Action> {
        if self.own_budget == 0 {
            return Vec::new();
        }
        let state = self.state();
        dedup(self.puppets.iter().flat_map(|(_, v)| v).filter(|a| !a.is_elapse() && is_valid(state, a)))
    }

    pub fn elapse(&self) -> Option<Action> {
        self.agreed_delta.filter(|d| *d >= self.epsilon).map(|delta| Action::Elapse { delta })
    }

    /// Secrets the corrupted users know between them.
    pub fn knowledge(&self) -> BTreeSet<crate::synth::Secret> {
        self.corrupted.iter().flat_map(|c| self.state().knowledge(c)).collect()
    }
}

fn dedup<'a>(it: impl Iterator<Item = &'a Action>) -> Vec<Action> {
    let mut seen = BTreeSet::new();
    it.filter(|a| seen.insert((*a).clone())).cloned().collect()
}

fn is_setup(a: &Action) -> bool {
    matches!(
        a,
        Action::AdvBatch { .. }
            | Action::CommitBatch { .. }
            | Action::AdvCtlc { .. }
            | Action::AuthCtlc { .. }
            | Action::EnableCtlc { .. }
            | Action::EnableSubC { .. }
    )
}

pub trait Adversary: Send {
    fn name(&self) -> &'static str;

    /// The next action, or `None` if the adversary has nothing it may do.
    fn pick(&mut self, ctx: &AdvContext<'_>) -> Option<Action>;
}

pub const BUILTIN: &[&str] = &["compliant", "reorder", "withhold", "starve", "silent"];

/// Built-in adversary by name, seeded.
pub fn by_name(name: &str, seed: u64) -> Option<Box<dyn Adversary>> {
    let rng = ChaCha8Rng::seed_from_u64(seed);
    Some(match name {
        "compliant" => Box::new(Compliant),
        "reorder" => Box::new(Reorder { rng }),
        "withhold" => Box::new(Withhold { rng }),
        "starve" => Box::new(Starve),
        "silent" => Box::new(Silent),
        _ => return None,
    })
}

/// The all-honest scheduler: mempool in order, then puppets, then time.
pub struct Compliant;

impl Adversary for Compliant {
    fn name(&self) -> &'static str {
        "compliant"
    }

    fn pick(&mut self, ctx: &AdvContext<'_>) -> Option<Action> {
        ctx.honest_actions()
            .into_iter()
            .next()
            .or_else(|| ctx.puppet_actions().into_iter().next())
            .or_else(|| ctx.elapse())
    }
}

/// Random order; corrupted users sometimes hold back; time sometimes moves
/// by less than agreed.
pub struct Reorder {
    rng: ChaCha8Rng,
}

impl Adversary for Reorder {
    fn name(&self) -> &'static str {
        "reorder"
    }

    fn pick(&mut self, ctx: &AdvContext<'_>) -> Option<Action> {
        let mut cands = ctx.honest_actions();
        let puppets = ctx.puppet_actions();
        let with_puppets = self.rng.gen_bool(0.5);
        if with_puppets {
            cands.extend(puppets.iter().cloned());
        }
        if let Some(a) = cands.choose(&mut self.rng) {
            return Some(a.clone());
        }
        if !puppets.is_empty() && self.rng.gen_bool(0.5) {
            return puppets.choose(&mut self.rng).cloned();
        }
        let agreed = ctx.agreed_delta.filter(|d| *d >= ctx.epsilon)?;
        // Partial elapses stay on multiples of ε, as every grid point is,
        // so the remaining distance never drops below ε.
        let steps = agreed.0 / ctx.epsilon.0;
        let delta = if steps > 1 && self.rng.gen_bool(0.2) {
            ctx.epsilon * self.rng.gen_range(1..=steps)
        } else {
            agreed
        };
        Some(Action::Elapse { delta })
    }
}

/// Corrupted users help set up, then never pay: they skip every execution
/// step of their own and instead grab whatever they can claim as early as
/// possible.
pub struct Withhold {
    rng: ChaCha8Rng,
}

impl Adversary for Withhold {
    fn name(&self) -> &'static str {
        "withhold"
    }

    fn pick(&mut self, ctx: &AdvContext<'_>) -> Option<Action> {
        if ctx.own_budget > 0 {
            if let Some(a) = greedy_claim_step(ctx) {
                return Some(a);
            }
            if let Some(a) = ctx.puppet_actions().into_iter().find(is_setup) {
                return Some(a);
            }
        }
        let honest = ctx.honest_actions();
        if let Some(a) = honest.choose(&mut self.rng) {
            return Some(a.clone());
        }
        ctx.elapse()
    }
}

/// Next step towards claiming some contract to a corrupted receiver, using
/// only secrets the corrupted users own or that are public in a tam one of
/// them can read.
pub fn greedy_claim_step(ctx: &AdvContext<'_>) -> Option<Action> {
    let s = ctx.state();
    for b in s.batches.values() {
        for c in &b.ctlcs {
            if !ctx.corrupted.contains(c.receiver()) {
                continue;
            }
            let Some(env) = s.tams.get(c.tam()) else { continue };
            if let Some(&level) = env.claimed.get(&c.id) {
                return Some(Action::Execute { ctlc: c.id.clone(), level });
            }
            let (Some(adv), Some(en)) = (env.advertised.get(&c.id), env.enabled.get(&c.id)) else { continue };
            let Some(&level) = adv.first() else { continue };
            if !en.contains(&level) || !env.reserved.contains_key(&c.fund.id) {
                continue;
            }
            let sc = c.subcontract(level).expect("advertised level exists");
            'sets: for set in &sc.condition {
                let mut first_step = None;
                for x in set.iter().filter(|x| !env.revealed.contains(x)) {
                    let step = if ctx.corrupted.contains(&x.owner) && env.committed.contains(x) {
                        Action::RevealSecret { user: x.owner.clone(), tam: c.tam().clone(), secret: x.clone() }
                    } else {
                        let via = s.tams.iter().filter(|(_, e)| e.revealed.contains(x)).find_map(|(t, _)| {
                            ctx.corrupted.iter().find(|m| s.in_conf(t, m) && s.in_conf(c.tam(), m))
                        });
                        match via {
                            Some(m) => {
                                Action::ShareSecret { user: m.clone(), tam: c.tam().clone(), secret: x.clone() }
                            }
                            None => continue 'sets,
                        }
                    };
                    first_step.get_or_insert(step);
                }
                let a = first_step.unwrap_or(Action::Claim { ctlc: c.id.clone(), level, secrets: set.clone() });
                if is_valid(s, &a) {
                    return Some(a);
                }
            }
        }
    }
    None
}

/// Corrupted users act first at every turn; honest actions go in only when
/// nothing else is left, newest first.
pub struct Starve;

impl Adversary for Starve {
    fn name(&self) -> &'static str {
        "starve"
    }

    fn pick(&mut self, ctx: &AdvContext<'_>) -> Option<Action> {
        ctx.puppet_actions()
            .into_iter()
            .next()
            .or_else(|| ctx.honest_actions().pop())
            .or_else(|| ctx.elapse())
    }
}

/// Corrupted users take part in the setup and then go silent.
pub struct Silent;

impl Adversary for Silent {
    fn name(&self) -> &'static str {
        "silent"
    }

    fn pick(&mut self, ctx: &AdvContext<'_>) -> Option<Action> {
        ctx.honest_actions()
            .into_iter()
            .next()
            .or_else(|| ctx.puppet_actions().into_iter().find(is_setup))
            .or_else(|| ctx.elapse())
    }
}
