//! Small-step semantics of CTLCs over a set of trusted asset managers (tams).
//!
//! The state is a tam-indexed family of local environments plus the global
//! parts (batches, membership, clock). [`step`] applies one labelled
//! transition; every failing premise is reported with its own
//! [`Code`], checked in the rule's order so the first failing premise names
//! the violation deterministically.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::sync::Arc as Shared;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::graph::NodeId;
use crate::ids::{FundId, TamId, TreeId};
use crate::synth::{Batch, Ctlc, CtlcId, Scenario, Secret, Subcontract};
use crate::time::Time;

/// Serialize a map with non-string keys as a list of pairs so that state
/// snapshots stay valid JSON with a stable order.
mod pairs {
    use std::collections::BTreeMap;

    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<K: Serialize, V: Serialize, S: Serializer>(
        m: &BTreeMap<K, V>,
        s: S,
    ) -> Result<S::Ok, S::Error> {
        s.collect_seq(m.iter())
    }

    pub fn deserialize<'de, K, V, D>(d: D) -> Result<BTreeMap<K, V>, D::Error>
    where
        K: Deserialize<'de> + Ord,
        V: Deserialize<'de>,
        D: Deserializer<'de>,
    {
        Ok(Vec::<(K, V)>::deserialize(d)?.into_iter().collect())
    }
}

/// Local environment of one tam.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TamEnv {
    pub committed: BTreeSet<Secret>,
    pub revealed: BTreeSet<Secret>,
    /// Advertised contracts with the levels of their remaining subcontracts.
    #[serde(with = "pairs")]
    pub advertised: BTreeMap<CtlcId, BTreeSet<u32>>,
    pub authorizations: BTreeSet<(NodeId, CtlcId)>,
    /// Enabled contracts with the levels of their enabled subcontracts.
    #[serde(with = "pairs")]
    pub enabled: BTreeMap<CtlcId, BTreeSet<u32>>,
    /// Claimed contracts and the one subcontract that was claimed.
    #[serde(with = "pairs")]
    pub claimed: BTreeMap<CtlcId, u32>,
    /// Available funds and their owners.
    pub available: BTreeMap<FundId, NodeId>,
    /// Funds locked by an enabled contract, with their (current) owners.
    pub reserved: BTreeMap<FundId, NodeId>,
}

/// The whole ecosystem.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct HbeState {
    pub tams: BTreeMap<TamId, TamEnv>,
    /// Who participates in each tam; fixed for the whole run.
    pub membership: BTreeMap<TamId, BTreeSet<NodeId>>,
    pub honest: BTreeSet<NodeId>,
    /// Advertised batches (global), keyed by tree.
    pub batches: BTreeMap<TreeId, Shared<Batch>>,
    pub time: Time,
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Action {
    AdvBatch { batch: Shared<Batch> },
    CommitBatch { user: NodeId, tree: TreeId },
    AdvCtlc { tam: TamId, ctlc: CtlcId },
    AuthCtlc { user: NodeId, ctlc: CtlcId },
    EnableCtlc { tam: TamId, ctlc: CtlcId },
    EnableSubC { user: NodeId, ctlc: CtlcId, level: u32 },
    RevealSecret { user: NodeId, tam: TamId, secret: Secret },
    ShareSecret { user: NodeId, tam: TamId, secret: Secret },
    Timeout { ctlc: CtlcId, level: u32 },
    Refund { ctlc: CtlcId },
    Claim { ctlc: CtlcId, level: u32, secrets: BTreeSet<Secret> },
    Execute { ctlc: CtlcId, level: u32 },
    Elapse { delta: Time },
}

impl Action {
    pub fn rule(&self) -> Rule {
        match self {
            Action::AdvBatch { .. } => Rule::AdvBatch,
            Action::CommitBatch { .. } => Rule::CommitBatch,
            Action::AdvCtlc { .. } => Rule::AdvCtlc,
            Action::AuthCtlc { .. } => Rule::AuthCtlc,
            Action::EnableCtlc { .. } => Rule::EnableCtlc,
            Action::EnableSubC { .. } => Rule::EnableSubC,
            Action::RevealSecret { .. } => Rule::RevealSecret,
            Action::ShareSecret { .. } => Rule::ShareSecret,
            Action::Timeout { .. } => Rule::Timeout,
            Action::Refund { .. } => Rule::Refund,
            Action::Claim { .. } => Rule::Claim,
            Action::Execute { .. } => Rule::Execute,
            Action::Elapse { .. } => Rule::Elapse,
        }
    }

    /// The acting user of a user-restricted action.
    pub fn actor(&self) -> Option<&NodeId> {
        match self {
            Action::CommitBatch { user, .. }
            | Action::AuthCtlc { user, .. }
            | Action::EnableSubC { user, .. }
            | Action::RevealSecret { user, .. }
            | Action::ShareSecret { user, .. } => Some(user),
            _ => None,
        }
    }

    pub fn is_restricted(&self) -> bool {
        self.actor().is_some()
    }

    pub fn is_elapse(&self) -> bool {
        matches!(self, Action::Elapse { .. })
    }

    /// The contract an action is about, if any.
    pub fn ctlc(&self) -> Option<&CtlcId> {
        match self {
            Action::AdvCtlc { ctlc, .. }
            | Action::AuthCtlc { ctlc, .. }
            | Action::EnableCtlc { ctlc, .. }
            | Action::EnableSubC { ctlc, .. }
            | Action::Timeout { ctlc, .. }
            | Action::Refund { ctlc }
            | Action::Claim { ctlc, .. }
            | Action::Execute { ctlc, .. } => Some(ctlc),
            _ => None,
        }
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Action::AdvBatch { batch } => write!(f, "advBatch {}", batch.tree),
            Action::CommitBatch { user, tree } => write!(f, "{user}: commitBatch {tree}"),
            Action::AdvCtlc { tam, ctlc } => write!(f, "advCTLC@{tam} {ctlc}"),
            Action::AuthCtlc { user, ctlc } => write!(f, "{user}: authCTLC {ctlc}"),
            Action::EnableCtlc { tam, ctlc } => write!(f, "enableCTLC@{tam} {ctlc}"),
            Action::EnableSubC { user, ctlc, level } => write!(f, "{user}: enableSubC {ctlc}/{level}"),
            Action::RevealSecret { user, tam, secret } => write!(f, "{user}: reveal@{tam} {secret}"),
            Action::ShareSecret { user, tam, secret } => write!(f, "{user}: share@{tam} {secret}"),
            Action::Timeout { ctlc, level } => write!(f, "timeout {ctlc}/{level}"),
            Action::Refund { ctlc } => write!(f, "refund {ctlc}"),
            Action::Claim { ctlc, level, secrets } => {
                write!(f, "claim {ctlc}/{level} {{")?;
                for (i, s) in secrets.iter().enumerate() {
                    if i > 0 {
                        write!(f, ",")?;
                    }
                    write!(f, "{s}")?;
                }
                write!(f, "}}")
            }
            Action::Execute { ctlc, level } => write!(f, "execute {ctlc}/{level}"),
            Action::Elapse { delta } => write!(f, "elapse {delta}"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Rule {
    AdvBatch,
    CommitBatch,
    AdvCtlc,
    AuthCtlc,
    EnableCtlc,
    EnableSubC,
    RevealSecret,
    ShareSecret,
    Timeout,
    Refund,
    Claim,
    Execute,
    Elapse,
}

macro_rules! codes {
    ($($variant:ident => $s:literal,)*) => {
        /// One code per rule premise.
        #[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
        pub enum Code { $($variant,)* }

        impl Code {
            pub const ALL: &'static [Code] = &[$(Code::$variant,)*];

            pub fn as_str(self) -> &'static str {
                match self { $(Code::$variant => $s,)* }
            }
        }
    };
}

codes! {
    MalformedBatch => "malformed-batch",
    NoHonestUser => "no-honest-user",
    TimelocksNotOrdered => "timelocks-not-ordered",
    DuplicateAdvertisement => "duplicate-advertisement",
    FundUnavailable => "fund-unavailable",
    UsersNotInTam => "users-not-in-tam",
    SecretReused => "secret-reused",
    BatchNotAdvertised => "batch-not-advertised",
    UserNotInBatch => "user-not-in-batch",
    SecretsAlreadyCommitted => "secrets-already-committed",
    UnknownTam => "unknown-tam",
    NotInBatch => "not-in-batch",
    AlreadyAdvertised => "already-advertised",
    SecretsNotCommitted => "secrets-not-committed",
    NotAdvertised => "not-advertised",
    AlreadyAuthorized => "already-authorized",
    NotAParty => "not-a-party",
    ReceiverFirst => "receiver-must-authorize-first",
    AlreadyEnabled => "already-enabled",
    MissingAuthorization => "missing-authorization",
    NotEnabled => "not-enabled",
    SubcontractNotPending => "subcontract-not-pending",
    NotSender => "not-sender",
    SecretNotCommitted => "secret-not-committed",
    NotSecretOwner => "not-secret-owner",
    OwnerNotInTam => "owner-not-in-tam",
    AlreadyRevealed => "already-revealed",
    SecretNotRevealedElsewhere => "secret-not-revealed-elsewhere",
    UserNotInTam => "user-not-in-tam",
    UserNotInSourceTam => "user-not-in-source-tam",
    LastSubcontract => "last-subcontract",
    UnknownSubcontract => "unknown-subcontract",
    NotTopLevel => "not-top-level",
    TimelockNotReached => "timelock-not-reached",
    NotLastSubcontract => "not-last-subcontract",
    SubcontractNotEnabled => "subcontract-not-enabled",
    NotACondition => "not-a-condition",
    SecretsNotRevealed => "secrets-not-revealed",
    FundNotReserved => "fund-not-reserved",
    NotClaimed => "not-claimed",
    WrongSubcontract => "wrong-subcontract",
    NonPositiveDelay => "non-positive-delay",
    TimeOverflow => "time-overflow",
}

impl fmt::Display for Code {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl Serialize for Code {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Error, Serialize)]
#[error("{rule:?}: {code} ({detail})")]
pub struct Violation {
    pub rule: Rule,
    pub code: Code,
    pub detail: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum SemanticsError {
    #[error("fund {0} used by more than one contract")]
    FundCollision(FundId),
    #[error("contract {ctlc} lives in tam {tam} which has no members")]
    UnknownTam { ctlc: CtlcId, tam: TamId },
}

/// Problems with funding an initial state for a set of batches.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub enum LiquidityIssue {
    FundMissing { ctlc: String, fund: FundId },
    WrongOwner { ctlc: String, fund: FundId },
    UsersNotInTam { ctlc: String, tam: TamId },
}

struct Check<'a> {
    rule: Rule,
    state: &'a HbeState,
}

impl Check<'_> {
    fn fail<T>(&self, code: Code, detail: impl Into<String>) -> Result<T, Violation> {
        Err(Violation { rule: self.rule, code, detail: detail.into() })
    }

    fn ensure(&self, cond: bool, code: Code, detail: impl FnOnce() -> String) -> Result<(), Violation> {
        if cond {
            Ok(())
        } else {
            self.fail(code, detail())
        }
    }

    fn tam(&self, tam: &TamId) -> Result<&TamEnv, Violation> {
        match self.state.tams.get(tam) {
            Some(env) => Ok(env),
            None => self.fail(Code::UnknownTam, tam.to_string()),
        }
    }

    /// Look up an advertised contract: its definition, its tam's env and its
    /// remaining subcontract levels.
    #[allow(clippy::type_complexity)]
    fn advertised(&self, id: &CtlcId) -> Result<(&Ctlc, &TamEnv, &BTreeSet<u32>), Violation> {
        let Some(c) = self.state.ctlc(id) else {
            return self.fail(Code::NotAdvertised, format!("{id} is in no advertised batch"));
        };
        let env = self.tam(c.tam())?;
        match env.advertised.get(id) {
            Some(levels) => Ok((c, env, levels)),
            None => self.fail(Code::NotAdvertised, id.to_string()),
        }
    }
}

impl HbeState {
    pub fn ctlc(&self, id: &CtlcId) -> Option<&Ctlc> {
        self.batches.get(&id.tree).and_then(|b| b.get(id))
    }

    pub fn conf(&self, tam: &TamId) -> Option<&BTreeSet<NodeId>> {
        self.membership.get(tam)
    }

    pub fn in_conf(&self, tam: &TamId, user: &NodeId) -> bool {
        self.membership.get(tam).is_some_and(|m| m.contains(user))
    }

    /// The env of the tam holding `id`'s fund.
    pub fn env_of(&self, id: &CtlcId) -> Option<&TamEnv> {
        self.ctlc(id).and_then(|c| self.tams.get(c.tam()))
    }

    pub fn is_advertised(&self, id: &CtlcId) -> bool {
        self.env_of(id).is_some_and(|e| e.advertised.contains_key(id))
    }

    pub fn is_enabled(&self, id: &CtlcId) -> bool {
        self.env_of(id).is_some_and(|e| e.enabled.contains_key(id))
    }

    pub fn is_sub_enabled(&self, id: &CtlcId, level: u32) -> bool {
        self.env_of(id).and_then(|e| e.enabled.get(id)).is_some_and(|l| l.contains(&level))
    }

    pub fn is_claimed(&self, id: &CtlcId) -> bool {
        self.env_of(id).is_some_and(|e| e.claimed.contains_key(id))
    }

    pub fn is_revealed(&self, tam: &TamId, s: &Secret) -> bool {
        self.tams.get(tam).is_some_and(|e| e.revealed.contains(s))
    }

    /// Tams `user` participates in.
    pub fn tams_of<'a>(&'a self, user: &'a NodeId) -> impl Iterator<Item = &'a TamId> + 'a {
        self.membership.iter().filter(move |(_, m)| m.contains(user)).map(|(t, _)| t)
    }

    /// Secrets `user` knows: the ones it owns in advertised batches and
    /// everything revealed in a tam it belongs to.
    pub fn knowledge(&self, user: &NodeId) -> BTreeSet<Secret> {
        let mut k: BTreeSet<Secret> = self.batches.values().flat_map(|b| b.secrets_of(user)).collect();
        for t in self.tams_of(user) {
            k.extend(self.tams[t].revealed.iter().cloned());
        }
        k
    }

    /// Every fund id along with the tam that holds it.
    pub fn fund_ids(&self) -> BTreeMap<FundId, TamId> {
        let mut m = BTreeMap::new();
        for (t, env) in &self.tams {
            for f in env.available.keys().chain(env.reserved.keys()) {
                m.insert(f.clone(), t.clone());
            }
        }
        m
    }

    /// Owner of a fund, wherever it is.
    pub fn owner_of(&self, fund: &FundId) -> Option<&NodeId> {
        self.tams.values().find_map(|e| e.available.get(fund).or_else(|| e.reserved.get(fund)))
    }

    /// SHA-256 of the state's canonical JSON.
    pub fn digest(&self) -> String {
        let json = serde_json::to_vec(self).expect("state serializes");
        hex::encode(Sha256::digest(&json))
    }

    /// Check the structural invariants of a reachable state.
    pub fn check_invariants(&self) -> Result<(), String> {
        let mut seen = BTreeSet::new();
        for (t, env) in &self.tams {
            for f in env.available.keys().chain(env.reserved.keys()) {
                if !seen.insert(f.clone()) {
                    return Err(format!("fund {f} held twice (second time in {t})"));
                }
            }
            for (id, levels) in &env.enabled {
                let Some(adv) = env.advertised.get(id) else {
                    return Err(format!("{id} enabled but not advertised in {t}"));
                };
                if !levels.is_subset(adv) {
                    return Err(format!("{id} has enabled subcontracts that are not advertised"));
                }
                if levels.is_empty() {
                    return Err(format!("{id} enabled with no subcontract"));
                }
            }
        }
        Ok(())
    }
}

/// Mint the funds of every contract in `scenario` in its tam, owned by the
/// sender. All other components start empty.
pub fn initial_state(
    scenario: &Scenario,
    membership: BTreeMap<TamId, BTreeSet<NodeId>>,
    honest: BTreeSet<NodeId>,
    start: Time,
) -> Result<HbeState, SemanticsError> {
    let mut tams: BTreeMap<TamId, TamEnv> = membership.keys().map(|t| (t.clone(), TamEnv::default())).collect();
    let mut minted = BTreeSet::new();
    for tree in &scenario.trees {
        for c in &tree.batch.ctlcs {
            if !minted.insert(c.fund.id.clone()) {
                return Err(SemanticsError::FundCollision(c.fund.id.clone()));
            }
            let Some(env) = tams.get_mut(c.tam()) else {
                return Err(SemanticsError::UnknownTam { ctlc: c.id.clone(), tam: c.tam().clone() });
            };
            env.available.insert(c.fund.id.clone(), c.sender().clone());
        }
    }
    Ok(HbeState { tams, membership, honest, batches: BTreeMap::new(), time: start })
}

/// Whether every contract of `batches` has its fund available in its tam,
/// owned by its sender, in a tam both its users belong to.
pub fn check_liquidity<'a>(s: &HbeState, batches: impl IntoIterator<Item = &'a Batch>) -> Vec<LiquidityIssue> {
    let mut out = Vec::new();
    for b in batches {
        for c in &b.ctlcs {
            match s.tams.get(c.tam()).and_then(|e| e.available.get(&c.fund.id)) {
                None => out.push(LiquidityIssue::FundMissing { ctlc: c.id.to_string(), fund: c.fund.id.clone() }),
                Some(o) if o != c.sender() => {
                    out.push(LiquidityIssue::WrongOwner { ctlc: c.id.to_string(), fund: c.fund.id.clone() })
                }
                Some(_) => {}
            }
            if !(s.in_conf(c.tam(), c.sender()) && s.in_conf(c.tam(), c.receiver())) {
                out.push(LiquidityIssue::UsersNotInTam { ctlc: c.id.to_string(), tam: c.tam().clone() });
            }
        }
    }
    out
}

/// Static well-formedness of a batch, independent of any state except for
/// the honest set.
fn check_well_formed(ck: &Check<'_>, b: &Batch) -> Result<(), Violation> {
    let sorted = b.ctlcs.windows(2).all(|w| w[0].id < w[1].id);
    ck.ensure(sorted, Code::MalformedBatch, || "contract ids not unique".into())?;
    for c in &b.ctlcs {
        ck.ensure(c.id.tree == b.tree, Code::MalformedBatch, || format!("{} belongs to another tree", c.id))?;
        ck.ensure(!c.subcontracts.is_empty(), Code::MalformedBatch, || format!("{} has no subcontracts", c.id))?;
        ck.ensure(&c.fund.owner == c.sender(), Code::MalformedBatch, || {
            format!("{} is funded by {}, not its sender", c.id, c.fund.owner)
        })?;
        ck.ensure(c.id.sender != c.id.receiver, Code::MalformedBatch, || format!("{} is a loop", c.id))?;
        let levels_ok = c.subcontracts.windows(2).all(|w| w[0].level < w[1].level);
        ck.ensure(levels_ok, Code::MalformedBatch, || format!("{} repeats a level", c.id))?;
        ck.ensure(c.subcontracts.iter().all(|s| !s.condition.is_empty()), Code::MalformedBatch, || {
            format!("{} has a subcontract without condition", c.id)
        })?;
    }
    ck.ensure(b.users().iter().any(|u| ck.state.honest.contains(u)), Code::NoHonestUser, || b.tree.to_string())?;
    for c in &b.ctlcs {
        let ordered = c.subcontracts.windows(2).all(|w| w[0].timelock <= w[1].timelock);
        ck.ensure(ordered, Code::TimelocksNotOrdered, || c.id.to_string())?;
    }
    Ok(())
}

fn sub(c: &Ctlc, level: u32) -> Option<&Subcontract> {
    c.subcontract(level)
}

/// Check every premise of `a` in `s`.
pub fn check(s: &HbeState, a: &Action) -> Result<(), Violation> {
    let ck = Check { rule: a.rule(), state: s };
    match a {
        Action::AdvBatch { batch } => {
            check_well_formed(&ck, batch)?;
            ck.ensure(!s.batches.contains_key(&batch.tree), Code::DuplicateAdvertisement, || batch.tree.to_string())?;
            for c in &batch.ctlcs {
                let env = s.tams.get(c.tam());
                let avail = env.and_then(|e| e.available.get(&c.fund.id)) == Some(c.sender());
                ck.ensure(avail, Code::FundUnavailable, || format!("{} in {}", c.fund.id, c.tam()))?;
                let members = s.in_conf(c.tam(), c.sender()) && s.in_conf(c.tam(), c.receiver());
                ck.ensure(members, Code::UsersNotInTam, || format!("{} in {}", c.id, c.tam()))?;
            }
            for sec in batch.secrets() {
                let used = s.tams.values().any(|e| e.committed.contains(&sec) || e.revealed.contains(&sec));
                ck.ensure(!used, Code::SecretReused, || sec.to_string())?;
            }
            Ok(())
        }
        Action::CommitBatch { user, tree } => {
            let Some(b) = s.batches.get(tree) else {
                return ck.fail(Code::BatchNotAdvertised, tree.to_string());
            };
            ck.ensure(b.users().contains(user), Code::UserNotInBatch, || format!("{user} in {tree}"))?;
            let mine = b.secrets_of(user);
            for env in s.tams.values() {
                let clash = mine.iter().find(|x| env.committed.contains(x) || env.revealed.contains(x));
                if let Some(x) = clash {
                    return ck.fail(Code::SecretsAlreadyCommitted, x.to_string());
                }
            }
            Ok(())
        }
        Action::AdvCtlc { tam, ctlc } => {
            let env = ck.tam(tam)?;
            let Some(c) = s.ctlc(ctlc) else {
                return ck.fail(Code::NotInBatch, ctlc.to_string());
            };
            ck.ensure(!env.advertised.contains_key(ctlc), Code::AlreadyAdvertised, || ctlc.to_string())?;
            if let Some(x) = c.secrets().find(|x| !env.committed.contains(x)) {
                return ck.fail(Code::SecretsNotCommitted, x.to_string());
            }
            ck.ensure(env.available.get(&c.fund.id) == Some(c.sender()), Code::FundUnavailable, || {
                format!("{} in {tam}", c.fund.id)
            })?;
            ck.ensure(s.honest.contains(c.sender()) || s.honest.contains(c.receiver()), Code::NoHonestUser, || {
                ctlc.to_string()
            })?;
            ck.ensure(s.in_conf(tam, c.sender()) && s.in_conf(tam, c.receiver()), Code::UsersNotInTam, || {
                format!("{ctlc} in {tam}")
            })?;
            Ok(())
        }
        Action::AuthCtlc { user, ctlc } => {
            let (c, env, _) = ck.advertised(ctlc)?;
            let mine = (user.clone(), ctlc.clone());
            ck.ensure(!env.authorizations.contains(&mine), Code::AlreadyAuthorized, || format!("{user} on {ctlc}"))?;
            let receiver_done = env.authorizations.contains(&(c.receiver().clone(), ctlc.clone()));
            if user != c.receiver() {
                ck.ensure(user == c.sender(), Code::NotAParty, || format!("{user} on {ctlc}"))?;
                ck.ensure(receiver_done, Code::ReceiverFirst, || ctlc.to_string())?;
            }
            ck.ensure(env.available.contains_key(&c.fund.id), Code::FundUnavailable, || c.fund.id.to_string())?;
            Ok(())
        }
        Action::EnableCtlc { tam, ctlc } => {
            let env = ck.tam(tam)?;
            let (c, _, _) = ck.advertised(ctlc)?;
            ck.ensure(c.tam() == tam, Code::NotAdvertised, || format!("{ctlc} not in {tam}"))?;
            ck.ensure(!env.enabled.contains_key(ctlc), Code::AlreadyEnabled, || ctlc.to_string())?;
            for who in [c.sender(), c.receiver()] {
                ck.ensure(env.authorizations.contains(&(who.clone(), ctlc.clone())), Code::MissingAuthorization, || {
                    format!("{who} on {ctlc}")
                })?;
            }
            ck.ensure(env.available.contains_key(&c.fund.id), Code::FundUnavailable, || c.fund.id.to_string())?;
            Ok(())
        }
        Action::EnableSubC { user, ctlc, level } => {
            let (c, env, adv) = ck.advertised(ctlc)?;
            let Some(en) = env.enabled.get(ctlc) else {
                return ck.fail(Code::NotEnabled, ctlc.to_string());
            };
            ck.ensure(adv.contains(level) && !en.contains(level), Code::SubcontractNotPending, || {
                format!("{ctlc}/{level}")
            })?;
            ck.ensure(user == c.sender(), Code::NotSender, || format!("{user} on {ctlc}"))?;
            Ok(())
        }
        Action::RevealSecret { user, tam, secret } => {
            let env = ck.tam(tam)?;
            ck.ensure(env.committed.contains(secret), Code::SecretNotCommitted, || format!("{secret} in {tam}"))?;
            ck.ensure(!env.revealed.contains(secret), Code::AlreadyRevealed, || format!("{secret} in {tam}"))?;
            ck.ensure(user == &secret.owner, Code::NotSecretOwner, || format!("{user} reveals {secret}"))?;
            ck.ensure(s.in_conf(tam, user), Code::OwnerNotInTam, || format!("{user} in {tam}"))?;
            Ok(())
        }
        Action::ShareSecret { user, tam, secret } => {
            let env = ck.tam(tam)?;
            let sources = || s.tams.iter().filter(|(t, e)| *t != tam && e.revealed.contains(secret));
            ck.ensure(sources().next().is_some(), Code::SecretNotRevealedElsewhere, || secret.to_string())?;
            ck.ensure(!env.revealed.contains(secret), Code::AlreadyRevealed, || format!("{secret} in {tam}"))?;
            ck.ensure(s.in_conf(tam, user), Code::UserNotInTam, || format!("{user} in {tam}"))?;
            ck.ensure(sources().any(|(t, _)| s.in_conf(t, user)), Code::UserNotInSourceTam, || {
                format!("{user} is in no tam where {secret} is revealed")
            })?;
            Ok(())
        }
        Action::Timeout { ctlc, level } => {
            let (c, env, adv) = ck.advertised(ctlc)?;
            ck.ensure(env.enabled.contains_key(ctlc), Code::NotEnabled, || ctlc.to_string())?;
            ck.ensure(adv.len() > 1, Code::LastSubcontract, || ctlc.to_string())?;
            ck.ensure(adv.contains(level), Code::UnknownSubcontract, || format!("{ctlc}/{level}"))?;
            ck.ensure(adv.first() == Some(level), Code::NotTopLevel, || format!("{ctlc}/{level}"))?;
            let tl = sub(c, *level).map(|x| x.timelock).unwrap_or(Time(i64::MAX));
            ck.ensure(tl <= s.time, Code::TimelockNotReached, || format!("{tl:?} > {:?}", s.time))?;
            Ok(())
        }
        Action::Refund { ctlc } => {
            let (c, env, adv) = ck.advertised(ctlc)?;
            ck.ensure(env.enabled.contains_key(ctlc), Code::NotEnabled, || ctlc.to_string())?;
            ck.ensure(adv.len() == 1, Code::NotLastSubcontract, || ctlc.to_string())?;
            let level = *adv.first().expect("one subcontract left");
            let tl = sub(c, level).map(|x| x.timelock).unwrap_or(Time(i64::MAX));
            ck.ensure(s.time >= tl, Code::TimelockNotReached, || format!("{tl:?} > {:?}", s.time))?;
            Ok(())
        }
        Action::Claim { ctlc, level, secrets } => {
            let (c, env, adv) = ck.advertised(ctlc)?;
            let Some(en) = env.enabled.get(ctlc) else {
                return ck.fail(Code::NotEnabled, ctlc.to_string());
            };
            ck.ensure(en.contains(level), Code::SubcontractNotEnabled, || format!("{ctlc}/{level}"))?;
            let Some(sc) = sub(c, *level) else {
                return ck.fail(Code::SubcontractNotEnabled, format!("{ctlc}/{level}"));
            };
            ck.ensure(sc.condition.contains(secrets), Code::NotACondition, || format!("{ctlc}/{level}"))?;
            if let Some(x) = secrets.iter().find(|x| !env.revealed.contains(x)) {
                return ck.fail(Code::SecretsNotRevealed, x.to_string());
            }
            ck.ensure(env.reserved.contains_key(&c.fund.id), Code::FundNotReserved, || c.fund.id.to_string())?;
            ck.ensure(adv.first() == Some(level), Code::NotTopLevel, || format!("{ctlc}/{level}"))?;
            Ok(())
        }
        Action::Execute { ctlc, level } => {
            let Some(c) = s.ctlc(ctlc) else {
                return ck.fail(Code::NotClaimed, ctlc.to_string());
            };
            let env = ck.tam(c.tam())?;
            let Some(cl) = env.claimed.get(ctlc) else {
                return ck.fail(Code::NotClaimed, ctlc.to_string());
            };
            ck.ensure(cl == level, Code::WrongSubcontract, || format!("{ctlc} claimed at {cl}, not {level}"))?;
            ck.ensure(env.reserved.contains_key(&c.fund.id), Code::FundNotReserved, || c.fund.id.to_string())?;
            Ok(())
        }
        Action::Elapse { delta } => {
            ck.ensure(*delta > Time::ZERO, Code::NonPositiveDelay, || format!("{delta:?}"))?;
            ck.ensure(s.time.checked_add(*delta).is_some(), Code::TimeOverflow, || format!("{delta:?}"))?;
            Ok(())
        }
    }
}

pub fn is_valid(s: &HbeState, a: &Action) -> bool {
    check(s, a).is_ok()
}

/// Apply `a` to `s` in place, or leave `s` untouched and report the first
/// failing premise.
pub fn apply(s: &mut HbeState, a: &Action) -> Result<(), Violation> {
    check(s, a)?;
    let tam_of = |s: &HbeState, id: &CtlcId| s.ctlc(id).expect("checked").tam().clone();
    let fund_of = |s: &HbeState, id: &CtlcId| s.ctlc(id).expect("checked").fund.id.clone();
    match a {
        Action::AdvBatch { batch } => {
            s.batches.insert(batch.tree.clone(), batch.clone());
        }
        Action::CommitBatch { user, tree } => {
            let mine = s.batches[tree].secrets_of(user);
            for env in s.tams.values_mut() {
                env.committed.extend(mine.iter().cloned());
            }
        }
        Action::AdvCtlc { tam, ctlc } => {
            let levels = s.ctlc(ctlc).expect("checked").levels().collect();
            s.tams.get_mut(tam).expect("checked").advertised.insert(ctlc.clone(), levels);
        }
        Action::AuthCtlc { user, ctlc } => {
            let t = tam_of(s, ctlc);
            s.tams.get_mut(&t).expect("checked").authorizations.insert((user.clone(), ctlc.clone()));
        }
        Action::EnableCtlc { tam, ctlc } => {
            let c = s.ctlc(ctlc).expect("checked").clone();
            let env = s.tams.get_mut(tam).expect("checked");
            env.enabled.insert(ctlc.clone(), BTreeSet::from([c.last_level()]));
            env.authorizations.remove(&(c.sender().clone(), ctlc.clone()));
            env.authorizations.remove(&(c.receiver().clone(), ctlc.clone()));
            let owner = env.available.remove(&c.fund.id).expect("checked");
            env.reserved.insert(c.fund.id.clone(), owner);
        }
        Action::EnableSubC { ctlc, level, .. } => {
            let t = tam_of(s, ctlc);
            s.tams.get_mut(&t).expect("checked").enabled.get_mut(ctlc).expect("checked").insert(*level);
        }
        Action::RevealSecret { tam, secret, .. } => {
            let env = s.tams.get_mut(tam).expect("checked");
            env.committed.remove(secret);
            env.revealed.insert(secret.clone());
        }
        Action::ShareSecret { tam, secret, .. } => {
            s.tams.get_mut(tam).expect("checked").revealed.insert(secret.clone());
        }
        Action::Timeout { ctlc, level } => {
            let t = tam_of(s, ctlc);
            let env = s.tams.get_mut(&t).expect("checked");
            env.enabled.get_mut(ctlc).expect("checked").remove(level);
            env.advertised.get_mut(ctlc).expect("checked").remove(level);
        }
        Action::Refund { ctlc } => {
            let (t, f) = (tam_of(s, ctlc), fund_of(s, ctlc));
            let env = s.tams.get_mut(&t).expect("checked");
            env.enabled.remove(ctlc);
            env.advertised.remove(ctlc);
            if let Some(owner) = env.reserved.remove(&f) {
                env.available.insert(f, owner);
            }
        }
        Action::Claim { ctlc, level, .. } => {
            let t = tam_of(s, ctlc);
            let env = s.tams.get_mut(&t).expect("checked");
            env.enabled.remove(ctlc);
            env.advertised.remove(ctlc);
            env.claimed.insert(ctlc.clone(), *level);
        }
        Action::Execute { ctlc, .. } => {
            let (t, f) = (tam_of(s, ctlc), fund_of(s, ctlc));
            let env = s.tams.get_mut(&t).expect("checked");
            env.claimed.remove(ctlc);
            env.reserved.remove(&f);
            env.available.insert(f, ctlc.receiver.clone());
        }
        Action::Elapse { delta } => {
            s.time = s.time + *delta;
        }
    }
    Ok(())
}

/// Pure transition: the successor state of `s` under `a`.
pub fn step(s: &HbeState, a: &Action) -> Result<HbeState, Violation> {
    let mut next = s.clone();
    apply(&mut next, a)?;
    Ok(next)
}

/// Valid actions of a state, plus the range of valid elapse delays.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EnabledActions {
    pub actions: Vec<Action>,
    /// Inclusive bounds of a valid `Elapse`; any `δ` in the range is valid.
    pub elapse: (Time, Time),
}

/// Every non-elapse action valid in `s`, drawing AdvBatch candidates from
/// the batches of `scenario`.
pub fn enabled_actions(s: &HbeState, scenario: &Scenario) -> EnabledActions {
    let mut cands: Vec<Action> = Vec::new();
    let users: BTreeSet<NodeId> = s.membership.values().flatten().cloned().collect();
    for tree in &scenario.trees {
        cands.push(Action::AdvBatch { batch: Shared::new(tree.batch.clone()) });
    }
    for (tree, b) in &s.batches {
        for u in b.users() {
            cands.push(Action::CommitBatch { user: u, tree: tree.clone() });
        }
        for c in &b.ctlcs {
            let id = c.id.clone();
            cands.push(Action::AdvCtlc { tam: c.tam().clone(), ctlc: id.clone() });
            cands.push(Action::AuthCtlc { user: c.receiver().clone(), ctlc: id.clone() });
            cands.push(Action::AuthCtlc { user: c.sender().clone(), ctlc: id.clone() });
            cands.push(Action::EnableCtlc { tam: c.tam().clone(), ctlc: id.clone() });
            cands.push(Action::Refund { ctlc: id.clone() });
            for sc in &c.subcontracts {
                cands.push(Action::EnableSubC { user: c.sender().clone(), ctlc: id.clone(), level: sc.level });
                cands.push(Action::Timeout { ctlc: id.clone(), level: sc.level });
                cands.push(Action::Execute { ctlc: id.clone(), level: sc.level });
                for cond in &sc.condition {
                    cands.push(Action::Claim { ctlc: id.clone(), level: sc.level, secrets: cond.clone() });
                }
            }
        }
    }
    let secrets: BTreeSet<&Secret> = s.tams.values().flat_map(|e| e.committed.iter().chain(&e.revealed)).collect();
    for t in s.tams.keys() {
        for x in &secrets {
            cands.push(Action::RevealSecret { user: x.owner.clone(), tam: t.clone(), secret: (*x).clone() });
            for u in &users {
                cands.push(Action::ShareSecret { user: u.clone(), tam: t.clone(), secret: (*x).clone() });
            }
        }
    }
    let mut seen = BTreeSet::new();
    let actions = cands.into_iter().filter(|a| is_valid(s, a) && seen.insert(a.clone())).collect();
    EnabledActions { actions, elapse: (Time(1), Time(i64::MAX - s.time.0)) }
}
