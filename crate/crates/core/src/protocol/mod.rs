//! Per-agent consensus state machine.
//!
//! Every agent starts as the head of its own unary cluster. Heads invite
//! nearby agents into their situation with request messages, accept or
//! decline invitations based on a fused group opinion, and periodically
//! broadcast the agreed member set. Members broadcast their pairwise opinions,
//! which double as keep-alives for the head.

mod message;
mod state;
mod store;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use message::{Destination, Emission, Event, HeadMsg, MemberMsg, Message, Outgoing, PairOpinion, PerceptUpdate, RequestMsg, ResponseMsg};
pub use state::{AgentState, ProtocolError, Role};
pub use store::{OpinionStore, PairKey};

/// Simulation time in milliseconds.
pub type Tick = u64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct AgentId(pub u64);

impl fmt::Display for AgentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl FromStr for AgentId {
    type Err = std::num::ParseIntError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        s.trim().parse().map(AgentId)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum AgentKind {
    /// A device carried by a person; shares the person's identifier.
    #[default]
    HumanLinked,
    /// Infrastructure that only contributes opinions.
    OpinionProvider,
    /// A person without a device. Never sends anything.
    HumanWithoutAgent,
}

/// What every agent knows about the kind behind each identifier.
/// Unlisted identifiers are human-linked agents.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Directory {
    kinds: BTreeMap<AgentId, AgentKind>,
}

impl Directory {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, id: AgentId, kind: AgentKind) {
        if kind == AgentKind::HumanLinked {
            self.kinds.remove(&id);
        } else {
            self.kinds.insert(id, kind);
        }
    }

    pub fn kind(&self, id: AgentId) -> AgentKind {
        self.kinds.get(&id).copied().unwrap_or_default()
    }

    /// Whether `id` can take part in the membership process.
    pub fn is_agent_member(&self, id: AgentId) -> bool {
        self.kind(id) == AgentKind::HumanLinked
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ConfigError {
    #[error("period must be positive")]
    ZeroPeriod,
    #[error("{name} = {value} must lie strictly between 0 and 1")]
    Threshold { name: &'static str, value: f64 },
    #[error("social distance must be positive, got {0}")]
    SocialDistance(f64),
    #[error("minimum uncertainty {0} must lie in [0, 1]")]
    UncertaintyFloor(f64),
}

/// Protocol parameters. Durations are in milliseconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProtocolConfig {
    /// Keep-alive period `T = 1/f_min`.
    pub period: Tick,
    /// Group expectation needed before inviting a candidate.
    pub request_threshold: f64,
    /// Group expectation needed to accept an invitation or keep a member.
    pub accept_threshold: f64,
    /// Metres; only agents this close are candidates or reported on.
    pub social_distance: f64,
    pub denial_ttl: Tick,
    pub head_knowledge_ttl: Tick,
    pub opinion_ttl: Tick,
    /// Minimum uncertainty applied to every opinion before fusion.
    pub u_min: f64,
    /// Base rate of the vacuous opinion used for missing pairs.
    pub base_rate: f64,
    /// Heads also track people without devices.
    pub detach_extension: bool,
    /// A departing head nominates a replacement.
    pub stable_handover: bool,
    /// Send invitations straight to the head of a candidate's known cluster.
    pub direct_to_head_routing: bool,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        Self::with_period(1000)
    }
}

impl ProtocolConfig {
    /// Defaults with all timers expressed as multiples of `period`.
    pub fn with_period(period: Tick) -> Self {
        Self {
            period,
            request_threshold: 0.5,
            accept_threshold: 0.5,
            social_distance: 10.0,
            denial_ttl: 10 * period,
            head_knowledge_ttl: 5 * period,
            opinion_ttl: 3 * period,
            u_min: 0.05,
            base_rate: 0.2,
            detach_extension: false,
            stable_handover: false,
            direct_to_head_routing: true,
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.period == 0 {
            return Err(ConfigError::ZeroPeriod);
        }
        for (name, value) in [
            ("request_threshold", self.request_threshold),
            ("accept_threshold", self.accept_threshold),
        ] {
            if !(value > 0.0 && value < 1.0) {
                return Err(ConfigError::Threshold { name, value });
            }
        }
        if !(self.social_distance > 0.0) {
            return Err(ConfigError::SocialDistance(self.social_distance));
        }
        if !(0.0..=1.0).contains(&self.u_min) {
            return Err(ConfigError::UncertaintyFloor(self.u_min));
        }
        Ok(())
    }
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// FNV-1a over the big-endian concatenation of the sorted pair.
pub fn conflict_hash(a: AgentId, b: AgentId) -> u64 {
    let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
    let mut hash = FNV_OFFSET;
    for byte in lo.0.to_be_bytes().into_iter().chain(hi.0.to_be_bytes()) {
        hash ^= u64::from(byte);
        hash = hash.wrapping_mul(FNV_PRIME);
    }
    hash
}

/// Picks which of two mutually requesting heads keeps the head role: the one
/// closer on the 64-bit ring to the hash of both identifiers. Symmetric.
pub fn resolve_conflict(a: AgentId, b: AgentId) -> AgentId {
    let h = conflict_hash(a, b);
    let distance = |x: AgentId| x.0.wrapping_sub(h).min(h.wrapping_sub(x.0));
    let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
    if distance(lo) <= distance(hi) {
        lo
    } else {
        hi
    }
}
