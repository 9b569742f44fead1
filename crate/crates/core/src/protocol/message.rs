use std::collections::{BTreeMap, BTreeSet};

use crate::sl::Opinion;

use super::{AgentId, Tick};

/// One agent's opinion about whether `i` and `j` are in a social situation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairOpinion {
    pub i: AgentId,
    pub j: AgentId,
    pub opinion: Opinion,
}

/// Member message: opinions plus the sender's belief about its head.
#[derive(Debug, Clone, PartialEq)]
pub struct MemberMsg {
    pub sender: AgentId,
    pub head: AgentId,
    pub opinions: Vec<PairOpinion>,
}

/// Cluster head message: the agreed member sets of one situation.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadMsg {
    pub head: AgentId,
    pub agent_members: BTreeSet<AgentId>,
    /// Equals `agent_members` unless people without devices are tracked.
    pub human_members: BTreeSet<AgentId>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RequestMsg {
    pub head: AgentId,
    pub members: BTreeSet<AgentId>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResponseMsg {
    pub responder: AgentId,
    pub accepted: bool,
    /// Head the requester should ask instead.
    pub forward_to: Option<AgentId>,
    pub forward_members: Option<BTreeSet<AgentId>>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Message {
    Member(MemberMsg),
    Head(HeadMsg),
    Request(RequestMsg),
    Response(ResponseMsg),
}

impl Message {
    /// Short type tag used in logs.
    pub fn tag(&self) -> &'static str {
        match self {
            Message::Member(_) => "CM",
            Message::Head(_) => "CH",
            Message::Request(_) => "REQ",
            Message::Response(_) => "RES",
        }
    }

    /// Structural invariants every well-formed message satisfies.
    pub fn is_well_formed(&self) -> bool {
        match self {
            Message::Member(m) => !m.opinions.is_empty(),
            Message::Head(h) => {
                h.agent_members.contains(&h.head) && h.agent_members.is_subset(&h.human_members)
            }
            Message::Request(r) => r.members.contains(&r.head),
            Message::Response(r) => r.forward_members.is_none() || r.forward_to.is_some(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Destination {
    Broadcast,
    Unicast(AgentId),
}

/// A message leaving an agent.
#[derive(Debug, Clone, PartialEq)]
pub struct Outgoing {
    pub from: AgentId,
    pub dest: Destination,
    pub msg: Message,
}

pub type Emission = Vec<Outgoing>;

/// Fresh output of the agent's own logical sensor.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PerceptUpdate {
    pub opinions: Vec<PairOpinion>,
    /// Agents currently within sensing range, with their distance in metres.
    pub nearby: BTreeMap<AgentId, f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Event {
    Tick(Tick),
    Received { msg: Message, from: AgentId, time: Tick },
    Percept { update: PerceptUpdate, time: Tick },
}
