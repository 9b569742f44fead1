//! Line-oriented text encoding of protocol messages for simulation logs.
//!
//! Each record is `time;type;from;to;payload` where `to` is an agent id or
//! `*` for a broadcast. Payload layouts, with `/` separating fields and `,`
//! separating list items:
//!
//! | type  | payload                                             |
//! |-------|-----------------------------------------------------|
//! | `CM`  | `head/i,j,b,d,u,a/i,j,b,d,u,a/...`                  |
//! | `CH`  | `head/agent_members/human_members`                  |
//! | `REQ` | `head/members`                                      |
//! | `RES` | `accepted(1\|0)/forward_to\|-/forward_members\|-`   |
//!
//! The sender of a member message and the responder of a response are the
//! record's `from` field.

use std::collections::BTreeSet;
use std::fmt::{self, Write as _};
use std::str::FromStr;

use crate::protocol::{
    AgentId, Destination, HeadMsg, MemberMsg, Message, PairOpinion, RequestMsg, ResponseMsg, Tick,
};
use crate::sl::Opinion;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("malformed log record: {0}")]
pub struct WireError(String);

fn err<T>(what: impl Into<String>) -> Result<T, WireError> {
    Err(WireError(what.into()))
}

/// One message on the wire, stamped with time and endpoints.
#[derive(Debug, Clone, PartialEq)]
pub struct WireRecord {
    pub time: Tick,
    pub from: AgentId,
    pub to: Destination,
    pub msg: Message,
}

fn write_ids(out: &mut String, ids: &BTreeSet<AgentId>) {
    for (k, id) in ids.iter().enumerate() {
        if k > 0 {
            out.push(',');
        }
        let _ = write!(out, "{id}");
    }
}

fn parse_id(s: &str) -> Result<AgentId, WireError> {
    // the trimming FromStr on AgentId is too lenient for a wire format
    if s.is_empty() || !s.bytes().all(|b| b.is_ascii_digit()) {
        return err(format!("bad agent id {s:?}"));
    }
    s.parse::<u64>()
        .map(AgentId)
        .or_else(|_| err(format!("agent id out of range {s:?}")))
}

fn parse_ids(s: &str) -> Result<BTreeSet<AgentId>, WireError> {
    if s.is_empty() {
        return Ok(BTreeSet::new());
    }
    s.split(',').map(parse_id).collect()
}

impl fmt::Display for WireRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let to = match self.to {
            Destination::Broadcast => "*".to_owned(),
            Destination::Unicast(id) => id.to_string(),
        };
        let mut payload = String::new();
        match &self.msg {
            Message::Member(m) => {
                let _ = write!(payload, "{}", m.head);
                for po in &m.opinions {
                    let _ = write!(payload, "/{},{},{}", po.i, po.j, po.opinion);
                }
            }
            Message::Head(h) => {
                let _ = write!(payload, "{}/", h.head);
                write_ids(&mut payload, &h.agent_members);
                payload.push('/');
                write_ids(&mut payload, &h.human_members);
            }
            Message::Request(r) => {
                let _ = write!(payload, "{}/", r.head);
                write_ids(&mut payload, &r.members);
            }
            Message::Response(r) => {
                payload.push(if r.accepted { '1' } else { '0' });
                payload.push('/');
                match r.forward_to {
                    Some(id) => {
                        let _ = write!(payload, "{id}");
                    }
                    None => payload.push('-'),
                }
                payload.push('/');
                match &r.forward_members {
                    Some(ids) => write_ids(&mut payload, ids),
                    None => payload.push('-'),
                }
            }
        }
        write!(f, "{};{};{};{};{}", self.time, self.msg.tag(), self.from, to, payload)
    }
}

impl FromStr for WireRecord {
    type Err = WireError;

    fn from_str(line: &str) -> Result<Self, Self::Err> {
        let fields: Vec<&str> = line.split(';').collect();
        let [time, tag, from, to, payload] = fields[..] else {
            return err(format!("expected 5 fields, got {}", fields.len()));
        };
        let time = if time.bytes().all(|b| b.is_ascii_digit()) {
            time.parse::<Tick>().or_else(|_| err(format!("bad time {time:?}")))?
        } else {
            return err(format!("bad time {time:?}"));
        };
        let from = parse_id(from)?;
        let to = match to {
            "*" => Destination::Broadcast,
            id => Destination::Unicast(parse_id(id)?),
        };
        let parts: Vec<&str> = payload.split('/').collect();
        let msg = match tag {
            "CM" => {
                let head = parse_id(parts[0])?;
                let opinions = parts[1..]
                    .iter()
                    .map(|item| {
                        let mut it = item.splitn(3, ',');
                        let (Some(i), Some(j), Some(rest)) = (it.next(), it.next(), it.next()) else {
                            return err(format!("bad opinion tuple {item:?}"));
                        };
                        let opinion = Opinion::from_str(rest).map_err(|e| WireError(e.to_string()))?;
                        Ok(PairOpinion {
                            i: parse_id(i)?,
                            j: parse_id(j)?,
                            opinion,
                        })
                    })
                    .collect::<Result<Vec<_>, _>>()?;
                Message::Member(MemberMsg {
                    sender: from,
                    head,
                    opinions,
                })
            }
            "CH" => {
                let [head, agents, humans] = parts[..] else {
                    return err("CH payload needs 3 fields");
                };
                Message::Head(HeadMsg {
                    head: parse_id(head)?,
                    agent_members: parse_ids(agents)?,
                    human_members: parse_ids(humans)?,
                })
            }
            "REQ" => {
                let [head, members] = parts[..] else {
                    return err("REQ payload needs 2 fields");
                };
                Message::Request(RequestMsg {
                    head: parse_id(head)?,
                    members: parse_ids(members)?,
                })
            }
            "RES" => {
                let [accepted, forward_to, forward_members] = parts[..] else {
                    return err("RES payload needs 3 fields");
                };
                let accepted = match accepted {
                    "1" => true,
                    "0" => false,
                    other => return err(format!("bad accepted flag {other:?}")),
                };
                let forward_to = match forward_to {
                    "-" => None,
                    id => Some(parse_id(id)?),
                };
                let forward_members = match forward_members {
                    "-" => None,
                    ids => Some(parse_ids(ids)?),
                };
                Message::Response(ResponseMsg {
                    responder: from,
                    accepted,
                    forward_to,
                    forward_members,
                })
            }
            other => return err(format!("unknown message type {other:?}")),
        };
        Ok(WireRecord { time, from, to, msg })
    }
}

/// Parses a whole log, reporting the 1-based line of the first bad record.
/// Blank lines are skipped.
pub fn parse_log(text: &str) -> Result<Vec<WireRecord>, (usize, WireError)> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, l)| l.parse().map_err(|e| (n + 1, e)))
        .collect()
}

pub fn write_log(records: &[WireRecord]) -> String {
    let mut out = String::new();
    for r in records {
        let _ = writeln!(out, "{r}");
    }
    out
}
