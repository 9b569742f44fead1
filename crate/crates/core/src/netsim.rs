//! Deterministic discrete-event broadcast network.
//!
//! Agents are ticked in ascending id order; every emission gets a sequence
//! number and deliveries are applied in `(deliver_time, sequence)` order, so
//! a scenario and seed fully determine the delivery log.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap};

use log::warn;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::geom::Point;
use crate::protocol::{AgentId, AgentState, Destination, Emission, Message, Tick};
use crate::wire::WireRecord;

/// Positions of every agent present at one instant.
pub type World = BTreeMap<AgentId, Point>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum NetError {
    #[error("communication range must be positive, got {0}")]
    Range(f64),
    #[error("loss probability {0} must lie in [0, 1)")]
    Loss(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetConfig {
    /// Metres.
    pub comm_range: f64,
    pub loss_probability: f64,
    pub latency: Tick,
    pub seed: u64,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self {
            comm_range: 25.0,
            loss_probability: 0.0,
            latency: 0,
            seed: 0,
        }
    }
}

impl NetConfig {
    pub fn validate(&self, social_distance: f64) -> Result<(), NetError> {
        if !(self.comm_range > 0.0) {
            return Err(NetError::Range(self.comm_range));
        }
        if !(0.0..1.0).contains(&self.loss_probability) {
            return Err(NetError::Loss(self.loss_probability));
        }
        if self.comm_range < social_distance {
            warn!(
                "communication range {} m is below the social distance {} m",
                self.comm_range, social_distance
            );
        }
        Ok(())
    }
}

/// Everything that happened on the network, in order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DeliveryLog {
    /// Messages as sent, stamped with emission time.
    pub emissions: Vec<WireRecord>,
    /// Messages as received, stamped with delivery time and addressed to the
    /// receiving agent.
    pub deliveries: Vec<WireRecord>,
    pub dropped: u64,
    /// `(tick, agent, in-range neighbours)` sampled at each agent tick.
    pub neighbors: Vec<(Tick, AgentId, usize)>,
}

impl DeliveryLog {
    pub fn append(&mut self, other: DeliveryLog) {
        self.emissions.extend(other.emissions);
        self.deliveries.extend(other.deliveries);
        self.dropped += other.dropped;
        self.neighbors.extend(other.neighbors);
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
struct Key {
    time: Tick,
    seq: u64,
}

#[derive(Debug, Clone)]
struct Queued {
    key: Key,
    target: AgentId,
    from: AgentId,
    msg: Message,
}

impl PartialEq for Queued {
    fn eq(&self, other: &Self) -> bool {
        self.key == other.key
    }
}
impl Eq for Queued {}
impl PartialOrd for Queued {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Queued {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.key.cmp(&other.key)
    }
}

pub struct Network {
    config: NetConfig,
    rng: ChaCha8Rng,
    queue: BinaryHeap<Reverse<Queued>>,
    seq: u64,
    log: DeliveryLog,
}

impl Network {
    pub fn new(config: NetConfig) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            config,
            queue: BinaryHeap::new(),
            seq: 0,
            log: DeliveryLog::default(),
        }
    }

    pub fn config(&self) -> &NetConfig {
        &self.config
    }

    pub fn log(&self) -> &DeliveryLog {
        &self.log
    }

    /// Hands over the log collected so far and starts a fresh one.
    pub fn take_log(&mut self) -> DeliveryLog {
        std::mem::take(&mut self.log)
    }

    pub fn in_flight(&self) -> usize {
        self.queue.len()
    }

    /// Advances the network to `now`: applies due deliveries, ticks every
    /// present agent whose period divides `now`, then applies deliveries that
    /// became due in the meantime (zero latency).
    pub fn step(&mut self, now: Tick, world: &World, agents: &mut BTreeMap<AgentId, AgentState>) {
        self.drain(now, world, agents);
        let ids: Vec<AgentId> = agents.keys().copied().filter(|id| world.contains_key(id)).collect();
        for id in ids {
            if !now.is_multiple_of(agents[&id].config().period) {
                continue;
            }
            let neighbors = self.neighbors_of(id, world, agents).len();
            self.log.neighbors.push((now, id, neighbors));
            let out = agents.get_mut(&id).expect("listed above").tick(now);
            self.emit(now, out, world, agents);
        }
        self.drain(now, world, agents);
    }

    /// Sends emissions produced outside the regular tick, e.g. a handover.
    pub fn inject(&mut self, now: Tick, out: Emission, world: &World, agents: &mut BTreeMap<AgentId, AgentState>) {
        self.emit(now, out, world, agents);
        self.drain(now, world, agents);
    }

    fn neighbors_of(&self, id: AgentId, world: &World, agents: &BTreeMap<AgentId, AgentState>) -> Vec<AgentId> {
        let Some(&p) = world.get(&id) else {
            return Vec::new();
        };
        agents
            .keys()
            .filter(|&&o| o != id)
            .filter(|o| world.get(o).is_some_and(|q| p.distance(*q) <= self.config.comm_range))
            .copied()
            .collect()
    }

    fn emit(&mut self, now: Tick, out: Emission, world: &World, agents: &BTreeMap<AgentId, AgentState>) {
        for o in out {
            self.log.emissions.push(WireRecord {
                time: now,
                from: o.from,
                to: o.dest,
                msg: o.msg.clone(),
            });
            let targets = match o.dest {
                Destination::Broadcast => self.neighbors_of(o.from, world, agents),
                Destination::Unicast(t) => {
                    let reachable = match (world.get(&o.from), world.get(&t)) {
                        (Some(p), Some(q)) => agents.contains_key(&t) && p.distance(*q) <= self.config.comm_range,
                        _ => false,
                    };
                    if reachable {
                        vec![t]
                    } else {
                        Vec::new()
                    }
                }
            };
            for target in targets {
                if self.config.loss_probability > 0.0 && self.rng.random::<f64>() < self.config.loss_probability {
                    self.log.dropped += 1;
                    continue;
                }
                self.seq += 1;
                self.queue.push(Reverse(Queued {
                    key: Key {
                        time: now + self.config.latency,
                        seq: self.seq,
                    },
                    target,
                    from: o.from,
                    msg: o.msg.clone(),
                }));
            }
        }
    }

    fn drain(&mut self, now: Tick, world: &World, agents: &mut BTreeMap<AgentId, AgentState>) {
        while self.queue.peek().is_some_and(|Reverse(q)| q.key.time <= now) {
            let Reverse(q) = self.queue.pop().expect("peeked");
            // receivers that left the scene lose their mail
            if !world.contains_key(&q.target) {
                continue;
            }
            let Some(state) = agents.get_mut(&q.target) else {
                continue;
            };
            self.log.deliveries.push(WireRecord {
                time: q.key.time,
                from: q.from,
                to: Destination::Unicast(q.target),
                msg: q.msg.clone(),
            });
            let out = state.receive(q.msg, q.from, q.key.time);
            self.emit(now, out, world, agents);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AuditRow {
    pub agent: AgentId,
    pub window_start: Tick,
    pub emitted: usize,
    pub peak_neighbors: usize,
    pub bound: usize,
}

impl AuditRow {
    pub fn violated(&self) -> bool {
        self.emitted > self.bound
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct AuditReport {
    pub rows: Vec<AuditRow>,
}

impl AuditReport {
    pub fn violations(&self) -> impl Iterator<Item = &AuditRow> {
        self.rows.iter().filter(|r| r.violated())
    }

    pub fn passed(&self) -> bool {
        self.violations().next().is_none()
    }
}

/// Emission counts and neighbour samples, enough to audit the message bound
/// without keeping message bodies around.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MessageTally {
    emitted: BTreeMap<(AgentId, Tick), usize>,
    neighbors: BTreeMap<(AgentId, Tick), usize>,
}

impl MessageTally {
    pub fn record(&mut self, log: &DeliveryLog) {
        for r in &log.emissions {
            *self.emitted.entry((r.from, r.time)).or_default() += 1;
        }
        for &(t, id, n) in &log.neighbors {
            let e = self.neighbors.entry((id, t)).or_default();
            *e = (*e).max(n);
        }
    }

    pub fn total_emitted(&self) -> usize {
        self.emitted.values().sum()
    }

    /// Counts each agent's emissions per aligned window of `window` ms and
    /// compares them with `(2n + 1)` messages per protocol cycle, `n` being
    /// the peak number of neighbours the agent had in range in the window.
    pub fn audit(&self, window: Tick, period: Tick) -> AuditReport {
        if window == 0 || period == 0 {
            return AuditReport::default();
        }
        let cycles = window.div_ceil(period) as usize;
        let mut emitted: BTreeMap<(AgentId, Tick), usize> = BTreeMap::new();
        for (&(id, t), &n) in &self.emitted {
            *emitted.entry((id, t / window * window)).or_default() += n;
        }
        let mut peak: BTreeMap<(AgentId, Tick), usize> = BTreeMap::new();
        for (&(id, t), &n) in &self.neighbors {
            let e = peak.entry((id, t / window * window)).or_default();
            *e = (*e).max(n);
        }
        let rows = emitted
            .into_iter()
            .map(|((agent, window_start), emitted)| {
                let peak_neighbors = peak.get(&(agent, window_start)).copied().unwrap_or(0);
                AuditRow {
                    agent,
                    window_start,
                    emitted,
                    peak_neighbors,
                    bound: (2 * peak_neighbors + 1) * cycles,
                }
            })
            .collect();
        AuditReport { rows }
    }
}

pub fn audit_message_bound(log: &DeliveryLog, window: Tick, period: Tick) -> AuditReport {
    let mut tally = MessageTally::default();
    tally.record(log);
    tally.audit(window, period)
}

/// A message sitting in the network, not yet delivered.
#[derive(Debug, Clone, PartialEq)]
pub struct InFlight {
    pub target: AgentId,
    pub from: AgentId,
    pub msg: Message,
}

/// Delivers `pending` (and everything it triggers) in every possible order,
/// calling `visit` with the agents' states once the network is quiet.
/// Everyone is assumed in range of everyone. Returns the number of orders.
pub fn explore_interleavings<F>(
    agents: &BTreeMap<AgentId, AgentState>,
    pending: Vec<InFlight>,
    now: Tick,
    visit: &mut F,
) -> usize
where
    F: FnMut(&BTreeMap<AgentId, AgentState>),
{
    if pending.is_empty() {
        visit(agents);
        return 1;
    }
    let mut total = 0;
    for k in 0..pending.len() {
        let mut agents = agents.clone();
        let mut rest = pending.clone();
        let m = rest.remove(k);
        if let Some(state) = agents.get_mut(&m.target) {
            for o in state.receive(m.msg, m.from, now) {
                match o.dest {
                    Destination::Broadcast => rest.extend(agents.keys().filter(|&&t| t != o.from).map(|&t| InFlight {
                        target: t,
                        from: o.from,
                        msg: o.msg.clone(),
                    })),
                    Destination::Unicast(t) => rest.push(InFlight {
                        target: t,
                        from: o.from,
                        msg: o.msg,
                    }),
                }
            }
        }
        total += explore_interleavings(&agents, rest, now, visit);
    }
    total
}
