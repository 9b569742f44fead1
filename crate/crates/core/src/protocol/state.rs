use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use log::{debug, warn};

use crate::sl::{fuse_averaging_multi, Opinion};

use super::message::{
    Destination, Emission, Event, HeadMsg, MemberMsg, Message, Outgoing, PairOpinion, PerceptUpdate,
    RequestMsg, ResponseMsg,
};
use super::store::OpinionStore;
use super::{resolve_conflict, AgentId, AgentKind, Directory, ProtocolConfig, Tick};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    ClusterHead,
    Member,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ProtocolError {
    #[error("a request to {0} is still outstanding")]
    BusyPending(AgentId),
    #[error("only cluster heads may do this")]
    NotHead,
    #[error("response from {0} does not match any outstanding request")]
    UnmatchedResponse(AgentId),
    #[error("cluster has no other member to hand over to")]
    NoMembers,
}

/// One agent's view of the world and its protocol obligations.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentState {
    id: AgentId,
    kind: AgentKind,
    role: Role,
    head_id: AgentId,
    /// Agent members. Authoritative for heads, last agreed view for members.
    members: BTreeSet<AgentId>,
    human_members: BTreeSet<AgentId>,
    opinion_store: OpinionStore,
    pending_request: Option<(AgentId, Tick)>,
    denial_cache: BTreeMap<AgentId, Tick>,
    /// agent -> (its head, expiry)
    observed_heads: BTreeMap<AgentId, (AgentId, Tick)>,
    last_ch_received: Tick,
    config: ProtocolConfig,
    directory: Arc<Directory>,
    nearby: BTreeMap<AgentId, f64>,
    // head bookkeeping, keyed by member
    keep_alive: BTreeMap<AgentId, Tick>,
    member_since: BTreeMap<AgentId, Tick>,
    claimed_head: BTreeMap<AgentId, AgentId>,
    /// Period index in which a referral was last followed.
    followup_period: Option<Tick>,
    last_announced: Option<HeadMsg>,
}

impl AgentState {
    pub fn new(id: AgentId, kind: AgentKind, config: ProtocolConfig, directory: Arc<Directory>, now: Tick) -> Self {
        let own = if kind == AgentKind::OpinionProvider {
            BTreeSet::new()
        } else {
            BTreeSet::from([id])
        };
        Self {
            id,
            kind,
            role: Role::ClusterHead,
            head_id: id,
            members: own.clone(),
            human_members: own,
            opinion_store: OpinionStore::default(),
            pending_request: None,
            denial_cache: BTreeMap::new(),
            observed_heads: BTreeMap::new(),
            last_ch_received: now,
            config,
            directory,
            nearby: BTreeMap::new(),
            keep_alive: BTreeMap::new(),
            member_since: BTreeMap::from([(id, now)]),
            claimed_head: BTreeMap::new(),
            followup_period: None,
            last_announced: None,
        }
    }

    pub fn id(&self) -> AgentId {
        self.id
    }

    pub fn kind(&self) -> AgentKind {
        self.kind
    }

    pub fn role(&self) -> Role {
        self.role
    }

    pub fn head_id(&self) -> AgentId {
        self.head_id
    }

    pub fn members(&self) -> &BTreeSet<AgentId> {
        &self.members
    }

    pub fn human_members(&self) -> &BTreeSet<AgentId> {
        &self.human_members
    }

    pub fn pending_request(&self) -> Option<(AgentId, Tick)> {
        self.pending_request
    }

    pub fn denial_cache(&self) -> &BTreeMap<AgentId, Tick> {
        &self.denial_cache
    }

    pub fn observed_heads(&self) -> &BTreeMap<AgentId, (AgentId, Tick)> {
        &self.observed_heads
    }

    pub fn opinion_store(&self) -> &OpinionStore {
        &self.opinion_store
    }

    pub fn last_ch_received(&self) -> Tick {
        self.last_ch_received
    }

    pub fn config(&self) -> &ProtocolConfig {
        &self.config
    }

    /// The head message most recently broadcast by this agent, if it is a head.
    pub fn announced(&self) -> Option<&HeadMsg> {
        match self.role {
            Role::ClusterHead => self.last_announced.as_ref(),
            Role::Member => None,
        }
    }

    /// Sizes of the TTL-managed caches: (opinions, denials, observed heads).
    pub fn cache_sizes(&self) -> (usize, usize, usize) {
        (
            self.opinion_store.len(),
            self.denial_cache.len(),
            self.observed_heads.len(),
        )
    }

    /// Checks the structural invariants of a reachable state.
    pub fn check_invariants(&self) -> Result<(), String> {
        if (self.role == Role::ClusterHead) != (self.head_id == self.id) {
            return Err(format!("{}: role {:?} with head {}", self.id, self.role, self.head_id));
        }
        if self.pending_request.is_some() && self.role != Role::ClusterHead {
            return Err(format!("{}: member with pending request", self.id));
        }
        match self.kind {
            AgentKind::OpinionProvider if !self.members.is_empty() => {
                Err(format!("{}: opinion provider holds members", self.id))
            }
            AgentKind::OpinionProvider => Ok(()),
            _ if !self.members.contains(&self.id) => Err(format!("{}: not in own member set", self.id)),
            _ => {
                for m in &self.members {
                    if self.directory.kind(*m) == AgentKind::OpinionProvider {
                        return Err(format!("{}: provider {m} listed as member", self.id));
                    }
                }
                Ok(())
            }
        }
    }

    /// Applies one event and returns what the agent sends in response.
    pub fn handle(&mut self, event: Event) -> Emission {
        match event {
            Event::Tick(now) => self.tick(now),
            Event::Percept { update, time } => {
                self.apply_percept(update, time);
                Vec::new()
            }
            Event::Received { msg, from, time } => self.receive(msg, from, time),
        }
    }

    pub fn receive(&mut self, msg: Message, from: AgentId, now: Tick) -> Emission {
        if self.kind != AgentKind::HumanLinked {
            return Vec::new();
        }
        match msg {
            Message::Member(m) => {
                self.handle_member_msg(&m, now);
                Vec::new()
            }
            Message::Head(h) => self.handle_head_msg(from, &h, now),
            Message::Request(r) => self.handle_request(&r, now),
            Message::Response(r) => self.handle_response(&r, now).unwrap_or_else(|e| {
                debug!("agent {}: ignoring response: {e}", self.id);
                Vec::new()
            }),
        }
    }

    pub fn apply_percept(&mut self, update: PerceptUpdate, now: Tick) {
        for po in update.opinions {
            self.opinion_store.insert(self.id, po.i, po.j, po.opinion, now);
        }
        self.nearby = update.nearby;
    }

    fn evict(&mut self, now: Tick) {
        self.opinion_store
            .evict_older_than(now.saturating_sub(self.config.opinion_ttl));
        self.denial_cache.retain(|_, &mut expiry| expiry > now);
        self.observed_heads.retain(|_, &mut (_, expiry)| expiry > now);
    }

    fn is_denied(&self, id: AgentId, now: Tick) -> bool {
        self.denial_cache.get(&id).is_some_and(|&expiry| expiry > now)
    }

    fn within_social_distance(&self, id: AgentId) -> bool {
        id == self.id
            || self
                .nearby
                .get(&id)
                .is_some_and(|&d| d <= self.config.social_distance)
    }

    fn become_singleton(&mut self, now: Tick) {
        self.role = Role::ClusterHead;
        self.head_id = self.id;
        self.members = BTreeSet::from([self.id]);
        self.human_members = self.members.clone();
        self.keep_alive.clear();
        self.claimed_head.clear();
        self.member_since = BTreeMap::from([(self.id, now)]);
        self.pending_request = None;
    }

    fn become_member_of(&mut self, head: AgentId, agents: BTreeSet<AgentId>, humans: BTreeSet<AgentId>, now: Tick) {
        self.role = Role::Member;
        self.head_id = head;
        self.members = agents;
        self.members.insert(self.id);
        self.members.insert(head);
        self.human_members = humans;
        self.human_members.extend(self.members.iter().copied());
        self.last_ch_received = now;
        self.pending_request = None;
        self.keep_alive.clear();
        self.claimed_head.clear();
        self.member_since.clear();
        self.last_announced = None;
    }

    /// Averaging fusion over every stored opinion about pairs `(x, y)` with
    /// `x` in `xs` and `y` in `ys`, floored at the minimum uncertainty. Pairs
    /// nobody has reported on count as vacuous when `missing_vacuous` is set.
    /// `None` when there is nothing to fuse.
    fn group_opinion<'a, X, Y>(&self, xs: X, ys: Y, missing_vacuous: bool) -> Option<Opinion>
    where
        X: IntoIterator<Item = &'a AgentId>,
        Y: IntoIterator<Item = &'a AgentId> + Clone,
    {
        let vacuous = Opinion::vacuous(self.config.base_rate);
        let mut ops = Vec::new();
        for x in xs {
            for y in ys.clone() {
                if x == y {
                    continue;
                }
                let before = ops.len();
                ops.extend(
                    self.opinion_store
                        .opinions(*x, *y)
                        .map(|o| o.floor_uncertainty(self.config.u_min)),
                );
                if ops.len() == before && missing_vacuous {
                    ops.push(vacuous);
                }
            }
        }
        if ops.is_empty() {
            return None;
        }
        match fuse_averaging_multi(&ops) {
            Ok(o) => Some(o),
            Err(e) => {
                warn!("agent {}: group fusion failed: {e}", self.id);
                None
            }
        }
    }

    fn decide_group(&self, group: Option<Opinion>, threshold: f64) -> bool {
        group
            .unwrap_or_else(|| Opinion::vacuous(self.config.base_rate))
            .decide(threshold)
    }

    /// Periodic step: timeouts, cache eviction, and the head or member broadcast.
    pub fn tick(&mut self, now: Tick) -> Emission {
        self.evict(now);
        match self.kind {
            AgentKind::HumanWithoutAgent => return Vec::new(),
            AgentKind::OpinionProvider => return self.member_message().into_iter().collect(),
            AgentKind::HumanLinked => {}
        }
        let period = self.config.period;
        if let Some((target, sent)) = self.pending_request {
            if now >= sent + period {
                debug!("agent {}: no reply from {target}", self.id);
                self.denial_cache.insert(target, now + self.config.denial_ttl);
                self.pending_request = None;
            }
        }
        if self.role == Role::Member && now.saturating_sub(self.last_ch_received) > period {
            debug!("agent {}: head {} silent, cluster broken", self.id, self.head_id);
            self.become_singleton(now);
        }
        match self.role {
            Role::Member => self.member_message().into_iter().collect(),
            Role::ClusterHead => {
                self.recompute_membership(now);
                let msg = self.head_message();
                self.last_announced = Some(msg.clone());
                let mut out = vec![Outgoing {
                    from: self.id,
                    dest: Destination::Broadcast,
                    msg: Message::Head(msg),
                }];
                if self.pending_request.is_none() {
                    if let Some(candidate) = self.get_candidate(now) {
                        out.extend(self.send_request(candidate, now).expect("no request pending"));
                    }
                }
                out
            }
        }
    }

    fn head_message(&self) -> HeadMsg {
        let human_members = if self.config.detach_extension {
            self.human_members.clone()
        } else {
            self.members.clone()
        };
        HeadMsg {
            head: self.id,
            agent_members: self.members.clone(),
            human_members,
        }
    }

    /// Own opinions about pairs with at least one end within social distance.
    fn member_message(&self) -> Option<Outgoing> {
        let opinions: Vec<PairOpinion> = self
            .opinion_store
            .authored_by(self.id)
            .filter(|(k, _)| self.within_social_distance(k.first()) || self.within_social_distance(k.second()))
            .map(|(k, opinion)| PairOpinion {
                i: k.first(),
                j: k.second(),
                opinion,
            })
            .collect();
        if opinions.is_empty() {
            return None;
        }
        Some(Outgoing {
            from: self.id,
            dest: Destination::Broadcast,
            msg: Message::Member(MemberMsg {
                sender: self.id,
                head: self.head_id,
                opinions,
            }),
        })
    }

    /// Best agent to invite into the current situation, if any qualifies.
    pub fn get_candidate(&self, now: Tick) -> Option<AgentId> {
        if self.role != Role::ClusterHead || self.pending_request.is_some() || self.kind != AgentKind::HumanLinked {
            return None;
        }
        let mut best: Option<(f64, AgentId)> = None;
        for (&candidate, &distance) in &self.nearby {
            if distance > self.config.social_distance
                || candidate == self.id
                || self.members.contains(&candidate)
                || !self.directory.is_agent_member(candidate)
                || self.is_denied(candidate, now)
            {
                continue;
            }
            let Some(group) = self.group_opinion(&self.members, [&candidate], false) else {
                continue;
            };
            if !group.decide(self.config.request_threshold) {
                continue;
            }
            let e = group.expectation();
            // nearby is ordered by id, so strict comparison keeps the smaller id on ties
            if best.is_none_or(|(be, _)| e > be) {
                best = Some((e, candidate));
            }
        }
        let (_, candidate) = best?;
        if self.config.direct_to_head_routing {
            if let Some(&(head, expiry)) = self.observed_heads.get(&candidate) {
                if expiry > now
                    && head != candidate
                    && head != self.id
                    && !self.members.contains(&head)
                    && self.directory.is_agent_member(head)
                    && !self.is_denied(head, now)
                {
                    return Some(head);
                }
            }
        }
        Some(candidate)
    }

    pub fn send_request(&mut self, target: AgentId, now: Tick) -> Result<Emission, ProtocolError> {
        if let Some((pending, _)) = self.pending_request {
            return Err(ProtocolError::BusyPending(pending));
        }
        if self.role != Role::ClusterHead {
            return Err(ProtocolError::NotHead);
        }
        self.pending_request = Some((target, now));
        Ok(vec![Outgoing {
            from: self.id,
            dest: Destination::Unicast(target),
            msg: Message::Request(RequestMsg {
                head: self.id,
                members: self.members.clone(),
            }),
        }])
    }

    fn respond(&self, to: AgentId, accepted: bool, forward_to: Option<AgentId>, forward_members: Option<BTreeSet<AgentId>>) -> Emission {
        vec![Outgoing {
            from: self.id,
            dest: Destination::Unicast(to),
            msg: Message::Response(ResponseMsg {
                responder: self.id,
                accepted,
                forward_to,
                forward_members,
            }),
        }]
    }

    pub fn handle_request(&mut self, req: &RequestMsg, now: Tick) -> Emission {
        if self.kind != AgentKind::HumanLinked || req.head == self.id {
            return Vec::new();
        }
        if !self.directory.is_agent_member(req.head) {
            return self.respond(req.head, false, None, None);
        }
        if self.role == Role::Member {
            return self.respond(req.head, false, Some(self.head_id), Some(self.members.clone()));
        }
        if let Some((target, _)) = self.pending_request {
            if target == req.head {
                if resolve_conflict(self.id, req.head) != self.id {
                    // the other side decides; our own request is answered there
                    return Vec::new();
                }
                self.pending_request = None;
            } else {
                // about to join `target`; point the requester there
                let mut referred = self.members.clone();
                referred.insert(target);
                return self.respond(req.head, false, Some(target), Some(referred));
            }
        }
        if !self.check_for_social_situation(req) {
            return self.respond(req.head, false, None, None);
        }
        for &m in req.members.iter().chain([&req.head]) {
            if !self.directory.is_agent_member(m) {
                continue;
            }
            self.members.insert(m);
            self.human_members.insert(m);
            self.keep_alive.insert(m, now);
            self.member_since.entry(m).or_insert(now);
            self.claimed_head.remove(&m);
        }
        self.respond(req.head, true, None, None)
    }

    /// Fused opinion of the own cluster about the requester's cluster,
    /// discretised only after aggregation.
    pub fn check_for_social_situation(&self, req: &RequestMsg) -> bool {
        let mut others = req.members.clone();
        others.insert(req.head);
        let group = self.group_opinion(&self.members, &others, true);
        self.decide_group(group, self.config.accept_threshold)
    }

    pub fn handle_response(&mut self, res: &ResponseMsg, now: Tick) -> Result<Emission, ProtocolError> {
        match self.pending_request {
            Some((target, _)) if target == res.responder && self.role == Role::ClusterHead => {}
            _ => return Err(ProtocolError::UnmatchedResponse(res.responder)),
        }
        self.pending_request = None;
        if res.accepted {
            let agents = self.members.clone();
            let humans = self.human_members.clone();
            self.become_member_of(res.responder, agents, humans, now);
            return Ok(Vec::new());
        }
        if let Some(head) = res.forward_to {
            let period_index = now / self.config.period;
            let mut referred = res.forward_members.clone().unwrap_or_default();
            referred.insert(head);
            let feasible = head != self.id
                && !self.members.contains(&head)
                && self.directory.is_agent_member(head)
                && !self.is_denied(head, now)
                && self.followup_period != Some(period_index)
                && self.decide_group(
                    self.group_opinion(&self.members, &referred, true),
                    self.config.request_threshold,
                );
            if feasible {
                self.followup_period = Some(period_index);
                return self.send_request(head, now);
            }
        }
        self.denial_cache
            .insert(res.responder, now + self.config.denial_ttl);
        Ok(Vec::new())
    }

    pub fn handle_member_msg(&mut self, msg: &MemberMsg, now: Tick) {
        for po in &msg.opinions {
            self.opinion_store
                .insert(msg.sender, po.i, po.j, po.opinion, now);
        }
        if !self.directory.is_agent_member(msg.sender) || msg.sender == self.id {
            return;
        }
        if self.role == Role::ClusterHead && self.members.contains(&msg.sender) {
            self.keep_alive.insert(msg.sender, now);
            self.claimed_head.insert(msg.sender, msg.head);
        }
        self.observed_heads
            .insert(msg.sender, (msg.head, now + self.config.head_knowledge_ttl));
    }

    /// Re-decides every member: it stays if it was heard from within one
    /// period, believes in this cluster, and the group still supports it.
    pub fn recompute_membership(&mut self, now: Tick) {
        if self.role != Role::ClusterHead || self.kind != AgentKind::HumanLinked {
            return;
        }
        let current = self.members.clone();
        let mut retained = BTreeSet::from([self.id]);
        for &m in current.iter().filter(|&&m| m != self.id) {
            let alive = self
                .keep_alive
                .get(&m)
                .is_some_and(|&t| now.saturating_sub(t) <= self.config.period);
            let consistent = self
                .claimed_head
                .get(&m)
                .is_none_or(|h| current.contains(h));
            let others = current.iter().filter(|&&o| o != m);
            let supported = self.decide_group(
                self.group_opinion(others, [&m], false),
                self.config.accept_threshold,
            );
            if alive && consistent && supported {
                retained.insert(m);
            } else {
                debug!(
                    "agent {}: excluding {m} (alive={alive} consistent={consistent} supported={supported})",
                    self.id
                );
            }
        }
        self.members = retained;
        let members = &self.members;
        self.keep_alive.retain(|m, _| members.contains(m));
        self.claimed_head.retain(|m, _| members.contains(m));
        self.member_since.retain(|m, _| members.contains(m));
        self.member_since.entry(self.id).or_insert(now);
        self.human_members = self.members.clone();
        if self.config.detach_extension {
            self.human_members.extend(self.supported_unlinked_humans());
        }
    }

    /// People without devices whom the group believes to be in the situation.
    fn supported_unlinked_humans(&self) -> BTreeSet<AgentId> {
        let unlinked = |id: AgentId| self.directory.kind(id) == AgentKind::HumanWithoutAgent;
        let candidates: BTreeSet<AgentId> = self
            .opinion_store
            .pairs()
            .filter_map(|k| match (k.first(), k.second()) {
                (a, b) if unlinked(a) && self.members.contains(&b) => Some(a),
                (a, b) if unlinked(b) && self.members.contains(&a) => Some(b),
                _ => None,
            })
            .collect();
        candidates
            .into_iter()
            .filter(|h| {
                self.group_opinion(&self.members, [h], false)
                    .is_some_and(|g| g.decide(self.config.accept_threshold))
            })
            .collect()
    }

    pub fn handle_head_msg(&mut self, from: AgentId, msg: &HeadMsg, now: Tick) -> Emission {
        if self.kind != AgentKind::HumanLinked {
            return Vec::new();
        }
        let listed = msg.agent_members.contains(&self.id);
        if self.role == Role::Member && from == self.head_id && msg.head != from {
            // departing head nominated a replacement
            if !listed {
                return Vec::new();
            }
            if msg.head == self.id {
                return self.assume_head(msg, now);
            }
            self.become_member_of(msg.head, msg.agent_members.clone(), msg.human_members.clone(), now);
            return Vec::new();
        }
        if msg.head == self.id {
            return Vec::new();
        }
        if self.role == Role::ClusterHead && msg.head == from && self.members.contains(&from) && !listed {
            // a member that leads its own cluster has left ours
            debug!("agent {}: member {from} announces its own cluster", self.id);
            self.members.remove(&from);
            self.human_members.remove(&from);
            self.keep_alive.remove(&from);
            self.claimed_head.remove(&from);
            self.member_since.remove(&from);
        }
        if self.role == Role::Member && msg.head == self.head_id {
            if listed {
                self.last_ch_received = now;
                self.members = msg.agent_members.clone();
                self.human_members = msg.human_members.clone();
            } else {
                debug!("agent {}: excluded by {}", self.id, msg.head);
                self.become_singleton(now);
            }
            return Vec::new();
        }
        let expiry = now + self.config.head_knowledge_ttl;
        for &m in &msg.agent_members {
            if m != self.id {
                self.observed_heads.insert(m, (msg.head, expiry));
            }
        }
        if listed {
            let adopt = match self.role {
                // our head merged into a larger cluster
                Role::Member => msg.agent_members.contains(&self.head_id),
                // the response to our request was lost or is still in flight
                Role::ClusterHead => self
                    .pending_request
                    .is_some_and(|(target, _)| target == msg.head),
            };
            if adopt {
                self.become_member_of(msg.head, msg.agent_members.clone(), msg.human_members.clone(), now);
            }
        }
        Vec::new()
    }

    fn assume_head(&mut self, msg: &HeadMsg, now: Tick) -> Emission {
        self.role = Role::ClusterHead;
        self.head_id = self.id;
        self.members = msg.agent_members.clone();
        self.human_members = msg.human_members.clone();
        self.pending_request = None;
        for &m in &self.members {
            self.keep_alive.insert(m, now);
            self.member_since.insert(m, now);
        }
        let announce = self.head_message();
        self.last_announced = Some(announce.clone());
        vec![Outgoing {
            from: self.id,
            dest: Destination::Broadcast,
            msg: Message::Head(announce),
        }]
    }

    /// Called when this head is about to leave. With stable handover enabled
    /// the longest-standing member is named head of the remaining cluster.
    pub fn handover_head(&mut self, now: Tick) -> Result<Emission, ProtocolError> {
        if !self.config.stable_handover {
            return Ok(Vec::new());
        }
        if self.role != Role::ClusterHead {
            return Err(ProtocolError::NotHead);
        }
        let replacement = self
            .members
            .iter()
            .filter(|&&m| m != self.id)
            .min_by_key(|&&m| (self.member_since.get(&m).copied().unwrap_or(now), m))
            .copied()
            .ok_or(ProtocolError::NoMembers)?;
        let mut agents = self.members.clone();
        agents.remove(&self.id);
        let mut humans = if self.config.detach_extension {
            self.human_members.clone()
        } else {
            self.members.clone()
        };
        humans.remove(&self.id);
        self.become_singleton(now);
        Ok(vec![Outgoing {
            from: self.id,
            dest: Destination::Broadcast,
            msg: Message::Head(HeadMsg {
                head: replacement,
                agent_members: agents,
                human_members: humans,
            }),
        }])
    }
}
