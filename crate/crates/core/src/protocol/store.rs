use std::collections::BTreeMap;

use crate::sl::Opinion;

use super::{AgentId, Tick};

/// Unordered pair of agents, stored smaller id first.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PairKey(AgentId, AgentId);

impl PairKey {
    pub fn new(a: AgentId, b: AgentId) -> Self {
        if a <= b {
            Self(a, b)
        } else {
            Self(b, a)
        }
    }

    pub fn first(&self) -> AgentId {
        self.0
    }

    pub fn second(&self) -> AgentId {
        self.1
    }

    pub fn contains(&self, id: AgentId) -> bool {
        self.0 == id || self.1 == id
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Entry {
    opinion: Opinion,
    updated: Tick,
}

/// Latest opinion per (pair, author). Reports from the same author about the
/// same pair overwrite each other; different authors are kept apart and only
/// fused when a decision is made.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct OpinionStore {
    pairs: BTreeMap<PairKey, BTreeMap<AgentId, Entry>>,
}

impl OpinionStore {
    pub fn insert(&mut self, author: AgentId, i: AgentId, j: AgentId, opinion: Opinion, now: Tick) {
        if i == j {
            return;
        }
        self.pairs
            .entry(PairKey::new(i, j))
            .or_default()
            .insert(author, Entry { opinion, updated: now });
    }

    /// All authors' opinions about one pair.
    pub fn opinions(&self, i: AgentId, j: AgentId) -> impl Iterator<Item = &Opinion> + '_ {
        self.pairs
            .get(&PairKey::new(i, j))
            .into_iter()
            .flat_map(|authors| authors.values().map(|e| &e.opinion))
    }

    pub fn get(&self, author: AgentId, i: AgentId, j: AgentId) -> Option<(Opinion, Tick)> {
        self.pairs
            .get(&PairKey::new(i, j))
            .and_then(|a| a.get(&author))
            .map(|e| (e.opinion, e.updated))
    }

    /// Opinions written by `author`, in pair order.
    pub fn authored_by(&self, author: AgentId) -> impl Iterator<Item = (PairKey, Opinion)> + '_ {
        self.pairs
            .iter()
            .filter_map(move |(k, a)| a.get(&author).map(|e| (*k, e.opinion)))
    }

    pub fn pairs(&self) -> impl Iterator<Item = PairKey> + '_ {
        self.pairs.keys().copied()
    }

    /// Drops entries last updated before `cutoff`.
    pub fn evict_older_than(&mut self, cutoff: Tick) {
        self.pairs.retain(|_, authors| {
            authors.retain(|_, e| e.updated >= cutoff);
            !authors.is_empty()
        });
    }

    /// Number of (pair, author) entries.
    pub fn len(&self) -> usize {
        self.pairs.values().map(BTreeMap::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}
