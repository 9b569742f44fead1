//! Pair-counting agreement between two partitions of the same set of agents.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use crate::protocol::AgentId;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum MetricsError {
    #[error("agent {0} appears in more than one block")]
    Overlap(AgentId),
    #[error("partition contains an empty block")]
    EmptyBlock,
    #[error("partitions cover different agent sets")]
    UniverseMismatch,
    #[error("cannot summarise an empty series")]
    EmptySeries,
}

/// A set of disjoint, nonempty blocks. Blocks are kept sorted by their
/// smallest member so equal partitions compare equal.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Partition {
    blocks: Vec<BTreeSet<AgentId>>,
}

impl Partition {
    pub fn new<I, B>(blocks: I) -> Result<Self, MetricsError>
    where
        I: IntoIterator<Item = B>,
        B: IntoIterator<Item = AgentId>,
    {
        let mut seen = BTreeSet::new();
        let mut out = Vec::new();
        for block in blocks {
            let block: BTreeSet<AgentId> = block.into_iter().collect();
            if block.is_empty() {
                return Err(MetricsError::EmptyBlock);
            }
            for &id in &block {
                if !seen.insert(id) {
                    return Err(MetricsError::Overlap(id));
                }
            }
            out.push(block);
        }
        out.sort_by_key(|b| *b.iter().next().expect("nonempty"));
        Ok(Self { blocks: out })
    }

    /// Every agent in its own block.
    pub fn singletons<I: IntoIterator<Item = AgentId>>(universe: I) -> Self {
        let mut blocks: Vec<BTreeSet<AgentId>> =
            universe.into_iter().map(|id| BTreeSet::from([id])).collect();
        blocks.sort_by_key(|b| *b.iter().next().expect("nonempty"));
        blocks.dedup();
        Self { blocks }
    }

    pub fn blocks(&self) -> &[BTreeSet<AgentId>] {
        &self.blocks
    }

    pub fn universe(&self) -> BTreeSet<AgentId> {
        self.blocks.iter().flatten().copied().collect()
    }

    pub fn len(&self) -> usize {
        self.blocks.iter().map(BTreeSet::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    /// Number of blocks with at least two members.
    pub fn situation_count(&self) -> usize {
        self.blocks.iter().filter(|b| b.len() >= 2).count()
    }

    pub fn block_of(&self, id: AgentId) -> Option<usize> {
        self.blocks.iter().position(|b| b.contains(&id))
    }

    fn labels(&self) -> BTreeMap<AgentId, usize> {
        self.blocks
            .iter()
            .enumerate()
            .flat_map(|(i, b)| b.iter().map(move |&id| (id, i)))
            .collect()
    }
}

impl fmt::Display for Partition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("{")?;
        for (i, block) in self.blocks.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            f.write_str("{")?;
            for (j, id) in block.iter().enumerate() {
                if j > 0 {
                    f.write_str(",")?;
                }
                write!(f, "{id}")?;
            }
            f.write_str("}")?;
        }
        f.write_str("}")
    }
}

/// Counts over all unordered pairs of agents.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct PairCounts {
    /// Together in both partitions.
    pub n11: u64,
    /// Together only in the first partition.
    pub n10: u64,
    /// Together only in the second partition.
    pub n01: u64,
    /// Apart in both.
    pub n00: u64,
}

impl PairCounts {
    pub fn total(&self) -> u64 {
        self.n11 + self.n10 + self.n01 + self.n00
    }
}

fn choose2(n: u64) -> u64 {
    n * n.saturating_sub(1) / 2
}

struct Contingency {
    n: u64,
    cells: u64,
    rows: u64,
    cols: u64,
}

fn contingency(p: &Partition, q: &Partition) -> Result<Contingency, MetricsError> {
    let q_labels = q.labels();
    if p.len() != q_labels.len() {
        return Err(MetricsError::UniverseMismatch);
    }
    let mut cells: BTreeMap<(usize, usize), u64> = BTreeMap::new();
    let mut rows = 0;
    for (i, block) in p.blocks.iter().enumerate() {
        rows += choose2(block.len() as u64);
        for id in block {
            let j = *q_labels.get(id).ok_or(MetricsError::UniverseMismatch)?;
            *cells.entry((i, j)).or_default() += 1;
        }
    }
    Ok(Contingency {
        n: p.len() as u64,
        cells: cells.values().map(|&c| choose2(c)).sum(),
        rows,
        cols: q.blocks.iter().map(|b| choose2(b.len() as u64)).sum(),
    })
}

pub fn pair_counts(p: &Partition, q: &Partition) -> Result<PairCounts, MetricsError> {
    let c = contingency(p, q)?;
    let n11 = c.cells;
    let n10 = c.rows - n11;
    let n01 = c.cols - n11;
    Ok(PairCounts {
        n11,
        n10,
        n01,
        n00: choose2(c.n) - n11 - n10 - n01,
    })
}

/// Fraction of agent pairs on which both partitions agree. 1 for fewer than two agents.
pub fn rand_index(p: &Partition, q: &Partition) -> Result<f64, MetricsError> {
    let c = pair_counts(p, q)?;
    let total = c.total();
    if total == 0 {
        return Ok(1.0);
    }
    Ok((c.n11 + c.n00) as f64 / total as f64)
}

/// Rand index corrected for chance. 0/0 (for example two all-singleton
/// partitions) counts as perfect agreement.
pub fn adjusted_rand_index(p: &Partition, q: &Partition) -> Result<f64, MetricsError> {
    let c = contingency(p, q)?;
    let total = choose2(c.n) as f64;
    if total == 0.0 {
        return Ok(1.0);
    }
    let (index, rows, cols) = (c.cells as f64, c.rows as f64, c.cols as f64);
    let expected = rows * cols / total;
    let max = 0.5 * (rows + cols);
    let denom = max - expected;
    if denom == 0.0 {
        return Ok(1.0);
    }
    Ok((index - expected) / denom)
}

/// `n11 / (n11 + n10 + n01)`; 1 when no pair is co-clustered in either partition.
pub fn jaccard_index(p: &Partition, q: &Partition) -> Result<f64, MetricsError> {
    let c = pair_counts(p, q)?;
    let denom = c.n11 + c.n10 + c.n01;
    if denom == 0 {
        return Ok(1.0);
    }
    Ok(c.n11 as f64 / denom as f64)
}

/// Arithmetic mean and population standard deviation.
pub fn series_summary(values: &[f64]) -> Result<(f64, f64), MetricsError> {
    if values.is_empty() {
        return Err(MetricsError::EmptySeries);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    Ok((mean, var.sqrt()))
}

/// All per-frame figures reported for one sampling instant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameScores {
    pub rand: f64,
    pub ari: f64,
    pub jaccard: f64,
    pub situations_truth: usize,
    pub situations_protocol: usize,
    /// Pairs grouped by the protocol but not in the ground truth.
    pub false_positive_pairs: u64,
}

pub fn score_frame(truth: &Partition, protocol: &Partition) -> Result<FrameScores, MetricsError> {
    let counts = pair_counts(truth, protocol)?;
    Ok(FrameScores {
        rand: rand_index(truth, protocol)?,
        ari: adjusted_rand_index(truth, protocol)?,
        jaccard: jaccard_index(truth, protocol)?,
        situations_truth: truth.situation_count(),
        situations_protocol: protocol.situation_count(),
        false_positive_pairs: counts.n01,
    })
}
