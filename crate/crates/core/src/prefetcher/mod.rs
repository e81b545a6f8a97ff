//! Prefetch policies and their decisions.

mod baselines;
mod grasp;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::address::{LogicalLba, TableId};
use crate::error::Result;
use crate::trace::{QueryRecord, TableCatalog};

pub use baselines::{LookAhead, NaiveDelta, NoPrefetch, Oracle, RandomReadAhead};
pub use grasp::{Grasp, GraspConfig, GraspParts};

/// A maximal run of consecutive logical blocks in one table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockRange {
    pub table_id: TableId,
    pub start: u64,
    pub len: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PrefetchDecision {
    /// Highest priority first, no duplicates.
    pub candidates: Vec<LogicalLba>,
    /// Runs covering `candidates`, ordered by the priority of their best member.
    pub ranges: Vec<BlockRange>,
}

impl PrefetchDecision {
    pub fn empty() -> Self {
        Self::default()
    }

    /// Deduplicates (first occurrence wins) and coalesces.
    pub fn from_candidates<I: IntoIterator<Item = LogicalLba>>(cands: I) -> Self {
        let mut seen = BTreeSet::new();
        let candidates: Vec<LogicalLba> = cands.into_iter().filter(|c| seen.insert(*c)).collect();
        let rank: BTreeMap<LogicalLba, usize> = candidates.iter().enumerate().map(|(i, c)| (*c, i)).collect();
        let mut runs: Vec<(usize, BlockRange)> = Vec::new();
        let mut cur: Option<(usize, BlockRange)> = None;
        for (lba, r) in &rank {
            match &mut cur {
                Some((best, run)) if run.table_id == lba.table_id && run.start + run.len == lba.logical_no => {
                    run.len += 1;
                    *best = (*best).min(*r);
                }
                _ => {
                    runs.extend(cur.take());
                    cur = Some((*r, BlockRange { table_id: lba.table_id, start: lba.logical_no, len: 1 }));
                }
            }
        }
        runs.extend(cur);
        runs.sort_by_key(|(best, _)| *best);
        Self { candidates, ranges: runs.into_iter().map(|(_, r)| r).collect() }
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }

    /// Native blocks the decision would fetch.
    pub fn native_blocks(&self, catalog: &TableCatalog) -> u64 {
        self.candidates.iter().map(|c| native_len(*c, catalog)).sum()
    }

    /// Keeps the longest prefix of candidates whose native size fits `budget`.
    pub fn truncated(self, catalog: &TableCatalog, budget: u64) -> Self {
        let mut used = 0;
        let mut keep = Vec::new();
        for c in self.candidates {
            let n = native_len(c, catalog);
            if used + n > budget {
                break;
            }
            used += n;
            keep.push(c);
        }
        Self::from_candidates(keep)
    }
}

fn native_len(c: LogicalLba, catalog: &TableCatalog) -> u64 {
    let blocks = catalog.block_count(c.table_id).unwrap_or(0);
    let r = c.native_range(catalog.lb_size, blocks);
    r.end.saturating_sub(r.start)
}

/// How `k` converts into a native-block budget.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BudgetUnits {
    Blocks,
    #[default]
    X128,
}

impl BudgetUnits {
    pub fn budget(self, k: u64) -> u64 {
        match self {
            BudgetUnits::Blocks => k,
            BudgetUnits::X128 => k.saturating_mul(128),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            BudgetUnits::Blocks => "blocks",
            BudgetUnits::X128 => "x128",
        }
    }
}

impl std::str::FromStr for BudgetUnits {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "blocks" => Ok(BudgetUnits::Blocks),
            "x128" => Ok(BudgetUnits::X128),
            _ => Err(format!("unknown budget unit '{s}' (expected blocks or x128)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PolicyKind {
    Np,
    Oracle,
    La,
    Naive,
    Randr,
    Grasp,
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 6] =
        [PolicyKind::Np, PolicyKind::Oracle, PolicyKind::La, PolicyKind::Naive, PolicyKind::Randr, PolicyKind::Grasp];

    pub fn as_str(self) -> &'static str {
        match self {
            PolicyKind::Np => "np",
            PolicyKind::Oracle => "oracle",
            PolicyKind::La => "la",
            PolicyKind::Naive => "naive",
            PolicyKind::Randr => "randr",
            PolicyKind::Grasp => "grasp",
        }
    }
}

impl std::str::FromStr for PolicyKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        PolicyKind::ALL
            .into_iter()
            .find(|p| p.as_str() == s)
            .ok_or_else(|| format!("unknown policy '{s}' (expected np, oracle, la, naive, randr or grasp)"))
    }
}

/// What a policy sees when asked for a decision.
#[derive(Debug, Clone, Copy)]
pub struct DecideInput<'a> {
    /// Catalog with sizes as of the last observed query.
    pub catalog: &'a TableCatalog,
    pub budget: u64,
    /// The upcoming query; only the oracle may look at it.
    pub next: Option<&'a QueryRecord>,
}

/// Outcome of a tuning hook invocation.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TuneEvent {
    pub at_query: u64,
    pub remapped: Vec<crate::vocab::Remap>,
    pub fine_tuned: bool,
    pub drift: Vec<crate::encoding::DriftEvent>,
}

pub trait Policy {
    fn name(&self) -> &'static str;

    /// Called once per query after its demand accesses.
    fn observe(&mut self, q: &QueryRecord, catalog: &TableCatalog) -> Result<()>;

    fn decide(&mut self, input: &DecideInput) -> Result<PrefetchDecision>;

    /// Periodic online tuning; most policies have nothing to do.
    fn tune(&mut self, _catalog: &TableCatalog, _at_query: u64) -> Result<Option<TuneEvent>> {
        Ok(None)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn l(t: TableId, n: u64) -> LogicalLba {
        LogicalLba::new(t, n)
    }

    #[test]
    fn coalesce_runs_by_priority() {
        let d = PrefetchDecision::from_candidates([l(0, 5), l(1, 2), l(0, 4), l(0, 6), l(0, 5), l(1, 3), l(0, 9)]);
        assert_eq!(d.candidates, vec![l(0, 5), l(1, 2), l(0, 4), l(0, 6), l(1, 3), l(0, 9)]);
        assert_eq!(
            d.ranges,
            vec![
                BlockRange { table_id: 0, start: 4, len: 3 },
                BlockRange { table_id: 1, start: 2, len: 2 },
                BlockRange { table_id: 0, start: 9, len: 1 },
            ]
        );
        let covered: u64 = d.ranges.iter().map(|r| r.len).sum();
        assert_eq!(covered, d.candidates.len() as u64);
    }

    #[test]
    fn truncation_keeps_whole_logical_blocks() {
        use crate::trace::{ColumnKind, ColumnSpec, TableSpec};
        let spec = |name: &str, blocks| TableSpec {
            name: name.into(),
            block_count: blocks,
            columns: vec![ColumnSpec { name: "n0".into(), kind: ColumnKind::Numeric }],
        };
        let cat = TableCatalog::new(vec![spec("a", 70)], 32).unwrap();
        // logical blocks 0, 1 are full (32 each); block 2 holds 6
        let d = PrefetchDecision::from_candidates([l(0, 2), l(0, 0), l(0, 1)]);
        assert_eq!(d.native_blocks(&cat), 70);
        let t = d.clone().truncated(&cat, 40);
        assert_eq!(t.candidates, vec![l(0, 2), l(0, 0)]);
        assert!(t.native_blocks(&cat) <= 40);
        assert!(d.truncated(&cat, 5).is_empty());
    }

    #[test]
    fn units() {
        assert_eq!(BudgetUnits::X128.budget(50), 6400);
        assert_eq!(BudgetUnits::Blocks.budget(50), 50);
        assert_eq!("grasp".parse::<PolicyKind>().unwrap(), PolicyKind::Grasp);
        assert!("lru".parse::<PolicyKind>().is_err());
    }
}
