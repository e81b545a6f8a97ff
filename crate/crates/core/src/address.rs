//! Two-level block addressing and delta arithmetic.
//!
//! A block is identified by `(table, block number)`. For prediction, runs of
//! `lb_size` native blocks are grouped into one logical block, and a query's
//! accessed set is described relative to a single reference address taken
//! from the previous query.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Index into a [`crate::trace::TableCatalog`].
pub type TableId = u16;

/// Native block address: the table and the block part of the tuple pointer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TableLba {
    pub table_id: TableId,
    pub block_no: u64,
}

impl TableLba {
    pub fn new(table_id: TableId, block_no: u64) -> Self {
        Self { table_id, block_no }
    }
}

impl fmt::Display for TableLba {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.table_id, self.block_no)
    }
}

/// Group of `lb_size` consecutive native blocks of one table.
///
/// Ordering is lexicographic on `(table_id, logical_no)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct LogicalLba {
    pub table_id: TableId,
    pub logical_no: u64,
}

impl LogicalLba {
    pub fn new(table_id: TableId, logical_no: u64) -> Self {
        Self { table_id, logical_no }
    }

    /// Native block range `[start, end)` covered by this logical block, clipped
    /// to a table of `table_blocks` native blocks.
    pub fn native_range(&self, lb_size: u64, table_blocks: u64) -> std::ops::Range<u64> {
        let start = self.logical_no.saturating_mul(lb_size);
        let end = start.saturating_add(lb_size).min(table_blocks);
        start.min(end)..end
    }
}

impl fmt::Display for LogicalLba {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, L{})", self.table_id, self.logical_no)
    }
}

/// Signed offset to a target table, in logical-block units.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TableDelta {
    pub target_table_id: TableId,
    pub offset: i64,
}

impl TableDelta {
    pub fn new(target_table_id: TableId, offset: i64) -> Self {
        Self { target_table_id, offset }
    }
}

/// Order-agnostic delta set of one query relative to a reference address.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeltaSet {
    pub reference: LogicalLba,
    pub members: BTreeSet<TableDelta>,
}

impl DeltaSet {
    /// Offsets with table identifiers stripped.
    pub fn offsets(&self) -> BTreeSet<i64> {
        self.members.iter().map(|d| d.offset).collect()
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }
}

/// Which element of the previous query's sorted address set anchors the deltas.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ReferenceStrategy {
    #[default]
    Min,
    Median,
    Max,
}

impl ReferenceStrategy {
    pub const ALL: [ReferenceStrategy; 3] = [ReferenceStrategy::Min, ReferenceStrategy::Median, ReferenceStrategy::Max];

    pub fn as_str(&self) -> &'static str {
        match self {
            ReferenceStrategy::Min => "min",
            ReferenceStrategy::Median => "median",
            ReferenceStrategy::Max => "max",
        }
    }
}

impl std::str::FromStr for ReferenceStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "min" => Ok(ReferenceStrategy::Min),
            "median" => Ok(ReferenceStrategy::Median),
            "max" => Ok(ReferenceStrategy::Max),
            other => Err(Error::InvalidArgument(format!("unknown reference strategy '{other}'"))),
        }
    }
}

impl fmt::Display for ReferenceStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Maps a native address onto its logical block.
pub fn to_logical(addr: TableLba, lb_size: u64) -> LogicalLba {
    assert!(lb_size >= 1, "lb_size must be positive");
    LogicalLba::new(addr.table_id, addr.block_no / lb_size)
}

/// Logical blocks covering a set of native addresses, duplicates collapsed.
pub fn to_logical_set<'a, I>(blocks: I, lb_size: u64) -> BTreeSet<LogicalLba>
where
    I: IntoIterator<Item = &'a TableLba>,
{
    blocks.into_iter().map(|b| to_logical(*b, lb_size)).collect()
}

/// Differences between neighbouring addresses of a flat sequence.
pub fn consecutive_deltas(seq: &[i64]) -> Vec<i64> {
    seq.windows(2).map(|w| w[1] - w[0]).collect()
}

/// Picks the anchor of `prev` under `strategy`. The median is the lower median.
pub fn reference_lba(prev: &BTreeSet<LogicalLba>, strategy: ReferenceStrategy) -> Result<LogicalLba> {
    let n = prev.len();
    if n == 0 {
        return Err(Error::NoReference);
    }
    let picked = match strategy {
        ReferenceStrategy::Min => prev.iter().next(),
        ReferenceStrategy::Max => prev.iter().next_back(),
        ReferenceStrategy::Median => prev.iter().nth((n - 1) / 2),
    };
    Ok(*picked.expect("non-empty set"))
}

/// Describes `cur` relative to the reference address chosen from `prev`.
pub fn delta_set(
    prev: &BTreeSet<LogicalLba>,
    cur: &BTreeSet<LogicalLba>,
    strategy: ReferenceStrategy,
) -> Result<DeltaSet> {
    let reference = reference_lba(prev, strategy)?;
    let members = cur
        .iter()
        .map(|lba| TableDelta::new(lba.table_id, lba.logical_no as i64 - reference.logical_no as i64))
        .collect();
    Ok(DeltaSet { reference, members })
}

/// Resolves a delta against `reference`. `logical_blocks(t)` gives the number of
/// logical blocks of table `t`, or `None` when the table does not exist.
pub fn apply_delta<F>(reference: LogicalLba, d: TableDelta, logical_blocks: F) -> Result<LogicalLba>
where
    F: Fn(TableId) -> Option<u64>,
{
    let limit = logical_blocks(d.target_table_id).ok_or(Error::OutOfRange {
        table_id: d.target_table_id,
        logical_no: reference.logical_no as i128 + d.offset as i128,
    })?;
    let target = reference.logical_no as i128 + d.offset as i128;
    if target < 0 || target >= limit as i128 {
        return Err(Error::OutOfRange { table_id: d.target_table_id, logical_no: target });
    }
    Ok(LogicalLba::new(d.target_table_id, target as u64))
}

/// Inverse of [`delta_set`].
pub fn reconstruct<F>(ds: &DeltaSet, logical_blocks: F) -> Result<BTreeSet<LogicalLba>>
where
    F: Fn(TableId) -> Option<u64>,
{
    ds.members.iter().map(|d| apply_delta(ds.reference, *d, &logical_blocks)).collect()
}

/// Number of logical blocks needed to cover `blocks` native blocks.
pub fn logical_count(blocks: u64, lb_size: u64) -> u64 {
    blocks.div_ceil(lb_size)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const A: TableId = 0;
    const B: TableId = 1;

    fn set(items: &[(TableId, u64)]) -> BTreeSet<LogicalLba> {
        items.iter().map(|&(t, l)| LogicalLba::new(t, l)).collect()
    }

    fn unbounded(_: TableId) -> Option<u64> {
        Some(u64::MAX / 4)
    }

    #[test]
    fn logical_grouping() {
        assert_eq!(to_logical(TableLba::new(A, 70), 32), LogicalLba::new(A, 2));
        assert_eq!(to_logical(TableLba::new(B, 0), 32), LogicalLba::new(B, 0));
        assert_eq!(to_logical(TableLba::new(A, 31), 1), LogicalLba::new(A, 31));
    }

    #[test]
    fn consecutive() {
        assert_eq!(consecutive_deltas(&[5, 7, 4]), vec![2, -3]);
        assert!(consecutive_deltas(&[9]).is_empty());
        assert!(consecutive_deltas(&[]).is_empty());
        assert_eq!(consecutive_deltas(&[0, 0, 0]), vec![0, 0]);
    }

    #[test]
    fn reference_strategies() {
        let prev = set(&[(A, 3), (A, 5), (B, 1)]);
        assert_eq!(reference_lba(&prev, ReferenceStrategy::Min).unwrap(), LogicalLba::new(A, 3));
        assert_eq!(reference_lba(&prev, ReferenceStrategy::Max).unwrap(), LogicalLba::new(B, 1));
        assert_eq!(reference_lba(&prev, ReferenceStrategy::Median).unwrap(), LogicalLba::new(A, 5));
        assert!(matches!(reference_lba(&BTreeSet::new(), ReferenceStrategy::Min), Err(Error::NoReference)));
    }

    #[test]
    fn delta_set_examples() {
        let ds = delta_set(&set(&[(A, 3), (A, 5)]), &set(&[(A, 4), (B, 2)]), ReferenceStrategy::Min).unwrap();
        assert_eq!(ds.reference, LogicalLba::new(A, 3));
        let expected: BTreeSet<_> = [TableDelta::new(A, 1), TableDelta::new(B, -1)].into_iter().collect();
        assert_eq!(ds.members, expected);

        let ds = delta_set(&set(&[(A, 7)]), &set(&[(A, 7)]), ReferenceStrategy::Min).unwrap();
        assert_eq!(ds.members.into_iter().collect::<Vec<_>>(), vec![TableDelta::new(A, 0)]);

        let ds = delta_set(&set(&[(A, 3)]), &BTreeSet::new(), ReferenceStrategy::Min).unwrap();
        assert!(ds.is_empty());

        assert!(delta_set(&BTreeSet::new(), &set(&[(A, 1)]), ReferenceStrategy::Min).is_err());
    }

    #[test]
    fn apply_examples() {
        let r = LogicalLba::new(A, 3);
        assert_eq!(apply_delta(r, TableDelta::new(B, -1), unbounded).unwrap(), LogicalLba::new(B, 2));
        assert_eq!(apply_delta(r, TableDelta::new(A, 0), unbounded).unwrap(), r);
        let err = apply_delta(LogicalLba::new(A, 0), TableDelta::new(B, -5), unbounded);
        assert!(matches!(err, Err(Error::OutOfRange { .. })));
        // upper bound
        let err = apply_delta(r, TableDelta::new(A, 7), |_| Some(10));
        assert!(matches!(err, Err(Error::OutOfRange { .. })));
    }

    #[test]
    fn reconstruct_examples() {
        let ds = DeltaSet {
            reference: LogicalLba::new(A, 3),
            members: [TableDelta::new(A, 1), TableDelta::new(B, -1)].into_iter().collect(),
        };
        assert_eq!(reconstruct(&ds, unbounded).unwrap(), set(&[(A, 4), (B, 2)]));
        let empty = DeltaSet { reference: LogicalLba::new(A, 3), members: BTreeSet::new() };
        assert!(reconstruct(&empty, unbounded).unwrap().is_empty());
    }

    #[test]
    fn native_range_clips_last_group() {
        assert_eq!(LogicalLba::new(A, 2).native_range(32, 70), 64..70);
        assert_eq!(LogicalLba::new(A, 0).native_range(4, 100), 0..4);
    }

    fn lba_set() -> impl Strategy<Value = BTreeSet<LogicalLba>> {
        proptest::collection::btree_set((0u16..4, 0u64..500).prop_map(|(t, l)| LogicalLba::new(t, l)), 0..20)
    }

    proptest! {
        #[test]
        fn round_trip_all_strategies(prev in lba_set(), cur in lba_set()) {
            prop_assume!(!prev.is_empty());
            let mut rebuilt = Vec::new();
            for s in ReferenceStrategy::ALL {
                let ds = delta_set(&prev, &cur, s).unwrap();
                prop_assert_eq!(ds.len(), cur.len());
                let back = reconstruct(&ds, |_| Some(500)).unwrap();
                prop_assert_eq!(&back, &cur);
                rebuilt.push(back);
            }
            prop_assert!(rebuilt.windows(2).all(|w| w[0] == w[1]));
        }

        #[test]
        fn to_logical_monotone(a in 0u64..100_000, b in 0u64..100_000, lb in 1u64..128) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(to_logical(TableLba::new(0, lo), lb) <= to_logical(TableLba::new(0, hi), lb));
        }
    }
}
