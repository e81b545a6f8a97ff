//! Workload traces: table catalog, per-query records, synthetic generation and
//! the line-oriented trace file format.

mod content;
mod generate;
mod io;

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::address::{self, LogicalLba, TableId, TableLba};
use crate::error::{Error, Result};

pub use content::{block_rows, BlockRow, BlockValue, TEXT_VOCABULARY};
pub use generate::{generate, scale_catalog, Pattern, PatternMix, PatternParams, SyntheticSpec};
pub use io::{load_trace, parse_trace, save_trace, write_trace};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColumnKind {
    Numeric,
    Text,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnSpec {
    pub name: String,
    pub kind: ColumnKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TableSpec {
    pub name: String,
    pub block_count: u64,
    pub columns: Vec<ColumnSpec>,
}

impl TableSpec {
    pub fn numeric_columns(&self) -> usize {
        self.columns.iter().filter(|c| c.kind == ColumnKind::Numeric).count()
    }

    pub fn text_columns(&self) -> usize {
        self.columns.iter().filter(|c| c.kind == ColumnKind::Text).count()
    }
}

/// Tables of a database and the logical grouping width.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TableCatalog {
    pub tables: Vec<TableSpec>,
    pub lb_size: u64,
}

impl TableCatalog {
    pub fn new(tables: Vec<TableSpec>, lb_size: u64) -> Result<Self> {
        if lb_size == 0 {
            return Err(Error::InvalidArgument("lb_size must be positive".into()));
        }
        let mut names = BTreeSet::new();
        for t in &tables {
            if !names.insert(t.name.as_str()) {
                return Err(Error::InvalidArgument(format!("duplicate table name '{}'", t.name)));
            }
            if t.block_count == 0 {
                return Err(Error::InvalidArgument(format!("table '{}' has no blocks", t.name)));
            }
        }
        Ok(Self { tables, lb_size })
    }

    pub fn table_count(&self) -> usize {
        self.tables.len()
    }

    pub fn table_id(&self, name: &str) -> Option<TableId> {
        self.tables.iter().position(|t| t.name == name).map(|i| i as TableId)
    }

    pub fn block_count(&self, table: TableId) -> Option<u64> {
        self.tables.get(table as usize).map(|t| t.block_count)
    }

    pub fn logical_blocks(&self, table: TableId) -> Option<u64> {
        self.block_count(table).map(|n| address::logical_count(n, self.lb_size))
    }

    /// Flat address of `block` when all tables are laid out back to back in
    /// catalog order.
    pub fn flat_address(&self, block: TableLba) -> i64 {
        let base: u64 = self.tables[..block.table_id as usize].iter().map(|t| t.block_count).sum();
        (base + block.block_no) as i64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QueryType {
    Select,
    Insert,
    Update,
    Delete,
}

impl QueryType {
    pub const ALL: [QueryType; 4] = [QueryType::Select, QueryType::Insert, QueryType::Update, QueryType::Delete];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn as_str(self) -> &'static str {
        match self {
            QueryType::Select => "select",
            QueryType::Insert => "insert",
            QueryType::Update => "update",
            QueryType::Delete => "delete",
        }
    }
}

impl std::str::FromStr for QueryType {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        QueryType::ALL.into_iter().find(|t| t.as_str() == s).ok_or_else(|| format!("unknown query type '{s}'"))
    }
}

impl fmt::Display for QueryType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One executed query with the blocks it read or wrote.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryRecord {
    pub query_id: u64,
    pub arrival_ms: f64,
    pub query_type: QueryType,
    pub accessed_tables: Vec<bool>,
    pub join_text: Vec<String>,
    pub filter_text: Vec<String>,
    pub result_blocks: Vec<TableLba>,
}

impl QueryRecord {
    /// A query with no conditions whose table bitmap is derived from `blocks`.
    pub fn from_blocks(query_id: u64, query_type: QueryType, table_count: usize, blocks: Vec<TableLba>) -> Self {
        let mut accessed = vec![false; table_count];
        for b in &blocks {
            accessed[b.table_id as usize] = true;
        }
        Self {
            query_id,
            arrival_ms: 0.0,
            query_type,
            accessed_tables: accessed,
            join_text: vec![String::new(); table_count],
            filter_text: vec![String::new(); table_count],
            result_blocks: blocks,
        }
    }

    /// Distinct native blocks, sorted.
    pub fn unique_blocks(&self) -> Vec<TableLba> {
        let set: BTreeSet<_> = self.result_blocks.iter().copied().collect();
        set.into_iter().collect()
    }

    pub fn logical_set(&self, lb_size: u64) -> BTreeSet<LogicalLba> {
        address::to_logical_set(&self.result_blocks, lb_size)
    }

    /// Tables that hold at least one result block.
    pub fn block_tables(&self) -> BTreeSet<TableId> {
        self.result_blocks.iter().map(|b| b.table_id).collect()
    }
}

/// A catalog together with an ordered query stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Workload {
    pub catalog: TableCatalog,
    pub queries: Vec<QueryRecord>,
    /// Generator program when the workload was synthesized.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub program: Option<SyntheticSpec>,
}

impl Workload {
    pub fn new(catalog: TableCatalog, queries: Vec<QueryRecord>) -> Self {
        Self { catalog, queries, program: None }
    }

    pub fn len(&self) -> usize {
        self.queries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queries.is_empty()
    }

    /// Catalog after replaying every append recorded in the query stream.
    pub fn final_catalog(&self) -> TableCatalog {
        let mut sizes = CatalogState::new(&self.catalog);
        for q in &self.queries {
            sizes.observe(q);
        }
        sizes.to_catalog()
    }

    /// Ordered prefix/suffix split; the prefix holds `floor(len * train_fraction)` queries.
    pub fn split(&self, train_fraction: f64) -> (Workload, Workload) {
        assert!(train_fraction > 0.0 && train_fraction < 1.0, "train_fraction must be in (0, 1)");
        let cut = (self.queries.len() as f64 * train_fraction).floor() as usize;
        let head = Workload::new(self.catalog.clone(), self.queries[..cut].to_vec());
        // the suffix starts from the catalog as grown by the prefix
        let tail = Workload::new(head.final_catalog(), self.queries[cut..].to_vec());
        (head, tail)
    }

    /// Appends `other`'s queries, renumbering ids to keep them increasing.
    pub fn concat(&self, other: &Workload) -> Result<Workload> {
        if self.catalog.tables.len() != other.catalog.tables.len()
            || self.catalog.lb_size != other.catalog.lb_size
            || self.catalog.tables.iter().zip(&other.catalog.tables).any(|(a, b)| a.name != b.name)
        {
            return Err(Error::InvalidArgument("workloads have different catalogs".into()));
        }
        let mut queries = self.queries.clone();
        let next = queries.last().map(|q| q.query_id + 1).unwrap_or(0);
        let last_arrival = queries.last().map(|q| q.arrival_ms).unwrap_or(0.0);
        let first_id = other.queries.first().map(|q| q.query_id).unwrap_or(0);
        queries.extend(other.queries.iter().map(|q| {
            let mut q = q.clone();
            q.query_id = next + (q.query_id - first_id);
            q.arrival_ms += last_arrival;
            q
        }));
        Ok(Workload::new(self.catalog.clone(), queries))
    }
}

/// Live table sizes while replaying a workload; appends grow tables.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CatalogState {
    catalog: TableCatalog,
}

impl CatalogState {
    pub fn new(catalog: &TableCatalog) -> Self {
        Self { catalog: catalog.clone() }
    }

    pub fn observe(&mut self, q: &QueryRecord) {
        for b in &q.result_blocks {
            if let Some(t) = self.catalog.tables.get_mut(b.table_id as usize) {
                if b.block_no >= t.block_count {
                    t.block_count = b.block_no + 1;
                }
            }
        }
    }

    pub fn catalog(&self) -> &TableCatalog {
        &self.catalog
    }

    pub fn to_catalog(&self) -> TableCatalog {
        self.catalog.clone()
    }

    pub fn block_count(&self, t: TableId) -> Option<u64> {
        self.catalog.block_count(t)
    }

    pub fn logical_blocks(&self, t: TableId) -> Option<u64> {
        self.catalog.logical_blocks(t)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn catalog() -> TableCatalog {
        let col = |n: &str| ColumnSpec { name: n.into(), kind: ColumnKind::Numeric };
        TableCatalog::new(
            vec![
                TableSpec { name: "a".into(), block_count: 10, columns: vec![col("x")] },
                TableSpec { name: "b".into(), block_count: 5, columns: vec![col("y")] },
            ],
            1,
        )
        .unwrap()
    }

    fn workload(n: u64) -> Workload {
        let cat = catalog();
        let queries =
            (0..n).map(|i| QueryRecord::from_blocks(i, QueryType::Select, 2, vec![TableLba::new(0, i % 10)])).collect();
        Workload::new(cat, queries)
    }

    #[test]
    fn split_examples() {
        let w = workload(100);
        let (a, b) = w.split(0.9);
        assert_eq!((a.len(), b.len()), (90, 10));
        let one = workload(1);
        let (a, b) = one.split(0.5);
        assert_eq!((a.len(), b.len()), (0, 1));
        let (a, b) = w.split(0.37);
        let mut joined = a.queries.clone();
        joined.extend(b.queries.clone());
        assert_eq!(joined, w.queries);
    }

    #[test]
    fn duplicate_names_rejected() {
        let col = ColumnSpec { name: "x".into(), kind: ColumnKind::Numeric };
        let t = TableSpec { name: "a".into(), block_count: 1, columns: vec![col] };
        assert!(TableCatalog::new(vec![t.clone(), t], 1).is_err());
    }

    #[test]
    fn growth_replay() {
        let mut w = workload(3);
        w.queries.push(QueryRecord::from_blocks(3, QueryType::Insert, 2, vec![TableLba::new(1, 5)]));
        assert_eq!(w.final_catalog().block_count(1), Some(6));
        assert_eq!(w.catalog.block_count(1), Some(5));
    }

    #[test]
    fn flat_addresses_follow_catalog_order() {
        let c = catalog();
        assert_eq!(c.flat_address(TableLba::new(0, 3)), 3);
        assert_eq!(c.flat_address(TableLba::new(1, 3)), 13);
    }

    #[test]
    fn concat_renumbers() {
        let w = workload(3).concat(&workload(2)).unwrap();
        let ids: Vec<_> = w.queries.iter().map(|q| q.query_id).collect();
        assert_eq!(ids, vec![0, 1, 2, 3, 4]);
    }
}
