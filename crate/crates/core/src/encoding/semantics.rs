//! Query semantics: per-table aggregated result encodings and the fixed-layout
//! statement representation.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::address::{TableId, TableLba};
use crate::encoding::text::embed_text;
use crate::trace::QueryRecord;

/// Width of each per-table condition embedding.
pub const CONDITION_DIM: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aggregation {
    #[default]
    Mean,
    Sum,
    Max,
}

impl std::str::FromStr for Aggregation {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "mean" => Ok(Aggregation::Mean),
            "sum" => Ok(Aggregation::Sum),
            "max" => Ok(Aggregation::Max),
            _ => Err(format!("unknown aggregation '{s}'")),
        }
    }
}

impl Aggregation {
    pub fn as_str(self) -> &'static str {
        match self {
            Aggregation::Mean => "mean",
            Aggregation::Sum => "sum",
            Aggregation::Max => "max",
        }
    }
}

/// Which statement features are kept. `Simple` keeps type and tables only;
/// `None` zeroes the whole statement part.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SemanticsMode {
    #[default]
    Full,
    Simple,
    None,
}

impl std::str::FromStr for SemanticsMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "full" => Ok(SemanticsMode::Full),
            "simple" => Ok(SemanticsMode::Simple),
            "none" => Ok(SemanticsMode::None),
            _ => Err(format!("unknown semantics mode '{s}'")),
        }
    }
}

impl SemanticsMode {
    pub fn as_str(self) -> &'static str {
        match self {
            SemanticsMode::Full => "full",
            SemanticsMode::Simple => "simple",
            SemanticsMode::None => "none",
        }
    }
}

/// `|TB| x enc_dim` matrix, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryResultEncoding {
    pub tables: usize,
    pub enc_dim: usize,
    pub values: Vec<f64>,
}

impl QueryResultEncoding {
    pub fn zeros(tables: usize, enc_dim: usize) -> Self {
        Self { tables, enc_dim, values: vec![0.0; tables * enc_dim] }
    }

    pub fn row(&self, t: usize) -> &[f64] {
        &self.values[t * self.enc_dim..(t + 1) * self.enc_dim]
    }
}

/// Aggregates block encodings per table. `lookup` must return an encoding for
/// every block in `blocks`; duplicate blocks count once.
pub fn query_result_encoding<F>(
    blocks: &[TableLba],
    tables: usize,
    enc_dim: usize,
    agg: Aggregation,
    mut lookup: F,
) -> QueryResultEncoding
where
    F: FnMut(TableLba) -> Vec<f64>,
{
    let mut out = QueryResultEncoding::zeros(tables, enc_dim);
    let mut per_table: BTreeMap<TableId, Vec<Vec<f64>>> = BTreeMap::new();
    let unique: std::collections::BTreeSet<_> = blocks.iter().copied().collect();
    for b in unique {
        per_table.entry(b.table_id).or_default().push(lookup(b));
    }
    for (t, encs) in per_table {
        let row = &mut out.values[t as usize * enc_dim..(t as usize + 1) * enc_dim];
        match agg {
            Aggregation::Mean | Aggregation::Sum => {
                for e in &encs {
                    for (r, v) in row.iter_mut().zip(e) {
                        *r += v;
                    }
                }
                if agg == Aggregation::Mean {
                    row.iter_mut().for_each(|r| *r /= encs.len() as f64);
                }
            }
            Aggregation::Max => {
                row.copy_from_slice(&encs[0]);
                for e in &encs[1..] {
                    for (r, v) in row.iter_mut().zip(e) {
                        *r = r.max(*v);
                    }
                }
            }
        }
    }
    out
}

/// Layout: query type one-hot (4) | table bitmap (|TB|) | join embeddings
/// (8 per table) | filter embeddings (8 per table).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatementRepr {
    pub values: Vec<f64>,
}

impl StatementRepr {
    pub fn len_for(tables: usize) -> usize {
        4 + tables + 2 * CONDITION_DIM * tables
    }
}

pub fn statement_repr(q: &QueryRecord, tables: usize, mode: SemanticsMode) -> StatementRepr {
    let mut values = vec![0.0; StatementRepr::len_for(tables)];
    if mode == SemanticsMode::None {
        return StatementRepr { values };
    }
    values[q.query_type.index()] = 1.0;
    for (t, on) in q.accessed_tables.iter().enumerate().take(tables) {
        if *on {
            values[4 + t] = 1.0;
        }
    }
    if mode == SemanticsMode::Full {
        let join_base = 4 + tables;
        let filter_base = join_base + CONDITION_DIM * tables;
        for t in 0..tables {
            if let Some(text) = q.join_text.get(t).filter(|s| !s.is_empty()) {
                let e = embed_text(text, CONDITION_DIM);
                values[join_base + t * CONDITION_DIM..join_base + (t + 1) * CONDITION_DIM].copy_from_slice(&e);
            }
            if let Some(text) = q.filter_text.get(t).filter(|s| !s.is_empty()) {
                let e = embed_text(text, CONDITION_DIM);
                values[filter_base + t * CONDITION_DIM..filter_base + (t + 1) * CONDITION_DIM].copy_from_slice(&e);
            }
        }
    }
    StatementRepr { values }
}
