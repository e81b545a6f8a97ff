//! Deterministic block contents.
//!
//! Numeric columns follow a smooth value-noise walk over the block number so
//! neighbouring blocks hold similar values; text columns draw tokens from a
//! small vocabulary with a drift that also depends on block position.

use crate::address::TableId;
use crate::hash::{mix, unit};
use crate::trace::{ColumnKind, TableCatalog};

pub const TEXT_VOCABULARY: [&str; 12] =
    ["red", "green", "blue", "amber", "north", "south", "east", "west", "alpha", "beta", "gamma", "delta"];

const KNOT_SPACING: u64 = 16;

/// One tuple of a block: numeric values and text values in column order.
#[derive(Debug, Clone, PartialEq)]
pub enum BlockValue {
    Numeric(f64),
    Text(String),
}

pub type BlockRow = Vec<BlockValue>;

fn knot(seed: u64, table: TableId, col: usize, k: u64) -> f64 {
    unit(mix(&[seed, table as u64, col as u64, k, 0x6b6e]))
}

fn numeric(seed: u64, table: TableId, col: usize, block_no: u64, row: usize) -> f64 {
    let k = block_no / KNOT_SPACING;
    let frac = (block_no % KNOT_SPACING) as f64 / KNOT_SPACING as f64;
    let smooth = frac * frac * (3.0 - 2.0 * frac);
    let a = knot(seed, table, col, k);
    let b = knot(seed, table, col, k + 1);
    let walk = a + (b - a) * smooth;
    let noise = unit(mix(&[seed, table as u64, col as u64, block_no, row as u64, 0x6e6f])) - 0.5;
    let scale = 10f64.powi(col as i32 % 4);
    (walk * 100.0 + noise * 2.0 + block_no as f64 * 0.01) * scale
}

fn text(seed: u64, table: TableId, col: usize, block_no: u64, row: usize) -> String {
    let region = block_no / (KNOT_SPACING * 4);
    let h = mix(&[seed, table as u64, col as u64, block_no, row as u64, 0x7478]);
    let base = mix(&[seed, table as u64, col as u64, region]) as usize;
    let jitter = (h % 3) as usize;
    TEXT_VOCABULARY[(base + jitter) % TEXT_VOCABULARY.len()].to_string()
}

/// Tuples stored in `block_no` of `table`.
pub fn block_rows(
    catalog: &TableCatalog,
    seed: u64,
    table: TableId,
    block_no: u64,
    rows_per_block: usize,
) -> Vec<BlockRow> {
    let spec = &catalog.tables[table as usize];
    (0..rows_per_block)
        .map(|row| {
            spec.columns
                .iter()
                .enumerate()
                .map(|(col, c)| match c.kind {
                    ColumnKind::Numeric => BlockValue::Numeric(numeric(seed, table, col, block_no, row)),
                    ColumnKind::Text => BlockValue::Text(text(seed, table, col, block_no, row)),
                })
                .collect()
        })
        .collect()
}
