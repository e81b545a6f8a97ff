//! Per-query context vectors, delta-count buckets and training samples.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::address::{delta_set, reference_lba, to_logical_set, DeltaSet, LogicalLba, ReferenceStrategy};
use crate::encoding::{BlockEncoders, StatementRepr};
use crate::trace::{QueryRecord, TableCatalog};
use crate::vocab::{encode_bi_delta, DeltaVocabulary};

pub const DEFAULT_COUNT_BUCKETS: usize = 16;

/// Bucket 0 holds count 0; bucket `b >= 1` holds `[2^(b-1), 2^b)`, with the
/// last bucket open-ended.
pub fn count_bucket(count: usize, buckets: usize) -> usize {
    if count == 0 {
        return 0;
    }
    let b = (usize::BITS - count.leading_zeros()) as usize;
    b.min(buckets - 1)
}

/// Inclusive count range of a bucket; the last bucket reports its lower bound twice.
pub fn bucket_bounds(bucket: usize, buckets: usize) -> (usize, usize) {
    if bucket == 0 {
        return (0, 0);
    }
    let lo = 1usize << (bucket - 1);
    if bucket + 1 >= buckets {
        (lo, lo)
    } else {
        (lo, (lo << 1) - 1)
    }
}

/// Geometric midpoint of the counts a bucket covers.
pub fn bucket_midpoint(bucket: usize, buckets: usize) -> f64 {
    let (lo, hi) = bucket_bounds(bucket, buckets);
    ((lo * hi) as f64).sqrt()
}

pub fn one_hot(index: usize, len: usize) -> Vec<f64> {
    let mut v = vec![0.0; len];
    if index < len {
        v[index] = 1.0;
    }
    v
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryContext {
    /// `|TB| x enc_dim`, row-major.
    pub result_enc: Vec<f64>,
    pub stmt: Vec<f64>,
    pub bi_delta: Vec<f64>,
    pub count_onehot: Vec<f64>,
    pub min_table_onehot: Vec<f64>,
    /// Tables that contributed result blocks; fed to the table head.
    pub tables: Vec<f64>,
}

/// Inputs the heads take besides the recurrent state: the last query's count
/// one-hot, table bitmap and binary delta.
#[derive(Debug, Clone, PartialEq)]
pub struct Extras<'a> {
    pub count_onehot: &'a [f64],
    pub tables: &'a [f64],
    pub bi_delta: &'a [f64],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Targets {
    pub tables: Vec<f64>,
    pub deltas: Vec<f64>,
    pub count_bucket: usize,
}

/// One training example: the window ends at context `last`; earlier slots
/// before the start of the stream are `None` (zero contexts).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub window: Vec<Option<usize>>,
    pub targets: Targets,
}

impl Sample {
    pub fn last(&self) -> Option<usize> {
        *self.window.last().expect("lookback >= 1")
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub contexts: Vec<QueryContext>,
    pub samples: Vec<Sample>,
}

impl Dataset {
    pub fn window(&self, s: &Sample) -> Vec<Option<&QueryContext>> {
        s.window.iter().map(|i| i.map(|i| &self.contexts[i])).collect()
    }

    /// Keeps only the listed samples (contexts are shared).
    pub fn subset(&self, idx: &[usize]) -> Dataset {
        Dataset { contexts: self.contexts.clone(), samples: idx.iter().map(|i| self.samples[*i].clone()).collect() }
    }
}

/// Streams queries into contexts. Holds the previous non-empty logical set,
/// which anchors each delta set.
#[derive(Debug, Clone)]
pub struct ContextBuilder {
    pub tables: usize,
    pub lb_size: u64,
    pub strategy: ReferenceStrategy,
    pub count_buckets: usize,
    prev: Option<BTreeSet<LogicalLba>>,
}

/// What a query contributed, besides its context.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub delta_set: Option<DeltaSet>,
    pub logical: BTreeSet<LogicalLba>,
}

impl ContextBuilder {
    pub fn new(tables: usize, lb_size: u64, strategy: ReferenceStrategy, count_buckets: usize) -> Self {
        Self { tables, lb_size, strategy, count_buckets, prev: None }
    }

    /// Logical set of the last query that touched blocks.
    pub fn previous(&self) -> Option<&BTreeSet<LogicalLba>> {
        self.prev.as_ref()
    }

    pub fn reference(&self) -> Option<LogicalLba> {
        self.prev.as_ref().and_then(|p| reference_lba(p, self.strategy).ok())
    }

    /// Delta set of `q` against the current anchor, without consuming `q`.
    pub fn peek_delta_set(&self, q: &QueryRecord) -> Option<DeltaSet> {
        let cur = to_logical_set(&q.result_blocks, self.lb_size);
        match &self.prev {
            Some(prev) if !cur.is_empty() => delta_set(prev, &cur, self.strategy).ok(),
            _ => None,
        }
    }

    pub fn targets(&self, q: &QueryRecord, vocab: &DeltaVocabulary) -> Targets {
        let ds = self.peek_delta_set(q);
        let offsets = ds.as_ref().map(DeltaSet::offsets).unwrap_or_default();
        let mut tables = vec![0.0; self.tables];
        for t in q.block_tables() {
            tables[t as usize] = 1.0;
        }
        Targets {
            tables,
            deltas: encode_bi_delta(&offsets, vocab),
            count_bucket: count_bucket(ds.map_or(0, |d| d.len()), self.count_buckets),
        }
    }

    pub fn push(
        &mut self,
        q: &QueryRecord,
        catalog: &TableCatalog,
        encoders: &mut BlockEncoders,
        vocab: &DeltaVocabulary,
    ) -> (QueryContext, Observation) {
        let cur = to_logical_set(&q.result_blocks, self.lb_size);
        let ds = self.peek_delta_set(q);
        let offsets = ds.as_ref().map(DeltaSet::offsets).unwrap_or_default();
        let mut tables = vec![0.0; self.tables];
        for t in q.block_tables() {
            tables[t as usize] = 1.0;
        }
        let min_table = cur.iter().next().map_or(self.tables, |l| l.table_id as usize);
        let ctx = QueryContext {
            result_enc: encoders.result_encoding(catalog, q).values,
            stmt: encoders.statement(q, self.tables).values,
            bi_delta: encode_bi_delta(&offsets, vocab),
            count_onehot: one_hot(
                count_bucket(ds.as_ref().map_or(0, |d| d.len()), self.count_buckets),
                self.count_buckets,
            ),
            min_table_onehot: one_hot(min_table, self.tables),
            tables,
        };
        debug_assert_eq!(ctx.stmt.len(), StatementRepr::len_for(self.tables));
        if !cur.is_empty() {
            self.prev = Some(cur.clone());
        }
        (ctx, Observation { delta_set: ds, logical: cur })
    }
}

/// Builds contexts for every query and one sample per query transition
/// (context window ending at query `i`, targets from query `i + 1`).
pub fn build_dataset(
    queries: &[QueryRecord],
    catalog: &TableCatalog,
    encoders: &mut BlockEncoders,
    vocab: &DeltaVocabulary,
    builder: &mut ContextBuilder,
    lookback: usize,
) -> (Dataset, Vec<Option<DeltaSet>>) {
    let mut data = Dataset::default();
    let mut delta_sets = Vec::with_capacity(queries.len());
    for (i, q) in queries.iter().enumerate() {
        if i > 0 {
            let targets = builder.targets(q, vocab);
            let last = i - 1;
            let window = (0..lookback).rev().map(|k| last.checked_sub(k)).collect();
            data.samples.push(Sample { window, targets });
        }
        let (ctx, obs) = builder.push(q, catalog, encoders, vocab);
        data.contexts.push(ctx);
        delta_sets.push(obs.delta_set);
    }
    (data, delta_sets)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bucket_edges() {
        assert_eq!(count_bucket(0, 16), 0);
        assert_eq!(count_bucket(1, 16), 1);
        assert_eq!(count_bucket(2, 16), 2);
        assert_eq!(count_bucket(3, 16), 2);
        assert_eq!(count_bucket(4, 16), 3);
        assert_eq!(count_bucket(1 << 20, 16), 15);
        for c in 1..5000 {
            let b = count_bucket(c, 16);
            let (lo, hi) = bucket_bounds(b, 16);
            assert!(c >= lo && (b == 15 || c <= hi), "{c} in bucket {b} = [{lo}, {hi}]");
        }
    }

    #[test]
    fn midpoints() {
        assert_eq!(bucket_midpoint(0, 16), 0.0);
        assert_eq!(bucket_midpoint(1, 16), 1.0);
        assert!((bucket_midpoint(3, 16) - (4.0f64 * 7.0).sqrt()).abs() < 1e-12);
        assert_eq!(bucket_midpoint(15, 16), (1u64 << 14) as f64);
    }
}
