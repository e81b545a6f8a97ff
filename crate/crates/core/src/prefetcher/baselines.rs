//! Traditional prefetchers and the two bounds (no prefetching, oracle).

use std::collections::{BTreeMap, BTreeSet};

use super::{DecideInput, Policy, PrefetchDecision};
use crate::address::{to_logical, LogicalLba, TableId};
use crate::error::Result;
use crate::trace::{QueryRecord, TableCatalog};

#[derive(Debug, Clone, Default)]
pub struct NoPrefetch;

impl Policy for NoPrefetch {
    fn name(&self) -> &'static str {
        "np"
    }

    fn observe(&mut self, _q: &QueryRecord, _catalog: &TableCatalog) -> Result<()> {
        Ok(())
    }

    fn decide(&mut self, _input: &DecideInput) -> Result<PrefetchDecision> {
        Ok(PrefetchDecision::empty())
    }
}

/// Fetches exactly the next query's logical blocks.
#[derive(Debug, Clone, Default)]
pub struct Oracle;

impl Policy for Oracle {
    fn name(&self) -> &'static str {
        "oracle"
    }

    fn observe(&mut self, _q: &QueryRecord, _catalog: &TableCatalog) -> Result<()> {
        Ok(())
    }

    fn decide(&mut self, input: &DecideInput) -> Result<PrefetchDecision> {
        let Some(next) = input.next else { return Ok(PrefetchDecision::empty()) };
        let lb = input.catalog.lb_size;
        let in_range = |l: &LogicalLba| input.catalog.logical_blocks(l.table_id).is_some_and(|n| l.logical_no < n);
        let cands: Vec<LogicalLba> = next.result_blocks.iter().map(|b| to_logical(*b, lb)).filter(in_range).collect();
        Ok(PrefetchDecision::from_candidates(cands).truncated(input.catalog, input.budget))
    }
}

/// The `k` logical blocks after the last one accessed, within its table.
#[derive(Debug, Clone)]
pub struct LookAhead {
    pub k: u64,
    last: Option<LogicalLba>,
}

impl LookAhead {
    pub fn new(k: u64) -> Self {
        Self { k, last: None }
    }
}

impl Policy for LookAhead {
    fn name(&self) -> &'static str {
        "la"
    }

    fn observe(&mut self, q: &QueryRecord, catalog: &TableCatalog) -> Result<()> {
        if let Some(b) = q.result_blocks.last() {
            self.last = Some(to_logical(*b, catalog.lb_size));
        }
        Ok(())
    }

    fn decide(&mut self, input: &DecideInput) -> Result<PrefetchDecision> {
        let Some(last) = self.last else { return Ok(PrefetchDecision::empty()) };
        let limit = input.catalog.logical_blocks(last.table_id).unwrap_or(0);
        let end = (last.logical_no + 1).saturating_add(self.k).min(limit);
        let cands = (last.logical_no + 1..end).map(|n| LogicalLba::new(last.table_id, n));
        Ok(PrefetchDecision::from_candidates(cands).truncated(input.catalog, input.budget))
    }
}

/// Repeatedly applies the most frequent consecutive logical delta observed
/// within a table to the last accessed block.
#[derive(Debug, Clone)]
pub struct NaiveDelta {
    pub k: u64,
    counts: BTreeMap<i64, u64>,
    last: Option<LogicalLba>,
}

impl NaiveDelta {
    pub fn new(k: u64) -> Self {
        Self { k, counts: BTreeMap::new(), last: None }
    }

    /// Most frequent delta; ties go to the smaller magnitude, then the positive one.
    pub fn best_delta(&self) -> Option<i64> {
        self.counts
            .iter()
            .max_by(|a, b| a.1.cmp(b.1).then(b.0.unsigned_abs().cmp(&a.0.unsigned_abs())).then(a.0.cmp(b.0)))
            .map(|(d, _)| *d)
    }
}

impl Policy for NaiveDelta {
    fn name(&self) -> &'static str {
        "naive"
    }

    fn observe(&mut self, q: &QueryRecord, catalog: &TableCatalog) -> Result<()> {
        for b in &q.result_blocks {
            let cur = to_logical(*b, catalog.lb_size);
            if let Some(prev) = self.last {
                // repeated touches of the same logical block carry no delta
                if prev.table_id == cur.table_id && prev != cur {
                    *self.counts.entry(cur.logical_no as i64 - prev.logical_no as i64).or_insert(0) += 1;
                }
            }
            self.last = Some(cur);
        }
        Ok(())
    }

    fn decide(&mut self, input: &DecideInput) -> Result<PrefetchDecision> {
        let (Some(last), Some(d)) = (self.last, self.best_delta()) else { return Ok(PrefetchDecision::empty()) };
        if d == 0 {
            return Ok(PrefetchDecision::empty());
        }
        let limit = input.catalog.logical_blocks(last.table_id).unwrap_or(0) as i64;
        let mut cands = Vec::new();
        for i in 1..=self.k as i64 {
            let n = last.logical_no as i64 + i * d;
            if n < 0 || n >= limit {
                break;
            }
            cands.push(LogicalLba::new(last.table_id, n as u64));
        }
        Ok(PrefetchDecision::from_candidates(cands).truncated(input.catalog, input.budget))
    }
}

/// Random read-ahead: once an aligned extent has seen `threshold` distinct
/// accessed logical blocks since its last trigger, the rest of the extent is
/// fetched and the extent's count starts over.
#[derive(Debug, Clone)]
pub struct RandomReadAhead {
    pub extent: u64,
    pub threshold: usize,
    seen: BTreeMap<(TableId, u64), BTreeSet<u64>>,
    triggered: Vec<(TableId, u64, BTreeSet<u64>)>,
}

impl RandomReadAhead {
    pub fn new(extent: u64, threshold: usize) -> Self {
        Self { extent: extent.max(1), threshold, seen: BTreeMap::new(), triggered: Vec::new() }
    }
}

impl Policy for RandomReadAhead {
    fn name(&self) -> &'static str {
        "randr"
    }

    fn observe(&mut self, q: &QueryRecord, catalog: &TableCatalog) -> Result<()> {
        let mut touched = BTreeSet::new();
        for b in &q.result_blocks {
            let l = to_logical(*b, catalog.lb_size);
            let key = (l.table_id, l.logical_no / self.extent);
            self.seen.entry(key).or_default().insert(l.logical_no);
            touched.insert(key);
        }
        for key in touched {
            if self.seen[&key].len() >= self.threshold {
                let hits = self.seen.remove(&key).expect("present");
                self.triggered.push((key.0, key.1, hits));
            }
        }
        Ok(())
    }

    fn decide(&mut self, input: &DecideInput) -> Result<PrefetchDecision> {
        let mut cands = Vec::new();
        for (t, e, hits) in self.triggered.drain(..) {
            let limit = input.catalog.logical_blocks(t).unwrap_or(0);
            let start = e * self.extent;
            let end = (start + self.extent).min(limit);
            cands.extend((start..end).filter(|n| !hits.contains(n)).map(|n| LogicalLba::new(t, n)));
        }
        Ok(PrefetchDecision::from_candidates(cands).truncated(input.catalog, input.budget))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::address::TableLba;
    use crate::trace::{ColumnKind, ColumnSpec, QueryType, TableSpec};

    fn catalog(lb: u64) -> TableCatalog {
        let spec = |name: &str| TableSpec {
            name: name.into(),
            block_count: 200,
            columns: vec![ColumnSpec { name: "n0".into(), kind: ColumnKind::Numeric }],
        };
        TableCatalog::new(vec![spec("a"), spec("b")], lb).unwrap()
    }

    fn q(blocks: &[(TableId, u64)]) -> QueryRecord {
        QueryRecord::from_blocks(0, QueryType::Select, 2, blocks.iter().map(|&(t, b)| TableLba::new(t, b)).collect())
    }

    fn input(cat: &TableCatalog) -> DecideInput<'_> {
        DecideInput { catalog: cat, budget: u64::MAX, next: None }
    }

    fn l(t: TableId, n: u64) -> LogicalLba {
        LogicalLba::new(t, n)
    }

    #[test]
    fn lookahead_examples() {
        let cat = catalog(1);
        let mut la = LookAhead::new(3);
        assert!(la.decide(&input(&cat)).unwrap().is_empty());
        la.observe(&q(&[(0, 9)]), &cat).unwrap();
        assert_eq!(la.decide(&input(&cat)).unwrap().candidates, vec![l(0, 10), l(0, 11), l(0, 12)]);
        la.observe(&q(&[(0, 199)]), &cat).unwrap();
        assert!(la.decide(&input(&cat)).unwrap().is_empty());
        let mut zero = LookAhead::new(0);
        zero.observe(&q(&[(0, 9)]), &cat).unwrap();
        assert!(zero.decide(&input(&cat)).unwrap().is_empty());
    }

    #[test]
    fn naive_examples() {
        let cat = catalog(1);
        let mut n = NaiveDelta::new(3);
        assert!(n.decide(&input(&cat)).unwrap().is_empty());
        n.observe(&q(&[(0, 0), (0, 2), (0, 4)]), &cat).unwrap();
        assert_eq!(n.best_delta(), Some(2));
        assert_eq!(n.decide(&input(&cat)).unwrap().candidates, vec![l(0, 6), l(0, 8), l(0, 10)]);
        // cross-table hops do not count
        n.observe(&q(&[(1, 50)]), &cat).unwrap();
        assert_eq!(n.best_delta(), Some(2));
        assert_eq!(n.decide(&input(&cat)).unwrap().candidates[0], l(1, 52));
    }

    #[test]
    fn naive_tie_breaks_to_smaller_magnitude() {
        let cat = catalog(1);
        let mut n = NaiveDelta::new(1);
        n.observe(&q(&[(0, 10), (0, 13), (0, 11)]), &cat).unwrap();
        assert_eq!(n.best_delta(), Some(-2));
    }

    #[test]
    fn randr_threshold() {
        let cat = catalog(1);
        let mut r = RandomReadAhead::new(64, 13);
        let hits: Vec<(TableId, u64)> = (0..12).map(|i| (0, i * 3)).collect();
        r.observe(&q(&hits), &cat).unwrap();
        assert!(r.decide(&input(&cat)).unwrap().is_empty());
        r.observe(&q(&[(0, 40)]), &cat).unwrap();
        let d = r.decide(&input(&cat)).unwrap();
        assert_eq!(d.candidates.len(), 64 - 13);
        assert!(d.candidates.iter().all(|c| c.logical_no < 64));
        // the trigger consumed the window: one more hit does not re-trigger
        r.observe(&q(&[(0, 41)]), &cat).unwrap();
        assert!(r.decide(&input(&cat)).unwrap().is_empty());
        let more: Vec<(TableId, u64)> = (0..13).map(|i| (0, 42 + i)).collect();
        r.observe(&q(&more), &cat).unwrap();
        assert!(!r.decide(&input(&cat)).unwrap().is_empty());
    }

    #[test]
    fn oracle_examples() {
        let cat = catalog(1);
        let next = q(&[(0, 1), (1, 2)]);
        let mut o = Oracle;
        let d = o.decide(&DecideInput { catalog: &cat, budget: 1000, next: Some(&next) }).unwrap();
        assert_eq!(d.candidates, vec![l(0, 1), l(1, 2)]);
        let d = o.decide(&DecideInput { catalog: &cat, budget: 1, next: Some(&next) }).unwrap();
        assert_eq!(d.candidates, vec![l(0, 1)]);
        let empty = q(&[]);
        assert!(o.decide(&DecideInput { catalog: &cat, budget: 1000, next: Some(&empty) }).unwrap().is_empty());
    }
}
