//! Run metrics, the ratio definitions and CSV output.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::prefetcher::TuneEvent;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct QueryMetrics {
    pub query_id: u64,
    pub query_type: String,
    pub hits: u64,
    pub misses: u64,
    /// Hits on blocks fetched by the decision made right before this query.
    pub correct_prefetches: u64,
    /// Blocks newly brought in by the decision made after this query.
    pub prefetched: u64,
    pub latency_ms: f64,
}

impl QueryMetrics {
    pub fn accessed(&self) -> u64 {
        self.hits + self.misses
    }

    pub fn recall(&self) -> Option<f64> {
        ratio(self.correct_prefetches as f64, self.accessed() as f64)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub policy: String,
    pub hits: u64,
    pub misses: u64,
    pub accessed_blocks: u64,
    pub correct_prefetches: u64,
    pub prefetched_blocks: u64,
    /// Filled by a paired no-prefetch run.
    pub misses_np: Option<u64>,
    pub io_time_np_ms: Option<f64>,
    /// Demand I/O on the query path.
    pub io_time_ms: f64,
    pub prefetch_time_ms: f64,
    pub exec_time_ms: f64,
    pub idle_time_ms: f64,
    pub p95_latency_ms: BTreeMap<String, f64>,
    pub per_query: Vec<QueryMetrics>,
    pub tune_events: Vec<TuneEvent>,
}

impl RunMetrics {
    pub fn new(policy: &str) -> Self {
        Self { policy: policy.into(), ..Default::default() }
    }

    pub(crate) fn push(&mut self, q: QueryMetrics) {
        self.hits += q.hits;
        self.misses += q.misses;
        self.accessed_blocks += q.accessed();
        self.correct_prefetches += q.correct_prefetches;
        self.prefetched_blocks += q.prefetched;
        self.exec_time_ms += q.latency_ms;
        self.per_query.push(q);
    }

    pub(crate) fn finish(&mut self) {
        let mut by_type: BTreeMap<String, Vec<f64>> = BTreeMap::new();
        for q in &self.per_query {
            by_type.entry(q.query_type.clone()).or_default().push(q.latency_ms);
            by_type.entry("all".into()).or_default().push(q.latency_ms);
        }
        self.p95_latency_ms = by_type.into_iter().filter_map(|(k, v)| percentile(&v, 0.95).map(|p| (k, p))).collect();
    }

    pub fn row(&self, run_id: &str, config_hash: &str) -> RunRow {
        RunRow {
            run_id: run_id.into(),
            policy: self.policy.clone(),
            config_hash: config_hash.into(),
            queries: self.per_query.len() as u64,
            hits: self.hits,
            misses: self.misses,
            accessed_blocks: self.accessed_blocks,
            correct_prefetches: self.correct_prefetches,
            prefetched_blocks: self.prefetched_blocks,
            misses_np: self.misses_np,
            io_time_ms: self.io_time_ms,
            io_time_np_ms: self.io_time_np_ms,
            prefetch_time_ms: self.prefetch_time_ms,
            exec_time_ms: self.exec_time_ms,
            idle_time_ms: self.idle_time_ms,
            hit_ratio: hit_ratio(self),
            recall: recall(self),
            miss_coverage: miss_coverage(self),
            relative_io: relative_io(self),
            p95_latency_ms: self.p95_latency_ms.get("all").copied(),
            tune_events: self.tune_events.len() as u64,
            fine_tunes: self.tune_events.iter().filter(|e| e.fine_tuned).count() as u64,
        }
    }
}

/// One CSV line per run. Absent ratios are written as empty cells.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRow {
    pub run_id: String,
    pub policy: String,
    pub config_hash: String,
    pub queries: u64,
    pub hits: u64,
    pub misses: u64,
    pub accessed_blocks: u64,
    pub correct_prefetches: u64,
    pub prefetched_blocks: u64,
    pub misses_np: Option<u64>,
    pub io_time_ms: f64,
    pub io_time_np_ms: Option<f64>,
    pub prefetch_time_ms: f64,
    pub exec_time_ms: f64,
    pub idle_time_ms: f64,
    pub hit_ratio: Option<f64>,
    pub recall: Option<f64>,
    pub miss_coverage: Option<f64>,
    pub relative_io: Option<f64>,
    pub p95_latency_ms: Option<f64>,
    pub tune_events: u64,
    pub fine_tunes: u64,
}

fn ratio(num: f64, den: f64) -> Option<f64> {
    (den > 0.0).then(|| num / den)
}

pub fn hit_ratio(m: &RunMetrics) -> Option<f64> {
    ratio(m.hits as f64, (m.hits + m.misses) as f64)
}

pub fn recall(m: &RunMetrics) -> Option<f64> {
    ratio(m.correct_prefetches as f64, m.accessed_blocks as f64)
}

/// Fraction of the paired baseline's misses that were avoided.
pub fn miss_coverage(m: &RunMetrics) -> Option<f64> {
    let np = m.misses_np? as f64;
    ratio(np - m.misses as f64, np)
}

pub fn relative_io(m: &RunMetrics) -> Option<f64> {
    ratio(m.io_time_ms, m.io_time_np_ms?)
}

/// Nearest-rank percentile.
pub fn percentile(values: &[f64], p: f64) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let rank = ((p * v.len() as f64).ceil() as usize).clamp(1, v.len());
    Some(v[rank - 1])
}

pub fn write_runs_csv<W: Write>(rows: &[RunRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct QueryRow<'a> {
    query_id: u64,
    query_type: &'a str,
    hits: u64,
    misses: u64,
    correct_prefetches: u64,
    latency_ms: f64,
}

pub fn write_query_csv<W: Write>(m: &RunMetrics, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for q in &m.per_query {
        w.serialize(QueryRow {
            query_id: q.query_id,
            query_type: &q.query_type,
            hits: q.hits,
            misses: q.misses,
            correct_prefetches: q.correct_prefetches,
            latency_ms: q.latency_ms,
        })
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ratio_examples() {
        let m = RunMetrics { hits: 90, misses: 10, misses_np: Some(100), ..Default::default() };
        assert_eq!(hit_ratio(&m), Some(0.9));
        assert_eq!(miss_coverage(&RunMetrics { misses: 20, ..m.clone() }), Some(0.8));
        let io = RunMetrics { io_time_ms: 3.5, io_time_np_ms: Some(3.5), ..Default::default() };
        assert_eq!(relative_io(&io), Some(1.0));
    }

    #[test]
    fn zero_denominators_are_absent() {
        let m = RunMetrics::default();
        assert_eq!(hit_ratio(&m), None);
        assert_eq!(recall(&m), None);
        assert_eq!(miss_coverage(&m), None);
        assert_eq!(miss_coverage(&RunMetrics { misses_np: Some(0), ..m.clone() }), None);
        assert_eq!(relative_io(&RunMetrics { io_time_np_ms: Some(0.0), ..m }), None);
    }

    #[test]
    fn nearest_rank() {
        let v: Vec<f64> = (1..=20).map(f64::from).collect();
        assert_eq!(percentile(&v, 0.95), Some(19.0));
        assert_eq!(percentile(&[5.0], 0.95), Some(5.0));
        assert_eq!(percentile(&[], 0.95), None);
    }

    #[test]
    fn csv_has_header_and_empty_cells() {
        let m = RunMetrics::new("np");
        let mut buf = Vec::new();
        write_runs_csv(&[m.row("r1", "abc")], &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert!(lines.next().unwrap().starts_with("run_id,policy,config_hash"));
        assert!(lines.next().unwrap().contains(",,"));
    }
}
