//! Trace-driven cache simulation: demand accesses, non-blocking prefetch
//! inside interarrival gaps, periodic tuning and the effectiveness metrics.

mod cache;
mod metrics;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::address::{LogicalLba, TableLba};
use crate::error::{Error, Result};
use crate::hash::mix;
use crate::prefetcher::{DecideInput, Policy};
use crate::trace::{CatalogState, QueryRecord, TableCatalog};

pub use cache::{LruCache, Origin};
pub use metrics::{
    hit_ratio, miss_coverage, percentile, recall, relative_io, write_query_csv, write_runs_csv, QueryMetrics,
    RunMetrics, RunRow,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostModel {
    pub t_miss_ms: f64,
    pub t_hit_ms: f64,
    /// Multiplier on `t_miss_ms` for blocks after the first of a run.
    pub seq_discount: f64,
}

impl Default for CostModel {
    fn default() -> Self {
        Self { t_miss_ms: 1.0, t_hit_ms: 0.01, seq_discount: 0.5 }
    }
}

impl CostModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.t_miss_ms > self.t_hit_ms && self.t_hit_ms >= 0.0) {
            return Err(Error::Config(format!(
                "need t_miss > t_hit >= 0, got {} and {}",
                self.t_miss_ms, self.t_hit_ms
            )));
        }
        if !(self.seq_discount > 0.0 && self.seq_discount <= 1.0) {
            return Err(Error::Config(format!("seq_discount must lie in (0, 1], got {}", self.seq_discount)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ArrivalMode {
    Fixed,
    #[default]
    Skewed,
}

impl std::str::FromStr for ArrivalMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "fixed" => Ok(ArrivalMode::Fixed),
            "skewed" => Ok(ArrivalMode::Skewed),
            _ => Err(format!("unknown arrival mode '{s}' (expected fixed or skewed)")),
        }
    }
}

impl ArrivalMode {
    pub fn as_str(self) -> &'static str {
        match self {
            ArrivalMode::Fixed => "fixed",
            ArrivalMode::Skewed => "skewed",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArrivalModel {
    pub d_ms: f64,
    pub mode: ArrivalMode,
}

impl Default for ArrivalModel {
    fn default() -> Self {
        Self { d_ms: 200.0, mode: ArrivalMode::Skewed }
    }
}

/// Skewed delays are `d * (0.5 + 0.5 * max(u1, u2, u3))`: support `[d/2, d]`, mean `7d/8`.
pub fn sample_interarrival<R: Rng + ?Sized>(am: &ArrivalModel, rng: &mut R) -> f64 {
    match am.mode {
        ArrivalMode::Fixed => am.d_ms,
        ArrivalMode::Skewed => {
            let u = rng.random::<f64>().max(rng.random::<f64>()).max(rng.random::<f64>());
            am.d_ms * (0.5 + 0.5 * u)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub cache_blocks: usize,
    pub cost: CostModel,
    pub arrival: ArrivalModel,
    /// Native blocks a single decision may fetch.
    pub budget: u64,
    /// Tuning period in queries; 0 disables tuning.
    pub l_tune: usize,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            cache_blocks: 4096,
            cost: CostModel::default(),
            arrival: ArrivalModel::default(),
            budget: 50 * 128,
            l_tune: 0,
            seed: 0,
        }
    }
}

/// Replays `queries` against `policy`. The catalog is the one in force before
/// the first query; tables grow as queries touch new blocks.
pub fn run(
    queries: &[QueryRecord],
    catalog: &TableCatalog,
    policy: &mut dyn Policy,
    cfg: &SimConfig,
) -> Result<RunMetrics> {
    cfg.cost.validate()?;
    if cfg.arrival.d_ms < 0.0 {
        return Err(Error::Config(format!("arrival d_ms must be >= 0, got {}", cfg.arrival.d_ms)));
    }
    let mut state = CatalogState::new(catalog);
    let mut cache = LruCache::new(cfg.cache_blocks);
    let mut rng = ChaCha8Rng::seed_from_u64(mix(&[cfg.seed, 0xa771]));
    let mut m = RunMetrics::new(policy.name());

    let mut arrival = 0.0f64;
    let mut free_at = 0.0f64;
    for (i, q) in queries.iter().enumerate() {
        // demand
        let start = arrival.max(free_at);
        let mut qm =
            QueryMetrics { query_id: q.query_id, query_type: q.query_type.as_str().into(), ..Default::default() };
        let mut io = 0.0;
        for b in &q.result_blocks {
            match cache.touch(*b, Origin::Demand) {
                Some(prev) => {
                    qm.hits += 1;
                    io += cfg.cost.t_hit_ms;
                    if i > 0 && prev == Origin::Prefetch(i as u64 - 1) {
                        qm.correct_prefetches += 1;
                    }
                }
                None => {
                    qm.misses += 1;
                    io += cfg.cost.t_miss_ms;
                    cache.insert(*b, Origin::Demand);
                }
            }
        }
        let end = start + io;
        qm.latency_ms = end - arrival;
        free_at = end;
        m.io_time_ms += io;

        state.observe(q);
        policy.observe(q, state.catalog())?;

        // prefetch until the next query arrives
        let gap = sample_interarrival(&cfg.arrival, &mut rng);
        let next_arrival = arrival + gap;
        let window = (next_arrival - end).max(0.0);
        let decision =
            policy.decide(&DecideInput { catalog: state.catalog(), budget: cfg.budget, next: queries.get(i + 1) })?;
        let used = decision.native_blocks(state.catalog());
        if used > cfg.budget {
            return Err(Error::BudgetExceeded { policy: policy.name().into(), used, budget: cfg.budget });
        }
        let spent = prefetch(&mut cache, &decision.ranges, state.catalog(), &cfg.cost, window, i as u64, &mut qm);
        m.prefetch_time_ms += spent;
        m.idle_time_ms += window - spent;
        arrival = next_arrival;

        if cfg.l_tune > 0 && (i + 1) % cfg.l_tune == 0 {
            if let Some(ev) = policy.tune(state.catalog(), i as u64 + 1)? {
                m.tune_events.push(ev);
            }
        }
        m.push(qm);
    }
    m.finish();
    Ok(m)
}

/// Fetches ranges in order within `window` ms; returns the time spent.
fn prefetch(
    cache: &mut LruCache,
    ranges: &[crate::prefetcher::BlockRange],
    catalog: &TableCatalog,
    cost: &CostModel,
    window: f64,
    stamp: u64,
    qm: &mut QueryMetrics,
) -> f64 {
    let mut spent = 0.0;
    if window <= 0.0 {
        return spent;
    }
    for r in ranges {
        let blocks = catalog.block_count(r.table_id).unwrap_or(0);
        let mut first = true;
        for n in r.start..r.start + r.len {
            for b in LogicalLba::new(r.table_id, n).native_range(catalog.lb_size, blocks) {
                let b = TableLba::new(r.table_id, b);
                let resident = cache.contains(&b);
                let c = if resident {
                    cost.t_hit_ms
                } else if first {
                    cost.t_miss_ms
                } else {
                    cost.t_miss_ms * cost.seq_discount
                };
                if spent + c > window {
                    return spent;
                }
                spent += c;
                if resident {
                    cache.touch(b, Origin::Prefetch(stamp));
                } else {
                    cache.insert(b, Origin::Prefetch(stamp));
                    qm.prefetched += 1;
                    first = false;
                }
            }
        }
    }
    spent
}

/// Runs the no-prefetch baseline and `policy` on the same arrivals and fills
/// in the baseline fields of the policy's metrics.
pub fn run_paired(
    queries: &[QueryRecord],
    catalog: &TableCatalog,
    policy: &mut dyn Policy,
    cfg: &SimConfig,
) -> Result<(RunMetrics, RunMetrics)> {
    let np = run(queries, catalog, &mut crate::prefetcher::NoPrefetch, cfg)?;
    let mut m = run(queries, catalog, policy, cfg)?;
    m.misses_np = Some(np.misses);
    m.io_time_np_ms = Some(np.io_time_ms);
    Ok((np, m))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prefetcher::{NoPrefetch, Oracle};
    use crate::trace::{ColumnKind, ColumnSpec, QueryType, TableSpec};

    fn catalog() -> TableCatalog {
        let spec = |name: &str| TableSpec {
            name: name.into(),
            block_count: 1000,
            columns: vec![ColumnSpec { name: "n0".into(), kind: ColumnKind::Numeric }],
        };
        TableCatalog::new(vec![spec("a"), spec("b")], 1).unwrap()
    }

    fn q(id: u64, blocks: &[(crate::address::TableId, u64)]) -> QueryRecord {
        QueryRecord::from_blocks(id, QueryType::Select, 2, blocks.iter().map(|&(t, b)| TableLba::new(t, b)).collect())
    }

    fn cfg() -> SimConfig {
        SimConfig {
            cache_blocks: 100,
            arrival: ArrivalModel { d_ms: 100.0, mode: ArrivalMode::Fixed },
            budget: 1000,
            ..Default::default()
        }
    }

    #[test]
    fn fixed_and_skewed_samples() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(sample_interarrival(&ArrivalModel { d_ms: 250.0, mode: ArrivalMode::Fixed }, &mut rng), 250.0);
        let am = ArrivalModel { d_ms: 8.0, mode: ArrivalMode::Skewed };
        for _ in 0..10_000 {
            let d = sample_interarrival(&am, &mut rng);
            assert!((4.0..=8.0).contains(&d));
        }
    }

    #[test]
    fn oracle_on_crafted_trace() {
        // three queries, no reuse: q2 and q3 are fully prefetched
        let trace = vec![q(0, &[(0, 1), (0, 2)]), q(1, &[(0, 10), (1, 3)]), q(2, &[(1, 50), (0, 70)])];
        let (np, m) = run_paired(&trace, &catalog(), &mut Oracle, &cfg()).unwrap();
        assert_eq!(np.hits, 0);
        assert_eq!(m.hits, 4);
        assert_eq!(m.accessed_blocks, 6);
        assert!((hit_ratio(&m).unwrap() - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(m.correct_prefetches, 4);
        assert_eq!(miss_coverage(&m).unwrap(), 4.0 / 6.0);
    }

    #[test]
    fn np_identities() {
        let trace = vec![q(0, &[(0, 1)]), q(1, &[(0, 1), (0, 2)])];
        let (_, m) = run_paired(&trace, &catalog(), &mut NoPrefetch, &cfg()).unwrap();
        assert_eq!(miss_coverage(&m), Some(0.0));
        assert_eq!(relative_io(&m), Some(1.0));
        assert_eq!(m.correct_prefetches, 0);
        assert_eq!(m.hits + m.misses, m.accessed_blocks);
    }

    #[test]
    fn zero_gap_matches_np() {
        let trace = vec![q(0, &[(0, 1), (0, 2)]), q(1, &[(0, 10), (1, 3)]), q(2, &[(0, 1), (0, 70)])];
        let mut c = cfg();
        c.arrival.d_ms = 0.0;
        c.cache_blocks = 3;
        let (np, m) = run_paired(&trace, &catalog(), &mut Oracle, &c).unwrap();
        assert_eq!(np.hits, m.hits);
        assert_eq!(np.misses, m.misses);
        assert_eq!(np.io_time_ms, m.io_time_ms);
        assert_eq!(np.per_query, m.per_query);
    }

    #[test]
    fn short_gap_stops_mid_list() {
        // window after q0: 2.5 - 2 = 0.5 ms cannot fit a 1 ms miss
        let trace = vec![q(0, &[(0, 1), (0, 2)]), q(1, &[(0, 10)])];
        let mut c = cfg();
        c.arrival.d_ms = 2.5;
        let m = run(&trace, &catalog(), &mut Oracle, &c).unwrap();
        assert_eq!(m.hits, 0);
        assert_eq!(m.prefetch_time_ms, 0.0);
    }

    #[test]
    fn budget_violation_aborts() {
        struct Greedy;
        impl Policy for Greedy {
            fn name(&self) -> &'static str {
                "greedy"
            }
            fn observe(&mut self, _: &QueryRecord, _: &TableCatalog) -> Result<()> {
                Ok(())
            }
            fn decide(&mut self, _: &DecideInput) -> Result<crate::prefetcher::PrefetchDecision> {
                Ok(crate::prefetcher::PrefetchDecision::from_candidates((0..5).map(|n| LogicalLba::new(0, n))))
            }
        }
        let mut c = cfg();
        c.budget = 4;
        let err = run(&[q(0, &[(0, 1)])], &catalog(), &mut Greedy, &c).unwrap_err();
        assert!(matches!(err, Error::BudgetExceeded { used: 5, budget: 4, .. }));
    }
}
