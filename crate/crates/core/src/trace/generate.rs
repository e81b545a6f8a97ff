//! Synthetic workload generator.
//!
//! Queries are produced in sessions. Each session runs one pattern program
//! with its own RNG stream, so the master stream (pattern choice, session
//! length, session seed) is identical for every scale factor and a larger
//! catalog replays the same programs over wider address ranges.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Zipf;
use serde::{Deserialize, Serialize};

use crate::address::{TableId, TableLba};
use crate::error::{Error, Result};
use crate::trace::{ColumnKind, ColumnSpec, QueryRecord, QueryType, TableCatalog, TableSpec, Workload};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Pattern {
    SequentialScan,
    Strided,
    TableHop,
    PointLookup,
    InsertAppend,
    UpdateInplace,
}

impl Pattern {
    pub const ALL: [Pattern; 6] = [
        Pattern::SequentialScan,
        Pattern::Strided,
        Pattern::TableHop,
        Pattern::PointLookup,
        Pattern::InsertAppend,
        Pattern::UpdateInplace,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Pattern::SequentialScan => "sequential-scan",
            Pattern::Strided => "strided",
            Pattern::TableHop => "table-hop",
            Pattern::PointLookup => "point-lookup",
            Pattern::InsertAppend => "insert-append",
            Pattern::UpdateInplace => "update-inplace",
        }
    }
}

impl std::str::FromStr for Pattern {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Pattern::ALL
            .into_iter()
            .find(|p| p.as_str() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown pattern '{s}'")))
    }
}

/// Weights over [`Pattern::ALL`], in that order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PatternMix {
    pub weights: [f64; 6],
}

impl PatternMix {
    pub fn only(p: Pattern) -> Self {
        let mut weights = [0.0; 6];
        weights[Pattern::ALL.iter().position(|x| *x == p).unwrap()] = 1.0;
        Self { weights }
    }

    /// Parses `pattern=weight` pairs separated by commas; unnamed patterns get 0.
    pub fn parse(s: &str) -> Result<Self> {
        let mut weights = [0.0; 6];
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (name, w) = part
                .split_once('=')
                .ok_or_else(|| Error::InvalidArgument(format!("expected pattern=weight, got '{part}'")))?;
            let p: Pattern = name.trim().parse()?;
            let w: f64 = w.trim().parse().map_err(|_| Error::InvalidArgument(format!("bad weight in '{part}'")))?;
            weights[Pattern::ALL.iter().position(|x| *x == p).unwrap()] = w;
        }
        Ok(Self { weights })
    }

    pub fn to_spec_string(&self) -> String {
        Pattern::ALL
            .iter()
            .zip(self.weights)
            .filter(|(_, w)| *w > 0.0)
            .map(|(p, w)| format!("{}={}", p.as_str(), w))
            .collect::<Vec<_>>()
            .join(",")
    }
}

impl Default for PatternMix {
    fn default() -> Self {
        Self { weights: [0.2, 0.1, 0.3, 0.2, 0.1, 0.1] }
    }
}

/// Shape knobs of the individual pattern programs (native blocks).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatternParams {
    pub scan_len: u64,
    pub stride: u64,
    pub strided_count: u64,
    pub hop_tables: usize,
    pub hop_run: u64,
    /// Advance of the hop cursor after each full table cycle.
    pub hop_step: u64,
    /// All tables of a hop cycle start from the same block number.
    pub hop_aligned: bool,
    pub lookup_max_blocks: u64,
    pub update_max_blocks: u64,
}

impl Default for PatternParams {
    fn default() -> Self {
        Self {
            scan_len: 64,
            stride: 8,
            strided_count: 8,
            hop_tables: 3,
            hop_run: 32,
            hop_step: 32,
            hop_aligned: false,
            lookup_max_blocks: 2,
            update_max_blocks: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub seed: u64,
    pub table_count: usize,
    pub blocks_per_table: u64,
    pub scale_factor: f64,
    pub zipf_z: f64,
    pub mix: PatternMix,
    pub query_count: usize,
    pub session_min: usize,
    pub session_max: usize,
    pub lb_size: u64,
    pub numeric_columns: usize,
    pub text_columns: usize,
    pub params: PatternParams,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            table_count: 4,
            blocks_per_table: 4096,
            scale_factor: 1.0,
            zipf_z: 1.0,
            mix: PatternMix::default(),
            query_count: 1000,
            session_min: 10,
            session_max: 40,
            lb_size: 32,
            numeric_columns: 3,
            text_columns: 1,
            params: PatternParams::default(),
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.to_string()));
        if self.table_count == 0 || self.table_count > TableId::MAX as usize {
            return bad("table_count out of range");
        }
        if self.blocks_per_table == 0 {
            return bad("blocks_per_table must be positive");
        }
        if !(self.scale_factor > 0.0 && self.scale_factor.is_finite()) {
            return bad("scale_factor must be positive");
        }
        if !(self.zipf_z >= 0.0 && self.zipf_z.is_finite()) {
            return bad("zipf_z must be non-negative");
        }
        if self.mix.weights.iter().any(|w| *w < 0.0 || !w.is_finite()) {
            return bad("pattern weights must be non-negative");
        }
        let total: f64 = self.mix.weights.iter().sum();
        if (total - 1.0).abs() > 1e-6 {
            return Err(Error::InvalidArgument(format!("pattern weights sum to {total}, expected 1")));
        }
        if self.session_min == 0 || self.session_min > self.session_max {
            return bad("session length bounds invalid");
        }
        if self.lb_size == 0 {
            return bad("lb_size must be positive");
        }
        if self.numeric_columns + self.text_columns == 0 {
            return bad("tables need at least one column");
        }
        let p = &self.params;
        if p.scan_len == 0 || p.stride == 0 || p.strided_count == 0 || p.hop_run == 0 || p.hop_tables == 0 {
            return bad("pattern lengths must be positive");
        }
        if p.lookup_max_blocks == 0 || p.update_max_blocks == 0 {
            return bad("pattern lengths must be positive");
        }
        Ok(())
    }

    /// Table sizes before any append.
    pub fn table_blocks(&self, t: usize) -> u64 {
        let weight = 1.0 + 0.5 * (t % 3) as f64;
        (self.blocks_per_table as f64 * self.scale_factor * weight).ceil().max(1.0) as u64
    }

    pub fn catalog(&self) -> Result<TableCatalog> {
        let tables = (0..self.table_count)
            .map(|t| {
                let mut columns = Vec::new();
                for c in 0..self.numeric_columns {
                    columns.push(ColumnSpec { name: format!("n{c}"), kind: ColumnKind::Numeric });
                }
                for c in 0..self.text_columns {
                    columns.push(ColumnSpec { name: format!("s{c}"), kind: ColumnKind::Text });
                }
                TableSpec { name: format!("t{t}"), block_count: self.table_blocks(t), columns }
            })
            .collect();
        TableCatalog::new(tables, self.lb_size)
    }
}

struct Emitter<'a> {
    spec: &'a SyntheticSpec,
    sizes: Vec<u64>,
    names: Vec<String>,
    queries: Vec<QueryRecord>,
}

impl Emitter<'_> {
    fn full(&self) -> bool {
        self.queries.len() >= self.spec.query_count
    }

    fn emit(
        &mut self,
        query_type: QueryType,
        mut blocks: Vec<TableLba>,
        filters: &[(TableId, String)],
        joins: &[(TableId, String)],
    ) {
        // A result set lists each block once; random draws may repeat.
        let mut seen = std::collections::HashSet::new();
        blocks.retain(|b| seen.insert(*b));
        let n = self.sizes.len();
        let mut q = QueryRecord::from_blocks(self.queries.len() as u64, query_type, n, blocks);
        for (t, text) in filters {
            q.filter_text[*t as usize] = text.clone();
            q.accessed_tables[*t as usize] = true;
        }
        for (t, text) in joins {
            q.join_text[*t as usize] = text.clone();
            q.accessed_tables[*t as usize] = true;
        }
        self.queries.push(q);
    }

    fn run(&mut self, t: TableId, start: u64, len: u64) -> (u64, Vec<TableLba>) {
        let n = self.sizes[t as usize];
        let len = len.min(n);
        let start = if start + len > n { start % (n - len + 1) } else { start };
        (start, (start..start + len).map(|b| TableLba::new(t, b)).collect())
    }

    fn sequential_scan(&mut self, rng: &mut ChaCha8Rng, count: usize) {
        let t = rng.random_range(0..self.sizes.len()) as TableId;
        let mut start = (rng.random::<f64>() * self.sizes[t as usize] as f64) as u64;
        let len = self.spec.params.scan_len;
        for _ in 0..count {
            if self.full() {
                return;
            }
            let (s, blocks) = self.run(t, start, len);
            let filter = format!("n0 >= {} and n0 < {}", s * 3, (s + len) * 3);
            self.emit(QueryType::Select, blocks, &[(t, filter)], &[]);
            start = s + len;
        }
    }

    fn strided(&mut self, rng: &mut ChaCha8Rng, count: usize) {
        let t = rng.random_range(0..self.sizes.len()) as TableId;
        let n = self.sizes[t as usize];
        let p = &self.spec.params;
        let span = p.stride * (p.strided_count - 1) + 1;
        let mut start = (rng.random::<f64>() * n as f64) as u64;
        for _ in 0..count {
            if self.full() {
                return;
            }
            if start + span > n {
                start = if n > span { start % (n - span + 1) } else { 0 };
            }
            let blocks: Vec<_> = (0..p.strided_count)
                .map(|i| start + i * p.stride)
                .filter(|b| *b < n)
                .map(|b| TableLba::new(t, b))
                .collect();
            let filter = format!("n1 % {} = {}", p.stride, start % 97);
            self.emit(QueryType::Select, blocks, &[(t, filter)], &[]);
            start += p.strided_count * p.stride;
        }
    }

    fn table_hop(&mut self, rng: &mut ChaCha8Rng, count: usize) {
        let p = self.spec.params.clone();
        let h = p.hop_tables.min(self.sizes.len());
        let mut order: Vec<TableId> = (0..self.sizes.len() as TableId).collect();
        order.shuffle(rng);
        order.truncate(h);
        let fractions: Vec<f64> = if p.hop_aligned {
            vec![rng.random::<f64>() * 0.5; h]
        } else {
            (0..h).map(|_| rng.random::<f64>() * 0.5).collect()
        };
        let min_size = order.iter().map(|t| self.sizes[*t as usize]).min().unwrap_or(1);
        let mut cursor = 0u64;
        for j in 0..count {
            if self.full() {
                return;
            }
            let slot = j % h;
            let t = order[slot];
            let size = if p.hop_aligned { min_size } else { self.sizes[t as usize] };
            let base = (fractions[slot] * size as f64) as u64;
            let (_, blocks) = self.run(t, base + cursor, p.hop_run);
            let ncols = self.spec.numeric_columns.max(1);
            let filter = format!("n{} > {}", slot % ncols, rng.random_range(0..1000));
            let prev = order[(slot + h - 1) % h];
            let joins = if h > 1 {
                vec![(t, format!("{}.fk = {}.id", self.names[t as usize], self.names[prev as usize]))]
            } else {
                Vec::new()
            };
            self.emit(QueryType::Select, blocks, &[(t, filter)], &joins);
            if slot == h - 1 {
                cursor += p.hop_step;
            }
        }
    }

    fn point_lookup(&mut self, rng: &mut ChaCha8Rng, count: usize) {
        for _ in 0..count {
            if self.full() {
                return;
            }
            let t = rng.random_range(0..self.sizes.len()) as TableId;
            let n = self.sizes[t as usize];
            let k = rng.random_range(1..=self.spec.params.lookup_max_blocks);
            let blocks: Vec<_> = (0..k).map(|_| TableLba::new(t, zipf_rank(rng, n, self.spec.zipf_z) - 1)).collect();
            let filter = format!("id = {}", blocks[0].block_no * 40 + 7);
            self.emit(QueryType::Select, blocks, &[(t, filter)], &[]);
        }
    }

    fn insert_append(&mut self, rng: &mut ChaCha8Rng, count: usize) {
        let t = rng.random_range(0..self.sizes.len()) as TableId;
        for _ in 0..count {
            if self.full() {
                return;
            }
            let b = self.sizes[t as usize];
            self.sizes[t as usize] += 1;
            self.emit(QueryType::Insert, vec![TableLba::new(t, b)], &[], &[]);
        }
    }

    fn update_inplace(&mut self, rng: &mut ChaCha8Rng, count: usize) {
        let t = rng.random_range(0..self.sizes.len()) as TableId;
        for _ in 0..count {
            if self.full() {
                return;
            }
            let n = self.sizes[t as usize];
            let k = rng.random_range(1..=self.spec.params.update_max_blocks);
            let blocks: Vec<_> = (0..k).map(|_| TableLba::new(t, rng.random_range(0..n))).collect();
            let kind = if rng.random::<f64>() < 0.2 { QueryType::Delete } else { QueryType::Update };
            let filter = format!("id = {}", blocks[0].block_no * 40 + 3);
            self.emit(kind, blocks, &[(t, filter)], &[]);
        }
    }
}

/// Rank in `1..=n` with Zipf(`z`) popularity; `z = 0` is uniform.
fn zipf_rank(rng: &mut ChaCha8Rng, n: u64, z: f64) -> u64 {
    if z == 0.0 || n == 1 {
        return rng.random_range(1..=n);
    }
    let dist = Zipf::new(n as f64, z).expect("validated zipf parameters");
    (dist.sample(rng) as u64).clamp(1, n)
}

/// Synthesizes a workload. Deterministic for a fixed spec.
pub fn generate(spec: &SyntheticSpec) -> Result<Workload> {
    spec.validate()?;
    let catalog = spec.catalog()?;
    let mut em = Emitter {
        spec,
        sizes: catalog.tables.iter().map(|t| t.block_count).collect(),
        names: catalog.tables.iter().map(|t| t.name.clone()).collect(),
        queries: Vec::with_capacity(spec.query_count),
    };
    let mut master = ChaCha8Rng::seed_from_u64(spec.seed);
    let picker = if spec.query_count > 0 {
        Some(WeightedIndex::new(spec.mix.weights).map_err(|e| Error::InvalidArgument(e.to_string()))?)
    } else {
        None
    };
    while !em.full() {
        let pattern = Pattern::ALL[picker.as_ref().unwrap().sample(&mut master)];
        let len = master.random_range(spec.session_min..=spec.session_max);
        let mut rng = ChaCha8Rng::seed_from_u64(master.random::<u64>());
        match pattern {
            Pattern::SequentialScan => em.sequential_scan(&mut rng, len),
            Pattern::Strided => em.strided(&mut rng, len),
            Pattern::TableHop => em.table_hop(&mut rng, len),
            Pattern::PointLookup => em.point_lookup(&mut rng, len),
            Pattern::InsertAppend => em.insert_append(&mut rng, len),
            Pattern::UpdateInplace => em.update_inplace(&mut rng, len),
        }
    }
    let mut w = Workload::new(catalog, em.queries);
    w.program = Some(spec.clone());
    Ok(w)
}

/// Regenerates a synthesized workload against a catalog enlarged by `factor`.
pub fn scale_catalog(w: &Workload, factor: f64) -> Result<Workload> {
    if !(factor >= 1.0 && factor.is_finite()) {
        return Err(Error::InvalidArgument(format!("scale factor must be >= 1, got {factor}")));
    }
    let program = w.program.as_ref().ok_or(Error::NoPatternProgram)?;
    if factor == 1.0 {
        return Ok(w.clone());
    }
    let mut spec = program.clone();
    spec.scale_factor *= factor;
    generate(&spec)
}
