//! Block preprocessing and encoding, plus query semantics.
//!
//! Each table owns its column statistics, an incremental PCA (used for drift
//! detection, and for width reduction on wide tables) and an autoencoder.
//! Encodings are produced on first touch and cached in a per-table store.

mod autoencoder;
mod ipca;
mod normalize;
mod semantics;
mod store;
mod text;

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::address::{TableId, TableLba};
use crate::error::Result;
use crate::trace::{block_rows, BlockValue, ColumnKind, QueryRecord, TableCatalog};

pub use autoencoder::{train_autoencoder, Autoencoder, AutoencoderConfig};
pub use ipca::{pc_cosine_drift, IpcaState};
pub use normalize::ColumnStats;
pub use semantics::{
    query_result_encoding, statement_repr, Aggregation, QueryResultEncoding, SemanticsMode, StatementRepr,
    CONDITION_DIM,
};
pub use store::TableEncodings;
pub use text::{embed_text, tokenize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub enc_dim: usize,
    /// Embedding width of one text value inside a block.
    pub text_dim: usize,
    pub rows_per_block: usize,
    /// Preprocessed widths above this are reduced with IPCA before the autoencoder.
    pub ipca_min_width: usize,
    pub max_components: usize,
    pub ae_epochs: usize,
    pub ae_lr: f64,
    pub ae_batch: usize,
    pub aggregation: Aggregation,
    pub semantics: SemanticsMode,
    pub drift_threshold: f64,
    /// Seed of the deterministic block contents.
    pub content_seed: u64,
    pub seed: u64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            enc_dim: 16,
            text_dim: 4,
            rows_per_block: 4,
            ipca_min_width: 32,
            max_components: 8,
            ae_epochs: 30,
            ae_lr: 1e-3,
            ae_batch: 32,
            aggregation: Aggregation::Mean,
            semantics: SemanticsMode::Full,
            drift_threshold: 0.8,
            content_seed: 0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableEncoder {
    pub table_id: TableId,
    pub stats: ColumnStats,
    pub ipca: IpcaState,
    pub reduce: bool,
    pub autoencoder: Autoencoder,
    pub raw_width: usize,
}

impl TableEncoder {
    fn new(catalog: &TableCatalog, table_id: TableId, cfg: &EncoderConfig) -> Self {
        let spec = &catalog.tables[table_id as usize];
        let per_row = spec.numeric_columns() + cfg.text_dim * spec.text_columns();
        let raw_width = (per_row * cfg.rows_per_block).max(1);
        let n_components = cfg.max_components.min(spec.columns.len()).min(raw_width).max(1);
        let reduce = raw_width > cfg.ipca_min_width;
        let ae_input = if reduce { n_components } else { raw_width };
        Self {
            table_id,
            stats: ColumnStats::new(spec.columns.len()),
            ipca: IpcaState::new(n_components, raw_width),
            reduce,
            autoencoder: Autoencoder::new(ae_input, cfg.enc_dim, cfg.seed ^ (table_id as u64 + 1)),
            raw_width,
        }
    }

    fn observe_values(&mut self, rows: &[Vec<BlockValue>], only_unseen: bool) {
        for row in rows {
            for (c, v) in row.iter().enumerate() {
                if let BlockValue::Numeric(x) = v {
                    if !only_unseen || self.stats.range(c).is_none() {
                        self.stats.observe(c, *x);
                    }
                }
            }
        }
    }

    /// Normalized numeric values and embedded text values, row by row.
    fn raw_features(&self, rows: &[Vec<BlockValue>], cfg: &EncoderConfig) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.raw_width);
        for row in rows {
            for (c, v) in row.iter().enumerate() {
                match v {
                    BlockValue::Numeric(x) => out.push(self.stats.normalize(c, *x).unwrap_or(0.0)),
                    BlockValue::Text(s) => out.extend(embed_text(s, cfg.text_dim)),
                }
            }
        }
        out.resize(self.raw_width, 0.0);
        out
    }

    fn ae_input(&self, raw: &[f64]) -> Vec<f64> {
        if self.reduce && self.ipca.is_fitted() {
            self.ipca.transform(raw)
        } else if self.reduce {
            vec![0.0; self.ipca.n_components]
        } else {
            raw.to_vec()
        }
    }
}

/// Outcome of a drift check for one table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftEvent {
    pub table_id: TableId,
    pub new_blocks: usize,
    pub similarity: f64,
    pub retrained: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EncoderFitReport {
    /// Autoencoder loss history per table (initial loss first).
    pub ae_loss: BTreeMap<TableId, Vec<f64>>,
}

/// All per-table encoders and their encoding stores.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BlockEncoders {
    pub cfg: EncoderConfig,
    pub tables: Vec<TableEncoder>,
    #[serde(skip)]
    stores: Vec<TableEncodings>,
    /// Blocks encoded since the last drift check.
    #[serde(skip)]
    pending: BTreeMap<TableId, Vec<u64>>,
}

impl BlockEncoders {
    /// Fits statistics, IPCA and autoencoders on the distinct blocks touched by
    /// `queries`, then encodes those blocks.
    pub fn fit(
        catalog: &TableCatalog,
        queries: &[QueryRecord],
        cfg: &EncoderConfig,
    ) -> Result<(Self, EncoderFitReport)> {
        let mut per_table: BTreeMap<TableId, std::collections::BTreeSet<u64>> = BTreeMap::new();
        for q in queries {
            for b in &q.result_blocks {
                per_table.entry(b.table_id).or_default().insert(b.block_no);
            }
        }
        let mut tables: Vec<TableEncoder> =
            (0..catalog.table_count()).map(|t| TableEncoder::new(catalog, t as TableId, cfg)).collect();
        let mut report = EncoderFitReport::default();
        for (t, blocks) in &per_table {
            let enc = &mut tables[*t as usize];
            let contents: Vec<_> =
                blocks.iter().map(|b| block_rows(catalog, cfg.content_seed, *t, *b, cfg.rows_per_block)).collect();
            for rows in &contents {
                enc.observe_values(rows, false);
            }
            let raws: Vec<Vec<f64>> = contents.iter().map(|rows| enc.raw_features(rows, cfg)).collect();
            if raws.len() >= enc.ipca.n_components {
                enc.ipca.partial_fit(&raws)?;
            }
            let inputs: Vec<Vec<f64>> = raws.iter().map(|r| enc.ae_input(r)).collect();
            let ae_cfg = AutoencoderConfig {
                enc_dim: cfg.enc_dim,
                epochs: cfg.ae_epochs,
                lr: cfg.ae_lr,
                batch_size: cfg.ae_batch,
                seed: cfg.seed ^ (*t as u64 + 1),
            };
            let history = enc.autoencoder.fit(&inputs, &ae_cfg)?;
            report.ae_loss.insert(*t, history);
        }
        let mut out = Self {
            cfg: cfg.clone(),
            tables,
            stores: (0..catalog.table_count()).map(|_| TableEncodings::new(cfg.enc_dim)).collect(),
            pending: BTreeMap::new(),
        };
        for (t, blocks) in &per_table {
            for b in blocks {
                out.encode_into_store(catalog, TableLba::new(*t, *b));
            }
        }
        out.pending.clear();
        Ok((out, report))
    }

    fn encode_into_store(&mut self, catalog: &TableCatalog, b: TableLba) -> Vec<f64> {
        let cfg = &self.cfg;
        let enc = &mut self.tables[b.table_id as usize];
        let rows = block_rows(catalog, cfg.content_seed, b.table_id, b.block_no, cfg.rows_per_block);
        enc.observe_values(&rows, true);
        let raw = enc.raw_features(&rows, cfg);
        let code = enc.autoencoder.encode(&enc.ae_input(&raw));
        self.stores[b.table_id as usize].insert(b.block_no, &code)
    }

    /// Encoding of `b`, computed and cached on first touch.
    pub fn encoding(&mut self, catalog: &TableCatalog, b: TableLba) -> Vec<f64> {
        if let Some(e) = self.stores[b.table_id as usize].get(b.block_no) {
            return e.iter().map(|v| *v as f64).collect();
        }
        self.pending.entry(b.table_id).or_default().push(b.block_no);
        self.encode_into_store(catalog, b)
    }

    pub fn result_encoding(&mut self, catalog: &TableCatalog, q: &QueryRecord) -> QueryResultEncoding {
        let (tables, dim, agg) = (catalog.table_count(), self.cfg.enc_dim, self.cfg.aggregation);
        query_result_encoding(&q.result_blocks, tables, dim, agg, |b| self.encoding(catalog, b))
    }

    pub fn statement(&self, q: &QueryRecord, tables: usize) -> StatementRepr {
        statement_repr(q, tables, self.cfg.semantics)
    }

    pub fn pending_blocks(&self) -> usize {
        self.pending.values().map(Vec::len).sum()
    }

    /// Folds blocks first encoded since the last check into each table's
    /// statistics and IPCA. Tables whose principal components moved below the
    /// similarity threshold get their autoencoder retrained on the new blocks,
    /// and only those blocks are re-encoded.
    pub fn drift_check(&mut self, catalog: &TableCatalog) -> Result<Vec<DriftEvent>> {
        let pending = std::mem::take(&mut self.pending);
        let mut events = Vec::new();
        for (t, blocks) in pending {
            let cfg = self.cfg.clone();
            let enc = &mut self.tables[t as usize];
            let contents: Vec<_> =
                blocks.iter().map(|b| block_rows(catalog, cfg.content_seed, t, *b, cfg.rows_per_block)).collect();
            for rows in &contents {
                enc.observe_values(rows, false);
            }
            let raws: Vec<Vec<f64>> = contents.iter().map(|rows| enc.raw_features(rows, &cfg)).collect();
            let before = enc.ipca.clone();
            if !enc.ipca.is_fitted() && raws.len() < enc.ipca.n_components {
                // not enough rows to seed the decomposition yet
                self.pending.entry(t).or_default().extend(blocks);
                continue;
            }
            enc.ipca.partial_fit(&raws)?;
            let similarity = if before.is_fitted() { pc_cosine_drift(&before, &enc.ipca)? } else { 0.0 };
            let retrained = similarity < cfg.drift_threshold;
            if retrained {
                let inputs: Vec<Vec<f64>> = raws.iter().map(|r| enc.ae_input(r)).collect();
                let ae_cfg = AutoencoderConfig {
                    enc_dim: cfg.enc_dim,
                    epochs: cfg.ae_epochs,
                    lr: cfg.ae_lr,
                    batch_size: cfg.ae_batch,
                    seed: cfg.seed ^ (t as u64 + 1) ^ enc.ipca.samples_seen,
                };
                enc.autoencoder.fit(&inputs, &ae_cfg)?;
                for b in &blocks {
                    self.encode_into_store(catalog, TableLba::new(t, *b));
                }
            }
            events.push(DriftEvent { table_id: t, new_blocks: blocks.len(), similarity, retrained });
        }
        Ok(events)
    }

    /// Writes one store file per table into `dir` (`<table>.enc`).
    pub fn save_stores(&self, catalog: &TableCatalog, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        for (t, store) in self.stores.iter().enumerate() {
            let name = &catalog.tables[t].name;
            store.save(name, &dir.join(format!("{name}.enc")))?;
        }
        Ok(())
    }

    /// Restores stores written by [`Self::save_stores`]. Missing files leave
    /// the table empty.
    pub fn load_stores(&mut self, catalog: &TableCatalog, dir: &Path) -> Result<()> {
        self.stores = (0..catalog.table_count()).map(|_| TableEncodings::new(self.cfg.enc_dim)).collect();
        self.pending.clear();
        for (t, spec) in catalog.tables.iter().enumerate() {
            let path = dir.join(format!("{}.enc", spec.name));
            if path.exists() {
                let (_, store) = TableEncodings::load(&path)?;
                self.stores[t] = store;
            }
        }
        Ok(())
    }

    pub fn store(&self, t: TableId) -> &TableEncodings {
        &self.stores[t as usize]
    }

    /// Makes sure a store exists for every table (after deserialization).
    pub fn ensure_stores(&mut self, tables: usize) {
        while self.stores.len() < tables {
            self.stores.push(TableEncodings::new(self.cfg.enc_dim));
        }
    }

    pub fn ensure_columns(&self, catalog: &TableCatalog) -> bool {
        self.tables.len() == catalog.table_count()
            && catalog
                .tables
                .iter()
                .all(|t| t.columns.iter().all(|c| matches!(c.kind, ColumnKind::Numeric | ColumnKind::Text)))
    }
}
