//! End-to-end plumbing: training a prefetcher from a workload, labeling
//! studies and delta reports, artifact files and policy construction.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::address::{consecutive_deltas, delta_set, to_logical_set, DeltaSet, LogicalLba, ReferenceStrategy};
use crate::config::ExperimentConfig;
use crate::encoding::BlockEncoders;
use crate::error::{Error, Result};
use crate::model::{
    build_dataset, checkpoint_crc, load_checkpoint, save_checkpoint, train, ContextBuilder, ModelShape, Network,
    TrainReport,
};
use crate::prefetcher::{
    Grasp, GraspParts, LookAhead, NaiveDelta, NoPrefetch, Oracle, Policy, PolicyKind, RandomReadAhead,
};
use crate::trace::{QueryRecord, TableCatalog, Workload};
use crate::vocab::{build_vocab, DeltaVocabulary, TableDeltaLookup};

/// Delta set of every query against the last non-empty query before it.
pub fn delta_sets(queries: &[QueryRecord], lb_size: u64, strategy: ReferenceStrategy) -> Vec<Option<DeltaSet>> {
    let mut prev: Option<BTreeSet<LogicalLba>> = None;
    queries
        .iter()
        .map(|q| {
            let cur = to_logical_set(&q.result_blocks, lb_size);
            if cur.is_empty() {
                return None;
            }
            let ds = prev.as_ref().and_then(|p| delta_set(p, &cur, strategy).ok());
            prev = Some(cur);
            ds
        })
        .collect()
}

/// Same as [`delta_sets`] with every table laid end to end as one address space.
fn flat_delta_sets(
    queries: &[QueryRecord],
    catalog: &TableCatalog,
    strategy: ReferenceStrategy,
) -> Vec<Option<DeltaSet>> {
    let flat: Vec<QueryRecord> = queries
        .iter()
        .map(|q| {
            let mut q = q.clone();
            q.result_blocks = q
                .result_blocks
                .iter()
                .map(|b| crate::address::TableLba::new(0, (catalog.flat_address(*b) as u64) / catalog.lb_size))
                .collect();
            q
        })
        .collect();
    delta_sets(&flat, 1, strategy)
}

fn unique_offsets(sets: &[Option<DeltaSet>]) -> usize {
    sets.iter().flatten().flat_map(|d| d.members.iter().map(|m| m.offset)).collect::<BTreeSet<_>>().len()
}

/// Unique delta counts per labeling scheme and reference strategy.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelingStudy {
    pub table_based: BTreeMap<String, usize>,
    pub consecutive: BTreeMap<String, usize>,
}

pub fn labeling_study(queries: &[QueryRecord], catalog: &TableCatalog) -> LabelingStudy {
    let mut table_based = BTreeMap::new();
    let mut consecutive = BTreeMap::new();
    for s in ReferenceStrategy::ALL {
        table_based.insert(s.as_str().into(), unique_offsets(&delta_sets(queries, catalog.lb_size, s)));
        consecutive.insert(s.as_str().into(), unique_offsets(&flat_delta_sets(queries, catalog, s)));
    }
    LabelingStudy { table_based, consecutive }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingReport {
    pub queries: usize,
    pub samples: usize,
    pub tables: usize,
    pub unique_deltas: usize,
    pub vocab_assigned: usize,
    pub classes: usize,
    pub param_count: usize,
    pub checkpoint_crc: String,
    pub autoencoder_loss: BTreeMap<String, Vec<f64>>,
    pub training: TrainReport,
    pub labeling: LabelingStudy,
}

/// Fits encoders, builds the vocabulary, trains the network and seeds the
/// frequent-delta lookup from the training deltas.
pub fn train_pipeline(w: &Workload, cfg: &ExperimentConfig) -> Result<(GraspParts, TrainingReport)> {
    if w.queries.is_empty() {
        return Err(Error::EmptyTrainingSet);
    }
    let catalog = w.final_catalog();
    let (mut encoders, fit) = BlockEncoders::fit(&catalog, &w.queries, &cfg.encoder)?;
    let sets = delta_sets(&w.queries, catalog.lb_size, cfg.grasp.reference);
    let vocab = build_vocab(sets.iter().flatten(), cfg.vocab.ds, cfg.vocab.void)?;
    let shape =
        ModelShape { tables: catalog.table_count(), enc_dim: cfg.encoder.enc_dim, classes: vocab.class_count() };
    let mut net = Network::new(cfg.model.clone(), shape);
    let mut builder =
        ContextBuilder::new(catalog.table_count(), catalog.lb_size, cfg.grasp.reference, cfg.model.count_buckets);
    let (data, _) = build_dataset(&w.queries, &catalog, &mut encoders, &vocab, &mut builder, cfg.model.lookback);
    let training = train(&mut net, &data, &cfg.train)?;
    let mut lookup = TableDeltaLookup::new(cfg.vocab.lookup_window, cfg.vocab.lookup_min_count);
    for d in sets.iter().flatten() {
        lookup.observe(d);
    }
    let report = TrainingReport {
        queries: w.queries.len(),
        samples: data.samples.len(),
        tables: catalog.table_count(),
        unique_deltas: unique_offsets(&sets),
        vocab_assigned: vocab.assigned().len(),
        classes: vocab.class_count(),
        param_count: net.param_count(),
        checkpoint_crc: format!("{:08x}", checkpoint_crc(&net)),
        autoencoder_loss: fit.ae_loss.into_iter().map(|(t, l)| (catalog.tables[t as usize].name.clone(), l)).collect(),
        training,
        labeling: labeling_study(&w.queries, &catalog),
    };
    Ok((GraspParts { net, vocab, encoders, lookup }, report))
}

/// One delta per row, for plotting delta distributions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaRow {
    pub seq: usize,
    pub labeling: String,
    pub table: String,
    pub offset: i64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaReport {
    pub rows: Vec<DeltaRow>,
    /// (labeling, offset) -> occurrences.
    pub frequency: BTreeMap<(String, i64), u64>,
    pub labeling: LabelingStudy,
}

/// Per-access consecutive deltas over flat addresses next to the set-based
/// table deltas under `strategy`.
pub fn delta_report(w: &Workload, strategy: ReferenceStrategy) -> DeltaReport {
    let catalog = w.final_catalog();
    let mut rows = Vec::new();
    let flat: Vec<i64> = w
        .queries
        .iter()
        .flat_map(|q| q.result_blocks.iter().map(|b| catalog.flat_address(*b) / catalog.lb_size as i64))
        .collect();
    for (i, d) in consecutive_deltas(&flat).into_iter().enumerate() {
        rows.push(DeltaRow { seq: i, labeling: "consecutive".into(), table: String::new(), offset: d });
    }
    for (i, ds) in delta_sets(&w.queries, catalog.lb_size, strategy).into_iter().enumerate() {
        for m in ds.iter().flat_map(|d| d.members.iter()) {
            let table = catalog.tables[m.target_table_id as usize].name.clone();
            rows.push(DeltaRow { seq: i, labeling: "table".into(), table, offset: m.offset });
        }
    }
    let mut frequency = BTreeMap::new();
    for r in &rows {
        *frequency.entry((r.labeling.clone(), r.offset)).or_insert(0) += 1;
    }
    DeltaReport { rows, frequency, labeling: labeling_study(&w.queries, &catalog) }
}

const CHECKPOINT: &str = "model.ckpt";
const VOCAB: &str = "vocab.txt";
const ENCODERS: &str = "encoders.json";
const LOOKUP: &str = "lookup.json";
const STORES: &str = "encodings";

pub fn save_artifacts(dir: &Path, parts: &GraspParts, catalog: &TableCatalog) -> Result<()> {
    std::fs::create_dir_all(dir.join(STORES))?;
    save_checkpoint(&parts.net, &dir.join(CHECKPOINT))?;
    parts.vocab.save(&dir.join(VOCAB))?;
    std::fs::write(dir.join(ENCODERS), serde_json::to_vec(&parts.encoders)?)?;
    std::fs::write(dir.join(LOOKUP), serde_json::to_vec(&parts.lookup)?)?;
    parts.encoders.save_stores(catalog, &dir.join(STORES))
}

/// Loads artifacts and checks they agree with each other and with `catalog`.
pub fn load_artifacts(dir: &Path, catalog: &TableCatalog) -> Result<GraspParts> {
    let net = load_checkpoint(&dir.join(CHECKPOINT))?;
    let vocab = DeltaVocabulary::load(&dir.join(VOCAB))?;
    let mut encoders: BlockEncoders = serde_json::from_slice(&std::fs::read(dir.join(ENCODERS))?)?;
    let lookup: TableDeltaLookup = serde_json::from_slice(&std::fs::read(dir.join(LOOKUP))?)?;
    check_compatible(&net, &vocab, &encoders, catalog)?;
    encoders.ensure_stores(catalog.table_count());
    encoders.load_stores(catalog, &dir.join(STORES))?;
    Ok(GraspParts { net, vocab, encoders, lookup })
}

fn check_compatible(net: &Network, vocab: &DeltaVocabulary, enc: &BlockEncoders, catalog: &TableCatalog) -> Result<()> {
    let bad = |m: String| Err(Error::IncompatibleArtifacts(m));
    if net.shape.classes != vocab.class_count() {
        return bad(format!("model has {} delta classes, vocabulary has {}", net.shape.classes, vocab.class_count()));
    }
    if net.shape.tables != catalog.table_count() || enc.tables.len() != catalog.table_count() {
        return bad(format!(
            "model expects {} tables and encoders cover {}, trace has {}",
            net.shape.tables,
            enc.tables.len(),
            catalog.table_count()
        ));
    }
    if net.shape.enc_dim != enc.cfg.enc_dim {
        return bad(format!("model enc_dim {} differs from encoder enc_dim {}", net.shape.enc_dim, enc.cfg.enc_dim));
    }
    if !enc.ensure_columns(catalog) {
        return bad("trace columns differ from the ones the encoders were fitted on".into());
    }
    Ok(())
}

/// Builds the configured policy; the learned one needs trained parts.
pub fn build_policy(
    kind: PolicyKind,
    cfg: &ExperimentConfig,
    parts: Option<GraspParts>,
    catalog: &TableCatalog,
) -> Result<Box<dyn Policy>> {
    let p = &cfg.prefetch;
    Ok(match kind {
        PolicyKind::Np => Box::new(NoPrefetch),
        PolicyKind::Oracle => Box::new(Oracle),
        PolicyKind::La => Box::new(LookAhead::new(p.k)),
        PolicyKind::Naive => Box::new(NaiveDelta::new(p.k)),
        PolicyKind::Randr => Box::new(RandomReadAhead::new(p.randr_extent, p.randr_threshold)),
        PolicyKind::Grasp => {
            let parts = parts.ok_or_else(|| Error::InvalidArgument("policy grasp needs trained artifacts".into()))?;
            Box::new(Grasp::new(parts, catalog, cfg.grasp.clone()))
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::address::TableLba;
    use crate::trace::{ColumnKind, ColumnSpec, QueryType, TableSpec};

    fn catalog() -> TableCatalog {
        let spec = |name: &str| TableSpec {
            name: name.into(),
            block_count: 100,
            columns: vec![ColumnSpec { name: "n0".into(), kind: ColumnKind::Numeric }],
        };
        TableCatalog::new(vec![spec("a"), spec("b")], 1).unwrap()
    }

    fn q(blocks: &[(u16, u64)]) -> QueryRecord {
        QueryRecord::from_blocks(0, QueryType::Select, 2, blocks.iter().map(|&(t, b)| TableLba::new(t, b)).collect())
    }

    #[test]
    fn anchors_skip_empty_queries() {
        let qs = vec![q(&[(0, 3)]), q(&[]), q(&[(0, 5), (1, 1)])];
        let sets = delta_sets(&qs, 1, ReferenceStrategy::Min);
        assert!(sets[0].is_none() && sets[1].is_none());
        let offs: Vec<i64> = sets[2].as_ref().unwrap().members.iter().map(|m| m.offset).collect();
        assert_eq!(offs, vec![2, -2]);
    }

    #[test]
    fn table_hops_inflate_flat_labels() {
        // same in-table pattern in both tables, alternating
        let qs: Vec<QueryRecord> = (0..20).map(|i| q(&[((i % 2) as u16, i), ((i % 2) as u16, i + 1)])).collect();
        let study = labeling_study(&qs, &catalog());
        assert!(study.table_based["min"] < study.consecutive["min"], "{study:?}");
    }

    #[test]
    fn delta_report_rows() {
        let w = Workload::new(catalog(), vec![q(&[(0, 1), (0, 4)]), q(&[(1, 2)])]);
        let r = delta_report(&w, ReferenceStrategy::Min);
        let consecutive: Vec<i64> = r.rows.iter().filter(|r| r.labeling == "consecutive").map(|r| r.offset).collect();
        assert_eq!(consecutive, vec![3, 100 + 2 - 4]);
        let table: Vec<&DeltaRow> = r.rows.iter().filter(|r| r.labeling == "table").collect();
        assert_eq!(table.len(), 1);
        assert_eq!((table[0].table.as_str(), table[0].offset), ("b", 1));
    }
}
