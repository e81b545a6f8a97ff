//! The learned prefetcher: model inference, candidate construction and
//! online tuning.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use super::{DecideInput, Policy, PrefetchDecision, TuneEvent};
use crate::address::{apply_delta, DeltaSet, LogicalLba, ReferenceStrategy, TableDelta};
use crate::encoding::BlockEncoders;
use crate::error::Result;
use crate::model::{
    adapt_threshold, bucket_midpoint, fine_tune, predict, ContextBuilder, Dataset, FineTuneConfig, Network, Prediction,
    QueryContext, Sample, Targets, ThresholdState,
};
use crate::trace::{QueryRecord, TableCatalog};
use crate::vocab::{decode_top_deltas, encode_bi_delta, lookup_filter, DeltaVocabulary, TableDeltaLookup};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraspConfig {
    pub k_dc: f64,
    pub reference: ReferenceStrategy,
    pub threshold: ThresholdState,
    pub fine_tune: FineTuneConfig,
    /// Queries kept for vocabulary refresh and fine-tuning.
    pub recent_capacity: usize,
}

impl Default for GraspConfig {
    fn default() -> Self {
        Self {
            k_dc: 25.0,
            reference: ReferenceStrategy::Min,
            threshold: ThresholdState::default(),
            fine_tune: FineTuneConfig::default(),
            recent_capacity: 500,
        }
    }
}

/// Trained artifacts a GrASP instance is built from.
#[derive(Debug, Clone)]
pub struct GraspParts {
    pub net: Network,
    pub vocab: DeltaVocabulary,
    pub encoders: BlockEncoders,
    pub lookup: TableDeltaLookup,
}

struct Recent {
    ctx: QueryContext,
    delta: Option<DeltaSet>,
}

pub struct Grasp {
    pub cfg: GraspConfig,
    pub net: Network,
    pub vocab: DeltaVocabulary,
    pub encoders: BlockEncoders,
    pub lookup: TableDeltaLookup,
    pub threshold: ThresholdState,
    builder: ContextBuilder,
    window: VecDeque<QueryContext>,
    recent: VecDeque<Recent>,
    last_tables: Option<Vec<f64>>,
    pub skipped: u64,
}

/// Steps 2 to 10 of a decision, given the model's output.
#[allow(clippy::too_many_arguments)]
pub fn plan_prefetch(
    pred: &Prediction,
    vocab: &DeltaVocabulary,
    lookup: &TableDeltaLookup,
    tau: f64,
    reference: Option<LogicalLba>,
    k_dc: f64,
    catalog: &TableCatalog,
    budget: u64,
) -> PrefetchDecision {
    let Some(reference) = reference else { return PrefetchDecision::empty() };
    let buckets = pred.count.len();
    let bucket = (0..buckets).max_by(|a, b| pred.count[*a].total_cmp(&pred.count[*b]).then(b.cmp(a))).unwrap_or(0);
    let n = (bucket_midpoint(bucket, buckets) * k_dc).round() as usize;
    let default_on = pred.deltas[vocab.default_class()] >= 0.5;
    let any_assigned_on = vocab.assigned().iter().any(|(c, _)| pred.deltas[*c] >= 0.5);
    if n == 0 || (default_on && !any_assigned_on) {
        return PrefetchDecision::empty();
    }
    let tables: Vec<usize> = (0..pred.tables.len()).filter(|t| pred.tables[*t] >= tau).collect();
    let offsets = decode_top_deltas(&pred.deltas, vocab, n);
    let mut scored: Vec<(f64, f64, TableDelta)> = Vec::with_capacity(tables.len() * offsets.len());
    for (rank, off) in offsets.iter().enumerate() {
        let dp = vocab.class_of(*off).map_or(0.0, |c| pred.deltas[c]);
        for &t in &tables {
            scored.push((dp - rank as f64 * 1e-12, pred.tables[t], TableDelta::new(t as u16, *off)));
        }
    }
    let kept = lookup_filter(&scored.iter().map(|s| s.2).collect::<Vec<_>>(), lookup);
    let kept: std::collections::BTreeSet<TableDelta> = kept.into_iter().collect();
    scored.retain(|s| kept.contains(&s.2));
    scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(b.1.total_cmp(&a.1)));
    let cands =
        scored.into_iter().filter_map(|(_, _, d)| apply_delta(reference, d, |t| catalog.logical_blocks(t)).ok());
    PrefetchDecision::from_candidates(cands).truncated(catalog, budget)
}

impl Grasp {
    pub fn new(parts: GraspParts, catalog: &TableCatalog, cfg: GraspConfig) -> Self {
        let builder =
            ContextBuilder::new(catalog.table_count(), catalog.lb_size, cfg.reference, parts.net.cfg.count_buckets);
        let mut encoders = parts.encoders;
        encoders.ensure_stores(catalog.table_count());
        Self {
            threshold: cfg.threshold,
            cfg,
            net: parts.net,
            vocab: parts.vocab,
            encoders,
            lookup: parts.lookup,
            builder,
            window: VecDeque::new(),
            recent: VecDeque::new(),
            last_tables: None,
            skipped: 0,
        }
    }

    fn window_refs(&self) -> Vec<Option<&QueryContext>> {
        let l = self.net.cfg.lookback;
        let pad = l.saturating_sub(self.window.len());
        (0..pad).map(|_| None).chain(self.window.iter().map(Some)).collect()
    }

    pub fn predict(&self) -> Result<Option<Prediction>> {
        if self.window.is_empty() {
            return Ok(None);
        }
        predict(&self.net, &self.window_refs()).map(Some)
    }

    fn reencode(&mut self) {
        for r in &mut self.recent {
            let offs = r.delta.as_ref().map(DeltaSet::offsets).unwrap_or_default();
            r.ctx.bi_delta = encode_bi_delta(&offs, &self.vocab);
        }
        let recent_tail: Vec<QueryContext> =
            self.recent.iter().rev().take(self.window.len()).map(|r| r.ctx.clone()).collect::<Vec<_>>();
        for (w, ctx) in self.window.iter_mut().rev().zip(recent_tail) {
            w.bi_delta = ctx.bi_delta;
        }
    }

    /// Samples over the recent queries, with targets from each following query.
    fn recent_dataset(&self) -> Dataset {
        let lookback = self.net.cfg.lookback;
        let mut data = Dataset { contexts: self.recent.iter().map(|r| r.ctx.clone()).collect(), samples: Vec::new() };
        for i in 1..data.contexts.len() {
            let next = &data.contexts[i];
            let count_bucket = next.count_onehot.iter().position(|v| *v == 1.0).unwrap_or(0);
            let targets = Targets { tables: next.tables.clone(), deltas: next.bi_delta.clone(), count_bucket };
            let last = i - 1;
            let window = (0..lookback).rev().map(|k| last.checked_sub(k)).collect();
            data.samples.push(Sample { window, targets });
        }
        data
    }
}

impl Policy for Grasp {
    fn name(&self) -> &'static str {
        "grasp"
    }

    fn observe(&mut self, q: &QueryRecord, catalog: &TableCatalog) -> Result<()> {
        if let Some(probs) = self.last_tables.take() {
            let truth: Vec<usize> = q.block_tables().into_iter().map(|t| t as usize).collect();
            self.threshold = adapt_threshold(self.threshold, &probs, &truth);
        }
        let (ctx, obs) = self.builder.push(q, catalog, &mut self.encoders, &self.vocab);
        if let Some(ds) = &obs.delta_set {
            self.lookup.observe(ds);
        }
        self.window.push_back(ctx.clone());
        while self.window.len() > self.net.cfg.lookback {
            self.window.pop_front();
        }
        self.recent.push_back(Recent { ctx, delta: obs.delta_set });
        while self.recent.len() > self.cfg.recent_capacity.max(1) {
            self.recent.pop_front();
        }
        Ok(())
    }

    fn decide(&mut self, input: &DecideInput) -> Result<PrefetchDecision> {
        let Some(pred) = self.predict()? else { return Ok(PrefetchDecision::empty()) };
        let d = plan_prefetch(
            &pred,
            &self.vocab,
            &self.lookup,
            self.threshold.tau,
            self.builder.reference(),
            self.cfg.k_dc,
            input.catalog,
            input.budget,
        );
        if d.is_empty() {
            self.skipped += 1;
        }
        self.last_tables = Some(pred.tables);
        Ok(d)
    }

    fn tune(&mut self, catalog: &TableCatalog, at_query: u64) -> Result<Option<TuneEvent>> {
        let sets: Vec<DeltaSet> = self.recent.iter().filter_map(|r| r.delta.clone()).collect();
        let remapped = self.vocab.refresh(&sets);
        let mut event = TuneEvent { at_query, remapped, fine_tuned: false, drift: Vec::new() };
        if !event.remapped.is_empty() {
            self.reencode();
            let data = self.recent_dataset();
            let classes: Vec<usize> = event.remapped.iter().map(|r| r.class).collect();
            let mut cfg = self.cfg.fine_tune.clone();
            cfg.seed ^= at_query;
            fine_tune(&mut self.net, &data, &classes, &cfg)?;
            event.fine_tuned = true;
            log::info!("tuning at query {at_query}: {} classes remapped, heads fine-tuned", classes.len());
        }
        if self.encoders.pending_blocks() > 0 {
            event.drift = self.encoders.drift_check(catalog)?;
        }
        Ok(Some(event))
    }
}
