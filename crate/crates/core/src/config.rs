//! Experiment configuration: every knob under a dotted key, read from flat
//! `key = value` text with later sources overriding earlier ones.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::address::ReferenceStrategy;
use crate::encoding::{Aggregation, EncoderConfig, SemanticsMode};
use crate::error::{Error, Result};
use crate::hash::{fnv1a, mix};
use crate::model::{FineTuneConfig, ModelConfig, ThresholdVariant, TrainConfig};
use crate::prefetcher::{BudgetUnits, GraspConfig, PolicyKind};
use crate::simulator::{ArrivalMode, SimConfig};
use crate::trace::{PatternMix, SyntheticSpec};

pub const SEED_ENV: &str = "PREFETCHLAB_SEED";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VocabConfig {
    pub ds: usize,
    /// Spare classes for deltas that become frequent after deployment.
    pub void: usize,
    pub lookup_window: usize,
    pub lookup_min_count: u64,
}

impl Default for VocabConfig {
    fn default() -> Self {
        Self { ds: 1500, void: 0, lookup_window: 2000, lookup_min_count: 2 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrefetchConfig {
    pub policy: PolicyKind,
    pub k: u64,
    pub budget_units: BudgetUnits,
    pub randr_extent: u64,
    pub randr_threshold: usize,
}

impl Default for PrefetchConfig {
    fn default() -> Self {
        Self {
            policy: PolicyKind::Grasp,
            k: 50,
            budget_units: BudgetUnits::X128,
            randr_extent: 64,
            randr_threshold: 13,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub gen: SyntheticSpec,
    pub encoder: EncoderConfig,
    pub vocab: VocabConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub grasp: GraspConfig,
    pub prefetch: PrefetchConfig,
    pub sim: SimConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let mut sim = SimConfig { l_tune: 500, ..SimConfig::default() };
        sim.budget = BudgetUnits::X128.budget(50);
        Self {
            seed: 0,
            gen: SyntheticSpec::default(),
            encoder: EncoderConfig::default(),
            vocab: VocabConfig::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            grasp: GraspConfig::default(),
            prefetch: PrefetchConfig::default(),
            sim,
        }
    }
}

trait ConfigValue: Sized {
    fn parse_value(s: &str) -> std::result::Result<Self, String>;
    fn render(&self) -> String;
}

macro_rules! numeric_value {
    ($($t:ty),*) => {$(
        impl ConfigValue for $t {
            fn parse_value(s: &str) -> std::result::Result<Self, String> {
                s.parse().map_err(|e| format!("{e}"))
            }
            fn render(&self) -> String {
                self.to_string()
            }
        }
    )*};
}

numeric_value!(u64, usize, f64, bool);

macro_rules! enum_value {
    ($($t:ty),*) => {$(
        impl ConfigValue for $t {
            fn parse_value(s: &str) -> std::result::Result<Self, String> {
                s.parse().map_err(|e| format!("{e}"))
            }
            fn render(&self) -> String {
                self.as_str().to_string()
            }
        }
    )*};
}

enum_value!(PolicyKind, BudgetUnits, ArrivalMode, ThresholdVariant, Aggregation, SemanticsMode, ReferenceStrategy);

impl ConfigValue for PatternMix {
    fn parse_value(s: &str) -> std::result::Result<Self, String> {
        PatternMix::parse(s).map_err(|e| e.to_string())
    }
    fn render(&self) -> String {
        self.to_spec_string()
    }
}

macro_rules! config_keys {
    ($($key:literal => $($field:ident).+;)*) => {
        /// Every recognised key, in dump order.
        pub const KEYS: &[&str] = &[$($key),*];

        impl ExperimentConfig {
            /// Sets one key from its text form.
            pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
                let value = value.trim();
                let r = match key {
                    $($key => ConfigValue::parse_value(value).map(|v| self.$($field).+ = v),)*
                    _ => return Err(Error::Config(format!("unknown key '{key}'"))),
                };
                r.map_err(|e| Error::Config(format!("{key} = {value}: {e}")))
            }

            pub fn get(&self, key: &str) -> Option<String> {
                match key {
                    $($key => Some(self.$($field).+.render()),)*
                    _ => None,
                }
            }
        }
    };
}

config_keys! {
    "seed" => seed;
    "gen.tables" => gen.table_count;
    "gen.blocks_per_table" => gen.blocks_per_table;
    "gen.sf" => gen.scale_factor;
    "gen.zipf_z" => gen.zipf_z;
    "gen.mix" => gen.mix;
    "gen.queries" => gen.query_count;
    "gen.session_min" => gen.session_min;
    "gen.session_max" => gen.session_max;
    "gen.lb_size" => gen.lb_size;
    "gen.numeric_columns" => gen.numeric_columns;
    "gen.text_columns" => gen.text_columns;
    "gen.scan_len" => gen.params.scan_len;
    "gen.stride" => gen.params.stride;
    "gen.strided_count" => gen.params.strided_count;
    "gen.hop_tables" => gen.params.hop_tables;
    "gen.hop_run" => gen.params.hop_run;
    "gen.hop_step" => gen.params.hop_step;
    "gen.hop_aligned" => gen.params.hop_aligned;
    "gen.lookup_max_blocks" => gen.params.lookup_max_blocks;
    "gen.update_max_blocks" => gen.params.update_max_blocks;
    "encoder.enc_dim" => encoder.enc_dim;
    "encoder.text_dim" => encoder.text_dim;
    "encoder.rows_per_block" => encoder.rows_per_block;
    "encoder.ipca_min_width" => encoder.ipca_min_width;
    "encoder.max_components" => encoder.max_components;
    "encoder.ae_epochs" => encoder.ae_epochs;
    "encoder.ae_lr" => encoder.ae_lr;
    "encoder.ae_batch" => encoder.ae_batch;
    "encoder.aggregation" => encoder.aggregation;
    "encoder.semantics" => encoder.semantics;
    "encoder.drift_threshold" => encoder.drift_threshold;
    "vocab.ds" => vocab.ds;
    "vocab.void" => vocab.void;
    "vocab.lookup_window" => vocab.lookup_window;
    "vocab.lookup_min_count" => vocab.lookup_min_count;
    "model.lookback" => model.lookback;
    "model.hidden" => model.hidden;
    "model.merge" => model.merge;
    "model.layers" => model.layers;
    "model.dropout" => model.dropout;
    "model.emb_result" => model.emb_result;
    "model.emb_stmt" => model.emb_stmt;
    "model.emb_delta" => model.emb_delta;
    "model.emb_count" => model.emb_count;
    "model.emb_table" => model.emb_table;
    "model.count_buckets" => model.count_buckets;
    "train.lr" => train.lr;
    "train.batch_size" => train.batch_size;
    "train.max_epochs" => train.max_epochs;
    "train.patience" => train.patience;
    "train.val_fraction" => train.val_fraction;
    "train.focal_alpha" => train.focal_alpha;
    "train.focal_gamma" => train.focal_gamma;
    "finetune.epochs" => grasp.fine_tune.epochs;
    "finetune.lr" => grasp.fine_tune.lr;
    "finetune.batch_size" => grasp.fine_tune.batch_size;
    "finetune.focal_alpha" => grasp.fine_tune.focal_alpha;
    "finetune.focal_gamma" => grasp.fine_tune.focal_gamma;
    "prefetch.policy" => prefetch.policy;
    "prefetch.k" => prefetch.k;
    "prefetch.budget_units" => prefetch.budget_units;
    "prefetch.k_dc" => grasp.k_dc;
    "prefetch.reference" => grasp.reference;
    "prefetch.recent" => grasp.recent_capacity;
    "prefetch.randr_extent" => prefetch.randr_extent;
    "prefetch.randr_threshold" => prefetch.randr_threshold;
    "threshold.tau0" => grasp.threshold.tau;
    "threshold.alpha" => grasp.threshold.alpha;
    "threshold.variant" => grasp.threshold.variant;
    "sim.cache_blocks" => sim.cache_blocks;
    "sim.t_miss_ms" => sim.cost.t_miss_ms;
    "sim.t_hit_ms" => sim.cost.t_hit_ms;
    "sim.seq_discount" => sim.cost.seq_discount;
    "arrival.d_ms" => sim.arrival.d_ms;
    "arrival.mode" => sim.arrival.mode;
    "tune.l_tune" => sim.l_tune;
}

impl ExperimentConfig {
    /// Applies `key = value` lines; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value, got '{line}'", i + 1)))?;
            self.set(k.trim(), v)?;
        }
        Ok(())
    }

    /// Defaults, then the seed from the environment, then the file, then
    /// explicit overrides.
    pub fn load(file: Option<&Path>, overrides: &[(String, String)], env_seed: Option<&str>) -> Result<Self> {
        let mut cfg = Self::default();
        if let Some(s) = env_seed {
            cfg.set("seed", s).map_err(|e| Error::Config(format!("{SEED_ENV}: {e}")))?;
        }
        if let Some(p) = file {
            cfg.apply_text(&std::fs::read_to_string(p)?)?;
        }
        for (k, v) in overrides {
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg.resolved())
    }

    /// Fills derived fields: the budget and every sub-seed.
    pub fn resolved(mut self) -> Self {
        self.gen.seed = self.seed;
        self.encoder.seed = mix(&[self.seed, 1]);
        self.encoder.content_seed = self.seed;
        self.model.seed = mix(&[self.seed, 2]);
        self.train.seed = mix(&[self.seed, 3]);
        self.grasp.fine_tune.seed = mix(&[self.seed, 4]);
        self.sim.seed = mix(&[self.seed, 5]);
        self.sim.budget = self.prefetch.budget_units.budget(self.prefetch.k);
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.vocab.ds == 0 {
            return bad("vocab.ds must be at least 1".into());
        }
        if self.model.lookback == 0 || self.model.hidden == 0 || self.model.layers == 0 {
            return bad("model.lookback, model.hidden and model.layers must be positive".into());
        }
        if !(0.0..1.0).contains(&self.model.dropout) {
            return bad(format!("model.dropout must lie in [0, 1), got {}", self.model.dropout));
        }
        if self.model.count_buckets < 2 {
            return bad("model.count_buckets must be at least 2".into());
        }
        if self.vocab.lookup_window == 0 {
            return bad("vocab.lookup_window must be positive".into());
        }
        if !(self.grasp.k_dc >= 0.0 && self.grasp.k_dc.is_finite()) {
            return bad(format!("prefetch.k_dc must be non-negative, got {}", self.grasp.k_dc));
        }
        self.train.validate()?;
        self.sim.cost.validate()?;
        if self.sim.arrival.d_ms < 0.0 {
            return bad(format!("arrival.d_ms must be non-negative, got {}", self.sim.arrival.d_ms));
        }
        Ok(())
    }

    /// Every key with its effective value, one `key = value` per line.
    pub fn to_text(&self) -> String {
        KEYS.iter().map(|k| format!("{k} = {}\n", self.get(k).expect("listed key"))).collect()
    }

    /// Stable short hash of the effective configuration.
    pub fn hash(&self) -> String {
        format!("{:016x}", fnv1a(self.to_text().as_bytes()))
    }

    pub fn fine_tune(&self) -> &FineTuneConfig {
        &self.grasp.fine_tune
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_the_reference_setup() {
        let c = ExperimentConfig::default();
        assert_eq!(c.gen.lb_size, 32);
        assert_eq!(c.model.lookback, 2);
        assert_eq!(c.vocab.ds, 1500);
        assert_eq!(c.grasp.threshold.tau, 0.1);
        assert_eq!(c.grasp.threshold.alpha, 0.1);
        assert_eq!(c.grasp.k_dc, 25.0);
        assert_eq!(c.prefetch.k, 50);
    }

    #[test]
    fn round_trip() {
        let mut c = ExperimentConfig::default();
        c.apply_text("vocab.ds = 32\n# comment\nprefetch.policy = naive\ngen.mix = sequential-scan=0.5,table-hop=0.5\narrival.d_ms = 12.5").unwrap();
        let text = c.to_text();
        let mut d = ExperimentConfig::default();
        d.apply_text(&text).unwrap();
        assert_eq!(c, d);
        assert_eq!(c.hash(), d.hash());
        assert_eq!(d.prefetch.policy, PolicyKind::Naive);
    }

    #[test]
    fn unknown_and_bad_values_rejected() {
        let mut c = ExperimentConfig::default();
        assert!(matches!(c.set("vocab.size", "3"), Err(Error::Config(m)) if m.contains("unknown key")));
        assert!(c.set("vocab.ds", "many").is_err());
        assert!(c.apply_text("just words").is_err());
    }

    #[test]
    fn precedence() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.conf");
        std::fs::write(&p, "seed = 5\nprefetch.k = 7\n").unwrap();
        let c = ExperimentConfig::load(Some(&p), &[("prefetch.k".into(), "9".into())], Some("3")).unwrap();
        assert_eq!(c.seed, 5);
        assert_eq!(c.prefetch.k, 9);
        assert_eq!(c.sim.budget, 9 * 128);
        let c = ExperimentConfig::load(None, &[], Some("3")).unwrap();
        assert_eq!(c.seed, 3);
        assert_eq!(c.gen.seed, 3);
    }

    #[test]
    fn every_key_renders() {
        let c = ExperimentConfig::default();
        for k in KEYS {
            assert!(c.get(k).is_some(), "{k}");
        }
    }
}
