//! Adaptive table-selection threshold.

use serde::{Deserialize, Serialize};

pub const TAU_MIN: f64 = 0.001;
pub const TAU_MAX: f64 = 0.999;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ThresholdVariant {
    /// Lower on any false negative, otherwise creep upward.
    #[default]
    RecallMax,
    /// The update rule exactly as printed: only lowers when `tau` is already
    /// below every accessed table's probability.
    Literal,
}

impl std::str::FromStr for ThresholdVariant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "recall-max" => Ok(ThresholdVariant::RecallMax),
            "literal" => Ok(ThresholdVariant::Literal),
            _ => Err(format!("unknown threshold variant '{s}'")),
        }
    }
}

impl ThresholdVariant {
    pub fn as_str(self) -> &'static str {
        match self {
            ThresholdVariant::RecallMax => "recall-max",
            ThresholdVariant::Literal => "literal",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdState {
    pub tau: f64,
    pub alpha: f64,
    pub variant: ThresholdVariant,
}

impl Default for ThresholdState {
    fn default() -> Self {
        Self { tau: 0.1, alpha: 0.1, variant: ThresholdVariant::RecallMax }
    }
}

impl ThresholdState {
    pub fn new(tau: f64, alpha: f64, variant: ThresholdVariant) -> Self {
        Self { tau: tau.clamp(TAU_MIN, TAU_MAX), alpha, variant }
    }
}

/// One update after the true tables of a query are known. Queries that touch
/// no table leave the threshold unchanged.
pub fn adapt_threshold(st: ThresholdState, table_probs: &[f64], true_tables: &[usize]) -> ThresholdState {
    if true_tables.is_empty() {
        return st;
    }
    let probs: Vec<f64> = true_tables.iter().map(|t| table_probs.get(*t).copied().unwrap_or(0.0)).collect();
    let fn_count = probs.iter().filter(|p| **p < st.tau).count() as f64;
    let lower = match st.variant {
        ThresholdVariant::RecallMax => fn_count > 0.0,
        ThresholdVariant::Literal => st.tau < probs.iter().cloned().fold(f64::INFINITY, f64::min),
    };
    let tau = if lower { st.tau - st.alpha * fn_count } else { st.tau + st.alpha / 10.0 };
    ThresholdState { tau: tau.clamp(TAU_MIN, TAU_MAX), ..st }
}
