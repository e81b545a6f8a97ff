use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Running min/max per numeric column.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ColumnStats {
    ranges: Vec<Option<(f64, f64)>>,
}

impl ColumnStats {
    pub fn new(columns: usize) -> Self {
        Self { ranges: vec![None; columns] }
    }

    pub fn observe(&mut self, col: usize, x: f64) {
        if col >= self.ranges.len() {
            self.ranges.resize(col + 1, None);
        }
        let r = &mut self.ranges[col];
        *r = Some(match *r {
            None => (x, x),
            Some((lo, hi)) => (lo.min(x), hi.max(x)),
        });
    }

    pub fn range(&self, col: usize) -> Option<(f64, f64)> {
        self.ranges.get(col).copied().flatten()
    }

    /// Min-max scaling into `[-1, 1]`. Constant columns map to 0 and values
    /// outside the observed range are clamped.
    pub fn normalize(&self, col: usize, x: f64) -> Result<f64> {
        let (lo, hi) = self.range(col).ok_or(Error::UnseenColumn(col))?;
        if hi == lo {
            return Ok(0.0);
        }
        Ok(((x - lo) / (hi - lo) * 2.0 - 1.0).clamp(-1.0, 1.0))
    }
}
