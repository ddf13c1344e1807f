//! Gradient-boosted decision trees for binary classification.
//!
//! Trees are grown level-wise with exact greedy split search on the logistic
//! loss. Missing entries (masked feature slots) are routed by a learned
//! default direction, so their stored values never affect a prediction.

mod metrics;
mod search;
mod tree;

pub use metrics::{auc_roc, evaluate, Metrics};
pub use search::{random_search, stratified_folds, SearchResult, SearchSpace, Trial};
pub use tree::{train_gbdt, GbdtModel, Node, Tree};

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Boosting hyperparameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GbdtConfig {
    /// L1 penalty on leaf weights.
    pub alpha: f64,
    pub colsample_bytree: f64,
    pub subsample: f64,
    pub learning_rate: f64,
    pub max_depth: usize,
    /// Minimum hessian sum per child.
    pub min_child_weight: f64,
    pub n_estimators: usize,
    /// L2 penalty on leaf weights.
    pub lambda: f64,
    /// Probability cut-off for class decisions.
    pub threshold: f64,
    pub seed: u64,
}

impl Default for GbdtConfig {
    fn default() -> Self {
        GbdtConfig {
            alpha: 0.05,
            colsample_bytree: 0.8,
            subsample: 0.8,
            learning_rate: 0.1,
            max_depth: 6,
            min_child_weight: 1.0,
            n_estimators: 100,
            lambda: 1.0,
            threshold: 0.5,
            seed: 0,
        }
    }
}

impl GbdtConfig {
    /// Check every field against the tuning intervals.
    pub fn validate(&self) -> Result<()> {
        let s = SearchSpace::default();
        let check = |name: &str, v: f64, (lo, hi): (f64, f64)| {
            if v >= lo && v <= hi {
                Ok(())
            } else {
                Err(Error::config(format!("{name} = {v} outside [{lo}, {hi}]")))
            }
        };
        check("alpha", self.alpha, s.alpha)?;
        check("colsample_bytree", self.colsample_bytree, s.colsample_bytree)?;
        check("subsample", self.subsample, s.subsample)?;
        check("learning_rate", self.learning_rate, s.learning_rate)?;
        check("max_depth", self.max_depth as f64, (s.max_depth.0 as f64, s.max_depth.1 as f64))?;
        check("min_child_weight", self.min_child_weight, s.min_child_weight)?;
        check("n_estimators", self.n_estimators as f64, (s.n_estimators.0 as f64, s.n_estimators.1 as f64))?;
        if !(self.lambda >= 0.0) {
            return Err(Error::config("lambda must be non-negative"));
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::config("threshold must lie in (0, 1)"));
        }
        Ok(())
    }
}

/// Dense row-major feature matrix with a presence mask. Absent entries are
/// missing values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureMatrix {
    pub n_rows: usize,
    pub n_cols: usize,
    pub values: Vec<f64>,
    pub present: Vec<bool>,
}

impl FeatureMatrix {
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n_cols = rows.first().map_or(0, Vec::len);
        let mut m = FeatureMatrix::with_cols(n_cols);
        for r in rows {
            m.push_row(r, None)?;
        }
        Ok(m)
    }

    pub fn with_cols(n_cols: usize) -> Self {
        FeatureMatrix { n_rows: 0, n_cols, values: Vec::new(), present: Vec::new() }
    }

    pub fn push_row(&mut self, values: &[f64], mask: Option<&[bool]>) -> Result<()> {
        if values.len() != self.n_cols || mask.is_some_and(|m| m.len() != self.n_cols) {
            return Err(Error::domain(format!("row has {} values, matrix has {} columns", values.len(), self.n_cols)));
        }
        self.values.extend_from_slice(values);
        match mask {
            Some(m) => self.present.extend_from_slice(m),
            None => self.present.extend(std::iter::repeat_n(true, self.n_cols)),
        }
        self.n_rows += 1;
        Ok(())
    }

    pub fn row(&self, i: usize) -> (&[f64], &[bool]) {
        let a = i * self.n_cols;
        (&self.values[a..a + self.n_cols], &self.present[a..a + self.n_cols])
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> Option<f64> {
        let k = i * self.n_cols + j;
        self.present[k].then(|| self.values[k])
    }

    pub fn select_rows(&self, rows: &[usize]) -> FeatureMatrix {
        let mut m = FeatureMatrix::with_cols(self.n_cols);
        for &r in rows {
            let (v, p) = self.row(r);
            m.values.extend_from_slice(v);
            m.present.extend_from_slice(p);
            m.n_rows += 1;
        }
        m
    }

    /// Rows with a NaN or infinite value in a present slot.
    pub fn invalid_rows(&self) -> Vec<usize> {
        (0..self.n_rows)
            .filter(|&i| {
                let (v, p) = self.row(i);
                v.iter().zip(p).any(|(x, &on)| on && !x.is_finite())
            })
            .collect()
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Weighted mean logistic loss of probabilities against (soft) targets.
pub fn log_loss(p: &[f64], y: &[f64], w: Option<&[f64]>) -> f64 {
    let eps = 1e-15;
    let mut total = 0.0;
    let mut wsum = 0.0;
    for (i, (&pi, &yi)) in p.iter().zip(y).enumerate() {
        let wi = w.map_or(1.0, |w| w[i]);
        let pi = pi.clamp(eps, 1.0 - eps);
        total -= wi * (yi * pi.ln() + (1.0 - yi) * (1.0 - pi).ln());
        wsum += wi;
    }
    total / wsum.max(f64::MIN_POSITIVE)
}
