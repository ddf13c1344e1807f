use serde::{Deserialize, Serialize};

use super::{FeatureMatrix, GbdtModel};
use crate::stats::average_ranks;
use crate::{Error, Result};

/// Binary classification scores at a fixed probability threshold.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// `None` when only one class is present.
    pub auc_roc: Option<f64>,
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
}

impl Metrics {
    /// Labels are positive when `>= 0.5`.
    pub fn from_scores(scores: &[f64], labels: &[f64], threshold: f64) -> Result<Self> {
        if scores.len() != labels.len() || scores.is_empty() {
            return Err(Error::domain("scores and labels must be non-empty and aligned"));
        }
        let (mut tp, mut fp, mut tn, mut fn_) = (0, 0, 0, 0);
        for (&s, &l) in scores.iter().zip(labels) {
            match (s >= threshold, l >= 0.5) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, false) => tn += 1,
                (false, true) => fn_ += 1,
            }
        }
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        let f1 = if precision + recall == 0.0 { 0.0 } else { 2.0 * precision * recall / (precision + recall) };
        Ok(Metrics {
            accuracy: ratio(tp + tn, scores.len()),
            precision,
            recall,
            f1,
            auc_roc: auc_roc(scores, labels).ok(),
            tp,
            fp,
            tn,
            fn_,
        })
    }
}

pub fn evaluate(model: &GbdtModel, x: &FeatureMatrix, labels: &[f64]) -> Result<Metrics> {
    let scores = model.predict_matrix(x)?;
    Metrics::from_scores(&scores, labels, model.config.threshold)
}

/// Area under the ROC curve from the rank-sum statistic; ties count half.
pub fn auc_roc(scores: &[f64], labels: &[f64]) -> Result<f64> {
    let n_pos = labels.iter().filter(|&&l| l >= 0.5).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::Degenerate("AUC is undefined with a single class".into()));
    }
    let ranks = average_ranks(scores);
    let rank_sum: f64 = ranks.iter().zip(labels).filter(|(_, &l)| l >= 0.5).map(|(r, _)| r).sum();
    let u = rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos * n_neg) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn metric_examples() {
        let labels = [1.0, 1.0, 0.0, 0.0];
        let perfect = Metrics::from_scores(&[0.9, 0.8, 0.1, 0.2], &labels, 0.5).unwrap();
        assert_eq!((perfect.accuracy, perfect.precision, perfect.recall, perfect.f1), (1.0, 1.0, 1.0, 1.0));
        assert_eq!(perfect.auc_roc, Some(1.0));
        assert_eq!(auc_roc(&[0.5; 4], &labels).unwrap(), 0.5);

        // 9 TP, 1 FP, 1 FN, 9 TN.
        let mut scores = vec![0.9; 9];
        scores.push(0.1);
        scores.extend([0.9]);
        scores.extend([0.1; 9]);
        let mut labels = vec![1.0; 10];
        labels.extend([0.0; 10]);
        let m = Metrics::from_scores(&scores, &labels, 0.5).unwrap();
        assert_eq!((m.tp, m.fp, m.fn_, m.tn), (9, 1, 1, 9));
        for v in [m.accuracy, m.precision, m.recall, m.f1] {
            assert!((v - 0.9).abs() < 1e-12);
        }

        let one_class = Metrics::from_scores(&[0.2, 0.7], &[1.0, 1.0], 0.5).unwrap();
        assert_eq!(one_class.auc_roc, None);
        assert_eq!(one_class.accuracy, 0.5);
        assert!(auc_roc(&[0.2, 0.7], &[1.0, 1.0]).is_err());
    }

    fn brute_auc(scores: &[f64], labels: &[f64]) -> f64 {
        let (mut num, mut den) = (0.0, 0.0);
        for (i, &si) in scores.iter().enumerate() {
            for (j, &sj) in scores.iter().enumerate() {
                if labels[i] >= 0.5 && labels[j] < 0.5 {
                    den += 1.0;
                    num += if si > sj { 1.0 } else if si == sj { 0.5 } else { 0.0 };
                }
            }
        }
        num / den
    }

    proptest! {
        #[test]
        fn rank_auc_equals_pairwise_count(
            pairs in prop::collection::vec(((0u8..20).prop_map(|v| v as f64 / 20.0), prop::bool::ANY), 2..200)
        ) {
            let scores: Vec<f64> = pairs.iter().map(|p| p.0).collect();
            let labels: Vec<f64> = pairs.iter().map(|p| p.1 as u8 as f64).collect();
            prop_assume!(labels.contains(&1.0) && labels.contains(&0.0));
            prop_assert_eq!(auc_roc(&scores, &labels).unwrap(), brute_auc(&scores, &labels));
        }

        #[test]
        fn confusion_identities(pairs in prop::collection::vec((0.0f64..1.0, prop::bool::ANY), 1..100)) {
            let scores: Vec<f64> = pairs.iter().map(|p| p.0).collect();
            let labels: Vec<f64> = pairs.iter().map(|p| p.1 as u8 as f64).collect();
            let m = Metrics::from_scores(&scores, &labels, 0.5).unwrap();
            prop_assert_eq!(m.tp + m.fp + m.tn + m.fn_, scores.len());
            prop_assert!((m.accuracy - (m.tp + m.tn) as f64 / scores.len() as f64).abs() < 1e-15);
            if m.tp > 0 {
                let f1 = 2.0 * m.tp as f64 / (2 * m.tp + m.fp + m.fn_) as f64;
                prop_assert!((m.f1 - f1).abs() < 1e-12);
            }
        }
    }
}
