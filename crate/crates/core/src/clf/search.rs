use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{evaluate, train_gbdt, FeatureMatrix, GbdtConfig};
use crate::rng::{derive, stage_rng};
use crate::{Error, Result};

/// Tuning intervals; every draw is uniform within them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchSpace {
    pub alpha: (f64, f64),
    pub colsample_bytree: (f64, f64),
    pub subsample: (f64, f64),
    pub learning_rate: (f64, f64),
    pub max_depth: (usize, usize),
    pub min_child_weight: (f64, f64),
    pub n_estimators: (usize, usize),
}

impl Default for SearchSpace {
    fn default() -> Self {
        SearchSpace {
            alpha: (0.01, 0.1),
            colsample_bytree: (0.5, 1.0),
            subsample: (0.5, 1.0),
            learning_rate: (0.01, 0.3),
            max_depth: (3, 10),
            min_child_weight: (1.0, 6.0),
            n_estimators: (50, 200),
        }
    }
}

impl SearchSpace {
    pub fn sample(&self, rng: &mut impl rand::Rng, seed: u64) -> GbdtConfig {
        let mut u = |(lo, hi): (f64, f64)| if hi > lo { rng.random_range(lo..=hi) } else { lo };
        let alpha = u(self.alpha);
        let colsample_bytree = u(self.colsample_bytree);
        let subsample = u(self.subsample);
        let learning_rate = u(self.learning_rate);
        let min_child_weight = u(self.min_child_weight);
        let max_depth = rng.random_range(self.max_depth.0..=self.max_depth.1);
        let n_estimators = rng.random_range(self.n_estimators.0..=self.n_estimators.1);
        GbdtConfig {
            alpha,
            colsample_bytree,
            subsample,
            learning_rate,
            max_depth,
            min_child_weight,
            n_estimators,
            seed,
            ..GbdtConfig::default()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trial {
    pub index: usize,
    pub config: GbdtConfig,
    pub fold_scores: Vec<f64>,
    pub mean_accuracy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    pub best: GbdtConfig,
    pub best_index: usize,
    pub best_score: f64,
    pub trials: Vec<Trial>,
}

/// Fold index per row, stratified by label and shuffled with `seed`.
pub fn stratified_folds(labels: &[f64], k: usize, seed: u64) -> Result<Vec<usize>> {
    if k < 2 || labels.len() < k {
        return Err(Error::domain(format!("cannot split {} rows into {k} folds", labels.len())));
    }
    let mut rng = stage_rng(seed, "folds", 0);
    let mut fold = vec![0; labels.len()];
    let mut offset = 0;
    for class in [false, true] {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| (labels[i] >= 0.5) == class).collect();
        idx.shuffle(&mut rng);
        for (j, i) in idx.into_iter().enumerate() {
            fold[i] = (offset + j) % k;
        }
        offset += labels.len();
    }
    Ok(fold)
}

/// Random search with stratified k-fold cross-validation. The trial
/// configuration sequence depends only on `seed`.
pub fn random_search(
    x: &FeatureMatrix,
    labels: &[f64],
    n_trials: usize,
    folds: usize,
    seed: u64,
    space: &SearchSpace,
) -> Result<SearchResult> {
    if n_trials < 1 {
        return Err(Error::domain("random search needs at least one trial"));
    }
    let mut rng = stage_rng(seed, "search", 0);
    let configs: Vec<GbdtConfig> = (0..n_trials).map(|i| space.sample(&mut rng, derive(seed, "trial", i as u64))).collect();
    let fold_of = stratified_folds(labels, folds, seed)?;
    let splits: Vec<(FeatureMatrix, Vec<f64>, FeatureMatrix, Vec<f64>)> = (0..folds)
        .map(|f| {
            let train: Vec<usize> = (0..labels.len()).filter(|&i| fold_of[i] != f).collect();
            let test: Vec<usize> = (0..labels.len()).filter(|&i| fold_of[i] == f).collect();
            (
                x.select_rows(&train),
                train.iter().map(|&i| labels[i]).collect(),
                x.select_rows(&test),
                test.iter().map(|&i| labels[i]).collect(),
            )
        })
        .collect();

    let trials: Vec<Trial> = configs
        .into_par_iter()
        .enumerate()
        .map(|(index, config)| {
            let fold_scores = splits
                .iter()
                .map(|(xt, yt, xv, yv)| {
                    let model = train_gbdt(xt, yt, None, &config)?;
                    Ok(evaluate(&model, xv, yv)?.accuracy)
                })
                .collect::<Result<Vec<f64>>>()?;
            let mean_accuracy = fold_scores.iter().sum::<f64>() / fold_scores.len() as f64;
            Ok(Trial { index, config, fold_scores, mean_accuracy })
        })
        .collect::<Result<Vec<Trial>>>()?;

    let mut best_index = 0;
    for t in &trials {
        if t.mean_accuracy > trials[best_index].mean_accuracy {
            best_index = t.index;
        }
    }
    Ok(SearchResult {
        best: trials[best_index].config.clone(),
        best_index,
        best_score: trials[best_index].mean_accuracy,
        trials,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> (FeatureMatrix, Vec<f64>) {
        let rows: Vec<Vec<f64>> = (0..80).map(|i| vec![(i % 17) as f64, ((i * 5) % 7) as f64]).collect();
        let y = (0..80).map(|i| ((i % 17) > 8) as u8 as f64).collect();
        (FeatureMatrix::from_rows(&rows).unwrap(), y)
    }

    #[test]
    fn search_contract() {
        let (x, y) = toy();
        let space = SearchSpace { n_estimators: (5, 20), ..Default::default() };
        assert!(random_search(&x, &y, 0, 5, 1, &space).is_err());
        let one = random_search(&x, &y, 1, 5, 1, &space).unwrap();
        assert_eq!(one.best, one.trials[0].config);
        let a = random_search(&x, &y, 4, 5, 7, &space).unwrap();
        let b = random_search(&x, &y, 4, 5, 7, &space).unwrap();
        assert_eq!(a, b);
        assert!(a.best_score >= a.trials[0].mean_accuracy);
        for t in &a.trials {
            assert_eq!(t.fold_scores.len(), 5);
        }
    }

    #[test]
    fn folds_are_stratified() {
        let y: Vec<f64> = (0..50).map(|i| (i < 20) as u8 as f64).collect();
        let f = stratified_folds(&y, 5, 3).unwrap();
        for k in 0..5 {
            let pos = (0..50).filter(|&i| f[i] == k && y[i] == 1.0).count();
            let all = (0..50).filter(|&i| f[i] == k).count();
            assert_eq!((pos, all), (4, 10));
        }
    }

    #[test]
    fn drawn_configs_respect_the_intervals() {
        let mut rng = stage_rng(1, "x", 0);
        let space = SearchSpace::default();
        for i in 0..500 {
            space.sample(&mut rng, i).validate().unwrap();
        }
    }
}
