use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use super::{log_loss, sigmoid, FeatureMatrix, GbdtConfig};
use crate::rng::{rng_from, Rng};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Node {
    Split { feature: usize, threshold: f64, default_left: bool, left: usize, right: usize },
    Leaf { value: f64 },
}

/// One regression tree; node 0 is the root.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn predict(&self, values: &[f64], present: &[bool]) -> f64 {
        let mut k = 0;
        loop {
            match self.nodes[k] {
                Node::Leaf { value } => return value,
                Node::Split { feature, threshold, default_left, left, right } => {
                    let go_left = if present[feature] { values[feature] <= threshold } else { default_left };
                    k = if go_left { left } else { right };
                }
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], k: usize) -> usize {
            match nodes[k] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + walk(nodes, left).max(walk(nodes, right)),
            }
        }
        walk(&self.nodes, 0)
    }

    pub fn leaf_count(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, Node::Leaf { .. })).count()
    }

    fn scale_leaves(&mut self, factor: f64) {
        for n in &mut self.nodes {
            if let Node::Leaf { value } = n {
                *value *= factor;
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GbdtModel {
    pub trees: Vec<Tree>,
    /// Initial log-odds.
    pub base_score: f64,
    pub n_features: usize,
    pub config: GbdtConfig,
    /// Training rows dropped for non-finite values.
    pub rejected_rows: usize,
    /// Weighted training loss after each round, starting with the base score.
    pub train_loss: Vec<f64>,
}

impl GbdtModel {
    pub fn margin(&self, values: &[f64], present: &[bool]) -> f64 {
        self.base_score + self.trees.iter().map(|t| t.predict(values, present)).sum::<f64>()
    }

    /// Probability of the anomalous class.
    pub fn predict_proba(&self, values: &[f64], present: &[bool]) -> Result<f64> {
        if values.len() != self.n_features || present.len() != self.n_features {
            return Err(Error::domain(format!(
                "model expects {} features, got {}",
                self.n_features,
                values.len()
            )));
        }
        Ok(sigmoid(self.margin(values, present)))
    }

    pub fn predict_matrix(&self, x: &FeatureMatrix) -> Result<Vec<f64>> {
        (0..x.n_rows)
            .map(|i| {
                let (v, p) = x.row(i);
                self.predict_proba(v, p)
            })
            .collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

/// Soft-thresholded gradient sum (L1 penalty).
#[inline]
fn shrink(g: f64, alpha: f64) -> f64 {
    if g > alpha {
        g - alpha
    } else if g < -alpha {
        g + alpha
    } else {
        0.0
    }
}

#[inline]
fn score(g: f64, h: f64, cfg: &GbdtConfig) -> f64 {
    let t = shrink(g, cfg.alpha);
    t * t / (h + cfg.lambda)
}

#[inline]
fn leaf_weight(g: f64, h: f64, cfg: &GbdtConfig) -> f64 {
    -shrink(g, cfg.alpha) / (h + cfg.lambda)
}

/// Fit a boosted ensemble. `y` holds targets in `[0, 1]` (soft targets are
/// allowed); `weights` default to 1.
pub fn train_gbdt(x: &FeatureMatrix, y: &[f64], weights: Option<&[f64]>, cfg: &GbdtConfig) -> Result<GbdtModel> {
    if y.len() != x.n_rows || weights.is_some_and(|w| w.len() != x.n_rows) {
        return Err(Error::domain("labels and weights must have one entry per row"));
    }
    if y.iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(Error::domain("targets must lie in [0, 1]"));
    }
    if !(cfg.learning_rate > 0.0) || cfg.max_depth == 0 || !(cfg.subsample > 0.0 && cfg.subsample <= 1.0)
        || !(cfg.colsample_bytree > 0.0 && cfg.colsample_bytree <= 1.0)
    {
        return Err(Error::config("invalid boosting configuration"));
    }
    let invalid = x.invalid_rows();
    let (x, y, w): (FeatureMatrix, Vec<f64>, Vec<f64>) = {
        let keep: Vec<usize> = (0..x.n_rows).filter(|i| invalid.binary_search(i).is_err()).collect();
        let w_all = |i: usize| weights.map_or(1.0, |w| w[i]);
        (x.select_rows(&keep), keep.iter().map(|&i| y[i]).collect(), keep.iter().map(|&i| w_all(i)).collect())
    };
    let pos: f64 = y.iter().zip(&w).map(|(y, w)| y * w).sum();
    let neg: f64 = y.iter().zip(&w).map(|(y, w)| (1.0 - y) * w).sum();
    if pos <= 0.0 || neg <= 0.0 {
        return Err(Error::Training("training data contains a single class".into()));
    }
    let prior = pos / (pos + neg);
    let base_score = (prior / (1.0 - prior)).ln();

    let n = x.n_rows;
    let sorted = presort(&x);
    let mut rng = rng_from(cfg.seed);
    let mut margin = vec![base_score; n];
    let probs = |m: &[f64]| m.iter().map(|&v| sigmoid(v)).collect::<Vec<_>>();
    let mut loss = log_loss(&probs(&margin), &y, Some(&w));
    let mut train_loss = vec![loss];
    let mut trees = Vec::with_capacity(cfg.n_estimators);
    let mut grad = vec![0.0; n];
    let mut hess = vec![0.0; n];

    for _ in 0..cfg.n_estimators {
        for i in 0..n {
            let p = sigmoid(margin[i]);
            grad[i] = w[i] * (p - y[i]);
            hess[i] = w[i] * p * (1.0 - p);
        }
        let rows = draw(&mut rng, n, cfg.subsample);
        let cols = draw(&mut rng, x.n_cols, cfg.colsample_bytree);
        let mut tree = grow(&x, &sorted, &grad, &hess, &rows, &cols, cfg);
        tree.scale_leaves(cfg.learning_rate);

        // Halve the step until the full training loss does not rise.
        let contrib: Vec<f64> = (0..n).map(|i| {
            let (v, p) = x.row(i);
            tree.predict(v, p)
        }).collect();
        let mut factor = 1.0;
        let mut next_loss;
        loop {
            let trial: Vec<f64> = margin.iter().zip(&contrib).map(|(m, c)| m + factor * c).collect();
            next_loss = log_loss(&probs(&trial), &y, Some(&w));
            if next_loss <= loss || factor < 1e-6 {
                break;
            }
            factor *= 0.5;
        }
        if next_loss > loss {
            factor = 0.0;
            next_loss = loss;
        }
        if factor != 1.0 {
            tree.scale_leaves(factor);
        }
        for (m, c) in margin.iter_mut().zip(&contrib) {
            *m += factor * c;
        }
        loss = next_loss;
        train_loss.push(loss);
        trees.push(tree);
    }

    Ok(GbdtModel { trees, base_score, n_features: x.n_cols, config: cfg.clone(), rejected_rows: invalid.len(), train_loss })
}

fn draw(rng: &mut Rng, n: usize, fraction: f64) -> Vec<usize> {
    if fraction >= 1.0 {
        return (0..n).collect();
    }
    let k = ((fraction * n as f64).ceil() as usize).clamp(1, n);
    let mut idx = sample(rng, n, k).into_vec();
    idx.sort_unstable();
    idx
}

/// Per column, the rows with a present value in ascending value order.
fn presort(x: &FeatureMatrix) -> Vec<Vec<u32>> {
    (0..x.n_cols)
        .map(|j| {
            let mut rows: Vec<u32> = (0..x.n_rows as u32).filter(|&i| x.present[i as usize * x.n_cols + j]).collect();
            rows.sort_by(|&a, &b| {
                x.values[a as usize * x.n_cols + j].total_cmp(&x.values[b as usize * x.n_cols + j])
            });
            rows
        })
        .collect()
}

#[derive(Clone, Copy)]
struct Best {
    gain: f64,
    feature: usize,
    threshold: f64,
    default_left: bool,
}

/// Grow one tree level by level on the sampled rows and columns.
fn grow(
    x: &FeatureMatrix,
    sorted: &[Vec<u32>],
    grad: &[f64],
    hess: &[f64],
    rows: &[usize],
    cols: &[usize],
    cfg: &GbdtConfig,
) -> Tree {
    const NONE: u32 = u32::MAX;
    let n = x.n_rows;
    // Tree node each sampled row currently sits in.
    let mut pos = vec![NONE; n];
    for &r in rows {
        pos[r] = 0;
    }
    let mut nodes = vec![Node::Leaf { value: 0.0 }];
    let mut sums = vec![(rows.iter().map(|&r| grad[r]).sum::<f64>(), rows.iter().map(|&r| hess[r]).sum::<f64>())];
    let mut frontier: Vec<usize> = vec![0];

    for _depth in 0..cfg.max_depth {
        if frontier.is_empty() {
            break;
        }
        let mut slot = vec![usize::MAX; nodes.len()];
        for (s, &k) in frontier.iter().enumerate() {
            slot[k] = s;
        }
        let mut best: Vec<Option<Best>> = vec![None; frontier.len()];
        let parent_score: Vec<f64> = frontier.iter().map(|&k| score(sums[k].0, sums[k].1, cfg)).collect();

        let mut gl = vec![0.0; frontier.len()];
        let mut hl = vec![0.0; frontier.len()];
        let mut last = vec![f64::NAN; frontier.len()];
        let mut gp = vec![0.0; frontier.len()];
        let mut hp = vec![0.0; frontier.len()];
        for &j in cols {
            // Totals over present values, to infer the missing part.
            gp.iter_mut().for_each(|v| *v = 0.0);
            hp.iter_mut().for_each(|v| *v = 0.0);
            for &r in &sorted[j] {
                let node = pos[r as usize];
                if node != NONE && slot[node as usize] != usize::MAX {
                    let s = slot[node as usize];
                    gp[s] += grad[r as usize];
                    hp[s] += hess[r as usize];
                }
            }
            gl.iter_mut().for_each(|v| *v = 0.0);
            hl.iter_mut().for_each(|v| *v = 0.0);
            last.iter_mut().for_each(|v| *v = f64::NAN);
            for &r in &sorted[j] {
                let r = r as usize;
                let node = pos[r];
                if node == NONE || slot[node as usize] == usize::MAX {
                    continue;
                }
                let s = slot[node as usize];
                let v = x.values[r * x.n_cols + j];
                if !last[s].is_nan() && v > last[s] {
                    let (gt, ht) = sums[frontier[s]];
                    let (gm, hm) = (gt - gp[s], ht - hp[s]);
                    let threshold = last[s] + (v - last[s]) / 2.0;
                    let threshold = if threshold < v { threshold } else { last[s] };
                    for default_left in [true, false] {
                        let (gll, hll) = if default_left { (gl[s] + gm, hl[s] + hm) } else { (gl[s], hl[s]) };
                        let (grr, hrr) = (gt - gll, ht - hll);
                        if hll < cfg.min_child_weight || hrr < cfg.min_child_weight {
                            continue;
                        }
                        let gain = 0.5 * (score(gll, hll, cfg) + score(grr, hrr, cfg) - parent_score[s]);
                        if gain > 1e-12 && best[s].is_none_or(|b| gain > b.gain) {
                            best[s] = Some(Best { gain, feature: j, threshold, default_left });
                        }
                    }
                }
                gl[s] += grad[r];
                hl[s] += hess[r];
                last[s] = v;
            }
        }

        let mut next = Vec::new();
        for (s, &k) in frontier.iter().enumerate() {
            if let Some(b) = best[s] {
                let left = nodes.len();
                nodes.push(Node::Leaf { value: 0.0 });
                nodes.push(Node::Leaf { value: 0.0 });
                sums.push((0.0, 0.0));
                sums.push((0.0, 0.0));
                nodes[k] = Node::Split {
                    feature: b.feature,
                    threshold: b.threshold,
                    default_left: b.default_left,
                    left,
                    right: left + 1,
                };
                next.push(left);
                next.push(left + 1);
            }
        }
        if next.is_empty() {
            break;
        }
        for &r in rows {
            let k = pos[r] as usize;
            if let Node::Split { feature, threshold, default_left, left, right } = nodes[k] {
                let go_left = match x.get(r, feature) {
                    Some(v) => v <= threshold,
                    None => default_left,
                };
                let child = if go_left { left } else { right };
                pos[r] = child as u32;
                sums[child].0 += grad[r];
                sums[child].1 += hess[r];
            }
        }
        frontier = next;
    }

    for (k, node) in nodes.iter_mut().enumerate() {
        if let Node::Leaf { value } = node {
            *value = leaf_weight(sums[k].0, sums[k].1, cfg);
        }
    }
    Tree { nodes }
}
