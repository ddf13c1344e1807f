//! Domain-incremental learning with experience replay.
//!
//! A stream visits the seasonal scenarios in order. At each step the
//! classifier is retrained on the current domain's training rows plus the
//! memory buffer, whose rows carry weight `beta`; soft buffer labels are fed
//! as two weighted copies of the row (weight `p` on class 1, `1 - p` on
//! class 0). After training, every domain's held-out split is scored to fill
//! one row of the [`PerformanceMatrix`].

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::clf::{evaluate, train_gbdt, FeatureMatrix, GbdtConfig, GbdtModel};
use crate::fuse::{Dataset, FeatureVector};
use crate::rng::{derive, stage_rng, Rng};
use crate::synth::{LoadScheme, SamplingSpec};
use crate::{Error, Result};

/// Seasonal traffic regime.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ScenarioId {
    Peak,
    OffPeak,
    SummerBoom,
    WinterBust,
    Balanced,
}

impl ScenarioId {
    pub const ALL: [ScenarioId; 5] =
        [ScenarioId::Peak, ScenarioId::OffPeak, ScenarioId::SummerBoom, ScenarioId::WinterBust, ScenarioId::Balanced];

    pub fn name(self) -> &'static str {
        match self {
            ScenarioId::Peak => "peak",
            ScenarioId::OffPeak => "off_peak",
            ScenarioId::SummerBoom => "summer_boom",
            ScenarioId::WinterBust => "winter_bust",
            ScenarioId::Balanced => "balanced",
        }
    }
}

impl fmt::Display for ScenarioId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ScenarioId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.to_ascii_lowercase().replace(['-', ' '], "_");
        ScenarioId::ALL
            .into_iter()
            .find(|id| id.name() == key || id.name().replace('_', "") == key)
            .ok_or_else(|| Error::config(format!("unknown scenario `{s}`")))
    }
}

/// One domain of the stream: a passage population and its stream position.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DomainScenario {
    pub id: ScenarioId,
    pub sampling: SamplingSpec,
    pub order_index: usize,
}

impl DomainScenario {
    /// The scenario's population. Defective passages follow the scenario's
    /// own speed band and load mix.
    pub fn new(id: ScenarioId, order_index: usize) -> Self {
        use LoadScheme::*;
        let (laagrss_share, speed_band, loads) = match id {
            ScenarioId::Peak => (0.3, (0.6, 1.0), LoadScheme::ALL.to_vec()),
            ScenarioId::OffPeak => (0.5, (0.0, 0.4), LoadScheme::ALL.to_vec()),
            ScenarioId::SummerBoom => (0.8, (0.7, 1.0), vec![Full]),
            ScenarioId::WinterBust => (0.6, (0.0, 0.25), vec![Empty, Half, Unbalance3]),
            ScenarioId::Balanced => (0.5, (0.3, 0.7), vec![Empty, Half, Full]),
        };
        DomainScenario {
            id,
            sampling: SamplingSpec {
                laagrss_share,
                speed_band,
                loads,
                defective_loads: None,
                defective_speed_kmh: None,
                ..SamplingSpec::default()
            },
            order_index,
        }
    }

    /// Scenarios in the given order.
    pub fn sequence(order: &[ScenarioId]) -> Vec<DomainScenario> {
        order.iter().enumerate().map(|(i, &id)| DomainScenario::new(id, i)).collect()
    }
}

/// Training regime of a stream.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReplayStrategy {
    /// Retrain from scratch on every row seen so far.
    Baseline,
    /// Train on the current domain only.
    Naive,
    /// Reservoir sampling, true labels.
    Rs,
    /// Loss-based retention, true labels.
    Lb,
    /// Reservoir sampling, predicted soft labels.
    Prs,
    /// Loss-based retention, predicted soft labels.
    Plb,
}

impl ReplayStrategy {
    /// The strategies of the experiment grid.
    pub const GRID: [ReplayStrategy; 5] =
        [ReplayStrategy::Baseline, ReplayStrategy::Rs, ReplayStrategy::Prs, ReplayStrategy::Lb, ReplayStrategy::Plb];

    pub fn name(self) -> &'static str {
        match self {
            ReplayStrategy::Baseline => "Baseline",
            ReplayStrategy::Naive => "Naive",
            ReplayStrategy::Rs => "RS",
            ReplayStrategy::Lb => "LB",
            ReplayStrategy::Prs => "P-RS",
            ReplayStrategy::Plb => "P-LB",
        }
    }

    pub fn uses_buffer(self) -> bool {
        !matches!(self, ReplayStrategy::Baseline | ReplayStrategy::Naive)
    }

    pub fn soft_labels(self) -> bool {
        matches!(self, ReplayStrategy::Prs | ReplayStrategy::Plb)
    }

    pub fn loss_based(self) -> bool {
        matches!(self, ReplayStrategy::Lb | ReplayStrategy::Plb)
    }
}

impl fmt::Display for ReplayStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ReplayStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace(['-', '_'], "").as_str() {
            "baseline" => Ok(ReplayStrategy::Baseline),
            "naive" => Ok(ReplayStrategy::Naive),
            "rs" => Ok(ReplayStrategy::Rs),
            "lb" => Ok(ReplayStrategy::Lb),
            "prs" => Ok(ReplayStrategy::Prs),
            "plb" => Ok(ReplayStrategy::Plb),
            _ => Err(Error::config(format!("unknown replay strategy `{s}`"))),
        }
    }
}

/// Reservoir step for the `n`-th arrival (1-based). Returns the slot the item
/// went to, or `None` if it was discarded.
pub fn reservoir_insert<T>(buffer: &mut Vec<T>, capacity: usize, item: T, n: u64, rng: &mut Rng) -> Option<usize> {
    debug_assert!(n >= 1);
    if capacity == 0 {
        return None;
    }
    if buffer.len() < capacity {
        buffer.push(item);
        return Some(buffer.len() - 1);
    }
    let j = rng.random_range(0..n.max(1));
    if (j as usize) < capacity {
        buffer[j as usize] = item;
        Some(j as usize)
    } else {
        None
    }
}

/// Indices of the candidates kept by loss-based retention: losses above
/// `threshold`, the `capacity` largest, ties going to the lower index.
pub fn loss_based_select(losses: &[f64], threshold: f64, capacity: usize) -> Vec<usize> {
    let mut keep: Vec<usize> = (0..losses.len()).filter(|&i| losses[i] > threshold).collect();
    keep.sort_by(|&a, &b| losses[b].total_cmp(&losses[a]).then(a.cmp(&b)));
    keep.truncate(capacity);
    keep.sort_unstable();
    keep
}

#[derive(Clone, Debug, PartialEq)]
pub struct BufferEntry {
    pub row: FeatureVector,
    /// Hard label, or the predicted probability for soft-label policies.
    pub stored_label: f64,
    pub stored_loss: f64,
    /// Stream position at insertion.
    pub insertion: u64,
}

/// Rehearsal memory of one stream.
#[derive(Clone, Debug)]
pub struct MemoryBuffer {
    pub capacity: usize,
    pub policy: ReplayStrategy,
    pub entries: Vec<BufferEntry>,
    /// Rows offered so far.
    pub seen: u64,
    rng: Rng,
}

impl MemoryBuffer {
    pub fn new(capacity: usize, policy: ReplayStrategy, seed: u64) -> Self {
        MemoryBuffer { capacity, policy, entries: Vec::new(), seen: 0, rng: stage_rng(seed, "reservoir", 0) }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Offer the training rows of a finished domain. `probs` are the
    /// predictions of the model just trained on it.
    pub fn update(&mut self, rows: &[FeatureVector], probs: &[f64]) {
        let soft = self.policy.soft_labels();
        let mut offered: Vec<BufferEntry> = rows
            .iter()
            .zip(probs)
            .map(|(row, &p)| {
                self.seen += 1;
                let y = if row.label { 1.0 } else { 0.0 };
                let stored_label = if soft { p } else { y };
                BufferEntry { row: row.clone(), stored_label, stored_loss: cross_entropy(stored_label, p), insertion: self.seen }
            })
            .collect();
        if self.policy.loss_based() {
            let losses: Vec<f64> = offered.iter().map(|e| e.stored_loss).collect();
            let tau = median(&losses);
            let fresh = loss_based_select(&losses, tau, usize::MAX);
            let mut pool = std::mem::take(&mut self.entries);
            pool.extend(fresh.into_iter().map(|i| offered[i].clone()));
            pool.sort_by_key(|e| e.insertion);
            let pool_losses: Vec<f64> = pool.iter().map(|e| e.stored_loss).collect();
            let keep = loss_based_select(&pool_losses, f64::NEG_INFINITY, self.capacity);
            self.entries = keep.into_iter().map(|i| pool[i].clone()).collect();
        } else {
            for e in offered.drain(..) {
                let n = e.insertion;
                reservoir_insert(&mut self.entries, self.capacity, e, n, &mut self.rng);
            }
        }
    }
}

/// Binary cross-entropy of prediction `p` against a (soft) target.
fn cross_entropy(target: f64, p: f64) -> f64 {
    let p = p.clamp(1e-15, 1.0 - 1e-15);
    -(target * p.ln() + (1.0 - target) * (1.0 - p).ln())
}

fn median(v: &[f64]) -> f64 {
    if v.is_empty() {
        return f64::INFINITY;
    }
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let m = s.len() / 2;
    if s.len() % 2 == 1 { s[m] } else { 0.5 * (s[m - 1] + s[m]) }
}

/// `R[j][i]`: accuracy on domain `i` after step `j`; row 0 is the
/// pre-stream model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerformanceMatrix {
    pub r: Vec<Vec<f64>>,
}

impl PerformanceMatrix {
    pub fn new(r: Vec<Vec<f64>>) -> Result<Self> {
        let n = r.first().map_or(0, Vec::len);
        if n == 0 || r.len() != n + 1 || r.iter().any(|row| row.len() != n) {
            return Err(Error::domain("performance matrix must be (N+1) x N with N >= 1"));
        }
        if r.iter().flatten().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::domain("performance entries must lie in [0, 1]"));
        }
        Ok(PerformanceMatrix { r })
    }

    /// Number of domains.
    pub fn domains(&self) -> usize {
        self.r[0].len()
    }

    pub fn get(&self, step: usize, domain: usize) -> f64 {
        self.r[step][domain]
    }

    /// Performance after the last step.
    pub fn final_row(&self) -> &[f64] {
        &self.r[self.domains()]
    }

    /// Rows as CSV with header `step,d1..dN`.
    pub fn to_csv(&self) -> String {
        let n = self.domains();
        let mut out = String::from("step");
        for i in 1..=n {
            out.push_str(&format!(",d{i}"));
        }
        out.push('\n');
        for (j, row) in self.r.iter().enumerate() {
            out.push_str(&j.to_string());
            for v in row {
                out.push_str(&format!(",{v}"));
            }
            out.push('\n');
        }
        out
    }
}

/// Forward transfer: mean of `R[0][i] - R[i][i]` over the first `N-1`
/// domains; 0 when `N = 1`.
pub fn fwt(m: &PerformanceMatrix) -> f64 {
    let n = m.domains();
    if n < 2 {
        return 0.0;
    }
    (1..n).map(|i| m.get(0, i - 1) - m.get(i, i - 1)).sum::<f64>() / (n - 1) as f64
}

/// Backward transfer: change on domain `i` between step `i` and every later
/// step, normalized by `N(N-1)`; 0 when `N = 1`.
pub fn bwt(m: &PerformanceMatrix) -> f64 {
    let n = m.domains();
    if n < 2 {
        return 0.0;
    }
    let mut s = 0.0;
    for i in 1..n {
        for j in i + 1..=n {
            s += m.get(j, i - 1) - m.get(i, i - 1);
        }
    }
    s / (n * (n - 1)) as f64
}

/// Intransigence: mean gap between joint-training and final performance.
pub fn im(m: &PerformanceMatrix, joint: &[f64]) -> Result<f64> {
    let n = m.domains();
    if joint.len() != n {
        return Err(Error::domain(format!("joint reference has {} entries, expected {n}", joint.len())));
    }
    Ok(joint.iter().zip(m.final_row()).map(|(j, c)| j - c).sum::<f64>() / n as f64)
}

/// Reference row for the knowledge-gain ratio.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KgrReference {
    /// `R[i][i]`, performance right after learning the domain.
    #[default]
    Diagonal,
    /// `R[0][i]`, the pre-stream model.
    PreStream,
}

impl KgrReference {
    pub fn row(self, m: &PerformanceMatrix) -> Vec<f64> {
        let n = m.domains();
        match self {
            KgrReference::Diagonal => (0..n).map(|i| m.get(i + 1, i)).collect(),
            KgrReference::PreStream => m.r[0].clone(),
        }
    }
}

/// Knowledge-gain ratio: mean of final over initial performance. Domains
/// with a zero reference are reported as undefined.
pub fn kgr(m: &PerformanceMatrix, initial: &[f64]) -> Result<f64> {
    let n = m.domains();
    if initial.len() != n {
        return Err(Error::domain(format!("initial reference has {} entries, expected {n}", initial.len())));
    }
    let bad: Vec<usize> = (0..n).filter(|&i| initial[i] == 0.0).collect();
    if !bad.is_empty() {
        return Err(Error::UndefinedEntries(bad));
    }
    Ok(m.final_row().iter().zip(initial).map(|(c, r)| c / r).sum::<f64>() / n as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClMetrics {
    pub fwt: f64,
    pub bwt: f64,
    pub im: f64,
    pub kgr: f64,
}

impl ClMetrics {
    pub fn compute(m: &PerformanceMatrix, joint: &[f64], reference: KgrReference) -> Result<Self> {
        Ok(ClMetrics { fwt: fwt(m), bwt: bwt(m), im: im(m, joint)?, kgr: kgr(m, &reference.row(m))? })
    }
}

/// Settings of one stream.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StreamConfig {
    pub capacity: usize,
    /// Weight of replayed rows.
    pub beta: f64,
    pub test_fraction: f64,
    pub kgr_reference: KgrReference,
    pub gbdt: GbdtConfig,
    pub seed: u64,
}

impl Default for StreamConfig {
    fn default() -> Self {
        StreamConfig {
            capacity: 800,
            beta: 1.0,
            test_fraction: 0.2,
            kgr_reference: KgrReference::Diagonal,
            gbdt: GbdtConfig::default(),
            seed: 0,
        }
    }
}

impl StreamConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(Error::config("beta must be finite and non-negative"));
        }
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return Err(Error::config("test fraction must lie in (0, 1)"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StreamResult {
    pub strategy: ReplayStrategy,
    pub capacity: usize,
    pub matrix: PerformanceMatrix,
    /// Accuracy on domain `i` of a model trained jointly on domains `1..=i`.
    pub joint: Vec<f64>,
    pub metrics: ClMetrics,
    /// Buffer size after each step.
    pub buffer_sizes: Vec<usize>,
    pub model: GbdtModel,
}

/// Stratified train/test split of one domain.
pub fn split_domain(ds: &Dataset, test_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut rng = stage_rng(seed, "cl-split", 0);
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for class in [false, true] {
        let mut idx: Vec<usize> = (0..ds.len()).filter(|&i| ds.rows[i].label == class).collect();
        idx.shuffle(&mut rng);
        let k = ((idx.len() as f64) * test_fraction).round() as usize;
        let k = if idx.len() >= 2 { k.clamp(1, idx.len() - 1) } else { 0 };
        test.extend_from_slice(&idx[..k]);
        train.extend_from_slice(&idx[k..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    (train, test)
}

struct Split {
    train: Vec<FeatureVector>,
    test_x: FeatureMatrix,
    test_y: Vec<f64>,
}

/// Weighted training rows; zero-weight rows are dropped.
#[derive(Default)]
struct TrainingSet {
    rows: Vec<(Vec<f64>, Vec<bool>)>,
    y: Vec<f64>,
    w: Vec<f64>,
}

impl TrainingSet {
    fn push(&mut self, fv: &FeatureVector, target: f64, weight: f64) {
        if weight > 0.0 {
            self.rows.push((fv.values.clone(), fv.present.clone()));
            self.y.push(target);
            self.w.push(weight);
        }
    }

    fn push_hard(&mut self, fv: &FeatureVector, weight: f64) {
        self.push(fv, if fv.label { 1.0 } else { 0.0 }, weight);
    }

    /// A soft label becomes one copy per class weighted by its probability.
    fn push_soft(&mut self, fv: &FeatureVector, p: f64, weight: f64) {
        self.push(fv, 1.0, weight * p);
        self.push(fv, 0.0, weight * (1.0 - p));
    }

    fn fit(&self, n_cols: usize, cfg: &GbdtConfig) -> Result<GbdtModel> {
        let mut x = FeatureMatrix::with_cols(n_cols);
        for (v, p) in &self.rows {
            x.push_row(v, Some(p))?;
        }
        train_gbdt(&x, &self.y, Some(&self.w), cfg)
    }
}

fn matrix_of(rows: &[FeatureVector], n_cols: usize) -> Result<FeatureMatrix> {
    let mut x = FeatureMatrix::with_cols(n_cols);
    for r in rows {
        x.push_row(&r.values, Some(&r.present))?;
    }
    Ok(x)
}

fn score_row(model: &GbdtModel, splits: &[Split]) -> Result<Vec<f64>> {
    splits.iter().map(|s| Ok(evaluate(model, &s.test_x, &s.test_y)?.accuracy)).collect()
}

/// Run one stream over per-domain datasets sharing a layout.
pub fn run_domain_stream(domains: &[Dataset], strategy: ReplayStrategy, cfg: &StreamConfig) -> Result<StreamResult> {
    PreparedStream::new(domains, cfg)?.run(strategy, cfg.capacity)
}

/// Splits, pre-stream row and joint references shared by every strategy and
/// memory size of one stream seed.
pub struct PreparedStream {
    cfg: StreamConfig,
    n_cols: usize,
    splits: Vec<Split>,
    pre_model: GbdtModel,
    pre_row: Vec<f64>,
    /// Models trained on the union of domains `1..=i`; they double as the Baseline models.
    union_models: Vec<GbdtModel>,
    union_rows: Vec<Vec<f64>>,
    joint: Vec<f64>,
}

impl PreparedStream {
    pub fn new(domains: &[Dataset], cfg: &StreamConfig) -> Result<Self> {
        cfg.validate()?;
        let Some(first) = domains.first() else {
            return Err(Error::Protocol("the stream has no domains".into()));
        };
        let layout = first.layout;
        let n_cols = layout.len();
        let mut splits = Vec::with_capacity(domains.len());
        for (d, ds) in domains.iter().enumerate() {
            if ds.is_empty() {
                return Err(Error::Protocol(format!("domain {} has no rows", d + 1)));
            }
            if ds.layout != layout {
                return Err(Error::Protocol(format!("domain {} has a different feature layout", d + 1)));
            }
            let (train, test) = split_domain(ds, cfg.test_fraction, derive(cfg.seed, "cl-domain", d as u64));
            if train.is_empty() || test.is_empty() {
                return Err(Error::Protocol(format!("domain {} is too small to split", d + 1)));
            }
            let test_rows: Vec<FeatureVector> = test.iter().map(|&i| ds.rows[i].clone()).collect();
            splits.push(Split {
                train: train.iter().map(|&i| ds.rows[i].clone()).collect(),
                test_x: matrix_of(&test_rows, n_cols)?,
                test_y: test_rows.iter().map(|r| if r.label { 1.0 } else { 0.0 }).collect(),
            });
        }
        let model_cfg = |step: usize| GbdtConfig { seed: derive(cfg.seed, "cl-model", step as u64), ..cfg.gbdt.clone() };

        // Pre-stream model: trained on the first domain alone.
        let mut pre = TrainingSet::default();
        for fv in &splits[0].train {
            pre.push_hard(fv, 1.0);
        }
        let pre_model = pre.fit(n_cols, &model_cfg(1))?;
        let pre_row = score_row(&pre_model, &splits)?;

        let (mut union_models, mut union_rows, mut joint) = (Vec::new(), Vec::new(), Vec::new());
        let mut union = TrainingSet::default();
        for (i, s) in splits.iter().enumerate() {
            for fv in &s.train {
                union.push_hard(fv, 1.0);
            }
            let m = union.fit(n_cols, &model_cfg(i + 1))?;
            let row = score_row(&m, &splits)?;
            joint.push(row[i]);
            union_rows.push(row);
            union_models.push(m);
        }
        Ok(Self { cfg: cfg.clone(), n_cols, splits, pre_model, pre_row, union_models, union_rows, joint })
    }

    fn model_cfg(&self, step: usize) -> GbdtConfig {
        GbdtConfig { seed: derive(self.cfg.seed, "cl-model", step as u64), ..self.cfg.gbdt.clone() }
    }

    /// Accuracy on domain `i` of a model trained jointly on domains `1..=i`.
    pub fn joint(&self) -> &[f64] {
        &self.joint
    }

    pub fn run(&self, strategy: ReplayStrategy, capacity: usize) -> Result<StreamResult> {
        let (splits, n_cols) = (&self.splits, self.n_cols);
        let mut r = vec![self.pre_row.clone()];
        let mut buffer = MemoryBuffer::new(if strategy.uses_buffer() { capacity } else { 0 }, strategy, self.cfg.seed);
        let mut buffer_sizes = Vec::with_capacity(splits.len());
        let mut model = self.pre_model.clone();
        for t in 0..splits.len() {
            if strategy == ReplayStrategy::Baseline {
                model = self.union_models[t].clone();
                r.push(self.union_rows[t].clone());
                buffer_sizes.push(0);
                continue;
            }
            let mut set = TrainingSet::default();
            for fv in &splits[t].train {
                set.push_hard(fv, 1.0);
            }
            for e in &buffer.entries {
                if strategy.soft_labels() {
                    set.push_soft(&e.row, e.stored_label, self.cfg.beta);
                } else {
                    set.push(&e.row, e.stored_label, self.cfg.beta);
                }
            }
            model = set.fit(n_cols, &self.model_cfg(t + 1))?;
            if strategy.uses_buffer() {
                let probs = model.predict_matrix(&matrix_of(&splits[t].train, n_cols)?)?;
                buffer.update(&splits[t].train, &probs);
                if buffer.len() > buffer.capacity {
                    return Err(Error::Protocol("memory buffer exceeded its capacity".into()));
                }
            }
            buffer_sizes.push(buffer.len());
            r.push(score_row(&model, splits)?);
        }

        let matrix = PerformanceMatrix::new(r)?;
        let metrics = ClMetrics::compute(&matrix, &self.joint, self.cfg.kgr_reference)?;
        Ok(StreamResult { strategy, capacity, matrix, joint: self.joint.clone(), metrics, buffer_sizes, model })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fuse::{FusionStrategy, Layout, StrategyCode};
    use crate::synth::AnomalyType;
    use proptest::prelude::*;

    fn pm(r: Vec<Vec<f64>>) -> PerformanceMatrix {
        PerformanceMatrix::new(r).unwrap()
    }

    #[test]
    fn constant_matrix_identities() {
        let m = pm(vec![vec![0.7; 5]; 6]);
        assert_eq!(fwt(&m), 0.0);
        assert_eq!(bwt(&m), 0.0);
        assert_eq!(im(&m, m.final_row()).unwrap(), 0.0);
        assert_eq!(kgr(&m, &KgrReference::Diagonal.row(&m)).unwrap(), 1.0);
    }

    #[test]
    fn two_domain_hand_case() {
        let m = pm(vec![vec![0.5, 0.5], vec![0.9, 0.6], vec![0.8, 0.7]]);
        assert!((bwt(&m) - (-0.05)).abs() < 1e-15);
        assert!((fwt(&m) - (0.5 - 0.9)).abs() < 1e-15);
    }

    #[test]
    fn single_domain_is_vacuous() {
        let m = pm(vec![vec![0.4], vec![0.9]]);
        assert_eq!((fwt(&m), bwt(&m)), (0.0, 0.0));
    }

    #[test]
    fn kgr_reports_zero_references() {
        let m = pm(vec![vec![0.0, 0.5, 0.0], vec![0.5; 3], vec![0.5; 3], vec![0.5; 3]]);
        match kgr(&m, &KgrReference::PreStream.row(&m)) {
            Err(Error::UndefinedEntries(v)) => assert_eq!(v, vec![0, 2]),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn matrix_shape_and_range_are_checked() {
        assert!(PerformanceMatrix::new(vec![vec![0.5, 0.5]; 2]).is_err());
        assert!(PerformanceMatrix::new(vec![vec![1.5], vec![0.5]]).is_err());
        assert!(PerformanceMatrix::new(vec![]).is_err());
    }

    #[test]
    fn reservoir_keeps_everything_below_capacity() {
        let mut rng = stage_rng(1, "t", 0);
        let mut buf = Vec::new();
        for n in 1..=5u64 {
            assert!(reservoir_insert(&mut buf, 5, n, n, &mut rng).is_some());
        }
        assert_eq!(buf, vec![1, 2, 3, 4, 5]);
        assert_eq!(reservoir_insert(&mut Vec::new(), 0, 1, 1, &mut rng), None);
    }

    #[test]
    fn reservoir_retention_is_k_over_n() {
        let (k, n, trials) = (2usize, 4u64, 20_000);
        let mut rng = stage_rng(3, "t", 0);
        let mut hits = [0usize; 4];
        for _ in 0..trials {
            let mut buf = Vec::new();
            for i in 1..=n {
                reservoir_insert(&mut buf, k, i, i, &mut rng);
            }
            for &v in &buf {
                hits[(v - 1) as usize] += 1;
            }
        }
        let sigma = (0.5 * 0.5 / trials as f64).sqrt();
        for h in hits {
            assert!((h as f64 / trials as f64 - 0.5).abs() < 4.0 * sigma);
        }
    }

    #[test]
    fn loss_based_examples() {
        let l = [0.1, 0.9, 0.5];
        assert_eq!(loss_based_select(&l, 0.4, 1), vec![1]);
        assert!(loss_based_select(&l, f64::INFINITY, 3).is_empty());
        assert_eq!(loss_based_select(&l, f64::NEG_INFINITY, 3), vec![0, 1, 2]);
        assert_eq!(loss_based_select(&[0.5, 0.5, 0.5], 0.0, 2), vec![0, 1]);
    }

    #[test]
    fn scenario_orderings_hold() {
        let s: Vec<DomainScenario> = DomainScenario::sequence(&ScenarioId::ALL);
        let get = |id| s.iter().find(|d| d.id == id).unwrap();
        let boom = get(ScenarioId::SummerBoom);
        let bust = get(ScenarioId::WinterBust);
        for d in &s {
            d.sampling.validate().unwrap();
            if d.id != ScenarioId::SummerBoom {
                assert!(boom.sampling.speed_band.0 >= d.sampling.speed_band.0);
            }
            if d.id != ScenarioId::WinterBust {
                assert!(bust.sampling.speed_band.1 <= d.sampling.speed_band.1);
            }
        }
        assert!(boom.sampling.loads.iter().all(|&l| l == LoadScheme::Full));
        assert!(!bust.sampling.loads.contains(&LoadScheme::Full));
        assert!(get(ScenarioId::Peak).sampling.speed_band.0 > get(ScenarioId::OffPeak).sampling.speed_band.0);
        assert_eq!(s.iter().map(|d| d.order_index).collect::<Vec<_>>(), vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn names_round_trip() {
        for s in ReplayStrategy::GRID.into_iter().chain([ReplayStrategy::Naive]) {
            assert_eq!(s.name().parse::<ReplayStrategy>().unwrap(), s);
        }
        for id in ScenarioId::ALL {
            assert_eq!(id.name().parse::<ScenarioId>().unwrap(), id);
        }
        assert_eq!("OffPeak".parse::<ScenarioId>().unwrap(), ScenarioId::OffPeak);
    }

    /// Two-feature domains whose decision boundary moves with the domain.
    pub(crate) fn toy_domains(n_domains: usize, rows: usize, seed: u64) -> Vec<Dataset> {
        let layout = Layout::new(FusionStrategy::new(StrategyCode::SWi, false), 0, 2);
        (0..n_domains)
            .map(|d| {
                let mut rng = stage_rng(seed, "toy", d as u64);
                let shift = d as f64;
                let rows = (0..rows)
                    .map(|i| {
                        let a: f64 = rng.random_range(-1.0..1.0) + shift;
                        let noise: f64 = rng.random_range(-0.3..0.3);
                        let label = i % 2 == 0;
                        let b = if label { shift + 0.5 + noise } else { shift - 0.5 + noise };
                        FeatureVector {
                            layout,
                            values: vec![a, b],
                            present: vec![true; 2],
                            label,
                            soft_label: None,
                            domain_id: d as u32,
                            anomaly_type: AnomalyType::None,
                            anomaly_count: 0,
                        }
                    })
                    .collect();
                Dataset { layout, rows, meta: Default::default() }
            })
            .collect()
    }

    fn small_cfg(capacity: usize, beta: f64, seed: u64) -> StreamConfig {
        StreamConfig { capacity, beta, seed, gbdt: GbdtConfig { n_estimators: 20, max_depth: 3, ..Default::default() }, ..Default::default() }
    }

    #[test]
    fn stream_respects_capacity_and_shape() {
        let domains = toy_domains(4, 60, 1);
        for s in ReplayStrategy::GRID {
            let r = run_domain_stream(&domains, s, &small_cfg(30, 1.0, 2)).unwrap();
            assert_eq!(r.matrix.r.len(), 5);
            assert!(r.buffer_sizes.iter().all(|&b| b <= 30));
            if !s.uses_buffer() {
                assert!(r.buffer_sizes.iter().all(|&b| b == 0));
            }
        }
    }

    #[test]
    fn zero_beta_equals_sequential_training() {
        let domains = toy_domains(3, 50, 4);
        let naive = run_domain_stream(&domains, ReplayStrategy::Naive, &small_cfg(40, 1.0, 5)).unwrap();
        for s in [ReplayStrategy::Rs, ReplayStrategy::Lb, ReplayStrategy::Prs, ReplayStrategy::Plb] {
            let r = run_domain_stream(&domains, s, &small_cfg(40, 0.0, 5)).unwrap();
            assert_eq!(r.matrix, naive.matrix, "{s}");
        }
    }

    #[test]
    fn baseline_remembers_the_first_domain() {
        let domains = toy_domains(5, 60, 7);
        let base = run_domain_stream(&domains, ReplayStrategy::Baseline, &small_cfg(0, 1.0, 8)).unwrap();
        let naive = run_domain_stream(&domains, ReplayStrategy::Naive, &small_cfg(0, 1.0, 8)).unwrap();
        assert!(base.matrix.get(5, 0) >= naive.matrix.get(5, 0));
    }

    #[test]
    fn stream_is_deterministic() {
        let domains = toy_domains(3, 40, 9);
        let a = run_domain_stream(&domains, ReplayStrategy::Plb, &small_cfg(20, 1.0, 3)).unwrap();
        let b = run_domain_stream(&domains, ReplayStrategy::Plb, &small_cfg(20, 1.0, 3)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn empty_domain_is_a_protocol_error() {
        let mut domains = toy_domains(2, 20, 1);
        domains[1].rows.clear();
        assert!(matches!(run_domain_stream(&domains, ReplayStrategy::Rs, &small_cfg(10, 1.0, 1)), Err(Error::Protocol(_))));
        assert!(matches!(run_domain_stream(&[], ReplayStrategy::Rs, &small_cfg(10, 1.0, 1)), Err(Error::Protocol(_))));
    }

    #[test]
    fn soft_labels_are_stored_for_prediction_policies() {
        let domains = toy_domains(1, 20, 1);
        let mut b = MemoryBuffer::new(100, ReplayStrategy::Prs, 0);
        let probs: Vec<f64> = (0..20).map(|i| i as f64 / 20.0).collect();
        b.update(&domains[0].rows, &probs);
        assert!(b.entries.iter().all(|e| probs.contains(&e.stored_label)));
        let mut h = MemoryBuffer::new(100, ReplayStrategy::Rs, 0);
        h.update(&domains[0].rows, &probs);
        assert!(h.entries.iter().all(|e| e.stored_label == 0.0 || e.stored_label == 1.0));
    }

    fn matrix_strategy() -> impl Strategy<Value = PerformanceMatrix> {
        (1usize..7).prop_flat_map(|n| {
            proptest::collection::vec(proptest::collection::vec(0.01f64..1.0, n), n + 1).prop_map(pm)
        })
    }

    proptest! {
        #[test]
        fn buffer_never_exceeds_capacity(cap in 0usize..20, sizes in proptest::collection::vec(1usize..30, 1..5), lb in any::<bool>()) {
            let policy = if lb { ReplayStrategy::Lb } else { ReplayStrategy::Rs };
            let mut b = MemoryBuffer::new(cap, policy, 1);
            for (d, &n) in sizes.iter().enumerate() {
                let rows = &toy_domains(d + 1, n, 3)[d].rows;
                let probs: Vec<f64> = (0..n).map(|i| ((i * 37) % 100) as f64 / 100.0).collect();
                b.update(rows, &probs);
                prop_assert!(b.len() <= cap);
            }
        }

        #[test]
        fn loss_selection_separates_kept_from_dropped(losses in proptest::collection::vec(0.0f64..5.0, 0..40), tau in 0.0f64..5.0, cap in 0usize..40) {
            let keep = loss_based_select(&losses, tau, cap);
            prop_assert!(keep.len() <= cap);
            let min_kept = keep.iter().map(|&i| losses[i]).fold(f64::INFINITY, f64::min);
            for i in 0..losses.len() {
                if keep.contains(&i) {
                    prop_assert!(losses[i] > tau);
                } else if losses[i] > tau {
                    prop_assert!(losses[i] <= min_kept);
                }
            }
        }

        #[test]
        fn metrics_are_bounded(m in matrix_strategy()) {
            prop_assert!(fwt(&m).abs() <= 1.0);
            prop_assert!(bwt(&m).abs() <= 1.0);
            let k = kgr(&m, &KgrReference::Diagonal.row(&m)).unwrap();
            prop_assert!(k > 0.0);
        }

        #[test]
        fn column_permutation_leaves_final_row_metrics_unchanged(m in matrix_strategy(), rot in 0usize..7) {
            let n = m.domains();
            let perm = |row: &[f64]| (0..n).map(|i| row[(i + rot) % n]).collect::<Vec<f64>>();
            let p = pm(m.r.iter().map(|row| perm(row)).collect());
            let joint: Vec<f64> = (0..n).map(|i| 0.5 + 0.05 * i as f64).collect();
            let a = im(&m, &joint).unwrap();
            let b = im(&p, &perm(&joint)).unwrap();
            prop_assert!((a - b).abs() < 1e-12);
            let a = kgr(&m, &KgrReference::PreStream.row(&m)).unwrap();
            let b = kgr(&p, &KgrReference::PreStream.row(&p)).unwrap();
            prop_assert!((a - b).abs() < 1e-12);
        }

        #[test]
        fn im_against_itself_is_zero(m in matrix_strategy()) {
            prop_assert_eq!(im(&m, m.final_row()).unwrap(), 0.0);
        }
    }
}
