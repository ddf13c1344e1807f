//! Reproducible experiment grids.
//!
//! A run is fully determined by an [`ExperimentConfig`]. Every random stage
//! draws its seed from `derive(run_seed, stage, index)` where
//! `run_seed = derive(master_seed, "seed", s)` for seed slot `s`, so stages can
//! be re-run on their own.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::clf::{evaluate, random_search, stratified_folds, train_gbdt, FeatureMatrix, GbdtConfig, SearchSpace};
use crate::embed::{handcrafted_features, HandcraftedConfig, Vae, VaeConfig};
use crate::fuse::{accel_windows, assemble, extract_passage_features, Dataset, FuseConfig, FusionStrategy, PassageFeatures, StrategyCode};
use crate::peaks::{axle_count_accuracy, select_sensitivity, Detector, PeakConfig};
use crate::replay::{PreparedStream, DomainScenario, KgrReference, ReplayStrategy, ScenarioId, StreamConfig};
use crate::rng::derive;
use crate::stats::{confidence_interval, format_ci, friedman, shaffer_posthoc, RankBlockTable};
use crate::synth::{sample_passages, synthesize_with, SamplingSpec, SurrogateModel, WaysideRecording};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSection {
    pub model: SurrogateModel,
    /// Population of the anomaly-detection grid.
    pub sampling: SamplingSpec,
    pub ad_passages: usize,
    pub domain_passages: usize,
}

impl Default for SynthSection {
    fn default() -> Self {
        SynthSection { model: SurrogateModel::default(), sampling: SamplingSpec::default(), ad_passages: 200, domain_passages: 300 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PeaksSection {
    pub config: PeakConfig,
    pub detectors: Vec<Detector>,
    pub sensitivity_grid: Vec<f64>,
    /// Strategy whose accuracy scores a sensitivity during the sweep.
    pub sweep_strategy: FusionStrategy,
    pub sweep_folds: usize,
}

impl Default for PeaksSection {
    fn default() -> Self {
        PeaksSection {
            config: PeakConfig::default(),
            detectors: Detector::ALL.to_vec(),
            sensitivity_grid: (1..=9).map(|i| i as f64 / 10.0).collect(),
            sweep_strategy: FusionStrategy::new(StrategyCode::IWd, false),
            sweep_folds: 3,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
#[derive(Default)]
pub struct EmbedSection {
    pub vae: VaeConfig,
    pub handcrafted: HandcraftedConfig,
    /// Passages of the embedding-vs-handcrafted comparison; 0 skips it.
    pub comparison_passages: usize,
}


#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClfSection {
    pub n_trials: usize,
    pub folds: usize,
    pub space: SearchSpace,
    /// Untuned configuration for sensitivity sweeps and streams.
    pub base: GbdtConfig,
}

impl Default for ClfSection {
    fn default() -> Self {
        ClfSection { n_trials: 10, folds: 5, space: SearchSpace::default(), base: GbdtConfig::default() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReplaySection {
    pub strategies: Vec<ReplayStrategy>,
    pub memories: Vec<usize>,
    pub beta: f64,
    pub scenario_order: Vec<ScenarioId>,
    pub fusion: FusionStrategy,
    pub detector: Detector,
    pub sensitivity: f64,
    pub test_fraction: f64,
    pub kgr_reference: KgrReference,
}

impl Default for ReplaySection {
    fn default() -> Self {
        ReplaySection {
            strategies: ReplayStrategy::GRID.to_vec(),
            memories: vec![200, 800],
            beta: 1.0,
            scenario_order: ScenarioId::ALL.to_vec(),
            fusion: FusionStrategy::new(StrategyCode::SWd, true),
            detector: Detector::Sd,
            sensitivity: 0.5,
            test_fraction: 0.2,
            kgr_reference: KgrReference::Diagonal,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StatsSection {
    pub alpha: f64,
}

impl Default for StatsSection {
    fn default() -> Self {
        StatsSection { alpha: 0.05 }
    }
}

/// Everything a run depends on.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub master_seed: u64,
    pub output_dir: PathBuf,
    /// Number of seed slots.
    pub seeds: usize,
    pub synth: SynthSection,
    pub peaks: PeaksSection,
    pub embed: EmbedSection,
    pub fuse: FuseConfig,
    pub clf: ClfSection,
    pub replay: ReplaySection,
    pub stats: StatsSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            master_seed: 0,
            output_dir: PathBuf::from("results"),
            seeds: 3,
            synth: SynthSection::default(),
            peaks: PeaksSection::default(),
            embed: EmbedSection::default(),
            fuse: FuseConfig::default(),
            clf: ClfSection::default(),
            replay: ReplaySection::default(),
            stats: StatsSection::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds == 0 {
            return Err(Error::config("at least one seed slot is required"));
        }
        self.synth.sampling.validate()?;
        self.embed.vae.validate()?;
        if self.embed.vae.input_dim != self.fuse.window_len {
            return Err(Error::config(format!(
                "VAE input width {} differs from the window length {}",
                self.embed.vae.input_dim, self.fuse.window_len
            )));
        }
        if self.peaks.sensitivity_grid.is_empty() || self.peaks.sensitivity_grid.iter().any(|s| !(0.0..=1.0).contains(s)) {
            return Err(Error::config("sensitivity grid must be non-empty and inside [0, 1]"));
        }
        if !(0.0..=1.0).contains(&self.replay.sensitivity) {
            return Err(Error::config("replay sensitivity must lie in [0, 1]"));
        }
        if self.clf.n_trials == 0 || self.clf.folds < 2 || self.peaks.sweep_folds < 2 {
            return Err(Error::config("tuning needs at least one trial and two folds"));
        }
        self.clf.base.validate()?;
        self.stream_config(0, 0).validate()?;
        if self.replay.scenario_order.is_empty() {
            return Err(Error::config("scenario order is empty"));
        }
        if self.replay.strategies.is_empty() || self.replay.memories.is_empty() {
            return Err(Error::config("the replay grid needs a strategy and a memory size"));
        }
        if !(self.stats.alpha > 0.0 && self.stats.alpha < 1.0) {
            return Err(Error::config("alpha must lie in (0, 1)"));
        }
        Ok(())
    }

    /// Seed of slot `s`.
    pub fn run_seed(&self, s: usize) -> u64 {
        derive(self.master_seed, "seed", s as u64)
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        sha256_hex(serde_json::to_string(self).expect("config serializes").as_bytes())
    }

    fn stream_config(&self, capacity: usize, seed: u64) -> StreamConfig {
        StreamConfig {
            capacity,
            beta: self.replay.beta,
            test_fraction: self.replay.test_fraction,
            kgr_reference: self.replay.kgr_reference,
            gbdt: self.clf.base.clone(),
            seed,
        }
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Synthesize a population.
pub fn synthesize_population(sampling: &SamplingSpec, model: &SurrogateModel, n: usize, seed: u64) -> Result<Vec<WaysideRecording>> {
    let specs = sample_passages(sampling, n, seed)?;
    specs.par_iter().map(|s| synthesize_with(s, model)).collect()
}

/// The anomaly-detection population of a seed slot.
pub fn ad_population(cfg: &ExperimentConfig, run_seed: u64) -> Result<Vec<WaysideRecording>> {
    synthesize_population(&cfg.synth.sampling, &cfg.synth.model, cfg.synth.ad_passages, derive(run_seed, "ad-passages", 0))
}

/// Train the encoder on the accelerometer windows of `recordings`.
pub fn train_encoder(cfg: &ExperimentConfig, recordings: &[WaysideRecording], run_seed: u64) -> Result<Vae> {
    let windows = accel_windows(recordings, cfg.fuse.window_len)?;
    Vae::train(VaeConfig { seed: derive(run_seed, "vae", 0), ..cfg.embed.vae.clone() }, &windows)
}

/// Mean k-fold accuracy of one fixed configuration.
pub fn cv_accuracy(x: &FeatureMatrix, labels: &[f64], folds: usize, cfg: &GbdtConfig, seed: u64) -> Result<f64> {
    Ok(out_of_fold(x, labels, folds, cfg, seed)?.1)
}

/// Out-of-fold probabilities and mean fold accuracy.
pub fn out_of_fold(x: &FeatureMatrix, labels: &[f64], folds: usize, cfg: &GbdtConfig, seed: u64) -> Result<(Vec<f64>, f64)> {
    let fold_of = stratified_folds(labels, folds, seed)?;
    let mut probs = vec![0.0; labels.len()];
    let mut acc = 0.0;
    for f in 0..folds {
        let train: Vec<usize> = (0..labels.len()).filter(|&i| fold_of[i] != f).collect();
        let test: Vec<usize> = (0..labels.len()).filter(|&i| fold_of[i] == f).collect();
        let y: Vec<f64> = train.iter().map(|&i| labels[i]).collect();
        let model = train_gbdt(&x.select_rows(&train), &y, None, cfg)?;
        let xt = x.select_rows(&test);
        let yt: Vec<f64> = test.iter().map(|&i| labels[i]).collect();
        acc += evaluate(&model, &xt, &yt)?.accuracy / folds as f64;
        for (&i, p) in test.iter().zip(model.predict_matrix(&xt)?) {
            probs[i] = p;
        }
    }
    Ok((probs, acc))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub seed: usize,
    pub detector: Detector,
    pub sensitivity: f64,
    /// Fraction of passages with the correct axle count.
    pub ac: f64,
    /// Cross-validated accuracy of the sweep strategy.
    pub ad: f64,
    pub selected: bool,
}

/// Score every grid sensitivity of one detector and pick one.
pub fn sensitivity_sweep(
    cfg: &ExperimentConfig,
    recordings: &[WaysideRecording],
    detector: Detector,
    seed_slot: usize,
) -> Result<(f64, Vec<SweepRow>)> {
    let run_seed = cfg.run_seed(seed_slot);
    let mut ac = Vec::new();
    let mut ad = Vec::new();
    for &s in &cfg.peaks.sensitivity_grid {
        let feats = extract_passage_features(recordings, detector, s, &cfg.peaks.config, None, &cfg.fuse, 0)?;
        let hits = feats
            .iter()
            .zip(recordings)
            .filter(|(f, r)| {
                f.semantics
                    .as_ref()
                    .is_some_and(|sem| axle_count_accuracy(sem, &r.truth.train(), cfg.peaks.config.grouping).count_match)
            })
            .count();
        ac.push(hits as f64 / recordings.len().max(1) as f64);
        let ds = assemble(cfg.peaks.sweep_strategy, &feats, &cfg.fuse)?;
        let score = cv_accuracy(&ds.matrix(), &ds.labels(), cfg.peaks.sweep_folds, &cfg.clf.base, derive(run_seed, "sweep", 0))
            .unwrap_or(0.0);
        ad.push(score);
    }
    let choice = select_sensitivity(&cfg.peaks.sensitivity_grid, &ac, &ad)?;
    let rows = cfg
        .peaks
        .sensitivity_grid
        .iter()
        .enumerate()
        .map(|(i, &s)| SweepRow { seed: seed_slot, detector, sensitivity: s, ac: ac[i], ad: ad[i], selected: s == choice.chosen })
        .collect();
    Ok((choice.chosen, rows))
}

/// One (seed, detector, strategy) cell of the anomaly-detection grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdCell {
    pub seed: usize,
    pub detector: Detector,
    pub strategy: FusionStrategy,
    pub sensitivity: f64,
    pub rows: usize,
    pub flagged: usize,
    /// Cross-validated accuracy of the tuned classifier.
    pub accuracy: Option<f64>,
    /// Mean and 95% half-width over the tuning trials.
    pub trial_mean: Option<f64>,
    pub trial_ci: Option<f64>,
    pub status: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BreakdownRow {
    pub seed: usize,
    pub detector: Detector,
    pub strategy: FusionStrategy,
    /// `anomaly_type` or `anomaly_count`.
    pub partition: String,
    pub group: String,
    pub passages: usize,
    pub accuracy: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AdResults {
    pub cells: Vec<AdCell>,
    pub sweep: Vec<SweepRow>,
    pub breakdown: Vec<BreakdownRow>,
}

impl AdResults {
    /// Accuracy of a cell, if it succeeded.
    pub fn accuracy(&self, seed: usize, detector: Detector, strategy: FusionStrategy) -> Option<f64> {
        self.cells
            .iter()
            .find(|c| c.seed == seed && c.detector == detector && c.strategy == strategy)
            .and_then(|c| c.accuracy)
    }
}

fn tune_cell(
    cfg: &ExperimentConfig,
    ds: &Dataset,
    seed: u64,
) -> Result<(f64, f64, f64, Vec<f64>)> {
    let x = ds.matrix();
    let y = ds.labels();
    let search = random_search(&x, &y, cfg.clf.n_trials, cfg.clf.folds, seed, &cfg.clf.space)?;
    let trial_scores: Vec<f64> = search.trials.iter().map(|t| t.mean_accuracy).collect();
    let (mean, ci) = if trial_scores.len() >= 2 { confidence_interval(&trial_scores)? } else { (trial_scores[0], 0.0) };
    let (probs, _) = out_of_fold(&x, &y, cfg.clf.folds, &search.best, seed)?;
    Ok((search.best_score, mean, ci, probs))
}

fn breakdown(seed: usize, detector: Detector, ds: &Dataset, probs: &[f64], threshold: f64) -> Vec<BreakdownRow> {
    let mut by_type: BTreeMap<String, (usize, usize)> = BTreeMap::new();
    let mut by_count: BTreeMap<usize, (usize, usize)> = BTreeMap::new();
    for (row, &p) in ds.rows.iter().zip(probs) {
        let ok = (p >= threshold) == row.label;
        let e = by_type.entry(row.anomaly_type.label().to_string()).or_default();
        e.0 += 1;
        e.1 += ok as usize;
        let e = by_count.entry(row.anomaly_count).or_default();
        e.0 += 1;
        e.1 += ok as usize;
    }
    let mk = |partition: &str, group: String, (n, ok): (usize, usize)| BreakdownRow {
        seed,
        detector,
        strategy: ds.meta.strategy,
        partition: partition.into(),
        group,
        passages: n,
        accuracy: ok as f64 / n as f64,
    };
    by_type
        .into_iter()
        .map(|(g, v)| mk("anomaly_type", g, v))
        .chain(by_count.into_iter().map(|(g, v)| mk("anomaly_count", g.to_string(), v)))
        .collect()
}

/// Anomaly-detection grid of one seed slot with a given encoder.
pub fn run_ad_seed(cfg: &ExperimentConfig, seed_slot: usize, recordings: &[WaysideRecording], vae: &Vae) -> Result<AdResults> {
    let run_seed = cfg.run_seed(seed_slot);
    let mut out = AdResults::default();
    let strategies = FusionStrategy::all();
    for (d, &detector) in cfg.peaks.detectors.iter().enumerate() {
        let (sensitivity, rows) = sensitivity_sweep(cfg, recordings, detector, seed_slot)?;
        out.sweep.extend(rows);
        let feats: Vec<PassageFeatures> =
            extract_passage_features(recordings, detector, sensitivity, &cfg.peaks.config, Some(vae), &cfg.fuse, 0)?;
        for (k, &strategy) in strategies.iter().enumerate() {
            let cell_seed = derive(run_seed, "search", (d * strategies.len() + k) as u64);
            let mut cell = AdCell {
                seed: seed_slot,
                detector,
                strategy,
                sensitivity,
                rows: 0,
                flagged: 0,
                accuracy: None,
                trial_mean: None,
                trial_ci: None,
                status: "ok".into(),
            };
            match assemble(strategy, &feats, &cfg.fuse).and_then(|ds| {
                cell.rows = ds.len();
                cell.flagged = ds.meta.flagged;
                tune_cell(cfg, &ds, cell_seed).map(|r| (ds, r))
            }) {
                Ok((ds, (best, mean, ci, probs))) => {
                    cell.accuracy = Some(best);
                    cell.trial_mean = Some(mean);
                    cell.trial_ci = Some(ci);
                    out.breakdown.extend(breakdown(seed_slot, detector, &ds, &probs, cfg.clf.base.threshold));
                }
                Err(e) => cell.status = format!("failed: {e}"),
            }
            out.cells.push(cell);
        }
    }
    Ok(out)
}

/// Accuracy of the tuned classifier on encoder embeddings and on
/// handcrafted features of the same windows.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RepresentationRow {
    pub seed: usize,
    pub embedding: f64,
    pub handcrafted: f64,
}

pub fn compare_representations(cfg: &ExperimentConfig, seed_slot: usize, passages: usize) -> Result<RepresentationRow> {
    let run_seed = cfg.run_seed(seed_slot);
    let recs = synthesize_population(&cfg.synth.sampling, &cfg.synth.model, passages, derive(run_seed, "repr-passages", 0))?;
    let windows = accel_windows(&recs, cfg.fuse.window_len)?;
    let vae = Vae::train(VaeConfig { seed: derive(run_seed, "repr-vae", 0), ..cfg.embed.vae.clone() }, &windows)?;
    let emb: Vec<Vec<f64>> = vae.encode_batch(&windows)?.iter().map(|e| e.fused_view()).collect();
    let hand: Vec<Vec<f64>> = windows.iter().map(|w| handcrafted_features(w, &cfg.embed.handcrafted)).collect::<Result<_>>()?;
    let y: Vec<f64> = recs.iter().map(|r| if r.truth.is_anomalous() { 1.0 } else { 0.0 }).collect();
    let score = |rows: &[Vec<f64>], label: &str| -> Result<f64> {
        let x = FeatureMatrix::from_rows(rows)?;
        Ok(random_search(&x, &y, cfg.clf.n_trials, cfg.clf.folds, derive(run_seed, label, 0), &cfg.clf.space)?.best_score)
    };
    Ok(RepresentationRow { seed: seed_slot, embedding: score(&emb, "repr-search")?, handcrafted: score(&hand, "repr-search")? })
}

/// One stream of the continual-learning grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClRow {
    pub strategy: ReplayStrategy,
    pub memory: usize,
    pub seed: usize,
    pub fwt: Option<f64>,
    pub bwt: Option<f64>,
    pub im: Option<f64>,
    pub kgr: Option<f64>,
    /// Mean final-row accuracy.
    pub final_accuracy: Option<f64>,
    pub status: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClMatrixRow {
    pub strategy: ReplayStrategy,
    pub memory: usize,
    pub seed: usize,
    pub step: usize,
    pub domain: usize,
    pub scenario: ScenarioId,
    pub accuracy: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ClResults {
    pub metrics: Vec<ClRow>,
    pub matrices: Vec<ClMatrixRow>,
}

impl ClResults {
    /// Mean of a metric over seeds.
    pub fn mean(&self, strategy: ReplayStrategy, memory: usize, metric: impl Fn(&ClRow) -> Option<f64>) -> Option<f64> {
        let v: Vec<f64> =
            self.metrics.iter().filter(|r| r.strategy == strategy && r.memory == memory).filter_map(&metric).collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }
}

/// Per-domain datasets of one seed slot.
pub fn domain_datasets(cfg: &ExperimentConfig, seed_slot: usize, vae: &Vae) -> Result<Vec<Dataset>> {
    let run_seed = cfg.run_seed(seed_slot);
    let vae = cfg.replay.fusion.uses_embedding().then_some(vae);
    DomainScenario::sequence(&cfg.replay.scenario_order)
        .iter()
        .map(|sc| {
            let sampling = SamplingSpec { snr_db: cfg.synth.sampling.snr_db, ..sc.sampling.clone() };
            let recs = synthesize_population(
                &sampling,
                &cfg.synth.model,
                cfg.synth.domain_passages,
                derive(run_seed, "cl-passages", sc.order_index as u64),
            )?;
            let feats = extract_passage_features(
                &recs,
                cfg.replay.detector,
                cfg.replay.sensitivity,
                &cfg.peaks.config,
                vae,
                &cfg.fuse,
                sc.order_index as u32,
            )?;
            assemble(cfg.replay.fusion, &feats, &cfg.fuse)
        })
        .collect()
}

/// Continual-learning grid of one seed slot.
pub fn run_cl_seed(cfg: &ExperimentConfig, seed_slot: usize, vae: &Vae) -> Result<ClResults> {
    let run_seed = cfg.run_seed(seed_slot);
    let domains = domain_datasets(cfg, seed_slot, vae)?;
    let mut out = ClResults::default();
    let stream = cfg.stream_config(cfg.replay.memories[0], derive(run_seed, "cl-stream", 0));
    let prepared = PreparedStream::new(&domains, &stream);
    for &strategy in &cfg.replay.strategies {
        for &memory in &cfg.replay.memories {
            let result = match &prepared {
                Ok(p) => p.run(strategy, memory),
                Err(e) => Err(Error::Protocol(e.to_string())),
            };
            match result {
                Ok(r) => {
                    let fin = r.matrix.final_row();
                    out.metrics.push(ClRow {
                        strategy,
                        memory,
                        seed: seed_slot,
                        fwt: Some(r.metrics.fwt),
                        bwt: Some(r.metrics.bwt),
                        im: Some(r.metrics.im),
                        kgr: Some(r.metrics.kgr),
                        final_accuracy: Some(fin.iter().sum::<f64>() / fin.len() as f64),
                        status: "ok".into(),
                    });
                    for (step, row) in r.matrix.r.iter().enumerate() {
                        for (domain, &accuracy) in row.iter().enumerate() {
                            out.matrices.push(ClMatrixRow {
                                strategy,
                                memory,
                                seed: seed_slot,
                                step,
                                domain: domain + 1,
                                scenario: cfg.replay.scenario_order[domain],
                                accuracy,
                            });
                        }
                    }
                }
                Err(e) => out.metrics.push(ClRow {
                    strategy,
                    memory,
                    seed: seed_slot,
                    fwt: None,
                    bwt: None,
                    im: None,
                    kgr: None,
                    final_accuracy: None,
                    status: format!("failed: {e}"),
                }),
            }
        }
    }
    Ok(out)
}

/// Encoder of a seed slot, trained on its anomaly-detection population.
pub fn seed_encoder(cfg: &ExperimentConfig, seed_slot: usize) -> Result<(Vec<WaysideRecording>, Vae)> {
    let run_seed = cfg.run_seed(seed_slot);
    let recs = ad_population(cfg, run_seed)?;
    let vae = train_encoder(cfg, &recs, run_seed)?;
    Ok((recs, vae))
}

pub fn run_ad_grid(cfg: &ExperimentConfig) -> Result<AdResults> {
    let mut all = AdResults::default();
    for s in 0..cfg.seeds {
        let (recs, vae) = seed_encoder(cfg, s)?;
        let r = run_ad_seed(cfg, s, &recs, &vae)?;
        all.cells.extend(r.cells);
        all.sweep.extend(r.sweep);
        all.breakdown.extend(r.breakdown);
    }
    Ok(all)
}

pub fn run_cl_grid(cfg: &ExperimentConfig) -> Result<ClResults> {
    let mut all = ClResults::default();
    for s in 0..cfg.seeds {
        let (_, vae) = seed_encoder(cfg, s)?;
        let r = run_cl_seed(cfg, s, &vae)?;
        all.metrics.extend(r.metrics);
        all.matrices.extend(r.matrices);
    }
    Ok(all)
}

/// Friedman test of one analysis.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FriedmanRow {
    pub analysis: String,
    pub blocks: usize,
    pub treatments: usize,
    pub statistic: Option<f64>,
    pub p_value: Option<f64>,
    pub significant: bool,
    pub status: String,
}

/// Pairwise post-hoc comparison of one analysis.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShafferRow {
    pub analysis: String,
    pub a: String,
    pub b: String,
    pub z: f64,
    pub p_raw: f64,
    pub p_adjusted: f64,
    pub significant: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StatsResults {
    pub friedman: Vec<FriedmanRow>,
    pub shaffer: Vec<ShafferRow>,
}

/// Build a block table from `(block, treatment, score)` triples. Blocks
/// missing any treatment are dropped.
pub fn block_table(triples: &[(String, String, f64)]) -> Result<RankBlockTable> {
    let treatments: Vec<String> = {
        let mut t: Vec<String> = Vec::new();
        for (_, tr, _) in triples {
            if !t.contains(tr) {
                t.push(tr.clone());
            }
        }
        t
    };
    let mut blocks: BTreeMap<&str, Vec<Option<f64>>> = BTreeMap::new();
    for (b, tr, v) in triples {
        let j = treatments.iter().position(|t| t == tr).expect("collected above");
        blocks.entry(b.as_str()).or_insert_with(|| vec![None; treatments.len()])[j] = Some(*v);
    }
    let scores: Vec<Vec<f64>> = blocks.into_values().filter_map(|row| row.into_iter().collect::<Option<Vec<f64>>>()).collect();
    RankBlockTable::new(treatments, scores)
}

/// Friedman and Shaffer over one block table.
pub fn analyse(analysis: &str, table: &RankBlockTable, alpha: f64, out: &mut StatsResults) {
    let (n, k) = (table.blocks(), table.treatments_count());
    let mut row =
        FriedmanRow { analysis: analysis.into(), blocks: n, treatments: k, statistic: None, p_value: None, significant: false, status: "ok".into() };
    match friedman(table) {
        Ok(f) => {
            row.statistic = Some(f.statistic);
            row.p_value = Some(f.p_value);
            row.significant = f.p_value < alpha;
        }
        Err(e) => row.status = format!("skipped: {e}"),
    }
    let rejected = row.significant;
    out.friedman.push(row);
    if rejected {
        if let Ok(pairs) = shaffer_posthoc(table) {
            out.shaffer.extend(pairs.into_iter().map(|p| ShafferRow {
                analysis: analysis.into(),
                a: table.treatments[p.a].clone(),
                b: table.treatments[p.b].clone(),
                z: p.z,
                p_raw: p.p_raw,
                p_adjusted: p.p_adjusted,
                significant: p.p_adjusted < alpha,
            }));
        }
    }
}

/// Significance tests over the grids: fusion codes blocked by (detector,
/// seed, starred), starred against unstarred per code, and replay
/// strategies blocked by (memory, seed).
pub fn run_stats(ad: Option<&AdResults>, cl: Option<&ClResults>, alpha: f64) -> StatsResults {
    let mut out = StatsResults::default();
    if let Some(ad) = ad {
        let triples: Vec<(String, String, f64)> = ad
            .cells
            .iter()
            .filter_map(|c| {
                c.accuracy.map(|a| (format!("{}/{}/{}", c.detector, c.seed, c.strategy.starred), c.strategy.code.name().to_string(), a))
            })
            .collect();
        if let Ok(t) = block_table(&triples) {
            analyse("ad_fusion", &t, alpha, &mut out);
        }
    }
    if let Some(cl) = cl {
        let triples: Vec<(String, String, f64)> = cl
            .metrics
            .iter()
            .filter_map(|r| r.final_accuracy.map(|a| (format!("{}/{}", r.memory, r.seed), r.strategy.name().to_string(), a)))
            .collect();
        if let Ok(t) = block_table(&triples) {
            analyse("cl_replay", &t, alpha, &mut out);
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FileEntry {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageTiming {
    pub stage: String,
    pub seconds: f64,
}

/// Provenance of one run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub config_hash: String,
    pub master_seed: u64,
    pub stage_seeds: BTreeMap<String, u64>,
    pub files: Vec<FileEntry>,
    pub timings: Vec<StageTiming>,
    pub failures: Vec<String>,
}

impl RunManifest {
    pub fn new(cfg: &ExperimentConfig) -> Self {
        let mut stage_seeds = BTreeMap::new();
        for s in 0..cfg.seeds {
            let r = cfg.run_seed(s);
            stage_seeds.insert(format!("seed{s}"), r);
            for stage in ["ad-passages", "vae", "sweep", "cl-stream", "repr-passages", "repr-vae"] {
                stage_seeds.insert(format!("seed{s}/{stage}"), derive(r, stage, 0));
            }
        }
        RunManifest {
            tool_version: env!("CARGO_PKG_VERSION").into(),
            config_hash: cfg.hash(),
            master_seed: cfg.master_seed,
            stage_seeds,
            files: Vec::new(),
            timings: Vec::new(),
            failures: Vec::new(),
        }
    }

    /// Record the current state of `path` (relative to `root`).
    pub fn add_file(&mut self, root: &Path, path: &Path) -> Result<()> {
        let bytes = fs::read(path)?;
        let rel = path.strip_prefix(root).unwrap_or(path).to_string_lossy().replace('\\', "/");
        self.files.retain(|f| f.path != rel);
        self.files.push(FileEntry { path: rel, sha256: sha256_hex(&bytes), bytes: bytes.len() as u64 });
        self.files.sort_by(|a, b| a.path.cmp(&b.path));
        Ok(())
    }

    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        let path = dir.join("manifest.json");
        fs::write(&path, serde_json::to_string_pretty(self)?)?;
        Ok(path)
    }
}

/// Serialize rows to CSV bytes.
pub fn csv_bytes<T: Serialize>(rows: &[T], header: &[&str]) -> Result<Vec<u8>> {
    let mut w = csv::WriterBuilder::new().has_headers(!rows.is_empty()).from_writer(Vec::new());
    if rows.is_empty() {
        w.write_record(header)?;
    }
    for r in rows {
        w.serialize(r)?;
    }
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

fn write_csv<T: Serialize>(dir: &Path, name: &str, rows: &[T], header: &[&str], written: &mut Vec<PathBuf>) -> Result<()> {
    let path = dir.join(name);
    fs::write(&path, csv_bytes(rows, header)?)?;
    written.push(path);
    Ok(())
}

#[derive(Serialize)]
struct AdCsvRow<'a> {
    seed: usize,
    detector: &'a str,
    strategy: String,
    sensitivity: f64,
    rows: usize,
    flagged: usize,
    accuracy: Option<f64>,
    trial_mean: Option<f64>,
    trial_ci: Option<f64>,
    status: &'a str,
}

#[derive(Serialize)]
struct SummaryRow {
    detector: String,
    strategy: String,
    accuracy_mean: f64,
    accuracy_ci: f64,
    formatted: String,
    seeds: usize,
}

#[derive(Serialize)]
struct SweepSummaryRow {
    detector: String,
    sensitivity: f64,
    ac: f64,
    ad: f64,
    times_selected: usize,
}

#[derive(Serialize)]
struct ClTableRow {
    strategy: String,
    memory: usize,
    fwt: Option<f64>,
    bwt: Option<f64>,
    im: Option<f64>,
    kgr: Option<f64>,
    final_accuracy: Option<f64>,
}

fn mean_ci(v: &[f64]) -> (f64, f64) {
    match v.len() {
        0 => (f64::NAN, f64::NAN),
        1 => (v[0], 0.0),
        _ => confidence_interval(v).expect("two or more samples"),
    }
}

/// Write result CSVs and the markdown report into `dir`. Returns the files
/// written, report last.
pub fn emit_report(
    dir: &Path,
    ad: Option<&AdResults>,
    cl: Option<&ClResults>,
    stats: Option<&StatsResults>,
    representation: &[RepresentationRow],
) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    let mut md = String::from("# Results\n\n");

    if let Some(ad) = ad {
        let rows: Vec<AdCsvRow> = ad
            .cells
            .iter()
            .map(|c| AdCsvRow {
                seed: c.seed,
                detector: c.detector.name(),
                strategy: c.strategy.name(),
                sensitivity: c.sensitivity,
                rows: c.rows,
                flagged: c.flagged,
                accuracy: c.accuracy,
                trial_mean: c.trial_mean,
                trial_ci: c.trial_ci,
                status: &c.status,
            })
            .collect();
        write_csv(dir, "ad_grid.csv", &rows, &[], &mut written)?;

        let mut summary = Vec::new();
        let mut keys: Vec<(Detector, FusionStrategy)> = ad.cells.iter().map(|c| (c.detector, c.strategy)).collect();
        keys.dedup();
        let mut seen = Vec::new();
        for key in keys {
            if seen.contains(&key) {
                continue;
            }
            seen.push(key);
            let v: Vec<f64> =
                ad.cells.iter().filter(|c| (c.detector, c.strategy) == key).filter_map(|c| c.accuracy).collect();
            if v.is_empty() {
                continue;
            }
            let (m, h) = mean_ci(&v);
            summary.push(SummaryRow {
                detector: key.0.name().into(),
                strategy: key.1.name(),
                accuracy_mean: m,
                accuracy_ci: h,
                formatted: format_ci(m, h, 2),
                seeds: v.len(),
            });
        }
        write_csv(dir, "ad_summary.csv", &summary, &["detector", "strategy", "accuracy_mean", "accuracy_ci", "formatted", "seeds"], &mut written)?;

        let mut sweep: BTreeMap<(String, u64), (f64, f64, usize, usize)> = BTreeMap::new();
        for r in &ad.sweep {
            let e = sweep.entry((r.detector.name().to_string(), r.sensitivity.to_bits())).or_default();
            e.0 += r.ac;
            e.1 += r.ad;
            e.2 += 1;
            e.3 += r.selected as usize;
        }
        let mut sweep_rows: Vec<SweepSummaryRow> = sweep
            .into_iter()
            .map(|((d, s), (ac, adv, n, sel))| SweepSummaryRow {
                detector: d,
                sensitivity: f64::from_bits(s),
                ac: ac / n as f64,
                ad: adv / n as f64,
                times_selected: sel,
            })
            .collect();
        sweep_rows.sort_by(|a, b| a.detector.cmp(&b.detector).then(a.sensitivity.total_cmp(&b.sensitivity)));
        write_csv(dir, "sensitivity_sweep.csv", &sweep_rows, &["detector", "sensitivity", "ac", "ad", "times_selected"], &mut written)?;

        #[derive(Serialize)]
        struct B<'a> {
            seed: usize,
            detector: &'a str,
            strategy: String,
            partition: &'a str,
            group: &'a str,
            passages: usize,
            accuracy: f64,
        }
        let b: Vec<B> = ad
            .breakdown
            .iter()
            .map(|r| B {
                seed: r.seed,
                detector: r.detector.name(),
                strategy: r.strategy.name(),
                partition: &r.partition,
                group: &r.group,
                passages: r.passages,
                accuracy: r.accuracy,
            })
            .collect();
        write_csv(dir, "ad_breakdown.csv", &b, &["seed", "detector", "strategy", "partition", "group", "passages", "accuracy"], &mut written)?;

        md.push_str("## Anomaly detection\n\n");
        if summary.is_empty() {
            md.push_str("No results.\n\n");
        } else {
            md.push_str("| detector | strategy | accuracy |\n|---|---|---|\n");
            for r in &summary {
                md.push_str(&format!("| {} | {} | {} |\n", r.detector, r.strategy, r.formatted));
            }
            md.push('\n');
        }
    }

    if !representation.is_empty() {
        write_csv(dir, "representation.csv", representation, &[], &mut written)?;
        let n = representation.len() as f64;
        let e = representation.iter().map(|r| r.embedding).sum::<f64>() / n;
        let h = representation.iter().map(|r| r.handcrafted).sum::<f64>() / n;
        md.push_str(&format!(
            "## Representation\n\nEmbedding accuracy {e:.3}, handcrafted accuracy {h:.3} (mean over {} seeds).\n\n",
            representation.len()
        ));
    }

    if let Some(cl) = cl {
        #[derive(Serialize)]
        struct M<'a> {
            strategy: &'a str,
            memory: usize,
            seed: usize,
            fwt: Option<f64>,
            bwt: Option<f64>,
            im: Option<f64>,
            kgr: Option<f64>,
            final_accuracy: Option<f64>,
            status: &'a str,
        }
        let m: Vec<M> = cl
            .metrics
            .iter()
            .map(|r| M {
                strategy: r.strategy.name(),
                memory: r.memory,
                seed: r.seed,
                fwt: r.fwt,
                bwt: r.bwt,
                im: r.im,
                kgr: r.kgr,
                final_accuracy: r.final_accuracy,
                status: &r.status,
            })
            .collect();
        write_csv(dir, "cl_metrics.csv", &m, &["strategy", "memory", "seed", "fwt", "bwt", "im", "kgr", "final_accuracy", "status"], &mut written)?;

        let mut table = Vec::new();
        let mut keys: Vec<(ReplayStrategy, usize)> = Vec::new();
        for r in &cl.metrics {
            if !keys.contains(&(r.strategy, r.memory)) {
                keys.push((r.strategy, r.memory));
            }
        }
        for (s, mem) in keys {
            table.push(ClTableRow {
                strategy: s.name().into(),
                memory: mem,
                fwt: cl.mean(s, mem, |r| r.fwt),
                bwt: cl.mean(s, mem, |r| r.bwt),
                im: cl.mean(s, mem, |r| r.im),
                kgr: cl.mean(s, mem, |r| r.kgr),
                final_accuracy: cl.mean(s, mem, |r| r.final_accuracy),
            });
        }
        write_csv(dir, "cl_table.csv", &table, &["strategy", "memory", "fwt", "bwt", "im", "kgr", "final_accuracy"], &mut written)?;

        #[derive(Serialize)]
        struct T<'a> {
            strategy: &'a str,
            memory: usize,
            seed: usize,
            step: usize,
            domain: usize,
            scenario: &'a str,
            accuracy: f64,
        }
        let t: Vec<T> = cl
            .matrices
            .iter()
            .map(|r| T {
                strategy: r.strategy.name(),
                memory: r.memory,
                seed: r.seed,
                step: r.step,
                domain: r.domain,
                scenario: r.scenario.name(),
                accuracy: r.accuracy,
            })
            .collect();
        write_csv(dir, "cl_timeline.csv", &t, &["strategy", "memory", "seed", "step", "domain", "scenario", "accuracy"], &mut written)?;

        let mut wide: BTreeMap<(String, usize, usize, usize), Vec<f64>> = BTreeMap::new();
        let mut order: Vec<(String, usize, usize, usize)> = Vec::new();
        for r in &cl.matrices {
            let key = (r.strategy.name().to_string(), r.memory, r.seed, r.step);
            if !wide.contains_key(&key) {
                order.push(key.clone());
            }
            wide.entry(key).or_default().push(r.accuracy);
        }
        let n = wide.values().map(Vec::len).max().unwrap_or(0);
        let mut text = String::from("strategy,memory,seed,step");
        for i in 1..=n {
            text.push_str(&format!(",d{i}"));
        }
        text.push('\n');
        for key in order {
            text.push_str(&format!("{},{},{},{}", key.0, key.1, key.2, key.3));
            for v in &wide[&key] {
                text.push_str(&format!(",{v}"));
            }
            text.push('\n');
        }
        let path = dir.join("cl_r_matrix.csv");
        fs::write(&path, text)?;
        written.push(path);

        md.push_str("## Continual learning\n\n");
        if table.is_empty() {
            md.push_str("No results.\n\n");
        } else {
            md.push_str("| strategy | memory | FWT | BWT | IM | KGR |\n|---|---|---|---|---|---|\n");
            let f = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{v:.4}"));
            for r in &table {
                md.push_str(&format!("| {} | {} | {} | {} | {} | {} |\n", r.strategy, r.memory, f(r.fwt), f(r.bwt), f(r.im), f(r.kgr)));
            }
            md.push('\n');
        }
    }

    if let Some(st) = stats {
        write_csv(dir, "stats_friedman.csv", &st.friedman, &["analysis", "blocks", "treatments", "statistic", "p_value", "significant", "status"], &mut written)?;
        write_csv(dir, "stats_shaffer.csv", &st.shaffer, &["analysis", "a", "b", "z", "p_raw", "p_adjusted", "significant"], &mut written)?;
        md.push_str("## Significance\n\n");
        for f in &st.friedman {
            match (f.statistic, f.p_value) {
                (Some(s), Some(p)) => md.push_str(&format!("- {}: Friedman statistic {s:.3}, p = {p:.3e}\n", f.analysis)),
                _ => md.push_str(&format!("- {}: {}\n", f.analysis, f.status)),
            }
        }
        md.push('\n');
    }

    if written.is_empty() {
        md.push_str("## No results\n\nThe run produced no result tables.\n\n");
    } else {
        md.push_str("## Files\n\n| file | sha256 |\n|---|---|\n");
        for p in &written {
            let name = p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
            md.push_str(&format!("| {name} | {} |\n", sha256_hex(&fs::read(p)?)));
        }
    }
    let report = dir.join("report.md");
    fs::write(&report, md)?;
    written.push(report);
    Ok(written)
}

/// Everything a report is built from; stored as `results.json`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ResultBundle {
    pub ad: Option<AdResults>,
    pub cl: Option<ClResults>,
    pub stats: Option<StatsResults>,
    #[serde(default)]
    pub representation: Vec<RepresentationRow>,
}

pub const RESULTS_FILE: &str = "results.json";

impl ResultBundle {
    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        fs::create_dir_all(dir)?;
        let path = dir.join(RESULTS_FILE);
        fs::write(&path, serde_json::to_string(self)?)?;
        Ok(path)
    }

    pub fn read(dir: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&fs::read_to_string(dir.join(RESULTS_FILE))?)?)
    }

    pub fn emit(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        emit_report(dir, self.ad.as_ref(), self.cl.as_ref(), self.stats.as_ref(), &self.representation)
    }
}

/// Outcome of a full run.
#[derive(Clone, Debug, PartialEq)]
pub struct RunOutput {
    pub ad: AdResults,
    pub cl: ClResults,
    pub stats: StatsResults,
    pub representation: Vec<RepresentationRow>,
    pub manifest: RunManifest,
}

/// Every stage for every seed slot, then the report and the manifest.
pub fn run_all(cfg: &ExperimentConfig) -> Result<RunOutput> {
    cfg.validate()?;
    let dir = cfg.output_dir.clone();
    fs::create_dir_all(&dir)?;
    let mut manifest = RunManifest::new(cfg);
    let mut ad = AdResults::default();
    let mut cl = ClResults::default();
    let mut representation = Vec::new();
    let mut timed = |name: String, secs: f64| manifest.timings.push(StageTiming { stage: name, seconds: secs });
    for s in 0..cfg.seeds {
        let t = Instant::now();
        let (recs, vae) = seed_encoder(cfg, s)?;
        timed(format!("seed{s}/encoder"), t.elapsed().as_secs_f64());
        let t = Instant::now();
        let r = run_ad_seed(cfg, s, &recs, &vae)?;
        ad.cells.extend(r.cells);
        ad.sweep.extend(r.sweep);
        ad.breakdown.extend(r.breakdown);
        timed(format!("seed{s}/ad"), t.elapsed().as_secs_f64());
        let t = Instant::now();
        let r = run_cl_seed(cfg, s, &vae)?;
        cl.metrics.extend(r.metrics);
        cl.matrices.extend(r.matrices);
        timed(format!("seed{s}/cl"), t.elapsed().as_secs_f64());
        if cfg.embed.comparison_passages > 0 {
            let t = Instant::now();
            representation.push(compare_representations(cfg, s, cfg.embed.comparison_passages)?);
            timed(format!("seed{s}/representation"), t.elapsed().as_secs_f64());
        }
    }
    let t = Instant::now();
    let stats = run_stats(Some(&ad), Some(&cl), cfg.stats.alpha);
    let bundle = ResultBundle { ad: Some(ad), cl: Some(cl), stats: Some(stats), representation };
    let mut files = bundle.emit(&dir)?;
    files.push(bundle.write(&dir)?);
    timed("report".into(), t.elapsed().as_secs_f64());
    let ResultBundle { ad: Some(ad), cl: Some(cl), stats: Some(stats), representation } = bundle else {
        unreachable!("bundle built above")
    };
    let config_path = dir.join("config.toml");
    fs::write(&config_path, cfg.to_toml()?)?;
    manifest.failures = ad
        .cells
        .iter()
        .filter(|c| c.status != "ok")
        .map(|c| format!("ad {}/{}/{}: {}", c.seed, c.detector, c.strategy, c.status))
        .chain(cl.metrics.iter().filter(|r| r.status != "ok").map(|r| format!("cl {}/{}/{}: {}", r.strategy, r.memory, r.seed, r.status)))
        .collect();
    for f in files.iter().chain([&config_path]) {
        manifest.add_file(&dir, f)?;
    }
    manifest.write(&dir)?;
    Ok(RunOutput { ad, cl, stats, representation, manifest })
}
