//! Classifier inputs for the fusion strategies.
//!
//! A feature vector is the concatenation `[S?, Z?, X?, Y?, load?, speed?]`
//! where `S` is the 40-value embedding, `Z` the wheel count, `X` the wheel
//! times and `Y` the per-wheel deformations. `X` and `Y` are padded to a
//! fixed wheel count; padded slots are marked absent and reach the
//! classifier as missing values.

use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::clf::FeatureMatrix;
use crate::embed::{Embedding, SignalWindow, Vae};
use crate::peaks::{extract_semantics, Detector, PeakConfig, SemanticFeatures};
use crate::synth::{AnomalyType, WaysideRecording};
use crate::{Error, Result};

pub const DEFAULT_MAX_WHEELS: usize = 48;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum StrategyCode {
    #[serde(rename = "S-WC")]
    SWc,
    #[serde(rename = "S-WI")]
    SWi,
    #[serde(rename = "I-WI")]
    IWi,
    #[serde(rename = "I-WD")]
    IWd,
    #[serde(rename = "S-WD")]
    SWd,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SemanticField {
    /// Wheel count.
    Z,
    /// Wheel times.
    X,
    /// Wheel deformations.
    Y,
}

impl StrategyCode {
    pub const ALL: [StrategyCode; 5] = [StrategyCode::SWc, StrategyCode::SWi, StrategyCode::IWi, StrategyCode::IWd, StrategyCode::SWd];

    pub fn name(self) -> &'static str {
        match self {
            StrategyCode::SWc => "S-WC",
            StrategyCode::SWi => "S-WI",
            StrategyCode::IWi => "I-WI",
            StrategyCode::IWd => "I-WD",
            StrategyCode::SWd => "S-WD",
        }
    }

    pub fn uses_embedding(self) -> bool {
        matches!(self, StrategyCode::SWc | StrategyCode::SWi | StrategyCode::SWd)
    }

    pub fn semantic_field(self) -> SemanticField {
        match self {
            StrategyCode::SWc => SemanticField::Z,
            StrategyCode::SWi | StrategyCode::IWi => SemanticField::X,
            StrategyCode::IWd | StrategyCode::SWd => SemanticField::Y,
        }
    }
}

/// A fusion strategy; starred variants add load and speed context.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct FusionStrategy {
    pub code: StrategyCode,
    pub starred: bool,
}

impl FusionStrategy {
    pub const fn new(code: StrategyCode, starred: bool) -> Self {
        FusionStrategy { code, starred }
    }

    /// The ten variants, each unstarred strategy followed by its starred
    /// counterpart.
    pub fn all() -> Vec<FusionStrategy> {
        StrategyCode::ALL.iter().flat_map(|&c| [FusionStrategy::new(c, false), FusionStrategy::new(c, true)]).collect()
    }

    pub fn uses_embedding(self) -> bool {
        self.code.uses_embedding()
    }

    pub fn semantic_fields(self) -> &'static [SemanticField] {
        match self.code.semantic_field() {
            SemanticField::Z => &[SemanticField::Z],
            SemanticField::X => &[SemanticField::X],
            SemanticField::Y => &[SemanticField::Y],
        }
    }

    pub fn name(self) -> String {
        format!("{}{}", self.code.name(), if self.starred { "*" } else { "" })
    }
}

impl fmt::Display for FusionStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

impl FromStr for FusionStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim().to_ascii_uppercase();
        let (base, starred) = match t.strip_suffix('*') {
            Some(b) => (b, true),
            None => (t.as_str(), false),
        };
        StrategyCode::ALL
            .into_iter()
            .find(|c| c.name() == base)
            .map(|code| FusionStrategy { code, starred })
            .ok_or_else(|| Error::config(format!("unknown fusion strategy `{s}`")))
    }
}

impl TryFrom<String> for FusionStrategy {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<FusionStrategy> for String {
    fn from(s: FusionStrategy) -> String {
        s.name()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FuseConfig {
    /// Width of the X and Y blocks.
    pub max_wheels: usize,
    /// Accelerometer window length fed to the VAE.
    pub window_len: usize,
}

impl Default for FuseConfig {
    fn default() -> Self {
        FuseConfig { max_wheels: DEFAULT_MAX_WHEELS, window_len: crate::embed::DEFAULT_WINDOW_LEN }
    }
}

/// Slot layout of a feature vector.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Layout {
    pub strategy: FusionStrategy,
    /// Width of the embedding block, 0 when the strategy has none.
    pub embedding_dim: usize,
    pub max_wheels: usize,
}

impl Layout {
    pub fn new(strategy: FusionStrategy, embedding_dim: usize, max_wheels: usize) -> Self {
        let embedding_dim = if strategy.uses_embedding() { embedding_dim } else { 0 };
        Layout { strategy, embedding_dim, max_wheels }
    }

    pub fn len(&self) -> usize {
        let semantic: usize = self
            .strategy
            .semantic_fields()
            .iter()
            .map(|f| if *f == SemanticField::Z { 1 } else { self.max_wheels })
            .sum();
        self.embedding_dim + semantic + if self.strategy.starred { 2 } else { 0 }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn slot_names(&self) -> Vec<String> {
        let mut names: Vec<String> = (0..self.embedding_dim).map(|i| format!("s_{i}")).collect();
        for f in self.strategy.semantic_fields() {
            match f {
                SemanticField::Z => names.push("z".into()),
                SemanticField::X => names.extend((0..self.max_wheels).map(|i| format!("x_{i}"))),
                SemanticField::Y => names.extend((0..self.max_wheels).map(|i| format!("y_{i}"))),
            }
        }
        if self.strategy.starred {
            names.push("load_t".into());
            names.push("speed_kmh".into());
        }
        names
    }
}

/// One classifier input row.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureVector {
    pub layout: Layout,
    pub values: Vec<f64>,
    /// False for padded slots; their value is stored as 0.
    pub present: Vec<bool>,
    pub label: bool,
    pub soft_label: Option<f64>,
    pub domain_id: u32,
    pub anomaly_type: AnomalyType,
    pub anomaly_count: usize,
}

impl FeatureVector {
    /// Training target: the soft label when set, else the hard label.
    pub fn target(&self) -> f64 {
        self.soft_label.unwrap_or(if self.label { 1.0 } else { 0.0 })
    }
}

/// Everything the strategies draw from for one passage.
#[derive(Clone, Debug, PartialEq)]
pub struct PassageFeatures {
    pub embedding: Option<Embedding>,
    /// `None` when the detector failed on the passage.
    pub semantics: Option<SemanticFeatures>,
    pub label: bool,
    pub anomaly_type: AnomalyType,
    pub anomaly_count: usize,
    pub domain_id: u32,
}

/// Assemble one feature vector.
pub fn fuse(strategy: FusionStrategy, embedding: Option<&Embedding>, sem: &SemanticFeatures, cfg: &FuseConfig) -> Result<FeatureVector> {
    let embedding_dim = match (strategy.uses_embedding(), embedding) {
        (true, Some(e)) => e.dim(),
        (true, None) => return Err(Error::domain(format!("{strategy} needs an embedding"))),
        (false, Some(_)) => return Err(Error::domain(format!("{strategy} takes no embedding"))),
        (false, None) => 0,
    };
    let layout = Layout::new(strategy, embedding_dim, cfg.max_wheels);
    let mut values = Vec::with_capacity(layout.len());
    let mut present = Vec::with_capacity(layout.len());
    if let Some(e) = embedding {
        values.extend(e.fused_view());
        present.resize(values.len(), true);
    }
    for f in strategy.semantic_fields() {
        match f {
            SemanticField::Z => {
                values.push(sem.wheel_count as f64);
                present.push(true);
            }
            SemanticField::X => pad_into(&mut values, &mut present, &sem.wheel_times_s, cfg.max_wheels),
            SemanticField::Y => pad_into(&mut values, &mut present, &sem.deformations, cfg.max_wheels),
        }
    }
    if strategy.starred {
        let (Some(load), Some(speed)) = (sem.context_load, sem.context_speed) else {
            return Err(Error::domain(format!("{strategy} needs load and speed context")));
        };
        values.extend([load, speed]);
        present.extend([true, true]);
    }
    debug_assert_eq!(values.len(), layout.len());
    Ok(FeatureVector {
        layout,
        values,
        present,
        label: false,
        soft_label: None,
        domain_id: 0,
        anomaly_type: AnomalyType::None,
        anomaly_count: 0,
    })
}

fn pad_into(values: &mut Vec<f64>, present: &mut Vec<bool>, block: &[f64], width: usize) {
    for i in 0..width {
        values.push(block.get(i).copied().unwrap_or(0.0));
        present.push(i < block.len());
    }
}

/// Run the detector and the encoder over recordings. Context fields are
/// filled from ground truth.
pub fn extract_passage_features(
    recordings: &[WaysideRecording],
    detector: Detector,
    sensitivity: f64,
    peak_cfg: &PeakConfig,
    vae: Option<&Vae>,
    cfg: &FuseConfig,
    domain_id: u32,
) -> Result<Vec<PassageFeatures>> {
    if !(0.0..=1.0).contains(&sensitivity) {
        return Err(Error::domain(format!("sensitivity {sensitivity} outside [0, 1]")));
    }
    let semantics: Vec<Option<SemanticFeatures>> = recordings
        .par_iter()
        .map(|r| {
            detector.detect_strain(&r.strain, r.sample_rate_hz, sensitivity, peak_cfg).ok().map(|p| {
                let mut s = extract_semantics(&p, r.sample_rate_hz);
                s.context_load = Some(r.truth.load_scheme.total_load_t());
                s.context_speed = Some(r.truth.speed_kmh);
                s
            })
        })
        .collect();
    let embeddings: Vec<Option<Embedding>> = match vae {
        Some(v) => {
            let windows = accel_windows(recordings, cfg.window_len)?;
            v.encode_batch(&windows)?.into_iter().map(Some).collect()
        }
        None => vec![None; recordings.len()],
    };
    Ok(recordings
        .iter()
        .zip(semantics)
        .zip(embeddings)
        .map(|((r, semantics), embedding)| PassageFeatures {
            embedding,
            semantics,
            label: r.truth.is_anomalous(),
            anomaly_type: AnomalyType::of(&r.truth),
            anomaly_count: r.truth.defects.len(),
            domain_id,
        })
        .collect())
}

/// Normalized accelerometer windows of the recordings.
pub fn accel_windows(recordings: &[WaysideRecording], len: usize) -> Result<Vec<SignalWindow>> {
    recordings.par_iter().map(|r| SignalWindow::from_signal(&r.accel, len)).collect()
}

/// Build the rows of one strategy; passages whose detection failed are
/// skipped and counted in `flagged`.
pub fn assemble(strategy: FusionStrategy, passages: &[PassageFeatures], cfg: &FuseConfig) -> Result<Dataset> {
    let mut rows = Vec::with_capacity(passages.len());
    let mut flagged = 0;
    for p in passages {
        let Some(sem) = &p.semantics else {
            flagged += 1;
            continue;
        };
        let embedding = if strategy.uses_embedding() {
            Some(p.embedding.as_ref().ok_or_else(|| Error::domain(format!("{strategy} needs a trained VAE")))?)
        } else {
            None
        };
        let mut fv = fuse(strategy, embedding, sem, cfg)?;
        fv.label = p.label;
        fv.domain_id = p.domain_id;
        fv.anomaly_type = p.anomaly_type;
        fv.anomaly_count = p.anomaly_count;
        rows.push(fv);
    }
    let embedding_dim = passages.iter().find_map(|p| p.embedding.as_ref().map(Embedding::dim)).unwrap_or(0);
    let layout = rows.first().map_or(Layout::new(strategy, embedding_dim, cfg.max_wheels), |r| r.layout);
    Ok(Dataset { layout, rows, meta: DatasetMeta { strategy, flagged, ..Default::default() } })
}

/// Feature extraction plus assembly for one strategy.
pub fn build_dataset(
    recordings: &[WaysideRecording],
    strategy: FusionStrategy,
    detector: Detector,
    sensitivity: f64,
    vae: Option<&Vae>,
    peak_cfg: &PeakConfig,
    cfg: &FuseConfig,
) -> Result<Dataset> {
    if strategy.uses_embedding() && vae.is_none() {
        return Err(Error::domain(format!("{strategy} needs a trained VAE")));
    }
    let vae = if strategy.uses_embedding() { vae } else { None };
    let feats = extract_passage_features(recordings, detector, sensitivity, peak_cfg, vae, cfg, 0)?;
    let mut ds = assemble(strategy, &feats, cfg)?;
    ds.meta.detector = Some(detector);
    ds.meta.sensitivity = Some(sensitivity);
    ds.meta.seeds = recordings.iter().map(|r| r.truth.seed).collect();
    Ok(ds)
}

/// Provenance stored in the JSON sidecar of a dataset file.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub strategy: FusionStrategy,
    pub detector: Option<Detector>,
    pub sensitivity: Option<f64>,
    pub seeds: Vec<u64>,
    /// Passages dropped because detection failed.
    pub flagged: usize,
}

impl Default for FusionStrategy {
    fn default() -> Self {
        FusionStrategy::new(StrategyCode::SWc, false)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Sidecar {
    meta: DatasetMeta,
    layout: Layout,
    rows: usize,
}

/// Labelled rows sharing one layout.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub layout: Layout,
    pub rows: Vec<FeatureVector>,
    pub meta: DatasetMeta,
}

impl Dataset {
    pub fn empty(layout: Layout) -> Self {
        Dataset { layout, rows: Vec::new(), meta: DatasetMeta { strategy: layout.strategy, ..Default::default() } }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn positive_rate(&self) -> f64 {
        if self.rows.is_empty() {
            return 0.0;
        }
        self.rows.iter().filter(|r| r.label).count() as f64 / self.rows.len() as f64
    }

    pub fn matrix(&self) -> FeatureMatrix {
        let mut m = FeatureMatrix::with_cols(self.layout.len());
        for r in &self.rows {
            m.push_row(&r.values, Some(&r.present)).expect("rows share the layout");
        }
        m
    }

    pub fn labels(&self) -> Vec<f64> {
        self.rows.iter().map(|r| if r.label { 1.0 } else { 0.0 }).collect()
    }

    pub fn targets(&self) -> Vec<f64> {
        self.rows.iter().map(FeatureVector::target).collect()
    }

    pub fn select(&self, idx: &[usize]) -> Dataset {
        Dataset { layout: self.layout, rows: idx.iter().map(|&i| self.rows[i].clone()).collect(), meta: self.meta.clone() }
    }

    pub fn push(&mut self, row: FeatureVector) -> Result<()> {
        if row.layout != self.layout {
            return Err(Error::domain("row layout differs from the dataset layout"));
        }
        self.rows.push(row);
        Ok(())
    }

    pub fn write_csv_to(&self, out: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = self.layout.slot_names();
        header.extend(["label", "soft_label", "domain_id", "anomaly_type", "anomaly_count"].map(String::from));
        w.write_record(&header)?;
        for r in &self.rows {
            let mut rec: Vec<String> = r
                .values
                .iter()
                .zip(&r.present)
                .map(|(v, &on)| if on { v.to_string() } else { String::new() })
                .collect();
            rec.push(u8::from(r.label).to_string());
            rec.push(r.soft_label.map(|p| p.to_string()).unwrap_or_default());
            rec.push(r.domain_id.to_string());
            rec.push(r.anomaly_type.label().to_string());
            rec.push(r.anomaly_count.to_string());
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv_to(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("csv is utf-8")
    }

    /// SHA-256 of the CSV rendering.
    pub fn content_hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_csv_string().as_bytes()))
    }

    /// Write `path` (CSV) and its `.json` sidecar.
    pub fn write(&self, path: &Path) -> Result<PathBuf> {
        std::fs::write(path, self.to_csv_string())?;
        let side = sidecar_path(path);
        let sidecar = Sidecar { meta: self.meta.clone(), layout: self.layout, rows: self.rows.len() };
        std::fs::write(&side, serde_json::to_string_pretty(&sidecar)?)?;
        Ok(side)
    }

    pub fn read(path: &Path) -> Result<Dataset> {
        let sidecar: Sidecar = serde_json::from_str(&std::fs::read_to_string(sidecar_path(path))?)?;
        let layout = sidecar.layout;
        let names = layout.slot_names();
        let mut r = csv::Reader::from_path(path)?;
        let header: Vec<String> = r.headers()?.iter().map(String::from).collect();
        let width = names.len();
        if header.len() != width + 5 || header[..width] != names[..] {
            return Err(Error::Format("dataset header does not match the sidecar layout".into()));
        }
        let bad = |what: &str| Error::Format(format!("bad {what} field"));
        let mut rows = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            let mut values = Vec::with_capacity(width);
            let mut present = Vec::with_capacity(width);
            for f in rec.iter().take(width) {
                if f.is_empty() {
                    values.push(0.0);
                    present.push(false);
                } else {
                    values.push(f.parse().map_err(|_| bad("value"))?);
                    present.push(true);
                }
            }
            let label = match &rec[width] {
                "0" => false,
                "1" => true,
                _ => return Err(bad("label")),
            };
            let soft_label = match &rec[width + 1] {
                "" => None,
                s => Some(s.parse().map_err(|_| bad("soft_label"))?),
            };
            let anomaly_type = AnomalyType::ALL
                .into_iter()
                .find(|t| t.label() == &rec[width + 3])
                .ok_or_else(|| bad("anomaly_type"))?;
            rows.push(FeatureVector {
                layout,
                values,
                present,
                label,
                soft_label,
                domain_id: rec[width + 2].parse().map_err(|_| bad("domain_id"))?,
                anomaly_type,
                anomaly_count: rec[width + 4].parse().map_err(|_| bad("anomaly_count"))?,
            });
        }
        if rows.len() != sidecar.rows {
            return Err(Error::Format("row count differs from the sidecar".into()));
        }
        Ok(Dataset { layout, rows, meta: sidecar.meta })
    }
}

fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("json")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clf::{train_gbdt, GbdtConfig};
    use crate::synth::{synthesize_passage, LoadScheme, PassageSpec, TrainKind};
    use proptest::prelude::*;

    fn sem(n: usize) -> SemanticFeatures {
        SemanticFeatures {
            wheel_count: n,
            wheel_times_s: (0..n).map(|i| 0.5 + i as f64 * 0.1).collect(),
            deformations: (0..n).map(|i| 40.0 + i as f64).collect(),
            context_load: Some(30.0),
            context_speed: Some(90.0),
        }
    }

    fn emb() -> Embedding {
        Embedding { mu: vec![0.1; 20], logvar: vec![-0.2; 20] }
    }

    #[test]
    fn layout_arithmetic() {
        let cfg = FuseConfig::default();
        let v = fuse("S-WC".parse().unwrap(), Some(&emb()), &sem(10), &cfg).unwrap();
        assert_eq!(v.values.len(), 41);
        let v = fuse("I-WI".parse().unwrap(), None, &sem(10), &cfg).unwrap();
        assert_eq!(v.values.len(), 48);
        assert_eq!(v.present.iter().filter(|p| !**p).count(), 38);
        let a = fuse("S-WD".parse().unwrap(), Some(&emb()), &sem(10), &cfg).unwrap();
        let b = fuse("S-WD*".parse().unwrap(), Some(&emb()), &sem(10), &cfg).unwrap();
        assert_eq!(b.values.len(), a.values.len() + 2);
        let many = fuse("I-WD".parse().unwrap(), None, &sem(60), &cfg).unwrap();
        assert_eq!(many.values.len(), 48);
        assert!(many.present.iter().all(|p| *p));
    }

    #[test]
    fn strategy_table_holds_for_all_variants() {
        let all = FusionStrategy::all();
        assert_eq!(all.len(), 10);
        for s in all {
            let expect_s = matches!(s.code, StrategyCode::SWc | StrategyCode::SWi | StrategyCode::SWd);
            assert_eq!(s.uses_embedding(), expect_s);
            let field = match s.code {
                StrategyCode::SWc => SemanticField::Z,
                StrategyCode::SWi | StrategyCode::IWi => SemanticField::X,
                _ => SemanticField::Y,
            };
            assert_eq!(s.semantic_fields(), &[field]);
            let e = emb();
            let v = fuse(s, expect_s.then_some(&e), &sem(10), &FuseConfig::default()).unwrap();
            assert_eq!(v.values.len(), v.layout.len());
            assert_eq!(v.layout.slot_names().len(), v.layout.len());
            assert_eq!(v.layout.slot_names().iter().any(|n| n.starts_with("s_")), expect_s);
            assert_eq!(s.name().parse::<FusionStrategy>().unwrap(), s);
            // Wrong embedding presence is rejected.
            assert!(fuse(s, (!expect_s).then_some(&e), &sem(10), &FuseConfig::default()).is_err());
        }
    }

    #[test]
    fn starred_needs_context() {
        let mut s = sem(4);
        s.context_speed = None;
        assert!(fuse("I-WD*".parse().unwrap(), None, &s, &FuseConfig::default()).is_err());
    }

    #[test]
    fn dataset_bookkeeping_and_round_trip() {
        let recs: Vec<WaysideRecording> = (0..8)
            .map(|i| {
                let mut spec = PassageSpec::new(TrainKind::Laagrss, 80.0, LoadScheme::Full, i);
                if i % 2 == 1 {
                    let mut rng = crate::rng::rng_from(i);
                    spec = spec.with_defects(vec![crate::synth::sample_defect(crate::synth::DefectKind::Flat, crate::synth::FLAT_L2, &mut rng).unwrap()]);
                }
                synthesize_passage(&spec).unwrap()
            })
            .collect();
        let strategy: FusionStrategy = "I-WD*".parse().unwrap();
        let ds = build_dataset(&recs, strategy, Detector::Sd, 0.8, None, &PeakConfig::default(), &FuseConfig::default()).unwrap();
        assert_eq!(ds.len(), 8);
        assert_eq!(ds.positive_rate(), 0.5);
        assert!(ds.rows.iter().all(|r| !r.layout.slot_names().iter().any(|n| n.starts_with("s_"))));
        let again = build_dataset(&recs, strategy, Detector::Sd, 0.8, None, &PeakConfig::default(), &FuseConfig::default()).unwrap();
        assert_eq!(ds.content_hash(), again.content_hash());
        assert!(build_dataset(&recs, "S-WC".parse().unwrap(), Detector::Sd, 0.8, None, &PeakConfig::default(), &FuseConfig::default()).is_err());

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        ds.write(&path).unwrap();
        assert_eq!(Dataset::read(&path).unwrap(), ds);
    }

    #[test]
    fn masked_slots_do_not_change_predictions() {
        let cfg = FuseConfig { max_wheels: 6, ..Default::default() };
        let strategy: FusionStrategy = "I-WD".parse().unwrap();
        let mut ds = Dataset::empty(Layout::new(strategy, 0, 6));
        for i in 0..60 {
            let n = 2 + i % 4;
            let mut s = sem(n);
            s.deformations = (0..n).map(|j| (i * 7 + j * 3) as f64 % 11.0).collect();
            let mut v = fuse(strategy, None, &s, &cfg).unwrap();
            v.label = s.deformations[0] > 5.0;
            ds.push(v).unwrap();
        }
        let model = train_gbdt(&ds.matrix(), &ds.labels(), None, &GbdtConfig { subsample: 1.0, colsample_bytree: 1.0, ..Default::default() }).unwrap();
        let mut noisy = ds.clone();
        for r in &mut noisy.rows {
            for (v, p) in r.values.iter_mut().zip(&r.present) {
                if !p {
                    *v = 1e9;
                }
            }
        }
        assert_eq!(model.predict_matrix(&ds.matrix()).unwrap(), model.predict_matrix(&noisy.matrix()).unwrap());
    }

    proptest! {
        #[test]
        fn csv_round_trip(
            rows in prop::collection::vec((prop::collection::vec(-1e6f64..1e6, 0..8), any::<bool>(), prop::option::of(0.0f64..1.0), 0u32..5), 1..10),
            starred in any::<bool>(),
        ) {
            let strategy = FusionStrategy::new(StrategyCode::IWi, starred);
            let cfg = FuseConfig { max_wheels: 8, ..Default::default() };
            let mut ds = Dataset::empty(Layout::new(strategy, 0, 8));
            for (times, label, soft, domain) in rows {
                let s = SemanticFeatures { wheel_count: times.len(), wheel_times_s: times, deformations: vec![], context_load: Some(15.0), context_speed: Some(61.5) };
                let mut v = fuse(strategy, None, &s, &cfg).unwrap();
                v.label = label;
                v.soft_label = soft;
                v.domain_id = domain;
                ds.push(v).unwrap();
            }
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("x.csv");
            ds.write(&path).unwrap();
            prop_assert_eq!(Dataset::read(&path).unwrap(), ds);
        }
    }
}
