//! End-to-end runs of the pipeline at toy scale.

use wayside_core::clf::{evaluate, train_gbdt};
use wayside_core::experiment::{run_all, synthesize_population, ExperimentConfig, ResultBundle, RESULTS_FILE};
use wayside_core::fuse::{accel_windows, build_dataset, Dataset, FuseConfig, FusionStrategy, StrategyCode};
use wayside_core::peaks::{Detector, PeakConfig};
use wayside_core::replay::{run_domain_stream, DomainScenario, ReplayStrategy, ScenarioId, StreamConfig};
use wayside_core::synth::{SamplingSpec, SurrogateModel};
use wayside_core::{GbdtConfig, Vae, VaeConfig};

const TINY: &str = r#"
master_seed = 11
seeds = 1

[synth]
ad_passages = 40
domain_passages = 30

[peaks]
detectors = ["sd"]
sensitivity_grid = [0.5, 0.9]
sweep_folds = 2

[embed.vae]
hidden = [16]
latent_dim = 4
epochs = 3

[clf]
n_trials = 2
folds = 2

[clf.base]
n_estimators = 50

[replay]
strategies = ["baseline", "rs", "plb"]
memories = [20]
"#;

fn tiny(dir: &std::path::Path) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::from_toml(TINY).unwrap();
    cfg.output_dir = dir.to_path_buf();
    cfg
}

#[test]
fn synthesized_batch_trains_a_useful_classifier() {
    let recs = synthesize_population(&SamplingSpec::default(), &SurrogateModel::default(), 80, 5).unwrap();
    let cfg = FuseConfig::default();
    let strategy = FusionStrategy::new(StrategyCode::IWd, true);
    let ds = build_dataset(&recs, strategy, Detector::Sd, 0.5, None, &PeakConfig::default(), &cfg).unwrap();
    assert_eq!(ds.len(), 80);
    let (x, y) = (ds.matrix(), ds.labels());
    let model = train_gbdt(&x, &y, None, &GbdtConfig::default()).unwrap();
    assert!(evaluate(&model, &x, &y).unwrap().accuracy > 0.9);
}

#[test]
fn embedding_strategy_round_trips_through_files() {
    let recs = synthesize_population(&SamplingSpec::default(), &SurrogateModel::default(), 24, 6).unwrap();
    let cfg = FuseConfig::default();
    let windows = accel_windows(&recs, cfg.window_len).unwrap();
    let vae = Vae::train(VaeConfig { hidden: vec![8], latent_dim: 3, epochs: 2, ..VaeConfig::default() }, &windows).unwrap();
    let strategy = FusionStrategy::new(StrategyCode::SWd, false);
    let ds = build_dataset(&recs, strategy, Detector::Tb, 0.8, Some(&vae), &PeakConfig::default(), &cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ds.csv");
    ds.write(&path).unwrap();
    assert_eq!(Dataset::read(&path).unwrap(), ds);
}

#[test]
fn scenario_stream_fills_every_matrix_row() {
    let model = SurrogateModel::default();
    let vae = None::<&Vae>;
    let domains: Vec<Dataset> = DomainScenario::sequence(&ScenarioId::ALL[..3])
        .iter()
        .map(|sc| {
            let recs = synthesize_population(&sc.sampling, &model, 40, sc.order_index as u64).unwrap();
            build_dataset(&recs, FusionStrategy::new(StrategyCode::IWd, false), Detector::Sd, 0.5, vae, &PeakConfig::default(), &FuseConfig::default())
                .unwrap()
        })
        .collect();
    let cfg = StreamConfig { capacity: 16, gbdt: GbdtConfig { n_estimators: 20, ..GbdtConfig::default() }, ..StreamConfig::default() };
    for strategy in ReplayStrategy::GRID {
        let r = run_domain_stream(&domains, strategy, &cfg).unwrap();
        assert_eq!(r.matrix.r.len(), 4);
        assert!(r.buffer_sizes.iter().all(|&s| s <= 16));
        assert!(r.metrics.kgr.is_finite());
    }
}

#[test]
fn run_all_is_reproducible_and_reloadable() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let first = run_all(&tiny(a.path())).unwrap();
    run_all(&tiny(b.path())).unwrap();
    assert!(first.manifest.failures.is_empty(), "{:?}", first.manifest.failures);
    assert_eq!(first.cl.metrics.len(), 3);
    for entry in &first.manifest.files {
        if entry.path.ends_with(".csv") {
            let pa = std::fs::read(a.path().join(&entry.path)).unwrap();
            let pb = std::fs::read(b.path().join(&entry.path)).unwrap();
            assert_eq!(pa, pb, "{}", entry.path);
        }
    }
    let bundle = ResultBundle::read(a.path()).unwrap();
    assert!(a.path().join(RESULTS_FILE).exists());
    let c = tempfile::tempdir().unwrap();
    bundle.emit(c.path()).unwrap();
    for name in ["ad_grid.csv", "cl_table.csv", "stats_friedman.csv"] {
        assert_eq!(std::fs::read(a.path().join(name)).unwrap(), std::fs::read(c.path().join(name)).unwrap(), "{name}");
    }
}
