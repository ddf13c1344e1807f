//! `wayside`: synthesize passages, run the detection and continual-learning
//! pipelines, and reproduce the experiment grids.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use wayside_core::clf::{evaluate, random_search, train_gbdt, GbdtConfig, GbdtModel};
use wayside_core::embed::Vae;
use wayside_core::experiment::{
    analyse, block_table, run_all, run_cl_grid, synthesize_population, ExperimentConfig, ResultBundle,
    StatsResults,
};
use wayside_core::fuse::{accel_windows, build_dataset, Dataset, FusionStrategy};
use wayside_core::peaks::{extract_semantics, Detector};
use wayside_core::replay::{ReplayStrategy, ScenarioId};
use wayside_core::rng::derive;
use wayside_core::synth::io::{parse_passage_config, read_batch, read_waveform_csv, write_batch};
use wayside_core::synth::{synthesize_with, SamplingSpec};
use wayside_core::VaeConfig;

#[derive(Parser)]
#[command(name = "wayside", version, about = "Wayside wheel-fault monitoring experiments")]
struct Cli {
    /// Experiment configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed; overrides the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output location; overrides the configuration.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize a batch of passages.
    Synth(SynthArgs),
    /// Detect axles in one waveform file.
    Peaks(PeaksArgs),
    /// Train or apply the encoder.
    #[command(subcommand)]
    Embed(EmbedCmd),
    /// Build datasets, train, evaluate and tune classifiers.
    #[command(subcommand)]
    Clf(ClfCmd),
    /// Continual-learning streams.
    #[command(subcommand)]
    Cl(ClCmd),
    /// Significance tests over a results CSV.
    Stats(StatsArgs),
    /// Rebuild the report of a finished run.
    Report(ReportArgs),
    /// Every experiment grid, the report and the manifest.
    RunAll,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 20)]
    passages: usize,
    #[arg(long)]
    anomaly_share: Option<f64>,
    /// Single-passage TOML instead of a sampled batch.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long)]
    noise_free: bool,
}

#[derive(Args)]
struct PeaksArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value = "sd")]
    algo: Detector,
    #[arg(long, default_value_t = 0.5)]
    sensitivity: f64,
}

#[derive(Subcommand)]
enum EmbedCmd {
    Train {
        /// Passage batch directory.
        #[arg(long)]
        windows: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        epochs: Option<usize>,
    },
    Apply {
        #[arg(long)]
        windows: PathBuf,
        #[arg(long)]
        model: PathBuf,
    },
}

#[derive(Subcommand)]
enum ClfCmd {
    /// Fuse a passage batch into a dataset.
    Build {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value = "I-WD")]
        strategy: FusionStrategy,
        #[arg(long, default_value = "sd")]
        algo: Detector,
        #[arg(long, default_value_t = 0.5)]
        sensitivity: f64,
        /// Encoder, required by embedding strategies.
        #[arg(long)]
        model: Option<PathBuf>,
    },
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        model: PathBuf,
        /// Hyperparameters as JSON, e.g. the `best` entry of a tuning run.
        #[arg(long)]
        params: Option<PathBuf>,
    },
    Eval {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        model: PathBuf,
    },
    Tune {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        trials: Option<usize>,
        #[arg(long)]
        folds: Option<usize>,
    },
}

#[derive(Subcommand)]
enum ClCmd {
    Run {
        #[arg(long, value_delimiter = ',')]
        strategy: Vec<ReplayStrategy>,
        #[arg(long, value_delimiter = ',')]
        memory: Vec<usize>,
        #[arg(long)]
        beta: Option<f64>,
        /// Number of seed slots.
        #[arg(long)]
        seeds: Option<usize>,
        #[arg(long, value_delimiter = ',')]
        scenario_order: Vec<ScenarioId>,
    },
}

#[derive(Args)]
struct StatsArgs {
    #[arg(value_parser = ["friedman", "shaffer"])]
    test: String,
    #[arg(long)]
    input: PathBuf,
    /// Columns whose values together identify a block.
    #[arg(long, value_delimiter = ',', default_value = "detector,seed")]
    block: Vec<String>,
    #[arg(long, default_value = "strategy")]
    treatment: String,
    #[arg(long, default_value = "accuracy")]
    score: String,
}

#[derive(Args)]
struct ReportArgs {
    /// Run directory holding `results.json`.
    #[arg(long)]
    input: PathBuf,
}

/// Raised for unusable configuration; maps to exit code 2.
#[derive(Debug)]
struct ConfigError(String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

fn config_err(msg: impl Into<String>) -> anyhow::Error {
    ConfigError(msg.into()).into()
}

fn load_config(cli: &Cli) -> anyhow::Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| config_err(format!("{}: {e}", p.display())))?;
            ExperimentConfig::from_toml(&text).map_err(|e| config_err(format!("{}: {e}", p.display())))?
        }
        None => ExperimentConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.master_seed = s;
    }
    if let Some(o) = &cli.out {
        cfg.output_dir = o.clone();
    }
    Ok(cfg)
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> anyhow::Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    fs::write(path, serde_json::to_string_pretty(value)?).with_context(|| format!("writing {}", path.display()))
}

fn open_vae(path: &Path) -> anyhow::Result<Vae> {
    let f = fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    Ok(Vae::load(std::io::BufReader::new(f))?)
}

fn run(cli: Cli) -> anyhow::Result<()> {
    if let Some(j) = cli.jobs {
        if j == 0 {
            return Err(config_err("--jobs must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new().num_threads(j).build_global().ok();
    }
    let mut cfg = load_config(&cli)?;
    let out = cfg.output_dir.clone();
    match cli.command {
        Command::Synth(a) => {
            let recs = match &a.spec {
                Some(p) => {
                    let text = fs::read_to_string(p).map_err(|e| config_err(format!("{}: {e}", p.display())))?;
                    let mut spec = parse_passage_config(&text).map_err(|e| config_err(e.to_string()))?;
                    if a.noise_free {
                        spec = spec.noise_free();
                    }
                    vec![synthesize_with(&spec, &cfg.synth.model)?]
                }
                None => {
                    let mut sampling: SamplingSpec = cfg.synth.sampling.clone();
                    if let Some(s) = a.anomaly_share {
                        sampling.anomaly_share = s;
                    }
                    if a.noise_free {
                        sampling.snr_db = None;
                    }
                    sampling.validate().map_err(|e| config_err(e.to_string()))?;
                    synthesize_population(&sampling, &cfg.synth.model, a.passages, derive(cfg.master_seed, "cli-synth", 0))?
                }
            };
            let files = write_batch(&out, &recs)?;
            println!("wrote {} passages to {}", recs.len(), out.display());
            eprintln!("{} files", files.len());
        }
        Command::Peaks(a) => {
            let wf = read_waveform_csv(&a.input)?;
            let fs_hz = wf.sample_rate_hz()?;
            let peaks = a.algo.detect_strain(&wf.strain, fs_hz, a.sensitivity, &cfg.peaks.config)?;
            let sem = extract_semantics(&peaks, fs_hz);
            let doc = serde_json::json!({
                "algorithm": a.algo,
                "sensitivity": a.sensitivity,
                "indices": peaks.indices,
                "amplitudes": peaks.amplitudes,
                "z": sem.wheel_count,
                "x": sem.wheel_times_s,
                "y": sem.deformations,
            });
            let path = if out.extension().is_some() { out } else { out.join("peaks.json") };
            write_json(&path, &doc)?;
            println!("{} peaks -> {}", sem.wheel_count, path.display());
        }
        Command::Embed(EmbedCmd::Train { windows, model, epochs }) => {
            let recs = read_batch(&windows)?;
            let w = accel_windows(&recs, cfg.fuse.window_len)?;
            let vcfg = VaeConfig {
                epochs: epochs.unwrap_or(cfg.embed.vae.epochs),
                seed: derive(cfg.master_seed, "cli-vae", 0),
                ..cfg.embed.vae.clone()
            };
            vcfg.validate().map_err(|e| config_err(e.to_string()))?;
            let vae = Vae::train(vcfg, &w)?;
            if let Some(parent) = model.parent().filter(|p| !p.as_os_str().is_empty()) {
                fs::create_dir_all(parent)?;
            }
            vae.save(std::io::BufWriter::new(fs::File::create(&model)?))?;
            let (first, last) = (&vae.history[0], vae.history.last().expect("history has the untrained epoch"));
            println!("validation loss {:.3} -> {:.3}; model {}", first.validation, last.validation, model.display());
        }
        Command::Embed(EmbedCmd::Apply { windows, model }) => {
            let vae = open_vae(&model)?;
            let recs = read_batch(&windows)?;
            let emb = vae.encode_batch(&accel_windows(&recs, vae.config.input_dim)?)?;
            let dim = emb.first().map_or(0, |e| e.dim());
            let mut text = String::from("passage");
            for i in 0..dim {
                text.push_str(&format!(",mu_{i}"));
            }
            for i in 0..dim {
                text.push_str(&format!(",logvar_{i}"));
            }
            text.push('\n');
            for (i, e) in emb.iter().enumerate() {
                text.push_str(&i.to_string());
                for v in e.fused_view() {
                    text.push_str(&format!(",{v}"));
                }
                text.push('\n');
            }
            let path = if out.extension().is_some() { out } else { out.join("embeddings.csv") };
            if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
                fs::create_dir_all(parent)?;
            }
            fs::write(&path, text)?;
            println!("{} embeddings -> {}", emb.len(), path.display());
        }
        Command::Clf(cmd) => clf(cmd, &cfg, out)?,
        Command::Cl(ClCmd::Run { strategy, memory, beta, seeds, scenario_order }) => {
            if !strategy.is_empty() {
                cfg.replay.strategies = strategy;
            }
            if !memory.is_empty() {
                cfg.replay.memories = memory;
            }
            if let Some(b) = beta {
                cfg.replay.beta = b;
            }
            if let Some(s) = seeds {
                cfg.seeds = s;
            }
            if !scenario_order.is_empty() {
                cfg.replay.scenario_order = scenario_order;
            }
            cfg.validate().map_err(|e| config_err(e.to_string()))?;
            let cl = run_cl_grid(&cfg)?;
            let keyed: std::collections::BTreeMap<String, _> =
                cl.metrics.iter().map(|r| (format!("{}/{}/{}", r.strategy.name(), r.memory, r.seed), r.clone())).collect();
            fs::create_dir_all(&out)?;
            write_json(&out.join("cl_metrics.json"), &keyed)?;
            let bundle = ResultBundle { cl: Some(cl), ..Default::default() };
            bundle.emit(&out)?;
            bundle.write(&out)?;
            println!("{} streams -> {}", keyed.len(), out.display());
        }
        Command::Stats(a) => stats(a, &cfg, out)?,
        Command::Report(a) => {
            let bundle = ResultBundle::read(&a.input)?;
            let target = cli.out.unwrap_or(a.input);
            let files = bundle.emit(&target)?;
            println!("report -> {}", files.last().expect("report is always written").display());
        }
        Command::RunAll => {
            let start = std::time::Instant::now();
            let r = run_all(&cfg)?;
            for f in &r.manifest.failures {
                eprintln!("cell failed: {f}");
            }
            println!(
                "{} AD cells, {} CL streams, {} files in {:.1} s -> {}",
                r.ad.cells.len(),
                r.cl.metrics.len(),
                r.manifest.files.len(),
                start.elapsed().as_secs_f64(),
                out.display()
            );
        }
    }
    Ok(())
}

fn clf(cmd: ClfCmd, cfg: &ExperimentConfig, out: PathBuf) -> anyhow::Result<()> {
    match cmd {
        ClfCmd::Build { input, strategy, algo, sensitivity, model } => {
            let recs = read_batch(&input)?;
            let vae = match (&model, strategy.uses_embedding()) {
                (Some(p), true) => Some(open_vae(p)?),
                (None, true) => {
                    let vcfg = VaeConfig { seed: derive(cfg.master_seed, "cli-vae", 0), ..cfg.embed.vae.clone() };
                    Some(Vae::train(vcfg, &accel_windows(&recs, cfg.fuse.window_len)?)?)
                }
                _ => None,
            };
            let ds = build_dataset(&recs, strategy, algo, sensitivity, vae.as_ref(), &cfg.peaks.config, &cfg.fuse)?;
            let path = if out.extension().is_some() { out } else { out.join("dataset.csv") };
            if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
                fs::create_dir_all(parent)?;
            }
            ds.write(&path)?;
            println!("{} rows ({} flagged) -> {}", ds.len(), ds.meta.flagged, path.display());
        }
        ClfCmd::Train { data, model, params } => {
            let ds = Dataset::read(&data)?;
            let gcfg: GbdtConfig = match params {
                Some(p) => serde_json::from_str(&fs::read_to_string(&p)?).map_err(|e| config_err(format!("{}: {e}", p.display())))?,
                None => cfg.clf.base.clone(),
            };
            gcfg.validate().map_err(|e| config_err(e.to_string()))?;
            let m = train_gbdt(&ds.matrix(), &ds.targets(), None, &gcfg)?;
            if let Some(parent) = model.parent().filter(|p| !p.as_os_str().is_empty()) {
                fs::create_dir_all(parent)?;
            }
            fs::write(&model, m.to_json()?)?;
            println!("{} trees -> {}", m.trees.len(), model.display());
        }
        ClfCmd::Eval { data, model } => {
            let ds = Dataset::read(&data)?;
            let m = GbdtModel::from_json(&fs::read_to_string(&model)?)?;
            let metrics = evaluate(&m, &ds.matrix(), &ds.labels())?;
            println!("{}", serde_json::to_string_pretty(&metrics)?);
        }
        ClfCmd::Tune { data, trials, folds } => {
            let ds = Dataset::read(&data)?;
            let r = random_search(
                &ds.matrix(),
                &ds.labels(),
                trials.unwrap_or(cfg.clf.n_trials),
                folds.unwrap_or(cfg.clf.folds),
                derive(cfg.master_seed, "cli-tune", 0),
                &cfg.clf.space,
            )?;
            let path = if out.extension().is_some() { out } else { out.join("tuning.json") };
            write_json(&path, &r)?;
            println!("best accuracy {:.4} (trial {}) -> {}", r.best_score, r.best_index, path.display());
        }
    }
    Ok(())
}

fn stats(a: StatsArgs, cfg: &ExperimentConfig, out: PathBuf) -> anyhow::Result<()> {
    let mut rdr = csv::Reader::from_path(&a.input).with_context(|| format!("reading {}", a.input.display()))?;
    let headers = rdr.headers()?.clone();
    let col = |name: &str| {
        headers.iter().position(|h| h == name).ok_or_else(|| config_err(format!("column `{name}` not in {}", a.input.display())))
    };
    let blocks: Vec<usize> = a.block.iter().map(|b| col(b)).collect::<anyhow::Result<_>>()?;
    let (ti, si) = (col(&a.treatment)?, col(&a.score)?);
    let mut triples = Vec::new();
    for row in rdr.records() {
        let row = row?;
        let Ok(score) = row[si].parse::<f64>() else { continue };
        let block = blocks.iter().map(|&i| &row[i]).collect::<Vec<_>>().join("/");
        triples.push((block, row[ti].to_string(), score));
    }
    if triples.is_empty() {
        bail!("no scored rows in {}", a.input.display());
    }
    let table = block_table(&triples)?;
    let mut res = StatsResults::default();
    analyse(&a.test, &table, cfg.stats.alpha, &mut res);
    if a.test == "shaffer" && res.shaffer.is_empty() {
        // The post-hoc step runs only after a rejection; report it anyway.
        let pairs = wayside_core::stats::shaffer_posthoc(&table)?;
        res.shaffer = pairs
            .into_iter()
            .map(|p| wayside_core::experiment::ShafferRow {
                analysis: a.test.clone(),
                a: table.treatments[p.a].clone(),
                b: table.treatments[p.b].clone(),
                z: p.z,
                p_raw: p.p_raw,
                p_adjusted: p.p_adjusted,
                significant: p.p_adjusted < cfg.stats.alpha,
            })
            .collect();
    }
    fs::create_dir_all(&out)?;
    let (name, bytes) = if a.test == "friedman" {
        ("friedman.csv", wayside_core::experiment::csv_bytes(&res.friedman, &[])?)
    } else {
        ("shaffer.csv", wayside_core::experiment::csv_bytes(&res.shaffer, &["analysis", "a", "b", "z", "p_raw", "p_adjusted", "significant"])?)
    };
    fs::write(out.join(name), &bytes)?;
    print!("{}", String::from_utf8_lossy(&bytes));
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let config = e.downcast_ref::<ConfigError>().is_some()
                || matches!(e.downcast_ref::<wayside_core::Error>(), Some(wayside_core::Error::Config(_)));
            ExitCode::from(if config { 2 } else { 3 })
        }
    }
}
