//! `fobprint` command-line runner.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use fobprint::detector::{DetectorConfig, DetectorModel, ScorerKind, System, Verdict};
use fobprint::harness::{bench_capture, rank_features, run_experiment, ExperimentConfig, Preset};
use fobprint::io::{load_dataset, read_capture, write_dataset, DatasetReader};
use fobprint::rng::substream;
use fobprint::synth::{generate_dataset, Label, ScenarioConfig, DEFAULT_PREAMBLE};
use fobprint::{FeatureExtractor, FeatureVector, IqBuffer, ModulationKind, ModulationScheme};

#[derive(Parser)]
#[command(
    name = "fobprint",
    version,
    about = "Key-fob RF fingerprinting: synthesize captures, train detectors, run experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize a labeled dataset (captures plus manifest).
    Synth(SynthArgs),
    /// Train a detector on the legitimate captures of a dataset.
    Train(TrainArgs),
    /// Score captures against a trained model.
    Detect(DetectArgs),
    /// Run a named scenario end to end and report FPR/FNR.
    Experiment(ExperimentArgs),
    /// Rank features of a labeled dataset with ReliefF.
    RankFeatures(RankArgs),
    /// Time each stage of the detection path on one capture.
    Bench(BenchArgs),
}

#[derive(Args)]
struct Common {
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct SynthArgs {
    /// Scenario config (JSON). Without it: 100 legitimate captures.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value = "fsk")]
    modulation: String,
    /// Add a preset attack partition; repeatable.
    #[arg(long = "preset")]
    presets: Vec<Preset>,
    /// Captures per added preset, and legitimate captures without --config.
    #[arg(long, default_value_t = 100)]
    count: usize,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct TrainArgs {
    /// Dataset manifest.
    dataset: PathBuf,
    #[arg(long, default_value = "knn")]
    scorer: ScorerKind,
    #[arg(long, default_value = "pkes")]
    system: System,
    /// Where to write the model.
    #[arg(long)]
    model: PathBuf,
    /// Override the default threshold.
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct DetectArgs {
    #[arg(long)]
    model: PathBuf,
    /// Capture files (`.cf32`). An RKE model treats them as one request.
    captures: Vec<PathBuf>,
    /// Score every entry of a dataset manifest instead.
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Write a machine-readable report here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ExperimentArgs {
    /// Experiment config (JSON).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Preset to run when no config is given.
    #[arg(long)]
    preset: Option<Preset>,
    #[arg(long)]
    scorer: Option<ScorerKind>,
    #[arg(long)]
    system: Option<System>,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct RankArgs {
    /// Dataset manifest with at least two labels.
    dataset: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    /// Capture to time; a synthetic legitimate capture if absent.
    #[arg(long)]
    capture: Option<PathBuf>,
    #[arg(long, default_value_t = 20)]
    repetitions: usize,
    #[arg(long, default_value = "knn")]
    scorer: ScorerKind,
    #[command(flatten)]
    common: Common,
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synth(a) => synth(a),
        Command::Train(a) => train(a),
        Command::Detect(a) => detect(a),
        Command::Experiment(a) => experiment(a),
        Command::RankFeatures(a) => rank(a),
        Command::Bench(a) => bench(a),
    };
    if let Err(e) = result {
        // Library errors already embed their source text; skip repeats.
        let mut msg = e.to_string();
        for cause in e.chain().skip(1) {
            let c = cause.to_string();
            if !msg.contains(&c) {
                msg = format!("{msg}: {c}");
            }
        }
        eprintln!("error: {msg}");
        std::process::exit(1);
    }
}

fn out_dir(out: &Option<PathBuf>) -> Result<Option<&Path>> {
    if let Some(d) = out {
        fs::create_dir_all(d).with_context(|| format!("creating {}", d.display()))?;
    }
    Ok(out.as_deref())
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn synth(a: SynthArgs) -> Result<()> {
    let mut cfg = match &a.config {
        Some(p) => ScenarioConfig::from_json(
            &fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?,
        )?,
        None => ScenarioConfig::new(a.modulation.parse::<ModulationKind>()?, 0, a.count),
    };
    if let Some(s) = a.common.seed {
        cfg.seed = s;
    }
    let modulation = cfg.modulation();
    for p in &a.presets {
        cfg.scenarios
            .push(p.scenario(&cfg.legit_device, &modulation, a.count));
    }
    cfg.validate()?;
    let Some(out) = out_dir(&a.common.out)? else {
        bail!("synth needs --out <dir>")
    };
    let t = Instant::now();
    let ds = generate_dataset(&cfg)?;
    let manifest = write_dataset(&ds, out)?;
    write(&out.join("scenario.json"), &cfg.to_json())?;
    let c = ds.counts();
    println!(
        "{} legitimate + {} attack captures -> {} ({:.1} s)",
        c.legit,
        c.attack,
        manifest.display(),
        t.elapsed().as_secs_f64()
    );
    Ok(())
}

/// Loads every capture of `reader` and extracts its features.
fn dataset_features(
    reader: &DatasetReader,
) -> Result<Vec<(String, Label, fobprint::Result<FeatureVector>)>> {
    let modulation = reader
        .modulation()?
        .unwrap_or_else(ModulationScheme::fsk_default);
    let fx = FeatureExtractor::new(modulation, reader.receiver())?;
    let loaded = reader.iter().collect::<fobprint::Result<Vec<_>>>()?;
    let refs: Vec<&IqBuffer> = loaded.iter().map(|c| &c.iq).collect();
    let feats = fx.extract_batch(&refs);
    Ok(loaded
        .into_iter()
        .zip(feats)
        .map(|(c, f)| (c.entry.path, c.entry.label, f))
        .collect())
}

fn train(a: TrainArgs) -> Result<()> {
    let reader = load_dataset(&a.dataset)?;
    if let Some(e) = reader.manifest.entries.iter().find(|e| e.label.is_attack()) {
        bail!(
            "refusing to train: {} is labeled {}; training takes legitimate captures only",
            e.path,
            e.label
        );
    }
    let feats = dataset_features(&reader)?;
    let mut train = Vec::new();
    for (path, _, f) in feats {
        match f {
            Ok(v) => train.push(v),
            Err(e) => log::warn!("skipping {path}: {e}"),
        }
    }
    if train.len() < 10 {
        bail!(
            "need at least 10 usable legitimate captures, got {}",
            train.len()
        );
    }
    let mut cfg = DetectorConfig::new(a.scorer, a.system);
    cfg.threshold_gamma = a.gamma;
    let model = DetectorModel::train(&train, &cfg, &mut substream(a.seed, "npc", 0))?;
    model.save(&a.model)?;
    println!(
        "trained {} {} on {} captures: NPC mu={:.6e} sigma={:.6e}, threshold {} -> {}",
        a.system,
        a.scorer,
        train.len(),
        model.norm.mu,
        model.norm.sigma,
        model.threshold_gamma,
        a.model.display()
    );
    Ok(())
}

#[derive(serde::Serialize)]
struct DetectLine {
    request: Vec<String>,
    verdict: Verdict,
}

fn detect(a: DetectArgs) -> Result<()> {
    let model = DetectorModel::load(&a.model)?;
    let modulation = ModulationScheme::default_for(model.modulation);
    let mut requests: Vec<(Vec<String>, Vec<IqBuffer>)> = Vec::new();
    let mut receiver = fobprint::dsp::ReceiverConfig::default();
    if let Some(m) = &a.dataset {
        let reader = load_dataset(m)?;
        receiver = reader.receiver();
        for c in reader.iter() {
            let c = c?;
            requests.push((vec![c.entry.path], vec![c.iq]));
        }
    } else {
        if a.captures.is_empty() {
            bail!("no captures given");
        }
        let mut names = Vec::new();
        let mut bufs = Vec::new();
        for p in &a.captures {
            let (iq, _) = read_capture(p)?;
            names.push(p.display().to_string());
            bufs.push(iq);
        }
        match model.system {
            System::Rke => requests.push((names, bufs)),
            System::Pkes => {
                requests.extend(names.into_iter().zip(bufs).map(|(n, b)| (vec![n], vec![b])))
            }
        }
    }
    if model.system == System::Rke && a.dataset.is_some() {
        bail!("RKE detection takes a list of captures forming one request, not a dataset");
    }
    let fx =
        FeatureExtractor::new(modulation, receiver)?.with_preamble_bits(DEFAULT_PREAMBLE.len());
    let mut lines = Vec::new();
    for (names, bufs) in requests {
        let feats = bufs
            .iter()
            .map(|b| fx.extract(b))
            .collect::<fobprint::Result<Vec<_>>>()?;
        let verdict = match model.system {
            System::Pkes => model.detect_pkes(&feats[0])?,
            System::Rke => model.detect_rke(&feats)?,
        };
        println!(
            "{}: {:?} z={:.3}",
            names.join(","),
            verdict.decision,
            verdict.z_score
        );
        lines.push(DetectLine {
            request: names,
            verdict,
        });
    }
    if let Some(out) = out_dir(&a.out)? {
        write(
            &out.join("detect.json"),
            &serde_json::to_string_pretty(&lines)?,
        )?;
    }
    Ok(())
}

fn experiment(a: ExperimentArgs) -> Result<()> {
    let mut cfg = match (&a.config, a.preset) {
        (Some(p), _) => ExperimentConfig::from_json(
            &fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?,
        )?,
        (None, Some(preset)) => ExperimentConfig::new(&[preset], 0),
        (None, None) => bail!("experiment needs --config <path> or --preset <name>"),
    };
    if let Some(s) = a.common.seed {
        cfg.seed = s;
    }
    if let Some(s) = a.scorer {
        cfg.scorer = s;
    }
    if let Some(s) = a.system {
        cfg.system = s;
    }
    cfg.validate()?;
    let t = Instant::now();
    let reports = run_experiment(&cfg)?;
    let wall = t.elapsed().as_secs_f64();
    for r in &reports {
        print!("{}", r.summary());
    }
    println!("wall time {wall:.1} s");
    if let Some(out) = out_dir(&a.common.out)? {
        let json = if reports.len() == 1 {
            reports[0].to_json()
        } else {
            serde_json::to_string_pretty(&reports)?
        };
        write(&out.join("report.json"), &json)?;
        let mut csv = String::new();
        for (i, r) in reports.iter().enumerate() {
            let body = r.to_csv();
            csv += if i == 0 {
                &body
            } else {
                body.split_once('\n').map(|x| x.1).unwrap_or("")
            };
        }
        write(&out.join("scores.csv"), &csv)?;
        // Wall time is kept out of report.json so reruns compare byte for byte.
        write(
            &out.join("timing.json"),
            &serde_json::json!({ "wall_time_s": wall }).to_string(),
        )?;
    }
    Ok(())
}

fn rank(a: RankArgs) -> Result<()> {
    let reader = load_dataset(&a.dataset)?;
    let feats = dataset_features(&reader)?;
    let mut vectors = Vec::new();
    let mut labels = Vec::new();
    for (path, label, f) in feats {
        match f {
            Ok(v) => {
                vectors.push(v);
                labels.push(label);
            }
            Err(e) => log::warn!("skipping {path}: {e}"),
        }
    }
    let ranking = rank_features(&vectors, &labels)?;
    for (i, f) in ranking.features.iter().enumerate() {
        println!("{:>2}. {:<20} {:.6}", i + 1, f.name, f.weight);
    }
    if let Some(out) = out_dir(&a.out)? {
        write(
            &out.join("ranking.json"),
            &serde_json::to_string_pretty(&ranking)?,
        )?;
    }
    Ok(())
}

fn bench(a: BenchArgs) -> Result<()> {
    let seed = a.common.seed.unwrap_or(0);
    let modulation = ModulationScheme::fsk_default();
    let cfg = ScenarioConfig::new(ModulationKind::Fsk, seed, 21);
    let ds = generate_dataset(&cfg)?;
    let fx = FeatureExtractor::new(modulation, cfg.receiver)?;
    let train = ds.captures[1..]
        .iter()
        .map(|c| fx.extract(&c.iq))
        .collect::<fobprint::Result<Vec<_>>>()?;
    let model = DetectorModel::train(
        &train,
        &DetectorConfig::new(a.scorer, System::Pkes),
        &mut substream(seed, "npc", 0),
    )?;
    let capture = match &a.capture {
        Some(p) => read_capture(p)?.0,
        None => ds.captures[0].iq.clone(),
    };
    let report = bench_capture(&capture, &fx, &model, DEFAULT_PREAMBLE.len(), a.repetitions)?;
    print!("{}", report.summary());
    if let Some(out) = out_dir(&a.common.out)? {
        write(
            &out.join("bench.json"),
            &serde_json::to_string_pretty(&report)?,
        )?;
    }
    Ok(())
}
