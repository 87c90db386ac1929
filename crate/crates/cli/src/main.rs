//! `ueeg`: synthesize data, train, evaluate, encode, gradient-check and
//! benchmark the EEG encoders.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use ueeg::arch::{Arch, Checkpoint};
use ueeg::data::{Difficulty, EegDataset, SynthSpec};
use ueeg::harness::gradcheck::{layer_checks, model_check, LAYER_TOL, MODEL_TOL};
use ueeg::harness::{
    bench, encode_dataset, evaluate, train, DataSource, HarnessError, OptimizerName, SplitName,
    SuiteConfig, TrainConfig, CHECKPOINT_FILE,
};
use ueeg::metrics::{reports_to_csv, F1Average, MetricsReport};

/// Canonical JSON of the run configuration, written next to the checkpoint.
const CONFIG_FILE: &str = "config.json";

#[derive(Debug, Parser)]
#[command(name = "ueeg", version, about = "Universal EEG encoder toolkit")]
struct Cli {
    /// Log progress (repeat for debug output).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic dataset container, or convert a CSV export.
    Synth(SynthArgs),
    /// Train an encoder and keep the best-by-validation checkpoint.
    Train(TrainArgs),
    /// Score a checkpoint on one split.
    Eval(EvalArgs),
    /// Export embeddings of every record as a container.
    Encode(EncodeArgs),
    /// Compare analytic gradients with central differences.
    Gradcheck(GradcheckArgs),
    /// Train and test a grid of (architecture, dataset) cells.
    Bench(BenchArgs),
}

#[derive(Debug, Args)]
struct DataArgs {
    /// Dataset container, or a CSV export when the extension is `.csv`.
    #[arg(long, conflicts_with = "preset")]
    data: Option<PathBuf>,
    /// Synthetic preset (BMNIST, BMNIST_2, SEED, ERN, SMR, ThoughtViz, ThoughtViz-small).
    #[arg(long)]
    preset: Option<String>,
    /// Generator seed of the preset.
    #[arg(long, default_value_t = 0)]
    data_seed: u64,
    /// Preset nuisance level: none, easy, mid, hard or a non-negative number.
    #[arg(long, default_value = "mid")]
    difficulty: Difficulty,
    /// Overrides the preset's record count.
    #[arg(long)]
    records: Option<usize>,
}

impl DataArgs {
    fn given(&self) -> bool {
        self.data.is_some() || self.preset.is_some()
    }

    fn source(&self) -> Result<DataSource, Failure> {
        if let Some(path) = &self.data {
            return Ok(source_for_path(path));
        }
        let name = self
            .preset
            .as_deref()
            .ok_or_else(|| Failure::Usage("one of --data or --preset is required".into()))?;
        let mut spec = SynthSpec::preset(name, self.data_seed).map_err(HarnessError::from)?;
        spec.difficulty = self.difficulty;
        if let Some(n) = self.records {
            spec.num_records = n;
        }
        Ok(DataSource::Synth(spec))
    }
}

fn source_for_path(path: &Path) -> DataSource {
    let is_csv = path
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("csv"));
    if is_csv {
        DataSource::Csv { path: path.into() }
    } else {
        DataSource::Container { path: path.into() }
    }
}

#[derive(Debug, Args)]
struct SynthArgs {
    /// Start from a preset; the geometry flags below override it.
    #[arg(long)]
    preset: Option<String>,
    /// Dataset name written to the manifest.
    #[arg(long)]
    name: Option<String>,
    #[arg(long)]
    channels: Option<usize>,
    #[arg(long)]
    timesteps: Option<usize>,
    #[arg(long)]
    classes: Option<usize>,
    #[arg(long)]
    records: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "mid")]
    difficulty: Difficulty,
    /// Convert this CSV export instead of generating data.
    #[arg(long, conflicts_with_all = ["preset", "channels", "timesteps", "classes", "records"])]
    import: Option<PathBuf>,
    /// Write the CSV export format instead of a container.
    #[arg(long)]
    csv: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// Canonical JSON run configuration; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    arch: Option<Arch>,
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    optimizer: Option<OptimizerName>,
    #[arg(long)]
    seed: Option<u64>,
    /// Directory for the checkpoint, history and configuration.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum F1Flag {
    Macro,
    Weighted,
}

impl From<F1Flag> for F1Average {
    fn from(f: F1Flag) -> Self {
        match f {
            F1Flag::Macro => F1Average::Macro,
            F1Flag::Weighted => F1Average::Weighted,
        }
    }
}

#[derive(Debug, Args)]
struct EvalArgs {
    /// Checkpoint file, or a training output directory.
    #[arg(long)]
    checkpoint: PathBuf,
    #[command(flatten)]
    data: DataArgs,
    /// train, val or test.
    #[arg(long, default_value = "test")]
    split: SplitName,
    #[arg(long, value_enum, default_value = "macro")]
    f1: F1Flag,
    /// Also write the report CSV here.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EncodeArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[command(flatten)]
    data: DataArgs,
    /// Output embeddings container.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct GradcheckArgs {
    /// Architecture to check; all of them when omitted.
    #[arg(long)]
    arch: Option<Arch>,
    /// `tiny` (3,16,2) or `C,T,K`.
    #[arg(long, default_value = "tiny", value_parser = parse_geometry)]
    geometry: (usize, usize, usize),
    /// Number of seeds, starting at 0.
    #[arg(long, default_value_t = 1)]
    seeds: u64,
    /// Also check every individual layer.
    #[arg(long)]
    layers: bool,
}

fn parse_geometry(s: &str) -> Result<(usize, usize, usize), String> {
    if s == "tiny" {
        return Ok((3, 16, 2));
    }
    let parts: Vec<usize> = s
        .split(',')
        .map(|p| p.trim().parse::<usize>())
        .collect::<Result<_, _>>()
        .map_err(|e| format!("{s:?}: {e}"))?;
    match parts[..] {
        [c, t, k] => Ok((c, t, k)),
        _ => Err(format!("expected tiny or C,T,K, got {s:?}")),
    }
}

#[derive(Debug, Args)]
struct BenchArgs {
    /// Suite JSON: `{"cells": [{"arch": .., "data": ..}], "max_epochs": .., "seed": ..}`.
    #[arg(long)]
    suite: PathBuf,
    /// Also write the report CSV here.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Debug)]
enum Failure {
    Usage(String),
    Harness(HarnessError),
    GradCheck(String),
    BenchCells(usize),
}

impl From<HarnessError> for Failure {
    fn from(e: HarnessError) -> Self {
        Self::Harness(e)
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Usage(m) => write!(f, "{m}"),
            Self::Harness(e) => write!(f, "{e}"),
            Self::GradCheck(m) => write!(f, "gradient check failed: {m}"),
            Self::BenchCells(n) => write!(f, "{n} bench cell(s) failed"),
        }
    }
}

impl Failure {
    fn exit_code(&self) -> u8 {
        match self {
            Self::Usage(_) => 1,
            Self::Harness(e) => e.exit_code() as u8,
            Self::GradCheck(_) => 3,
            Self::BenchCells(_) => 2,
        }
    }
}

fn io_error(path: &Path, e: std::io::Error) -> Failure {
    Failure::Harness(HarnessError::Io(format!("{}: {e}", path.display())))
}

fn write_text(path: &Path, text: &str) -> Result<(), Failure> {
    fs::write(path, text).map_err(|e| io_error(path, e))
}

fn run_synth(args: SynthArgs) -> Result<(), Failure> {
    let ds = match &args.import {
        Some(path) => EegDataset::import_csv(path).map_err(HarnessError::from)?,
        None => {
            let mut spec = match &args.preset {
                Some(p) => SynthSpec::preset(p, args.seed).map_err(HarnessError::from)?,
                None => {
                    let (Some(channels), Some(timesteps), Some(classes), Some(records)) =
                        (args.channels, args.timesteps, args.classes, args.records)
                    else {
                        return Err(Failure::Usage(
                            "without --preset, --channels, --timesteps, --classes and --records are required".into(),
                        ));
                    };
                    SynthSpec {
                        name: "synthetic".into(),
                        channels,
                        timesteps,
                        num_classes: classes,
                        num_records: records,
                        seed: args.seed,
                        difficulty: args.difficulty,
                    }
                }
            };
            spec.channels = args.channels.unwrap_or(spec.channels);
            spec.timesteps = args.timesteps.unwrap_or(spec.timesteps);
            spec.num_classes = args.classes.unwrap_or(spec.num_classes);
            spec.num_records = args.records.unwrap_or(spec.num_records);
            spec.difficulty = args.difficulty;
            if let Some(name) = &args.name {
                spec.name = name.clone();
            }
            spec.generate().map_err(HarnessError::from)?
        }
    };
    if args.csv {
        write_text(&args.out, &ds.to_csv())?;
    } else {
        ds.save(&args.out).map_err(HarnessError::from)?;
    }
    println!(
        "wrote {} ({} records, C={} T={} K={}) to {}",
        ds.name,
        ds.len(),
        ds.channels,
        ds.timesteps,
        ds.num_classes,
        args.out.display()
    );
    Ok(())
}

fn run_train(args: TrainArgs) -> Result<(), Failure> {
    let mut config = match &args.config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| io_error(path, e))?;
            let mut config = TrainConfig::from_json(&text)?;
            if args.data.given() {
                config.data = args.data.source()?;
            }
            if let Some(arch) = args.arch {
                config.arch = arch;
            }
            config
        }
        None => {
            let arch = args
                .arch
                .ok_or_else(|| Failure::Usage("--arch is required without --config".into()))?;
            TrainConfig::new(arch, args.data.source()?)
        }
    };
    config.max_epochs = args.epochs.unwrap_or(config.max_epochs);
    config.batch_size = args.batch.unwrap_or(config.batch_size);
    config.lr = args.lr.unwrap_or(config.lr);
    config.optimizer = args.optimizer.unwrap_or(config.optimizer);
    config.seed = args.seed.unwrap_or(config.seed);
    if args.out.is_some() {
        config.out_dir = args.out.clone();
    }

    let outcome = train(&config)?;
    for e in &outcome.history.epochs {
        println!(
            "epoch {:>3}  loss {:.6}  train acc {:.4}  val acc {:.4}  {:.1}s",
            e.epoch, e.train_loss, e.train_accuracy, e.val_accuracy, e.wall_seconds
        );
    }
    let best = outcome.history.best();
    println!(
        "best epoch {} (val acc {:.4})",
        best.epoch, best.val_accuracy
    );
    if let Some(dir) = &config.out_dir {
        write_text(&dir.join(CONFIG_FILE), &config.to_canonical_json())?;
        println!(
            "checkpoint written to {}",
            dir.join(CHECKPOINT_FILE).display()
        );
    }
    Ok(())
}

fn load_checkpoint(path: &Path) -> Result<Checkpoint, Failure> {
    let file = if path.is_dir() {
        path.join(CHECKPOINT_FILE)
    } else {
        path.to_path_buf()
    };
    Ok(Checkpoint::read(&file).map_err(HarnessError::from)?)
}

fn print_report(r: &MetricsReport) {
    let auc = r.auc.map_or_else(|| "-".to_string(), |a| format!("{a:.4}"));
    println!(
        "{} on {}: acc {:.4}  f1 ({:?}) {:.4}  auc {auc}",
        r.model, r.dataset, r.accuracy, r.f1_average, r.f1
    );
    println!("confusion (rows true, columns predicted):");
    for (k, row) in r.confusion.counts.iter().enumerate() {
        let cells: Vec<String> = row.iter().map(|c| format!("{c:>6}")).collect();
        println!("  true {k:>2}:{}", cells.join(""));
    }
}

fn run_eval(args: EvalArgs) -> Result<(), Failure> {
    let ckpt = load_checkpoint(&args.checkpoint)?;
    let ds = args.data.source()?.load()?;
    let reports = evaluate(&ckpt, &ds, args.split, args.f1.into())?;
    for r in &reports {
        print_report(r);
    }
    let csv = reports_to_csv(&reports).map_err(HarnessError::from)?;
    print!("{csv}");
    if let Some(path) = &args.csv {
        write_text(path, &csv)?;
    }
    Ok(())
}

fn run_encode(args: EncodeArgs) -> Result<(), Failure> {
    let ckpt = load_checkpoint(&args.checkpoint)?;
    let ds = args.data.source()?.load()?;
    let embeddings = encode_dataset(&ckpt, &ds)?;
    embeddings.save(&args.out).map_err(HarnessError::from)?;
    println!(
        "wrote {} embeddings of dimension {} to {}",
        embeddings.len(),
        embeddings.timesteps,
        args.out.display()
    );
    Ok(())
}

fn run_gradcheck(args: GradcheckArgs) -> Result<(), Failure> {
    let archs = args.arch.map_or_else(|| Arch::ALL.to_vec(), |a| vec![a]);
    let mut failures = Vec::new();
    for seed in 0..args.seeds {
        if args.layers {
            for (name, r) in layer_checks(seed).map_err(HarnessError::from)? {
                let ok = r.passes(LAYER_TOL);
                println!(
                    "{} layer {name} seed {seed}: max rel {:.2e}",
                    if ok { "ok  " } else { "FAIL" },
                    r.max_rel_err
                );
                if !ok {
                    failures.push(format!("{name} seed {seed}"));
                }
            }
        }
        for &arch in &archs {
            let r = model_check(arch, args.geometry, seed).map_err(HarnessError::from)?;
            let ok = r.passes(MODEL_TOL);
            println!(
                "{} {arch} {:?} seed {seed}: max rel {:.2e} over {} coordinates",
                if ok { "ok  " } else { "FAIL" },
                args.geometry,
                r.max_rel_err,
                r.checked
            );
            if !ok {
                failures.push(format!("{arch} seed {seed}"));
            }
        }
    }
    if failures.is_empty() {
        Ok(())
    } else {
        Err(Failure::GradCheck(failures.join(", ")))
    }
}

fn run_bench(args: BenchArgs) -> Result<(), Failure> {
    let text = fs::read_to_string(&args.suite).map_err(|e| io_error(&args.suite, e))?;
    let suite = SuiteConfig::from_json(&text)?;
    let out = bench(&suite);
    print!("{}", out.table.render());
    for (model, dataset, error) in &out.failures {
        eprintln!("{model} on {dataset}: {error}");
    }
    let csv = reports_to_csv(&out.reports).map_err(HarnessError::from)?;
    if let Some(path) = &args.csv {
        write_text(path, &csv)?;
    }
    if out.failures.is_empty() {
        Ok(())
    } else {
        Err(Failure::BenchCells(out.failures.len()))
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    let result = match cli.command {
        Command::Synth(a) => run_synth(a),
        Command::Train(a) => run_train(a),
        Command::Eval(a) => run_eval(a),
        Command::Encode(a) => run_encode(a),
        Command::Gradcheck(a) => run_gradcheck(a),
        Command::Bench(a) => run_bench(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
