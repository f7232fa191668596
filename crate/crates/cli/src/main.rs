use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use sitetransfer::data::{
    ingest_directory, load_archive, save_archive, site_windows, split, synth_paired_dataset, DatasetDescriptor, LabelScheme, LabelSet, PairedWindow, Site,
    SplitMode, SynthConfig, WindowArchive, DEFAULT_PROPORTIONS, WINDOW_LEN,
};
use sitetransfer::eval::{evaluate_scores, export_embeddings, Averaging, MetricsReport};
use sitetransfer::experiment::{run_experiment, summarize_dir, table_csv, ExperimentConfig, RunOptions};
use sitetransfer::model::{classify_batch, load_checkpoint, save_checkpoint, Architecture, Domain, ModelMeta, ModelParams};
use sitetransfer::numerics::Tensor;
use sitetransfer::training::{
    adapt_unsupervised, fine_tune, linear_probe, lp_ft, train_supervised, LossKind, LossSpec, RegTarget, Regularization, TrainConfig,
};

#[derive(Parser)]
#[command(name = "sitetransfer", version, about = "Move IMU activity classifiers between body locations without target labels")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Turn raw dataset files (or synthetic data) into a window archive.
    Ingest(IngestArgs),
    /// Train a source-site classifier on an archive's labeled source windows.
    TrainSource(TrainSourceArgs),
    /// Adapt a source model to the target site from unlabeled window pairs.
    Adapt(AdaptArgs),
    /// Supervised transfer baseline on labeled target windows.
    Baseline(BaselineArgs),
    /// Score a model on an archive's labeled windows.
    Evaluate(EvaluateArgs),
    /// Write per-window embeddings as comma-separated text.
    ExportEmbeddings(ExportArgs),
    /// Run or summarize a declarative experiment.
    #[command(subcommand)]
    Experiment(ExperimentCommand),
}

#[derive(Clone, Copy, ValueEnum)]
enum Scheme {
    FiveClass,
    All,
}

#[derive(Args)]
struct IngestArgs {
    /// Dataset id (`opportunity`, `pamap2`, `mhealth`) or `synthetic`.
    #[arg(long)]
    dataset: String,
    /// Directory of raw files; defaults to `$SITETRANSFER_DATA/<dataset>`.
    #[arg(long)]
    raw_dir: Option<PathBuf>,
    /// Descriptor file; defaults to the shipped descriptor for the dataset.
    #[arg(long)]
    descriptor: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value = "five-class")]
    scheme: Scheme,
    /// Seed for synthetic generation and for `--split`.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Also write the train-source / adapt / test partitions next to `--out`.
    #[arg(long)]
    split: bool,
    /// Split whole subjects instead of windows.
    #[arg(long)]
    by_subject: bool,
}

#[derive(Args)]
struct TrainArgs {
    /// TOML file with training settings (learning_rate, batch_size, max_epochs, ...).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f32>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// Share of the windows to use, in (0, 1].
    #[arg(long)]
    fraction: Option<f64>,
    /// Write a JSON report of the run here.
    #[arg(long)]
    report: Option<PathBuf>,
}

impl TrainArgs {
    fn config(&self) -> Result<TrainConfig> {
        let mut cfg: TrainConfig = match &self.config {
            Some(p) => toml::from_str(&std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?)
                .with_context(|| format!("parsing {}", p.display()))?,
            None => TrainConfig::default(),
        };
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = self.epochs {
            cfg.max_epochs = v;
        }
        if let Some(v) = self.lr {
            cfg.learning_rate = v;
        }
        if let Some(v) = self.batch_size {
            cfg.batch_size = v;
        }
        if let Some(v) = self.fraction {
            cfg.fraction = v;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn write_report(&self, value: &serde_json::Value) -> Result<()> {
        if let Some(p) = &self.report {
            std::fs::write(p, serde_json::to_string_pretty(value)? + "\n").with_context(|| format!("writing {}", p.display()))?;
        }
        Ok(())
    }
}

#[derive(Args)]
struct TrainSourceArgs {
    #[arg(long)]
    archive: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    train: TrainArgs,
    #[arg(long, default_value_t = Architecture::DEEP_CONV_LSTM.conv_layers)]
    conv_layers: usize,
    #[arg(long, default_value_t = Architecture::DEEP_CONV_LSTM.conv_filters)]
    filters: usize,
    #[arg(long, default_value_t = Architecture::DEEP_CONV_LSTM.kernel)]
    kernel: usize,
    #[arg(long, default_value_t = Architecture::DEEP_CONV_LSTM.lstm_layers)]
    lstm_layers: usize,
    #[arg(long, default_value_t = Architecture::DEEP_CONV_LSTM.lstm_hidden)]
    hidden: usize,
}

#[derive(Clone, Copy, ValueEnum)]
enum LossArg {
    Mae,
    Mse,
    Msle,
    Cosine,
}

#[derive(Clone, Copy, ValueEnum)]
enum RegArg {
    None,
    L1,
    L2,
}

#[derive(Clone, Copy, ValueEnum)]
enum RegTargetArg {
    Weights,
    Activations,
}

#[derive(Args)]
struct AdaptArgs {
    /// Source model checkpoint.
    #[arg(long)]
    model: PathBuf,
    /// Archive of paired windows; labels are ignored.
    #[arg(long)]
    archive: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value = "mae")]
    loss: LossArg,
    #[arg(long, value_enum, default_value = "l2")]
    reg: RegArg,
    /// Regularization strength; defaults to 1e-5 for L1 and 1e-4 for L2.
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long, value_enum, default_value = "weights")]
    reg_target: RegTargetArg,
    #[command(flatten)]
    train: TrainArgs,
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Lp,
    Ft,
    Lpft,
}

#[derive(Args)]
struct BaselineArgs {
    #[arg(long, value_enum)]
    method: MethodArg,
    /// Source model checkpoint.
    #[arg(long)]
    model: PathBuf,
    /// Archive whose labeled target windows are used for training.
    #[arg(long)]
    archive: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    train: TrainArgs,
}

#[derive(Clone, Copy, ValueEnum)]
enum SiteArg {
    Source,
    Target,
}

impl From<SiteArg> for Site {
    fn from(s: SiteArg) -> Site {
        match s {
            SiteArg::Source => Site::Source,
            SiteArg::Target => Site::Target,
        }
    }
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    archive: PathBuf,
    /// Site whose windows are scored; defaults to the model's own site.
    #[arg(long, value_enum)]
    site: Option<SiteArg>,
    /// Weight class averages by support instead of the unweighted mean.
    #[arg(long)]
    weighted: bool,
    /// Write metrics.json, per_class.csv, confusion.csv and roc.csv here
    /// instead of printing JSON.
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Args)]
struct ExportArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    archive: PathBuf,
    #[arg(long, value_enum)]
    site: Option<SiteArg>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum ExperimentCommand {
    /// Run every repetition of a config and write summary tables.
    Run {
        config: PathBuf,
        /// Output directory; overrides the config's `output_dir`.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Concurrent repetitions (0 = one per core).
        #[arg(long, default_value_t = 0)]
        workers: usize,
    },
    /// Rebuild summary tables from the run records of an output directory.
    Summarize { dir: PathBuf },
}

fn default_site(model: &ModelParams) -> Site {
    match model.meta.domain {
        Domain::Source => Site::Source,
        Domain::Target => Site::Target,
    }
}

fn load(path: &Path) -> Result<WindowArchive> {
    load_archive(path).with_context(|| format!("loading archive {}", path.display()))
}

fn load_model(path: &Path) -> Result<ModelParams> {
    load_checkpoint(path).with_context(|| format!("loading checkpoint {}", path.display()))
}

fn partition_path(out: &Path, part: &str) -> PathBuf {
    let stem = out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let ext = out.extension().map(|e| e.to_string_lossy().into_owned()).unwrap_or_else(|| "stwa".into());
    out.with_file_name(format!("{}.{}.{}", stem, part, ext))
}

fn ingest(args: IngestArgs) -> Result<()> {
    let archive = if args.dataset == "synthetic" {
        let ds = synth_paired_dataset(&SynthConfig::default(), args.seed);
        let names = (0..SynthConfig::default().classes).map(|k| format!("class{}", k)).collect();
        WindowArchive::new(names, ds.windows)?
    } else {
        let desc = match &args.descriptor {
            Some(p) => DatasetDescriptor::load(p)?,
            None => DatasetDescriptor::builtin(&args.dataset).with_context(|| format!("no shipped descriptor for {:?}; pass --descriptor", args.dataset))?,
        };
        let dir = match (&args.raw_dir, std::env::var_os(sitetransfer::experiment::DATA_ROOT_ENV)) {
            (Some(d), _) => d.clone(),
            (None, Some(root)) => PathBuf::from(root).join(&args.dataset),
            (None, None) => bail!("pass --raw-dir or set {}", sitetransfer::experiment::DATA_ROOT_ENV),
        };
        let scheme = match args.scheme {
            Scheme::FiveClass => LabelScheme::FiveClass,
            Scheme::All => LabelSet::AllLabels.scheme(&desc),
        };
        ingest_directory(&dir, &desc, &scheme)?
    };
    save_archive(&archive, &args.out)?;
    let counts = sitetransfer::data::class_distribution(&archive.windows, archive.num_classes());
    println!("{} windows written to {}", archive.windows.len(), args.out.display());
    for (name, n) in archive.class_names.iter().zip(counts) {
        println!("  {:<24} {}", name, n);
    }
    if args.split {
        let mode = if args.by_subject { SplitMode::Subject } else { SplitMode::Window };
        let parts = split(&archive.windows, DEFAULT_PROPORTIONS, args.seed, mode)?;
        for (name, windows) in [("train_source", parts.train_source), ("adapt", parts.adapt), ("test", parts.test)] {
            let path = partition_path(&args.out, name);
            let n = windows.len();
            save_archive(&WindowArchive::new(archive.class_names.clone(), windows)?, &path)?;
            println!("{} windows written to {}", n, path.display());
        }
    }
    Ok(())
}

fn train_source(args: TrainSourceArgs) -> Result<()> {
    let archive = load(&args.archive)?;
    let cfg = args.train.config()?;
    let arch = Architecture {
        conv_layers: args.conv_layers,
        conv_filters: args.filters,
        kernel: args.kernel,
        lstm_layers: args.lstm_layers,
        lstm_hidden: args.hidden,
    };
    let meta = ModelMeta {
        input_channels: archive.source_channels,
        window_len: WINDOW_LEN,
        num_classes: archive.num_classes(),
        domain: Domain::Source,
        arch,
    };
    let init = ModelParams::init(meta, &mut rand_chacha::ChaCha8Rng::seed_from_u64(cfg.seed))?;
    let (model, history) = train_supervised(init, &site_windows(&archive.windows, Site::Source), &cfg)?;
    save_checkpoint(&model, &args.out)?;
    println!(
        "trained {} epochs (best {:?}), checkpoint {}",
        history.epochs_run,
        history.best_epoch,
        args.out.display()
    );
    args.train.write_report(&serde_json::json!({ "config": cfg, "history": history }))
}

fn adapt(args: AdaptArgs) -> Result<()> {
    let source = load_model(&args.model)?;
    let archive = load(&args.archive)?;
    let cfg = args.train.config()?;
    let kind = match args.loss {
        LossArg::Mae => LossKind::Mae,
        LossArg::Mse => LossKind::Mse,
        LossArg::Msle => LossKind::Msle,
        LossArg::Cosine => LossKind::Cosine,
    };
    let reg = match args.reg {
        RegArg::None => Regularization::None,
        RegArg::L1 => Regularization::L1,
        RegArg::L2 => Regularization::L2,
    };
    let target = match args.reg_target {
        RegTargetArg::Weights => RegTarget::EmbedderWeights,
        RegTargetArg::Activations => RegTarget::EmbeddingActivations,
    };
    let spec = LossSpec::new(kind, reg, target, args.lambda.unwrap_or(reg.default_lambda()))?;
    let pairs: Vec<_> = archive.windows.iter().map(PairedWindow::strip_label).collect();
    let (model, report) = adapt_unsupervised(&source, &pairs, &spec, &cfg)?;
    save_checkpoint(&model, &args.out)?;
    println!(
        "adapted on {} pairs over {} epochs, replication loss {:.6}, checkpoint {}",
        report.pairs,
        report.epochs_run,
        report.final_loss,
        args.out.display()
    );
    args.train.write_report(&serde_json::json!({ "config": cfg, "loss": spec, "report": report }))
}

fn baseline(args: BaselineArgs) -> Result<()> {
    let source = load_model(&args.model)?;
    let archive = load(&args.archive)?;
    let cfg = args.train.config()?;
    let labeled = site_windows(&archive.windows, Site::Target);
    let (model, history) = match args.method {
        MethodArg::Lp => linear_probe(&source, &labeled, &cfg)?,
        MethodArg::Ft => fine_tune(&source, &labeled, &cfg)?,
        MethodArg::Lpft => lp_ft(&source, &labeled, &cfg)?,
    };
    save_checkpoint(&model, &args.out)?;
    println!("trained {} epochs, checkpoint {}", history.epochs_run, args.out.display());
    args.train.write_report(&serde_json::json!({ "config": cfg, "history": history }))
}

fn score(model: &ModelParams, archive: &WindowArchive, site: Site, averaging: Averaging) -> Result<MetricsReport> {
    let windows = site_windows(&archive.windows, site);
    if windows.is_empty() {
        bail!("archive has no labeled windows");
    }
    let signals: Vec<&Tensor> = windows.iter().map(|w| &w.samples).collect();
    let scores = classify_batch(model, &signals)?;
    let truths: Vec<usize> = windows.iter().map(|w| w.label.expect("labeled")).collect();
    Ok(evaluate_scores(&scores, &truths, archive.class_names.clone(), averaging)?)
}

fn evaluate(args: EvaluateArgs) -> Result<()> {
    let model = load_model(&args.model)?;
    let archive = load(&args.archive)?;
    let site = args.site.map(Site::from).unwrap_or_else(|| default_site(&model));
    let averaging = if args.weighted { Averaging::Weighted } else { Averaging::Macro };
    let report = score(&model, &archive, site, averaging)?;
    match &args.out_dir {
        Some(dir) => {
            std::fs::create_dir_all(dir)?;
            std::fs::write(dir.join("metrics.json"), report.to_json()?)?;
            std::fs::write(dir.join("per_class.csv"), report.per_class_csv())?;
            std::fs::write(dir.join("confusion.csv"), report.confusion_csv())?;
            std::fs::write(dir.join("roc.csv"), report.roc_csv())?;
            println!(
                "accuracy {:.4}  precision {:.4}  recall {:.4}  F1 {:.4}",
                report.accuracy, report.precision, report.recall, report.f1
            );
        }
        None => print!("{}", report.to_json()?),
    }
    Ok(())
}

fn export(args: ExportArgs) -> Result<()> {
    let model = load_model(&args.model)?;
    let archive = load(&args.archive)?;
    let site = args.site.map(Site::from).unwrap_or_else(|| default_site(&model));
    let windows: Vec<_> = archive.windows.iter().map(|p| p.window(site)).collect();
    export_embeddings(&model, &windows, &args.out)?;
    println!("{} embeddings written to {}", windows.len(), args.out.display());
    Ok(())
}

fn experiment(cmd: ExperimentCommand) -> Result<()> {
    match cmd {
        ExperimentCommand::Run { config, out, workers } => {
            let cfg = ExperimentConfig::load(&config)?;
            let base = config.parent().unwrap_or(Path::new("."));
            let output_dir = match (out, &cfg.output_dir) {
                (Some(o), _) => o,
                (None, Some(o)) => base.join(o),
                (None, None) => bail!("no output directory: pass --out or set output_dir"),
            };
            let summary = run_experiment(&cfg, &RunOptions { output_dir: output_dir.clone(), workers })?;
            print!("{}", table_csv(&summary));
            println!("results in {}", output_dir.display());
        }
        ExperimentCommand::Summarize { dir } => {
            let summary = summarize_dir(&dir)?;
            print!("{}", table_csv(&summary));
        }
    }
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match Cli::parse().command {
        Command::Ingest(a) => ingest(a),
        Command::TrainSource(a) => train_source(a),
        Command::Adapt(a) => adapt(a),
        Command::Baseline(a) => baseline(a),
        Command::Evaluate(a) => evaluate(a),
        Command::ExportEmbeddings(a) => export(a),
        Command::Experiment(c) => experiment(c),
    }
}
