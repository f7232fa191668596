use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{DatasetConfig, ExperimentConfig, ExperimentKind, Method, StageSeeds, DATA_ROOT_ENV};
use super::summary::{summarize, write_summary, Summary};
use super::ExperimentError;
use crate::data::{
    ingest_directory, load_archive, save_archive, site_windows, split, synth_paired_dataset, DatasetDescriptor, PairedWindow, Site, Standardizer,
    UnlabeledPair, Window, WindowedSplit, WINDOW_LEN,
};
use crate::eval::{evaluate, MetricsReport};
use crate::model::{save_checkpoint, transplant_classifier, Domain, ModelMeta, ModelParams};
use crate::training::{adapt_unsupervised, fine_tune, linear_probe, lp_ft, target_init, train_supervised, AdaptReport, LossSpec, TrainConfig};

/// One evaluated model/test-set combination.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionResult {
    pub condition: String,
    /// Share of adaptation (or labeled target) windows used, for sweeps.
    pub fraction: Option<f64>,
    pub metrics: MetricsReport,
    #[serde(default)]
    pub adaptation: Option<AdaptReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub stage: String,
    pub seconds: f64,
}

/// Everything produced by one repetition of an experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub config_hash: String,
    pub kind: ExperimentKind,
    pub master_seed: u64,
    pub seeds: StageSeeds,
    pub class_names: Vec<String>,
    /// Window counts of the train-source, adapt and test partitions.
    pub partition_sizes: [usize; 3],
    pub conditions: Vec<ConditionResult>,
    /// Checkpoint files relative to the output directory.
    pub checkpoints: Vec<String>,
    pub timings: Vec<Timing>,
}

pub const CONDITION_MS_SOURCE: &str = "M_S on D_S";
pub const CONDITION_MS_TARGET: &str = "M_S on D_ST";
pub const CONDITION_MT_TARGET: &str = "M_T on D_ST";
pub const CONDITION_SOURCE_REFERENCE: &str = "M_S";
pub const CONDITION_RANDOM: &str = "Random samp";
pub const CONDITION_UNTRAINED: &str = "Untrained";

/// Column label of a replication loss, e.g. `MAE + L2 reg`.
pub fn loss_condition_name(spec: &LossSpec) -> String {
    use crate::training::{LossKind, RegTarget, Regularization};
    let kind = match spec.kind {
        LossKind::Mae => "MAE",
        LossKind::Mse => "MSE",
        LossKind::Msle => "MSLE",
        LossKind::Cosine => "Cosine sim",
    };
    let reg = match spec.regularization {
        Regularization::None => return kind.to_string(),
        Regularization::L1 => "L1",
        Regularization::L2 => "L2",
    };
    let on = match spec.target {
        RegTarget::EmbedderWeights => "",
        RegTarget::EmbeddingActivations => " (activations)",
    };
    format!("{} + {} reg{}", kind, reg, on)
}

fn method_condition_name(method: Method) -> &'static str {
    match method {
        Method::Unsupervised => "Unsupervised",
        Method::Lp => "LP",
        Method::Ft => "FT",
        Method::Lpft => "LPFT",
    }
}

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub output_dir: PathBuf,
    /// Repetitions run concurrently; 0 uses every core.
    pub workers: usize,
}

/// Paired windows and class names shared by every repetition.
struct Dataset {
    class_names: Vec<String>,
    windows: Vec<PairedWindow>,
}

fn data_root() -> Option<PathBuf> {
    std::env::var_os(DATA_ROOT_ENV).map(PathBuf::from)
}

fn load_shared(config: &ExperimentConfig, output_dir: &Path) -> Result<Option<Dataset>, ExperimentError> {
    let archive = match &config.dataset {
        DatasetConfig::Synthetic { .. } => return Ok(None),
        DatasetConfig::Archive { path } => load_archive(path)?,
        DatasetConfig::Raw { id, descriptor, raw_dir } => {
            let cache = output_dir.join("dataset.stwa");
            if cache.exists() {
                load_archive(&cache)?
            } else {
                let desc = match descriptor {
                    Some(p) => DatasetDescriptor::load(p)?,
                    None => DatasetDescriptor::builtin(id).ok_or_else(|| ExperimentError::Config(format!("unknown dataset {:?}", id)))?,
                };
                let dir = match (raw_dir, data_root()) {
                    (Some(d), _) if d.is_absolute() => d.clone(),
                    (Some(d), Some(root)) => root.join(d),
                    (Some(d), None) => d.clone(),
                    (None, Some(root)) => root.join(id),
                    (None, None) => {
                        return Err(ExperimentError::MissingInput(format!(
                            "dataset {:?} needs `raw_dir` or ${} to be set",
                            id, DATA_ROOT_ENV
                        )))
                    }
                };
                if !dir.is_dir() {
                    return Err(ExperimentError::MissingInput(format!("raw directory {} does not exist", dir.display())));
                }
                let archive = ingest_directory(&dir, &desc, &config.label_set().scheme(&desc))?;
                save_archive(&archive, &cache)?;
                archive
            }
        }
    };
    Ok(Some(Dataset {
        class_names: archive.class_names,
        windows: archive.windows,
    }))
}

fn synthetic_class_names(k: usize) -> Vec<String> {
    (0..k).map(|i| format!("class{}", i)).collect()
}

fn with_seed(cfg: &TrainConfig, seed: u64) -> TrainConfig {
    TrainConfig { seed, ..cfg.clone() }
}

struct Repetition<'a> {
    config: &'a ExperimentConfig,
    output_dir: &'a Path,
    seeds: StageSeeds,
    class_names: Vec<String>,
    split: WindowedSplit,
    conditions: Vec<ConditionResult>,
    checkpoints: Vec<String>,
    timings: Vec<Timing>,
}

impl Repetition<'_> {
    fn timed<T>(&mut self, stage: &str, f: impl FnOnce() -> Result<T, ExperimentError>) -> Result<T, ExperimentError> {
        let start = Instant::now();
        let out = f()?;
        self.timings.push(Timing {
            stage: stage.to_string(),
            seconds: start.elapsed().as_secs_f64(),
        });
        Ok(out)
    }

    fn test_windows(&self, site: Site) -> Vec<Window> {
        site_windows(&self.split.test, site)
    }

    fn record(&mut self, condition: &str, fraction: Option<f64>, model: &ModelParams, site: Site, adaptation: Option<AdaptReport>) -> Result<(), ExperimentError> {
        let mut metrics = evaluate(model, &self.test_windows(site))?;
        metrics.class_names = self.class_names.clone();
        log::info!(
            "rep {} {}{}: F1 {:.4}",
            self.seeds.repetition,
            condition,
            fraction.map(|f| format!(" @ {}", f)).unwrap_or_default(),
            metrics.f1
        );
        self.conditions.push(ConditionResult {
            condition: condition.to_string(),
            fraction,
            metrics,
            adaptation,
        });
        Ok(())
    }

    fn save(&mut self, model: &ModelParams, name: &str) -> Result<(), ExperimentError> {
        if !self.config.save_checkpoints {
            return Ok(());
        }
        let rel = format!("runs/rep_{:03}/{}.ckpt", self.seeds.repetition, name);
        let path = self.output_dir.join(&rel);
        std::fs::create_dir_all(path.parent().expect("has parent"))?;
        save_checkpoint(model, &path)?;
        self.checkpoints.push(rel);
        Ok(())
    }

    /// `source` as it applies to target windows: itself when the channel
    /// counts match, otherwise with a fresh first convolution.
    fn source_on_target(&self, source: &ModelParams) -> Result<ModelParams, ExperimentError> {
        let channels = self.split.test[0].target.shape()[0];
        if channels == source.meta.input_channels {
            return Ok(source.clone());
        }
        Ok(target_init(source, channels, self.seeds.adaptation)?)
    }

    fn adapt_pairs(&self) -> Vec<UnlabeledPair> {
        self.split.adapt.iter().map(PairedWindow::strip_label).collect()
    }

    fn adapt(&mut self, source: &ModelParams, spec: &LossSpec, fraction: f64) -> Result<(ModelParams, AdaptReport), ExperimentError> {
        let pairs = self.adapt_pairs();
        let cfg = TrainConfig {
            fraction,
            ..with_seed(&self.config.adaptation, self.seeds.adaptation)
        };
        self.timed("adapt", || Ok(adapt_unsupervised(source, &pairs, spec, &cfg)?))
    }
}

fn slug(text: &str) -> String {
    let s: String = text
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() { c.to_ascii_lowercase() } else { '_' })
        .collect();
    s.split('_').filter(|p| !p.is_empty()).collect::<Vec<_>>().join("_")
}

fn run_repetition(config: &ExperimentConfig, hash: &str, shared: Option<&Dataset>, repetition: usize, output_dir: &Path) -> Result<RunRecord, ExperimentError> {
    let seeds = StageSeeds::derive(config.seed, repetition);
    let (class_names, mut windows) = match (shared, &config.dataset) {
        (Some(d), _) => (d.class_names.clone(), d.windows.clone()),
        (None, DatasetConfig::Synthetic { config: synth }) => (
            synthetic_class_names(synth.classes),
            synth_paired_dataset(synth, seeds.data).windows,
        ),
        (None, _) => unreachable!("non-synthetic datasets are loaded up front"),
    };
    if config.kind == ExperimentKind::DomainSwitch {
        windows = windows.iter().map(PairedWindow::swapped).collect();
    }
    let s = &config.split;
    let mut parts = split(&windows, (s.train_source, s.adapt, s.test), seeds.split, s.mode)?;
    drop(windows);
    if config.standardize {
        let fit = |w: &[PairedWindow], site| Standardizer::fit(w, site).ok_or(ExperimentError::Config("standardization needs a non-empty partition".into()));
        let src = fit(&parts.train_source, Site::Source)?;
        let tgt = fit(&parts.adapt, Site::Target)?;
        for part in [&mut parts.train_source, &mut parts.adapt, &mut parts.test] {
            *part = Standardizer::apply_pairs(&src, &tgt, part);
        }
    }
    let partition_sizes = [parts.train_source.len(), parts.adapt.len(), parts.test.len()];
    for (name, n) in ["train-source", "adapt", "test"].iter().zip(partition_sizes) {
        if n == 0 {
            return Err(ExperimentError::Config(format!("the {} partition is empty", name)));
        }
    }
    let source_channels = parts.train_source[0].source.shape()[0];
    let meta = ModelMeta {
        input_channels: source_channels,
        window_len: WINDOW_LEN,
        num_classes: class_names.len(),
        domain: Domain::Source,
        arch: config.architecture,
    };
    let mut rep = Repetition {
        config,
        output_dir,
        seeds,
        class_names,
        split: parts,
        conditions: Vec::new(),
        checkpoints: Vec::new(),
        timings: Vec::new(),
    };

    let init = ModelParams::init(meta.clone(), &mut ChaCha8Rng::seed_from_u64(seeds.init))?;
    let train = site_windows(&rep.split.train_source, Site::Source);
    let source_cfg = with_seed(&config.source_training, seeds.source_training);
    let (source, _) = rep.timed("train_source", || Ok(train_supervised(init, &train, &source_cfg)?))?;
    drop(train);
    rep.save(&source, "source")?;

    match config.kind {
        ExperimentKind::ThreeWay | ExperimentKind::DomainSwitch | ExperimentKind::AllLabels => {
            rep.record(CONDITION_MS_SOURCE, None, &source, Site::Source, None)?;
            let unadapted = rep.source_on_target(&source)?;
            rep.record(CONDITION_MS_TARGET, None, &unadapted, Site::Target, None)?;
            let (target, report) = rep.adapt(&source, &config.loss, 1.0)?;
            rep.save(&target, "target")?;
            rep.record(CONDITION_MT_TARGET, None, &target, Site::Target, Some(report))?;
        }
        ExperimentKind::SizeSweep => {
            rep.record(CONDITION_MS_SOURCE, None, &source, Site::Source, None)?;
            let unadapted = rep.source_on_target(&source)?;
            rep.record(CONDITION_MS_TARGET, None, &unadapted, Site::Target, None)?;
            for f in config.fractions() {
                let (target, report) = rep.adapt(&source, &config.loss, f)?;
                rep.save(&target, &format!("target_f{}", slug(&f.to_string())))?;
                rep.record(CONDITION_MT_TARGET, Some(f), &target, Site::Target, Some(report))?;
            }
        }
        ExperimentKind::LossGrid => {
            rep.record(CONDITION_SOURCE_REFERENCE, None, &source, Site::Source, None)?;
            let target_channels = rep.split.adapt[0].target.shape()[0];
            let random_meta = ModelMeta {
                input_channels: target_channels,
                domain: Domain::Target,
                ..meta.clone()
            };
            let random = ModelParams::init(random_meta, &mut ChaCha8Rng::seed_from_u64(seeds.adaptation))?;
            let random = transplant_classifier(&source, &random)?;
            rep.record(CONDITION_RANDOM, None, &random, Site::Target, None)?;
            let untrained = target_init(&source, target_channels, seeds.adaptation)?;
            rep.record(CONDITION_UNTRAINED, None, &untrained, Site::Target, None)?;
            for spec in config.loss_grid() {
                let name = loss_condition_name(&spec);
                let (target, report) = rep.adapt(&source, &spec, 1.0)?;
                rep.save(&target, &format!("target_{}", slug(&name)))?;
                rep.record(&name, None, &target, Site::Target, Some(report))?;
            }
        }
        ExperimentKind::BaselineCompare => {
            rep.record(CONDITION_MS_SOURCE, None, &source, Site::Source, None)?;
            let labeled = site_windows(&rep.split.adapt, Site::Target);
            let unadapted = rep.source_on_target(&source)?;
            for f in config.fractions() {
                for method in config.methods() {
                    let name = method_condition_name(method);
                    if f == 0.0 {
                        rep.record(name, Some(0.0), &unadapted, Site::Target, None)?;
                        continue;
                    }
                    let cfg = TrainConfig {
                        fraction: f,
                        ..with_seed(&config.baseline, seeds.baseline)
                    };
                    let (model, report) = match method {
                        Method::Unsupervised => {
                            let (m, r) = rep.adapt(&source, &config.loss, f)?;
                            (m, Some(r))
                        }
                        Method::Lp => (rep.timed("lp", || Ok(linear_probe(&source, &labeled, &cfg)?.0))?, None),
                        Method::Ft => (rep.timed("ft", || Ok(fine_tune(&source, &labeled, &cfg)?.0))?, None),
                        Method::Lpft => (rep.timed("lpft", || Ok(lp_ft(&source, &labeled, &cfg)?.0))?, None),
                    };
                    rep.save(&model, &format!("{}_f{}", method.name(), slug(&f.to_string())))?;
                    rep.record(name, Some(f), &model, Site::Target, report)?;
                }
            }
        }
    }

    Ok(RunRecord {
        config_hash: hash.to_string(),
        kind: config.kind,
        master_seed: config.seed,
        seeds,
        class_names: rep.class_names,
        partition_sizes,
        conditions: rep.conditions,
        checkpoints: rep.checkpoints,
        timings: rep.timings,
    })
}

/// Name of the file holding the config hash in an output directory.
pub const HASH_FILE: &str = "config_hash";

fn prepare_output(config: &ExperimentConfig, hash: &str, dir: &Path) -> Result<(), ExperimentError> {
    let hash_path = dir.join(HASH_FILE);
    if hash_path.exists() {
        let existing = std::fs::read_to_string(&hash_path)?;
        if existing.trim() != hash {
            return Err(ExperimentError::HashMismatch {
                dir: dir.to_path_buf(),
                existing: existing.trim().to_string(),
                requested: hash.to_string(),
            });
        }
    }
    std::fs::create_dir_all(dir.join("runs"))?;
    std::fs::write(&hash_path, format!("{}\n", hash))?;
    let text = toml::to_string(config).map_err(|e| ExperimentError::Config(e.to_string()))?;
    std::fs::write(dir.join("config.toml"), format!("# config_hash = {}\n{}", hash, text))?;
    Ok(())
}

pub(crate) fn record_path(dir: &Path, repetition: usize) -> PathBuf {
    dir.join("runs").join(format!("rep_{:03}.json", repetition))
}

/// Runs every repetition of `config`, writes run records and summary
/// tables under `options.output_dir`, and returns the summary.
pub fn run_experiment(config: &ExperimentConfig, options: &RunOptions) -> Result<Summary, ExperimentError> {
    config.validate()?;
    let hash = config.hash();
    let dir = &options.output_dir;
    prepare_output(config, &hash, dir)?;
    let shared = load_shared(config, dir)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(options.workers)
        .build()
        .map_err(|e| ExperimentError::Config(e.to_string()))?;
    let records: Vec<RunRecord> = pool.install(|| {
        (0..config.repetitions())
            .into_par_iter()
            .map(|r| run_repetition(config, &hash, shared.as_ref(), r, dir))
            .collect::<Result<_, _>>()
    })?;
    for record in &records {
        std::fs::write(record_path(dir, record.seeds.repetition), serde_json::to_string_pretty(record)? + "\n")?;
    }
    let summary = summarize(&records)?;
    write_summary(&summary, dir)?;
    Ok(summary)
}

/// Loaded run records of an output directory, in repetition order.
pub fn load_records(dir: &Path) -> Result<Vec<RunRecord>, ExperimentError> {
    let runs = dir.join("runs");
    let mut paths: Vec<PathBuf> = std::fs::read_dir(&runs)
        .map_err(|e| ExperimentError::MissingInput(format!("{}: {}", runs.display(), e)))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().map(|e| e == "json").unwrap_or(false))
        .collect();
    paths.sort();
    paths
        .iter()
        .map(|p| Ok(serde_json::from_str(&std::fs::read_to_string(p)?)?))
        .collect()
}

/// Rebuilds the summary tables of an output directory from its run records.
pub fn summarize_dir(dir: &Path) -> Result<Summary, ExperimentError> {
    let records = load_records(dir)?;
    let summary = summarize(&records)?;
    write_summary(&summary, dir)?;
    Ok(summary)
}
