use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::ExperimentError;
use crate::data::{LabelSet, SplitMode, SynthConfig, DEFAULT_PROPORTIONS};
use crate::model::Architecture;
use crate::training::{LossKind, LossSpec, RegTarget, Regularization, TrainConfig};

/// Version of the experiment configuration schema.
pub const CONFIG_VERSION: u32 = 1;

/// Environment variable naming the directory that holds raw datasets.
pub const DATA_ROOT_ENV: &str = "SITETRANSFER_DATA";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    /// Source model on source, source model on target, adapted model on target.
    ThreeWay,
    /// Adapted model over increasing shares of the adaptation pairs.
    SizeSweep,
    /// Three-way comparison with the two sites exchanged.
    DomainSwitch,
    /// Adapted model under every replication loss, plus untrained and random references.
    LossGrid,
    /// Unsupervised adaptation against supervised transfer baselines over label fractions.
    BaselineCompare,
    /// Three-way comparison using every native activity label.
    AllLabels,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::ThreeWay => "three_way",
            ExperimentKind::SizeSweep => "size_sweep",
            ExperimentKind::DomainSwitch => "domain_switch",
            ExperimentKind::LossGrid => "loss_grid",
            ExperimentKind::BaselineCompare => "baseline_compare",
            ExperimentKind::AllLabels => "all_labels",
        }
    }

    fn default_repetitions(self) -> usize {
        match self {
            ExperimentKind::BaselineCompare => 10,
            _ => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetConfig {
    /// Generated paired data; regenerated for every repetition.
    Synthetic {
        #[serde(default)]
        config: SynthConfig,
    },
    /// Raw files read through a descriptor.
    Raw {
        id: String,
        /// Descriptor file; the shipped descriptor for `id` when absent.
        #[serde(default)]
        descriptor: Option<PathBuf>,
        /// Directory of raw files; `$SITETRANSFER_DATA/<id>` when absent.
        /// Relative paths are resolved against `$SITETRANSFER_DATA`.
        #[serde(default)]
        raw_dir: Option<PathBuf>,
    },
    /// A previously ingested window archive.
    Archive { path: PathBuf },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitConfig {
    pub train_source: f64,
    pub adapt: f64,
    pub test: f64,
    pub mode: SplitMode,
}

impl Default for SplitConfig {
    fn default() -> Self {
        let (train_source, adapt, test) = DEFAULT_PROPORTIONS;
        SplitConfig {
            train_source,
            adapt,
            test,
            mode: SplitMode::Window,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Unsupervised,
    Lp,
    Ft,
    Lpft,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Unsupervised, Method::Lp, Method::Ft, Method::Lpft];

    pub fn name(self) -> &'static str {
        match self {
            Method::Unsupervised => "unsupervised",
            Method::Lp => "lp",
            Method::Ft => "ft",
            Method::Lpft => "lpft",
        }
    }
}

/// A declarative description of one study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub version: u32,
    pub kind: ExperimentKind,
    /// Master seed; every stage seed is derived from it.
    pub seed: u64,
    #[serde(default)]
    pub repetitions: Option<usize>,
    pub dataset: DatasetConfig,
    #[serde(default)]
    pub labels: LabelSet,
    #[serde(default)]
    pub architecture: Architecture,
    #[serde(default)]
    pub split: SplitConfig,
    /// Z-score each site with statistics from the training partitions.
    #[serde(default)]
    pub standardize: bool,
    #[serde(default)]
    pub source_training: TrainConfig,
    #[serde(default)]
    pub adaptation: TrainConfig,
    #[serde(default)]
    pub baseline: TrainConfig,
    /// Replication loss for every kind except `loss_grid`.
    #[serde(default)]
    pub loss: LossSpec,
    /// Loss conditions of `loss_grid`.
    #[serde(default)]
    pub losses: Option<Vec<LossSpec>>,
    #[serde(default)]
    pub fractions: Option<Vec<f64>>,
    #[serde(default)]
    pub methods: Option<Vec<Method>>,
    #[serde(default = "yes")]
    pub save_checkpoints: bool,
    /// Where results go; relative to the config file.
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

fn yes() -> bool {
    true
}

/// The ten replication losses of the loss grid, in table order.
pub fn default_loss_grid() -> Vec<LossSpec> {
    use LossKind::*;
    use Regularization::*;
    let w = RegTarget::EmbedderWeights;
    [
        (Mse, None),
        (Msle, None),
        (Mae, None),
        (Cosine, None),
        (Cosine, L1),
        (Mae, L1),
        (Mse, L1),
        (Cosine, L2),
        (Mae, L2),
        (Mse, L2),
    ]
    .into_iter()
    .map(|(k, r)| LossSpec::with_default_lambda(k, r, w))
    .collect()
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, ExperimentError> {
        let config: ExperimentConfig = toml::from_str(text).map_err(|e| ExperimentError::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ExperimentError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| ExperimentError::Config(format!("{}: {}", path.display(), e)))?;
        Self::from_toml(&text)
    }

    pub fn repetitions(&self) -> usize {
        self.repetitions.unwrap_or(self.kind.default_repetitions())
    }

    pub fn label_set(&self) -> LabelSet {
        match self.kind {
            ExperimentKind::AllLabels => LabelSet::AllLabels,
            _ => self.labels,
        }
    }

    pub fn loss_grid(&self) -> Vec<LossSpec> {
        self.losses.clone().unwrap_or_else(default_loss_grid)
    }

    pub fn fractions(&self) -> Vec<f64> {
        self.fractions.clone().unwrap_or_else(|| match self.kind {
            ExperimentKind::BaselineCompare => vec![0.0, 0.15, 0.33, 0.66, 1.0],
            _ => vec![0.15, 0.33, 0.66, 1.0],
        })
    }

    pub fn methods(&self) -> Vec<Method> {
        self.methods.clone().unwrap_or_else(|| Method::ALL.to_vec())
    }

    /// Checks everything that can be checked without touching data.
    pub fn validate(&self) -> Result<(), ExperimentError> {
        let bad = |m: String| Err(ExperimentError::Config(m));
        if self.version != CONFIG_VERSION {
            return bad(format!("config version {} is not supported (expected {})", self.version, CONFIG_VERSION));
        }
        if self.repetitions() == 0 {
            return bad("repetitions must be at least 1".into());
        }
        for (name, cfg) in [("source_training", &self.source_training), ("adaptation", &self.adaptation), ("baseline", &self.baseline)] {
            cfg.validate().map_err(|e| ExperimentError::Config(format!("[{}] {}", name, e)))?;
        }
        self.loss.validate().map_err(|e| ExperimentError::Config(format!("loss: {}", e)))?;
        for spec in self.loss_grid() {
            spec.validate().map_err(|e| ExperimentError::Config(format!("losses: {}", e)))?;
        }
        let zero_ok = self.kind == ExperimentKind::BaselineCompare;
        for f in self.fractions() {
            if !(f <= 1.0 && (f > 0.0 || (zero_ok && f == 0.0))) {
                return bad(format!("fraction {} out of range for {}", f, self.kind.name()));
            }
        }
        if self.methods().is_empty() {
            return bad("methods must not be empty".into());
        }
        let s = &self.split;
        if [s.train_source, s.adapt, s.test].iter().any(|p| !(0.0..=1.0).contains(p)) || (s.train_source + s.adapt + s.test - 1.0).abs() > 1e-9 {
            return bad("split proportions must lie in [0, 1] and sum to 1".into());
        }
        self.architecture
            .validate(crate::data::WINDOW_LEN)
            .map_err(|e| ExperimentError::Config(e.to_string()))?;
        if let DatasetConfig::Synthetic { config } = &self.dataset {
            if config.classes < 2 || config.windows_per_class == 0 || config.source_channels == 0 || config.target_channels == 0 {
                return bad("synthetic dataset needs at least 2 classes, 1 window per class and 1 channel per site".into());
            }
        }
        if let DatasetConfig::Raw { id, descriptor: None, .. } = &self.dataset {
            if crate::data::DatasetDescriptor::builtin(id).is_none() {
                return bad(format!("no shipped descriptor for dataset {:?}; set `descriptor`", id));
            }
        }
        Ok(())
    }

    /// SHA-256 over the canonical JSON form, ignoring `output_dir`.
    pub fn hash(&self) -> String {
        let mut canonical = self.clone();
        canonical.output_dir = None;
        let json = serde_json::to_string(&canonical).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }
}

/// Per-stage seeds of one repetition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageSeeds {
    pub repetition: usize,
    pub data: u64,
    pub split: u64,
    pub init: u64,
    pub source_training: u64,
    pub adaptation: u64,
    pub baseline: u64,
}

impl StageSeeds {
    /// Expands the master seed for repetition `repetition`.
    pub fn derive(master: u64, repetition: usize) -> Self {
        use rand::{RngCore, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(master);
        rng.set_stream(repetition as u64);
        StageSeeds {
            repetition,
            data: rng.next_u64(),
            split: rng.next_u64(),
            init: rng.next_u64(),
            source_training: rng.next_u64(),
            adaptation: rng.next_u64(),
            baseline: rng.next_u64(),
        }
    }
}
