//! Dataset ingestion and harmonization into paired source/target windows.
//!
//! Pipeline for real recordings:
//! [`parse_recording`] → [`interpolate_missing`] → [`convert_units`] →
//! [`resample`] → [`relabel`] → [`windowize`] → [`split`].

mod archive;
mod descriptor;
mod ingest;
mod labels;
mod normalize;
mod parse;
mod pipeline;
mod split;
mod synth;

pub use archive::{load_archive, read_archive, save_archive, write_archive, WindowArchive, ARCHIVE_MAGIC, ARCHIVE_VERSION, UNLABELED};
pub use descriptor::{Activity, ChannelSpec, DatasetDescriptor, Delimiter, SiteSpec};
pub use ingest::{ingest_directory, ingest_recording, raw_files, DEFAULT_MAX_GAP};
pub use labels::{class_distribution, map_label, FiveClass, LabelScheme, LabelSet};
pub use normalize::Standardizer;
pub use parse::{parse_recording, parse_recording_str};
pub use pipeline::{convert_units, interpolate_missing, relabel, resample, windowize, TARGET_RATE_HZ, WINDOW_LEN};
pub use split::{split, SplitMode, WindowedSplit, DEFAULT_PROPORTIONS};
pub use synth::{synth_paired_dataset, SynthConfig, SynthDataset};

use serde::{Deserialize, Serialize};

use crate::numerics::{NumericsError, Tensor};

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("{file}:{line}: {message}")]
    Parse { file: String, line: usize, message: String },
    #[error("{file}:{line}: unknown native label {label:?}")]
    UnknownLabel { file: String, line: usize, label: String },
    #[error("unknown label {0:?} for this label scheme")]
    UnknownClass(String),
    #[error("invalid descriptor: {0}")]
    Descriptor(String),
    #[error("recording is already in canonical units")]
    AlreadyConverted,
    #[error("refusing to upsample from {native} Hz to {target} Hz")]
    Upsample { native: f64, target: f64 },
    #[error("need at least {needed} windows, got {found}")]
    TooFewWindows { needed: usize, found: usize },
    #[error("invalid argument: {0}")]
    Invalid(String),
    #[error("corrupt archive: {0}")]
    Corrupt(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

/// Whether channel values are still in the file's native units.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Units {
    Native,
    Canonical,
}

/// One body site's channels, `[channel][sample]`, `None` = missing.
pub type SiteChannels = Vec<Vec<Option<f32>>>;

/// A simultaneously recorded source/target time series with per-sample
/// labels. `labels[i]` indexes into `classes`.
#[derive(Debug, Clone, PartialEq)]
pub struct Recording {
    pub subject: u32,
    pub rate_hz: f64,
    pub timestamps: Vec<f64>,
    pub source: SiteChannels,
    pub target: SiteChannels,
    pub labels: Vec<u16>,
    pub classes: Vec<String>,
    pub units: Units,
}

impl Recording {
    pub fn len(&self) -> usize {
        self.timestamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }
}

/// One model input: `[channels, 100]` samples and an optional class label.
#[derive(Debug, Clone, PartialEq)]
pub struct Window {
    pub pair_id: u64,
    pub samples: Tensor,
    pub label: Option<usize>,
}

/// Source and target windows covering the same time span.
#[derive(Debug, Clone, PartialEq)]
pub struct PairedWindow {
    pub pair_id: u64,
    pub subject: u32,
    pub start_time: f64,
    pub source: Tensor,
    pub target: Tensor,
    pub label: Option<usize>,
}

/// A paired window with no label. The adaptation path only accepts this
/// type, so it cannot read target labels.
#[derive(Debug, Clone, PartialEq)]
pub struct UnlabeledPair {
    pub pair_id: u64,
    pub source: Tensor,
    pub target: Tensor,
}

/// Body site selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Site {
    Source,
    Target,
}

impl PairedWindow {
    pub fn strip_label(&self) -> UnlabeledPair {
        UnlabeledPair {
            pair_id: self.pair_id,
            source: self.source.clone(),
            target: self.target.clone(),
        }
    }

    pub fn signal(&self, site: Site) -> &Tensor {
        match site {
            Site::Source => &self.source,
            Site::Target => &self.target,
        }
    }

    pub fn window(&self, site: Site) -> Window {
        Window {
            pair_id: self.pair_id,
            samples: self.signal(site).clone(),
            label: self.label,
        }
    }

    /// Exchanges the roles of the two sites.
    pub fn swapped(&self) -> PairedWindow {
        PairedWindow {
            source: self.target.clone(),
            target: self.source.clone(),
            ..self.clone()
        }
    }
}

/// Labeled single-site windows from pairs; unlabeled pairs are skipped.
pub fn site_windows(pairs: &[PairedWindow], site: Site) -> Vec<Window> {
    pairs.iter().filter(|p| p.label.is_some()).map(|p| p.window(site)).collect()
}
