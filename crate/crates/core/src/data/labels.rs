use serde::{Deserialize, Serialize};

use super::{DataError, DatasetDescriptor, PairedWindow};

/// The five activity classes shared by all three datasets, in canonical
/// index order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FiveClass {
    Other = 0,
    Sit = 1,
    Stand = 2,
    Lie = 3,
    Walk = 4,
}

impl FiveClass {
    pub const ALL: [FiveClass; 5] = [FiveClass::Other, FiveClass::Sit, FiveClass::Stand, FiveClass::Lie, FiveClass::Walk];

    pub fn name(self) -> &'static str {
        match self {
            FiveClass::Other => "other",
            FiveClass::Sit => "sit",
            FiveClass::Stand => "stand",
            FiveClass::Lie => "lie",
            FiveClass::Walk => "walk",
        }
    }

    pub fn names() -> Vec<String> {
        Self::ALL.iter().map(|c| c.name().to_string()).collect()
    }

    pub fn parse(bucket: &str) -> Option<FiveClass> {
        Self::ALL.iter().copied().find(|c| c.name() == bucket.trim().to_ascii_lowercase())
    }

    /// Bucket for a native activity name; anything that is not plainly
    /// sitting, standing, lying or walking folds into `Other`.
    pub fn from_activity_name(name: &str) -> FiveClass {
        let n = name.trim().to_ascii_lowercase();
        let n = n.replace(['_', '-'], " ");
        let stem = n.split(" (").next().unwrap_or("");
        match stem {
            "sit" | "sitting" | "sitting and relaxing" => FiveClass::Sit,
            "stand" | "standing" | "standing still" => FiveClass::Stand,
            "lie" | "lying" | "lie down" | "lying down" => FiveClass::Lie,
            "walk" | "walking" => FiveClass::Walk,
            _ => FiveClass::Other,
        }
    }
}

/// Which label set a run uses, independent of any particular dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelSet {
    #[default]
    FiveClass,
    AllLabels,
}

impl LabelSet {
    pub fn scheme(self, descriptor: &DatasetDescriptor) -> LabelScheme {
        match self {
            LabelSet::FiveClass => LabelScheme::FiveClass,
            LabelSet::AllLabels => LabelScheme::all_labels(descriptor),
        }
    }
}

/// How native activities map to class indices.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelScheme {
    FiveClass,
    /// Every native activity of the dataset, in descriptor order.
    AllLabels(Vec<String>),
}

impl LabelScheme {
    pub fn all_labels(descriptor: &DatasetDescriptor) -> Self {
        LabelScheme::AllLabels(descriptor.activity_names())
    }

    pub fn class_names(&self) -> Vec<String> {
        match self {
            LabelScheme::FiveClass => FiveClass::names(),
            LabelScheme::AllLabels(names) => names.clone(),
        }
    }

    pub fn num_classes(&self) -> usize {
        match self {
            LabelScheme::FiveClass => 5,
            LabelScheme::AllLabels(names) => names.len(),
        }
    }
}

/// Class index of a native activity name under `scheme`.
pub fn map_label(native_label: &str, scheme: &LabelScheme) -> Result<usize, DataError> {
    match scheme {
        LabelScheme::FiveClass => Ok(FiveClass::from_activity_name(native_label) as usize),
        LabelScheme::AllLabels(names) => names
            .iter()
            .position(|n| n == native_label)
            .ok_or_else(|| DataError::UnknownClass(native_label.to_string())),
    }
}

/// Window count per class index (unlabeled windows are not counted).
pub fn class_distribution(windows: &[PairedWindow], num_classes: usize) -> Vec<usize> {
    let mut counts = vec![0; num_classes];
    for w in windows {
        if let Some(l) = w.label {
            if l < num_classes {
                counts[l] += 1;
            }
        }
    }
    counts
}
