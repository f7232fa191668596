use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::DataError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Delimiter {
    Whitespace,
    Comma,
    Tab,
}

/// One selected column and the factor that brings it to canonical units
/// (m/s², deg/s, µT).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelSpec {
    /// Zero-based column index.
    pub column: usize,
    #[serde(default)]
    pub name: String,
    #[serde(default = "one")]
    pub scale: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SiteSpec {
    pub name: String,
    pub channels: Vec<ChannelSpec>,
}

/// A native activity label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Activity {
    /// Label value as written in the file.
    pub code: String,
    pub name: String,
    /// Five-class bucket (`other`, `sit`, `stand`, `lie`, `walk`); inferred
    /// from `name` when absent.
    #[serde(default)]
    pub five_class: Option<String>,
}

/// How to read one dataset's raw files for one source/target site pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetDescriptor {
    pub id: String,
    pub sample_rate_hz: f64,
    pub delimiter: Delimiter,
    /// Minimum number of columns per row.
    pub columns: usize,
    /// Zero-based timestamp column; rows are indexed by `row / rate` when absent.
    #[serde(default)]
    pub timestamp_column: Option<usize>,
    /// Multiplier from file timestamp units to seconds.
    #[serde(default = "one")]
    pub timestamp_scale: f64,
    pub label_column: usize,
    /// Tokens read as a missing value.
    #[serde(default = "default_missing")]
    pub missing: Vec<String>,
    /// File extension (without dot) of raw files in the dataset directory.
    pub file_extension: String,
    pub source: SiteSpec,
    pub target: SiteSpec,
    pub activities: Vec<Activity>,
}

fn default_missing() -> Vec<String> {
    vec!["NaN".into(), "nan".into()]
}

impl DatasetDescriptor {
    pub fn from_toml(text: &str) -> Result<Self, DataError> {
        let d: DatasetDescriptor = toml::from_str(text).map_err(|e| DataError::Descriptor(e.to_string()))?;
        d.validate()?;
        Ok(d)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, DataError> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<(), DataError> {
        if !(self.sample_rate_hz > 0.0) {
            return Err(DataError::Descriptor("sample_rate_hz must be positive".into()));
        }
        let src: HashSet<usize> = self.source.channels.iter().map(|c| c.column).collect();
        let tgt: HashSet<usize> = self.target.channels.iter().map(|c| c.column).collect();
        if self.source.channels.is_empty() || self.target.channels.is_empty() {
            return Err(DataError::Descriptor("each site needs at least one channel".into()));
        }
        if src.len() != self.source.channels.len() || tgt.len() != self.target.channels.len() {
            return Err(DataError::Descriptor("a site lists the same column twice".into()));
        }
        if let Some(c) = src.intersection(&tgt).next() {
            return Err(DataError::Descriptor(format!("column {} is mapped to both sites", c)));
        }
        let mut all: Vec<usize> = src.iter().chain(&tgt).copied().collect();
        all.push(self.label_column);
        all.extend(self.timestamp_column);
        if let Some(&c) = all.iter().find(|&&c| c >= self.columns) {
            return Err(DataError::Descriptor(format!("column {} beyond declared width {}", c, self.columns)));
        }
        if let Some(c) = src.iter().chain(&tgt).find(|&&c| c == self.label_column || Some(c) == self.timestamp_column) {
            return Err(DataError::Descriptor(format!("column {} is both a channel and label/timestamp", c)));
        }
        let mut codes = HashSet::new();
        for a in &self.activities {
            if !codes.insert(a.code.as_str()) {
                return Err(DataError::Descriptor(format!("activity code {:?} listed twice", a.code)));
            }
            if let Some(f) = &a.five_class {
                if super::FiveClass::parse(f).is_none() {
                    return Err(DataError::Descriptor(format!("unknown five-class bucket {:?}", f)));
                }
            }
        }
        if self.activities.is_empty() {
            return Err(DataError::Descriptor("no activities listed".into()));
        }
        Ok(())
    }

    pub fn activity_names(&self) -> Vec<String> {
        self.activities.iter().map(|a| a.name.clone()).collect()
    }

    /// One of the shipped descriptors (`opportunity`, `pamap2`, `mhealth`).
    pub fn builtin(id: &str) -> Option<Self> {
        let text = match id {
            "opportunity" => include_str!("../../../../descriptors/opportunity.toml"),
            "pamap2" => include_str!("../../../../descriptors/pamap2.toml"),
            "mhealth" => include_str!("../../../../descriptors/mhealth.toml"),
            _ => return None,
        };
        Some(Self::from_toml(text).expect("shipped descriptor is valid"))
    }

    /// The same descriptor with source and target sites exchanged.
    pub fn swapped(&self) -> Self {
        let mut d = self.clone();
        std::mem::swap(&mut d.source, &mut d.target);
        d
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    pub(crate) const FIXTURE: &str = r#"
id = "fixture"
sample_rate_hz = 30.0
delimiter = "whitespace"
columns = 6
timestamp_column = 0
timestamp_scale = 0.001
label_column = 5

file_extension = "dat"

[source]
name = "wrist"
channels = [ { column = 1, name = "acc_x", scale = 0.00980665 }, { column = 2, name = "acc_y", scale = 0.00980665 } ]

[target]
name = "back"
channels = [ { column = 3, name = "acc_x" }, { column = 4, name = "acc_y" } ]

[[activities]]
code = "0"
name = "Null"

[[activities]]
code = "1"
name = "Stand"

[[activities]]
code = "2"
name = "Walk"
"#;

    #[test]
    fn fixture_parses() {
        let d = DatasetDescriptor::from_toml(FIXTURE).unwrap();
        assert_eq!(d.source.channels.len(), 2);
        assert_eq!(d.missing, vec!["NaN", "nan"]);
    }

    #[test]
    fn overlapping_sites_rejected() {
        let text = FIXTURE.replace("{ column = 3, name = \"acc_x\" }", "{ column = 2, name = \"acc_x\" }");
        let err = DatasetDescriptor::from_toml(&text).unwrap_err();
        assert!(err.to_string().contains("both sites"), "{}", err);
    }

    #[test]
    fn out_of_range_column_rejected() {
        let text = FIXTURE.replace("columns = 6", "columns = 5");
        assert!(DatasetDescriptor::from_toml(&text).is_err());
    }

    #[test]
    fn shipped_descriptors_are_valid() {
        let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../descriptors");
        let mut n = 0;
        for entry in std::fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.extension().map(|e| e == "toml").unwrap_or(false) {
                let d = DatasetDescriptor::load(&path).unwrap_or_else(|e| panic!("{}: {}", path.display(), e));
                assert!(d.source.channels.len() == 9 || d.source.channels.len() == 3);
                n += 1;
            }
        }
        assert_eq!(n, 3);
        for id in ["opportunity", "pamap2", "mhealth"] {
            assert_eq!(DatasetDescriptor::builtin(id).unwrap().id, id);
        }
        assert!(DatasetDescriptor::builtin("unknown").is_none());
    }
}
