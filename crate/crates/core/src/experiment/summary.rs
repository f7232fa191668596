//! Aggregated tables over repetitions.
//!
//! Files written to the output directory, each carrying the config hash:
//!
//! - `summary.json`: the full [`Summary`].
//! - `summary.csv`: `condition,fraction,metric,n,mean,sd,min,max`, one row
//!   per condition and metric, values in `[0, 1]`.
//! - `table.csv`: metrics as rows and conditions as columns, each cell
//!   `mean ± sd` in percent.
//! - `series.csv`: `condition,fraction,n,f1_mean,f1_sd,accuracy_mean,accuracy_sd`
//!   for conditions evaluated at several data fractions.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::ExperimentKind;
use super::run::RunRecord;
use super::ExperimentError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stats {
    pub mean: f64,
    /// Sample standard deviation; 0 for a single value.
    pub sd: f64,
    pub min: f64,
    pub max: f64,
}

impl Stats {
    pub fn of(values: &[f64]) -> Stats {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let sd = if values.len() > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Stats {
            mean,
            sd,
            min: values.iter().copied().fold(f64::INFINITY, f64::min),
            max: values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub condition: String,
    pub fraction: Option<f64>,
    pub n: usize,
    pub accuracy: Stats,
    pub precision: Stats,
    pub recall: Stats,
    pub f1: Stats,
}

impl SummaryRow {
    /// Column heading, with the fraction appended for sweep points.
    pub fn label(&self) -> String {
        match self.fraction {
            Some(f) => format!("{} @ {}", self.condition, f),
            None => self.condition.clone(),
        }
    }

    fn metrics(&self) -> [(&'static str, &Stats); 4] {
        [
            ("accuracy", &self.accuracy),
            ("precision", &self.precision),
            ("recall", &self.recall),
            ("f1", &self.f1),
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub config_hash: String,
    pub kind: ExperimentKind,
    pub repetitions: usize,
    pub rows: Vec<SummaryRow>,
}

impl Summary {
    pub fn row(&self, condition: &str, fraction: Option<f64>) -> Option<&SummaryRow> {
        self.rows.iter().find(|r| r.condition == condition && r.fraction == fraction)
    }
}

fn key(c: &super::run::ConditionResult) -> (String, Option<u64>) {
    (c.condition.clone(), c.fraction.map(f64::to_bits))
}

/// Mean, sd, min and max of every condition over the records. Records are
/// ordered by (config hash, repetition) first, so input order is irrelevant.
pub fn summarize(records: &[RunRecord]) -> Result<Summary, ExperimentError> {
    let mut sorted: Vec<&RunRecord> = records.iter().collect();
    sorted.sort_by(|a, b| (&a.config_hash, a.seeds.repetition).cmp(&(&b.config_hash, b.seeds.repetition)));
    let first = *sorted.first().ok_or_else(|| ExperimentError::Inconsistent("no run records".into()))?;
    let keys: Vec<_> = first.conditions.iter().map(key).collect();
    for r in &sorted {
        if r.config_hash != first.config_hash || r.kind != first.kind {
            return Err(ExperimentError::Inconsistent(format!(
                "records from configs {} and {}",
                first.config_hash, r.config_hash
            )));
        }
        if r.conditions.iter().map(key).collect::<Vec<_>>() != keys {
            return Err(ExperimentError::Inconsistent(format!("repetition {} has a different condition set", r.seeds.repetition)));
        }
    }
    let rows = first
        .conditions
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let values = |f: fn(&crate::eval::MetricsReport) -> f64| Stats::of(&sorted.iter().map(|r| f(&r.conditions[i].metrics)).collect::<Vec<_>>());
            SummaryRow {
                condition: c.condition.clone(),
                fraction: c.fraction,
                n: sorted.len(),
                accuracy: values(|m| m.accuracy),
                precision: values(|m| m.precision),
                recall: values(|m| m.recall),
                f1: values(|m| m.f1),
            }
        })
        .collect();
    Ok(Summary {
        config_hash: first.config_hash.clone(),
        kind: first.kind,
        repetitions: sorted.len(),
        rows,
    })
}

fn fraction_text(f: Option<f64>) -> String {
    f.map(|f| f.to_string()).unwrap_or_default()
}

pub fn summary_csv(summary: &Summary) -> String {
    let mut out = format!("# config_hash={}\ncondition,fraction,metric,n,mean,sd,min,max\n", summary.config_hash);
    for row in &summary.rows {
        for (name, s) in row.metrics() {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                row.condition,
                fraction_text(row.fraction),
                name,
                row.n,
                s.mean,
                s.sd,
                s.min,
                s.max
            ));
        }
    }
    out
}

pub fn table_csv(summary: &Summary) -> String {
    let mut out = format!("# config_hash={}\nmetric", summary.config_hash);
    for row in &summary.rows {
        out.push_str(&format!(",{}", row.label()));
    }
    out.push('\n');
    for (i, name) in ["Accuracy", "Precision", "Recall", "F1 score"].iter().enumerate() {
        out.push_str(name);
        for row in &summary.rows {
            let s = row.metrics()[i].1;
            out.push_str(&format!(",{:.2} ± {:.2}", 100.0 * s.mean, 100.0 * s.sd));
        }
        out.push('\n');
    }
    out
}

pub fn series_csv(summary: &Summary) -> String {
    let mut out = format!(
        "# config_hash={}\ncondition,fraction,n,f1_mean,f1_sd,accuracy_mean,accuracy_sd\n",
        summary.config_hash
    );
    for row in summary.rows.iter().filter(|r| r.fraction.is_some()) {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            row.condition,
            fraction_text(row.fraction),
            row.n,
            row.f1.mean,
            row.f1.sd,
            row.accuracy.mean,
            row.accuracy.sd
        ));
    }
    out
}

pub fn write_summary(summary: &Summary, dir: &Path) -> Result<(), ExperimentError> {
    std::fs::write(dir.join("summary.json"), serde_json::to_string_pretty(summary)? + "\n")?;
    std::fs::write(dir.join("summary.csv"), summary_csv(summary))?;
    std::fs::write(dir.join("table.csv"), table_csv(summary))?;
    if summary.rows.iter().any(|r| r.fraction.is_some()) {
        std::fs::write(dir.join("series.csv"), series_csv(summary))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_value_has_zero_sd() {
        let s = Stats::of(&[0.7]);
        assert_eq!((s.mean, s.sd, s.min, s.max), (0.7, 0.0, 0.7, 0.7));
    }

    #[test]
    fn sample_sd() {
        let s = Stats::of(&[1.0, 2.0, 3.0, 4.0]);
        assert!((s.sd - (5.0f64 / 3.0).sqrt()).abs() < 1e-12);
        assert_eq!((s.min, s.max, s.mean), (1.0, 4.0, 2.5));
    }
}
