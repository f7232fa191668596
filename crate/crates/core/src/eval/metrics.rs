use serde::{Deserialize, Serialize};

use super::EvalError;

/// `counts[true][predicted]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn zeros(classes: usize) -> Self {
        ConfusionMatrix {
            counts: vec![vec![0; classes]; classes],
        }
    }

    pub fn num_classes(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.num_classes()).map(|k| self.counts[k][k]).sum()
    }

    pub fn row_sum(&self, k: usize) -> u64 {
        self.counts[k].iter().sum()
    }

    pub fn col_sum(&self, k: usize) -> u64 {
        self.counts.iter().map(|r| r[k]).sum()
    }

    /// Rows as CSV, with a `true\predicted` header row of class names.
    pub fn to_csv(&self, class_names: &[String]) -> String {
        let mut out = String::from("true\\predicted");
        for name in class_names {
            out.push(',');
            out.push_str(name);
        }
        out.push('\n');
        for (name, row) in class_names.iter().zip(&self.counts) {
            out.push_str(name);
            for c in row {
                out.push_str(&format!(",{}", c));
            }
            out.push('\n');
        }
        out
    }
}

pub fn confusion(preds: &[usize], truths: &[usize], classes: usize) -> Result<ConfusionMatrix, EvalError> {
    if preds.len() != truths.len() {
        return Err(EvalError::Mismatch(format!("{} predictions for {} labels", preds.len(), truths.len())));
    }
    let mut cm = ConfusionMatrix::zeros(classes);
    for (&p, &t) in preds.iter().zip(truths) {
        if let Some(&index) = [p, t].iter().find(|&&i| i >= classes) {
            return Err(EvalError::ClassOutOfRange { index, classes });
        }
        cm.counts[t][p] += 1;
    }
    Ok(cm)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Averaging {
    /// Unweighted mean over classes.
    #[default]
    Macro,
    /// Mean weighted by each class's true-window count.
    Weighted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OvrMetrics {
    pub accuracy: f64,
    pub per_class: Vec<ClassMetrics>,
    pub averaging: Averaging,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// One-vs-rest precision, recall and F1 per class, macro-averaged. Empty
/// denominators give 0 and the class still counts in the mean.
pub fn ovr_metrics(cm: &ConfusionMatrix) -> OvrMetrics {
    ovr_metrics_with(cm, Averaging::Macro)
}

pub fn ovr_metrics_with(cm: &ConfusionMatrix, averaging: Averaging) -> OvrMetrics {
    let k = cm.num_classes();
    let per_class: Vec<ClassMetrics> = (0..k)
        .map(|c| {
            let tp = cm.counts[c][c];
            let precision = ratio(tp, cm.col_sum(c));
            let recall = ratio(tp, cm.row_sum(c));
            let f1 = if precision + recall == 0.0 {
                0.0
            } else {
                2.0 * precision * recall / (precision + recall)
            };
            ClassMetrics {
                precision,
                recall,
                f1,
                support: cm.row_sum(c),
            }
        })
        .collect();
    let total = cm.total();
    let avg = |f: fn(&ClassMetrics) -> f64| match averaging {
        Averaging::Macro => per_class.iter().map(f).sum::<f64>() / k.max(1) as f64,
        Averaging::Weighted if total == 0 => 0.0,
        Averaging::Weighted => per_class.iter().map(|m| f(m) * m.support as f64).sum::<f64>() / total as f64,
    };
    OvrMetrics {
        accuracy: ratio(cm.trace(), total),
        precision: avg(|m| m.precision),
        recall: avg(|m| m.recall),
        f1: avg(|m| m.f1),
        averaging,
        per_class,
    }
}
