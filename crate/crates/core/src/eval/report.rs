use serde::{Deserialize, Serialize};

use super::{confusion, ovr_metrics_with, roc_auc, Averaging, ClassMetrics, ConfusionMatrix, EvalError, RocCurve};
use crate::data::Window;
use crate::model::{argmax, classify_batch, ModelParams};
use crate::numerics::Tensor;

/// Everything reported for one model on one labeled test set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub class_names: Vec<String>,
    pub windows: usize,
    pub accuracy: f64,
    pub averaging: Averaging,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub per_class: Vec<ClassMetrics>,
    pub confusion: ConfusionMatrix,
    pub roc: Vec<RocCurve>,
}

impl MetricsReport {
    pub fn to_json(&self) -> Result<String, EvalError> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn from_json(text: &str) -> Result<Self, EvalError> {
        Ok(serde_json::from_str(text)?)
    }

    /// `class,precision,recall,f1,support,auc` rows; an undefined AUC is empty.
    pub fn per_class_csv(&self) -> String {
        let mut out = String::from("class,precision,recall,f1,support,auc\n");
        for (i, m) in self.per_class.iter().enumerate() {
            let auc = self.roc[i].auc.map(|a| a.to_string()).unwrap_or_default();
            out.push_str(&format!("{},{},{},{},{},{}\n", self.class_names[i], m.precision, m.recall, m.f1, m.support, auc));
        }
        out
    }

    pub fn confusion_csv(&self) -> String {
        self.confusion.to_csv(&self.class_names)
    }

    /// `class,fpr,tpr` rows for every curve point.
    pub fn roc_csv(&self) -> String {
        let mut out = String::from("class,fpr,tpr\n");
        for curve in &self.roc {
            for (x, y) in &curve.points {
                out.push_str(&format!("{},{},{}\n", self.class_names[curve.class], x, y));
            }
        }
        out
    }
}

/// Metrics from per-window class scores and true labels.
pub fn evaluate_scores(scores: &[Vec<f32>], truths: &[usize], class_names: Vec<String>, averaging: Averaging) -> Result<MetricsReport, EvalError> {
    if truths.is_empty() {
        return Err(EvalError::Empty);
    }
    let k = class_names.len();
    let preds: Vec<usize> = scores.iter().map(|s| argmax(s)).collect();
    let cm = confusion(&preds, truths, k)?;
    let m = ovr_metrics_with(&cm, averaging);
    let roc = (0..k).map(|c| roc_auc(scores, truths, c)).collect::<Result<Vec<_>, _>>()?;
    Ok(MetricsReport {
        class_names,
        windows: truths.len(),
        accuracy: m.accuracy,
        averaging,
        precision: m.precision,
        recall: m.recall,
        f1: m.f1,
        per_class: m.per_class,
        confusion: cm,
        roc,
    })
}

/// Classifies labeled windows with `model` and scores the predictions.
/// Classes are named by index; callers may overwrite `class_names`.
pub fn evaluate(model: &ModelParams, windows: &[Window]) -> Result<MetricsReport, EvalError> {
    if windows.is_empty() {
        return Err(EvalError::Empty);
    }
    let truths = windows
        .iter()
        .map(|w| w.label.ok_or(EvalError::MissingLabel { pair_id: w.pair_id }))
        .collect::<Result<Vec<_>, _>>()?;
    let signals: Vec<&Tensor> = windows.iter().map(|w| &w.samples).collect();
    let scores = classify_batch(model, &signals)?;
    let names = (0..model.meta.num_classes).map(|k| k.to_string()).collect();
    evaluate_scores(&scores, &truths, names, Averaging::Macro)
}
