use serde::{Deserialize, Serialize};

use super::EvalError;

/// One-vs-rest ROC curve for one class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    pub class: usize,
    /// `(false positive rate, true positive rate)` from (0,0) to (1,1), one
    /// point per distinct score. Empty when the AUC is undefined.
    pub points: Vec<(f64, f64)>,
    /// `None` when the class has no positive or no negative windows.
    pub auc: Option<f64>,
}

/// ROC of `scores[i][class]` against `truths[i] == class`. Equal scores
/// share a threshold, so ties contribute a diagonal segment.
pub fn roc_auc(scores: &[Vec<f32>], truths: &[usize], class: usize) -> Result<RocCurve, EvalError> {
    if scores.len() != truths.len() {
        return Err(EvalError::Mismatch(format!("{} score vectors for {} labels", scores.len(), truths.len())));
    }
    let mut pairs = Vec::with_capacity(scores.len());
    for (s, &t) in scores.iter().zip(truths) {
        let v = *s.get(class).ok_or(EvalError::ClassOutOfRange {
            index: class,
            classes: s.len(),
        })?;
        pairs.push((v, t == class));
    }
    let positives = pairs.iter().filter(|p| p.1).count() as f64;
    let negatives = pairs.len() as f64 - positives;
    if positives == 0.0 || negatives == 0.0 {
        return Ok(RocCurve {
            class,
            points: Vec::new(),
            auc: None,
        });
    }
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut points = vec![(0.0, 0.0)];
    let (mut tp, mut fp) = (0.0f64, 0.0f64);
    let mut auc = 0.0;
    let mut i = 0;
    while i < pairs.len() {
        let threshold = pairs[i].0;
        while i < pairs.len() && pairs[i].0 == threshold {
            if pairs[i].1 {
                tp += 1.0;
            } else {
                fp += 1.0;
            }
            i += 1;
        }
        let (x0, y0) = *points.last().expect("non-empty");
        let (x1, y1) = (fp / negatives, tp / positives);
        auc += (x1 - x0) * (y0 + y1) / 2.0;
        points.push((x1, y1));
    }
    Ok(RocCurve {
        class,
        points,
        auc: Some(auc),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn col(v: &[f32]) -> Vec<Vec<f32>> {
        v.iter().map(|&s| vec![1.0 - s, s]).collect()
    }

    #[test]
    fn perfect_separation() {
        let r = roc_auc(&col(&[0.9, 0.8, 0.3, 0.1]), &[1, 1, 0, 0], 1).unwrap();
        assert_eq!(r.auc, Some(1.0));
        assert_eq!(r.points.first(), Some(&(0.0, 0.0)));
        assert_eq!(r.points.last(), Some(&(1.0, 1.0)));
    }

    #[test]
    fn all_equal_is_half() {
        let r = roc_auc(&col(&[0.5; 6]), &[1, 0, 1, 0, 0, 1], 1).unwrap();
        assert_eq!(r.auc, Some(0.5));
    }

    #[test]
    fn ties_hand_value() {
        let r = roc_auc(&col(&[0.9, 0.4, 0.4, 0.1]), &[1, 1, 0, 0], 1).unwrap();
        assert!((r.auc.unwrap() - 0.875).abs() < 1e-12);
    }

    #[test]
    fn absent_class_is_missing() {
        let r = roc_auc(&col(&[0.9, 0.4]), &[0, 0], 1).unwrap();
        assert_eq!(r.auc, None);
    }
}
