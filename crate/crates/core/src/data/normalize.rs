use serde::{Deserialize, Serialize};

use super::{PairedWindow, Site};
use crate::numerics::Tensor;

/// Per-channel z-scoring for one site, fitted on a training partition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f32>,
    pub std: Vec<f32>,
}

const MIN_STD: f64 = 1e-6;

impl Standardizer {
    pub fn fit(windows: &[PairedWindow], site: Site) -> Option<Self> {
        let first = windows.first()?.signal(site);
        let (channels, len) = (first.shape()[0], first.shape()[1]);
        let mut sum = vec![0.0f64; channels];
        let mut sq = vec![0.0f64; channels];
        for w in windows {
            let d = w.signal(site).data();
            for c in 0..channels {
                for &v in &d[c * len..(c + 1) * len] {
                    sum[c] += v as f64;
                    sq[c] += v as f64 * v as f64;
                }
            }
        }
        let n = (windows.len() * len) as f64;
        let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
        let std = sq
            .iter()
            .zip(&mean)
            .map(|(q, m)| ((q / n - m * m).max(0.0).sqrt().max(MIN_STD)) as f32)
            .collect();
        Some(Standardizer {
            mean: mean.into_iter().map(|m| m as f32).collect(),
            std,
        })
    }

    pub fn apply(&self, signal: &Tensor) -> Tensor {
        let len = signal.shape()[1];
        let mut out = signal.clone();
        for (c, chunk) in out.data_mut().chunks_mut(len).enumerate() {
            for v in chunk {
                *v = (*v - self.mean[c]) / self.std[c];
            }
        }
        out
    }

    pub fn apply_pairs(source: &Standardizer, target: &Standardizer, windows: &[PairedWindow]) -> Vec<PairedWindow> {
        windows
            .iter()
            .map(|w| PairedWindow {
                source: source.apply(&w.source),
                target: target.apply(&w.target),
                ..w.clone()
            })
            .collect()
    }
}
