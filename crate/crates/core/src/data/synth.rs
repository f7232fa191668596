//! Paired synthetic recordings with a shared class-dependent latent.
//!
//! Every window pair is generated from one latent trajectory
//! `z_j(t) = mean[k][j] + amp[k][j] * sin(2π freq[k][j] t + φ_j)` seen
//! through two fixed linear site maps, each with its own additive noise.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{PairedWindow, WINDOW_LEN};
use crate::numerics::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub classes: usize,
    pub windows_per_class: usize,
    pub source_channels: usize,
    pub target_channels: usize,
    pub latent_dim: usize,
    /// Standard deviation of the additive per-site noise.
    pub noise: f32,
    /// Scale of the per-class latent means.
    pub mean_separation: f32,
    pub rate_hz: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            classes: 5,
            windows_per_class: 200,
            source_channels: 6,
            target_channels: 6,
            latent_dim: 3,
            noise: 0.1,
            mean_separation: 1.0,
            rate_hz: 30.0,
        }
    }
}

/// Per-class latent pattern.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassSignature {
    pub mean: Vec<f32>,
    pub amplitude: Vec<f32>,
    pub frequency_hz: Vec<f32>,
}

#[derive(Debug, Clone)]
pub struct SynthDataset {
    pub windows: Vec<PairedWindow>,
    /// Latent trajectories `[latent_dim, 100]`, parallel to `windows`.
    pub latents: Vec<Tensor>,
    /// `[source_channels, latent_dim]`
    pub source_map: Tensor,
    /// `[target_channels, latent_dim]`
    pub target_map: Tensor,
    pub signatures: Vec<ClassSignature>,
}

fn normal_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    let scale = 1.0 / (cols as f32).sqrt();
    let data = (0..rows * cols)
        .map(|_| {
            let v: f32 = StandardNormal.sample(rng);
            v * scale
        })
        .collect();
    Tensor::new(vec![rows, cols], data).expect("finite")
}

/// Generates `classes * windows_per_class` labeled window pairs, ordered by
/// class then index, with consecutive start times.
pub fn synth_paired_dataset(config: &SynthConfig, seed: u64) -> SynthDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let l = config.latent_dim;
    let source_map = normal_matrix(&mut rng, config.source_channels, l);
    let target_map = normal_matrix(&mut rng, config.target_channels, l);
    let signatures: Vec<ClassSignature> = (0..config.classes)
        .map(|_| ClassSignature {
            mean: (0..l)
                .map(|_| {
                    let v: f32 = StandardNormal.sample(&mut rng);
                    v * config.mean_separation
                })
                .collect(),
            amplitude: (0..l).map(|_| rng.gen_range(0.3..1.0)).collect(),
            frequency_hz: (0..l).map(|_| rng.gen_range(0.3..3.0)).collect(),
        })
        .collect();

    let window_secs = WINDOW_LEN as f64 / config.rate_hz;
    let mut windows = Vec::with_capacity(config.classes * config.windows_per_class);
    let mut latents = Vec::with_capacity(windows.capacity());
    let mut pair_id = 0u64;
    for (class, sig) in signatures.iter().enumerate() {
        for _ in 0..config.windows_per_class {
            let phases: Vec<f64> = (0..l).map(|_| rng.gen_range(0.0..std::f64::consts::TAU)).collect();
            let jitter: Vec<f32> = (0..l).map(|_| rng.gen_range(0.9..1.1)).collect();
            let mut z = vec![0.0f32; l * WINDOW_LEN];
            for j in 0..l {
                for t in 0..WINDOW_LEN {
                    let time = t as f64 / config.rate_hz;
                    let wave = (std::f64::consts::TAU * sig.frequency_hz[j] as f64 * time + phases[j]).sin() as f32;
                    z[j * WINDOW_LEN + t] = sig.mean[j] + sig.amplitude[j] * jitter[j] * wave;
                }
            }
            let source = mix(&source_map, &z, l, config.noise, &mut rng);
            let target = mix(&target_map, &z, l, config.noise, &mut rng);
            windows.push(PairedWindow {
                pair_id,
                subject: 0,
                start_time: pair_id as f64 * window_secs,
                source,
                target,
                label: Some(class),
            });
            latents.push(Tensor::new(vec![l, WINDOW_LEN], z).expect("finite"));
            pair_id += 1;
        }
    }
    SynthDataset {
        windows,
        latents,
        source_map,
        target_map,
        signatures,
    }
}

fn mix(map: &Tensor, z: &[f32], l: usize, noise: f32, rng: &mut ChaCha8Rng) -> Tensor {
    let channels = map.shape()[0];
    let m = map.data();
    let mut out = vec![0.0f32; channels * WINDOW_LEN];
    for c in 0..channels {
        for t in 0..WINDOW_LEN {
            let mut v = 0.0f32;
            for j in 0..l {
                v += m[c * l + j] * z[j * WINDOW_LEN + t];
            }
            if noise > 0.0 {
                let e: f32 = StandardNormal.sample(rng);
                v += noise * e;
            }
            out[c * WINDOW_LEN + t] = v;
        }
    }
    Tensor::new(vec![channels, WINDOW_LEN], out).expect("finite")
}
