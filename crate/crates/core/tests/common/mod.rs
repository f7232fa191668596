//! Oracles and fixtures shared by the integration test targets.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sitetransfer::eval::ConfusionMatrix;
use sitetransfer::experiment::ExperimentConfig;
use sitetransfer::model::{Architecture, BoundModel, Domain, ModelMeta, ModelParams, Trainable};
use sitetransfer::numerics::{finite_difference_gradient, relative_error, Tape, Tensor, Var};
use sitetransfer::training::{replication_loss_on_tape, LossKind, LossSpec, RegTarget, Regularization};

// ---------------------------------------------------------------------------
// finite-difference gradient oracle

pub const FD_STEP: f32 = 1e-3;
pub const GRAD_TOL: f64 = 1e-3;
pub const GRAD_INSTANCES: usize = 20;

type Build = dyn Fn(&mut Tape, &[Var]) -> Var;

pub fn tensor(rng: &mut ChaCha8Rng, shape: &[usize], lo: f32, hi: f32) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(lo..hi)).collect()).unwrap()
}

/// Values with magnitude in `[lo, hi]` and random sign, to stay clear of kinks at zero.
pub fn away_from_zero(rng: &mut ChaCha8Rng, shape: &[usize], lo: f32, hi: f32) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let m = rng.gen_range(lo..hi);
            if rng.gen_bool(0.5) {
                m
            } else {
                -m
            }
        })
        .collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

/// Fixed random weights that reduce a non-scalar output, so every output
/// element contributes to the checked gradient.
fn reduction_weights(shape: &[usize], seed: u64) -> Option<Tensor> {
    if shape == [1] {
        return None;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    Some(tensor(&mut rng, shape, -1.0, 1.0))
}

fn unflatten(point: &[f32], like: &[Tensor]) -> Vec<Tensor> {
    let mut offset = 0;
    like.iter()
        .map(|t| {
            let n = t.len();
            let out = Tensor::new(t.shape().to_vec(), point[offset..offset + n].to_vec()).unwrap();
            offset += n;
            out
        })
        .collect()
}

fn flatten_grads(grads: &sitetransfer::numerics::Gradients, vars: &[Var], like: &[Tensor]) -> Vec<f64> {
    vars.iter()
        .zip(like)
        .flat_map(|(&v, t)| grads.get_or_zeros(v, t.shape()).data().iter().map(|&g| g as f64).collect::<Vec<_>>())
        .collect()
}

fn primitive_error(inputs: &[Tensor], build: &Build, seed: u64) -> f64 {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let out = build(&mut tape, &vars);
    let reduce = reduction_weights(tape.value(out).shape(), seed);
    let loss = match &reduce {
        None => out,
        Some(r) => {
            let c = tape.constant(r.clone());
            let m = tape.mul(out, c).unwrap();
            tape.sum(m).unwrap()
        }
    };
    let analytic = flatten_grads(&tape.backward(loss).unwrap(), &vars, inputs);
    let point: Vec<f32> = inputs.iter().flat_map(|t| t.data().iter().copied()).collect();
    let numeric = finite_difference_gradient(
        |x| {
            let mut tape = Tape::new();
            let vars: Vec<Var> = unflatten(x, inputs).into_iter().map(|t| tape.param(t)).collect();
            let out = build(&mut tape, &vars);
            let v = tape.value(out).data();
            Ok(match &reduce {
                None => v[0] as f64,
                Some(r) => v.iter().zip(r.data()).map(|(&a, &b)| a as f64 * b as f64).sum(),
            })
        },
        &point,
        FD_STEP,
    )
    .unwrap();
    relative_error(&analytic, &numeric)
}

fn worst_primitive_error(seed: u64, mut gen: impl FnMut(&mut ChaCha8Rng) -> Vec<Tensor>, build: &Build) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..GRAD_INSTANCES)
        .map(|i| {
            let inputs = gen(&mut rng);
            assert!(inputs.iter().map(Tensor::len).sum::<usize>() <= 200);
            primitive_error(&inputs, build, seed * 1000 + i as u64)
        })
        .fold(0.0, f64::max)
}

fn offset_pair(r: &mut ChaCha8Rng) -> Vec<Tensor> {
    let a = tensor(r, &[2, 4], -0.9, 0.9);
    let offset = away_from_zero(r, &[2, 4], 0.05, 0.5);
    let b = Tensor::new(vec![2, 4], a.data().iter().zip(offset.data()).map(|(x, o)| x + o).collect()).unwrap();
    vec![a, b]
}

/// Worst relative error over the random instances of every tape primitive.
pub fn primitive_gradient_errors() -> Vec<(&'static str, f64)> {
    let two = |r: &mut ChaCha8Rng| vec![tensor(r, &[3, 4], -1.0, 1.0), tensor(r, &[3, 4], -1.0, 1.0)];
    let mask = vec![2.0, 0.0, 2.0, 2.0, 0.0, 0.0, 2.0, 0.0, 2.0, 2.0, 2.0, 0.0];
    vec![
        ("add", worst_primitive_error(1, two, &|t, v| t.add(v[0], v[1]).unwrap())),
        ("sub", worst_primitive_error(2, two, &|t, v| t.sub(v[0], v[1]).unwrap())),
        ("mul", worst_primitive_error(3, two, &|t, v| t.mul(v[0], v[1]).unwrap())),
        ("scale", worst_primitive_error(4, |r| vec![tensor(r, &[5], -1.0, 1.0)], &|t, v| t.scale(v[0], -2.5).unwrap())),
        ("sum", worst_primitive_error(5, |r| vec![tensor(r, &[2, 3], -1.0, 1.0)], &|t, v| t.sum(v[0]).unwrap())),
        ("mean", worst_primitive_error(6, |r| vec![tensor(r, &[2, 3], -1.0, 1.0)], &|t, v| t.mean(v[0]).unwrap())),
        ("relu", worst_primitive_error(7, |r| vec![away_from_zero(r, &[4, 5], 0.05, 1.0)], &|t, v| t.relu(v[0]).unwrap())),
        (
            "dropout",
            worst_primitive_error(8, |r| vec![tensor(r, &[2, 6], -1.0, 1.0)], &move |t, v| t.dropout(v[0], mask.clone()).unwrap()),
        ),
        ("l1", worst_primitive_error(9, |r| vec![away_from_zero(r, &[3, 4], 0.05, 1.0)], &|t, v| t.l1(v[0]).unwrap())),
        (
            "squared_norm",
            worst_primitive_error(10, |r| vec![tensor(r, &[3, 4], -1.0, 1.0)], &|t, v| t.squared_norm(v[0]).unwrap()),
        ),
        (
            "linear",
            worst_primitive_error(
                11,
                |r| vec![tensor(r, &[3, 4], -1.0, 1.0), tensor(r, &[5, 4], -1.0, 1.0), tensor(r, &[5], -1.0, 1.0)],
                &|t, v| t.linear(v[0], v[1], v[2]).unwrap(),
            ),
        ),
        ("softmax", worst_primitive_error(12, |r| vec![tensor(r, &[3, 4], -2.0, 2.0)], &|t, v| t.softmax(v[0]).unwrap())),
        (
            "softmax_cross_entropy",
            worst_primitive_error(13, |r| vec![tensor(r, &[4, 5], -2.0, 2.0)], &|t, v| {
                t.softmax_cross_entropy(v[0], &[0, 3, 4, 3]).unwrap()
            }),
        ),
        (
            "conv1d",
            worst_primitive_error(
                14,
                |r| vec![tensor(r, &[2, 7, 3], -1.0, 1.0), tensor(r, &[4, 3, 3], -1.0, 1.0), tensor(r, &[4], -1.0, 1.0)],
                &|t, v| t.conv1d(v[0], v[1], v[2]).unwrap(),
            ),
        ),
        (
            "lstm",
            worst_primitive_error(
                15,
                |r| {
                    vec![
                        tensor(r, &[2, 5, 3], -1.0, 1.0),
                        tensor(r, &[12, 3], -0.8, 0.8),
                        tensor(r, &[12, 3], -0.8, 0.8),
                        tensor(r, &[12], -0.5, 0.5),
                    ]
                },
                &|t, v| t.lstm(v[0], v[1], v[2], v[3]).unwrap(),
            ),
        ),
        ("last_step", worst_primitive_error(16, |r| vec![tensor(r, &[2, 4, 3], -1.0, 1.0)], &|t, v| t.last_step(v[0]).unwrap())),
        ("mae", worst_primitive_error(17, offset_pair, &|t, v| t.mae(v[0], v[1]).unwrap())),
        ("mse", worst_primitive_error(18, offset_pair, &|t, v| t.mse(v[0], v[1]).unwrap())),
        (
            "msle",
            worst_primitive_error(19, |r| vec![tensor(r, &[2, 4], -0.5, 2.0), tensor(r, &[2, 4], -0.5, 2.0)], &|t, v| {
                t.msle(v[0], v[1]).unwrap()
            }),
        ),
        (
            "cosine",
            worst_primitive_error(20, |r| vec![tensor(r, &[3, 4], -1.0, 1.0), tensor(r, &[3, 4], -1.0, 1.0)], &|t, v| {
                t.cosine(v[0], v[1]).unwrap()
            }),
        ),
    ]
}

/// One conv layer and one LSTM layer; under 100 embedder parameters.
pub fn tiny_meta() -> ModelMeta {
    ModelMeta {
        input_channels: 2,
        window_len: 6,
        num_classes: 3,
        domain: Domain::Target,
        arch: Architecture {
            conv_layers: 1,
            conv_filters: 2,
            kernel: 3,
            lstm_layers: 1,
            lstm_hidden: 3,
        },
    }
}

fn embedder_tensors(m: &ModelParams) -> Vec<Tensor> {
    let n = m.tensors().len() - 2;
    m.tensors().into_iter().take(n).cloned().collect()
}

fn with_params(base: &ModelParams, tensors: Vec<Tensor>) -> ModelParams {
    let mut m = base.clone();
    for (dst, src) in m.tensors_mut().into_iter().zip(tensors) {
        *dst = src;
    }
    m
}

fn conv_preactivations(m: &ModelParams, x: &Tensor) -> Vec<f32> {
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let w = tape.constant(m.embedder.conv[0].weight.clone());
    let b = tape.constant(m.embedder.conv[0].bias.clone());
    let c = tape.conv1d(xv, w, b).unwrap();
    tape.value(c).data().to_vec()
}

pub fn tape_embeddings(m: &ModelParams, x: &Tensor) -> Vec<f32> {
    let mut tape = Tape::new();
    let bound = BoundModel::bind(&mut tape, m, Trainable::NONE);
    let xv = tape.constant(x.clone());
    let e = bound.embed(&mut tape, xv).unwrap();
    tape.value(e).data().to_vec()
}

/// A tiny model, a `[2, 6, 2]` input batch and fixed source embeddings.
pub struct Instance {
    pub model: ModelParams,
    pub input: Tensor,
    pub e_s: Tensor,
}

/// Draws an instance whose ReLU inputs and embeddings sit away from zero, so
/// no ±h perturbation crosses a kink of ReLU, MAE or L1.
pub fn instance(rng: &mut ChaCha8Rng) -> Instance {
    loop {
        let mut model = ModelParams::init(tiny_meta(), rng).unwrap();
        for t in model.tensors_mut() {
            let shape = t.shape().to_vec();
            *t = away_from_zero(rng, &shape, 0.02, 0.3);
        }
        let input = tensor(rng, &[2, 6, 2], -1.0, 1.0);
        if conv_preactivations(&model, &input).iter().any(|v| v.abs() < 0.02) {
            continue;
        }
        let e_t = tape_embeddings(&model, &input);
        if e_t.iter().any(|v| v.abs() < 0.02) {
            continue;
        }
        let offset = away_from_zero(rng, &[2, 3], 0.02, 0.1);
        let e_s = Tensor::new(vec![2, 3], e_t.iter().zip(offset.data()).map(|(e, o)| e + o).collect()).unwrap();
        return Instance { model, input, e_s };
    }
}

pub fn replication_tape(inst: &Instance, tensors: Vec<Tensor>, spec: &LossSpec) -> (Tape, Var, Vec<Var>) {
    let model = with_params(&inst.model, tensors);
    let mut tape = Tape::new();
    let bound = BoundModel::bind(&mut tape, &model, Trainable::EMBEDDER);
    let x = tape.constant(inst.input.clone());
    let e_t = bound.embed(&mut tape, x).unwrap();
    let e_s = tape.constant(inst.e_s.clone());
    let vars = bound.embedder_vars();
    let weights: Vec<Var> = model.embedder.weight_indices().into_iter().map(|i| vars[i]).collect();
    let loss = replication_loss_on_tape(&mut tape, e_s, e_t, spec, &weights).unwrap();
    (tape, loss, vars)
}

/// The 20 replication-loss variants: four kinds unregularized, and each kind
/// with L1 or L2 on either target.
pub fn replication_specs() -> Vec<LossSpec> {
    let mut specs = Vec::new();
    for kind in LossKind::ALL {
        specs.push(LossSpec::unregularized(kind));
        for reg in [Regularization::L1, Regularization::L2] {
            for target in [RegTarget::EmbedderWeights, RegTarget::EmbeddingActivations] {
                // large enough that the penalty gradient is visible next to the distance term
                specs.push(LossSpec::new(kind, reg, target, 0.05).unwrap());
            }
        }
    }
    specs
}

pub fn spec_name(spec: &LossSpec) -> String {
    match spec.regularization {
        Regularization::None => spec.label(),
        _ => format!(
            "{} on {}",
            spec.label(),
            match spec.target {
                RegTarget::EmbedderWeights => "weights",
                RegTarget::EmbeddingActivations => "activations",
            }
        ),
    }
}

/// Worst relative error of replication-loss gradients with respect to the
/// embedder parameters, per loss variant.
pub fn replication_gradient_errors() -> Vec<(String, f64)> {
    replication_specs()
        .iter()
        .enumerate()
        .map(|(si, spec)| {
            let mut rng = ChaCha8Rng::seed_from_u64(100 + si as u64);
            let mut worst = 0.0f64;
            for _ in 0..GRAD_INSTANCES {
                let inst = instance(&mut rng);
                let start = embedder_tensors(&inst.model);
                let (tape, loss, vars) = replication_tape(&inst, start.clone(), spec);
                let analytic = flatten_grads(&tape.backward(loss).unwrap(), &vars, &start);
                let point: Vec<f32> = start.iter().flat_map(|t| t.data().iter().copied()).collect();
                assert!(point.len() <= 200);
                let numeric = finite_difference_gradient(
                    |x| {
                        let (tape, loss, _) = replication_tape(&inst, unflatten(x, &start), spec);
                        Ok(tape.value(loss).item() as f64)
                    },
                    &point,
                    FD_STEP,
                )
                .unwrap();
                worst = worst.max(relative_error(&analytic, &numeric));
            }
            (spec_name(spec), worst)
        })
        .collect()
}

/// Worst relative error of the cross-entropy gradient with respect to every
/// parameter of the tiny model.
pub fn cross_entropy_gradient_error() -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(300);
    let mut worst = 0.0f64;
    for _ in 0..GRAD_INSTANCES {
        let inst = instance(&mut rng);
        let start: Vec<Tensor> = inst.model.tensors().into_iter().cloned().collect();
        let value = |tensors: Vec<Tensor>| {
            let model = with_params(&inst.model, tensors);
            let mut tape = Tape::new();
            let bound = BoundModel::bind(&mut tape, &model, Trainable::ALL);
            let x = tape.constant(inst.input.clone());
            let e = bound.embed(&mut tape, x).unwrap();
            let logits = bound.logits(&mut tape, e).unwrap();
            let loss = tape.softmax_cross_entropy(logits, &[2, 0]).unwrap();
            (tape, loss, bound.vars())
        };
        let (tape, loss, vars) = value(start.clone());
        let analytic = flatten_grads(&tape.backward(loss).unwrap(), &vars, &start);
        let point: Vec<f32> = start.iter().flat_map(|t| t.data().iter().copied()).collect();
        let numeric = finite_difference_gradient(
            |x| {
                let (tape, loss, _) = value(unflatten(x, &start));
                Ok(tape.value(loss).item() as f64)
            },
            &point,
            FD_STEP,
        )
        .unwrap();
        worst = worst.max(relative_error(&analytic, &numeric));
    }
    worst
}

pub fn embedder_start(inst: &Instance) -> Vec<Tensor> {
    embedder_tensors(&inst.model)
}

// ---------------------------------------------------------------------------
// metric oracles

/// Per-class `(precision, recall, f1)` and macro means, counted one class at
/// a time by scanning every cell.
pub struct BruteForce {
    pub per_class: Vec<(f64, f64, f64)>,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub accuracy: f64,
}

pub fn brute_force_ovr(counts: &[Vec<u64>]) -> BruteForce {
    let k = counts.len();
    let mut per_class = Vec::with_capacity(k);
    let mut correct = 0u64;
    let mut total = 0u64;
    for positive in 0..k {
        let (mut tp, mut fp, mut fn_) = (0u64, 0u64, 0u64);
        for (truth, row) in counts.iter().enumerate() {
            for (pred, &n) in row.iter().enumerate() {
                match (truth == positive, pred == positive) {
                    (true, true) => tp += n,
                    (false, true) => fp += n,
                    (true, false) => fn_ += n,
                    (false, false) => {}
                }
            }
        }
        let p = if tp + fp == 0 { 0.0 } else { tp as f64 / (tp + fp) as f64 };
        let r = if tp + fn_ == 0 { 0.0 } else { tp as f64 / (tp + fn_) as f64 };
        let f = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
        per_class.push((p, r, f));
    }
    for (truth, row) in counts.iter().enumerate() {
        for (pred, &n) in row.iter().enumerate() {
            total += n;
            if truth == pred {
                correct += n;
            }
        }
    }
    let mean = |i: usize| per_class.iter().map(|c| [c.0, c.1, c.2][i]).sum::<f64>() / k as f64;
    BruteForce {
        precision: mean(0),
        recall: mean(1),
        f1: mean(2),
        accuracy: if total == 0 { 0.0 } else { correct as f64 / total as f64 },
        per_class,
    }
}

/// Random `K×K` matrix, K in 2..=8, with some empty rows and columns.
pub fn random_confusion(rng: &mut ChaCha8Rng) -> ConfusionMatrix {
    let k = rng.gen_range(2..=8);
    let dead_row = rng.gen_bool(0.2).then(|| rng.gen_range(0..k));
    let dead_col = rng.gen_bool(0.2).then(|| rng.gen_range(0..k));
    let counts = (0..k)
        .map(|t| {
            (0..k)
                .map(|p| {
                    if Some(t) == dead_row || Some(p) == dead_col {
                        0
                    } else if rng.gen_bool(0.3) {
                        0
                    } else {
                        rng.gen_range(0..50)
                    }
                })
                .collect()
        })
        .collect();
    ConfusionMatrix { counts }
}

/// Mann–Whitney statistic: share of (positive, negative) pairs ranked
/// correctly, ties counting one half.
pub fn mann_whitney(scores: &[Vec<f32>], truths: &[usize], class: usize) -> Option<f64> {
    let pos: Vec<f32> = scores.iter().zip(truths).filter(|(_, &t)| t == class).map(|(s, _)| s[class]).collect();
    let neg: Vec<f32> = scores.iter().zip(truths).filter(|(_, &t)| t != class).map(|(s, _)| s[class]).collect();
    if pos.is_empty() || neg.is_empty() {
        return None;
    }
    let mut wins = 0.0f64;
    for &p in &pos {
        for &n in &neg {
            if p > n {
                wins += 1.0;
            } else if p == n {
                wins += 0.5;
            }
        }
    }
    Some(wins / (pos.len() * neg.len()) as f64)
}

/// Softmax-normalized random scores; every other set is coarsely quantized
/// so ties are common.
pub fn random_scores(rng: &mut ChaCha8Rng, index: usize) -> (Vec<Vec<f32>>, Vec<usize>) {
    let k = rng.gen_range(2..=5);
    let n = rng.gen_range(2..=60);
    let quantize = index % 2 == 1;
    let scores = (0..n)
        .map(|_| {
            let raw: Vec<f32> = (0..k)
                .map(|_| {
                    let v: f32 = rng.gen_range(-2.0..2.0);
                    if quantize {
                        v.round()
                    } else {
                        v
                    }
                })
                .collect();
            let max = raw.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
            let exps: Vec<f32> = raw.iter().map(|v| (v - max).exp()).collect();
            let sum: f32 = exps.iter().sum();
            exps.iter().map(|e| e / sum).collect()
        })
        .collect();
    let truths = (0..n).map(|_| rng.gen_range(0..k)).collect();
    (scores, truths)
}

// ---------------------------------------------------------------------------
// experiment fixtures

/// Four 16-map convolutions and two 32-cell LSTMs: the full layer structure
/// at a width that keeps multi-seed synthetic sweeps to minutes on one core.
pub const COMPACT_ARCH: &str = "
[architecture]
conv_layers = 4
conv_filters = 16
kernel = 5
lstm_layers = 2
lstm_hidden = 32
";

/// Two narrow layers, for runs that only check plumbing.
pub const TINY_ARCH: &str = "
[architecture]
conv_layers = 2
conv_filters = 8
kernel = 5
lstm_layers = 1
lstm_hidden = 16
";

/// Synthetic experiment config. `extra` is appended verbatim.
pub fn synthetic_config(kind: &str, seed: u64, repetitions: usize, arch: &str, epochs: usize, windows_per_class: usize, extra: &str) -> ExperimentConfig {
    let text = format!(
        "version = 1
kind = \"{kind}\"
seed = {seed}
repetitions = {repetitions}
{extra}

[dataset]
kind = \"synthetic\"
[dataset.config]
windows_per_class = {windows_per_class}
{arch}
[source_training]
max_epochs = {epochs}
[adaptation]
max_epochs = {epochs}
[baseline]
max_epochs = {epochs}
"
    );
    ExperimentConfig::from_toml(&text).unwrap_or_else(|e| panic!("{}\n{}", e, text))
}
