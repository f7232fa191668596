//! Tape gradients against central finite differences.

mod common;

use common::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sitetransfer::model::embed_batch;
use sitetransfer::numerics::{Tape, Tensor};
use sitetransfer::training::LossSpec;

#[test]
fn linear_form_example() {
    let mut tape = Tape::new();
    let w = tape.param(Tensor::new(vec![2], vec![1.0, 2.0]).unwrap());
    let x = tape.constant(Tensor::new(vec![2], vec![3.0, 4.0]).unwrap());
    let p = tape.mul(w, x).unwrap();
    let y = tape.sum(p).unwrap();
    assert_eq!(tape.value(y).item(), 11.0);
    let g = tape.backward(y).unwrap();
    assert_eq!(g.get(w).unwrap().data(), &[3.0, 4.0]);
}

#[test]
fn dead_relu_example() {
    let mut tape = Tape::new();
    let x = tape.param(Tensor::new(vec![1], vec![-5.0]).unwrap());
    let y = tape.relu(x).unwrap();
    assert_eq!(tape.value(y).item(), 0.0);
    let g = tape.backward(y).unwrap();
    assert_eq!(g.get_or_zeros(x, &[1]).data(), &[0.0]);
}

#[test]
fn every_primitive_matches_finite_differences() {
    let errors = primitive_gradient_errors();
    assert_eq!(errors.len(), 20);
    for (name, err) in errors {
        assert!(err < GRAD_TOL, "{}: worst relative error {:.3e}", name, err);
    }
}

#[test]
fn replication_losses_match_finite_differences() {
    let errors = replication_gradient_errors();
    assert_eq!(errors.len(), 20);
    for (name, err) in errors {
        assert!(err < GRAD_TOL, "{}: worst relative error {:.3e}", name, err);
    }
}

#[test]
fn cross_entropy_through_whole_model_matches_finite_differences() {
    let err = cross_entropy_gradient_error();
    assert!(err < GRAD_TOL, "worst relative error {:.3e}", err);
}

#[test]
fn replayed_tape_is_bit_identical() {
    let mut rng = ChaCha8Rng::seed_from_u64(400);
    let inst = instance(&mut rng);
    let spec = LossSpec::default();
    let run = || {
        let (tape, loss, vars) = replication_tape(&inst, embedder_start(&inst), &spec);
        let g = tape.backward(loss).unwrap();
        let grads: Vec<Vec<u32>> = vars.iter().map(|&v| g.get(v).unwrap().data().iter().map(|x| x.to_bits()).collect()).collect();
        (tape.value(loss).item().to_bits(), grads)
    };
    assert_eq!(run(), run());
}

#[test]
fn inference_path_matches_tape_forward() {
    let mut rng = ChaCha8Rng::seed_from_u64(401);
    let inst = instance(&mut rng);
    // [B, T, C] batch back to per-window [C, T] signals
    let d = inst.input.data();
    let signals: Vec<Tensor> = (0..2)
        .map(|b| {
            let mut s = vec![0.0; 12];
            for t in 0..6 {
                for c in 0..2 {
                    s[c * 6 + t] = d[(b * 6 + t) * 2 + c];
                }
            }
            Tensor::new(vec![2, 6], s).unwrap()
        })
        .collect();
    let refs: Vec<&Tensor> = signals.iter().collect();
    let api: Vec<f32> = embed_batch(&inst.model, &refs).unwrap().iter().flat_map(|e| e.values().to_vec()).collect();
    assert_eq!(api, tape_embeddings(&inst.model, &inst.input));
}
