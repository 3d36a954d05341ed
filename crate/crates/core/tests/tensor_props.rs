//! Behavioral properties of the tape primitives beyond gradient
//! correctness.

use creativity_core::rng::Rng;
use creativity_core::tensor::{ParamSet, Tape, Tensor};
use creativity_core::CoreError;
use proptest::prelude::*;

#[test]
fn softmax_of_zeros_is_uniform() {
    let mut tape = Tape::new();
    let x = tape.constant(vec![3], vec![0.0; 3]).unwrap();
    let s = tape.softmax(x).unwrap();
    for &v in tape.values(s) {
        assert!((v - 1.0 / 3.0).abs() < 1e-15);
    }
}

#[test]
fn sigmoid_of_zero_is_half() {
    let mut tape = Tape::new();
    let x = tape.scalar(0.0).unwrap();
    let s = tape.sigmoid(x).unwrap();
    assert_eq!(tape.values(s), &[0.5]);
}

#[test]
fn conv1d_output_length_is_l_minus_k_plus_1() {
    let mut rng = Rng::new(1);
    for (l, k) in [(5usize, 2usize), (8, 3), (4, 4), (9, 1)] {
        let mut tape = Tape::new();
        let x = tape
            .constant(vec![l, 2], (0..l * 2).map(|i| i as f64 * 0.1).collect())
            .unwrap();
        let w = tape
            .constant(vec![k, 2, 3], (0..k * 6).map(|_| rng.uniform()).collect())
            .unwrap();
        let b = tape.constant(vec![3], vec![0.0; 3]).unwrap();
        let c = tape.conv1d(x, w, b).unwrap();
        assert_eq!(tape.shape(c), &[l - k + 1, 3]);
    }
}

proptest! {
    #[test]
    fn softmax_is_a_distribution(values in prop::collection::vec(-50.0f64..50.0, 1..16)) {
        let mut tape = Tape::new();
        let n = values.len();
        let x = tape.constant(vec![n], values).unwrap();
        let s = tape.softmax(x).unwrap();
        let out = tape.values(s);
        prop_assert!(out.iter().all(|&v| v >= 0.0));
        let sum: f64 = out.iter().sum();
        prop_assert!((sum - 1.0).abs() < 1e-12);
    }
}

#[test]
fn dropout_eval_mode_is_identity() {
    let mut tape = Tape::new();
    let x = tape.constant(vec![2, 3], vec![1.0, -2.0, 3.0, 0.5, 0.0, 9.0]).unwrap();
    let d = tape.dropout(x, 0.5, None).unwrap();
    assert_eq!(d, x);
}

#[test]
fn dropout_train_mode_zeroes_about_rate() {
    let mut rng = Rng::new(7);
    let rate = 0.3;
    let mut zeroed = 0usize;
    let n = 10_000usize;
    let mut tape = Tape::new();
    let x = tape.constant(vec![n], vec![1.0; n]).unwrap();
    let d = tape.dropout(x, rate, Some(&mut rng)).unwrap();
    for &v in tape.values(d) {
        if v == 0.0 {
            zeroed += 1;
        } else {
            // Inverted scaling: survivors are divided by the keep rate.
            assert!((v - 1.0 / (1.0 - rate)).abs() < 1e-12);
        }
    }
    let frac = zeroed as f64 / n as f64;
    assert!((frac - rate).abs() < 0.02, "zeroed fraction {frac}");
}

#[test]
fn same_seed_same_values_and_grads() {
    let run = || {
        let mut rng = Rng::new(123);
        let mut params = ParamSet::new();
        params
            .add("w", Tensor::uniform_init(vec![4, 4], 4, &mut rng), true)
            .unwrap();
        let mut tape = Tape::new();
        let w = tape.param(&params, 0).unwrap();
        let h = tape.tanh(w).unwrap();
        let d = tape.dropout(h, 0.5, Some(&mut rng)).unwrap();
        let loss = tape.sum(d).unwrap();
        tape.backward(loss).unwrap();
        params.zero_grads();
        tape.accumulate_param_grads(&mut params);
        (
            params.get(0).tensor.values().to_vec(),
            params.get(0).tensor.grad().unwrap().to_vec(),
        )
    };
    let (v1, g1) = run();
    let (v2, g2) = run();
    assert_eq!(v1, v2);
    assert_eq!(g1, g2);
}

#[test]
fn shape_mismatch_names_both_shapes() {
    let mut tape = Tape::new();
    let a = tape.constant(vec![2, 3], vec![0.0; 6]).unwrap();
    let b = tape.constant(vec![3, 2], vec![0.0; 6]).unwrap();
    match tape.add(a, b) {
        Err(CoreError::ShapeMismatch { lhs, rhs, .. }) => {
            assert_eq!(lhs, vec![2, 3]);
            assert_eq!(rhs, vec![3, 2]);
        }
        other => panic!("expected shape mismatch, got {other:?}"),
    }
}

#[test]
fn non_finite_input_rejected() {
    assert!(Tensor::new(vec![2], vec![1.0, f64::NAN]).is_err());
    let mut tape = Tape::new();
    assert!(tape.constant(vec![1], vec![f64::INFINITY]).is_err());
}

#[test]
fn backward_requires_scalar_and_consumes_tape() {
    let mut tape = Tape::new();
    let x = tape.constant(vec![2], vec![1.0, 2.0]).unwrap();
    assert!(matches!(
        tape.backward(x),
        Err(CoreError::LossNotScalar { .. })
    ));
    let s = tape.sum(x).unwrap();
    tape.backward(s).unwrap();
    assert!(matches!(tape.backward(s), Err(CoreError::TapeConsumed)));
}

#[test]
fn linear_loss_grad_equals_input() {
    let mut params = ParamSet::new();
    params
        .add("w", Tensor::new(vec![3], vec![0.3, -0.1, 2.0]).unwrap(), true)
        .unwrap();
    let x = [1.5, -0.5, 4.0];
    let mut tape = Tape::new();
    let w = tape.param(&params, 0).unwrap();
    let c = tape.constant(vec![3], x.to_vec()).unwrap();
    let m = tape.mul(w, c).unwrap();
    let loss = tape.sum(m).unwrap();
    tape.backward(loss).unwrap();
    params.zero_grads();
    tape.accumulate_param_grads(&mut params);
    assert_eq!(params.get(0).tensor.grad().unwrap(), &x);
}

#[test]
fn unreachable_parameter_gets_zero_grad() {
    let mut params = ParamSet::new();
    params
        .add("used", Tensor::new(vec![1], vec![2.0]).unwrap(), true)
        .unwrap();
    params
        .add("unused", Tensor::new(vec![2], vec![1.0, 1.0]).unwrap(), true)
        .unwrap();
    let mut tape = Tape::new();
    let w = tape.param(&params, 0).unwrap();
    let loss = tape.sum(w).unwrap();
    tape.backward(loss).unwrap();
    params.zero_grads();
    tape.accumulate_param_grads(&mut params);
    assert_eq!(params.by_name("unused").unwrap().tensor.grad().unwrap(), &[0.0, 0.0]);
}

#[test]
fn max_over_time_needs_a_valid_window() {
    let mut tape = Tape::new();
    let x = tape.constant(vec![3, 2], vec![0.0; 6]).unwrap();
    assert!(tape.max_over_time(x, &[false, false, false]).is_err());
}

#[test]
fn duplicate_parameter_names_rejected() {
    let mut params = ParamSet::new();
    params.add("w", Tensor::zeros(vec![1]), true).unwrap();
    assert!(params.add("w", Tensor::zeros(vec![1]), true).is_err());
}
