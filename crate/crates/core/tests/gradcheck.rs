//! Finite-difference verification of every tape primitive and of the two
//! reduced model architectures.

use creativity_core::models::{CnnConfig, HeadKind, LanguageModel, LmConfig, NoveltyClassifier, ValueDiscriminator};
use creativity_core::rng::Rng;
use creativity_core::tensor::{finite_diff_check, GradMode, ParamSet, Tape, Tensor};
use creativity_core::Result;

const TOL: f64 = 1e-4;
const STEP: f64 = 1e-5;
const TRIALS: usize = 100;

fn random_tensor(shape: Vec<usize>, rng: &mut Rng) -> Tensor {
    let n: usize = shape.iter().product();
    let values: Vec<f64> = (0..n).map(|_| rng.uniform_in(-2.0, 2.0)).collect();
    Tensor::new(shape, values).unwrap()
}

/// Run `TRIALS` finite-difference sweeps of a scalar loss built by
/// `build` from freshly randomized parameters.
fn check_primitive<B>(label: &str, shapes: &[(&str, Vec<usize>)], build: B)
where
    B: Fn(&mut Tape, &ParamSet) -> Result<creativity_core::tensor::TensorId>,
{
    let root = Rng::new(0x5eed);
    for trial in 0..TRIALS {
        let mut rng = root.split_index(label, trial as u64);
        let mut params = ParamSet::new();
        for (name, shape) in shapes {
            params
                .add(name, random_tensor(shape.clone(), &mut rng), true)
                .unwrap();
        }
        let report = finite_diff_check(
            &mut params,
            |p, mode| {
                let mut tape = Tape::new();
                let loss = build(&mut tape, p)?;
                let v = tape.scalar_value(loss);
                if mode == GradMode::WithGrad {
                    tape.backward(loss)?;
                    p.zero_grads();
                    tape.accumulate_param_grads(p);
                }
                Ok(v)
            },
            TOL,
            STEP,
        )
        .unwrap();
        assert!(
            report.pass(),
            "{label} trial {trial} failed: {:?}",
            report.per_param
        );
    }
}

fn bind(tape: &mut Tape, p: &ParamSet, name: &str) -> creativity_core::tensor::TensorId {
    tape.param(p, p.slot(name).unwrap()).unwrap()
}

#[test]
fn grad_add_mul_affine() {
    check_primitive("add-mul", &[("a", vec![3, 4]), ("b", vec![3, 4])], |t, p| {
        let a = bind(t, p, "a");
        let b = bind(t, p, "b");
        let s = t.add(a, b)?;
        let m = t.mul(s, a)?;
        let f = t.affine(m, 0.7, -0.3)?;
        let h = t.tanh(f)?;
        t.sum(h)
    });
}

#[test]
fn grad_add_bias_add_n() {
    check_primitive(
        "add-bias",
        &[("a", vec![3, 4]), ("b", vec![3, 4]), ("bias", vec![4])],
        |t, p| {
            let a = bind(t, p, "a");
            let b = bind(t, p, "b");
            let bias = bind(t, p, "bias");
            let ab = t.add_bias(a, bias)?;
            let bb = t.add_bias(b, bias)?;
            let sa = t.sum(ab)?;
            let sb = t.sum(bb)?;
            let m = t.mul(sa, sb)?;
            let n = t.add_n(&[sa, sb, m])?;
            t.tanh(n)
        },
    );
}

#[test]
fn grad_matmul() {
    check_primitive("matmul", &[("a", vec![2, 3]), ("b", vec![3, 4])], |t, p| {
        let a = bind(t, p, "a");
        let b = bind(t, p, "b");
        let c = t.matmul(a, b)?;
        let h = t.tanh(c)?;
        t.sum(h)
    });
}

#[test]
fn grad_sigmoid_tanh() {
    check_primitive("sig-tanh", &[("a", vec![2, 5])], |t, p| {
        let a = bind(t, p, "a");
        let s = t.sigmoid(a)?;
        let h = t.tanh(a)?;
        let m = t.mul(s, h)?;
        t.sum(m)
    });
}

#[test]
fn grad_ln() {
    check_primitive("ln", &[("a", vec![6])], |t, p| {
        let a = bind(t, p, "a");
        // Positivity for ln through a sigmoid squash.
        let s = t.sigmoid(a)?;
        let l = t.ln(s)?;
        t.mean(l)
    });
}

#[test]
fn grad_softmax() {
    check_primitive("softmax", &[("a", vec![2, 4]), ("c", vec![2, 4])], |t, p| {
        let a = bind(t, p, "a");
        let c = bind(t, p, "c");
        let s = t.softmax(a)?;
        let m = t.mul(s, c)?;
        t.sum(m)
    });
}

#[test]
fn grad_embedding() {
    check_primitive("embedding", &[("table", vec![5, 3])], |t, p| {
        let table = bind(t, p, "table");
        // Repeated ids exercise gradient accumulation into one row.
        let e = t.embedding(table, &[0, 2, 2, 4, 0])?;
        let h = t.tanh(e)?;
        t.sum(h)
    });
}

#[test]
fn grad_conv1d_max_over_time() {
    check_primitive(
        "conv",
        &[("x", vec![6, 3]), ("w", vec![2, 3, 4]), ("b", vec![4])],
        |t, p| {
            let x = bind(t, p, "x");
            let w = bind(t, p, "w");
            let b = bind(t, p, "b");
            let c = t.conv1d(x, w, b)?;
            let a = t.tanh(c)?;
            let valid = [true, true, false, true, true];
            let m = t.max_over_time(a, &valid)?;
            t.sum(m)
        },
    );
}

#[test]
fn grad_dropout_train_mode() {
    check_primitive("dropout", &[("a", vec![4, 5])], |t, p| {
        let a = bind(t, p, "a");
        // The mask must be identical across evaluations of one sweep, so
        // the rng is rebuilt from a constant seed every call.
        let mut mask_rng = Rng::new(99);
        let d = t.dropout(a, 0.4, Some(&mut mask_rng))?;
        let h = t.tanh(d)?;
        t.sum(h)
    });
}

#[test]
fn grad_concat_row_slice_pick() {
    check_primitive(
        "concat",
        &[("a", vec![1, 3]), ("b", vec![1, 4]), ("c", vec![1, 3])],
        |t, p| {
            let a = bind(t, p, "a");
            let b = bind(t, p, "b");
            let c = bind(t, p, "c");
            let cols = t.concat_cols(&[a, b])?;
            let rows = t.concat_rows(&[a, c])?;
            let r1 = t.row(rows, 1)?;
            let sl = t.slice_cols(cols, 2, 4)?;
            let s1 = t.tanh(sl)?;
            let s2 = t.tanh(r1)?;
            let sum1 = t.sum(s1)?;
            let sum2 = t.sum(s2)?;
            let pk = t.pick(cols, 5)?;
            t.add_n(&[sum1, sum2, pk])
        },
    );
}

#[test]
fn grad_losses() {
    check_primitive("losses", &[("logits", vec![3, 4])], |t, p| {
        let logits = bind(t, p, "logits");
        let nll = t.sparse_cross_entropy(logits, &[1, 3, 0])?;
        let weighted = t.seq_nll(logits, &[2, 0, 1], &[0.3, -0.7, 1.4])?;
        let dense = t.cross_entropy(
            logits,
            &[
                0.1, 0.2, 0.3, 0.4, 0.25, 0.25, 0.25, 0.25, 0.7, 0.1, 0.1, 0.1,
            ],
        )?;
        t.add_n(&[nll, weighted, dense])
    });
}

fn lm_fd_loss(
    model: &LanguageModel,
    tokens: &[u32],
    p: &mut ParamSet,
    mode: GradMode,
) -> Result<f64> {
    // The sweep perturbs a scratch ParamSet; evaluate a model that
    // borrows those weights.
    let eval_model = LanguageModel {
        config: model.config.clone(),
        params: p.clone(),
    };
    let mut tape = Tape::new();
    let loss = eval_model.nll_loss(&mut tape, tokens, None)?;
    let v = tape.scalar_value(loss);
    if mode == GradMode::WithGrad {
        tape.backward(loss)?;
        p.zero_grads();
        tape.accumulate_param_grads(p);
    }
    Ok(v)
}

#[test]
fn grad_reduced_lm() {
    let config = LmConfig {
        vocab_size: 8,
        embed_dim: 4,
        context_len: 5,
        lstm_units: 4,
        dropout_rate: 0.0,
    };
    let root = Rng::new(41);
    for trial in 0..20u64 {
        let mut rng = root.split_index("lm-fd", trial);
        let model = LanguageModel::new(config.clone(), &mut rng).unwrap();
        let len = 3 + rng.below(5);
        // Length can exceed context_len to cover the windowed path.
        let tokens: Vec<u32> = (0..len).map(|_| 4 + rng.below(4) as u32).collect();
        let mut params = model.params.clone();
        let report = finite_diff_check(
            &mut params,
            |p, mode| lm_fd_loss(&model, &tokens, p, mode),
            TOL,
            STEP,
        )
        .unwrap();
        assert!(report.pass(), "LM trial {trial}: {:?}", report.per_param);
    }
}

#[test]
fn grad_reduced_cnn() {
    let root = Rng::new(42);
    for trial in 0..20u64 {
        let mut rng = root.split_index("cnn-fd", trial);
        let head = if trial % 2 == 0 {
            HeadKind::Sigmoid
        } else {
            HeadKind::Softmax { num_classes: 3 }
        };
        let config = CnnConfig {
            vocab_size: 8,
            embed_dim: 3,
            max_len: 6,
            kernel_sizes: vec![2, 3],
            filters_per_kernel: 4,
            dropout_rate: 0.0,
            head,
        };
        let len = 2 + rng.below(5);
        let tokens: Vec<u32> = (0..len).map(|_| 4 + rng.below(4) as u32).collect();
        if trial % 2 == 0 {
            let model = ValueDiscriminator::new(config, &mut rng).unwrap();
            let mut params = model.cnn.params.clone();
            let report = finite_diff_check(
                &mut params,
                |p, mode| {
                    let m = ValueDiscriminator {
                        cnn: creativity_core::models::CnnModel {
                            config: model.cnn.config.clone(),
                            params: p.clone(),
                        },
                    };
                    let mut tape = Tape::new();
                    let loss = m.bce_loss(&mut tape, &tokens, trial % 4 == 0, None)?;
                    let v = tape.scalar_value(loss);
                    if mode == GradMode::WithGrad {
                        tape.backward(loss)?;
                        p.zero_grads();
                        tape.accumulate_param_grads(p);
                    }
                    Ok(v)
                },
                TOL,
                STEP,
            )
            .unwrap();
            assert!(report.pass(), "disc trial {trial}: {:?}", report.per_param);
        } else {
            let model = NoveltyClassifier::new(config, &mut rng).unwrap();
            let label = (trial % 3) as usize;
            let mut params = model.cnn.params.clone();
            let report = finite_diff_check(
                &mut params,
                |p, mode| {
                    let m = NoveltyClassifier {
                        cnn: creativity_core::models::CnnModel {
                            config: model.cnn.config.clone(),
                            params: p.clone(),
                        },
                    };
                    let mut tape = Tape::new();
                    let loss = m.ce_loss(&mut tape, &tokens, label, None)?;
                    let v = tape.scalar_value(loss);
                    if mode == GradMode::WithGrad {
                        tape.backward(loss)?;
                        p.zero_grads();
                        tape.accumulate_param_grads(p);
                    }
                    Ok(v)
                },
                TOL,
                STEP,
            )
            .unwrap();
            assert!(report.pass(), "clf trial {trial}: {:?}", report.per_param);
        }
    }
}

#[test]
fn corrupted_gradient_fails_the_check() {
    let mut params = ParamSet::new();
    let mut rng = Rng::new(5);
    params.add("w", random_tensor(vec![4], &mut rng), true).unwrap();
    let report = finite_diff_check(
        &mut params,
        |p, mode| {
            let mut tape = Tape::new();
            let w = tape.param(p, 0)?;
            let h = tape.tanh(w)?;
            let loss = tape.sum(h)?;
            let v = tape.scalar_value(loss);
            if mode == GradMode::WithGrad {
                tape.backward(loss)?;
                p.zero_grads();
                tape.accumulate_param_grads(p);
                for g in p.get_mut(0).tensor.grad_mut().unwrap() {
                    *g *= 1.05;
                }
            }
            Ok(v)
        },
        TOL,
        STEP,
    )
    .unwrap();
    assert!(!report.pass());
}

#[test]
fn zero_parameter_model_passes_vacuously() {
    let mut params = ParamSet::new();
    let report = finite_diff_check(&mut params, |_, _| Ok(1.0), TOL, STEP).unwrap();
    assert!(report.pass());
    assert!(report.per_param.is_empty());
}

#[test]
fn oversized_model_rejected() {
    let mut params = ParamSet::new();
    params
        .add("big", Tensor::zeros(vec![201, 101]), true)
        .unwrap();
    assert!(finite_diff_check(&mut params, |_, _| Ok(0.0), TOL, STEP).is_err());
}
