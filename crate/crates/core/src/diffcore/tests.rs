use super::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const EPS: f64 = 1e-5;
const TOL: f64 = 1e-4;
const POINTS: usize = 100;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn rand_tensor(r: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| r.gen_range(lo..hi)).collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

/// Scalarize through a random constant weighting so every output element
/// contributes a distinct gradient.
fn weighted_sum(tape: &mut Tape, v: Var, w: &Tensor) -> Var {
    let wv = tape.leaf(w.clone());
    let prod = tape.mul(v, wv);
    tape.sum_all(prod)
}

fn check_points<P, F>(name: &str, mut point_fn: P, f: F)
where
    P: FnMut(&mut ChaCha8Rng) -> Tensor,
    F: Fn(&mut Tape, Var, &Tensor) -> Var,
{
    let mut r = rng(0x5eed ^ name.len() as u64);
    for trial in 0..POINTS {
        let point = point_fn(&mut r);
        let w = rand_tensor(&mut r, point.shape(), -1.0, 1.0);
        // Each op closure receives the same aux weights for every FD eval.
        let report = grad_check(|t, x| f(t, x, &w), &point, EPS).unwrap();
        assert!(
            report.passes(TOL),
            "{name} trial {trial}: max rel err {} at element {}",
            report.max_rel_err,
            report.worst_index
        );
    }
}

#[test]
fn fd_elementwise_binary_ops() {
    let mut r = rng(11);
    let aux = rand_tensor(&mut r, &[3, 4], -2.0, 2.0);
    for which in 0..6 {
        let aux = aux.clone();
        check_points(
            &format!("binary{which}"),
            |r| rand_tensor(r, &[3, 4], -2.0, 2.0),
            move |t, x, w| {
                let c = t.leaf(aux.clone());
                let y = match which {
                    0 => t.add(x, c),
                    1 => t.sub(x, c),
                    2 => t.sub(c, x),
                    3 => t.mul(x, c),
                    4 => t.mul(c, x),
                    _ => t.add(c, x),
                };
                weighted_sum(t, y, w)
            },
        );
    }
}

#[test]
fn fd_add_row_broadcast() {
    let mut r = rng(12);
    let bias = rand_tensor(&mut r, &[4], -1.0, 1.0);
    let xfix = rand_tensor(&mut r, &[3, 4], -1.0, 1.0);
    let b2 = bias.clone();
    check_points(
        "arb_x",
        |r| rand_tensor(r, &[3, 4], -2.0, 2.0),
        move |t, x, w| {
            let b = t.leaf(b2.clone());
            let y = t.add_row_broadcast(x, b);
            weighted_sum(t, y, w)
        },
    );
    check_points(
        "arb_bias",
        |r| rand_tensor(r, &[4], -2.0, 2.0),
        move |t, b, _| {
            let x = t.leaf(xfix.clone());
            let y = t.add_row_broadcast(x, b);
            let wv = t.leaf(Tensor::from_vec(
                &[3, 4],
                (0..12).map(|i| 0.2 + (i as f64 * 0.43).cos()).collect(),
            ));
            let prod = t.mul(y, wv);
            t.sum_all(prod)
        },
    );
}

#[test]
fn fd_scale_reshape_transpose() {
    check_points(
        "scale",
        |r| rand_tensor(r, &[2, 5], -3.0, 3.0),
        |t, x, w| {
            let y = t.scale(x, -1.7);
            weighted_sum(t, y, w)
        },
    );
    check_points(
        "reshape",
        |r| rand_tensor(r, &[2, 6], -3.0, 3.0),
        |t, x, w| {
            let y = t.reshape(x, &[3, 4]);
            let wv = t.leaf(w.clone().reshaped(&[3, 4]));
            let prod = t.mul(y, wv);
            t.sum_all(prod)
        },
    );
    check_points(
        "transpose",
        |r| rand_tensor(r, &[3, 5], -3.0, 3.0),
        |t, x, w| {
            let y = t.transpose(x);
            let wv = t.leaf(w.clone().reshaped(&[5, 3]));
            let prod = t.mul(y, wv);
            t.sum_all(prod)
        },
    );
}

#[test]
fn fd_matmul_both_sides() {
    let mut r = rng(13);
    let b = rand_tensor(&mut r, &[4, 2], -1.0, 1.0);
    let a = rand_tensor(&mut r, &[3, 4], -1.0, 1.0);
    let bc = b.clone();
    let out_w = || Tensor::from_vec(&[3, 2], (0..6).map(|i| 0.4 + (i as f64 * 0.61).sin()).collect());
    check_points(
        "matmul_lhs",
        |r| rand_tensor(r, &[3, 4], -2.0, 2.0),
        move |t, x, _| {
            let bv = t.leaf(bc.clone());
            let y = t.matmul(x, bv);
            let wv = t.leaf(out_w());
            let prod = t.mul(y, wv);
            t.sum_all(prod)
        },
    );
    let out_w = || Tensor::from_vec(&[3, 2], (0..6).map(|i| 0.4 + (i as f64 * 0.61).sin()).collect());
    check_points(
        "matmul_rhs",
        |r| rand_tensor(r, &[4, 2], -2.0, 2.0),
        move |t, x, _| {
            let av = t.leaf(a.clone());
            let y = t.matmul(av, x);
            let wv = t.leaf(out_w());
            let prod = t.mul(y, wv);
            t.sum_all(prod)
        },
    );
}

#[test]
fn fd_reductions() {
    check_points(
        "sum_all",
        |r| rand_tensor(r, &[3, 3], -2.0, 2.0),
        |t, x, _w| {
            let y = t.sum_all(x);
            t.scale(y, 1.3)
        },
    );
    check_points(
        "mean_all",
        |r| rand_tensor(r, &[3, 3], -2.0, 2.0),
        |t, x, _w| {
            let y = t.mean_all(x);
            t.scale(y, -0.7)
        },
    );
    for axis in 0..2 {
        check_points(
            &format!("sum_axis{axis}"),
            |r| rand_tensor(r, &[3, 4], -2.0, 2.0),
            move |t, x, _w| {
                let y = t.sum_axis(x, axis);
                let n = t.value(y).numel();
                let wv = t.leaf(Tensor::from_vec(
                    &[n],
                    (0..n).map(|i| 0.3 + i as f64).collect(),
                ));
                let prod = t.mul(y, wv);
                t.sum_all(prod)
            },
        );
        check_points(
            &format!("mean_axis{axis}"),
            |r| rand_tensor(r, &[3, 4], -2.0, 2.0),
            move |t, x, _w| {
                let y = t.mean_axis(x, axis);
                let n = t.value(y).numel();
                let wv = t.leaf(Tensor::from_vec(
                    &[n],
                    (0..n).map(|i| 0.3 - i as f64).collect(),
                ));
                let prod = t.mul(y, wv);
                t.sum_all(prod)
            },
        );
    }
}

#[test]
fn fd_concat_and_gather() {
    let mut r = rng(14);
    let other = rand_tensor(&mut r, &[2, 4], -1.0, 1.0);
    for axis in 0..2 {
        let other = if axis == 0 {
            other.clone()
        } else {
            other.clone().reshaped(&[4, 2])
        };
        check_points(
            &format!("concat{axis}"),
            move |r| {
                if axis == 0 {
                    rand_tensor(r, &[3, 4], -2.0, 2.0)
                } else {
                    rand_tensor(r, &[4, 3], -2.0, 2.0)
                }
            },
            move |t, x, _w| {
                let c = t.leaf(other.clone());
                let y = t.concat(&[x, c], axis);
                let n = t.value(y).numel();
                let shape = t.value(y).shape().to_vec();
                let wv = t.leaf(Tensor::from_vec(
                    &shape,
                    (0..n).map(|i| (i as f64 * 0.11).sin()).collect(),
                ));
                let prod = t.mul(y, wv);
                t.sum_all(prod)
            },
        );
    }
    check_points(
        "row_gather",
        |r| rand_tensor(r, &[4, 3], -2.0, 2.0),
        |t, x, _w| {
            let y = t.row_gather(x, &[2, 0, 2, 3]);
            let wv = t.leaf(Tensor::from_vec(
                &[4, 3],
                (0..12).map(|i| 1.0 + i as f64 * 0.2).collect(),
            ));
            let prod = t.mul(y, wv);
            t.sum_all(prod)
        },
    );
}

#[test]
fn fd_layer_norm_all_inputs() {
    let mut r = rng(15);
    let gamma = rand_tensor(&mut r, &[5], 0.5, 1.5);
    let beta = rand_tensor(&mut r, &[5], -0.5, 0.5);
    let xfix = rand_tensor(&mut r, &[3, 5], -1.0, 1.0);
    let (g2, b2) = (gamma.clone(), beta.clone());
    check_points(
        "layer_norm_x",
        |r| rand_tensor(r, &[3, 5], -2.0, 2.0),
        move |t, x, w| {
            let g = t.leaf(g2.clone());
            let b = t.leaf(b2.clone());
            let y = t.layer_norm(x, g, b, 1e-5);
            weighted_sum(t, y, w)
        },
    );
    let (x2, b3) = (xfix.clone(), beta.clone());
    check_points(
        "layer_norm_gamma",
        |r| rand_tensor(r, &[5], 0.2, 2.0),
        move |t, g, _w| {
            let x = t.leaf(x2.clone());
            let b = t.leaf(b3.clone());
            let y = t.layer_norm(x, g, b, 1e-5);
            let wv = t.leaf(Tensor::from_vec(
                &[3, 5],
                (0..15).map(|i| (i as f64 * 0.37).cos()).collect(),
            ));
            let prod = t.mul(y, wv);
            t.sum_all(prod)
        },
    );
    check_points(
        "layer_norm_beta",
        |r| rand_tensor(r, &[5], -1.0, 1.0),
        move |t, b, _w| {
            let x = t.leaf(xfix.clone());
            let g = t.leaf(gamma.clone());
            let y = t.layer_norm(x, g, b, 1e-5);
            let wv = t.leaf(Tensor::from_vec(
                &[3, 5],
                (0..15).map(|i| (i as f64 * 0.53).sin()).collect(),
            ));
            let prod = t.mul(y, wv);
            t.sum_all(prod)
        },
    );
}

#[test]
fn fd_activations() {
    check_points(
        "gelu",
        |r| rand_tensor(r, &[2, 6], -3.0, 3.0),
        |t, x, w| {
            let y = t.gelu(x);
            weighted_sum(t, y, w)
        },
    );
    check_points(
        "sigmoid",
        |r| rand_tensor(r, &[2, 6], -4.0, 4.0),
        |t, x, w| {
            let y = t.sigmoid(x);
            weighted_sum(t, y, w)
        },
    );
    check_points(
        "softmax_t",
        |r| rand_tensor(r, &[2, 5], -2.0, 2.0),
        |t, x, w| {
            let y = t.softmax_t(x, 0.7);
            weighted_sum(t, y, w)
        },
    );
}

#[test]
fn fd_pointwise_math() {
    check_points(
        "log",
        |r| rand_tensor(r, &[2, 4], 0.1, 3.0),
        |t, x, w| {
            let y = t.log(x);
            weighted_sum(t, y, w)
        },
    );
    check_points(
        "square",
        |r| rand_tensor(r, &[2, 4], -3.0, 3.0),
        |t, x, w| {
            let y = t.square(x);
            weighted_sum(t, y, w)
        },
    );
    check_points(
        "sqrt",
        |r| rand_tensor(r, &[2, 4], 0.05, 4.0),
        |t, x, w| {
            let y = t.sqrt(x);
            weighted_sum(t, y, w)
        },
    );
    // Keep samples away from the hinge kink where FD straddles the corner.
    check_points(
        "max_const",
        |r| loop {
            let t = rand_tensor(r, &[2, 4], -2.0, 2.0);
            if t.data().iter().all(|v| (v - 0.3).abs() > 1e-3) {
                return t;
            }
        },
        |t, x, w| {
            let y = t.max_const(x, 0.3);
            weighted_sum(t, y, w)
        },
    );
}

#[test]
fn fd_smooth_l1_both_sides() {
    let mut r = rng(16);
    let target = rand_tensor(&mut r, &[2, 4], -0.4, 0.4);
    let pred = rand_tensor(&mut r, &[2, 4], -0.4, 0.4);
    let away_from_kink = |x: &Tensor, other: &Tensor| {
        x.data()
            .iter()
            .zip(other.data())
            .all(|(a, b)| ((a - b).abs() - 1.0).abs() > 1e-3)
    };
    let t2 = target.clone();
    check_points(
        "smooth_l1_pred",
        move |r| loop {
            let x = rand_tensor(r, &[2, 4], -2.0, 2.0);
            if away_from_kink(&x, &t2) {
                return x;
            }
        },
        move |t, x, w| {
            let c = t.leaf(target.clone());
            let y = t.smooth_l1(x, c);
            weighted_sum(t, y, w)
        },
    );
    let p2 = pred.clone();
    check_points(
        "smooth_l1_target",
        move |r| loop {
            let x = rand_tensor(r, &[2, 4], -2.0, 2.0);
            if away_from_kink(&x, &p2) {
                return x;
            }
        },
        move |t, x, w| {
            let c = t.leaf(pred.clone());
            let y = t.smooth_l1(c, x);
            weighted_sum(t, y, w)
        },
    );
}

#[test]
fn fd_conv_ops_all_inputs() {
    let mut r = rng(17);
    let w3 = rand_tensor(&mut r, &[3, 2, 3], -1.0, 1.0);
    let b3 = rand_tensor(&mut r, &[3], -0.5, 0.5);
    let x3 = rand_tensor(&mut r, &[2, 8], -1.0, 1.0);
    for target in 0..3 {
        let (w3, b3, x3) = (w3.clone(), b3.clone(), x3.clone());
        check_points(
            &format!("conv1d_{target}"),
            move |r| match target {
                0 => rand_tensor(r, &[2, 8], -2.0, 2.0),
                1 => rand_tensor(r, &[3, 2, 3], -2.0, 2.0),
                _ => rand_tensor(r, &[3], -2.0, 2.0),
            },
            move |t, v, _| {
                let (x, w, b) = match target {
                    0 => (v, t.leaf(w3.clone()), t.leaf(b3.clone())),
                    1 => (t.leaf(x3.clone()), v, t.leaf(b3.clone())),
                    _ => (t.leaf(x3.clone()), t.leaf(w3.clone()), v),
                };
                let y = t.conv1d(x, w, b);
                let n = t.value(y).numel();
                let shape = t.value(y).shape().to_vec();
                let wv = t.leaf(Tensor::from_vec(
                    &shape,
                    (0..n).map(|i| (i as f64 * 0.29).sin()).collect(),
                ));
                let prod = t.mul(y, wv);
                t.sum_all(prod)
            },
        );
    }
    let wt = rand_tensor(&mut r, &[2, 3, 4], -1.0, 1.0);
    let bt = rand_tensor(&mut r, &[3], -0.5, 0.5);
    let xt = rand_tensor(&mut r, &[2, 5], -1.0, 1.0);
    for target in 0..3 {
        let (wt, bt, xt) = (wt.clone(), bt.clone(), xt.clone());
        check_points(
            &format!("conv1d_transpose_{target}"),
            move |r| match target {
                0 => rand_tensor(r, &[2, 5], -2.0, 2.0),
                1 => rand_tensor(r, &[2, 3, 4], -2.0, 2.0),
                _ => rand_tensor(r, &[3], -2.0, 2.0),
            },
            move |t, v, _| {
                let (x, w, b) = match target {
                    0 => (v, t.leaf(wt.clone()), t.leaf(bt.clone())),
                    1 => (t.leaf(xt.clone()), v, t.leaf(bt.clone())),
                    _ => (t.leaf(xt.clone()), t.leaf(wt.clone()), v),
                };
                let y = t.conv1d_transpose(x, w, b);
                let n = t.value(y).numel();
                let shape = t.value(y).shape().to_vec();
                let wv = t.leaf(Tensor::from_vec(
                    &shape,
                    (0..n).map(|i| (i as f64 * 0.71).cos()).collect(),
                ));
                let prod = t.mul(y, wv);
                t.sum_all(prod)
            },
        );
    }
}

#[test]
fn grad_check_square_matches_polynomial() {
    let report = grad_check(
        |t, x| {
            let y = t.square(x);
            t.sum_all(y)
        },
        &Tensor::scalar(3.0),
        EPS,
    )
    .unwrap();
    assert!((report.analytic[0] - 6.0).abs() < 1e-12);
    assert!((report.numeric[0] - 6.0).abs() < 1e-8);
    assert!(report.passes(TOL));
}

#[test]
fn grad_check_gelu_at_zero_is_half() {
    let report = grad_check(
        |t, x| {
            let y = t.gelu(x);
            t.sum_all(y)
        },
        &Tensor::zeros(&[4]),
        EPS,
    )
    .unwrap();
    for (&a, &n) in report.analytic.iter().zip(&report.numeric) {
        assert!((a - 0.5).abs() < 1e-12, "analytic {a}");
        assert!((n - 0.5).abs() < 1e-8, "numeric {n}");
    }
}

#[test]
fn grad_check_rejects_non_finite() {
    // log of a negative point -> NaN at the base evaluation
    let err = grad_check(
        |t, x| {
            let y = t.log(x);
            t.sum_all(y)
        },
        &Tensor::scalar(-1.0),
        EPS,
    )
    .unwrap_err();
    assert!(matches!(err, DiffError::NonFinite { .. }));
}

#[test]
fn backward_linearity_is_bit_exact() {
    let mut r = rng(18);
    let point = rand_tensor(&mut r, &[3, 4], -1.0, 1.0);
    let aux = rand_tensor(&mut r, &[3, 4], -1.0, 1.0);

    let build = |t: &mut Tape, x: Var, aux: &Tensor, which: usize| -> Var {
        let c = t.leaf(aux.clone());
        match which {
            0 => {
                let y = t.mul(x, c);
                let y = t.gelu(y);
                t.sum_all(y)
            }
            _ => {
                let y = t.sub(x, c);
                let y = t.square(y);
                t.mean_all(y)
            }
        }
    };

    let grad_of = |which: Option<usize>| -> Vec<f64> {
        let mut t = Tape::new();
        let x = t.leaf(point.clone());
        let root = match which {
            Some(w) => build(&mut t, x, &aux, w),
            None => {
                let a = build(&mut t, x, &aux, 0);
                let b = build(&mut t, x, &aux, 1);
                t.add(a, b)
            }
        };
        let g = t.backward(root);
        g.get(x).unwrap().data().to_vec()
    };

    let g0 = grad_of(Some(0));
    let g1 = grad_of(Some(1));
    let gsum = grad_of(None);
    for i in 0..gsum.len() {
        assert_eq!(gsum[i], g0[i] + g1[i], "element {i}");
    }
}

#[test]
fn adamw_zero_grad_is_pure_decay() {
    let mut p = Tensor::from_vec(&[3], vec![1.0, -2.0, 0.5]);
    let g = Tensor::zeros(&[3]);
    let mut st = MomentState::new(&[3]);
    let hyper = AdamHyper {
        betas: (0.9, 0.95),
        eps: 1e-8,
        weight_decay: 0.5,
    };
    let lr = 1e-2;
    adamw_step(&mut st, &mut p, &g, lr, &hyper).unwrap();
    let decay = 1.0 - lr * 0.5;
    for (v, orig) in p.data().iter().zip([1.0, -2.0, 0.5]) {
        assert!((v - orig * decay).abs() < 1e-15);
    }
    assert_eq!(st.step, 1);
}

#[test]
fn adamw_constant_grad_approaches_sign_step() {
    let mut p = Tensor::from_vec(&[2], vec![0.0, 0.0]);
    let g = Tensor::from_vec(&[2], vec![0.3, -1.7]);
    let mut st = MomentState::new(&[2]);
    let hyper = AdamHyper {
        betas: (0.9, 0.95),
        eps: 1e-8,
        weight_decay: 0.0,
    };
    let lr = 1e-3;
    let mut prev = p.clone();
    for _ in 0..2000 {
        prev = p.clone();
        adamw_step(&mut st, &mut p, &g, lr, &hyper).unwrap();
    }
    // With constant gradient the bias-corrected update tends to -lr * sign(g).
    for i in 0..2 {
        let delta = p.data()[i] - prev.data()[i];
        let expect = -lr * g.data()[i].signum();
        assert!(
            (delta - expect).abs() < 1e-6,
            "element {i}: step {delta} vs {expect}"
        );
    }
}

#[test]
fn adamw_shape_mismatch_errors() {
    let mut p = Tensor::zeros(&[3]);
    let g = Tensor::zeros(&[4]);
    let mut st = MomentState::new(&[3]);
    let e = adamw_step(&mut st, &mut p, &g, 1e-3, &AdamHyper::default());
    assert!(e.is_err());
}

#[test]
fn clip_grad_norm_examples() {
    let mut g = vec![Tensor::from_vec(&[2], vec![1.2, 1.6])];
    let norm = clip_grad_norm(&mut g, 1.0);
    assert!((norm - 2.0).abs() < 1e-12);
    assert!((g[0].data()[0] - 0.6).abs() < 1e-12);
    assert!((g[0].data()[1] - 0.8).abs() < 1e-12);

    let mut g = vec![Tensor::from_vec(&[2], vec![0.3, 0.4])];
    let norm = clip_grad_norm(&mut g, 1.0);
    assert!((norm - 0.5).abs() < 1e-12);
    assert_eq!(g[0].data(), &[0.3, 0.4]);
}

#[test]
fn clip_grad_norm_postcondition_on_random_input() {
    let mut r = rng(19);
    for _ in 0..50 {
        let mut grads = vec![
            rand_tensor(&mut r, &[4, 3], -2.0, 2.0),
            rand_tensor(&mut r, &[7], -2.0, 2.0),
        ];
        let before = clip_grad_norm(&mut grads, 1.0);
        let after: f64 = grads.iter().map(|g| g.sq_norm()).sum::<f64>().sqrt();
        assert!(after <= before.min(1.0) + 1e-12);
        if before <= 1.0 {
            assert!((after - before).abs() < 1e-12);
        }
    }
}

#[test]
fn cosine_warmup_schedule_shape() {
    let lr_max = 1e-4;
    assert_eq!(cosine_warmup_lr(0, 200, 2000, lr_max), 0.0);
    assert_eq!(cosine_warmup_lr(200, 200, 2000, lr_max), lr_max);
    // midpoint of the decay phase
    let mid = cosine_warmup_lr(200 + 900, 200, 2000, lr_max);
    assert!((mid - lr_max / 2.0).abs() < 1e-18);
    assert!(cosine_warmup_lr(2000, 200, 2000, lr_max).abs() < 1e-20);
}

#[test]
fn cosine_warmup_continuous_at_boundary() {
    let lr_max = 3e-3;
    let (w, total) = (137, 977);
    let before = cosine_warmup_lr(w - 1, w, total, lr_max);
    let at = cosine_warmup_lr(w, w, total, lr_max);
    assert_eq!(at, lr_max);
    assert!((at - before).abs() <= lr_max / w as f64 + 1e-15);
}

#[test]
fn variance_loss_shape_gradient_matches_fd() {
    // the hinge-of-std composite exercised end to end on a random batch
    let mut r = rng(20);
    for _ in 0..20 {
        let point = rand_tensor(&mut r, &[4, 8], -1.0, 1.0);
        let report = grad_check(
            |t, z| {
                let n = t.value(z).rows();
                let mean = t.mean_axis(z, 0);
                let negmean = t.scale(mean, -1.0);
                let centered = t.add_row_broadcast(z, negmean);
                let sq = t.square(centered);
                let ssum = t.sum_axis(sq, 0);
                let var = t.scale(ssum, 1.0 / (n as f64 - 1.0));
                let sd = t.sqrt(var);
                let ones = t.leaf(Tensor::full(&[8], 1.0));
                let gap = t.sub(ones, sd);
                let hinge = t.max_const(gap, 0.0);
                t.sum_all(hinge)
            },
            &point,
            EPS,
        )
        .unwrap();
        assert!(report.passes(TOL), "max rel err {}", report.max_rel_err);
    }
}
