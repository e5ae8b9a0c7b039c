use std::rc::Rc;

use lhsi_core::numerics::{grad_check, Tape, Tensor, Var, PAD};
use lhsi_core::Result;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const INSTANCES: usize = 100;
const EPS: f64 = 1e-5;
const TOL: f64 = 1e-4;
/// Piecewise ops are only probed this far from their kinks, well beyond `EPS`.
const KINK_MARGIN: f64 = 1e-3;

type OpFn = Box<dyn Fn(&Tape, &[Var]) -> Result<Var>>;

fn uniform(rng: &mut impl Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(lo..hi)).collect()).unwrap()
}

/// Uniform in `[lo, hi)` but at least [`KINK_MARGIN`] from every kink.
fn uniform_avoiding(rng: &mut impl Rng, shape: &[usize], lo: f64, hi: f64, kinks: &[f64]) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| loop {
            let v = rng.gen_range(lo..hi);
            if kinks.iter().all(|k| (v - k).abs() > KINK_MARGIN) {
                break v;
            }
        })
        .collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

fn dims(rng: &mut impl Rng) -> [usize; 2] {
    [rng.gen_range(1..=4), rng.gen_range(1..=4)]
}

/// Contracts `y` with fixed, index-dependent weights so every output entry
/// contributes a distinct amount to the scalar loss.
fn weigh(tape: &Tape, y: Var) -> Result<Var> {
    let shape = tape.shape(y);
    let n: usize = shape.iter().product();
    let w = Tensor::new(shape, (0..n).map(|i| (0.7548 * i as f64 + 0.31).sin() + 0.2).collect())?;
    let w = tape.constant(w);
    Ok(tape.sum(tape.mul(y, w)?))
}

fn check_op(name: &str, seed: u64, mut make: impl FnMut(&mut ChaCha8Rng) -> (Vec<Tensor>, OpFn)) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for instance in 0..INSTANCES {
        let (point, f) = make(&mut rng);
        let report = grad_check(|t, v| weigh(t, f(t, v)?), &point, EPS).unwrap();
        assert!(
            report.max_rel_error < TOL,
            "{name}, instance {instance}: relative error {:.3e} at {:?}",
            report.max_rel_error,
            report.worst
        );
    }
}

fn unary(name: &str, seed: u64, lo: f64, hi: f64, kinks: &'static [f64], op: fn(&Tape, Var) -> Var) {
    check_op(name, seed, |rng| {
        let d = dims(rng);
        let x = uniform_avoiding(rng, &d, lo, hi, kinks);
        (vec![x], Box::new(move |t: &Tape, v: &[Var]| Ok(op(t, v[0]))))
    });
}

fn binary(name: &str, seed: u64, op: fn(&Tape, Var, Var) -> Result<Var>, positive_rhs: bool) {
    check_op(name, seed, |rng| {
        let shape = dims(rng);
        let a = uniform(rng, &shape, -2.0, 2.0);
        let b_shape = match rng.gen_range(0..3) {
            0 => shape.to_vec(),
            1 => vec![shape[1]],
            _ => vec![1],
        };
        let b = if positive_rhs {
            uniform(rng, &b_shape, 0.5, 2.0)
        } else {
            uniform(rng, &b_shape, -2.0, 2.0)
        };
        (vec![a, b], Box::new(move |t: &Tape, v: &[Var]| op(t, v[0], v[1])))
    });
}

#[test]
fn elementwise_binary_gradients() {
    binary("add", 1, |t, a, b| t.add(a, b), false);
    binary("sub", 2, |t, a, b| t.sub(a, b), false);
    binary("mul", 3, |t, a, b| t.mul(a, b), false);
    binary("div", 4, |t, a, b| t.div(a, b), true);
}

#[test]
fn piecewise_binary_gradients() {
    for (k, name) in ["minimum", "maximum"].into_iter().enumerate() {
        check_op(name, 10 + k as u64, |rng| {
            let shape = dims(rng);
            let a = uniform(rng, &shape, -2.0, 2.0);
            let offsets = uniform_avoiding(rng, &shape, -1.0, 1.0, &[0.0]);
            let b = Tensor::new(shape.to_vec(), a.data().iter().zip(offsets.data()).map(|(x, d)| x + d).collect()).unwrap();
            let f: OpFn = if k == 0 {
                Box::new(|t: &Tape, v: &[Var]| t.minimum(v[0], v[1]))
            } else {
                Box::new(|t: &Tape, v: &[Var]| t.maximum(v[0], v[1]))
            };
            (vec![a, b], f)
        });
    }
    check_op("atan2", 12, |rng| {
        let shape = dims(rng);
        let n = shape[0] * shape[1];
        let (mut y, mut x) = (Vec::new(), Vec::new());
        for _ in 0..n {
            let r = rng.gen_range(0.2..2.0);
            // Keep away from the branch cut on the negative x axis.
            let th: f64 = rng.gen_range(-3.0..3.0);
            y.push(r * th.sin());
            x.push(r * th.cos());
        }
        let y = Tensor::new(shape.to_vec(), y).unwrap();
        let x = Tensor::new(shape.to_vec(), x).unwrap();
        (vec![y, x], Box::new(|t: &Tape, v: &[Var]| t.atan2(v[0], v[1])))
    });
    check_op("clamp", 13, |rng| {
        let d = dims(rng);
        let x = uniform_avoiding(rng, &d, -1.0, 1.0, &[-0.5, 0.5]);
        (vec![x], Box::new(|t: &Tape, v: &[Var]| t.clamp(v[0], -0.5, 0.5)))
    });
}

#[test]
fn elementwise_unary_gradients() {
    unary("affine", 20, -2.0, 2.0, &[], |t, a| t.affine(a, -1.7, 0.3));
    unary("scale", 21, -2.0, 2.0, &[], |t, a| t.scale(a, 2.5));
    unary("add_scalar", 22, -2.0, 2.0, &[], |t, a| t.add_scalar(a, 0.4));
    unary("exp", 23, -2.0, 2.0, &[], |t, a| t.exp(a));
    unary("log", 24, 0.1, 3.0, &[], |t, a| t.log(a));
    unary("sqrt", 25, 0.1, 3.0, &[], |t, a| t.sqrt(a));
    unary("sigmoid", 26, -4.0, 4.0, &[], |t, a| t.sigmoid(a));
    unary("softplus", 27, -4.0, 4.0, &[], |t, a| t.softplus(a));
    unary("silu", 28, -4.0, 4.0, &[], |t, a| t.silu(a));
    unary("tanh", 29, -3.0, 3.0, &[], |t, a| t.tanh(a));
    unary("sin", 30, -4.0, 4.0, &[], |t, a| t.sin(a));
    unary("cos", 31, -4.0, 4.0, &[], |t, a| t.cos(a));
    unary("abs", 32, -2.0, 2.0, &[0.0], |t, a| t.abs(a));
    unary("cumsum", 33, -2.0, 2.0, &[], |t, a| t.cumsum(a));
    unary("softmax", 34, -3.0, 3.0, &[], |t, a| t.softmax(a));
    unary("layer_norm", 35, -3.0, 3.0, &[], |t, a| t.layer_norm(a, 1e-5));
}

#[test]
fn reductions_and_contractions() {
    unary("sum", 40, -2.0, 2.0, &[], |t, a| t.sum(a));
    unary("mean", 41, -2.0, 2.0, &[], |t, a| t.mean(a));
    check_op("matmul", 42, |rng| {
        let (m, k, n) = (rng.gen_range(1..=4), rng.gen_range(1..=4), rng.gen_range(1..=4));
        let a = uniform(rng, &[m, k], -1.0, 1.0);
        let b = uniform(rng, &[k, n], -1.0, 1.0);
        (vec![a, b], Box::new(|t: &Tape, v: &[Var]| t.matmul(v[0], v[1])))
    });
    check_op("dwconv1d", 43, |rng| {
        let (l, c, k) = (rng.gen_range(1..=6), rng.gen_range(1..=3), [1, 3, 5][rng.gen_range(0..3)]);
        let x = uniform(rng, &[l, c], -1.0, 1.0);
        let w = uniform(rng, &[c, k], -1.0, 1.0);
        (vec![x, w], Box::new(|t: &Tape, v: &[Var]| t.dwconv1d(v[0], v[1])))
    });
    check_op("selective_scan", 44, |rng| {
        let (l, c, n) = (rng.gen_range(1..=5), rng.gen_range(1..=3), rng.gen_range(1..=3));
        let point = vec![
            uniform(rng, &[l, c], -1.0, 1.0),
            uniform(rng, &[l, c], 0.05, 1.0),
            uniform(rng, &[c, n], -3.0, -0.1),
            uniform(rng, &[l, n], -1.0, 1.0),
            uniform(rng, &[l, n], -1.0, 1.0),
        ];
        (point, Box::new(|t: &Tape, v: &[Var]| t.selective_scan(v[0], v[1], v[2], v[3], v[4])))
    });
}

#[test]
fn indexing_and_layout_gradients() {
    check_op("gather", 50, |rng| {
        let d = dims(rng);
        let a = uniform(rng, &d, -2.0, 2.0);
        let len = a.numel();
        let count = rng.gen_range(1..=8);
        let index: Vec<usize> = (0..count).map(|_| if rng.gen_bool(0.2) { PAD } else { rng.gen_range(0..len) }).collect();
        let index = Rc::new(index);
        (vec![a], Box::new(move |t: &Tape, v: &[Var]| t.gather(v[0], index.clone(), &[count])))
    });
    check_op("scatter_add", 51, |rng| {
        let d = dims(rng);
        let a = uniform(rng, &d, -2.0, 2.0);
        let out = rng.gen_range(1..=6);
        let index: Vec<usize> = (0..a.numel()).map(|_| rng.gen_range(0..out)).collect();
        let index = Rc::new(index);
        (vec![a], Box::new(move |t: &Tape, v: &[Var]| t.scatter_add(v[0], index.clone(), &[out])))
    });
    check_op("reshape", 52, |rng| {
        let [m, n] = dims(rng);
        let a = uniform(rng, &[m, n], -2.0, 2.0);
        (vec![a], Box::new(move |t: &Tape, v: &[Var]| t.reshape(v[0], &[n * m])))
    });
    check_op("permute", 53, |rng| {
        let shape = [rng.gen_range(1..=3), rng.gen_range(1..=3), rng.gen_range(1..=3)];
        let a = uniform(rng, &shape, -2.0, 2.0);
        let mut axes = [0, 1, 2];
        axes.shuffle(rng);
        (vec![a], Box::new(move |t: &Tape, v: &[Var]| t.permute(v[0], &axes)))
    });
    check_op("transpose", 54, |rng| {
        let d = dims(rng);
        let a = uniform(rng, &d, -2.0, 2.0);
        (vec![a], Box::new(|t: &Tape, v: &[Var]| t.transpose(v[0])))
    });
    check_op("concat", 55, |rng| {
        let axis = rng.gen_range(0..2);
        let [m, n] = dims(rng);
        let mut other = [m, n];
        other[axis] = rng.gen_range(1..=3);
        let point = vec![uniform(rng, &[m, n], -2.0, 2.0), uniform(rng, &other, -2.0, 2.0)];
        (point, Box::new(move |t: &Tape, v: &[Var]| t.concat(v, axis)))
    });
    check_op("slice", 56, |rng| {
        let shape = dims(rng);
        let axis = rng.gen_range(0..2);
        let start = rng.gen_range(0..shape[axis]);
        let len = rng.gen_range(1..=shape[axis] - start);
        let a = uniform(rng, &shape, -2.0, 2.0);
        (vec![a], Box::new(move |t: &Tape, v: &[Var]| t.slice(v[0], axis, start, len)))
    });
    check_op("split", 57, |rng| {
        let (m, first, second) = (rng.gen_range(1..=3), rng.gen_range(1..=3), rng.gen_range(1..=3));
        let a = uniform(rng, &[m, first + second], -2.0, 2.0);
        (
            vec![a],
            Box::new(move |t: &Tape, v: &[Var]| {
                let parts = t.split(v[0], 1, &[first, second])?;
                // Weight the halves differently so a swapped backward shows up.
                let second = t.scale(parts[1], -3.0);
                t.concat(&[second, parts[0]], 1)
            }),
        )
    });
}

#[test]
fn composite_graph_gradient() {
    check_op("composite", 60, |rng| {
        let (l, d) = (rng.gen_range(2..=4), rng.gen_range(2..=4));
        let point = vec![uniform(rng, &[l, d], -1.0, 1.0), uniform(rng, &[d, d], -1.0, 1.0)];
        (
            point,
            Box::new(|t: &Tape, v: &[Var]| {
                let h = t.layer_norm(t.matmul(v[0], v[1])?, 1e-5);
                let a = t.softmax(t.matmul(h, t.transpose(h)?)?);
                let y = t.matmul(a, t.silu(h))?;
                t.add(y, v[0])
            }),
        )
    });
}

#[test]
fn forward_and_backward_are_deterministic() {
    let mut rng = ChaCha8Rng::seed_from_u64(70);
    let x = uniform(&mut rng, &[5, 3], -1.0, 1.0);
    let w = uniform(&mut rng, &[3, 3], -1.0, 1.0);
    let run = || {
        let tape = Tape::new();
        let (xv, wv) = (tape.param(x.clone()), tape.param(w.clone()));
        let y = tape.softmax(tape.matmul(xv, wv).unwrap());
        let loss = weigh(&tape, y).unwrap();
        let g = tape.backward(loss).unwrap();
        (tape.data(y), g.get(wv).data().to_vec())
    };
    let (y1, g1) = run();
    let (y2, g2) = run();
    assert_eq!(y1.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), y2.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
    assert_eq!(g1.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), g2.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
}

proptest! {
    #[test]
    fn softmax_rows_sum_to_one(rows in 1usize..6, cols in 1usize..8, seed in any::<u64>(), spread in 0.1f64..50.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tape = Tape::new();
        let x = tape.constant(uniform(&mut rng, &[rows, cols], -spread, spread));
        let y = tape.data(tape.softmax(x));
        for row in y.chunks(cols) {
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(row.iter().all(|v| *v >= 0.0));
        }
    }
}
