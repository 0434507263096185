use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{grad_check, Tape, Tensor, Var};
use crate::error::Result;

const STEP: f64 = 1e-6;

/// Uniform values in `[lo, hi)` with magnitude at least `gap` when
/// `lo < 0 < hi`, keeping kinks of relu/abs out of the difference stencil.
fn sample(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64, gap: f64) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| loop {
            let v: f64 = rng.random_range(lo..hi);
            if v.abs() >= gap || lo >= 0.0 {
                break v;
            }
        })
        .collect();
    Tensor::new(shape.to_vec(), data).expect("shape matches")
}

/// `sum(y ⊙ w)` for fixed weights `w`, so every output entry matters.
fn weighted(tape: &mut Tape, y: Var, w: &Tensor) -> Result<Var> {
    let wv = tape.constant(w.clone())?;
    let p = tape.mul(y, wv)?;
    tape.sum(p)
}

type Unary = fn(&mut Tape, Var) -> Result<Var>;
type Binary = fn(&mut Tape, Var, Var) -> Result<Var>;

/// Largest relative error between tape and central-difference gradients for
/// every differentiable primitive, each on a random input drawn from `seed`.
pub fn primitive_gradient_errors(seed: u64) -> Result<Vec<(&'static str, f64)>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();

    let unary: [(&'static str, Unary, f64, f64); 11] = [
        ("relu", |t, x| t.relu(x), -2.0, 2.0),
        ("sigmoid", |t, x| t.sigmoid(x), -3.0, 3.0),
        ("tanh", |t, x| t.tanh(x), -2.0, 2.0),
        ("exp", |t, x| t.exp(x), -1.0, 1.0),
        ("log", |t, x| t.log(x), 0.5, 2.0),
        ("abs", |t, x| t.abs(x), -2.0, 2.0),
        ("scale", |t, x| t.scale(x, -1.7), -2.0, 2.0),
        ("softmax", |t, x| t.softmax(x), -2.0, 2.0),
        ("log_softmax", |t, x| t.log_softmax(x), -2.0, 2.0),
        ("slice", |t, x| t.slice(x, 1, 4), -2.0, 2.0),
        ("concat", |t, x| t.concat(&[x, x]), -2.0, 2.0),
    ];
    for (name, op, lo, hi) in unary {
        let x = sample(&mut rng, &[3, 5], lo, hi, 0.1);
        let w_shape = if name == "slice" {
            vec![3, 3]
        } else if name == "concat" {
            vec![3, 10]
        } else {
            vec![3, 5]
        };
        let w = sample(&mut rng, &w_shape, -1.0, 1.0, 0.0);
        out.push((name, grad_check(|t, x| {
            let y = op(t, x)?;
            weighted(t, y, &w)
        }, &x, STEP)?));
    }
    for (name, op) in [("sum", (|t: &mut Tape, x| t.sum(x)) as Unary), ("mean", |t, x| t.mean(x))] {
        let x = sample(&mut rng, &[4, 3], -2.0, 2.0, 0.0);
        out.push((name, grad_check(op, &x, STEP)?));
    }

    let binary: [(&'static str, Binary); 5] = [
        ("add", |t, a, b| t.add(a, b)),
        ("sub", |t, a, b| t.sub(a, b)),
        ("mul", |t, a, b| t.mul(a, b)),
        ("maximum", |t, a, b| t.maximum(a, b)),
        ("matmul", |t, a, b| t.matmul(a, b)),
    ];
    for (name, op) in binary {
        let shapes: Vec<(Vec<usize>, Vec<usize>, &'static str)> = if name == "matmul" {
            vec![(vec![3, 4], vec![4, 2], "")]
        } else {
            vec![(vec![3, 4], vec![3, 4], ""), (vec![3, 4], vec![4], "broadcast")]
        };
        for (sa, sb, tag) in shapes {
            let a = sample(&mut rng, &sa, -2.0, 2.0, 0.0);
            let mut b = sample(&mut rng, &sb, -2.0, 2.0, 0.0);
            if name == "maximum" {
                // keep |a - b| away from 0
                let bd: Vec<f64> = a
                    .data()
                    .iter()
                    .zip(b.data().iter().cycle())
                    .map(|(x, y)| if (x - y).abs() < 0.1 { x + 0.5 } else { *y })
                    .collect();
                if sa == sb {
                    b = Tensor::new(sb.clone(), bd)?;
                }
            }
            let out_shape = if name == "matmul" { vec![3, 2] } else { sa.clone() };
            let w = sample(&mut rng, &out_shape, -1.0, 1.0, 0.0);
            let (bc, ac) = (b.clone(), a.clone());
            let wa = w.clone();
            let lhs = grad_check(
                move |t, x| {
                    let bv = t.constant(bc.clone())?;
                    let y = op(t, x, bv)?;
                    weighted(t, y, &wa)
                },
                &a,
                STEP,
            )?;
            let rhs = grad_check(
                move |t, x| {
                    let av = t.constant(ac.clone())?;
                    let y = op(t, av, x)?;
                    weighted(t, y, &w)
                },
                &b,
                STEP,
            )?;
            let label: &'static str = match (name, tag) {
                ("add", "broadcast") => "add_broadcast",
                ("sub", "broadcast") => "sub_broadcast",
                ("mul", "broadcast") => "mul_broadcast",
                ("maximum", "broadcast") => "maximum_broadcast",
                _ => name,
            };
            out.push((label, lhs.max(rhs)));
        }
    }

    // straight-through: the forward value is a constant, the gradient is the identity
    let x = sample(&mut rng, &[2, 3], -2.0, 2.0, 0.0);
    let hard = Tensor::new(vec![2, 3], vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0])?;
    let w = sample(&mut rng, &[2, 3], -1.0, 1.0, 0.0);
    let mut tape = Tape::new();
    let xv = tape.leaf(x)?;
    let y = tape.straight_through(hard, xv)?;
    let loss = weighted(&mut tape, y, &w)?;
    let g = tape.backward(loss)?;
    let err = super::max_relative_error(g.get(xv).expect("leaf").data(), w.data());
    out.push(("straight_through", err));
    Ok(out)
}
