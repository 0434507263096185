//! Reverse-mode automatic differentiation over dense `f64` tensors.
//!
//! A [`Tape`] is built fresh for every forward pass. Elementwise binary ops
//! accept equal shapes, or a right operand that broadcasts over the leading
//! (batch) axis of the left one; nothing else broadcasts.

mod checks;
mod gradcheck;
mod tape;
mod tensor;

pub use checks::primitive_gradient_errors;
pub use gradcheck::{central_difference, grad_check, max_relative_error};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
        let n = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
    }

    #[test]
    fn softmax_of_zeros_is_uniform() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::zeros(&[3])).unwrap();
        let y = tape.softmax(x).unwrap();
        for v in tape.value(y).data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut tape = Tape::new();
        let x = tape.constant(random(&mut rng, &[7, 5], -30.0, 30.0)).unwrap();
        let y = tape.softmax(x).unwrap();
        for r in 0..7 {
            let s: f64 = tape.value(y).row(r).iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn relu_definition() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::vector(vec![-1.0, 0.0, 2.0])).unwrap();
        let y = tape.relu(x).unwrap();
        assert_eq!(tape.value(y).data(), &[0.0, 0.0, 2.0]);
    }

    #[test]
    fn identity_matmul() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = random(&mut rng, &[3, 4], -1.0, 1.0);
        let mut tape = Tape::new();
        let i = tape.constant(Tensor::eye(3)).unwrap();
        let av = tape.constant(a.clone()).unwrap();
        let y = tape.matmul(i, av).unwrap();
        assert_eq!(tape.value(y), &a);
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::zeros(&[2, 3])).unwrap();
        let b = tape.constant(Tensor::zeros(&[4, 2])).unwrap();
        let err = tape.matmul(a, b).unwrap_err().to_string();
        assert!(err.contains("matmul") && err.contains("[2, 3]") && err.contains("[4, 2]"));
    }

    #[test]
    fn non_finite_output_is_an_error() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::vector(vec![0.0, 1.0])).unwrap();
        assert!(matches!(
            tape.log(x),
            Err(crate::Error::NonFinite { op: "log" })
        ));
        let big = tape.constant(Tensor::vector(vec![1000.0])).unwrap();
        assert!(tape.exp(big).is_err());
        assert!(tape.leaf(Tensor::vector(vec![f64::NAN])).is_err());
    }

    #[test]
    fn broadcast_only_over_leading_axis() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::zeros(&[4, 3])).unwrap();
        let b = tape.constant(Tensor::ones(&[3])).unwrap();
        let c = tape.constant(Tensor::ones(&[4])).unwrap();
        let d = tape.constant(Tensor::ones(&[4, 1])).unwrap();
        assert!(tape.add(a, b).is_ok());
        assert!(tape.add(a, c).is_err());
        assert!(tape.mul(a, d).is_err());
    }

    #[test]
    fn sum_gradient_is_ones() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::vector(vec![0.3, -2.0, 5.0])).unwrap();
        let s = tape.sum(x).unwrap();
        let g = tape.backward(s).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn square_gradient() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::vector(vec![1.0, 2.0])).unwrap();
        let sq = tape.mul(x, x).unwrap();
        let s = tape.sum(sq).unwrap();
        let g = tape.backward(s).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[2.0, 4.0]);
    }

    #[test]
    fn masking_gradient_is_measured_values() {
        let mut tape = Tape::new();
        let m = tape.leaf(Tensor::vector(vec![0.2, 0.9, 0.0])).unwrap();
        let x = tape.constant(Tensor::vector(vec![1.5, -0.5, 3.0])).unwrap();
        let mx = tape.mul(m, x).unwrap();
        let s = tape.sum(mx).unwrap();
        let g = tape.backward(s).unwrap();
        assert_eq!(g.get(m).unwrap().data(), &[1.5, -0.5, 3.0]);
    }

    #[test]
    fn unreachable_leaf_gets_zero_gradient() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::vector(vec![1.0, 2.0])).unwrap();
        let unused = tape.leaf(Tensor::zeros(&[2, 2])).unwrap();
        let s = tape.sum(x).unwrap();
        let g = tape.backward(s).unwrap();
        assert_eq!(g.get(unused).unwrap(), &Tensor::zeros(&[2, 2]));
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::vector(vec![1.0, 2.0])).unwrap();
        assert!(matches!(tape.backward(x), Err(crate::Error::NotScalar { .. })));
    }

    #[test]
    fn abs_subgradient_at_zero_is_zero() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::vector(vec![0.0, -2.0, 3.0])).unwrap();
        let a = tape.abs(x).unwrap();
        let s = tape.sum(a).unwrap();
        let g = tape.backward(s).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[0.0, -1.0, 1.0]);
    }

    #[test]
    fn fan_out_accumulates() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::vector(vec![1.0, 2.0])).unwrap();
        let a = tape.scale(x, 3.0).unwrap();
        let b = tape.add(a, x).unwrap();
        let s = tape.sum(b).unwrap();
        let g = tape.backward(s).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[4.0, 4.0]);
    }

    #[test]
    fn straight_through_forward_is_hard_backward_is_soft() {
        let mut tape = Tape::new();
        let soft = tape.leaf(Tensor::vector(vec![0.7, 0.2, 0.1])).unwrap();
        let st = tape
            .straight_through(Tensor::vector(vec![1.0, 0.0, 0.0]), soft)
            .unwrap();
        assert_eq!(tape.value(st).data(), &[1.0, 0.0, 0.0]);
        let w = tape.constant(Tensor::vector(vec![2.0, 3.0, 4.0])).unwrap();
        let p = tape.mul(st, w).unwrap();
        let s = tape.sum(p).unwrap();
        let g = tape.backward(s).unwrap();
        assert_eq!(g.get(soft).unwrap().data(), &[2.0, 3.0, 4.0]);
    }

    #[test]
    fn grad_check_constant_function_is_exact() {
        let x = Tensor::vector(vec![0.1, 0.2]);
        let err = grad_check(
            |t, _x| t.constant(Tensor::scalar(3.0)),
            &x,
            1e-5,
        )
        .unwrap();
        assert_eq!(err, 0.0);
    }

    #[test]
    fn grad_check_sigmoid_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = random(&mut rng, &[8], -2.0, 2.0);
        let err = grad_check(
            |t, x| {
                let s = t.sigmoid(x)?;
                t.sum(s)
            },
            &x,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-4, "{err}");
    }

    #[test]
    fn grad_check_linear_matmul() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = random(&mut rng, &[3, 5], -1.0, 1.0);
        let w = random(&mut rng, &[5, 2], -1.0, 1.0);
        let err = grad_check(
            |t, x| {
                let w = t.constant(w.clone())?;
                let y = t.matmul(x, w)?;
                t.sum(y)
            },
            &x,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn grad_check_rejects_bad_step_and_vector_output() {
        let x = Tensor::vector(vec![1.0]);
        assert!(grad_check(|t, x| t.sum(x), &x, 0.1).is_err());
        assert!(grad_check(|t, x| t.relu(x), &Tensor::vector(vec![1.0, 2.0]), 1e-5).is_err());
    }

    #[test]
    fn backward_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = random(&mut rng, &[6, 4], -1.0, 1.0);
        let w = random(&mut rng, &[4, 3], -1.0, 1.0);
        let run = || {
            let mut tape = Tape::new();
            let av = tape.leaf(a.clone()).unwrap();
            let wv = tape.leaf(w.clone()).unwrap();
            let y = tape.matmul(av, wv).unwrap();
            let y = tape.tanh(y).unwrap();
            let l = tape.log_softmax(y).unwrap();
            let s = tape.mean(l).unwrap();
            let g = tape.backward(s).unwrap();
            (g.get(av).unwrap().clone(), g.get(wv).unwrap().clone())
        };
        let (a1, w1) = run();
        let (a2, w2) = run();
        assert_eq!(a1.data(), a2.data());
        assert_eq!(w1.data(), w2.data());
    }
}
