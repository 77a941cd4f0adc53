use super::*;
use crate::SeedRng;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};

fn random(shape: Vec<usize>, rng: &mut SeedRng) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

#[test]
fn matmul_identity_and_hand_values() {
    let mut tape = Tape::<f64>::new();
    let i = tape.constant(Tensor::identity(2));
    let ii = tape.matmul(i, i).unwrap();
    assert_eq!(tape.value(ii), &Tensor::identity(2));

    let a = tape.constant(Tensor::from_f64(vec![2, 2], &[1.0, 2.0, 3.0, 4.0]).unwrap());
    let b = tape.constant(Tensor::from_f64(vec![2, 1], &[1.0, 1.0]).unwrap());
    let c = tape.matmul(a, b).unwrap();
    assert_eq!(tape.value(c).data(), &[3.0, 7.0]);

    let bad = tape.constant(Tensor::zeros(vec![3, 1]));
    assert!(matches!(tape.matmul(a, bad), Err(NumericsError::ShapeMismatch { .. })));
}

#[test]
fn matmul_gradient_matches_finite_differences() {
    let mut rng = SeedRng::seed_from_u64(1);
    let a = random(vec![3, 4], &mut rng);
    let b = random(vec![4, 5], &mut rng);
    let w = random(vec![3, 5], &mut rng);
    let report = grad_check_many(
        |tape, v| {
            let w = tape.constant(w.clone());
            let c = tape.matmul(v[0], v[1])?;
            let c = tape.mul(c, w)?;
            Ok(tape.sum(c))
        },
        &[a, b],
        1e-3,
    )
    .unwrap();
    assert!(report.max_rel_error <= 1e-4, "{report:?}");
}

#[test]
fn softmax_examples() {
    let mut tape = Tape::<f64>::new();
    let x = tape.constant(Tensor::from_f64(vec![1, 4], &[0.0; 4]).unwrap());
    let p = tape.softmax(x).unwrap();
    assert!(tape.value(p).data().iter().all(|&v| (v - 0.25).abs() < 1e-15));

    let x = tape.constant(Tensor::from_f64(vec![1, 3], &[1.0, 2.0, 3.0]).unwrap());
    let p = tape.softmax(x).unwrap();
    // exp(k) / (e + e² + e³) evaluated directly
    let z = 1f64.exp() + 2f64.exp() + 3f64.exp();
    let direct = [1f64.exp() / z, 2f64.exp() / z, 3f64.exp() / z];
    for (got, want) in tape.value(p).data().iter().zip(direct) {
        assert!((got - want).abs() < 1e-15);
    }
    for (got, want) in tape.value(p).data().iter().zip([0.09003, 0.24473, 0.66524]) {
        assert!((got - want).abs() < 5e-6);
    }

    let s = tape.constant(Tensor::from_f64(vec![1, 3], &[101.0, 102.0, 103.0]).unwrap());
    let ps = tape.softmax(s).unwrap();
    for (a, b) in tape.value(p).data().iter().zip(tape.value(ps).data()) {
        assert!((a - b).abs() < 1e-15);
    }

    let nan = tape.constant(Tensor::from_f64(vec![1, 2], &[f64::NAN, 0.0]).unwrap());
    assert!(matches!(tape.softmax(nan), Err(NumericsError::NonFinite { .. })));
}

#[test]
fn cross_entropy_examples() {
    let mut tape = Tape::<f64>::new();
    let x = tape.constant(Tensor::zeros(vec![3, 4]));
    let l = tape.cross_entropy(x, &[0, 1, 3], &[1.0; 3]).unwrap();
    assert!((tape.value(l).item() - 4f64.ln()).abs() < 1e-12);

    let mut last = f64::INFINITY;
    for conf in [1.0, 5.0, 20.0, 50.0] {
        let x = tape.constant(Tensor::from_f64(vec![1, 4], &[conf, 0.0, 0.0, 0.0]).unwrap());
        let l = tape.cross_entropy(x, &[0], &[1.0]).unwrap();
        let l = tape.value(l).item();
        assert!(l < last);
        last = l;
    }
    assert!(last < 1e-20);

    assert!(matches!(
        tape.cross_entropy(x, &[0, 4, 0], &[1.0; 3]),
        Err(NumericsError::IndexOutOfRange { .. })
    ));

    let zero = tape.cross_entropy(x, &[0, 1, 2], &[0.0; 3]).unwrap();
    assert_eq!(tape.value(zero).item(), 0.0);
}

#[test]
fn cross_entropy_ignores_zero_weight_rows() {
    let mut rng = SeedRng::seed_from_u64(2);
    let logits = random(vec![4, 5], &mut rng);
    let weights = [0.0, 1.0, 0.0, 2.0];
    let run = |logits: Tensor<f64>, targets: &[usize]| {
        let mut tape = Tape::new();
        let x = tape.param(logits);
        let l = tape.cross_entropy(x, targets, &weights).unwrap();
        let g = tape.backward(l).unwrap();
        (tape.value(l).item(), g.get(x).unwrap().clone())
    };
    let (l0, g0) = run(logits.clone(), &[0, 1, 2, 3]);
    let mut perturbed = logits.clone();
    for j in 0..5 {
        perturbed.data_mut()[j] += 3.0;
        perturbed.data_mut()[2 * 5 + j] -= 7.0;
    }
    let (l1, g1) = run(perturbed, &[4, 1, 0, 3]);
    assert_eq!(l0.to_bits(), l1.to_bits());
    assert_eq!(g0, g1);
    assert!(g0.row(0).iter().all(|&v| v == 0.0));
    assert!(g0.row(2).iter().all(|&v| v == 0.0));

    let mut tape = Tape::new();
    let x = tape.param(logits);
    let l = tape.cross_entropy(x, &[0, 0, 0, 0], &[0.0; 4]).unwrap();
    let g = tape.backward(l).unwrap();
    assert!(g.get(x).is_none_or(|t| t.data().iter().all(|&v| v == 0.0)));
}

#[test]
fn softmax_cross_entropy_composite_grad_check() {
    let mut rng = SeedRng::seed_from_u64(3);
    let logits = random(vec![4, 8], &mut rng);
    let err = grad_check(
        |tape, x| {
            let p = tape.softmax(x)?;
            let p = tape.scale(p, 3.0);
            tape.cross_entropy(p, &[1, 7, 0, 3], &[1.0, 0.5, 1.0, 2.0])
        },
        &logits,
        1e-5,
    )
    .unwrap();
    assert!(err <= 1e-5, "{err}");
}

#[test]
fn grad_check_on_sum_of_squares() {
    let x = Tensor::from_f64(vec![2], &[1.0, 2.0]).unwrap();
    let mut tape = Tape::new();
    let v = tape.param(x.clone());
    let sq = tape.mul(v, v).unwrap();
    let s = tape.sum(sq);
    let g = tape.backward(s).unwrap();
    assert_eq!(g.get(v).unwrap().data(), &[2.0, 4.0]);
    let err = grad_check(
        |tape, v| {
            let sq = tape.mul(v, v)?;
            Ok(tape.sum(sq))
        },
        &x,
        1e-4,
    )
    .unwrap();
    assert!(err <= 1e-6);
}

#[test]
fn layer_norm_and_gelu_basics() {
    let mut tape = Tape::<f64>::new();
    let x = tape.constant(Tensor::from_f64(vec![1, 4], &[3.0; 4]).unwrap());
    let g = tape.constant(Tensor::from_f64(vec![4], &[1.0; 4]).unwrap());
    let b = tape.constant(Tensor::zeros(vec![4]));
    let y = tape.layer_norm(x, g, b, 1e-6).unwrap();
    assert!(tape.value(y).data().iter().all(|&v| v == 0.0));

    let z = tape.constant(Tensor::scalar(0.0));
    let gz = tape.gelu(z);
    assert_eq!(tape.value(gz).item(), 0.0);

    let bad = tape.constant(Tensor::zeros(vec![3]));
    assert!(tape.layer_norm(x, bad, b, 1e-6).is_err());
}

#[test]
fn shape_errors_are_loud() {
    let mut tape = Tape::<f32>::new();
    let a = tape.constant(Tensor::zeros(vec![2, 3]));
    let b = tape.constant(Tensor::zeros(vec![3, 2]));
    let v2 = tape.constant(Tensor::zeros(vec![2]));
    assert!(tape.add(a, b).is_err());
    assert!(tape.mul(a, b).is_err());
    assert!(tape.add_bias(a, v2).is_err());
    assert!(tape.slice_rows(a, 1, 2).is_err());
    assert!(tape.gather(a, &[2]).is_err());
    assert!(tape.concat_rows(a, b).is_err());
    assert!(tape.fill_rows(a, v2, &[Some(0)]).is_err());
    assert!(Tensor::<f32>::new(vec![2, 2], vec![0.0; 3]).is_err());
    let s = tape.sum(a);
    assert!(tape.backward(a).is_err());
    assert!(tape.backward(s).is_ok());
}

#[test]
fn every_op_passes_grad_check() {
    let mut rng = SeedRng::seed_from_u64(4);
    let x = random(vec![5, 6], &mut rng);
    let y = random(vec![5, 6], &mut rng);
    let bias = random(vec![6], &mut rng);
    let gamma = random(vec![6], &mut rng);
    let beta = random(vec![6], &mut rng);
    let fill = random(vec![6], &mut rng);
    let probe = random(vec![7, 6], &mut rng);
    let report = grad_check_many(
        |tape, v| {
            let [x, y, bias, gamma, beta, fill] = [v[0], v[1], v[2], v[3], v[4], v[5]];
            let a = tape.add(x, y)?;
            let a = tape.mul(a, y)?;
            let a = tape.add_bias(a, bias)?;
            let a = tape.layer_norm(a, gamma, beta, 1e-6)?;
            let a = tape.gelu(a);
            let t = tape.transpose(a)?;
            let sq = tape.matmul(a, t)?;
            let sq = tape.scale(sq, 0.5);
            let s = tape.softmax(sq)?;
            let s = tape.matmul(s, x)?;
            let g = tape.gather(s, &[4, 0, 0, 2])?;
            let f = tape.fill_rows(g, fill, &[Some(1), None, Some(3), None])?;
            let c = tape.concat_rows(f, y)?;
            let c = tape.slice_rows(c, 1, 7)?;
            let p = tape.constant(probe.clone());
            let c = tape.mul(c, p)?;
            Ok(tape.sum(c))
        },
        &[x, y, bias, gamma, beta, fill],
        1e-5,
    )
    .unwrap();
    assert!(report.max_rel_error <= 1e-4, "{report:?}");
}

#[test]
fn attention_grad_check() {
    let mut rng = SeedRng::seed_from_u64(5);
    let qkv = random(vec![5, 12], &mut rng);
    let probe = random(vec![5, 4], &mut rng);
    let err = grad_check(
        |tape, v| {
            let o = tape.attention(v, 2)?;
            let p = tape.constant(probe.clone());
            let o = tape.mul(o, p)?;
            Ok(tape.sum(o))
        },
        &qkv,
        1e-5,
    )
    .unwrap();
    assert!(err <= 1e-4, "{err}");
}

#[test]
fn attention_rejects_bad_heads() {
    let mut tape = Tape::<f64>::new();
    let q = tape.constant(Tensor::zeros(vec![3, 12]));
    assert!(tape.attention(q, 3).is_err());
    let q = tape.constant(Tensor::zeros(vec![3, 10]));
    assert!(tape.attention(q, 1).is_err());
}

proptest! {
    #[test]
    fn softmax_rows_sum_to_one(rows in 1usize..5, cols in 1usize..9, seed in any::<u64>()) {
        let mut rng = SeedRng::seed_from_u64(seed);
        let x: Tensor<f32> = random(vec![rows, cols], &mut rng).map(|v| v * 5.0).cast();
        let mut tape = Tape::new();
        let v = tape.constant(x);
        let p = tape.softmax(v).unwrap();
        for r in 0..rows {
            let row = tape.value(p).row(r);
            let s: f32 = row.iter().sum();
            prop_assert!((s - 1.0).abs() <= 1e-6);
            prop_assert!(row.iter().all(|&v| v > 0.0 && v < 1.0 || cols == 1 && v == 1.0));
        }
    }

    #[test]
    fn matmul_by_identity_is_exact(m in 1usize..6, n in 1usize..6, seed in any::<u64>()) {
        let mut rng = SeedRng::seed_from_u64(seed);
        let a: Tensor<f32> = random(vec![m, n], &mut rng).cast();
        let mut tape = Tape::new();
        let av = tape.constant(a.clone());
        let i = tape.constant(Tensor::identity(n));
        let out = tape.matmul(av, i).unwrap();
        prop_assert_eq!(tape.value(out), &a);
    }

    #[test]
    fn randomized_shapes_pass_grad_check(m in 1usize..5, k in 1usize..5, n in 1usize..5, seed in any::<u64>()) {
        let mut rng = SeedRng::seed_from_u64(seed);
        let a = random(vec![m, k], &mut rng);
        let b = random(vec![k, n], &mut rng);
        let report = grad_check_many(
            |tape, v| {
                let c = tape.matmul(v[0], v[1])?;
                let c = tape.gelu(c);
                let t = tape.transpose(c)?;
                let s = tape.softmax(t)?;
                let sq = tape.mul(s, s)?;
                Ok(tape.sum(sq))
            },
            &[a, b],
            1e-5,
        ).unwrap();
        prop_assert!(report.max_rel_error <= 1e-4, "{:?}", report);
    }
}
