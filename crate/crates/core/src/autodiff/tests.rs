use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::autodiff::ops;

fn rng() -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(7)
}

/// Independent finite-difference gradient of a scalar function of one flat
/// parameter vector.
fn fd_grad(x: &[f64], eps: f64, f: impl Fn(&[f64]) -> f64) -> Vec<f64> {
    let mut w = x.to_vec();
    (0..x.len())
        .map(|i| {
            w[i] = x[i] + eps;
            let up = f(&w);
            w[i] = x[i] - eps;
            let down = f(&w);
            w[i] = x[i];
            (up - down) / (2.0 * eps)
        })
        .collect()
}

fn max_rel(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs() / y.abs().max(1.0))
        .fold(0.0, f64::max)
}

#[test]
fn matmul_identity() {
    let i2 = Tensor::identity(2);
    let m = Tensor::matrix(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
    assert_eq!(ops::matmul(&i2, &m).unwrap(), m);
}

#[test]
fn matmul_row_by_column() {
    let a = Tensor::matrix(1, 2, vec![1.0, 2.0]).unwrap();
    let b = Tensor::matrix(2, 1, vec![3.0, 4.0]).unwrap();
    assert_eq!(ops::matmul(&a, &b).unwrap().data(), &[11.0]);
}

#[test]
fn matmul_rejects_inner_mismatch() {
    let a = Tensor::zeros(vec![2, 3]);
    let b = Tensor::zeros(vec![2, 3]);
    assert!(matches!(ops::matmul(&a, &b), Err(Error::ShapeMismatch { .. })));
}

#[test]
fn matmul_backward_matches_finite_differences() {
    let mut r = rng();
    let a = Tensor::randn(vec![3, 4], 1.0, &mut r);
    let b = Tensor::randn(vec![4, 2], 1.0, &mut r);
    let mut tape = Tape::new();
    let (va, vb) = (tape.leaf(a.clone()), tape.leaf(b.clone()));
    let c = tape.matmul(va, vb).unwrap();
    let loss = tape.sum(c);
    tape.backward(loss).unwrap();

    let sum_ab = |ad: &[f64], bd: &[f64]| -> f64 {
        let mut s = 0.0;
        for i in 0..3 {
            for j in 0..2 {
                for k in 0..4 {
                    s += ad[i * 4 + k] * bd[k * 2 + j];
                }
            }
        }
        s
    };
    let ga = fd_grad(a.data(), 1e-6, |x| sum_ab(x, b.data()));
    let gb = fd_grad(b.data(), 1e-6, |x| sum_ab(a.data(), x));
    assert!(max_rel(tape.grad(va).unwrap().data(), &ga) < 1e-6);
    assert!(max_rel(tape.grad(vb).unwrap().data(), &gb) < 1e-6);
}

#[test]
fn gelu_reference_points() {
    let x = Tensor::vector(vec![0.0, 10.0, 1.0]);
    let y = ops::gelu(&x);
    assert_eq!(y.data()[0], 0.0);
    assert!((y.data()[1] - 10.0).abs() < 1e-9);
    // Φ(1) = 0.841344746068543
    assert!((y.data()[2] - 0.841_344_746_068_543).abs() < 1e-12);
    assert!((y.data()[2] - 0.841345).abs() < 1e-6);
}

#[test]
fn gelu_derivative_matches_fd() {
    for &x in &[-3.0, -0.7, 0.0, 0.4, 2.5] {
        let fd = (kernels::gelu(x + 1e-6) - kernels::gelu(x - 1e-6)) / 2e-6;
        assert!((kernels::gelu_grad(x) - fd).abs() < 1e-8, "x = {x}");
    }
}

#[test]
fn softplus_reference_points() {
    let b2 = (std::f64::consts::E - 1.0).ln();
    let y = ops::softplus(&Tensor::vector(vec![b2, 0.0, 1000.0]));
    assert!((y.data()[0] - 1.0).abs() < 1e-12);
    assert!((y.data()[1] - 0.693147).abs() < 1e-6);
    assert_eq!(y.data()[2], 1000.0);
}

#[test]
fn softmax_reference_points() {
    let y = ops::softmax(&Tensor::vector(vec![1.0, 1.0, 1.0]));
    for v in y.data() {
        assert!((v - 1.0 / 3.0).abs() < 1e-15);
    }
    assert_eq!(ops::softmax(&Tensor::vector(vec![0.0, 0.0])).data(), &[0.5, 0.5]);
    let y = ops::softmax(&Tensor::vector(vec![2.0, 0.0]));
    let e2 = 2f64.exp();
    assert!((y.data()[0] - e2 / (e2 + 1.0)).abs() < 1e-15);
    assert!((y.data()[0] - 0.880797).abs() < 1e-6);
    assert!((y.data()[1] - 0.119203).abs() < 1e-6);
}

#[test]
fn layer_norm_reference_points() {
    let ones = Tensor::full(vec![4], 1.0);
    let zeros = Tensor::zeros(vec![4]);
    let y = ops::layer_norm(&Tensor::full(vec![1, 4], 5.0), &ones, &zeros).unwrap();
    assert!(y.data().iter().all(|&v| v == 0.0));

    let y = ops::layer_norm(
        &Tensor::matrix(1, 2, vec![1.0, -1.0]).unwrap(),
        &Tensor::full(vec![2], 1.0),
        &Tensor::zeros(vec![2]),
    )
    .unwrap();
    assert!((y.data()[0] - 1.0).abs() < 1e-5 && (y.data()[1] + 1.0).abs() < 1e-5);

    let x = Tensor::randn(vec![1, 4], 3.0, &mut rng());
    let y = ops::layer_norm(&x, &ones, &zeros).unwrap();
    let mean = y.data().iter().sum::<f64>() / 4.0;
    let std = (y.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 4.0).sqrt();
    assert!(mean.abs() < 1e-9);
    assert!((std - 1.0).abs() < 1e-3);
}

#[test]
fn layer_norm_rejects_width_one() {
    let x = Tensor::zeros(vec![3, 1]);
    let g = Tensor::zeros(vec![1]);
    assert!(ops::layer_norm(&x, &g, &g).is_err());
}

#[test]
fn backward_of_sum_is_ones() {
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::vector(vec![0.3, -2.0, 5.0]));
    let s = tape.sum(x);
    tape.backward(s).unwrap();
    assert_eq!(tape.grad(x).unwrap().data(), &[1.0, 1.0, 1.0]);
}

#[test]
fn backward_rejects_non_scalar() {
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::vector(vec![1.0, 2.0]));
    let y = tape.square(x);
    assert!(matches!(tape.backward(y), Err(Error::NonScalarLoss(_))));
}

#[test]
fn backward_accumulates_without_zeroing() {
    let mut r = rng();
    let mut tape = Tape::new();
    let a = tape.leaf(Tensor::randn(vec![2, 3], 1.0, &mut r));
    let b = tape.leaf(Tensor::randn(vec![3, 2], 1.0, &mut r));
    let c = tape.matmul(a, b).unwrap();
    let g = tape.gelu(c);
    let loss = tape.mean(g);
    tape.backward(loss).unwrap();
    let once = tape.grad(a).unwrap().clone();
    tape.backward(loss).unwrap();
    let twice = tape.grad(a).unwrap();
    for (x, y) in once.data().iter().zip(twice.data()) {
        assert_eq!(2.0 * x, *y);
    }
    tape.zero_grad();
    assert!(tape.grad(a).is_none());
}

#[test]
fn untouched_leaf_has_no_grad() {
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::scalar(2.0));
    let unused = tape.leaf(Tensor::scalar(3.0));
    let y = tape.square(x);
    tape.backward(y).unwrap();
    assert!(tape.grad(unused).is_none());
    assert_eq!(tape.grad(x).unwrap().item(), 4.0);
}

#[test]
fn matmul_chain_matches_finite_differences() {
    let mut r = rng();
    let params = vec![
        Tensor::randn(vec![2, 3], 1.0, &mut r),
        Tensor::randn(vec![3, 3], 1.0, &mut r),
        Tensor::randn(vec![3, 2], 1.0, &mut r),
    ];
    let report = grad_check(&params, 1e-5, |t, v| {
        let ab = t.matmul(v[0], v[1])?;
        let abc = t.matmul(ab, v[2])?;
        Ok(t.sum(abc))
    })
    .unwrap();
    assert!(report.max_rel_err < 1e-6, "{report:?}");
}

#[test]
fn grad_check_quadratic() {
    let x = Tensor::randn(vec![5], 2.0, &mut rng());
    let report = grad_check(&[x], 1e-5, |t, v| {
        let sq = t.square(v[0]);
        Ok(t.sum(sq))
    })
    .unwrap();
    assert!(report.max_rel_err < 1e-8, "{report:?}");
}

#[test]
fn grad_check_cross_entropy_through_softmax() {
    let logits = Tensor::randn(vec![3, 4], 1.5, &mut rng());
    let report = grad_check(&[logits], 1e-5, |t, v| {
        let p = t.softmax(v[0]);
        let picked = t.pick_cols(p, vec![0, 3, 1])?;
        let lp = t.log(picked);
        let m = t.mean(lp);
        Ok(t.neg(m))
    })
    .unwrap();
    assert!(report.max_rel_err < 1e-5, "{report:?}");
}

#[test]
fn grad_check_rejects_bad_eps() {
    let x = Tensor::scalar(1.0);
    assert!(grad_check(&[x], 1e-1, |t, v| Ok(t.square(v[0]))).is_err());
}

#[test]
fn every_op_matches_finite_differences() {
    let mut r = rng();
    // batch 2, seq 3, dim 4, heads 2
    let x = Tensor::randn(vec![6, 4], 1.0, &mut r);
    let wq = Tensor::randn(vec![4, 4], 0.5, &mut r);
    let wk = Tensor::randn(vec![4, 4], 0.5, &mut r);
    let wv = Tensor::randn(vec![4, 4], 0.5, &mut r);
    let bias = Tensor::randn(vec![4], 0.5, &mut r);
    let gain = Tensor::randn(vec![4], 1.0, &mut r);
    let cls = Tensor::randn(vec![4], 1.0, &mut r);
    let pos = Tensor::randn(vec![4, 4], 1.0, &mut r);
    let report = grad_check(
        &[x, wq, wk, wv, bias, gain, cls, pos],
        1e-5,
        |t, v| {
            let ln = t.layer_norm(v[0], v[5], v[4])?;
            let q = t.linear(ln, v[1], Some(v[4]))?;
            let k = t.linear(ln, v[2], None)?;
            let vv = t.linear(ln, v[3], None)?;
            let att = t.attention(q, k, vv, 2, 2)?;
            let seq = t.prepend_row(att, v[6], 2)?; // [8, 4]
            let seq = t.add_tiled(seq, v[7])?;
            let g = t.gelu(seq);
            let first = t.gather_rows(g, vec![0, 4])?;
            let mean = t.group_mean(g, 4, 1)?;
            let feat = t.concat_cols(first, mean)?; // [2, 8]
            let sp = t.softplus(feat);
            let s = t.sum_rows(sp);
            let s = t.add_scalar(s, 0.5);
            let logits = t.gather_rows(seq, vec![1, 6])?;
            let scaled = t.div_rows(logits, s)?;
            let lsm = t.log_softmax(scaled);
            let picked = t.pick_cols(lsm, vec![2, 0])?;
            let p = t.exp(picked);
            let om = t.scale(p, -1.0);
            let om = t.add_scalar(om, 1.0);
            let focal = t.powf(om, vec![2.0, 3.0])?;
            let w = t.mul(focal, picked)?;
            let sq = t.square(sp);
            let total = t.sum(sq);
            let a = t.sum(w);
            let out = t.sub(total, a)?;
            let out2 = t.add(out, out)?;
            Ok(t.scale(out2, 0.25))
        },
    )
    .unwrap();
    assert!(report.max_rel_err < 1e-6, "{report:?}");
}

#[test]
fn attention_rows_are_distributions() {
    let mut r = rng();
    let mut tape = Tape::new();
    let q = tape.constant(Tensor::randn(vec![10, 6], 2.0, &mut r));
    let k = tape.constant(Tensor::randn(vec![10, 6], 2.0, &mut r));
    let v = tape.constant(Tensor::randn(vec![10, 6], 2.0, &mut r));
    let out = tape.attention(q, k, v, 2, 3).unwrap();
    let probs = tape.attention_probs(out).unwrap();
    for row in probs.chunks(5) {
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(row.iter().all(|&p| p >= 0.0));
    }
}

#[test]
fn constants_receive_no_gradient() {
    let mut tape = Tape::new();
    let c = tape.constant(Tensor::vector(vec![1.0, 2.0]));
    let x = tape.leaf(Tensor::vector(vec![3.0, 4.0]));
    let y = tape.mul(c, x).unwrap();
    let s = tape.sum(y);
    tape.backward(s).unwrap();
    assert!(tape.grad(c).is_none());
    assert_eq!(tape.grad(x).unwrap().data(), &[1.0, 2.0]);
}

proptest! {
    #[test]
    fn softmax_rows_sum_to_one(row in prop::collection::vec(-50.0f64..50.0, 1..12)) {
        let y = ops::softmax(&Tensor::vector(row));
        prop_assert!((y.data().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(y.data().iter().all(|&p| p >= 0.0 && p <= 1.0));
    }

    #[test]
    fn softplus_is_positive(x in -700.0f64..1e6) {
        prop_assert!(kernels::softplus(x) > 0.0);
    }
}
