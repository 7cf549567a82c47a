mod common;

use common::{arr, gradcheck, project, rand_away_from_zero, rand_tensor};
use proptest::prelude::*;
use tempdistill_core::autodiff::{Graph, RandomSource, Tensor};
use tempdistill_core::Error;
use tempdistill_oracle::{oracle_forward, OracleOp};

fn t(shape: &[usize], data: &[f64]) -> Tensor {
    Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
}

#[test]
fn matmul_identity_and_projector() {
    let mut g = Graph::new();
    let eye = g.constant(Tensor::eye(2));
    let b = g.constant(t(&[2, 2], &[1., 2., 3., 4.]));
    let c = g.matmul(eye, b).unwrap();
    assert_eq!(g.value(c).data(), &[1., 2., 3., 4.]);

    let p = g.constant(t(&[2, 2], &[1., 0., 0., 0.]));
    let b = g.constant(t(&[2, 2], &[5., 6., 7., 8.]));
    let c = g.matmul(p, b).unwrap();
    assert_eq!(g.value(c).data(), &[5., 6., 0., 0.]);
}

#[test]
fn matmul_matches_triple_loop() {
    let mut rng = RandomSource::new(11);
    let a = rand_tensor(&[3, 4], &mut rng);
    let b = rand_tensor(&[4, 2], &mut rng);
    let mut g = Graph::new();
    let (va, vb) = (g.constant(a.clone()), g.constant(b.clone()));
    let c = g.matmul(va, vb).unwrap();
    let expected = oracle_forward(OracleOp::MatMul, &[arr(&a), arr(&b)]).unwrap();
    for (x, y) in g.value(c).data().iter().zip(&expected.data) {
        assert!((x - y).abs() < 1e-12);
    }
}

#[test]
fn matmul_shape_error_is_descriptive() {
    let mut g = Graph::new();
    let a = g.constant(Tensor::zeros(&[2, 3]));
    let b = g.constant(Tensor::zeros(&[2, 3]));
    match g.matmul(a, b) {
        Err(Error::Shape { op, detail }) => {
            assert_eq!(op, "matmul");
            assert!(detail.contains("[2x3] by [2x3]"));
        }
        other => panic!("expected shape error, got {other:?}"),
    }
}

#[test]
fn softmax_uniform_shift_and_oracle() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::zeros(&[1, 3]));
    let s = g.softmax_rows(x).unwrap();
    for v in g.value(s).data() {
        assert!((v - 1.0 / 3.0).abs() < 1e-15);
    }

    let a = g.constant(t(&[1, 2], &[0.3, -1.1]));
    let b = g.constant(t(&[1, 2], &[100.3, 98.9]));
    let sa = g.softmax_rows(a).unwrap();
    let sb = g.softmax_rows(b).unwrap();
    assert!(g.value(sa).max_abs_diff(g.value(sb)) < 1e-12);

    let x = t(&[1, 3], &[1., 2., 3.]);
    let vx = g.constant(x.clone());
    let s = g.softmax_rows(vx).unwrap();
    let expected = oracle_forward(OracleOp::SoftmaxRows, &[arr(&x)]).unwrap();
    for (a, b) in g.value(s).data().iter().zip(&expected.data) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn relu_cases() {
    let mut g = Graph::new();
    let x = g.constant(t(&[3], &[-1., 0., 2.]));
    let y = g.relu(x);
    assert_eq!(g.value(y).data(), &[0., 0., 2.]);

    let pos = t(&[4], &[0.1, 2.0, 3.5, 1e-9]);
    let x = g.constant(pos.clone());
    let y = g.relu(x);
    assert_eq!(g.value(y), &pos);

    let mut rng = RandomSource::new(3);
    let r = rand_tensor(&[5, 5], &mut rng);
    let x = g.constant(r.clone());
    let y = g.relu(x);
    let expected = oracle_forward(OracleOp::Relu, &[arr(&r)]).unwrap();
    assert_eq!(g.value(y).data(), expected.data.as_slice());
}

#[test]
fn relu_gradient_at_zero_is_zero() {
    let mut g = Graph::new();
    let x = g.param(t(&[3], &[-1., 0., 2.]));
    let y = g.relu(x);
    let l = g.reduce_mean(y);
    let grads = g.backward(l).unwrap();
    assert_eq!(grads.wrt(x).data(), &[0., 0., 1. / 3.]);
}

#[test]
fn conv1d_cases() {
    let mut g = Graph::new();
    let x = t(&[1, 5], &[1., -2., 3., 0.5, 4.]);
    let vx = g.constant(x.clone());
    let w = g.constant(t(&[1, 1, 3], &[0., 1., 0.]));
    let b = g.constant(Tensor::zeros(&[1]));
    let y = g.conv1d_same3(vx, w, b).unwrap();
    assert_eq!(g.value(y), &x);

    let z = g.constant(Tensor::zeros(&[2, 4]));
    let w = g.constant(t(&[3, 2, 3], &[0.7; 18]));
    let b = g.constant(t(&[3], &[1., -2., 0.5]));
    let y = g.conv1d_same3(z, w, b).unwrap();
    assert_eq!(g.value(y).data(), &[1., 1., 1., 1., -2., -2., -2., -2., 0.5, 0.5, 0.5, 0.5]);

    let mut rng = RandomSource::new(8);
    let x = rand_tensor(&[2, 4], &mut rng);
    let w = rand_tensor(&[1, 2, 3], &mut rng);
    let b = rand_tensor(&[1], &mut rng);
    let (vx, vw, vb) = (g.constant(x.clone()), g.constant(w.clone()), g.constant(b.clone()));
    let y = g.conv1d_same3(vx, vw, vb).unwrap();
    let expected = oracle_forward(OracleOp::Conv1dSame3, &[arr(&x), arr(&w), arr(&b)]).unwrap();
    for (a, e) in g.value(y).data().iter().zip(&expected.data) {
        assert!((a - e).abs() < 1e-12);
    }
}

#[test]
fn conv_rejects_bad_shapes() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::zeros(&[2, 4]));
    let w = g.constant(Tensor::zeros(&[1, 3, 3]));
    let b = g.constant(Tensor::zeros(&[1]));
    assert!(g.conv1d_same3(x, w, b).is_err());
    let w5 = g.constant(Tensor::zeros(&[1, 2, 5]));
    assert!(g.conv1d_same3(x, w5, b).is_err());
    let x2 = g.constant(Tensor::zeros(&[2, 4, 4]));
    let w2 = g.constant(Tensor::zeros(&[1, 2, 3, 3]));
    let b2 = g.constant(Tensor::zeros(&[2]));
    assert!(g.conv2d_same3(x2, w2, b2).is_err());
}

#[test]
fn conv2d_cases() {
    let mut rng = RandomSource::new(21);
    let mut g = Graph::new();
    let x = rand_tensor(&[1, 4, 4], &mut rng);
    let vx = g.constant(x.clone());
    let mut delta = Tensor::zeros(&[1, 1, 3, 3]);
    delta.data_mut()[4] = 1.0;
    let w = g.constant(delta);
    let b = g.constant(Tensor::zeros(&[1]));
    let y = g.conv2d_same3(vx, w, b).unwrap();
    assert_eq!(g.value(y), &x);

    let z = g.constant(Tensor::zeros(&[2, 3, 3]));
    let w = g.constant(Tensor::full(&[2, 2, 3, 3], 0.3));
    let b = g.constant(t(&[2], &[4., -1.]));
    let y = g.conv2d_same3(z, w, b).unwrap();
    assert_eq!(&g.value(y).data()[..9], &[4.0; 9]);
    assert_eq!(&g.value(y).data()[9..], &[-1.0; 9]);

    let w = rand_tensor(&[1, 1, 3, 3], &mut rng);
    let b = rand_tensor(&[1], &mut rng);
    let (vw, vb) = (g.constant(w.clone()), g.constant(b.clone()));
    let y = g.conv2d_same3(vx, vw, vb).unwrap();
    let expected = oracle_forward(OracleOp::Conv2dSame3, &[arr(&x), arr(&w), arr(&b)]).unwrap();
    for (a, e) in g.value(y).data().iter().zip(&expected.data) {
        assert!((a - e).abs() < 1e-12);
    }
}

#[test]
fn elementwise_cases() {
    let mut rng = RandomSource::new(5);
    let a = rand_tensor(&[2, 3], &mut rng);
    let mut g = Graph::new();
    let va = g.constant(a.clone());
    let ones = g.constant(Tensor::ones(&[2, 3]));
    let y = g.mul(va, ones).unwrap();
    assert_eq!(g.value(y), &a);

    let y = g.scale(va, 0.0);
    assert!(g.value(y).data().iter().all(|&v| v == 0.0));

    let mask = g.constant(t(&[2], &[1., 0.]));
    let y = g.mul(va, mask).unwrap();
    assert_eq!(&g.value(y).data()[..3], &a.data()[..3]);
    assert_eq!(&g.value(y).data()[3..], &[0., 0., 0.]);

    let other = g.constant(Tensor::ones(&[3, 2]));
    assert!(g.add(va, other).is_err());
    assert!(g.sub(va, other).is_err());
    assert!(g.mul(va, other).is_err());
    let leading = g.constant(Tensor::ones(&[3]));
    assert!(g.mul(va, leading).is_err(), "only the trailing-channel broadcast is allowed");
}

#[test]
fn reduce_mean_cases() {
    let mut g = Graph::new();
    let x = g.constant(t(&[2], &[2., 4.]));
    let m = g.reduce_mean(x);
    assert_eq!(g.value(m).item(), 3.0);
    let c = g.constant(Tensor::full(&[3, 2], -0.75));
    let m = g.reduce_mean(c);
    assert_eq!(g.value(m).item(), -0.75);

    let mut rng = RandomSource::new(17);
    let r = rand_tensor(&[3, 3], &mut rng);
    let x = g.constant(r.clone());
    let m = g.reduce_mean(x);
    let expected = oracle_forward(OracleOp::ReduceMean, &[arr(&r)]).unwrap();
    assert!((g.value(m).item() - expected.data[0]).abs() < 1e-14);
}

#[test]
fn backward_examples() {
    let mut g = Graph::new();
    let x = g.param(t(&[4], &[1., -3., 2., 8.]));
    let unused = g.param(Tensor::ones(&[2, 2]));
    let loss = g.reduce_mean(x);
    let grads = g.backward(loss).unwrap();
    assert_eq!(grads.wrt(x).data(), &[0.25; 4]);
    assert_eq!(grads.wrt(unused), &Tensor::zeros(&[2, 2]));
    assert_eq!(grads.len(), 2);
}

#[test]
fn backward_rejects_non_scalar() {
    let mut g = Graph::new();
    let x = g.param(Tensor::ones(&[2]));
    assert_eq!(g.backward(x).unwrap_err(), Error::NonScalarLoss(vec![2]));
}

#[test]
fn detach_blocks_gradient() {
    let mut g = Graph::new();
    let x = g.param(t(&[2], &[1., 2.]));
    let d = g.detach(x);
    let y = g.mul(x, d).unwrap();
    let l = g.reduce_mean(y);
    let grads = g.backward(l).unwrap();
    // d/dx of mean(x * stop(x)) = stop(x) / n
    assert_eq!(grads.wrt(x).data(), &[0.5, 1.0]);
}

#[test]
fn inputs_precede_nodes() {
    let mut rng = RandomSource::new(1);
    let mut g = Graph::new();
    let a = g.param(rand_tensor(&[3, 3], &mut rng));
    let b = g.param(rand_tensor(&[3, 3], &mut rng));
    let c = g.matmul(a, b).unwrap();
    let s = g.softmax_rows(c).unwrap();
    let r = g.relu(s);
    let _ = g.add(r, a).unwrap();
    for i in 0..g.len() {
        let v = tempdistill_core::autodiff::Var::from_index_for_tests(i);
        for inp in g.inputs(v) {
            assert!(inp.index() < i);
        }
    }
}

#[test]
fn every_primitive_passes_gradcheck() {
    let mut rng = RandomSource::new(2718);
    let mut reports = Vec::new();
    let a = rand_tensor(&[3, 4], &mut rng);
    let b = rand_tensor(&[4, 2], &mut rng);
    reports.push(gradcheck("matmul", &[a.clone(), b], |g, v| {
        let c = g.matmul(v[0], v[1]).unwrap();
        project(g, c, 1)
    }));
    reports.push(gradcheck("transpose", std::slice::from_ref(&a), |g, v| {
        let c = g.transpose(v[0]).unwrap();
        project(g, c, 2)
    }));
    reports.push(gradcheck("softmax_rows", std::slice::from_ref(&a), |g, v| {
        let c = g.softmax_rows(v[0]).unwrap();
        project(g, c, 3)
    }));
    reports.push(gradcheck("log_softmax_rows", std::slice::from_ref(&a), |g, v| {
        let c = g.log_softmax_rows(v[0]).unwrap();
        project(g, c, 4)
    }));
    let k = rand_away_from_zero(&[3, 4], &mut rng);
    reports.push(gradcheck("relu", std::slice::from_ref(&k), |g, v| {
        let c = g.relu(v[0]);
        project(g, c, 5)
    }));
    reports.push(gradcheck("abs", &[k], |g, v| {
        let c = g.abs(v[0]);
        project(g, c, 6)
    }));
    reports.push(gradcheck("tanh", std::slice::from_ref(&a), |g, v| {
        let c = g.tanh(v[0]);
        project(g, c, 7)
    }));
    let x = rand_tensor(&[2, 5], &mut rng);
    let w = rand_tensor(&[3, 2, 3], &mut rng);
    let bias = rand_tensor(&[3], &mut rng);
    reports.push(gradcheck("conv1d_same3", &[x, w, bias], |g, v| {
        let c = g.conv1d_same3(v[0], v[1], v[2]).unwrap();
        project(g, c, 8)
    }));
    let x = rand_tensor(&[2, 4, 3], &mut rng);
    let w = rand_tensor(&[2, 2, 3, 3], &mut rng);
    let bias = rand_tensor(&[2], &mut rng);
    reports.push(gradcheck("conv2d_same3", &[x, w, bias], |g, v| {
        let c = g.conv2d_same3(v[0], v[1], v[2]).unwrap();
        project(g, c, 9)
    }));
    let a2 = rand_tensor(&[3, 4], &mut rng);
    reports.push(gradcheck("add", &[a.clone(), a2.clone()], |g, v| {
        let c = g.add(v[0], v[1]).unwrap();
        project(g, c, 10)
    }));
    reports.push(gradcheck("sub", &[a.clone(), a2.clone()], |g, v| {
        let c = g.sub(v[0], v[1]).unwrap();
        project(g, c, 11)
    }));
    reports.push(gradcheck("mul", &[a.clone(), a2], |g, v| {
        let c = g.mul(v[0], v[1]).unwrap();
        project(g, c, 12)
    }));
    let feats = rand_tensor(&[2, 3, 4], &mut rng);
    let mask = rand_tensor(&[2, 3], &mut rng);
    reports.push(gradcheck("mask_mul", &[feats.clone(), mask], |g, v| {
        let c = g.mul(v[0], v[1]).unwrap();
        project(g, c, 13)
    }));
    reports.push(gradcheck("scale", std::slice::from_ref(&a), |g, v| {
        let c = g.scale(v[0], -2.5);
        project(g, c, 14)
    }));
    let row = rand_tensor(&[4], &mut rng);
    reports.push(gradcheck("add_bias", &[a.clone(), row], |g, v| {
        let c = g.add_bias(v[0], v[1]).unwrap();
        project(g, c, 15)
    }));
    reports.push(gradcheck("frame_stack_reshape", &[feats], |g, v| {
        let f0 = g.frame(v[0], 1).unwrap();
        let f1 = g.frame(v[0], 0).unwrap();
        let s = g.stack(&[f0, f1, f0]).unwrap();
        let r = g.reshape(s, &[9, 4]).unwrap();
        project(g, r, 16)
    }));
    reports.push(gradcheck("gather_rows", &[a], |g, v| {
        let c = g.gather_rows(v[0], &[2, 0, 2]).unwrap();
        project(g, c, 17)
    }));
    for r in &reports {
        assert!(r.passed, "{r:?}");
    }
}

fn small_matrix() -> impl Strategy<Value = (usize, usize, Vec<f64>)> {
    (1usize..5, 1usize..5).prop_flat_map(|(m, n)| (Just(m), Just(n), prop::collection::vec(-20.0f64..20.0, m * n)))
}

proptest! {
    #[test]
    fn softmax_rows_sum_to_one((m, n, data) in small_matrix()) {
        let mut g = Graph::new();
        let x = g.constant(Tensor::new(vec![m, n], data).unwrap());
        let s = g.softmax_rows(x).unwrap();
        for row in g.value(s).data().chunks(n) {
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn matmul_commutes_with_row_permutation(seed in any::<u64>(), m in 1usize..6, k in 1usize..5, n in 1usize..5) {
        let mut rng = RandomSource::new(seed);
        let a = rand_tensor(&[m, k], &mut rng);
        let b = rand_tensor(&[k, n], &mut rng);
        let mut perm: Vec<usize> = (0..m).collect();
        for i in (1..m).rev() {
            perm.swap(i, rng.below(i + 1));
        }
        let mut g = Graph::new();
        let (va, vb) = (g.constant(a), g.constant(b));
        let pa = g.gather_rows(va, &perm).unwrap();
        let left = g.matmul(pa, vb).unwrap();
        let ab = g.matmul(va, vb).unwrap();
        let right = g.gather_rows(ab, &perm).unwrap();
        prop_assert_eq!(g.value(left), g.value(right));
    }

    #[test]
    fn forward_matches_oracle_on_random_shapes(seed in any::<u64>(), m in 1usize..5, k in 1usize..5, n in 1usize..5) {
        let mut rng = RandomSource::new(seed);
        let a = rand_tensor(&[m, k], &mut rng);
        let b = rand_tensor(&[k, n], &mut rng);
        let mut g = Graph::new();
        let (va, vb) = (g.constant(a.clone()), g.constant(b.clone()));
        let c = g.matmul(va, vb).unwrap();
        let s = g.softmax_rows(c).unwrap();
        let ref_c = oracle_forward(OracleOp::MatMul, &[arr(&a), arr(&b)]).unwrap();
        let ref_s = oracle_forward(OracleOp::SoftmaxRows, std::slice::from_ref(&ref_c)).unwrap();
        for (x, y) in g.value(c).data().iter().zip(&ref_c.data) {
            prop_assert!((x - y).abs() < 1e-10);
        }
        for (x, y) in g.value(s).data().iter().zip(&ref_s.data) {
            prop_assert!((x - y).abs() < 1e-10);
        }
    }
}
