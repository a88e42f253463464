//! Every tape op's gradient against central finite differences, plus
//! softmax row-distribution properties under proptest.

use proptest::prelude::*;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use ssda::tensor::{grad_check, OpKind, Tape, Tensor};

fn random_tensor(rng: &mut ChaCha8Rng, shape: Vec<usize>, lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(lo..hi)).collect();
    Tensor::new(shape, data).unwrap()
}

/// Keep relu arguments away from the kink, where the derivative is undefined.
fn away_from_zero(t: &mut Tensor) {
    for v in t.data_mut() {
        if v.abs() < 1e-3 {
            *v += 2e-3_f64.copysign(if *v == 0.0 { 1.0 } else { *v });
        }
    }
}

#[test]
fn every_op_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let unary_ops = [
        OpKind::Sigmoid,
        OpKind::Relu,
        OpKind::SoftmaxRows,
        OpKind::MeanRows,
        OpKind::Square,
        OpKind::SumAll,
    ];
    for trial in 0..6 {
        for op in unary_ops {
            let mut x = random_tensor(&mut rng, vec![3, 4], -2.0, 2.0);
            if op == OpKind::Relu {
                away_from_zero(&mut x);
            }
            let report = grad_check(
                |tape, xid| {
                    let y = tape.apply(op, &[xid])?;
                    // reduce to scalar via sum of squares so upstream grads vary
                    let sq = tape.square(y)?;
                    tape.sum_all(sq)
                },
                &x,
                1e-5,
                1e-5,
            )
            .unwrap();
            assert!(
                report.passed,
                "{op:?} trial {trial}: dev {}",
                report.max_rel_deviation
            );
        }

        // log_clamped needs positive inputs away from the clamp floor
        let x = random_tensor(&mut rng, vec![3, 4], 0.05, 2.0);
        let report = grad_check(
            |tape, xid| {
                let y = tape.log_clamped(xid)?;
                let sq = tape.square(y)?;
                tape.sum_all(sq)
            },
            &x,
            1e-6,
            1e-5,
        )
        .unwrap();
        assert!(report.passed, "log_clamped: dev {}", report.max_rel_deviation);

        // binary ops, gradient w.r.t. each side in turn
        for op in [OpKind::Add, OpKind::Sub, OpKind::ElementwiseMul] {
            let a = random_tensor(&mut rng, vec![3, 4], -2.0, 2.0);
            let b = random_tensor(&mut rng, vec![3, 4], -2.0, 2.0);
            for side in 0..2 {
                let (varying, fixed) = if side == 0 { (&a, &b) } else { (&b, &a) };
                let report = grad_check(
                    |tape, vid| {
                        let fid = tape.constant(fixed);
                        let ids = if side == 0 { [vid, fid] } else { [fid, vid] };
                        let y = tape.apply(op, &ids)?;
                        let sq = tape.square(y)?;
                        tape.sum_all(sq)
                    },
                    varying,
                    1e-5,
                    1e-5,
                )
                .unwrap();
                assert!(
                    report.passed,
                    "{op:?} side {side}: dev {}",
                    report.max_rel_deviation
                );
            }
        }

        // matmul w.r.t. both operands
        let a = random_tensor(&mut rng, vec![3, 4], -2.0, 2.0);
        let b = random_tensor(&mut rng, vec![4, 2], -2.0, 2.0);
        let report = grad_check(
            |tape, aid| {
                let bid = tape.constant(&b);
                let y = tape.matmul(aid, bid)?;
                let sq = tape.square(y)?;
                tape.sum_all(sq)
            },
            &a,
            1e-5,
            1e-5,
        )
        .unwrap();
        assert!(report.passed, "matmul lhs: dev {}", report.max_rel_deviation);
        let report = grad_check(
            |tape, bid| {
                let aid = tape.constant(&a);
                let y = tape.matmul(aid, bid)?;
                let sq = tape.square(y)?;
                tape.sum_all(sq)
            },
            &b,
            1e-5,
            1e-5,
        )
        .unwrap();
        assert!(report.passed, "matmul rhs: dev {}", report.max_rel_deviation);

        // bias broadcast through add
        let x = random_tensor(&mut rng, vec![3, 4], -2.0, 2.0);
        let bias = random_tensor(&mut rng, vec![4], -1.0, 1.0);
        let report = grad_check(
            |tape, bid| {
                let xid = tape.constant(&x);
                let y = tape.add(xid, bid)?;
                let sq = tape.square(y)?;
                tape.sum_all(sq)
            },
            &bias,
            1e-5,
            1e-5,
        )
        .unwrap();
        assert!(report.passed, "bias add: dev {}", report.max_rel_deviation);
    }
}

#[test]
fn composite_graph_matches_finite_differences() {
    // a small dense network slice: sigmoid(relu(x W1 + b1) W2 + b2)
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let w1 = random_tensor(&mut rng, vec![4, 5], -1.0, 1.0);
    let b1 = random_tensor(&mut rng, vec![5], -0.5, 0.5);
    let w2 = random_tensor(&mut rng, vec![5, 3], -1.0, 1.0);
    let x = random_tensor(&mut rng, vec![3, 4], -2.0, 2.0);
    let report = grad_check(
        |tape, wid| {
            let xid = tape.constant(&x);
            let b1id = tape.constant(&b1);
            let w2id = tape.constant(&w2);
            let z1 = tape.matmul(xid, wid)?;
            let z1b = tape.add(z1, b1id)?;
            let h = tape.relu(z1b)?;
            let z2 = tape.matmul(h, w2id)?;
            let y = tape.sigmoid(z2)?;
            let sq = tape.square(y)?;
            tape.sum_all(sq)
        },
        &w1,
        1e-5,
        1e-5,
    )
    .unwrap();
    assert!(report.passed, "dev {}", report.max_rel_deviation);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn softmax_rows_are_distributions(
        rows in 1usize..5,
        cols in 1usize..6,
        seed in 0u64..1000,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random_tensor(&mut rng, vec![rows, cols], -30.0, 30.0);
        let mut tape = Tape::new();
        let xid = tape.constant(&x);
        let y = tape.softmax_rows(xid).unwrap();
        let v = tape.value(y);
        for r in 0..rows {
            let row = &v.data()[r * cols..(r + 1) * cols];
            let sum: f64 = row.iter().sum();
            prop_assert!((sum - 1.0).abs() < 1e-12);
            prop_assert!(row.iter().all(|&p| p >= 0.0));
        }
    }

    #[test]
    fn shared_subgraph_equals_expanded_tree(
        seed in 0u64..1000,
        n in 1usize..6,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let xt = random_tensor(&mut rng, vec![n], -2.0, 2.0);

        let mut shared = Tape::new();
        let x = shared.var(&xt);
        let sq = shared.square(x).unwrap();
        let s1 = shared.sum_all(sq).unwrap();
        let s2 = shared.sum_all(sq).unwrap();
        let tot = shared.add(s1, s2).unwrap();
        shared.backward(tot).unwrap();

        let mut tree = Tape::new();
        let x2 = tree.var(&xt);
        let sqa = tree.square(x2).unwrap();
        let sqb = tree.square(x2).unwrap();
        let sa = tree.sum_all(sqa).unwrap();
        let sb = tree.sum_all(sqb).unwrap();
        let tot2 = tree.add(sa, sb).unwrap();
        tree.backward(tot2).unwrap();

        prop_assert_eq!(shared.grad(x).unwrap(), tree.grad(x2).unwrap());
    }
}
