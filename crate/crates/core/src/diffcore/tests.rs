use std::sync::Arc;

use super::*;
use crate::testutil::{max_grad_error, random_edges, random_tensor};

fn csr_from_edges(n: usize, edges: &[(usize, usize)], seed: u64) -> CsrMatrix {
    let w = random_tensor(&[edges.len().max(1), 1], seed);
    let trip: Vec<_> = edges
        .iter()
        .enumerate()
        .map(|(k, &(i, j))| (i, j, w.data()[k]))
        .collect();
    CsrMatrix::from_triplets(n, n, &trip).unwrap()
}

#[test]
fn add_zero_is_identity() {
    let mut tape = Tape::new();
    let x = tape.constant(random_tensor(&[3, 2], 1)).unwrap();
    let z = tape.constant(Tensor::zeros(&[3, 2])).unwrap();
    let y = tape.add(x, z).unwrap();
    assert_eq!(tape.value(y), tape.value(x));
}

#[test]
fn matmul_gradient_matches_finite_differences() {
    let params = [random_tensor(&[3, 4], 2), random_tensor(&[4, 2], 3)];
    let err = max_grad_error(&params, |t, v| {
        let p = t.matmul(v[0], v[1])?;
        let sq = t.hadamard(p, p)?;
        t.sum_all(sq)
    });
    assert!(err < 1e-6, "max rel err {err}");
}

#[test]
fn elementwise_and_structural_ops_gradients() {
    let params = [random_tensor(&[4, 3], 4), random_tensor(&[4, 3], 5), random_tensor(&[1, 3], 6)];
    let err = max_grad_error(&params, |t, v| {
        let a = t.elu(v[0])?;
        let b = t.relu(v[1])?;
        let c = t.sub(a, b)?;
        let d = t.add_row(c, v[2])?;
        let e = t.concat_cols(&[d, v[0]])?;
        let f = t.concat_rows(&[e, e])?;
        let g = t.slice_cols(f, 1, 5)?;
        let h = t.gather_rows(g, &[0, 3, 3, 7])?;
        let s = t.slice_cols(h, 0, 1)?;
        let m = t.mul_rows(h, s)?;
        let k = t.abs(m)?;
        let r = t.row_dot(k, h)?;
        let q = t.scale(r, 0.7)?;
        let q = t.add_scalar(q, 2.0)?;
        t.mean_all(q)
    });
    assert!(err < 1e-6, "max rel err {err}");
}

#[test]
fn relu_clamps_negatives() {
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::from_rows(&[vec![-1.0, 2.0]]).unwrap()).unwrap();
    let y = tape.relu(x).unwrap();
    assert_eq!(tape.value(y).data(), &[0.0, 2.0]);
}

#[test]
fn dropout_contract() {
    let mut tape = Tape::new();
    let x = tape.param(random_tensor(&[20, 5], 7)).unwrap();
    assert_eq!(tape.dropout(x, 0.0, 1).unwrap(), x);
    let a = tape.dropout(x, 0.5, 42).unwrap();
    let b = tape.dropout(x, 0.5, 42).unwrap();
    assert_eq!(tape.value(a), tape.value(b));
    let c = tape.dropout(x, 0.5, 43).unwrap();
    assert_ne!(tape.value(a), tape.value(c));
    assert!(tape.dropout(x, 1.0, 1).is_err());
    assert!(tape.dropout(x, -0.1, 1).is_err());
}

#[test]
fn spmm_identity_and_two_node_mean() {
    let mut tape = Tape::new();
    let xv = Tensor::from_rows(&[vec![1.0, 4.0], vec![3.0, 0.0]]).unwrap();
    let x = tape.constant(xv.clone()).unwrap();
    let id = Arc::new(CsrMatrix::identity(2));
    let y = tape.spmm(&id, x).unwrap();
    assert_eq!(tape.value(y), &xv);

    let half = Arc::new(CsrMatrix::from_triplets(2, 2, &[(0, 0, 0.5), (0, 1, 0.5), (1, 0, 0.5), (1, 1, 0.5)]).unwrap());
    let m = tape.spmm(&half, x).unwrap();
    assert_eq!(tape.value(m).data(), &[2.0, 2.0, 2.0, 2.0]);
}

#[test]
fn spmm_gradient_equals_densified_matmul_gradient() {
    let edges = random_edges(5, 0.5, 11);
    let s = csr_from_edges(5, &edges, 12);
    let dense = s.to_dense();
    let x0 = random_tensor(&[5, 3], 13);
    let up = random_tensor(&[5, 3], 14);

    let run = |sparse: bool| -> (Tensor, Tensor) {
        let mut tape = Tape::new();
        let x = tape.param(x0.clone()).unwrap();
        let y = if sparse {
            tape.spmm(&Arc::new(s.clone()), x).unwrap()
        } else {
            let d = tape.constant(dense.clone()).unwrap();
            tape.matmul(d, x).unwrap()
        };
        let u = tape.constant(up.clone()).unwrap();
        let p = tape.hadamard(y, u).unwrap();
        let l = tape.sum_all(p).unwrap();
        let g = tape.backward(l).unwrap();
        (tape.value(y).clone(), g.get(x).unwrap().clone())
    };
    let (ys, gs) = run(true);
    let (yd, gd) = run(false);
    assert!(ys.max_abs_diff(&yd) < 1e-12);
    assert!(gs.max_abs_diff(&gd) < 1e-12);
}

#[test]
fn spmm_rejects_mismatch() {
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::zeros(&[3, 2])).unwrap();
    assert!(tape.spmm(&Arc::new(CsrMatrix::identity(2)), x).is_err());
}

#[test]
fn weighted_spmm_gradients() {
    let edges = random_edges(6, 0.5, 21);
    let s = Arc::new(csr_from_edges(6, &edges, 22));
    let params = [random_tensor(&[s.nnz(), 1], 23), random_tensor(&[6, 2], 24)];
    let err = max_grad_error(&params, |t, v| {
        let y = t.spmm_weighted(&s, v[0], v[1])?;
        let y2 = t.hadamard(y, y)?;
        t.sum_all(y2)
    });
    assert!(err < 1e-6, "max rel err {err}");
}

#[test]
fn row_l2_normalize_values_and_gradient() {
    let mut tape = Tape::new();
    let x = tape
        .constant(Tensor::from_rows(&[vec![3.0, 4.0], vec![0.0, 0.0]]).unwrap())
        .unwrap();
    let y = tape.row_l2_normalize(x).unwrap();
    let v = tape.value(y);
    assert!((v.get(0, 0) - 0.6).abs() < 1e-15 && (v.get(0, 1) - 0.8).abs() < 1e-15);
    assert_eq!(v.row(1), &[0.0, 0.0]);

    let weights = random_tensor(&[4, 3], 31);
    let err = max_grad_error(&[random_tensor(&[4, 3], 30)], |t, v| {
        let n = t.row_l2_normalize(v[0])?;
        let w = t.constant(weights.clone())?;
        let p = t.hadamard(n, w)?;
        t.sum_all(p)
    });
    assert!(err < 1e-6, "max rel err {err}");
}

#[test]
fn cross_entropy_saturated_and_uniform() {
    let mut tape = Tape::new();
    let mut l = Tensor::zeros(&[3, 4]);
    let labels = [2i64, 0, 3];
    for (i, &y) in labels.iter().enumerate() {
        l.set(i, y as usize, 1000.0);
    }
    let logits = tape.constant(l).unwrap();
    let loss = tape.masked_cross_entropy(logits, &labels, &[true; 3]).unwrap();
    assert!(tape.value(loss).data()[0] < 1e-6);

    let zeros = tape.constant(Tensor::zeros(&[3, 4])).unwrap();
    let loss = tape.masked_cross_entropy(zeros, &labels, &[true, false, true]).unwrap();
    assert!((tape.value(loss).data()[0] - 4f64.ln()).abs() < 1e-12);

    assert!(matches!(
        tape.masked_cross_entropy(zeros, &labels, &[false; 3]),
        Err(crate::Error::EmptyMask)
    ));
    assert!(tape.masked_cross_entropy(zeros, &[5, 0, 0], &[true, false, false]).is_err());
}

#[test]
fn cross_entropy_gradient() {
    let labels = [1i64, 3, 0];
    let err = max_grad_error(&[random_tensor(&[3, 4], 40)], |t, v| {
        t.masked_cross_entropy(v[0], &labels, &[true, false, true])
    });
    assert!(err < 1e-5, "max rel err {err}");
}

#[test]
fn softmax_rows_gradient() {
    let w = random_tensor(&[3, 5], 51);
    let err = max_grad_error(&[random_tensor(&[3, 5], 50)], |t, v| {
        let s = t.softmax_rows(v[0])?;
        let c = t.constant(w.clone())?;
        let p = t.hadamard(s, c)?;
        t.sum_all(p)
    });
    assert!(err < 1e-6, "max rel err {err}");
}

#[test]
fn backward_simple_losses() {
    let mut tape = Tape::new();
    let xv = random_tensor(&[3, 2], 60);
    let x = tape.param(xv.clone()).unwrap();
    let s = tape.sum_all(x).unwrap();
    let g = tape.backward(s).unwrap();
    assert_eq!(g.get(x).unwrap(), &Tensor::filled(&[3, 2], 1.0));

    let mut tape = Tape::new();
    let x = tape.param(xv.clone()).unwrap();
    let sq = tape.hadamard(x, x).unwrap();
    let s = tape.sum_all(sq).unwrap();
    let half = tape.scale(s, 0.5).unwrap();
    let g = tape.backward(half).unwrap();
    assert!(g.get(x).unwrap().max_abs_diff(&xv) < 1e-15);
}

#[test]
fn backward_errors() {
    let mut tape = Tape::new();
    let x = tape.param(Tensor::zeros(&[2, 2])).unwrap();
    assert!(matches!(tape.backward(x), Err(crate::Error::NotScalar(_))));
    let s = tape.sum_all(x).unwrap();
    tape.backward(s).unwrap();
    assert!(matches!(tape.backward(s), Err(crate::Error::TapeConsumed)));
    assert!(matches!(tape.relu(x), Err(crate::Error::TapeConsumed)));
    tape.reset();
    assert!(tape.is_empty());
    assert!(tape.param(Tensor::zeros(&[1, 1])).is_ok());
}

#[test]
fn tape_is_topologically_ordered() {
    let mut tape = Tape::new();
    let a = tape.param(random_tensor(&[2, 2], 70)).unwrap();
    let b = tape.matmul(a, a).unwrap();
    let c = tape.concat_cols(&[a, b]).unwrap();
    let d = tape.sum_all(c).unwrap();
    for v in [b, c, d] {
        assert!(tape.parents(v).iter().all(|p| p.index() < v.index()));
    }
}

#[test]
fn composite_pipeline_gradient() {
    let edges = random_edges(6, 0.5, 80);
    let s = Arc::new(csr_from_edges(6, &edges, 81));
    let x = random_tensor(&[6, 4], 82);
    let labels = [0i64, 1, 2, 1, 0, 2];
    let err = max_grad_error(&[random_tensor(&[4, 3], 83), random_tensor(&[3, 3], 84)], |t, v| {
        let xc = t.constant(x.clone())?;
        let h = t.spmm(&s, xc)?;
        let h = t.matmul(h, v[0])?;
        let h = t.relu(h)?;
        let logits = t.matmul(h, v[1])?;
        t.masked_cross_entropy(logits, &labels, &[true, true, false, true, false, true])
    });
    assert!(err < 1e-4, "max rel err {err}");
}

#[test]
fn straight_through_gradient_equals_soft_gradient() {
    let logits = random_tensor(&[6, 2], 90);
    let up = random_tensor(&[6, 2], 91);
    let run = |use_hard: bool| -> Tensor {
        let mut tape = Tape::new();
        let l = tape.param(logits.clone()).unwrap();
        let s = gumbel_softmax_st(&mut tape, l, 0.7, GumbelNoise::Seeded(5)).unwrap();
        let head = if use_hard { s.hard } else { s.soft };
        let u = tape.constant(up.clone()).unwrap();
        let p = tape.hadamard(head, u).unwrap();
        let loss = tape.sum_all(p).unwrap();
        tape.backward(loss).unwrap().get(l).unwrap().clone()
    };
    assert!(run(true).max_abs_diff(&run(false)) <= 1e-12);
}

#[test]
fn nonfinite_results_are_errors() {
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::filled(&[1, 1], 1e308)).unwrap();
    let y = tape.scale(x, 10.0);
    assert!(matches!(y, Err(crate::Error::NonFinite { .. })));
}

mod properties {
    use proptest::prelude::*;

    use super::*;

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn hard_rows_are_one_hot_and_soft_rows_sum_to_one(
            vals in proptest::collection::vec(-30.0f64..30.0, 2..40),
            seed in any::<u64>(),
            temp in 0.1f64..3.0,
        ) {
            let rows = vals.len() / 2;
            let mut tape = Tape::new();
            let l = tape.param(Tensor::new(vec![rows, 2], vals[..rows * 2].to_vec()).unwrap()).unwrap();
            let s = gumbel_softmax_st(&mut tape, l, temp, GumbelNoise::Seeded(seed)).unwrap();
            let hard = tape.value(s.hard);
            let soft = tape.value(s.soft);
            for r in 0..rows {
                let h = hard.row(r);
                prop_assert!(h.iter().all(|&v| v == 0.0 || v == 1.0));
                prop_assert_eq!(h[0] + h[1], 1.0);
                prop_assert!((soft.row(r).iter().sum::<f64>() - 1.0).abs() <= 1e-12);
                prop_assert_eq!(h[1] == 1.0, soft.get(r, 0) <= soft.get(r, 1));
            }
        }

        #[test]
        fn spmm_matches_dense_product(seed in any::<u64>(), n in 2usize..9, d in 1usize..5) {
            let edges = random_edges(n, 0.4, seed);
            let s = csr_from_edges(n, &edges, seed ^ 1);
            let x = random_tensor(&[n, d], seed ^ 2);
            let sparse = s.matmul(&x).unwrap();
            let dense = s.to_dense().matmul(&x).unwrap();
            prop_assert!(sparse.max_abs_diff(&dense) <= 1e-12);
        }
    }
}
