use super::*;
use crate::diffcore::{CsrMatrix, Tape, Tensor};
use crate::graphdata::{normalize_adjacency, sbm, GraphBundle, SbmSpec, SplitMasks};
use crate::testutil::{max_grad_error, random_edges, random_tensor};

fn graph(n: usize, edges: &[(usize, usize)], x: Tensor) -> GraphBundle {
    let masks = SplitMasks::new(vec![false; n], vec![false; n], vec![false; n]).unwrap();
    GraphBundle::new(edges, x, vec![0; n], masks).unwrap()
}

fn random_trajectory(layers: usize, n: usize, d: usize, seed: u64) -> Trajectory {
    let slices = (0..layers).map(|l| random_tensor(&[n, d], seed + l as u64)).collect();
    Trajectory::from_slices(slices, None).unwrap()
}

#[test]
fn zero_trajectory_shape_and_tmm_output() {
    let g = graph(5, &[(0, 1)], Tensor::zeros(&[5, 2]));
    let t = precompute_zero(&g, 4, 3).unwrap();
    assert_eq!(t.tensor().shape(), &[4, 5, 3]);
    assert!(t.is_zero());
    let p = MvcParams::init(MvcKind::Tmm, 4, 3, 0).unwrap();
    let mut tape = Tape::new();
    let vars = p.bind(&mut tape).unwrap();
    let out = mvc_tmm(&mut tape, &t, &p, &vars).unwrap();
    assert!(tape.value(out).data().iter().all(|&v| v == 0.0));
}

#[test]
fn mp_fixed_point_on_edgeless_graph() {
    let x = random_tensor(&[4, 3], 1);
    let t = precompute_mp(&graph(4, &[], x.clone()), 3, MpOperator::Adjacency, None).unwrap();
    for l in 0..3 {
        assert_eq!(t.slice(l), x);
    }
}

#[test]
fn mp_two_node_hand_case() {
    let t = precompute_mp(&graph(2, &[(0, 1)], Tensor::eye(2)), 1, MpOperator::Adjacency, None).unwrap();
    assert_eq!(t.slice(0).data(), &[0.5, 0.5, 0.5, 0.5]);
}

#[test]
fn mp_matches_dense_power() {
    let x = random_tensor(&[6, 3], 2);
    let g = graph(6, &random_edges(6, 0.5, 3), x.clone());
    let t = precompute_mp(&g, 3, MpOperator::Adjacency, None).unwrap();
    let a = normalize_adjacency(g.adjacency()).to_dense();
    let mut want = x;
    for l in 0..3 {
        want = a.matmul(&want).unwrap();
        assert!(t.slice(l).max_abs_diff(&want) < 1e-12);
    }
}

#[test]
fn periodic_normalization_gives_unit_rows() {
    let x = random_tensor(&[6, 3], 4);
    let g = graph(6, &random_edges(6, 0.5, 5), x);
    let t = precompute_mp(&g, 4, MpOperator::Laplacian, Some(2)).unwrap();
    for l in [1, 3] {
        let s = t.slice(l);
        for r in 0..6 {
            let n = s.row(r).iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!(n == 0.0 || (n - 1.0).abs() < 1e-12, "layer {} row {r}: {n}", l + 1);
        }
    }
}

#[test]
fn collection_slices_and_detaches() {
    let mut tape = Tape::new();
    let w = tape.param(random_tensor(&[2, 2], 6)).unwrap();
    let x = tape.constant(random_tensor(&[5, 2], 7)).unwrap();
    let h = tape.matmul(x, w).unwrap();
    let t = collect_from_model(&tape, &[h, h], 3, 2, Some(1)).unwrap();
    assert_eq!(t.tensor().shape(), &[2, 3, 2]);
    for r in 0..3 {
        let n: f64 = t.slice(0).row(r).iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((n - 1.0).abs() < 1e-12 || n == 0.0);
    }
    assert!(collect_from_model(&tape, &[h], 3, 2, None).is_err());

    // Identity slicing when nothing was inserted.
    let same = collect_from_model(&tape, &[h], 5, 1, None).unwrap();
    assert_eq!(same.slice(0), *tape.value(h));

    // A loss built on the snapshot cannot reach the weights that produced it.
    let mut next = Tape::new();
    let w2 = next.param(tape.value(w).clone()).unwrap();
    let snap = next.constant(t.slice(0)).unwrap();
    let loss = next.sum_all(snap).unwrap();
    let grads = next.backward(loss).unwrap();
    assert!(grads.get(w2).is_none() && grads.get(snap).is_none());
}

#[test]
fn tmm_single_layer_is_channel_mixing() {
    let t = random_trajectory(1, 4, 3, 8);
    let p = MvcParams::init(MvcKind::Tmm, 1, 3, 9).unwrap();
    let mut tape = Tape::new();
    let vars = p.bind(&mut tape).unwrap();
    let out = mvc_tmm(&mut tape, &t, &p, &vars).unwrap();
    let want = t.slice(0).matmul(&p.tensors()[1]).unwrap();
    assert!(tape.value(out).max_abs_diff(&want) < 1e-14);
}

#[test]
fn tmm_gradients() {
    let t = random_trajectory(3, 5, 4, 10);
    let p = MvcParams::init(MvcKind::Tmm, 3, 4, 11).unwrap();
    let target = random_tensor(&[5, 4], 12);
    let err = max_grad_error(p.tensors(), |tape, vars| {
        let out = mvc_tmm(tape, &t, &p, vars)?;
        let tv = tape.constant(target.clone())?;
        let prod = tape.hadamard(out, tv)?;
        tape.sum_all(prod)
    });
    assert!(err < 1e-4, "{err}");
}

#[test]
fn tt_single_layer_readout_and_weights() {
    let t = random_trajectory(1, 3, 4, 13);
    let p = MvcParams::init(MvcKind::Tt, 1, 4, 14).unwrap();
    let mut tape = Tape::new();
    let vars = p.bind(&mut tape).unwrap();
    let out = mvc_tt_detailed(&mut tape, &t, &p, &vars).unwrap();
    assert!(tape.value(out.readout).data().iter().all(|&w| w == 1.0));

    // Single token: attention is the identity map, so the output is the
    // residual feed-forward of token + W_o W_v projection.
    let ts = p.tensors();
    let mut tok = t.slice(0);
    for r in 0..3 {
        for (v, e) in tok.row_mut(r).iter_mut().zip(ts[0].row(0)) {
            *v += e;
        }
    }
    let y = tok.zip_map(&tok.matmul(&ts[3]).unwrap().matmul(&ts[4]).unwrap(), "t", |a, b| a + b).unwrap();
    let hidden = y.matmul(&ts[5]).unwrap().map(|v| v.max(0.0));
    let want = y.zip_map(&hidden.matmul(&ts[7]).unwrap(), "t", |a, b| a + b).unwrap();
    assert!(tape.value(out.output).max_abs_diff(&want) < 1e-12);
}

#[test]
fn tt_attention_rows_sum_to_one() {
    let t = random_trajectory(4, 5, 6, 15);
    let p = MvcParams::init(MvcKind::Tt, 4, 6, 16).unwrap();
    let mut tape = Tape::new();
    let vars = p.bind(&mut tape).unwrap();
    let out = mvc_tt_detailed(&mut tape, &t, &p, &vars).unwrap();
    let maps = out.attention.iter().flatten().chain(std::iter::once(&out.readout));
    for &m in maps {
        let v = tape.value(m);
        for r in 0..v.rows() {
            assert!((v.row(r).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}

#[test]
fn tt_gradients() {
    let t = random_trajectory(3, 4, 8, 17);
    let p = MvcParams::init(MvcKind::Tt, 3, 8, 18).unwrap();
    let target = random_tensor(&[4, 8], 19);
    let err = max_grad_error(p.tensors(), |tape, vars| {
        let out = mvc_tt(tape, &t, &p, vars)?;
        let tv = tape.constant(target.clone())?;
        let prod = tape.hadamard(out, tv)?;
        tape.sum_all(prod)
    });
    assert!(err < 1e-4, "{err}");
}

#[test]
fn encoders_are_permutation_equivariant() {
    let n = 5;
    let perm = [2, 4, 0, 1, 3];
    let t = random_trajectory(3, n, 4, 20);
    let permuted = Trajectory::from_slices(
        (0..3)
            .map(|l| {
                let s = t.slice(l);
                let mut out = Tensor::zeros(&[n, 4]);
                for i in 0..n {
                    out.row_mut(perm[i]).copy_from_slice(s.row(i));
                }
                out
            })
            .collect(),
        None,
    )
    .unwrap();
    for kind in [MvcKind::Tmm, MvcKind::Tt] {
        let p = MvcParams::init(kind, 3, 4, 21).unwrap();
        let mut tape = Tape::new();
        let vars = p.bind(&mut tape).unwrap();
        let a = mvc_forward(&mut tape, &t, &p, &vars).unwrap();
        let b = mvc_forward(&mut tape, &permuted, &p, &vars).unwrap();
        let (a, b) = (tape.value(a), tape.value(b));
        assert_eq!(a.shape(), &[n, 4]);
        for i in 0..n {
            for c in 0..4 {
                assert!((a.get(i, c) - b.get(perm[i], c)).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn mp_trajectories_are_permutation_equivariant() {
    let n = 6;
    let perm = [5, 3, 1, 0, 2, 4];
    let x = random_tensor(&[n, 2], 22);
    let g = graph(n, &random_edges(n, 0.5, 23), x);
    let pg = g.permuted(&perm).unwrap();
    let t = precompute_mp(&g, 3, MpOperator::Adjacency, Some(2)).unwrap();
    let pt = precompute_mp(&pg, 3, MpOperator::Adjacency, Some(2)).unwrap();
    for l in 0..3 {
        for i in 0..n {
            for c in 0..2 {
                assert!((t.slice(l).get(i, c) - pt.slice(l).get(perm[i], c)).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn projection_changes_width_and_keeps_normalization() {
    let t = random_trajectory(2, 4, 6, 24);
    let t = Trajectory::from_slices((0..2).map(|l| t.slice(l)).collect(), Some(1)).unwrap();
    let p = t.projected(3, 0).unwrap();
    assert_eq!(p.tensor().shape(), &[2, 4, 3]);
    assert_eq!(p, t.projected(3, 0).unwrap());
    let row = p.slice(1);
    assert!((row.row(0).iter().map(|v| v * v).sum::<f64>() - 1.0).abs() < 1e-12);
}

fn toy_sbm() -> GraphBundle {
    sbm(
        &SbmSpec {
            block_sizes: vec![20, 20],
            p_in: 0.3,
            p_out: 0.05,
            n_features: 8,
            signal: 2.0,
        },
        1,
    )
    .unwrap()
}

#[test]
fn pretext_loss_decreases_and_is_deterministic() {
    // Rank-2 features, so masked entries are predictable from visible ones.
    let z = random_tensor(&[40, 2], 26);
    let x = z.matmul(&random_tensor(&[2, 16], 27)).unwrap().map(|v| 2.0 * v);
    let g = graph(40, &random_edges(40, 0.1, 28), x);
    let cfg = PretextConfig {
        hidden: 16,
        epochs: 12,
        lr: 1e-2,
        ..PretextConfig::default()
    };
    let a = pretrain_encoder(&g, &cfg).unwrap();
    // Monotone after a 3-epoch moving average over the first 10 epochs.
    let smooth: Vec<f64> = a.losses.windows(3).map(|w| w.iter().sum::<f64>() / 3.0).collect();
    assert!(smooth[..8].windows(2).all(|w| w[1] < w[0]), "{:?}", a.losses);
    let b = pretrain_encoder(&g, &cfg).unwrap();
    assert_eq!(a.params, b.params);
    let t = a.trajectory(&g, Some(2)).unwrap();
    assert_eq!(t.tensor().shape(), &[2, 40, 16]);
}

#[test]
fn unmasked_pretext_fits_identity() {
    // Edgeless graph: the encoder is an MLP and can reproduce its input.
    let x = random_tensor(&[12, 3], 25).map(f64::abs);
    let g = graph(12, &[], x);
    let cfg = PretextConfig {
        layers: 1,
        hidden: 8,
        epochs: 1500,
        lr: 1e-2,
        mask_ratio: 0.0,
        ..PretextConfig::default()
    };
    let enc = pretrain_encoder(&g, &cfg).unwrap();
    assert!(*enc.losses.last().unwrap() < 1e-4, "{:?}", enc.losses.last());
}

#[test]
fn warm_start_copies_layers() {
    let g = toy_sbm();
    let enc = pretrain_encoder(&g, &PretextConfig { hidden: 8, epochs: 2, ..PretextConfig::default() }).unwrap();
    let mut cfg = enc.params.config.clone();
    cfg.classes = 2;
    let mut down = crate::models::GnnParams::init(&cfg, 9).unwrap();
    assert_eq!(enc.warm_start(&mut down), 2);
    assert_eq!(down.weights, enc.params.weights);
    let _ = CsrMatrix::identity(1);
}
