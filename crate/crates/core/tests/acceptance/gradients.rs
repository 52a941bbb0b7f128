//! Criteria 1 and 2: finite-difference agreement for every differentiable
//! operation and the composed pipeline, and the straight-through contract.

use std::sync::Arc;

use unigap::diffcore::{
    gumbel_softmax_st, gumbel_softmax_st_frozen, hard_indicator, CsrMatrix, GumbelNoise, Tape, Tensor, Var,
};
use unigap::graphdata::{GraphBundle, SplitMasks};
use unigap::models::{gnn_forward, Activation, BoundGnn, FeatureInput, GnnConfig, GnnParams, ModelKind, Mode};
use unigap::trajectory::{mvc_forward, precompute_mp, MpOperator, MvcKind, MvcParams, Trajectory};
use unigap::training::{mad_var, total_loss, MadMode};
use unigap::upsampler::{
    adaedge_logits, build_augmented, edge_logits, AugmentOptions, DecisionVars, InitMode, InsertionDecision, INSERT,
};
use unigap::Result;

use crate::common::{grad_error, probe, random_graph, uniform, GRAD_TOL};

type OpCheck = (&'static str, Vec<Tensor>, Box<dyn Fn(&mut Tape, &[Var]) -> Result<Var>>);

fn sparse(rows: usize, cols: usize, seed: u64) -> Arc<CsrMatrix> {
    // Roughly half the entries dropped to exercise the sparse paths.
    let dense = uniform(&[rows, cols], seed).map(|v| if v.abs() < 0.5 { 0.0 } else { v });
    Arc::new(CsrMatrix::from_dense(&dense))
}

/// Away from the kinks of relu and abs.
fn off_kink(shape: &[usize], seed: u64) -> Tensor {
    uniform(shape, seed).map(|v| if v.abs() < 0.05 { v + 0.1f64.copysign(v) } else { v })
}

fn reference_softmax(logits: &Tensor) -> Result<(Tensor, Tensor)> {
    let mut tape = Tape::new();
    let l = tape.constant(logits.clone())?;
    let soft = tape.softmax_rows(l)?;
    let soft = tape.value(soft).clone();
    Ok((hard_indicator(&soft), soft))
}

fn elementwise_ops() -> Vec<OpCheck> {
    let a = || uniform(&[4, 3], 1);
    let b = || uniform(&[4, 3], 2);
    vec![
        ("matmul", vec![a(), uniform(&[3, 5], 3)], Box::new(|t, v| {
            let o = t.matmul(v[0], v[1])?;
            probe(t, o, 10)
        })),
        ("add", vec![a(), b()], Box::new(|t, v| {
            let o = t.add(v[0], v[1])?;
            probe(t, o, 11)
        })),
        ("sub", vec![a(), b()], Box::new(|t, v| {
            let o = t.sub(v[0], v[1])?;
            probe(t, o, 12)
        })),
        ("hadamard", vec![a(), b()], Box::new(|t, v| {
            let o = t.hadamard(v[0], v[1])?;
            probe(t, o, 13)
        })),
        ("add_row", vec![a(), uniform(&[1, 3], 4)], Box::new(|t, v| {
            let o = t.add_row(v[0], v[1])?;
            probe(t, o, 14)
        })),
        ("concat_cols", vec![a(), uniform(&[4, 2], 5)], Box::new(|t, v| {
            let o = t.concat_cols(&[v[0], v[1]])?;
            probe(t, o, 15)
        })),
        ("concat_rows", vec![a(), uniform(&[2, 3], 6)], Box::new(|t, v| {
            let o = t.concat_rows(&[v[0], v[1]])?;
            probe(t, o, 16)
        })),
        ("relu", vec![off_kink(&[4, 3], 7)], Box::new(|t, v| {
            let o = t.relu(v[0])?;
            probe(t, o, 17)
        })),
        ("elu", vec![a()], Box::new(|t, v| {
            let o = t.elu(v[0])?;
            probe(t, o, 18)
        })),
        ("abs", vec![off_kink(&[4, 3], 8)], Box::new(|t, v| {
            let o = t.abs(v[0])?;
            probe(t, o, 19)
        })),
        ("scale", vec![a()], Box::new(|t, v| {
            let o = t.scale(v[0], -1.7)?;
            probe(t, o, 20)
        })),
        ("add_scalar", vec![a()], Box::new(|t, v| {
            let o = t.add_scalar(v[0], 0.3)?;
            probe(t, o, 21)
        })),
        ("dropout", vec![a()], Box::new(|t, v| {
            let o = t.dropout(v[0], 0.4, 99)?;
            probe(t, o, 22)
        })),
        ("row_l2_normalize", vec![a()], Box::new(|t, v| {
            let o = t.row_l2_normalize(v[0])?;
            probe(t, o, 23)
        })),
        ("softmax_rows", vec![a()], Box::new(|t, v| {
            let o = t.softmax_rows(v[0])?;
            probe(t, o, 24)
        })),
        ("masked_cross_entropy", vec![a()], Box::new(|t, v| {
            t.masked_cross_entropy(v[0], &[0, 2, -1, 1], &[true, true, false, true])
        })),
        ("gather_rows", vec![a()], Box::new(|t, v| {
            let o = t.gather_rows(v[0], &[3, 0, 3, 1])?;
            probe(t, o, 25)
        })),
        ("slice_cols", vec![a()], Box::new(|t, v| {
            let o = t.slice_cols(v[0], 1, 3)?;
            probe(t, o, 26)
        })),
        ("mul_rows", vec![a(), uniform(&[4, 1], 9)], Box::new(|t, v| {
            let o = t.mul_rows(v[0], v[1])?;
            probe(t, o, 27)
        })),
        ("row_dot", vec![a(), b()], Box::new(|t, v| {
            let o = t.row_dot(v[0], v[1])?;
            probe(t, o, 28)
        })),
        ("mean_all", vec![a()], Box::new(|t, v| {
            let s = t.hadamard(v[0], v[0])?;
            t.mean_all(s)
        })),
        ("spmm", vec![uniform(&[5, 3], 30)], Box::new(|t, v| {
            let o = t.spmm(&sparse(6, 5, 31), v[0])?;
            probe(t, o, 32)
        })),
        ("spmm_weighted", vec![uniform(&[sparse(6, 5, 34).nnz(), 1], 35), uniform(&[5, 3], 33)], Box::new(|t, v| {
            let o = t.spmm_weighted(&sparse(6, 5, 34), v[0], v[1])?;
            probe(t, o, 36)
        })),
        ("straight_through (soft path)", vec![uniform(&[5, 2], 41)], Box::new(|t, v| {
            // Hard choice and anchor frozen at the unperturbed point.
            let (hard, anchor) = reference_softmax(&uniform(&[5, 2], 41))?;
            let soft = t.softmax_rows(v[0])?;
            let o = t.straight_through(soft, hard, Some(&anchor))?;
            probe(t, o, 42)
        })),
        ("mad", vec![uniform(&[6, 3], 43)], Box::new(|t, v| {
            mad_var(t, v[0], &[(0, 1), (1, 2), (2, 0), (3, 4), (4, 5), (1, 0)], MadMode::PerEdge)
        })),
    ]
}

/// Eight-node toy bundle shared by the composed checks.
fn toy_bundle() -> Result<GraphBundle> {
    let n = 8;
    let edges = random_graph(n, 0.45, 50);
    let labels = vec![0, 1, 0, 1, 1, 0, 1, 0];
    let masks = SplitMasks::new(
        (0..n).map(|i| i < 5).collect(),
        (0..n).map(|i| i == 5).collect(),
        (0..n).map(|i| i > 5).collect(),
    )?;
    GraphBundle::new(&edges, uniform(&[n, 4], 51), labels, masks)
}

fn gnn_params(kind: ModelKind) -> Result<GnnParams> {
    let cfg = GnnConfig {
        kind,
        in_dim: 4,
        hidden: 4,
        layers: 2,
        classes: 2,
        activation: Activation::Elu,
        dropout: 0.0,
    };
    GnnParams::init(&cfg, 52)
}

/// The GNN tensors rebuilt from a slice of tape variables, in the order of
/// [`GnnParams::tensors`].
fn bound_from(vars: &[Var], p: &GnnParams) -> BoundGnn {
    let l = p.weights.len();
    let nw = p.neighbor_weights.len();
    BoundGnn {
        weights: vars[..l].to_vec(),
        neighbor_weights: vars[l..l + nw].to_vec(),
        biases: vars[l + nw..2 * l + nw].to_vec(),
        head_weight: vars[2 * l + nw],
        head_bias: vars[2 * l + nw + 1],
    }
}

struct Composed {
    g: GraphBundle,
    traj: Trajectory,
    mvc: MvcParams,
    gnn: GnnParams,
    w_up: Tensor,
    kind: ModelKind,
    init: InitMode,
}

impl Composed {
    fn new(mvc: MvcKind, kind: ModelKind, init: InitMode) -> Result<Self> {
        let g = toy_bundle()?;
        let traj = precompute_mp(&g, 2, MpOperator::Adjacency, None)?;
        let mut c = Self {
            mvc: MvcParams::init(mvc, 2, 4, 54)?,
            gnn: gnn_params(kind)?,
            g,
            traj,
            w_up: Tensor::zeros(&[8, 2]),
            kind,
            init,
        };
        // First head seed that inserts on a real share of the edges, so the
        // check covers both kept and upsampled edges.
        for seed in 53.. {
            c.w_up = uniform(&[8, 2], seed).map(|v| 2.0 * v);
            let (hard, _) = c.reference()?;
            let share = hard.data().chunks(2).filter(|r| r[INSERT] == 1.0).count() as f64 / hard.rows() as f64;
            if (0.2..=0.8).contains(&share) {
                break;
            }
        }
        Ok(c)
    }

    fn params(&self) -> Vec<Tensor> {
        let mut p: Vec<Tensor> = self.mvc.tensors().to_vec();
        p.push(self.w_up.clone());
        p.extend(self.gnn.tensors().into_iter().cloned());
        p
    }

    /// Hard decisions at the unperturbed parameters, frozen so finite
    /// differences stay on one branch of the discrete choice.
    fn reference(&self) -> Result<(Tensor, Tensor)> {
        let mut tape = Tape::new();
        let vars = self.mvc.bind(&mut tape)?;
        let c = mvc_forward(&mut tape, &self.traj, &self.mvc, &vars)?;
        let w = tape.constant(self.w_up.clone())?;
        let l = edge_logits(&mut tape, c, &self.g.directed_edges(), w)?;
        let s = gumbel_softmax_st(&mut tape, l, 0.7, GumbelNoise::Off)?;
        Ok((tape.value(s.hard).clone(), tape.value(s.soft).clone()))
    }

    /// trajectory → condensation → edge head → straight-through mask →
    /// augmented graph → GNN → cross-entropy with the MAD reward.
    fn loss(&self, tape: &mut Tape, v: &[Var], hard: &Tensor, anchor: &Tensor) -> Result<Var> {
        let m = self.mvc.tensors().len();
        let c = mvc_forward(tape, &self.traj, &self.mvc, &v[..m])?;
        let edges = self.g.directed_edges();
        let logits = edge_logits(tape, c, &edges, v[m])?;
        let noise = Tensor::zeros(&[edges.len(), 2]);
        let s = gumbel_softmax_st_frozen(tape, logits, 0.7, &noise, hard, anchor)?;
        let decision = InsertionDecision {
            logits: tape.value(logits).clone(),
            soft: tape.value(s.soft).clone(),
            mask: (0..edges.len()).map(|e| hard.get(e, INSERT) == 1.0).collect(),
            edges,
            vars: Some(DecisionVars { soft: s.soft, hard: s.hard }),
        };
        let aug = build_augmented(tape, self.g.n_nodes(), &decision, &AugmentOptions::new(self.kind, self.init))?;
        let bound = bound_from(&v[m + 1..], &self.gnn);
        let x = FeatureInput::sparse_from(self.g.features());
        let out = gnn_forward(tape, &self.gnn, &bound, &aug.operator, &x, aug.inserted.as_ref(), Mode::Eval)?;
        let labels = aug.labels(self.g.labels());
        let mask = aug.mask(self.g.masks().get(unigap::graphdata::Split::Train));
        let hidden = *out.hidden.last().expect("at least one layer");
        total_loss(tape, out.logits, &labels, &mask, hidden, &aug.edges, 0.5)
    }
}

pub struct GradientSummary {
    pub checks: usize,
    pub worst: f64,
    pub worst_name: String,
    pub failures: Vec<String>,
}

/// Criterion 1.
pub fn gradient_suite() -> Result<GradientSummary> {
    let mut results: Vec<(String, f64)> = Vec::new();
    let mut failures = Vec::new();
    for (name, params, f) in elementwise_ops() {
        results.push((name.to_string(), grad_error(&params, f)?));
    }

    let hidden = uniform(&[6, 3], 60);
    results.push((
        "adaedge_logits".into(),
        grad_error(&[hidden, uniform(&[6, 2], 61)], |t, v| {
            let o = adaedge_logits(t, v[0], &[(0, 1), (2, 5), (4, 3)], v[1])?;
            probe(t, o, 62)
        })?,
    ));
    for kind in [MvcKind::Tmm, MvcKind::Tt] {
        let c = Composed::new(kind, ModelKind::Gcn, InitMode::Mean)?;
        let n = c.mvc.tensors().len();
        results.push((
            format!("mvc {kind:?}"),
            grad_error(&c.params()[..n], |t, v| {
                let o = mvc_forward(t, &c.traj, &c.mvc, v)?;
                probe(t, o, 63)
            })?,
        ));
    }
    for (mvc, kind, init) in [
        (MvcKind::Tmm, ModelKind::Gcn, InitMode::Adaptive),
        (MvcKind::Tt, ModelKind::Gcn, InitMode::Mean),
        (MvcKind::Tt, ModelKind::Sage, InitMode::Adaptive),
        (MvcKind::Tmm, ModelKind::Sage, InitMode::Zero),
    ] {
        let c = Composed::new(mvc, kind, init)?;
        let (hard, anchor) = c.reference()?;
        let inserted = hard.data().chunks(2).filter(|r| r[INSERT] == 1.0).count();
        if inserted == 0 {
            failures.push(format!("pipeline {mvc:?}/{kind:?}/{init:?} inserted nothing"));
        }
        let err = grad_error(&c.params(), |t, v| c.loss(t, v, &hard, &anchor))?;
        results.push((format!("pipeline {mvc:?}/{kind:?}/{init:?} ({inserted} insertions)"), err));
    }

    let (worst_name, worst) = results
        .iter()
        .max_by(|a, b| a.1.total_cmp(&b.1))
        .map(|(n, e)| (n.clone(), *e))
        .unwrap_or_default();
    failures.extend(
        results
            .iter()
            .filter(|(_, e)| !(*e < GRAD_TOL))
            .map(|(n, e)| format!("{n}: {e:.2e}")),
    );
    Ok(GradientSummary {
        checks: results.len(),
        worst,
        worst_name,
        failures,
    })
}

/// Criterion 2: returns the number of rows checked and the largest gap
/// between gradients through the hard and the soft heads.
pub fn straight_through_contract() -> Result<(usize, f64, Vec<String>)> {
    let mut problems = Vec::new();
    let mut rows_checked = 0;
    let mut worst_gap: f64 = 0.0;
    for seed in 0..50u64 {
        let rows = 3 + (seed as usize % 17);
        let logits = uniform(&[rows, 2], 100 + seed).map(|v| 4.0 * v);
        let upstream = uniform(&[rows, 2], 200 + seed);
        let temperature = 0.2 + 0.05 * seed as f64;
        let grad = |use_hard: bool| -> Result<(Tensor, Tensor)> {
            let mut tape = Tape::new();
            let l = tape.param(logits.clone())?;
            let s = gumbel_softmax_st(&mut tape, l, temperature, GumbelNoise::Seeded(seed))?;
            let head = if use_hard { s.hard } else { s.soft };
            let u = tape.constant(upstream.clone())?;
            let p = tape.hadamard(head, u)?;
            let loss = tape.sum_all(p)?;
            let hard = tape.value(s.hard).clone();
            Ok((hard, tape.backward(loss)?.get_or_zeros(l, &logits)))
        };
        let (hard, g_hard) = grad(true)?;
        let (_, g_soft) = grad(false)?;
        for r in 0..rows {
            let row = hard.row(r);
            if !(row.iter().all(|&v| v == 0.0 || v == 1.0) && row[0] + row[1] == 1.0) {
                problems.push(format!("seed {seed} row {r} is not one-hot: {row:?}"));
            }
        }
        rows_checked += rows;
        worst_gap = worst_gap.max(g_hard.max_abs_diff(&g_soft));
    }
    if worst_gap > 1e-12 {
        problems.push(format!("hard and soft gradients differ by {worst_gap:.2e}"));
    }
    Ok((rows_checked, worst_gap, problems))
}
