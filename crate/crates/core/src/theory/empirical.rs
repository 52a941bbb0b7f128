use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::curve::{CurveSeries, RiskCurve};
use super::ridge::{ridge_fit, test_risk};
use super::LatentSpec;
use crate::diffcore::{Tape, Tensor};
use crate::error::Result;
use crate::graphdata::{row_mean_propagation, LatentGraph, Split};
use crate::models::ModelKind;
use crate::upsampler::{build_augmented, halfhop_mask, AugmentOptions, InitMode};

/// Ridge test risk after `k = 0..=k_max` rounds of linear mean aggregation
/// over the closed neighborhood, on the sampled graph (`plain`) and on the
/// same graph with nodes inserted at rate `spec.p` (`inserted`).
///
/// Observed features carry Gaussian noise of scale `spec.noise`; smoothing
/// averages it out while erasing signal, which is what produces an interior
/// optimum. The insertion pattern is drawn once and kept for every round.
pub fn empirical_smoothing(lg: &LatentGraph, spec: &LatentSpec, k_max: usize, seed: u64) -> Result<RiskCurve> {
    spec.validate()?;
    let g = &lg.bundle;
    let n = g.n_nodes();
    // A separate stream: the generator already consumed stream 0 of `seed`.
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    let mut x = g.features().clone();
    x.data_mut().iter_mut().for_each(|v| *v += spec.noise * rng.sample::<f64, _>(StandardNormal));

    let train: Vec<usize> = (0..n).filter(|&i| g.masks().get(Split::Train)[i]).collect();
    let test: Vec<usize> = (0..n).filter(|&i| g.masks().get(Split::Test)[i]).collect();
    let (y_train, y_test) = (lg.targets.gather_rows(&train), lg.targets.gather_rows(&test));
    let risk_at = |h: &Tensor| -> Result<f64> {
        let theta = ridge_fit(&h.gather_rows(&train), &y_train, spec.lambda)?;
        test_risk(&h.gather_rows(&test), &theta, &y_test)
    };

    let edges = g.directed_edges();
    let plain_op = row_mean_propagation(n, &edges, true).matrix;

    let decision = halfhop_mask(edges, spec.p, seed.wrapping_add(1), false)?;
    let mut tape = Tape::new();
    let aug = build_augmented(&mut tape, n, &decision, &AugmentOptions::new(ModelKind::Sage, InitMode::Mean))?;
    let xv = tape.constant(x.clone())?;
    let xa = aug.features(&mut tape, xv)?;
    let aug_op = row_mean_propagation(aug.n_nodes(), &aug.edges, true).matrix;

    let original: Vec<usize> = (0..n).collect();
    let (mut hp, mut ha) = (x, tape.value(xa).clone());
    let mut plain = Vec::with_capacity(k_max + 1);
    let mut inserted = Vec::with_capacity(k_max + 1);
    for k in 0..=k_max {
        if k > 0 {
            hp = plain_op.matmul(&hp)?;
            ha = aug_op.matmul(&ha)?;
        }
        plain.push(risk_at(&hp)?);
        inserted.push(risk_at(&ha.gather_rows(&original))?);
    }
    RiskCurve::new(
        (0..=k_max).collect(),
        vec![
            CurveSeries {
                mode: "plain".into(),
                values: plain,
                slope: None,
            },
            CurveSeries {
                mode: "inserted".into(),
                values: inserted,
                slope: None,
            },
        ],
        spec.p,
    )
}
