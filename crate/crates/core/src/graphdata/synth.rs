use nalgebra::{DMatrix, SymmetricEigen};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::bundle::{GraphBundle, Split, SplitMasks};
use crate::diffcore::Tensor;
use crate::error::{Error, Result};

/// Covariance of the Gaussian latent features.
#[derive(Clone, Debug, PartialEq)]
pub enum Covariance {
    Diagonal(Vec<f64>),
    /// Symmetric positive semidefinite `d×d` matrix.
    Full(Tensor),
}

impl Covariance {
    pub fn identity(d: usize) -> Self {
        Covariance::Diagonal(vec![1.0; d])
    }

    pub fn dim(&self) -> usize {
        match self {
            Covariance::Diagonal(v) => v.len(),
            Covariance::Full(t) => t.rows(),
        }
    }

    pub fn to_dense(&self) -> Tensor {
        match self {
            Covariance::Diagonal(v) => {
                let mut t = Tensor::zeros(&[v.len(), v.len()]);
                for (i, &x) in v.iter().enumerate() {
                    t.set(i, i, x);
                }
                t
            }
            Covariance::Full(t) => t.clone(),
        }
    }

    /// Square-root factor `R` with `R Rᵀ = Σ`, via the eigendecomposition so
    /// singular covariances are accepted.
    fn factor(&self) -> Result<Tensor> {
        let d = self.dim();
        if let Covariance::Diagonal(v) = self {
            if let Some(bad) = v.iter().find(|x| !(x.is_finite() && **x >= 0.0)) {
                return Err(Error::InvalidArgument(format!("covariance diagonal entry {bad} is not a nonnegative number")));
            }
            let mut r = Tensor::zeros(&[d, d]);
            for (i, &x) in v.iter().enumerate() {
                r.set(i, i, x.sqrt());
            }
            return Ok(r);
        }
        let dense = self.to_dense();
        if dense.shape() != [d, d] || !dense.is_finite() || !is_symmetric(&dense, 1e-10) {
            return Err(Error::InvalidArgument("covariance must be a finite symmetric square matrix".into()));
        }
        let eig = SymmetricEigen::new(DMatrix::from_row_slice(d, d, dense.data()));
        let min = eig.eigenvalues.min();
        if min < -1e-10 {
            return Err(Error::InvalidArgument(format!("covariance is not positive semidefinite (eigenvalue {min})")));
        }
        let root = DMatrix::from_diagonal(&eig.eigenvalues.map(|l| l.max(0.0).sqrt()));
        let r = &eig.eigenvectors * root;
        Ok(Tensor::new(vec![d, d], r.transpose().as_slice().to_vec()).expect("square factor"))
    }
}

fn is_symmetric(t: &Tensor, tol: f64) -> bool {
    let n = t.rows();
    (0..n).all(|i| (0..i).all(|j| (t.get(i, j) - t.get(j, i)).abs() <= tol))
}

/// Graph from the latent-space model together with the quantities the theory
/// suite needs: latents `Z`, the projection `P` with `X = Z P`, and the
/// direction `θ*` with regression targets `y = Z θ*`.
#[derive(Clone, Debug)]
pub struct LatentGraph {
    pub bundle: GraphBundle,
    pub latent: Tensor,
    pub projection: Tensor,
    pub theta: Tensor,
    pub targets: Tensor,
}

/// Samples `n` Gaussian latents with covariance `sigma`, links the
/// `round(density·n/2)` pairs with the largest latent inner products (a
/// quantile threshold on similarity) and observes features through a fixed
/// random projection. Labels are the sign of the target, splits are 60/20/20.
pub fn synth_latent_graph(n: usize, sigma: &Covariance, density: f64, seed: u64) -> Result<LatentGraph> {
    let d = sigma.dim();
    if n < 2 || d == 0 {
        return Err(Error::InvalidArgument(format!("latent graph needs n >= 2 and d >= 1 (got n={n}, d={d})")));
    }
    if !density.is_finite() || density < 0.0 || density > (n - 1) as f64 {
        return Err(Error::Infeasible(format!(
            "mean degree {density} is outside [0, {}] for {n} nodes",
            n - 1
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let root = sigma.factor()?;
    let white = gaussian(&mut rng, n, d, 1.0);
    let latent = white.matmul(&root.transpose())?;
    let projection = gaussian(&mut rng, d, d, 1.0 / (d as f64).sqrt());
    let theta = gaussian(&mut rng, d, 1, 1.0 / (d as f64).sqrt());
    let features = latent.matmul(&projection)?;
    let targets = latent.matmul(&theta)?;

    let m = (density * n as f64 / 2.0).round() as usize;
    let edges = top_similarity_pairs(&latent, m);
    let labels = targets.data().iter().map(|&t| i64::from(t > 0.0)).collect();
    let masks = random_split(n, &[0.6, 0.2], &mut rng);
    let bundle = GraphBundle::new(&edges, features, labels, masks)?;
    Ok(LatentGraph {
        bundle,
        latent,
        projection,
        theta,
        targets,
    })
}

fn gaussian(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Tensor {
    let data = (0..rows * cols).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect();
    Tensor::new(vec![rows, cols], data).expect("sized buffer")
}

fn top_similarity_pairs(z: &Tensor, m: usize) -> Vec<(usize, usize)> {
    if m == 0 {
        return Vec::new();
    }
    let n = z.rows();
    let mut scored: Vec<(f64, usize, usize)> = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in i + 1..n {
            let s: f64 = z.row(i).iter().zip(z.row(j)).map(|(a, b)| a * b).sum();
            scored.push((s, i, j));
        }
    }
    // Ties broken by index so the threshold is deterministic.
    scored.select_nth_unstable_by(m - 1, |a, b| b.0.total_cmp(&a.0).then((a.1, a.2).cmp(&(b.1, b.2))));
    scored.truncate(m);
    scored.into_iter().map(|(_, i, j)| (i, j)).collect()
}

/// Random split with the given train and val fractions; the rest is test.
pub fn random_split(n: usize, fractions: &[f64; 2], rng: &mut impl Rng) -> SplitMasks {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let n_train = (fractions[0] * n as f64).round() as usize;
    let n_val = ((fractions[1] * n as f64).round() as usize).min(n - n_train.min(n));
    let mut assign = vec![Some(Split::Test); n];
    for (rank, &node) in order.iter().enumerate() {
        if rank < n_train {
            assign[node] = Some(Split::Train);
        } else if rank < n_train + n_val {
            assign[node] = Some(Split::Val);
        }
    }
    SplitMasks::from_assignment(&assign).expect("one split per node")
}

/// Stochastic block model with Gaussian features centred on per-class means.
#[derive(Clone, Debug)]
pub struct SbmSpec {
    pub block_sizes: Vec<usize>,
    pub p_in: f64,
    pub p_out: f64,
    pub n_features: usize,
    /// Distance between class means relative to unit feature noise.
    pub signal: f64,
}

pub fn sbm(spec: &SbmSpec, seed: u64) -> Result<GraphBundle> {
    let SbmSpec {
        block_sizes,
        p_in,
        p_out,
        n_features,
        signal,
    } = spec;
    if !(0.0..=1.0).contains(p_in) || !(0.0..=1.0).contains(p_out) {
        return Err(Error::InvalidArgument("edge probabilities must lie in [0, 1]".into()));
    }
    if *n_features == 0 || block_sizes.is_empty() {
        return Err(Error::InvalidArgument("sbm needs at least one block and one feature".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let labels: Vec<i64> = block_sizes
        .iter()
        .enumerate()
        .flat_map(|(c, &s)| std::iter::repeat(c as i64).take(s))
        .collect();
    let n = labels.len();
    let means = gaussian(&mut rng, block_sizes.len(), *n_features, *signal / (2.0 * *n_features as f64).sqrt());
    let mut features = gaussian(&mut rng, n, *n_features, 1.0);
    for (i, &y) in labels.iter().enumerate() {
        for (x, m) in features.row_mut(i).iter_mut().zip(means.row(y as usize)) {
            *x += m;
        }
    }
    let mut edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            let p = if labels[i] == labels[j] { *p_in } else { *p_out };
            if rng.gen::<f64>() < p {
                edges.push((i, j));
            }
        }
    }
    let masks = random_split(n, &[0.5, 0.25], &mut rng);
    GraphBundle::new(&edges, features, labels, masks)
}
