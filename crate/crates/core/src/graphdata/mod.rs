//! Node-classification graphs: storage, bundle I/O, adjacency normalization,
//! homophily and synthetic generators.

mod bundle;
mod homophily;
pub mod io;
mod normalize;
mod synth;

pub use bundle::{GraphBundle, Split, SplitMasks, UNLABELED};
pub use homophily::{edge_homophily, edge_homophily_of};
pub use io::{load_bundle, save_bundle};
pub use normalize::{
    gcn_propagation, mean_propagation, normalize_adjacency, normalized_laplacian, row_mean_propagation,
    unnormalized_laplacian, EntryOrigin, Propagation,
};
pub(crate) use normalize::{build as build_propagation, in_degrees};
pub use synth::{random_split, sbm, synth_latent_graph, Covariance, LatentGraph, SbmSpec};

use crate::diffcore::Tensor;

/// Scales each row to unit L1 norm (row sums of one for nonnegative
/// features); all-zero rows stay zero.
pub fn row_normalize_features(x: &Tensor) -> Tensor {
    let mut out = x.clone();
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        let s: f64 = row.iter().map(|v| v.abs()).sum();
        if s != 0.0 {
            row.iter_mut().for_each(|v| *v /= s);
        }
    }
    out
}
