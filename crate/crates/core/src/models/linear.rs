use crate::diffcore::{CsrMatrix, Tensor};
use crate::graphdata::{normalize_adjacency, row_mean_propagation};
use crate::error::Result;

/// Aggregation operator of the linear GNN.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Aggregation {
    /// `D̃^{-1} Ã`, the mean over the closed neighborhood.
    RowMean,
    /// `D^{-1} A`, the mean over neighbors only; isolated nodes map to zero.
    NeighborMean,
    /// `D̃^{-1/2} Ã D̃^{-1/2}`.
    Symmetric,
}

/// Aggregation matrix for a symmetric binary adjacency.
pub fn aggregation_matrix(adj: &CsrMatrix, agg: Aggregation) -> CsrMatrix {
    let edges: Vec<(usize, usize)> = (0..adj.rows())
        .flat_map(|i| adj.row(i).filter(move |&(j, _)| j != i).map(move |(j, _)| (j, i)))
        .collect();
    match agg {
        Aggregation::RowMean => row_mean_propagation(adj.rows(), &edges, true).matrix,
        Aggregation::NeighborMean => row_mean_propagation(adj.rows(), &edges, false).matrix,
        Aggregation::Symmetric => normalize_adjacency(adj),
    }
}

/// `H^(k) = Â^k X` without weights or nonlinearities.
pub fn linear_gnn(adj: &CsrMatrix, features: &Tensor, k: usize, agg: Aggregation) -> Result<Tensor> {
    let a = aggregation_matrix(adj, agg);
    let mut h = features.clone();
    for _ in 0..k {
        h = a.matmul(&h)?;
    }
    Ok(h)
}
