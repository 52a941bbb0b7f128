use crate::diffcore::CsrMatrix;

/// Where a stored entry of a propagation matrix came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EntryOrigin {
    SelfLoop,
    /// Index into the directed edge list the operator was built from.
    Edge(usize),
}

/// Message-passing operator over directed edges `src → dst`: row `dst`
/// aggregates column `src`.
#[derive(Clone, Debug)]
pub struct Propagation {
    pub matrix: CsrMatrix,
    pub origin: Vec<EntryOrigin>,
}

pub(crate) fn build(n: usize, edges: &[(usize, usize)], self_loops: bool, weight: impl Fn(usize, usize) -> f64) -> Propagation {
    // (row, col, origin) sorted into canonical CSR order.
    let mut entries: Vec<(usize, usize, EntryOrigin)> = edges
        .iter()
        .enumerate()
        .map(|(k, &(src, dst))| (dst, src, EntryOrigin::Edge(k)))
        .collect();
    if self_loops {
        entries.extend((0..n).map(|i| (i, i, EntryOrigin::SelfLoop)));
    }
    entries.sort_unstable_by_key(|&(r, c, _)| (r, c));
    let mut row_ptr = vec![0usize; n + 1];
    for &(r, _, _) in &entries {
        row_ptr[r + 1] += 1;
    }
    for i in 0..n {
        row_ptr[i + 1] += row_ptr[i];
    }
    let col_idx = entries.iter().map(|e| e.1).collect();
    let values = entries.iter().map(|&(r, c, _)| weight(r, c)).collect();
    let origin = entries.iter().map(|e| e.2).collect();
    let matrix = CsrMatrix::new(n, n, row_ptr, col_idx, values)
        .expect("directed edge lists must not contain duplicates or self-loops");
    Propagation { matrix, origin }
}

pub(crate) fn in_degrees(n: usize, edges: &[(usize, usize)]) -> Vec<f64> {
    let mut deg = vec![0.0; n];
    for &(_, dst) in edges {
        deg[dst] += 1.0;
    }
    deg
}

/// GCN operator with self-loops: entry `(dst, src)` is
/// `1/√(d̃_src · d̃_dst)` with `d̃` the in-degree plus one. On a symmetric edge
/// set this is `D̃^{-1/2} Ã D̃^{-1/2}`.
pub fn gcn_propagation(n: usize, edges: &[(usize, usize)]) -> Propagation {
    let deg: Vec<f64> = in_degrees(n, edges).into_iter().map(|d| d + 1.0).collect();
    build(n, edges, true, |r, c| 1.0 / (deg[r] * deg[c]).sqrt())
}

/// Neighbor-mean operator without self-loops; rows of isolated nodes are empty.
pub fn mean_propagation(n: usize, edges: &[(usize, usize)]) -> Propagation {
    let deg = in_degrees(n, edges);
    build(n, edges, false, |r, _| 1.0 / deg[r])
}

/// Row-stochastic operator `D̃^{-1} Ã`, with or without self-loops.
pub fn row_mean_propagation(n: usize, edges: &[(usize, usize)], self_loops: bool) -> Propagation {
    let extra = if self_loops { 1.0 } else { 0.0 };
    let deg: Vec<f64> = in_degrees(n, edges).into_iter().map(|d| d + extra).collect();
    build(n, edges, self_loops, |r, _| 1.0 / deg[r])
}

fn edges_of(adj: &CsrMatrix) -> Vec<(usize, usize)> {
    (0..adj.rows())
        .flat_map(|i| adj.row(i).filter(move |&(j, _)| j != i).map(move |(j, _)| (i, j)))
        .collect()
}

/// `Â = D̃^{-1/2} (A + I) D̃^{-1/2}` for a symmetric binary adjacency.
pub fn normalize_adjacency(adj: &CsrMatrix) -> CsrMatrix {
    gcn_propagation(adj.rows(), &edges_of(adj)).matrix
}

/// `L̂ = I − Â`, symmetric positive semidefinite.
pub fn normalized_laplacian(adj: &CsrMatrix) -> CsrMatrix {
    let a_hat = normalize_adjacency(adj);
    let mut trip = Vec::with_capacity(a_hat.nnz());
    for r in 0..a_hat.rows() {
        for (c, v) in a_hat.row(r) {
            let delta = if r == c { 1.0 } else { 0.0 };
            trip.push((r, c, delta - v));
        }
    }
    CsrMatrix::from_triplets(a_hat.rows(), a_hat.cols(), &trip).expect("same pattern as Â")
}

/// Combinatorial Laplacian `D − A` without self-loops.
pub fn unnormalized_laplacian(adj: &CsrMatrix) -> CsrMatrix {
    let n = adj.rows();
    let mut trip = Vec::with_capacity(adj.nnz() + n);
    for r in 0..n {
        let mut deg = 0.0;
        for (c, v) in adj.row(r) {
            if c != r {
                trip.push((r, c, -v));
                deg += v;
            }
        }
        trip.push((r, r, deg));
    }
    CsrMatrix::from_triplets(n, n, &trip).expect("square pattern")
}
