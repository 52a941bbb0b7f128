use super::bundle::{GraphBundle, UNLABELED};
use crate::error::{Error, Result};

/// Fraction of undirected edges whose endpoints share a label. Edges touching
/// an unlabeled node are skipped.
pub fn edge_homophily(g: &GraphBundle) -> Result<f64> {
    edge_homophily_of(&g.undirected_edges(), g.labels())
}

/// Same measure over an explicit edge list (directed lists count each pair
/// once per direction, which leaves symmetric lists unchanged).
pub fn edge_homophily_of(edges: &[(usize, usize)], labels: &[i64]) -> Result<f64> {
    let (mut same, mut total) = (0usize, 0usize);
    for &(i, j) in edges {
        if labels[i] == UNLABELED || labels[j] == UNLABELED {
            continue;
        }
        total += 1;
        if labels[i] == labels[j] {
            same += 1;
        }
    }
    if total == 0 {
        return Err(Error::InvalidArgument("homophily needs at least one labeled edge".into()));
    }
    Ok(same as f64 / total as f64)
}
