use crate::diffcore::{CsrMatrix, Tensor};
use crate::error::{Error, Result};

/// Label value for nodes without a class.
pub const UNLABELED: i64 = -1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.trim() {
            "train" => Some(Split::Train),
            "val" | "valid" | "validation" => Some(Split::Val),
            "test" => Some(Split::Test),
            _ => None,
        }
    }
}

/// Pairwise disjoint train/val/test node masks.
#[derive(Clone, Debug, PartialEq)]
pub struct SplitMasks {
    pub train: Vec<bool>,
    pub val: Vec<bool>,
    pub test: Vec<bool>,
}

impl SplitMasks {
    pub fn new(train: Vec<bool>, val: Vec<bool>, test: Vec<bool>) -> Result<Self> {
        let n = train.len();
        if val.len() != n || test.len() != n {
            return Err(Error::InvalidArgument("split masks differ in length".into()));
        }
        for i in 0..n {
            if u8::from(train[i]) + u8::from(val[i]) + u8::from(test[i]) > 1 {
                return Err(Error::InvalidArgument(format!("node {i} appears in more than one split")));
            }
        }
        Ok(Self { train, val, test })
    }

    /// Training needs every split populated; tiny fixtures may leave some empty.
    pub fn require_nonempty(&self) -> Result<()> {
        for s in [Split::Train, Split::Val, Split::Test] {
            if self.count(s) == 0 {
                return Err(Error::InvalidArgument(format!("{} split is empty", s.as_str())));
            }
        }
        Ok(())
    }

    /// Builds masks from a per-node assignment (`None` = unassigned).
    pub fn from_assignment(assign: &[Option<Split>]) -> Result<Self> {
        let pick = |s: Split| assign.iter().map(|a| *a == Some(s)).collect();
        Self::new(pick(Split::Train), pick(Split::Val), pick(Split::Test))
    }

    pub fn get(&self, split: Split) -> &[bool] {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }

    pub fn assignment(&self, node: usize) -> Option<Split> {
        [Split::Train, Split::Val, Split::Test]
            .into_iter()
            .find(|&s| self.get(s)[node])
    }

    pub fn count(&self, split: Split) -> usize {
        self.get(split).iter().filter(|&&b| b).count()
    }

    pub fn len(&self) -> usize {
        self.train.len()
    }

    pub fn is_empty(&self) -> bool {
        self.train.is_empty()
    }

    /// Applies a node relabeling `new = perm[old]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let apply = |m: &[bool]| {
            let mut out = vec![false; m.len()];
            for (old, &b) in m.iter().enumerate() {
                out[perm[old]] = b;
            }
            out
        };
        Self {
            train: apply(&self.train),
            val: apply(&self.val),
            test: apply(&self.test),
        }
    }
}

/// Immutable node-classification graph: symmetric binary adjacency stored as
/// directed pairs, dense node features, labels and split masks.
#[derive(Clone, Debug, PartialEq)]
pub struct GraphBundle {
    adjacency: CsrMatrix,
    features: Tensor,
    labels: Vec<i64>,
    masks: SplitMasks,
}

impl GraphBundle {
    /// Validates and canonicalizes a graph. Edges are symmetrized and
    /// deduplicated; self-loops are dropped.
    pub fn new(edges: &[(usize, usize)], features: Tensor, labels: Vec<i64>, masks: SplitMasks) -> Result<Self> {
        let n = features.rows();
        if !features.is_matrix() {
            return Err(Error::InvalidArgument(format!(
                "features must be a matrix, got shape {:?}",
                features.shape()
            )));
        }
        if labels.len() != n || masks.len() != n {
            return Err(Error::InvalidArgument(format!(
                "{n} feature rows but {} labels and {} mask entries",
                labels.len(),
                masks.len()
            )));
        }
        if let Some(&(i, j)) = edges.iter().find(|&&(i, j)| i >= n || j >= n) {
            return Err(Error::InvalidArgument(format!("edge ({i}, {j}) references a node >= {n}")));
        }
        if let Some(bad) = labels.iter().find(|&&y| y < UNLABELED) {
            return Err(Error::InvalidArgument(format!("invalid label {bad}")));
        }
        let adjacency = symmetric_adjacency(n, edges);
        Ok(Self {
            adjacency,
            features,
            labels,
            masks,
        })
    }

    pub fn n_nodes(&self) -> usize {
        self.features.rows()
    }

    pub fn n_directed_edges(&self) -> usize {
        self.adjacency.nnz()
    }

    pub fn n_undirected_edges(&self) -> usize {
        self.adjacency.nnz() / 2
    }

    pub fn n_features(&self) -> usize {
        self.features.cols()
    }

    /// Number of classes, taken as one more than the largest label.
    pub fn n_classes(&self) -> usize {
        self.labels.iter().copied().max().map_or(0, |m| (m + 1).max(0) as usize)
    }

    pub fn adjacency(&self) -> &CsrMatrix {
        &self.adjacency
    }

    pub fn features(&self) -> &Tensor {
        &self.features
    }

    pub fn labels(&self) -> &[i64] {
        &self.labels
    }

    pub fn masks(&self) -> &SplitMasks {
        &self.masks
    }

    /// Directed edges in row-major CSR order.
    pub fn directed_edges(&self) -> Vec<(usize, usize)> {
        let a = &self.adjacency;
        (0..a.rows()).flat_map(|i| a.row(i).map(move |(j, _)| (i, j))).collect()
    }

    /// Undirected edges as `(i, j)` with `i < j`.
    pub fn undirected_edges(&self) -> Vec<(usize, usize)> {
        self.directed_edges().into_iter().filter(|&(i, j)| i < j).collect()
    }

    pub fn with_features(&self, features: Tensor) -> Result<Self> {
        if features.rows() != self.n_nodes() {
            return Err(Error::shape("with_features", self.features.shape(), features.shape()));
        }
        Ok(Self {
            features,
            ..self.clone()
        })
    }

    /// Same graph with a different edge set (e.g. after rewiring).
    pub fn with_edges(&self, edges: &[(usize, usize)]) -> Result<Self> {
        Self::new(edges, self.features.clone(), self.labels.clone(), self.masks.clone())
    }

    /// Relabels nodes with `new = perm[old]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        let n = self.n_nodes();
        let mut seen = vec![false; n];
        if perm.len() != n || perm.iter().any(|&p| p >= n || std::mem::replace(&mut seen[p], true)) {
            return Err(Error::InvalidArgument("not a permutation".into()));
        }
        let edges: Vec<_> = self.directed_edges().iter().map(|&(i, j)| (perm[i], perm[j])).collect();
        let mut features = Tensor::zeros(self.features.shape());
        let mut labels = vec![0; n];
        for old in 0..n {
            features.row_mut(perm[old]).copy_from_slice(self.features.row(old));
            labels[perm[old]] = self.labels[old];
        }
        Self::new(&edges, features, labels, self.masks.permuted(perm))
    }
}

fn symmetric_adjacency(n: usize, edges: &[(usize, usize)]) -> CsrMatrix {
    let mut pairs: Vec<(usize, usize)> = edges
        .iter()
        .filter(|(i, j)| i != j)
        .flat_map(|&(i, j)| [(i, j), (j, i)])
        .collect();
    pairs.sort_unstable();
    pairs.dedup();
    let trip: Vec<_> = pairs.into_iter().map(|(i, j)| (i, j, 1.0)).collect();
    CsrMatrix::from_triplets(n, n, &trip).expect("edges validated against node count")
}
