use crate::diffcore::Tensor;
use crate::error::{Error, Result};

/// Compressed sparse row matrix in canonical form (column indices strictly
/// increasing within each row).
#[derive(Clone, Debug, PartialEq)]
pub struct CsrMatrix {
    rows: usize,
    cols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    pub fn new(
        rows: usize,
        cols: usize,
        row_ptr: Vec<usize>,
        col_idx: Vec<usize>,
        values: Vec<f64>,
    ) -> Result<Self> {
        if row_ptr.len() != rows + 1 || row_ptr[0] != 0 {
            return Err(Error::InvalidArgument(format!(
                "row_ptr must have length {} and start at 0",
                rows + 1
            )));
        }
        if row_ptr.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::InvalidArgument("row_ptr must be nondecreasing".into()));
        }
        if row_ptr[rows] != col_idx.len() || col_idx.len() != values.len() {
            return Err(Error::InvalidArgument(
                "row_ptr end, col_idx and values must agree on nnz".into(),
            ));
        }
        for r in 0..rows {
            let cs = &col_idx[row_ptr[r]..row_ptr[r + 1]];
            if cs.iter().any(|&c| c >= cols) {
                return Err(Error::InvalidArgument(format!("row {r}: column index out of range")));
            }
            if cs.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::InvalidArgument(format!(
                    "row {r}: column indices must be strictly increasing"
                )));
            }
        }
        Ok(Self {
            rows,
            cols,
            row_ptr,
            col_idx,
            values,
        })
    }

    /// Builds a canonical matrix from `(row, col, value)` triplets; duplicate
    /// coordinates are summed.
    pub fn from_triplets(rows: usize, cols: usize, triplets: &[(usize, usize, f64)]) -> Result<Self> {
        let mut counts = vec![0usize; rows + 1];
        for &(r, c, _) in triplets {
            if r >= rows || c >= cols {
                return Err(Error::InvalidArgument(format!(
                    "entry ({r}, {c}) outside a {rows}x{cols} matrix"
                )));
            }
            counts[r + 1] += 1;
        }
        for i in 0..rows {
            counts[i + 1] += counts[i];
        }
        let mut fill = counts.clone();
        let mut entries = vec![(0usize, 0.0f64); triplets.len()];
        for &(r, c, v) in triplets {
            entries[fill[r]] = (c, v);
            fill[r] += 1;
        }
        let mut row_ptr = Vec::with_capacity(rows + 1);
        let mut col_idx = Vec::with_capacity(triplets.len());
        let mut values = Vec::with_capacity(triplets.len());
        row_ptr.push(0);
        for r in 0..rows {
            let seg = &mut entries[counts[r]..counts[r + 1]];
            seg.sort_by_key(|e| e.0);
            for &(c, v) in seg.iter() {
                if col_idx.len() > row_ptr[r] && *col_idx.last().unwrap() == c {
                    *values.last_mut().unwrap() += v;
                } else {
                    col_idx.push(c);
                    values.push(v);
                }
            }
            row_ptr.push(col_idx.len());
        }
        Ok(Self {
            rows,
            cols,
            row_ptr,
            col_idx,
            values,
        })
    }

    pub fn identity(n: usize) -> Self {
        Self {
            rows: n,
            cols: n,
            row_ptr: (0..=n).collect(),
            col_idx: (0..n).collect(),
            values: vec![1.0; n],
        }
    }

    /// Sparse view of a dense matrix, skipping exact zeros.
    pub fn from_dense(t: &Tensor) -> Self {
        let (rows, cols) = (t.rows(), t.cols());
        let mut row_ptr = vec![0];
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        for r in 0..rows {
            for (c, &v) in t.row(r).iter().enumerate() {
                if v != 0.0 {
                    col_idx.push(c);
                    values.push(v);
                }
            }
            row_ptr.push(col_idx.len());
        }
        Self {
            rows,
            cols,
            row_ptr,
            col_idx,
            values,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row_ptr(&self) -> &[usize] {
        &self.row_ptr
    }

    pub fn col_idx(&self) -> &[usize] {
        &self.col_idx
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// `(column, value)` pairs of one row.
    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.row_ptr[r]..self.row_ptr[r + 1];
        self.col_idx[span.clone()]
            .iter()
            .copied()
            .zip(self.values[span].iter().copied())
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        let span = self.row_ptr[r]..self.row_ptr[r + 1];
        match self.col_idx[span.clone()].binary_search(&c) {
            Ok(p) => self.values[span.start + p],
            Err(_) => 0.0,
        }
    }

    pub fn with_values(&self, values: Vec<f64>) -> Result<Self> {
        if values.len() != self.nnz() {
            return Err(Error::shape("with_values", &[self.nnz()], &[values.len()]));
        }
        Ok(Self {
            values,
            ..self.clone()
        })
    }

    pub fn transpose(&self) -> Self {
        let mut triplets = Vec::with_capacity(self.nnz());
        for r in 0..self.rows {
            for (c, v) in self.row(r) {
                triplets.push((c, r, v));
            }
        }
        Self::from_triplets(self.cols, self.rows, &triplets).expect("transpose stays in bounds")
    }

    pub fn to_dense(&self) -> Tensor {
        let mut t = Tensor::zeros(&[self.rows, self.cols]);
        for r in 0..self.rows {
            for (c, v) in self.row(r) {
                t.set(r, c, v);
            }
        }
        t
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.rows).map(|r| self.row(r).map(|(_, v)| v).sum()).collect()
    }

    /// `self · x` for a dense matrix `x`, with an optional per-entry weight.
    pub fn matmul_weighted(&self, x: &Tensor, weights: Option<&[f64]>) -> Result<Tensor> {
        if x.rows() != self.cols || !x.is_matrix() {
            return Err(Error::shape("spmm", &[self.rows, self.cols], x.shape()));
        }
        let d = x.cols();
        let mut out = Tensor::zeros(&[self.rows, d]);
        for r in 0..self.rows {
            let orow = out.row_mut(r);
            for p in self.row_ptr[r]..self.row_ptr[r + 1] {
                let w = self.values[p] * weights.map_or(1.0, |w| w[p]);
                if w == 0.0 {
                    continue;
                }
                for (o, &xv) in orow.iter_mut().zip(x.row(self.col_idx[p])) {
                    *o += w * xv;
                }
            }
        }
        Ok(out)
    }

    pub fn matmul(&self, x: &Tensor) -> Result<Tensor> {
        self.matmul_weighted(x, None)
    }

    /// `selfᵀ · g` without materializing the transpose.
    pub fn transpose_matmul_weighted(&self, g: &Tensor, weights: Option<&[f64]>) -> Tensor {
        let d = g.cols();
        let mut out = Tensor::zeros(&[self.cols, d]);
        for r in 0..self.rows {
            let grow = g.row(r);
            for p in self.row_ptr[r]..self.row_ptr[r + 1] {
                let w = self.values[p] * weights.map_or(1.0, |w| w[p]);
                if w == 0.0 {
                    continue;
                }
                for (o, &gv) in out.row_mut(self.col_idx[p]).iter_mut().zip(grow) {
                    *o += w * gv;
                }
            }
        }
        out
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        self.rows == self.cols
            && (0..self.rows).all(|r| self.row(r).all(|(c, v)| (self.get(c, r) - v).abs() <= tol))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn triplets_are_canonicalized() {
        let m = CsrMatrix::from_triplets(2, 3, &[(0, 2, 1.0), (0, 0, 2.0), (0, 2, 0.5), (1, 1, 4.0)]).unwrap();
        assert_eq!(m.row_ptr(), &[0, 2, 3]);
        assert_eq!(m.col_idx(), &[0, 2, 1]);
        assert_eq!(m.values(), &[2.0, 1.5, 4.0]);
    }

    #[test]
    fn validation_rejects_unsorted_columns() {
        assert!(CsrMatrix::new(1, 3, vec![0, 2], vec![2, 1], vec![1.0, 1.0]).is_err());
        assert!(CsrMatrix::new(1, 3, vec![0, 1], vec![3], vec![1.0]).is_err());
        assert!(CsrMatrix::new(2, 3, vec![0, 2, 1], vec![0, 1], vec![1.0, 1.0]).is_err());
    }

    #[test]
    fn dense_roundtrip_and_transpose() {
        let t = Tensor::from_rows(&[vec![0.0, 1.0, 0.0], vec![2.0, 0.0, 3.0]]).unwrap();
        let s = CsrMatrix::from_dense(&t);
        assert_eq!(s.to_dense(), t);
        assert_eq!(s.transpose().to_dense(), t.transpose());
    }
}
