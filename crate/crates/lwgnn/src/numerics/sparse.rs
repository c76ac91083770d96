//! CSR sparse matrices. These hold graph operators (normalized adjacency,
//! per-class aggregation); they are constants during training, so only the
//! dense side of a product ever needs a gradient.

use crate::error::{Error, Result};
use crate::numerics::dense::DenseMatrix;

#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    rows: usize,
    cols: usize,
    row_offsets: Vec<usize>,
    col_indices: Vec<usize>,
    values: Vec<f64>,
}

impl SparseMatrix {
    /// Build from per-row (column, value) entries. Columns must be strictly
    /// increasing within a row.
    pub fn from_rows(rows: usize, cols: usize, entries: &[Vec<(usize, f64)>]) -> Result<Self> {
        if entries.len() != rows {
            return Err(Error::Consistency(format!(
                "sparse matrix with {rows} rows got {} entry lists",
                entries.len()
            )));
        }
        let mut row_offsets = Vec::with_capacity(rows + 1);
        let mut col_indices = Vec::new();
        let mut values = Vec::new();
        row_offsets.push(0);
        for row in entries {
            let mut last: Option<usize> = None;
            for &(c, v) in row {
                if c >= cols {
                    return Err(Error::Consistency(format!(
                        "column {c} out of range for {cols} columns"
                    )));
                }
                if let Some(prev) = last {
                    if c <= prev {
                        return Err(Error::Consistency(
                            "sparse row columns must be strictly increasing".into(),
                        ));
                    }
                }
                last = Some(c);
                col_indices.push(c);
                values.push(v);
            }
            row_offsets.push(col_indices.len());
        }
        Ok(Self {
            rows,
            cols,
            row_offsets,
            col_indices,
            values,
        })
    }

    pub fn identity(n: usize) -> Self {
        Self {
            rows: n,
            cols: n,
            row_offsets: (0..=n).collect(),
            col_indices: (0..n).collect(),
            values: vec![1.0; n],
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

    /// (columns, values) of row `i`.
    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let lo = self.row_offsets[i];
        let hi = self.row_offsets[i + 1];
        (&self.col_indices[lo..hi], &self.values[lo..hi])
    }

    pub fn to_dense(&self) -> DenseMatrix {
        let mut out = DenseMatrix::zeros(self.rows, self.cols);
        for i in 0..self.rows {
            let (cols, vals) = self.row(i);
            for (&c, &v) in cols.iter().zip(vals) {
                out.set(i, c, v);
            }
        }
        out
    }

    /// self · b for dense b. Empty rows produce zero output rows.
    pub fn matmul_dense(&self, b: &DenseMatrix) -> Result<DenseMatrix> {
        if self.cols != b.rows() {
            return Err(Error::Shape {
                op: "sparse_dense_matmul",
                left_rows: self.rows,
                left_cols: self.cols,
                right_rows: b.rows(),
                right_cols: b.cols(),
            });
        }
        let width = b.cols();
        let mut out = DenseMatrix::zeros(self.rows, width);
        for i in 0..self.rows {
            let (cols, vals) = self.row(i);
            let out_row = out.row_mut(i);
            for (&c, &v) in cols.iter().zip(vals) {
                let b_row = b.row(c);
                for (o, &bv) in out_row.iter_mut().zip(b_row) {
                    *o += v * bv;
                }
            }
        }
        Ok(out)
    }

    /// selfᵀ · g. This is the gradient of `matmul_dense` with respect to its
    /// dense operand; rows are scattered in index order so the summation
    /// order is fixed.
    pub fn transpose_matmul_dense(&self, g: &DenseMatrix) -> Result<DenseMatrix> {
        if self.rows != g.rows() {
            return Err(Error::Shape {
                op: "sparse_transpose_matmul",
                left_rows: self.rows,
                left_cols: self.cols,
                right_rows: g.rows(),
                right_cols: g.cols(),
            });
        }
        let width = g.cols();
        let mut out = DenseMatrix::zeros(self.cols, width);
        for i in 0..self.rows {
            let (cols, vals) = self.row(i);
            let g_row = g.row(i);
            for (&c, &v) in cols.iter().zip(vals) {
                let out_row = out.row_mut(c);
                for (o, &gv) in out_row.iter_mut().zip(g_row) {
                    *o += v * gv;
                }
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_matmul_is_noop() {
        let b = DenseMatrix::new(3, 2, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let out = SparseMatrix::identity(3).matmul_dense(&b).unwrap();
        assert_eq!(out, b);
    }

    #[test]
    fn single_row_hand_example() {
        let s = SparseMatrix::from_rows(1, 2, &[vec![(0, 0.5), (1, 0.5)]]).unwrap();
        let b = DenseMatrix::new(2, 1, vec![2.0, 4.0]).unwrap();
        let out = s.matmul_dense(&b).unwrap();
        assert_eq!(out.values(), &[3.0]);
    }

    #[test]
    fn empty_row_gives_zero_output() {
        let s = SparseMatrix::from_rows(2, 2, &[vec![(1, 1.0)], vec![]]).unwrap();
        let b = DenseMatrix::new(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let out = s.matmul_dense(&b).unwrap();
        assert_eq!(out.row(0), &[3.0, 4.0]);
        assert_eq!(out.row(1), &[0.0, 0.0]);
    }

    #[test]
    fn columns_must_increase() {
        let res = SparseMatrix::from_rows(1, 3, &[vec![(2, 1.0), (1, 1.0)]]);
        assert!(res.is_err());
    }

    #[test]
    fn transpose_matmul_matches_dense_transpose() {
        let s = SparseMatrix::from_rows(
            2,
            3,
            &[vec![(0, 2.0), (2, -1.0)], vec![(1, 0.5)]],
        )
        .unwrap();
        let g = DenseMatrix::new(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let out = s.transpose_matmul_dense(&g).unwrap();
        let dense = s.to_dense();
        for i in 0..3 {
            for j in 0..2 {
                let mut acc = 0.0;
                for k in 0..2 {
                    acc += dense.get(k, i) * g.get(k, j);
                }
                assert!((out.get(i, j) - acc).abs() < 1e-15);
            }
        }
    }
}
