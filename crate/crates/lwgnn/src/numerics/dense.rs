//! Dense row-major f64 matrices and the differentiable kernels built on them.
//!
//! Every kernel that participates in training has an explicit backward
//! companion; there is no tape. Forward functions return whatever cache the
//! backward needs (activation inputs, argmax maps) and callers thread it
//! through by hand.

use crate::error::{Error, Result};

/// Clamp applied to probabilities before taking logs.
pub const LOG_EPS: f64 = 1e-12;

/// Dense matrix, row-major, 64-bit.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

impl DenseMatrix {
    pub fn new(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != rows * cols {
            return Err(Error::Consistency(format!(
                "dense matrix {rows}x{cols} needs {} values, got {}",
                rows * cols,
                values.len()
            )));
        }
        Ok(Self { rows, cols, values })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            values: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.values[i * n + i] = 1.0;
        }
        m
    }

    /// Build from nested rows; every row must have the same length.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        let mut values = Vec::with_capacity(r * c);
        for row in rows {
            if row.len() != c {
                return Err(Error::Consistency(format!(
                    "ragged rows: expected width {c}, got {}",
                    row.len()
                )));
            }
            values.extend_from_slice(row);
        }
        Self::new(r, c, values)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.values[i * self.cols + j] = v;
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.values[i * self.cols..(i + 1) * self.cols]
    }

    pub fn fill(&mut self, v: f64) {
        self.values.fill(v);
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// self += scale * other
    pub fn add_scaled(&mut self, other: &DenseMatrix, scale: f64) -> Result<()> {
        check_same_shape("add_scaled", self, other)?;
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += scale * b;
        }
        Ok(())
    }

    /// Elementwise product, in place.
    pub fn hadamard_assign(&mut self, other: &DenseMatrix) -> Result<()> {
        check_same_shape("hadamard", self, other)?;
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a *= b;
        }
        Ok(())
    }

    /// Column sums as a 1 x cols matrix (bias gradients).
    pub fn column_sums(&self) -> DenseMatrix {
        let mut out = DenseMatrix::zeros(1, self.cols);
        for i in 0..self.rows {
            let row = self.row(i);
            for (o, v) in out.values.iter_mut().zip(row) {
                *o += v;
            }
        }
        out
    }

    /// Add a 1 x cols row vector to every row.
    pub fn add_row_broadcast(&mut self, bias: &DenseMatrix) -> Result<()> {
        if bias.rows != 1 || bias.cols != self.cols {
            return Err(shape_err("add_row_broadcast", self, bias));
        }
        for i in 0..self.rows {
            let row = &mut self.values[i * self.cols..(i + 1) * self.cols];
            for (a, b) in row.iter_mut().zip(&bias.values) {
                *a += b;
            }
        }
        Ok(())
    }

    /// Copy a contiguous column block `[start, start+width)` into a new matrix.
    pub fn column_block(&self, start: usize, width: usize) -> DenseMatrix {
        debug_assert!(start + width <= self.cols);
        let mut out = DenseMatrix::zeros(self.rows, width);
        for i in 0..self.rows {
            out.row_mut(i)
                .copy_from_slice(&self.row(i)[start..start + width]);
        }
        out
    }

    /// Write `block` into columns `[start, start+block.cols)`.
    pub fn set_column_block(&mut self, start: usize, block: &DenseMatrix) {
        debug_assert_eq!(self.rows, block.rows);
        debug_assert!(start + block.cols <= self.cols);
        for i in 0..self.rows {
            self.row_mut(i)[start..start + block.cols].copy_from_slice(block.row(i));
        }
    }
}

fn shape_err(op: &'static str, a: &DenseMatrix, b: &DenseMatrix) -> Error {
    Error::Shape {
        op,
        left_rows: a.rows,
        left_cols: a.cols,
        right_rows: b.rows,
        right_cols: b.cols,
    }
}

fn check_same_shape(op: &'static str, a: &DenseMatrix, b: &DenseMatrix) -> Result<()> {
    if a.rows != b.rows || a.cols != b.cols {
        return Err(shape_err(op, a, b));
    }
    Ok(())
}

/// a · b. Row-major ikj loop; fixed summation order keeps results
/// bit-reproducible.
pub fn dense_matmul(a: &DenseMatrix, b: &DenseMatrix) -> Result<DenseMatrix> {
    if a.cols != b.rows {
        return Err(shape_err("dense_matmul", a, b));
    }
    let mut out = DenseMatrix::zeros(a.rows, b.cols);
    for i in 0..a.rows {
        let a_row = a.row(i);
        let out_row = &mut out.values[i * b.cols..(i + 1) * b.cols];
        for (k, &aik) in a_row.iter().enumerate() {
            if aik == 0.0 {
                continue;
            }
            let b_row = &b.values[k * b.cols..(k + 1) * b.cols];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += aik * bv;
            }
        }
    }
    Ok(out)
}

/// a · bᵀ (rows of `b` are the output columns).
pub fn dense_matmul_nt(a: &DenseMatrix, b: &DenseMatrix) -> Result<DenseMatrix> {
    if a.cols != b.cols {
        return Err(shape_err("dense_matmul_nt", a, b));
    }
    let mut out = DenseMatrix::zeros(a.rows, b.rows);
    for i in 0..a.rows {
        let a_row = a.row(i);
        for j in 0..b.rows {
            let b_row = b.row(j);
            let mut acc = 0.0;
            for (x, y) in a_row.iter().zip(b_row) {
                acc += x * y;
            }
            out.values[i * b.rows + j] = acc;
        }
    }
    Ok(out)
}

/// aᵀ · b.
pub fn dense_matmul_tn(a: &DenseMatrix, b: &DenseMatrix) -> Result<DenseMatrix> {
    if a.rows != b.rows {
        return Err(shape_err("dense_matmul_tn", a, b));
    }
    let mut out = DenseMatrix::zeros(a.cols, b.cols);
    for i in 0..a.rows {
        let a_row = a.row(i);
        let b_row = &b.values[i * b.cols..(i + 1) * b.cols];
        for (j, &aij) in a_row.iter().enumerate() {
            if aij == 0.0 {
                continue;
            }
            let out_row = &mut out.values[j * b.cols..(j + 1) * b.cols];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += aij * bv;
            }
        }
    }
    Ok(out)
}

/// Gradients of `dense_matmul(a, b)` given upstream `g`: (g·bᵀ, aᵀ·g).
pub fn dense_matmul_backward(
    g: &DenseMatrix,
    a: &DenseMatrix,
    b: &DenseMatrix,
) -> Result<(DenseMatrix, DenseMatrix)> {
    let grad_a = dense_matmul_nt(g, b)?;
    let grad_b = dense_matmul_tn(a, g)?;
    Ok((grad_a, grad_b))
}

/// Elementwise max(x, 0).
pub fn relu(x: &DenseMatrix) -> DenseMatrix {
    let mut out = x.clone();
    for v in out.values.iter_mut() {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
    out
}

/// Gradient passes where the pre-activation was strictly positive.
pub fn relu_backward(g: &DenseMatrix, pre: &DenseMatrix) -> Result<DenseMatrix> {
    check_same_shape("relu_backward", g, pre)?;
    let mut out = g.clone();
    for (o, &p) in out.values.iter_mut().zip(&pre.values) {
        if p <= 0.0 {
            *o = 0.0;
        }
    }
    Ok(out)
}

/// Per-row softmax with max subtraction.
pub fn row_softmax(x: &DenseMatrix) -> DenseMatrix {
    let mut out = x.clone();
    for i in 0..out.rows {
        let row = out.row_mut(i);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    out
}

/// Backward through softmax: given upstream `g` (w.r.t. the probabilities `y`),
/// the logit gradient per row is y ⊙ (g − ⟨g, y⟩).
pub fn row_softmax_backward(g: &DenseMatrix, y: &DenseMatrix) -> Result<DenseMatrix> {
    check_same_shape("row_softmax_backward", g, y)?;
    let mut out = DenseMatrix::zeros(g.rows, g.cols);
    for i in 0..g.rows {
        let g_row = g.row(i);
        let y_row = y.row(i);
        let mut dot = 0.0;
        for (gv, yv) in g_row.iter().zip(y_row) {
            dot += gv * yv;
        }
        let out_row = out.row_mut(i);
        for ((o, gv), yv) in out_row.iter_mut().zip(g_row).zip(y_row) {
            *o = yv * (gv - dot);
        }
    }
    Ok(out)
}

/// Mean negative log-likelihood over masked rows, plus the gradient with
/// respect to the probability matrix. Probabilities are clamped to
/// `[LOG_EPS, 1]` before the log.
pub fn masked_cross_entropy(
    probs: &DenseMatrix,
    labels: &[usize],
    mask: &[bool],
) -> Result<(f64, DenseMatrix)> {
    if labels.len() != probs.rows || mask.len() != probs.rows {
        return Err(Error::Consistency(format!(
            "cross entropy: {} rows, {} labels, {} mask entries",
            probs.rows,
            labels.len(),
            mask.len()
        )));
    }
    let count = mask.iter().filter(|m| **m).count();
    if count == 0 {
        return Err(Error::EmptyMask("cross entropy"));
    }
    let inv = 1.0 / count as f64;
    let mut loss = 0.0;
    let mut grad = DenseMatrix::zeros(probs.rows, probs.cols);
    for i in 0..probs.rows {
        if !mask[i] {
            continue;
        }
        let y = labels[i];
        if y >= probs.cols {
            return Err(Error::Consistency(format!(
                "label {y} out of range for {} classes",
                probs.cols
            )));
        }
        let p = probs.get(i, y).min(1.0).max(LOG_EPS);
        loss -= inv * p.ln();
        grad.set(i, y, -inv / p);
    }
    Ok((loss, grad))
}

/// Elementwise maximum over a stack of equally shaped matrices; the argmax map
/// records which layer won each entry (ties go to the lowest index) so the
/// backward pass routes each gradient to exactly one source.
pub fn maxpool_stack(stack: &[DenseMatrix]) -> Result<(DenseMatrix, Vec<u8>)> {
    let first = stack
        .first()
        .ok_or(Error::Consistency("maxpool over empty stack".into()))?;
    for m in &stack[1..] {
        check_same_shape("maxpool_stack", first, m)?;
    }
    let mut out = first.clone();
    let mut argmax = vec![0u8; out.values.len()];
    for (k, m) in stack.iter().enumerate().skip(1) {
        for (idx, (o, &v)) in out.values.iter_mut().zip(&m.values).enumerate() {
            if v > *o {
                *o = v;
                argmax[idx] = k as u8;
            }
        }
    }
    Ok((out, argmax))
}

/// Routes the upstream gradient back to the winning layer of each entry.
pub fn maxpool_stack_backward(
    g: &DenseMatrix,
    argmax: &[u8],
    num_layers: usize,
) -> Vec<DenseMatrix> {
    let mut grads = vec![DenseMatrix::zeros(g.rows, g.cols); num_layers];
    for (idx, (&gv, &k)) in g.values.iter().zip(argmax).enumerate() {
        grads[k as usize].values[idx] = gv;
    }
    grads
}

/// Per-row argmax with ties broken toward the lowest index.
pub fn row_argmax(m: &DenseMatrix) -> Vec<usize> {
    (0..m.rows())
        .map(|i| {
            let row = m.row(i);
            let mut best = 0;
            for (j, &v) in row.iter().enumerate().skip(1) {
                if v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(rows: usize, cols: usize, v: &[f64]) -> DenseMatrix {
        DenseMatrix::new(rows, cols, v.to_vec()).unwrap()
    }

    #[test]
    fn matmul_identity_is_noop() {
        let b = m(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let out = dense_matmul(&DenseMatrix::identity(2), &b).unwrap();
        assert_eq!(out, b);
    }

    #[test]
    fn matmul_hand_example() {
        let a = m(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let b = m(2, 1, &[1.0, 1.0]);
        let out = dense_matmul(&a, &b).unwrap();
        assert_eq!(out.values(), &[3.0, 7.0]);
    }

    #[test]
    fn matmul_shape_mismatch() {
        let a = m(2, 3, &[0.0; 6]);
        let b = m(2, 2, &[0.0; 4]);
        assert!(matches!(dense_matmul(&a, &b), Err(Error::Shape { .. })));
    }

    #[test]
    fn matmul_transposed_variants_agree_with_plain() {
        let a = m(2, 3, &[1.0, -2.0, 0.5, 3.0, 4.0, -1.0]);
        let b = m(2, 3, &[0.5, 1.5, 2.0, -1.0, 0.0, 2.5]);
        // a · bᵀ
        let nt = dense_matmul_nt(&a, &b).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                let mut acc = 0.0;
                for k in 0..3 {
                    acc += a.get(i, k) * b.get(j, k);
                }
                assert!((nt.get(i, j) - acc).abs() < 1e-15);
            }
        }
        // aᵀ · b
        let tn = dense_matmul_tn(&a, &b).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let mut acc = 0.0;
                for k in 0..2 {
                    acc += a.get(k, i) * b.get(k, j);
                }
                assert!((tn.get(i, j) - acc).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn relu_clamps_negatives() {
        let x = m(1, 2, &[-1.0, 2.0]);
        assert_eq!(relu(&x).values(), &[0.0, 2.0]);
        let all_neg = m(2, 2, &[-1.0, -0.5, -2.0, -3.0]);
        assert_eq!(relu(&all_neg).values(), &[0.0; 4]);
    }

    #[test]
    fn relu_gradient_masks_nonpositive() {
        let x = m(1, 2, &[-1.0, 2.0]);
        let g = m(1, 2, &[5.0, 5.0]);
        assert_eq!(relu_backward(&g, &x).unwrap().values(), &[0.0, 5.0]);
    }

    #[test]
    fn softmax_symmetric_row() {
        let out = row_softmax(&m(1, 2, &[0.0, 0.0]));
        assert_eq!(out.values(), &[0.5, 0.5]);
    }

    #[test]
    fn softmax_log_ratio_row() {
        let out = row_softmax(&m(1, 2, &[3.0f64.ln(), 0.0]));
        assert!((out.get(0, 0) - 0.75).abs() < 1e-12);
        assert!((out.get(0, 1) - 0.25).abs() < 1e-12);
    }

    #[test]
    fn softmax_no_overflow() {
        let out = row_softmax(&m(1, 2, &[1000.0, 0.0]));
        assert!(out.get(0, 0) > 1.0 - 1e-12);
        assert!(out.get(0, 1) < 1e-12);
        assert!(out.is_finite());
    }

    #[test]
    fn cross_entropy_one_hot_is_near_zero() {
        let probs = m(1, 2, &[1.0, 0.0]);
        let (loss, _) = masked_cross_entropy(&probs, &[0], &[true]).unwrap();
        assert!(loss.abs() < 1e-12);
    }

    #[test]
    fn cross_entropy_uniform_two_class() {
        let probs = m(1, 2, &[0.5, 0.5]);
        let (loss, grad) = masked_cross_entropy(&probs, &[1], &[true]).unwrap();
        assert!((loss - 2.0f64.ln()).abs() < 1e-12);
        assert_eq!(grad.get(0, 0), 0.0);
        assert!((grad.get(0, 1) - (-2.0)).abs() < 1e-12);
    }

    #[test]
    fn cross_entropy_ignores_unmasked_rows() {
        let a = m(2, 2, &[0.9, 0.1, 0.5, 0.5]);
        let b = m(2, 2, &[0.9, 0.1, 0.01, 0.99]);
        let labels = [0, 0];
        let mask = [true, false];
        let (la, _) = masked_cross_entropy(&a, &labels, &mask).unwrap();
        let (lb, _) = masked_cross_entropy(&b, &labels, &mask).unwrap();
        assert_eq!(la, lb);
    }

    #[test]
    fn cross_entropy_empty_mask_errors() {
        let probs = m(1, 2, &[0.5, 0.5]);
        assert!(matches!(
            masked_cross_entropy(&probs, &[0], &[false]),
            Err(Error::EmptyMask(_))
        ));
    }

    #[test]
    fn maxpool_single_layer_is_identity() {
        let a = m(1, 2, &[1.0, 5.0]);
        let (out, map) = maxpool_stack(std::slice::from_ref(&a)).unwrap();
        assert_eq!(out, a);
        assert_eq!(map, vec![0, 0]);
    }

    #[test]
    fn maxpool_hand_example_and_routing() {
        let a = m(1, 2, &[1.0, 5.0]);
        let b = m(1, 2, &[3.0, 2.0]);
        let (out, map) = maxpool_stack(&[a, b]).unwrap();
        assert_eq!(out.values(), &[3.0, 5.0]);
        assert_eq!(map, vec![1, 0]);

        let g = m(1, 2, &[1.0, 1.0]);
        let grads = maxpool_stack_backward(&g, &map, 2);
        assert_eq!(grads[0].values(), &[0.0, 1.0]);
        assert_eq!(grads[1].values(), &[1.0, 0.0]);
    }

    #[test]
    fn maxpool_tie_goes_to_lowest_layer() {
        let a = m(1, 1, &[2.0]);
        let b = m(1, 1, &[2.0]);
        let (_, map) = maxpool_stack(&[a, b]).unwrap();
        assert_eq!(map, vec![0]);
    }

    #[test]
    fn argmax_tie_breaks_low() {
        let p = m(1, 2, &[0.5, 0.5]);
        assert_eq!(row_argmax(&p), vec![0]);
    }
}
