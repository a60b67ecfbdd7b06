//! Dense numeric kernels shared by the memories, the layer and the oracle.
//!
//! Everything is `f64` and row-major. All functions are pure.

use std::fmt;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KernelError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("empty input")]
    EmptyInput,
    #[error("k must be at least 1")]
    ZeroK,
}

/// Row-major dense matrix of finite reals.
#[derive(Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, KernelError> {
        if data.len() != rows * cols {
            return Err(KernelError::Dimension(format!(
                "{rows}x{cols} matrix needs {} entries, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    /// Builds a matrix from equally sized rows. An empty slice gives a 0x0 matrix.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self, KernelError> {
        let cols = rows.first().map(|r| r.as_ref().len()).unwrap_or(0);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(KernelError::Dimension(format!(
                    "row {i} has {} columns, expected {cols}",
                    r.len()
                )));
            }
            data.extend_from_slice(r);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> {
        // chunks_exact panics on 0, and a 0-column matrix still has rows
        (0..self.rows).map(move |r| self.row(r))
    }

    /// Copies columns `start..start + width` into a new matrix.
    pub fn column_block(&self, start: usize, width: usize) -> Matrix {
        let mut out = Matrix::zeros(self.rows, width);
        for r in 0..self.rows {
            out.row_mut(r)
                .copy_from_slice(&self.row(r)[start..start + width]);
        }
        out
    }

    /// Keeps the listed rows, in the listed order.
    pub fn select_rows(&self, rows: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(rows.len() * self.cols);
        for &r in rows {
            data.extend_from_slice(self.row(r));
        }
        Matrix {
            rows: rows.len(),
            cols: self.cols,
            data,
        }
    }

    /// Stacks matrices vertically. All inputs must share a column count.
    pub fn vstack(parts: &[Matrix]) -> Result<Matrix, KernelError> {
        let cols = parts.first().map(|m| m.cols).unwrap_or(0);
        let mut data = Vec::new();
        let mut rows = 0;
        for m in parts {
            if m.rows == 0 {
                continue;
            }
            if m.cols != cols {
                return Err(KernelError::Dimension(format!(
                    "vstack of {} and {} columns",
                    cols, m.cols
                )));
            }
            rows += m.rows;
            data.extend_from_slice(&m.data);
        }
        Ok(Matrix { rows, cols, data })
    }

    /// `self · rhs`
    pub fn matmul(&self, rhs: &Matrix) -> Result<Matrix, KernelError> {
        if self.cols != rhs.rows {
            return Err(KernelError::Dimension(format!(
                "matmul {}x{} by {}x{}",
                self.rows, self.cols, rhs.rows, rhs.cols
            )));
        }
        let mut out = Matrix::zeros(self.rows, rhs.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self.get(i, k);
                if a == 0.0 {
                    continue;
                }
                let src = rhs.row(k);
                for (o, b) in out.row_mut(i).iter_mut().zip(src) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Matrix{}x{}", self.rows, self.cols)?;
        f.debug_list().entries(self.iter_rows()).finish()
    }
}

/// Boolean matrix; `true` means the pair may attend.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    rows: usize,
    cols: usize,
    data: Vec<bool>,
}

impl Mask {
    pub fn filled(rows: usize, cols: usize, value: bool) -> Self {
        Self {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Self { rows, cols, data }
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn get(&self, r: usize, c: usize) -> bool {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: bool) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[bool] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }
}

/// Output of [`masked_softmax`].
#[derive(Debug, Clone, PartialEq)]
pub struct Softmax {
    pub weights: Matrix,
    /// `true` for rows where every entry was masked; those rows are all zero.
    pub all_masked: Vec<bool>,
}

/// Pairwise dot products: entry `(i, j)` is `queries[i] · keys[j]`.
pub fn dot_similarity(queries: &Matrix, keys: &Matrix) -> Result<Matrix, KernelError> {
    if queries.cols != keys.cols {
        return Err(KernelError::Dimension(format!(
            "query dim {} vs key dim {}",
            queries.cols, keys.cols
        )));
    }
    if queries.cols == 0 {
        return Err(KernelError::Dimension("inner dimension is zero".into()));
    }
    let mut out = Matrix::zeros(queries.rows, keys.rows);
    for i in 0..queries.rows {
        let q = queries.row(i);
        for j in 0..keys.rows {
            out.data[i * keys.rows + j] = dot(q, keys.row(j));
        }
    }
    Ok(out)
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Row-wise softmax over the allowed entries of `scores`.
///
/// Masked entries come out as exactly zero. Rows with no allowed entry are
/// returned as zeros and flagged in [`Softmax::all_masked`].
pub fn masked_softmax(scores: &Matrix, mask: &Mask) -> Result<Softmax, KernelError> {
    if scores.shape() != mask.shape() {
        return Err(KernelError::Dimension(format!(
            "scores {:?} vs mask {:?}",
            scores.shape(),
            mask.shape()
        )));
    }
    let mut weights = Matrix::zeros(scores.rows, scores.cols);
    let mut all_masked = vec![false; scores.rows];
    for r in 0..scores.rows {
        let row = scores.row(r);
        let allowed = mask.row(r);
        let max = row
            .iter()
            .zip(allowed)
            .filter(|(_, &a)| a)
            .map(|(&s, _)| s)
            .fold(f64::NEG_INFINITY, f64::max);
        if max == f64::NEG_INFINITY {
            all_masked[r] = true;
            continue;
        }
        let out = weights.row_mut(r);
        let mut total = 0.0;
        for c in 0..row.len() {
            if allowed[c] {
                let e = (row[c] - max).exp();
                out[c] = e;
                total += e;
            }
        }
        for v in out.iter_mut() {
            *v /= total;
        }
    }
    Ok(Softmax {
        weights,
        all_masked,
    })
}

/// Result of [`top_k`]: positions into the input row and the values found there.
#[derive(Debug, Clone, PartialEq)]
pub struct TopK {
    pub indices: Vec<usize>,
    pub values: Vec<f64>,
}

/// The `min(k, len)` largest entries in descending order. Ties go to the lower index.
pub fn top_k(scores: &[f64], k: usize) -> Result<TopK, KernelError> {
    if scores.is_empty() {
        return Err(KernelError::EmptyInput);
    }
    if k == 0 {
        return Err(KernelError::ZeroK);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    let cmp = |a: &usize, b: &usize| scores[*b].total_cmp(&scores[*a]).then(a.cmp(b));
    let k = k.min(scores.len());
    if k < order.len() {
        order.select_nth_unstable_by(k - 1, cmp);
        order.truncate(k);
    }
    order.sort_by(cmp);
    let values = order.iter().map(|&i| scores[i]).collect();
    Ok(TopK {
        indices: order,
        values,
    })
}

/// `out[s] = Σ_r weights[s, r] · values[s][r]`, where `values[s]` is a `rank × d` matrix.
pub fn weighted_value_sum(weights: &Matrix, values: &[Matrix]) -> Result<Matrix, KernelError> {
    if values.len() != weights.rows {
        return Err(KernelError::Dimension(format!(
            "{} weight rows vs {} value groups",
            weights.rows,
            values.len()
        )));
    }
    let d = values.first().map(|v| v.cols).unwrap_or(0);
    let mut out = Matrix::zeros(weights.rows, d);
    for (s, group) in values.iter().enumerate() {
        if group.rows != weights.cols || group.cols != d {
            return Err(KernelError::Dimension(format!(
                "value group {s} is {}x{}, expected {}x{d}",
                group.rows, group.cols, weights.cols
            )));
        }
        let w = weights.row(s);
        let o = out.row_mut(s);
        for (r, &wr) in w.iter().enumerate() {
            if wr == 0.0 {
                continue;
            }
            for (oc, vc) in o.iter_mut().zip(group.row(r)) {
                *oc += wr * vc;
            }
        }
    }
    Ok(out)
}
