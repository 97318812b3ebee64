//! Dense row-major matrices, the two activation functions, and the softmax
//! cross-entropy loss.
//!
//! Vectors are `n x 1` matrices. Batched quantities store one sample per
//! column, so a batch of `B` inputs of width `d` is a `d x B` matrix.

use std::fmt;

use crate::error::{Error, Result};

/// Row-major real matrix.
#[derive(Clone, PartialEq)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

impl fmt::Debug for DenseMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "DenseMatrix({}x{}) [", self.rows, self.cols)?;
        for r in 0..self.rows {
            if r > 0 {
                write!(f, "; ")?;
            }
            let row: Vec<String> = self.row(r).iter().map(|v| format!("{v}")).collect();
            write!(f, "{}", row.join(", "))?;
        }
        write!(f, "]")
    }
}

impl DenseMatrix {
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

    pub fn from_vec(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::InvalidArgument(format!(
                "matrix dimensions must be positive, got {rows}x{cols}"
            )));
        }
        if values.len() != rows * cols {
            return Err(Error::Shape(format!(
                "{} values cannot fill a {rows}x{cols} matrix",
                values.len()
            )));
        }
        Ok(Self { rows, cols, values })
    }

    /// Builds a matrix from equally long rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::Shape("rows have differing lengths".into()));
        }
        Self::from_vec(rows.len(), cols, rows.concat())
    }

    /// Column vector.
    pub fn column_vector(values: &[f64]) -> Self {
        Self {
            rows: values.len(),
            cols: 1,
            values: values.to_vec(),
        }
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

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.values[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.values[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.values[r * self.cols..(r + 1) * self.cols]
    }

    /// Copies column `c` out as an `rows x 1` vector.
    pub fn column(&self, c: usize) -> DenseMatrix {
        let values = (0..self.rows).map(|r| self.get(r, c)).collect();
        DenseMatrix {
            rows: self.rows,
            cols: 1,
            values,
        }
    }

    /// Selects the given columns, in order.
    pub fn select_columns(&self, cols: &[usize]) -> DenseMatrix {
        let mut out = DenseMatrix::zeros(self.rows, cols.len());
        for r in 0..self.rows {
            for (j, &c) in cols.iter().enumerate() {
                out.values[r * cols.len() + j] = self.get(r, c);
            }
        }
        out
    }

    /// Selects the given rows, in order.
    pub fn select_rows(&self, rows: &[usize]) -> DenseMatrix {
        let mut values = Vec::with_capacity(rows.len() * self.cols);
        for &r in rows {
            values.extend_from_slice(self.row(r));
        }
        DenseMatrix {
            rows: rows.len(),
            cols: self.cols,
            values,
        }
    }

    pub fn transpose(&self) -> DenseMatrix {
        let mut out = DenseMatrix::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.values[c * self.rows + r] = self.values[r * self.cols + c];
            }
        }
        out
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> DenseMatrix {
        DenseMatrix {
            rows: self.rows,
            cols: self.cols,
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    fn zip_with(
        &self,
        other: &DenseMatrix,
        what: &str,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<DenseMatrix> {
        if self.shape() != other.shape() {
            return Err(Error::Shape(format!(
                "{what}: {}x{} vs {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        Ok(DenseMatrix {
            rows: self.rows,
            cols: self.cols,
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn add(&self, other: &DenseMatrix) -> Result<DenseMatrix> {
        self.zip_with(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &DenseMatrix) -> Result<DenseMatrix> {
        self.zip_with(other, "sub", |a, b| a - b)
    }

    /// Elementwise product.
    pub fn hadamard(&self, other: &DenseMatrix) -> Result<DenseMatrix> {
        self.zip_with(other, "hadamard", |a, b| a * b)
    }

    pub fn scale(&self, s: f64) -> DenseMatrix {
        self.map(|v| v * s)
    }

    /// Adds the column vector `bias` to every column.
    pub fn add_column(&self, bias: &DenseMatrix) -> Result<DenseMatrix> {
        if bias.cols != 1 || bias.rows != self.rows {
            return Err(Error::Shape(format!(
                "add_column: {}x{} matrix with {}x{} bias",
                self.rows, self.cols, bias.rows, bias.cols
            )));
        }
        let mut out = self.clone();
        for r in 0..self.rows {
            let b = bias.values[r];
            for v in &mut out.values[r * self.cols..(r + 1) * self.cols] {
                *v += b;
            }
        }
        Ok(out)
    }

    /// Sums each row, giving a `rows x 1` vector.
    pub fn row_sums(&self) -> DenseMatrix {
        let values = (0..self.rows).map(|r| self.row(r).iter().sum()).collect();
        DenseMatrix {
            rows: self.rows,
            cols: 1,
            values,
        }
    }

    pub fn frobenius_norm_sq(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.frobenius_norm_sq().sqrt()
    }

    pub fn max_abs_diff(&self, other: &DenseMatrix) -> f64 {
        assert_eq!(self.shape(), other.shape(), "max_abs_diff shape mismatch");
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// Row index of the largest entry in column `c`; ties go to the lowest index.
    pub fn argmax_column(&self, c: usize) -> usize {
        let mut best = 0;
        for r in 1..self.rows {
            if self.get(r, c) > self.get(best, c) {
                best = r;
            }
        }
        best
    }
}

/// Matrix product `a * b`.
pub fn matmul(a: &DenseMatrix, b: &DenseMatrix) -> Result<DenseMatrix> {
    if a.cols != b.rows {
        return Err(Error::Shape(format!(
            "matmul: ({}x{}) * ({}x{})",
            a.rows, a.cols, b.rows, b.cols
        )));
    }
    let (n, k, m) = (a.rows, a.cols, b.cols);
    let mut out = DenseMatrix::zeros(n, m);
    for i in 0..n {
        let out_row = &mut out.values[i * m..(i + 1) * m];
        for p in 0..k {
            let aip = a.values[i * k + p];
            let b_row = &b.values[p * m..(p + 1) * m];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += aip * bv;
            }
        }
    }
    Ok(out)
}

/// `a^T * b` without materializing the transpose.
pub fn matmul_tn(a: &DenseMatrix, b: &DenseMatrix) -> Result<DenseMatrix> {
    if a.rows != b.rows {
        return Err(Error::Shape(format!(
            "matmul_tn: ({}x{})^T * ({}x{})",
            a.rows, a.cols, b.rows, b.cols
        )));
    }
    let (k, n, m) = (a.rows, a.cols, b.cols);
    let mut out = DenseMatrix::zeros(n, m);
    for p in 0..k {
        let a_row = &a.values[p * n..(p + 1) * n];
        let b_row = &b.values[p * m..(p + 1) * m];
        for (i, &api) in a_row.iter().enumerate() {
            let out_row = &mut out.values[i * m..(i + 1) * m];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += api * bv;
            }
        }
    }
    Ok(out)
}

/// `a * b^T` without materializing the transpose.
pub fn matmul_nt(a: &DenseMatrix, b: &DenseMatrix) -> Result<DenseMatrix> {
    if a.cols != b.cols {
        return Err(Error::Shape(format!(
            "matmul_nt: ({}x{}) * ({}x{})^T",
            a.rows, a.cols, b.rows, b.cols
        )));
    }
    let (n, k, m) = (a.rows, a.cols, b.rows);
    let mut out = DenseMatrix::zeros(n, m);
    for i in 0..n {
        let a_row = &a.values[i * k..(i + 1) * k];
        for j in 0..m {
            let b_row = &b.values[j * k..(j + 1) * k];
            out.values[i * m + j] = a_row.iter().zip(b_row).map(|(x, y)| x * y).sum();
        }
    }
    Ok(out)
}

pub fn relu(x: &DenseMatrix) -> DenseMatrix {
    x.map(|v| if v > 0.0 { v } else { 0.0 })
}

/// Indicator of `x > 0`. The kink at exactly zero gets derivative 0.
pub fn relu_derivative(x: &DenseMatrix) -> DenseMatrix {
    x.map(|v| if v > 0.0 { 1.0 } else { 0.0 })
}

pub fn tanh_act(x: &DenseMatrix) -> DenseMatrix {
    x.map(f64::tanh)
}

/// `1 - tanh(x)^2`, evaluated at the pre-activation `x`.
pub fn tanh_derivative(x: &DenseMatrix) -> DenseMatrix {
    x.map(|v| {
        let t = v.tanh();
        1.0 - t * t
    })
}

/// Cross entropy of `softmax(logits)` against a one-hot `label`.
///
/// Returns the loss and its gradient with respect to the logits,
/// `softmax(logits) - label`.
pub fn softmax_cross_entropy(
    logits: &DenseMatrix,
    label: &DenseMatrix,
) -> Result<(f64, DenseMatrix)> {
    if logits.cols != 1 || label.shape() != logits.shape() {
        return Err(Error::Shape(format!(
            "softmax_cross_entropy: logits {}x{}, label {}x{}",
            logits.rows, logits.cols, label.rows, label.cols
        )));
    }
    let class = one_hot_class(label.values())?;
    let (loss, grad) = softmax_ce_slice(logits.values(), class);
    Ok((loss, DenseMatrix::column_vector(&grad)))
}

/// Index of the single 1 in a one-hot vector.
pub(crate) fn one_hot_class(label: &[f64]) -> Result<usize> {
    let mut class = None;
    for (i, &v) in label.iter().enumerate() {
        if v == 1.0 {
            if class.is_some() {
                return Err(Error::InvalidLabel(format!(
                    "{label:?} has more than one 1"
                )));
            }
            class = Some(i);
        } else if v != 0.0 {
            return Err(Error::InvalidLabel(format!("{label:?} is not one-hot")));
        }
    }
    class.ok_or_else(|| Error::InvalidLabel(format!("{label:?} has no 1")))
}

fn softmax_ce_slice(logits: &[f64], class: usize) -> (f64, Vec<f64>) {
    let shift = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - shift).exp()).collect();
    let total: f64 = exps.iter().sum();
    let loss = total.ln() - (logits[class] - shift);
    let mut grad: Vec<f64> = exps.iter().map(|e| e / total).collect();
    grad[class] -= 1.0;
    (loss, grad)
}

/// Mean cross entropy over the columns of `logits`, with the gradient of the
/// mean (so each column of the gradient is already divided by the batch size).
pub fn softmax_cross_entropy_batch(
    logits: &DenseMatrix,
    classes: &[usize],
) -> Result<(f64, DenseMatrix)> {
    if logits.cols != classes.len() || logits.cols == 0 {
        return Err(Error::Shape(format!(
            "softmax_cross_entropy_batch: {} logit columns, {} labels",
            logits.cols,
            classes.len()
        )));
    }
    let batch = classes.len();
    let inv = 1.0 / batch as f64;
    let mut grad = DenseMatrix::zeros(logits.rows, batch);
    let mut total = 0.0;
    let mut column = vec![0.0; logits.rows];
    for (j, &class) in classes.iter().enumerate() {
        for (r, slot) in column.iter_mut().enumerate() {
            *slot = logits.get(r, j);
        }
        let (loss, g) = softmax_ce_slice(&column, class);
        total += loss;
        for (r, gv) in g.into_iter().enumerate() {
            grad.set(r, j, gv * inv);
        }
    }
    Ok((total * inv, grad))
}
