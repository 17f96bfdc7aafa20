//! Dense row-major f64 matrices and the small set of kernels everything else
//! builds on. Deliberately not a general tensor library: two dimensions, one
//! scalar type, and exactly the operations the model needs.
//!
//! Every operation that produces new values verifies the result is finite and
//! fails with an invariant error otherwise, so NaN/Inf cannot propagate
//! silently through a training run.

use crate::error::{CamilError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

/// Plain dot product of two equally long slices.
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Matrix {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn eye(n: usize) -> Matrix {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Matrix> {
        if data.len() != rows * cols {
            return Err(CamilError::InvalidArgument(format!(
                "matrix data length {} does not match {}x{}",
                data.len(),
                rows,
                cols
            )));
        }
        let m = Matrix { rows, cols, data };
        m.ensure_finite("from_vec")?;
        Ok(m)
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Matrix> {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        if rows.iter().any(|row| row.len() != c) {
            return Err(CamilError::InvalidArgument(
                "ragged rows in from_rows".into(),
            ));
        }
        Matrix::from_vec(r, c, rows.into_iter().flatten().collect())
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

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    fn ensure_finite(&self, context: &'static str) -> Result<()> {
        if self.data.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(CamilError::Invariant(format!(
                "non-finite value produced by {context}"
            )))
        }
    }

    /// C = A B. The k-in-the-middle loop order keeps both B and C accesses
    /// row-contiguous, which is what lets LLVM vectorize the inner loop.
    pub fn matmul(&self, rhs: &Matrix) -> Result<Matrix> {
        if self.cols != rhs.rows {
            return Err(CamilError::shape("matmul", self.shape(), rhs.shape()));
        }
        let mut out = Matrix::zeros(self.rows, rhs.cols);
        let oc = rhs.cols;
        for i in 0..self.rows {
            let a_row = self.row(i);
            let out_row = &mut out.data[i * oc..(i + 1) * oc];
            for (k, &aik) in a_row.iter().enumerate() {
                let b_row = &rhs.data[k * oc..(k + 1) * oc];
                for (o, &b) in out_row.iter_mut().zip(b_row) {
                    *o += aik * b;
                }
            }
        }
        out.ensure_finite("matmul")?;
        Ok(out)
    }

    /// C = A Bᵀ without materializing the transpose (row-row dot products).
    pub fn matmul_nt(&self, rhs: &Matrix) -> Result<Matrix> {
        if self.cols != rhs.cols {
            return Err(CamilError::shape("matmul_nt", self.shape(), rhs.shape()));
        }
        let mut out = Matrix::zeros(self.rows, rhs.rows);
        for i in 0..self.rows {
            let a_row = self.row(i);
            let out_row = &mut out.data[i * rhs.rows..(i + 1) * rhs.rows];
            for (j, o) in out_row.iter_mut().enumerate() {
                *o = dot(a_row, rhs.row(j));
            }
        }
        out.ensure_finite("matmul_nt")?;
        Ok(out)
    }

    /// C = Aᵀ B without materializing the transpose.
    pub fn matmul_tn(&self, rhs: &Matrix) -> Result<Matrix> {
        if self.rows != rhs.rows {
            return Err(CamilError::shape("matmul_tn", self.shape(), rhs.shape()));
        }
        let mut out = Matrix::zeros(self.cols, rhs.cols);
        let oc = rhs.cols;
        for i in 0..self.rows {
            let a_row = self.row(i);
            let b_row = rhs.row(i);
            for (k, &aik) in a_row.iter().enumerate() {
                let out_row = &mut out.data[k * oc..(k + 1) * oc];
                for (o, &b) in out_row.iter_mut().zip(b_row) {
                    *o += aik * b;
                }
            }
        }
        out.ensure_finite("matmul_tn")?;
        Ok(out)
    }

    pub fn transpose(&self) -> Matrix {
        let mut out = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        out
    }

    fn zip_map(&self, rhs: &Matrix, context: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Matrix> {
        if self.shape() != rhs.shape() {
            return Err(CamilError::shape(context, self.shape(), rhs.shape()));
        }
        let data = self
            .data
            .iter()
            .zip(&rhs.data)
            .map(|(&a, &b)| f(a, b))
            .collect();
        let m = Matrix {
            rows: self.rows,
            cols: self.cols,
            data,
        };
        m.ensure_finite(context)?;
        Ok(m)
    }

    pub fn add(&self, rhs: &Matrix) -> Result<Matrix> {
        self.zip_map(rhs, "add", |a, b| a + b)
    }

    pub fn sub(&self, rhs: &Matrix) -> Result<Matrix> {
        self.zip_map(rhs, "sub", |a, b| a - b)
    }

    pub fn hadamard(&self, rhs: &Matrix) -> Result<Matrix> {
        self.zip_map(rhs, "hadamard", |a, b| a * b)
    }

    pub fn scale(&self, k: f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| v * k).collect(),
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<Matrix> {
        let m = Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        };
        m.ensure_finite("map")?;
        Ok(m)
    }

    /// Softmax along each row, with the row max subtracted before
    /// exponentiation. The subtraction cancels in the quotient, so the result
    /// is exactly shift-invariant while never overflowing for finite input.
    pub fn row_softmax(&self) -> Result<Matrix> {
        let mut out = self.clone();
        for i in 0..self.rows {
            softmax_in_place(out.row_mut(i));
        }
        out.ensure_finite("row_softmax")?;
        Ok(out)
    }

    /// Softmax over all entries as one distribution (used for score vectors).
    pub fn softmax_flat(&self) -> Result<Matrix> {
        let mut out = self.clone();
        softmax_in_place(&mut out.data);
        out.ensure_finite("softmax_flat")?;
        Ok(out)
    }

    /// Max absolute column sum, with the column index attaining it.
    pub fn norm_one_argmax(&self) -> (f64, usize) {
        let mut best = (0.0_f64, 0);
        for j in 0..self.cols {
            let s: f64 = (0..self.rows).map(|i| self.get(i, j).abs()).sum();
            if s > best.0 {
                best = (s, j);
            }
        }
        best
    }

    /// Max absolute row sum, with the row index attaining it.
    pub fn norm_inf_argmax(&self) -> (f64, usize) {
        let mut best = (0.0_f64, 0);
        for i in 0..self.rows {
            let s: f64 = self.row(i).iter().map(|v| v.abs()).sum();
            if s > best.0 {
                best = (s, i);
            }
        }
        best
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Column means as a 1×cols matrix. Zero rows give zeros.
    pub fn col_means(&self) -> Matrix {
        let mut out = Matrix::zeros(1, self.cols);
        if self.rows == 0 {
            return out;
        }
        for i in 0..self.rows {
            for (o, &v) in out.data.iter_mut().zip(self.row(i)) {
                *o += v;
            }
        }
        let inv = 1.0 / self.rows as f64;
        for o in out.data.iter_mut() {
            *o *= inv;
        }
        out
    }

    /// Column-wise max as a 1×cols matrix plus the attaining row per column.
    pub fn col_max_argmax(&self) -> (Matrix, Vec<usize>) {
        let mut out = Matrix::zeros(1, self.cols);
        let mut arg = vec![0usize; self.cols];
        for j in 0..self.cols {
            let mut best = f64::NEG_INFINITY;
            for i in 0..self.rows {
                let v = self.get(i, j);
                if v > best {
                    best = v;
                    arg[j] = i;
                }
            }
            out.data[j] = best;
        }
        (out, arg)
    }

    /// Moore-Penrose pseudo-inverse by Newton-Schulz iteration:
    /// Z₀ = Aᵀ/(‖A‖₁‖A‖∞), Z ← Z(2I − AZ). The init scaling puts every
    /// singular value of Z₀A in (0,1], inside the iteration's basin of
    /// convergence. An all-zero input pseudo-inverts to zero.
    pub fn pinv(&self, iters: usize) -> Result<Matrix> {
        let (n1, _) = self.norm_one_argmax();
        let (ninf, _) = self.norm_inf_argmax();
        if n1 == 0.0 || ninf == 0.0 {
            return Ok(Matrix::zeros(self.cols, self.rows));
        }
        let mut z = self.transpose().scale(1.0 / (n1 * ninf));
        for _ in 0..iters {
            let az = self.matmul(&z)?;
            let zaz = z.matmul(&az)?;
            z = z.scale(2.0).sub(&zaz)?;
        }
        Ok(z)
    }
}

/// In-place max-subtracted softmax over one slice.
pub fn softmax_in_place(xs: &mut [f64]) {
    if xs.is_empty() {
        return;
    }
    let max = xs.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    let mut sum = 0.0;
    for x in xs.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in xs.iter_mut() {
        *x /= sum;
    }
}
