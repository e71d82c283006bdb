//! Dense third-order tensors and matrices with a fixed storage layout.
//!
//! `Tensor3` stores values with mode 1 fastest: the linear index of element
//! `(x, y, z)` in a `d1 x d2 x d3` tensor is `x + d1 * (y + d2 * z)`. All
//! matricizations and folds are defined against this layout, so fixtures are
//! bit-reproducible. `Matrix` is row-major.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor3 {
    dims: (usize, usize, usize),
    values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

/// Tensor mode selector. Mode 1 indexes origins, mode 2 destinations,
/// mode 3 time slices in the mobility setting.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    One,
    Two,
    Three,
}

impl Mode {
    pub fn all() -> [Mode; 3] {
        [Mode::One, Mode::Two, Mode::Three]
    }
}

impl Tensor3 {
    pub fn zeros(d1: usize, d2: usize, d3: usize) -> Self {
        assert!(d1 > 0 && d2 > 0 && d3 > 0, "tensor dims must be positive");
        Tensor3 {
            dims: (d1, d2, d3),
            values: vec![0.0; d1 * d2 * d3],
        }
    }

    pub fn from_values(d1: usize, d2: usize, d3: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != d1 * d2 * d3 {
            return Err(Error::DimensionMismatch(format!(
                "expected {} values for {}x{}x{} tensor, got {}",
                d1 * d2 * d3,
                d1,
                d2,
                d3,
                values.len()
            )));
        }
        Ok(Tensor3 {
            dims: (d1, d2, d3),
            values,
        })
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        self.dims
    }

    pub fn dim(&self, mode: Mode) -> usize {
        match mode {
            Mode::One => self.dims.0,
            Mode::Two => self.dims.1,
            Mode::Three => self.dims.2,
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    #[inline]
    fn index(&self, x: usize, y: usize, z: usize) -> usize {
        debug_assert!(x < self.dims.0 && y < self.dims.1 && z < self.dims.2);
        x + self.dims.0 * (y + self.dims.1 * z)
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize) -> f64 {
        self.values[self.index(x, y, z)]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, z: usize, v: f64) {
        let i = self.index(x, y, z);
        self.values[i] = v;
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn same_dims(&self, other: &Tensor3) -> bool {
        self.dims == other.dims
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn l1_norm(&self) -> f64 {
        self.values.iter().map(|v| v.abs()).sum()
    }

    pub fn hadamard(&self, other: &Tensor3) -> Result<Tensor3> {
        if !self.same_dims(other) {
            return Err(Error::DimensionMismatch(format!(
                "hadamard: {:?} vs {:?}",
                self.dims, other.dims
            )));
        }
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a * b)
            .collect();
        Ok(Tensor3 {
            dims: self.dims,
            values,
        })
    }

    pub fn add(&self, other: &Tensor3) -> Result<Tensor3> {
        if !self.same_dims(other) {
            return Err(Error::DimensionMismatch(format!(
                "add: {:?} vs {:?}",
                self.dims, other.dims
            )));
        }
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a + b)
            .collect();
        Ok(Tensor3 {
            dims: self.dims,
            values,
        })
    }

    pub fn sub(&self, other: &Tensor3) -> Result<Tensor3> {
        if !self.same_dims(other) {
            return Err(Error::DimensionMismatch(format!(
                "sub: {:?} vs {:?}",
                self.dims, other.dims
            )));
        }
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a - b)
            .collect();
        Ok(Tensor3 {
            dims: self.dims,
            values,
        })
    }

    pub fn scale(&self, s: f64) -> Tensor3 {
        Tensor3 {
            dims: self.dims,
            values: self.values.iter().map(|v| v * s).collect(),
        }
    }

    /// Mode-n matricization. Row index is the mode index; the column index
    /// runs over the remaining modes with the lower mode fastest:
    /// mode 1 -> col = y + d2*z, mode 2 -> col = x + d1*z, mode 3 -> col = x + d1*y.
    pub fn matricize(&self, mode: Mode) -> Matrix {
        let (d1, d2, d3) = self.dims;
        match mode {
            Mode::One => {
                // Storage order is already column-major for the mode-1 unfolding.
                let mut m = Matrix::zeros(d1, d2 * d3);
                for z in 0..d3 {
                    for y in 0..d2 {
                        let col = y + d2 * z;
                        for x in 0..d1 {
                            m.set(x, col, self.get(x, y, z));
                        }
                    }
                }
                m
            }
            Mode::Two => {
                let mut m = Matrix::zeros(d2, d1 * d3);
                for z in 0..d3 {
                    for y in 0..d2 {
                        for x in 0..d1 {
                            m.set(y, x + d1 * z, self.get(x, y, z));
                        }
                    }
                }
                m
            }
            Mode::Three => {
                let mut m = Matrix::zeros(d3, d1 * d2);
                for z in 0..d3 {
                    for y in 0..d2 {
                        for x in 0..d1 {
                            m.set(z, x + d1 * y, self.get(x, y, z));
                        }
                    }
                }
                m
            }
        }
    }

    /// Inverse of [`Tensor3::matricize`]: refolds a matrix unfolded along
    /// `mode` into a tensor with the given dims.
    pub fn fold(m: &Matrix, mode: Mode, dims: (usize, usize, usize)) -> Result<Tensor3> {
        let (d1, d2, d3) = dims;
        let (exp_rows, exp_cols) = match mode {
            Mode::One => (d1, d2 * d3),
            Mode::Two => (d2, d1 * d3),
            Mode::Three => (d3, d1 * d2),
        };
        if m.rows() != exp_rows || m.cols() != exp_cols {
            return Err(Error::DimensionMismatch(format!(
                "fold: matrix is {}x{}, expected {}x{} for dims {:?} mode {:?}",
                m.rows(),
                m.cols(),
                exp_rows,
                exp_cols,
                dims,
                mode
            )));
        }
        let mut t = Tensor3::zeros(d1, d2, d3);
        for z in 0..d3 {
            for y in 0..d2 {
                for x in 0..d1 {
                    let v = match mode {
                        Mode::One => m.get(x, y + d2 * z),
                        Mode::Two => m.get(y, x + d1 * z),
                        Mode::Three => m.get(z, x + d1 * y),
                    };
                    t.set(x, y, z, v);
                }
            }
        }
        Ok(t)
    }

    /// Tensor n-mode product: contracts the tensor with `m` along `mode`.
    /// Requires `m.cols == dims[mode]`; the result replaces that dim with
    /// `m.rows`.
    pub fn mode_product(&self, m: &Matrix, mode: Mode) -> Result<Tensor3> {
        if m.cols() != self.dim(mode) {
            return Err(Error::DimensionMismatch(format!(
                "mode_product: matrix has {} cols, tensor mode {:?} has size {}",
                m.cols(),
                mode,
                self.dim(mode)
            )));
        }
        let unfolded = self.matricize(mode);
        let product = m.matmul(&unfolded)?;
        let (d1, d2, d3) = self.dims;
        let new_dims = match mode {
            Mode::One => (m.rows(), d2, d3),
            Mode::Two => (d1, m.rows(), d3),
            Mode::Three => (d1, d2, m.rows()),
        };
        Tensor3::fold(&product, mode, new_dims)
    }

    /// The mode-1 slice `R_{x::}` as a `d2 x d3` matrix.
    pub fn slice_mode1(&self, x: usize) -> Matrix {
        let (_, d2, d3) = self.dims;
        let mut m = Matrix::zeros(d2, d3);
        for z in 0..d3 {
            for y in 0..d2 {
                m.set(y, z, self.get(x, y, z));
            }
        }
        m
    }

    /// The mode-2 slice `R_{:y:}` as a `d1 x d3` matrix.
    pub fn slice_mode2(&self, y: usize) -> Matrix {
        let (d1, _, d3) = self.dims;
        let mut m = Matrix::zeros(d1, d3);
        for z in 0..d3 {
            for x in 0..d1 {
                m.set(x, z, self.get(x, y, z));
            }
        }
        m
    }

    /// The frontal slice `T_{::k}` as a `d1 x d2` matrix.
    pub fn slice_mode3(&self, k: usize) -> Matrix {
        let (d1, d2, _) = self.dims;
        let mut m = Matrix::zeros(d1, d2);
        for y in 0..d2 {
            for x in 0..d1 {
                m.set(x, y, self.get(x, y, k));
            }
        }
        m
    }
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        assert!(rows > 0 && cols > 0, "matrix dims must be positive");
        Matrix {
            rows,
            cols,
            values: vec![0.0; rows * cols],
        }
    }

    pub fn from_values(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != rows * cols {
            return Err(Error::DimensionMismatch(format!(
                "expected {} values for {}x{} matrix, got {}",
                rows * cols,
                rows,
                cols,
                values.len()
            )));
        }
        Ok(Matrix { rows, cols, values })
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m.set(i, i, 1.0);
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        debug_assert!(r < self.rows && c < self.cols);
        self.values[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        debug_assert!(r < self.rows && c < self.cols);
        self.values[r * self.cols + c] = v;
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.values[r * self.cols..(r + 1) * self.cols]
    }

    pub fn transpose(&self) -> Matrix {
        let mut t = Matrix::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                t.set(c, r, self.get(r, c));
            }
        }
        t
    }

    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(Error::DimensionMismatch(format!(
                "matmul: {}x{} times {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self.get(i, k);
                if a == 0.0 {
                    continue;
                }
                let orow = other.row(k);
                let out_row = &mut out.values[i * other.cols..(i + 1) * other.cols];
                for (o, b) in out_row.iter_mut().zip(orow) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    /// A^T A, the Gram matrix of the columns.
    pub fn gram(&self) -> Matrix {
        let mut g = Matrix::zeros(self.cols, self.cols);
        for r in 0..self.rows {
            let row = self.row(r);
            for i in 0..self.cols {
                let a = row[i];
                if a == 0.0 {
                    continue;
                }
                for j in 0..self.cols {
                    let v = g.get(i, j) + a * row[j];
                    g.set(i, j, v);
                }
            }
        }
        g
    }

    pub fn add(&self, other: &Matrix) -> Result<Matrix> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(Error::DimensionMismatch("matrix add".into()));
        }
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a + b)
            .collect();
        Ok(Matrix {
            rows: self.rows,
            cols: self.cols,
            values,
        })
    }

    pub fn sub(&self, other: &Matrix) -> Result<Matrix> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(Error::DimensionMismatch("matrix sub".into()));
        }
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a - b)
            .collect();
        Ok(Matrix {
            rows: self.rows,
            cols: self.cols,
            values,
        })
    }

    pub fn scale(&self, s: f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            values: self.values.iter().map(|v| v * s).collect(),
        }
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn l1_norm(&self) -> f64 {
        self.values.iter().map(|v| v.abs()).sum()
    }

    /// Largest eigenvalue of a symmetric positive-semidefinite matrix by
    /// power iteration with a fixed start vector. Deterministic.
    pub fn sym_spectral_norm(&self) -> f64 {
        assert_eq!(self.rows, self.cols, "sym_spectral_norm needs a square matrix");
        let n = self.rows;
        let mut v = vec![1.0 / (n as f64).sqrt(); n];
        let mut lambda = 0.0;
        for _ in 0..200 {
            let mut w = vec![0.0; n];
            for (i, wi) in w.iter_mut().enumerate() {
                let row = self.row(i);
                *wi = row.iter().zip(&v).map(|(a, b)| a * b).sum();
            }
            let norm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm == 0.0 {
                return 0.0;
            }
            let next = w.iter().map(|x| x / norm).collect::<Vec<_>>();
            let new_lambda = norm;
            let done = (new_lambda - lambda).abs() <= 1e-14 * new_lambda.max(1.0);
            v = next;
            lambda = new_lambda;
            if done {
                break;
            }
        }
        lambda
    }
}
