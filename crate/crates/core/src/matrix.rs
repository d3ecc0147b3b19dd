//! Dense column-major matrices and the small symmetric-eigenvalue toolbox
//! used for per-mode covariance algebra.
//!
//! Covariance factors in this crate are tiny (side length 30 or less), so a
//! flat `Vec<f64>` with explicit loops is both fast enough and easy to audit.
//! Eigendecompositions are delegated to `nalgebra`, which shares the
//! column-major layout, so conversions are plain buffer copies.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense matrix stored column-major: entry `(i, j)` lives at `i + j * rows`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawMatrix")]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

#[derive(Deserialize)]
struct RawMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl TryFrom<RawMatrix> for Matrix {
    type Error = Error;

    fn try_from(raw: RawMatrix) -> Result<Self> {
        Matrix::new(raw.rows, raw.cols, raw.data)
    }
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::DimMismatch("matrix sides must be positive".into()));
        }
        if data.len() != rows * cols {
            return Err(Error::DimMismatch(format!(
                "matrix buffer holds {} values, expected {}x{} = {}",
                data.len(),
                rows,
                cols,
                rows * cols
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i + i * n] = 1.0;
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for j in 0..cols {
            for i in 0..rows {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        debug_assert!(i < self.rows && j < self.cols);
        self.data[i + j * self.rows]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        debug_assert!(i < self.rows && j < self.cols);
        self.data[i + j * self.rows] = v;
    }

    /// Column `j` as a contiguous slice.
    #[inline]
    pub fn col(&self, j: usize) -> &[f64] {
        debug_assert!(j < self.cols);
        &self.data[j * self.rows..(j + 1) * self.rows]
    }

    /// Matrix product `self * rhs`. Panics on non-conforming shapes; shape
    /// errors on public entry points are caught before reaching this kernel.
    pub fn mul(&self, rhs: &Matrix) -> Matrix {
        assert_eq!(
            self.cols, rhs.rows,
            "matrix product requires inner dimensions to agree"
        );
        let (m, n) = (self.rows, rhs.cols);
        let mut out = Matrix::zeros(m, n);
        for j in 0..n {
            let rcol = rhs.col(j);
            let ocol = &mut out.data[j * m..(j + 1) * m];
            for (l, &r) in rcol.iter().enumerate() {
                if r == 0.0 {
                    continue;
                }
                let acol = &self.data[l * m..(l + 1) * m];
                for i in 0..m {
                    ocol[i] += acol[i] * r;
                }
            }
        }
        out
    }

    pub fn transpose(&self) -> Matrix {
        Matrix::from_fn(self.cols, self.rows, |i, j| self.get(j, i))
    }

    pub fn scaled(&self, f: f64) -> Matrix {
        let mut out = self.clone();
        for v in &mut out.data {
            *v *= f;
        }
        out
    }

    pub fn scale_mut(&mut self, f: f64) {
        for v in &mut self.data {
            *v *= f;
        }
    }

    pub fn add_scaled_identity(&mut self, f: f64) {
        assert_eq!(self.rows, self.cols);
        for i in 0..self.rows {
            self.data[i + i * self.rows] += f;
        }
    }

    /// Replaces the matrix by its symmetric part `(A + A^T) / 2`.
    pub fn symmetrize(&mut self) {
        assert_eq!(self.rows, self.cols);
        let n = self.rows;
        for j in 0..n {
            for i in (j + 1)..n {
                let avg = 0.5 * (self.data[i + j * n] + self.data[j + i * n]);
                self.data[i + j * n] = avg;
                self.data[j + i * n] = avg;
            }
        }
    }

    pub fn max_asymmetry(&self) -> f64 {
        assert_eq!(self.rows, self.cols);
        let n = self.rows;
        let mut worst = 0.0f64;
        for j in 0..n {
            for i in (j + 1)..n {
                worst = worst.max((self.data[i + j * n] - self.data[j + i * n]).abs());
            }
        }
        worst
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn max_abs_diff(&self, other: &Matrix) -> f64 {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Kronecker product `a (x) b`: the `(i, j)` block of the result is
/// `a[i, j] * b`. Used by the test oracles that expand multilinear products
/// into one big matrix-vector product; never on any hot path.
pub fn kron(a: &Matrix, b: &Matrix) -> Matrix {
    let rows = a.rows * b.rows;
    let cols = a.cols * b.cols;
    let mut out = Matrix::zeros(rows, cols);
    for ja in 0..a.cols {
        for ia in 0..a.rows {
            let f = a.get(ia, ja);
            if f == 0.0 {
                continue;
            }
            for jb in 0..b.cols {
                for ib in 0..b.rows {
                    out.set(ia * b.rows + ib, ja * b.cols + jb, f * b.get(ib, jb));
                }
            }
        }
    }
    out
}

/// Eigendecomposition `A = V diag(values) V^T` of a symmetric matrix.
pub struct SymEigen {
    pub values: Vec<f64>,
    pub vectors: Matrix,
}

impl SymEigen {
    pub fn new(a: &Matrix) -> Result<Self> {
        if a.rows != a.cols {
            return Err(Error::DimMismatch(format!(
                "eigendecomposition needs a square matrix, got {}x{}",
                a.rows, a.cols
            )));
        }
        let m = nalgebra::DMatrix::from_column_slice(a.rows, a.cols, &a.data);
        let se = m.symmetric_eigen();
        let vectors = Matrix::new(a.rows, a.cols, se.eigenvectors.as_slice().to_vec())?;
        Ok(Self { values: se.eigenvalues.as_slice().to_vec(), vectors })
    }

    pub fn min_value(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Rebuilds `V f(diag) V^T`, the standard spectral function transform.
    pub fn apply(&self, f: impl Fn(f64) -> f64) -> Matrix {
        let n = self.values.len();
        let v = &self.vectors;
        let mut out = Matrix::zeros(n, n);
        for k in 0..n {
            let fk = f(self.values[k]);
            if fk == 0.0 {
                continue;
            }
            let vk = v.col(k);
            for j in 0..n {
                let w = fk * vk[j];
                let ocol = &mut out.data[j * n..(j + 1) * n];
                for i in 0..n {
                    ocol[i] += w * vk[i];
                }
            }
        }
        out.symmetrize();
        out
    }
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eigenvalue(a: &Matrix) -> Result<f64> {
    Ok(SymEigen::new(a)?.min_value())
}

fn spd_eigen(a: &Matrix, what: &str) -> Result<SymEigen> {
    let eig = SymEigen::new(a)?;
    let min = eig.min_value();
    if min <= 0.0 {
        return Err(Error::NotSpd(format!(
            "{what}: smallest eigenvalue {min:.3e} is not positive"
        )));
    }
    Ok(eig)
}

pub fn spd_inverse(a: &Matrix) -> Result<Matrix> {
    Ok(spd_eigen(a, "inverse")?.apply(|l| 1.0 / l))
}

pub fn spd_sqrt(a: &Matrix) -> Result<Matrix> {
    Ok(spd_eigen(a, "square root")?.apply(f64::sqrt))
}

pub fn spd_log_det(a: &Matrix) -> Result<f64> {
    Ok(spd_eigen(a, "log-determinant")?.values.iter().map(|l| l.ln()).sum())
}

/// Inverse square root with eigenvalues clamped from below, for iterative
/// schemes whose intermediate scatter matrices may brush against singularity.
pub fn inv_sqrt_floored(a: &Matrix, floor: f64) -> Result<Matrix> {
    Ok(SymEigen::new(a)?.apply(|l| 1.0 / l.max(floor).sqrt()))
}
