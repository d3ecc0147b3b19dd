//! Dense tensors of arbitrary order with the vectorization convention the
//! whole crate is built around.
//!
//! # Layout
//!
//! A tensor with dimensions `p_1 x ... x p_M` stores its entries in one flat
//! buffer with the FIRST index fastest: the entry at zero-based multi-index
//! `(i_1, ..., i_M)` sits at linear position
//!
//! ```text
//! i_1 + i_2 * p_1 + i_3 * p_1 p_2 + ... = sum_m i_m * prod_{l<m} p_l
//! ```
//!
//! (the order-M generalization of a column-major matrix). With this layout
//! the identity
//!
//! ```text
//! vec(T x_1 G_1 x_2 G_2 ... x_M G_M) = (G_M kron ... kron G_1) vec(T)
//! ```
//!
//! holds exactly, which is what ties the multilinear operations here to the
//! covariance algebra in the model modules. Every mode argument below is
//! zero-based.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawTensor")]
pub struct Tensor {
    dims: Vec<usize>,
    data: Vec<f64>,
}

#[derive(Deserialize)]
struct RawTensor {
    dims: Vec<usize>,
    data: Vec<f64>,
}

impl TryFrom<RawTensor> for Tensor {
    type Error = Error;

    fn try_from(raw: RawTensor) -> Result<Self> {
        Tensor::new(raw.dims, raw.data)
    }
}

impl Tensor {
    pub fn new(dims: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if dims.is_empty() || dims.iter().any(|&d| d == 0) {
            return Err(Error::DimMismatch(
                "tensor dimensions must be non-empty and positive".into(),
            ));
        }
        let len: usize = dims.iter().product();
        if data.len() != len {
            return Err(Error::DimMismatch(format!(
                "tensor buffer holds {} values, expected prod{:?} = {}",
                data.len(),
                dims,
                len
            )));
        }
        Ok(Self { dims, data })
    }

    pub fn zeros(dims: &[usize]) -> Result<Self> {
        Self::new(dims.to_vec(), vec![0.0; dims.iter().product()])
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn order(&self) -> usize {
        self.dims.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Linear position of a zero-based multi-index under the layout above.
    pub fn linear_index(&self, idx: &[usize]) -> usize {
        debug_assert_eq!(idx.len(), self.dims.len());
        let mut lin = 0;
        let mut stride = 1;
        for (m, &i) in idx.iter().enumerate() {
            debug_assert!(i < self.dims[m]);
            lin += i * stride;
            stride *= self.dims[m];
        }
        lin
    }

    pub fn get(&self, idx: &[usize]) -> f64 {
        self.data[self.linear_index(idx)]
    }

    pub fn set(&mut self, idx: &[usize], v: f64) {
        let lin = self.linear_index(idx);
        self.data[lin] = v;
    }

    /// The vectorization `vec(T)`: a copy of the flat buffer, whose order is
    /// fixed by the layout contract. `data()` is the zero-copy view.
    pub fn vectorize(&self) -> Vec<f64> {
        self.data.clone()
    }

    /// Mode-`mode` matricization: a `p_mode x (len / p_mode)` matrix whose
    /// entry at row `i_mode` and column `sum_{k != mode} i_k * prod_{l<k, l != mode} p_l`
    /// is the tensor entry at `(i_1, ..., i_M)`.
    pub fn matricize(&self, mode: usize) -> Result<Matrix> {
        let strides = self.mode_strides(mode)?;
        let rows = self.dims[mode];
        let cols = self.len() / rows;
        let mut out = Matrix::zeros(rows, cols);
        let flat = out.data_mut();
        let mut idx = vec![0usize; self.dims.len()];
        let mut row = 0usize;
        let mut col = 0usize;
        for &v in &self.data {
            flat[row + col * rows] = v;
            // Odometer increment of the multi-index, tracking (row, col).
            for (m, i) in idx.iter_mut().enumerate() {
                *i += 1;
                if m == mode {
                    row += 1;
                } else {
                    col += strides[m];
                }
                if *i < self.dims[m] {
                    break;
                }
                *i = 0;
                if m == mode {
                    row = 0;
                } else {
                    col -= strides[m] * self.dims[m];
                }
            }
        }
        Ok(out)
    }

    /// Inverse of [`matricize`]: reassembles a tensor of shape `dims` from
    /// its mode-`mode` matricization.
    pub fn fold(mat: &Matrix, mode: usize, dims: &[usize]) -> Result<Self> {
        let mut out = Tensor::zeros(dims)?;
        let strides = out.mode_strides(mode)?;
        let rows = out.dims[mode];
        let cols = out.len() / rows;
        if mat.rows() != rows || mat.cols() != cols {
            return Err(Error::DimMismatch(format!(
                "fold expects a {}x{} matricization for dims {:?} at mode {}, got {}x{}",
                rows,
                cols,
                dims,
                mode,
                mat.rows(),
                mat.cols()
            )));
        }
        let src = mat.data();
        let mut idx = vec![0usize; out.dims.len()];
        let mut row = 0usize;
        let mut col = 0usize;
        let ndims = out.dims.clone();
        for v in out.data.iter_mut() {
            *v = src[row + col * rows];
            for (m, i) in idx.iter_mut().enumerate() {
                *i += 1;
                if m == mode {
                    row += 1;
                } else {
                    col += strides[m];
                }
                if *i < ndims[m] {
                    break;
                }
                *i = 0;
                if m == mode {
                    row = 0;
                } else {
                    col -= strides[m] * ndims[m];
                }
            }
        }
        Ok(out)
    }

    /// Mode-`mode` product `T x_mode G`: matricize, multiply by `G` on the
    /// left, fold back. `G` may be rectangular, in which case the result has
    /// `G.rows()` along `mode`.
    pub fn mode_mult(&self, g: &Matrix, mode: usize) -> Result<Self> {
        if mode >= self.dims.len() {
            return Err(Error::ModeOutOfRange { mode, order: self.dims.len() });
        }
        if g.cols() != self.dims[mode] {
            return Err(Error::DimMismatch(format!(
                "mode-{} product needs {} columns, matrix has {}",
                mode,
                self.dims[mode],
                g.cols()
            )));
        }
        let mat = self.matricize(mode)?;
        let prod = g.mul(&mat);
        let mut dims = self.dims.clone();
        dims[mode] = g.rows();
        Tensor::fold(&prod, mode, &dims)
    }

    /// Multilinear (Tucker) product `T x_1 G_1 x_2 G_2 ... x_M G_M`.
    pub fn tucker(&self, gs: &[Matrix]) -> Result<Self> {
        self.tucker_skip(gs, None)
    }

    /// Tucker product that leaves one mode untouched; callers that need
    /// "all modes but m" pass `skip = Some(m)` and any placeholder at `m`.
    pub fn tucker_skip(&self, gs: &[Matrix], skip: Option<usize>) -> Result<Self> {
        if gs.len() != self.dims.len() {
            return Err(Error::DimMismatch(format!(
                "tucker product got {} factor matrices for an order-{} tensor",
                gs.len(),
                self.dims.len()
            )));
        }
        let mut cur = self.clone();
        for (m, g) in gs.iter().enumerate() {
            if skip == Some(m) {
                continue;
            }
            cur = cur.mode_mult(g, m)?;
        }
        Ok(cur)
    }

    /// Euclidean inner product of two equally shaped tensors.
    pub fn inner(&self, other: &Tensor) -> Result<f64> {
        if self.dims != other.dims {
            return Err(Error::DimMismatch(format!(
                "inner product of shapes {:?} and {:?}",
                self.dims, other.dims
            )));
        }
        Ok(self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum())
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Elementwise `self - other`.
    pub fn sub(&self, other: &Tensor) -> Result<Self> {
        if self.dims != other.dims {
            return Err(Error::DimMismatch(format!(
                "subtraction of shapes {:?} and {:?}",
                self.dims, other.dims
            )));
        }
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect();
        Ok(Self { dims: self.dims.clone(), data })
    }

    /// In-place `self += c * other`.
    pub fn add_scaled(&mut self, other: &Tensor, c: f64) -> Result<()> {
        if self.dims != other.dims {
            return Err(Error::DimMismatch(format!(
                "update of shape {:?} by shape {:?}",
                self.dims, other.dims
            )));
        }
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += c * b;
        }
        Ok(())
    }

    pub fn scale_mut(&mut self, c: f64) {
        for v in &mut self.data {
            *v *= c;
        }
    }

    /// Column strides used by matricize/fold: `strides[k]` is the step a unit
    /// increment of index `k` makes in the column index (0 for `mode`).
    fn mode_strides(&self, mode: usize) -> Result<Vec<usize>> {
        if mode >= self.dims.len() {
            return Err(Error::ModeOutOfRange { mode, order: self.dims.len() });
        }
        let mut strides = vec![0usize; self.dims.len()];
        let mut acc = 1usize;
        for (k, stride) in strides.iter_mut().enumerate() {
            if k == mode {
                continue;
            }
            *stride = acc;
            acc *= self.dims[k];
        }
        Ok(strides)
    }
}
