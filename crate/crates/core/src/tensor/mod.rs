//! Dense multilinear algebra.
//!
//! [`DenseTensor`] stores an order-N array in row-major layout (last index
//! fastest). Modes are addressed 0-based throughout the API.
//!
//! Mode-n unfoldings place the mode-n fibres in columns. Columns enumerate the
//! remaining indices with the lowest-numbered remaining mode varying fastest,
//! so for a 3-way tensor the mode-1 unfolding has column `i0 + I0 * i2`.
//! Only internal consistency matters to the algorithms built on top.

mod io;
mod tucker;

pub use io::{read_ten, read_ten_bytes, ten_bytes, write_ten, TEN_MAGIC, TEN_VERSION};
pub use tucker::{factor_from_gram, hosvd, mode_factor, tucker_reconstruct, ModeFactor, RankSpec, TuckerFactors};

use nalgebra::{DMatrix, DMatrixView, DVector};

use crate::error::{shape_err, Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct DenseTensor<T> {
    dims: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> DenseTensor<T> {
    pub fn new(dims: Vec<usize>, data: Vec<T>) -> Result<Self> {
        if dims.contains(&0) {
            return Err(shape_err(format!("zero extent in {dims:?}")));
        }
        let len: usize = dims.iter().product();
        if len != data.len() {
            return Err(shape_err(format!(
                "dims {dims:?} need {len} entries, got {}",
                data.len()
            )));
        }
        Ok(Self { dims, data })
    }

    pub fn zeros(dims: Vec<usize>) -> Result<Self> {
        let len = dims.iter().product();
        Self::new(dims, vec![T::zero(); len])
    }

    /// Builds a tensor by evaluating `f` at every multi-index, in storage order.
    pub fn from_fn(dims: Vec<usize>, mut f: impl FnMut(&[usize]) -> T) -> Result<Self> {
        let len: usize = dims.iter().product();
        let mut idx = vec![0usize; dims.len()];
        let mut data = Vec::with_capacity(len);
        for _ in 0..len {
            data.push(f(&idx));
            increment(&mut idx, &dims);
        }
        Self::new(dims, data)
    }

    /// Order-2 tensor holding the entries of `m`.
    pub fn from_matrix(m: &DMatrix<T>) -> Self {
        let (r, c) = m.shape();
        let data = (0..r).flat_map(|i| (0..c).map(move |j| m[(i, j)])).collect();
        Self { dims: vec![r, c], data }
    }

    /// Stacks equally shaped tensors along a new leading mode.
    pub fn stack(items: &[DenseTensor<T>]) -> Result<Self> {
        let first = items
            .first()
            .ok_or_else(|| shape_err("cannot stack an empty list"))?;
        let mut data = Vec::with_capacity(first.len() * items.len());
        for (k, t) in items.iter().enumerate() {
            if t.dims != first.dims {
                return Err(shape_err(format!(
                    "item {k} has dims {:?}, expected {:?}",
                    t.dims, first.dims
                )));
            }
            data.extend_from_slice(&t.data);
        }
        let mut dims = vec![items.len()];
        dims.extend_from_slice(&first.dims);
        Self::new(dims, data)
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

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn offset(&self, idx: &[usize]) -> usize {
        debug_assert_eq!(idx.len(), self.dims.len());
        idx.iter()
            .zip(&self.dims)
            .fold(0, |acc, (&i, &d)| acc * d + i)
    }

    pub fn get(&self, idx: &[usize]) -> T {
        self.data[self.offset(idx)]
    }

    pub fn set(&mut self, idx: &[usize], value: T) {
        let o = self.offset(idx);
        self.data[o] = value;
    }

    /// Row-major matrix view of an order-2 tensor.
    pub fn to_matrix(&self) -> Result<DMatrix<T>> {
        if self.order() != 2 {
            return Err(shape_err(format!("expected order 2, got {:?}", self.dims)));
        }
        Ok(DMatrix::from_row_slice(self.dims[0], self.dims[1], &self.data))
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            dims: self.dims.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    fn check_mode(&self, n: usize) -> Result<()> {
        if n >= self.order() {
            Err(Error::ModeOutOfRange { mode: n, order: self.order() })
        } else {
            Ok(())
        }
    }

    /// (outer, extent, inner) sizes around mode `n` in storage order.
    fn split(&self, n: usize) -> (usize, usize, usize) {
        let outer = self.dims[..n].iter().product();
        let inner = self.dims[n + 1..].iter().product();
        (outer, self.dims[n], inner)
    }

    /// Column index of `idx` in the mode-`n` unfolding.
    fn unfold_column(&self, idx: &[usize], n: usize) -> usize {
        let mut col = 0;
        let mut stride = 1;
        for (m, (&i, &d)) in idx.iter().zip(&self.dims).enumerate() {
            if m != n {
                col += i * stride;
                stride *= d;
            }
        }
        col
    }

    /// Mode-`n` unfolding, shape `I_n x prod(I_m, m != n)`.
    pub fn mode_unfold(&self, n: usize) -> Result<DMatrix<T>> {
        self.check_mode(n)?;
        let rows = self.dims[n];
        let cols = self.len() / rows;
        let mut out = DMatrix::zeros(rows, cols);
        let mut idx = vec![0usize; self.order()];
        for &v in &self.data {
            out[(idx[n], self.unfold_column(&idx, n))] = v;
            increment(&mut idx, &self.dims);
        }
        Ok(out)
    }

    /// Inverse of [`mode_unfold`](Self::mode_unfold).
    pub fn fold(m: &DMatrix<T>, n: usize, dims: &[usize]) -> Result<Self> {
        let mut out = Self::zeros(dims.to_vec())?;
        out.check_mode(n)?;
        let cols = out.len() / dims[n];
        if m.shape() != (dims[n], cols) {
            return Err(shape_err(format!(
                "cannot fold {:?} into {dims:?} along mode {n}",
                m.shape()
            )));
        }
        let mut idx = vec![0usize; dims.len()];
        for k in 0..out.len() {
            out.data[k] = m[(idx[n], out.unfold_column(&idx, n))];
            increment(&mut idx, dims);
        }
        Ok(out)
    }

    /// Mode-`n` product with `u` (`J x I_n`): every mode-n fibre is multiplied by `u`.
    pub fn mode_mul(&self, u: &DMatrix<T>, n: usize) -> Result<Self> {
        self.check_mode(n)?;
        let (outer, extent, inner) = self.split(n);
        if u.ncols() != extent {
            return Err(shape_err(format!(
                "mode-{n} product needs {extent} columns, matrix is {:?}",
                u.shape()
            )));
        }
        let rows = u.nrows();
        let ut = u.transpose();
        let block_in = extent * inner;
        let block_out = rows * inner;
        let mut data = vec![T::zero(); outer * block_out];
        for (src, dst) in self
            .data
            .chunks_exact(block_in)
            .zip(data.chunks_exact_mut(block_out))
        {
            // A row-major (extent x inner) block read column-major is its transpose.
            let xt = DMatrixView::from_slice(src, inner, extent);
            let prod = xt * &ut;
            dst.copy_from_slice(prod.as_slice());
        }
        let mut dims = self.dims.clone();
        dims[n] = rows;
        Self::new(dims, data)
    }

    /// Mode-`n` contraction with a vector; the contracted mode is removed.
    pub fn vec_mul(&self, y: &DVector<T>, n: usize) -> Result<Self> {
        self.check_mode(n)?;
        let (outer, extent, inner) = self.split(n);
        if y.len() != extent {
            return Err(shape_err(format!(
                "mode-{n} contraction needs length {extent}, got {}",
                y.len()
            )));
        }
        let mut data = vec![T::zero(); outer * inner];
        for (src, dst) in self
            .data
            .chunks_exact(extent * inner)
            .zip(data.chunks_exact_mut(inner))
        {
            for (k, row) in src.chunks_exact(inner).enumerate() {
                let w = y[k];
                for (d, &s) in dst.iter_mut().zip(row) {
                    *d += w * s;
                }
            }
        }
        let mut dims = self.dims.clone();
        dims.remove(n);
        Ok(Self { dims, data })
    }

    /// `X_(n) X_(n)^T` without materialising the unfolding.
    pub fn mode_gram(&self, n: usize) -> Result<DMatrix<T>> {
        self.check_mode(n)?;
        let (_, extent, inner) = self.split(n);
        let mut gram = DMatrix::zeros(extent, extent);
        for block in self.data.chunks_exact(extent * inner) {
            let xt = DMatrixView::from_slice(block, inner, extent);
            gram.gemm_tr(T::one(), &xt, &xt, T::one());
        }
        Ok(gram)
    }

    pub fn inner(&self, other: &Self) -> Result<T> {
        if self.dims != other.dims {
            return Err(shape_err(format!(
                "inner product of {:?} and {:?}",
                self.dims, other.dims
            )));
        }
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .fold(T::zero(), |acc, (&a, &b)| acc + a * b))
    }

    pub fn frobenius(&self) -> T {
        self.data
            .iter()
            .fold(T::zero(), |acc, &a| acc + a * a)
            .sqrt()
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        if self.dims != other.dims {
            return Err(shape_err(format!("{:?} - {:?}", self.dims, other.dims)));
        }
        Ok(Self {
            dims: self.dims.clone(),
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| a - b).collect(),
        })
    }

    /// Sub-tensor at index `i` of the leading mode.
    pub fn slice_first(&self, i: usize) -> Result<Self> {
        if self.order() == 0 || i >= self.dims[0] {
            return Err(shape_err(format!("slice {i} of {:?}", self.dims)));
        }
        let block = self.len() / self.dims[0];
        Ok(Self {
            dims: self.dims[1..].to_vec(),
            data: self.data[i * block..(i + 1) * block].to_vec(),
        })
    }
}

/// Row-major odometer increment; wraps to all zeros after the last index.
fn increment(idx: &mut [usize], dims: &[usize]) {
    for k in (0..idx.len()).rev() {
        idx[k] += 1;
        if idx[k] < dims[k] {
            return;
        }
        idx[k] = 0;
    }
}
