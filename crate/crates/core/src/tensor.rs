//! Dense order-N tensors with mode-n unfolding, folding and tensor-matrix
//! products.
//!
//! Storage is last-index-fastest (row-major generalised to N modes). Mode-n
//! unfoldings follow the Kolda-Bader column convention: the row index is the
//! mode-n index and the remaining indices enumerate columns with the *first*
//! remaining mode varying fastest. For a 2x2x2 tensor holding `1..=8` in
//! storage order the mode-0 unfolding is
//!
//! ```text
//! [1 3 2 4]
//! [5 7 6 8]
//! ```
//!
//! Modes are zero-based throughout the crate.

use nalgebra::DMatrix;

use crate::error::{invalid, Result};

pub type Matrix = DMatrix<f64>;

/// Highest tensor order accepted by [`DenseTensor::new`].
pub const MAX_ORDER: usize = 8;

#[derive(Clone, Debug, PartialEq)]
pub struct DenseTensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl DenseTensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        check_shape(&shape)?;
        let len = checked_len(&shape)?;
        if data.len() != len {
            return invalid(format!(
                "tensor of shape {shape:?} needs {len} entries, got {}",
                data.len()
            ));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Result<Self> {
        check_shape(&shape)?;
        let len = checked_len(&shape)?;
        Ok(Self {
            shape,
            data: vec![0.0; len],
        })
    }

    /// Builds a tensor by evaluating `f` at every multi-index in storage order.
    pub fn from_fn(shape: Vec<usize>, mut f: impl FnMut(&[usize]) -> f64) -> Result<Self> {
        let mut t = Self::zeros(shape)?;
        let mut idx = vec![0usize; t.order()];
        for slot in t.data.iter_mut() {
            *slot = f(&idx);
            increment(&mut idx, &t.shape);
        }
        Ok(t)
    }

    /// Order-2 tensor with the matrix's entries. The matrix must be nonempty.
    pub fn from_matrix(m: &Matrix) -> Self {
        let (rows, cols) = m.shape();
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            data.extend(m.row(r).iter());
        }
        Self {
            shape: vec![rows, cols],
            data,
        }
    }

    /// Interprets the payload as `shape[0] x (product of the rest)`, row-major.
    pub fn to_matrix(&self) -> Matrix {
        let rows = self.shape[0];
        let cols = self.data.len() / rows;
        Matrix::from_row_slice(rows, cols, &self.data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn order(&self) -> usize {
        self.shape.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Same payload, new shape. The total size must agree.
    pub fn reshape(self, shape: Vec<usize>) -> Result<Self> {
        Self::new(shape, self.data)
    }

    pub fn get(&self, idx: &[usize]) -> f64 {
        self.data[self.linear_index(idx)]
    }

    fn linear_index(&self, idx: &[usize]) -> usize {
        idx.iter()
            .zip(&self.shape)
            .fold(0, |acc, (&i, &n)| acc * n + i)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn scale(&self, s: f64) -> Self {
        self.map(|v| v * s)
    }

    /// Elementwise `self + other` where every extent of `other` equals the
    /// matching extent of `self` or is 1.
    pub fn broadcast_add(&self, other: &DenseTensor) -> Result<Self> {
        self.broadcast_with(other, |a, b| a + b)
    }

    pub fn broadcast_sub(&self, other: &DenseTensor) -> Result<Self> {
        self.broadcast_with(other, |a, b| a - b)
    }

    fn broadcast_with(&self, other: &DenseTensor, op: impl Fn(f64, f64) -> f64) -> Result<Self> {
        if other.order() != self.order()
            || other
                .shape
                .iter()
                .zip(&self.shape)
                .any(|(&o, &s)| o != s && o != 1)
        {
            return invalid(format!(
                "cannot broadcast shape {:?} onto {:?}",
                other.shape, self.shape
            ));
        }
        if other.shape == self.shape {
            let data = self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| op(a, b))
                .collect();
            return Ok(Self {
                shape: self.shape.clone(),
                data,
            });
        }
        let mut idx = vec![0usize; self.order()];
        let mut data = Vec::with_capacity(self.data.len());
        for &a in &self.data {
            let j = idx
                .iter()
                .zip(&other.shape)
                .fold(0, |acc, (&i, &n)| acc * n + if n == 1 { 0 } else { i });
            data.push(op(a, other.data[j]));
            increment(&mut idx, &self.shape);
        }
        Ok(Self {
            shape: self.shape.clone(),
            data,
        })
    }

    /// Mean over `mode`; the result keeps the mode with extent 1.
    pub fn mean_along(&self, mode: usize) -> Result<Self> {
        self.check_mode(mode)?;
        let (left, mid, right) = self.split(mode);
        let mut shape = self.shape.clone();
        shape[mode] = 1;
        let mut data = vec![0.0; left * right];
        for l in 0..left {
            for i in 0..mid {
                let src = &self.data[(l * mid + i) * right..(l * mid + i + 1) * right];
                for (d, &s) in data[l * right..(l + 1) * right].iter_mut().zip(src) {
                    *d += s;
                }
            }
        }
        let n = mid as f64;
        data.iter_mut().for_each(|v| *v /= n);
        Ok(Self { shape, data })
    }

    /// Mode-`mode` matricization, `I_mode x prod(other extents)`.
    pub fn unfold(&self, mode: usize) -> Result<Matrix> {
        self.check_mode(mode)?;
        let rows = self.shape[mode];
        let cols = self.data.len() / rows;
        let strides = unfold_col_strides(&self.shape, mode);
        let mut m = Matrix::zeros(rows, cols);
        let mut idx = vec![0usize; self.order()];
        for &v in &self.data {
            let col: usize = idx.iter().zip(&strides).map(|(i, s)| i * s).sum();
            m[(idx[mode], col)] = v;
            increment(&mut idx, &self.shape);
        }
        Ok(m)
    }

    /// Inverse of [`DenseTensor::unfold`].
    pub fn fold(m: &Matrix, mode: usize, shape: &[usize]) -> Result<Self> {
        check_shape(shape)?;
        if mode >= shape.len() {
            return invalid(format!(
                "mode {mode} out of range for order {}",
                shape.len()
            ));
        }
        let len = checked_len(shape)?;
        let rows = shape[mode];
        let cols = len / rows;
        if m.shape() != (rows, cols) {
            return invalid(format!(
                "cannot fold a {}x{} matrix along mode {mode} into shape {shape:?} (need {rows}x{cols})",
                m.nrows(),
                m.ncols()
            ));
        }
        let strides = unfold_col_strides(shape, mode);
        let mut data = Vec::with_capacity(len);
        let mut idx = vec![0usize; shape.len()];
        for _ in 0..len {
            let col: usize = idx.iter().zip(&strides).map(|(i, s)| i * s).sum();
            data.push(m[(idx[mode], col)]);
            increment(&mut idx, shape);
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    /// `self x_mode m`: every mode-`mode` fiber is multiplied by `m`
    /// (`J x I_mode`), replacing extent `I_mode` by `J`.
    pub fn mode_product(&self, m: &Matrix, mode: usize) -> Result<Self> {
        self.check_mode(mode)?;
        let (left, mid, right) = self.split(mode);
        if m.ncols() != mid {
            return invalid(format!(
                "mode-{mode} product needs a matrix with {mid} columns, got {}x{}",
                m.nrows(),
                m.ncols()
            ));
        }
        let out_mid = m.nrows();
        if out_mid == 0 {
            return invalid("mode product with an empty matrix");
        }
        let mut shape = self.shape.clone();
        shape[mode] = out_mid;
        let mut data = vec![0.0; left * out_mid * right];
        for l in 0..left {
            let src = &self.data[l * mid * right..(l + 1) * mid * right];
            let dst = &mut data[l * out_mid * right..(l + 1) * out_mid * right];
            for j in 0..out_mid {
                let row = &mut dst[j * right..(j + 1) * right];
                for i in 0..mid {
                    let w = m[(j, i)];
                    if w == 0.0 {
                        continue;
                    }
                    for (d, &s) in row.iter_mut().zip(&src[i * right..(i + 1) * right]) {
                        *d += w * s;
                    }
                }
            }
        }
        Ok(Self { shape, data })
    }

    fn split(&self, mode: usize) -> (usize, usize, usize) {
        let left = self.shape[..mode].iter().product();
        let right = self.shape[mode + 1..].iter().product();
        (left, self.shape[mode], right)
    }

    fn check_mode(&self, mode: usize) -> Result<()> {
        if mode >= self.order() {
            return invalid(format!(
                "mode {mode} out of range for order-{} tensor",
                self.order()
            ));
        }
        Ok(())
    }
}

fn check_shape(shape: &[usize]) -> Result<()> {
    if shape.is_empty() || shape.len() > MAX_ORDER {
        return invalid(format!(
            "tensor order must be between 1 and {MAX_ORDER}, got {}",
            shape.len()
        ));
    }
    if shape.contains(&0) {
        return invalid(format!("tensor extents must be positive, got {shape:?}"));
    }
    Ok(())
}

fn checked_len(shape: &[usize]) -> Result<usize> {
    shape
        .iter()
        .try_fold(1usize, |acc, &n| acc.checked_mul(n))
        .map_or_else(|| invalid(format!("shape {shape:?} overflows")), Ok)
}

// Column strides of the mode-`mode` unfolding; zero for the row mode.
fn unfold_col_strides(shape: &[usize], mode: usize) -> Vec<usize> {
    let mut strides = vec![0; shape.len()];
    let mut acc = 1;
    for (k, &n) in shape.iter().enumerate() {
        if k != mode {
            strides[k] = acc;
            acc *= n;
        }
    }
    strides
}

fn increment(idx: &mut [usize], shape: &[usize]) {
    for k in (0..idx.len()).rev() {
        idx[k] += 1;
        if idx[k] < shape[k] {
            return;
        }
        idx[k] = 0;
    }
}
