//! Dense row-major arrays and a compressed sparse-row input carrier.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};

/// Dense array of `f64` values with an explicit shape.
///
/// Shapes of rank 0 (scalar), 1 and 2 are used by this crate. Every tensor
/// reachable through the public API holds finite values only.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    values: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != values.len() {
            return Err(Error::dim(
                "tensor",
                format!("shape {:?} needs {} values, got {}", shape, expected, values.len()),
            ));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("tensor construction"));
        }
        Ok(Tensor { shape, values })
    }

    pub fn scalar(value: f64) -> Result<Self> {
        Tensor::new(Vec::new(), vec![value])
    }

    pub fn vector(values: Vec<f64>) -> Result<Self> {
        Tensor::new(vec![values.len()], values)
    }

    pub fn matrix(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        Tensor::new(vec![rows, cols], values)
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let len = shape.iter().product();
        Tensor { shape, values: vec![0.0; len] }
    }

    /// Skips the finiteness scan. Callers inside the crate check results
    /// themselves.
    pub(crate) fn from_parts(shape: Vec<usize>, values: Vec<f64>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), values.len());
        Tensor { shape, values }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub(crate) fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn is_scalar(&self) -> bool {
        self.values.len() == 1
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    /// Rows and columns of a rank-2 tensor.
    pub fn dims2(&self) -> Option<(usize, usize)> {
        match self.shape[..] {
            [r, c] => Some((r, c)),
            _ => None,
        }
    }

    pub fn item(&self) -> Option<f64> {
        if self.is_scalar() {
            Some(self.values[0])
        } else {
            None
        }
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn sum_squares(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum()
    }

    /// Row `r` of a rank-2 tensor.
    pub fn row(&self, r: usize) -> &[f64] {
        let cols = self.shape[self.shape.len() - 1];
        &self.values[r * cols..(r + 1) * cols]
    }
}

/// Compressed sparse rows, used as the input to the first layer of a branch.
///
/// Rows are observation vectors; absent coordinates are zero.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseRows {
    cols: usize,
    row_ptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl SparseRows {
    pub fn new(cols: usize) -> Self {
        SparseRows { cols, row_ptr: vec![0], indices: Vec::new(), values: Vec::new() }
    }

    /// Appends one row given `(column, value)` pairs in ascending column order.
    pub fn push_row<I>(&mut self, entries: I) -> Result<()>
    where
        I: IntoIterator<Item = (usize, f64)>,
    {
        let start = self.indices.len();
        for (c, v) in entries {
            if c >= self.cols {
                self.indices.truncate(start);
                self.values.truncate(start);
                return Err(Error::Index { index: c, bound: self.cols });
            }
            if !v.is_finite() {
                self.indices.truncate(start);
                self.values.truncate(start);
                return Err(Error::NonFinite("sparse row"));
            }
            if let Some(&last) = self.indices[start..].last() {
                if c <= last {
                    self.indices.truncate(start);
                    self.values.truncate(start);
                    return Err(Error::Contract(format!(
                        "sparse row columns must be strictly ascending ({} after {})",
                        c, last
                    )));
                }
            }
            self.indices.push(c);
            self.values.push(v);
        }
        self.row_ptr.push(self.indices.len());
        Ok(())
    }

    /// Converts a dense rank-1 or rank-2 tensor, dropping exact zeros.
    pub fn from_dense(t: &Tensor) -> Self {
        let (rows, cols) = match t.shape() {
            [c] => (1, *c),
            [r, c] => (*r, *c),
            _ => (1, t.len()),
        };
        let mut out = SparseRows::new(cols);
        for r in 0..rows {
            let row = &t.values()[r * cols..(r + 1) * cols];
            out.push_row(row.iter().copied().enumerate().filter(|(_, v)| *v != 0.0))
                .expect("dense rows are ordered and finite");
        }
        out
    }

    pub fn rows(&self) -> usize {
        self.row_ptr.len() - 1
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let (a, b) = (self.row_ptr[r], self.row_ptr[r + 1]);
        self.indices[a..b].iter().copied().zip(self.values[a..b].iter().copied())
    }

    pub fn to_dense(&self) -> Tensor {
        let mut values = vec![0.0; self.rows() * self.cols];
        for r in 0..self.rows() {
            for (c, v) in self.row(r) {
                values[r * self.cols + c] = v;
            }
        }
        Tensor::from_parts(vec![self.rows(), self.cols], values)
    }
}
