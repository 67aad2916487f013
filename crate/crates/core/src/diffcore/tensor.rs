use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense row-major matrix of `f64`. Vectors are `[1, n]` or `[n, 1]`,
/// scalars are `[1, 1]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: [usize; 2],
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows * cols != data.len() {
            return Err(Error::Shape(format!(
                "[{rows}, {cols}] needs {} values, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(Self { shape: [rows, cols], data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { shape: [rows, cols], data: vec![0.0; rows * cols] }
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Self { shape: [rows, cols], data: vec![value; rows * cols] }
    }

    pub fn scalar(value: f64) -> Self {
        Self { shape: [1, 1], data: vec![value] }
    }

    pub fn row(values: &[f64]) -> Self {
        Self { shape: [1, values.len()], data: values.to_vec() }
    }

    pub fn column(values: &[f64]) -> Self {
        Self { shape: [values.len(), 1], data: values.to_vec() }
    }

    /// Stacks equally sized rows into a matrix.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map(|r| r.as_ref().len()).unwrap_or(0);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(Error::Shape(format!("ragged rows: {} vs {cols}", r.len())));
            }
            data.extend_from_slice(r);
        }
        Ok(Self { shape: [rows.len(), cols], data })
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Self::zeros(n, n);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    pub fn shape(&self) -> [usize; 2] {
        self.shape
    }

    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    pub fn cols(&self) -> usize {
        self.shape[1]
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

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.shape[1] + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        let cols = self.shape[1];
        self.data[r * cols + c] = v;
    }

    pub fn row_slice(&self, r: usize) -> &[f64] {
        let c = self.shape[1];
        &self.data[r * c..(r + 1) * c]
    }

    pub fn row_slice_mut(&mut self, r: usize) -> &mut [f64] {
        let c = self.shape[1];
        &mut self.data[r * c..(r + 1) * c]
    }

    /// Single entry of a `[1, 1]` tensor.
    pub fn item(&self) -> f64 {
        debug_assert_eq!(self.data.len(), 1);
        self.data[0]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self { shape: self.shape, data: self.data.iter().map(|&v| f(v)).collect() }
    }

    /// Rows selected by index, in the given order.
    pub fn select_rows(&self, idx: &[usize]) -> Self {
        let c = self.shape[1];
        let mut data = Vec::with_capacity(idx.len() * c);
        for &i in idx {
            data.extend_from_slice(self.row_slice(i));
        }
        Self { shape: [idx.len(), c], data }
    }

    /// Each row repeated `times` times consecutively.
    pub fn repeat_rows(&self, times: usize) -> Self {
        let c = self.shape[1];
        let mut data = Vec::with_capacity(self.data.len() * times);
        for r in 0..self.shape[0] {
            for _ in 0..times {
                data.extend_from_slice(self.row_slice(r));
            }
        }
        Self { shape: [self.shape[0] * times, c], data }
    }

    pub fn hcat(parts: &[&Tensor]) -> Result<Self> {
        let rows = parts.first().map(|p| p.rows()).unwrap_or(0);
        if parts.iter().any(|p| p.rows() != rows) {
            return Err(Error::Shape("hcat needs equal row counts".into()));
        }
        let cols: usize = parts.iter().map(|p| p.cols()).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for p in parts {
                data.extend_from_slice(p.row_slice(r));
            }
        }
        Ok(Self { shape: [rows, cols], data })
    }

    pub fn col_range(&self, start: usize, len: usize) -> Self {
        let mut data = Vec::with_capacity(self.rows() * len);
        for r in 0..self.rows() {
            data.extend_from_slice(&self.row_slice(r)[start..start + len]);
        }
        Self { shape: [self.rows(), len], data }
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}
