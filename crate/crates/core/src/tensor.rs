//! Dense row-major `f64` matrices and vectors.
//!
//! Every reduction accumulates left to right in index order, so results are
//! bit-reproducible. The inner loops are written in axpy form (`y += a * x`)
//! which the compiler can vectorize without reassociating any sum.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Vector {
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape(format!(
                "{} values for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::Shape("ragged rows".into()));
        }
        Ok(Matrix {
            rows: rows.len(),
            cols,
            data: rows.concat(),
        })
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

    pub fn into_data(self) -> Vec<f64> {
        self.data
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

    pub fn transpose(&self) -> Matrix {
        Matrix {
            rows: self.cols,
            cols: self.rows,
            data: transpose(&self.data, self.rows, self.cols),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Additive masks may hold −∞ but never +∞ or NaN.
    pub fn is_valid_additive_mask(&self) -> bool {
        self.data.iter().all(|&v| v.is_finite() || v == f64::NEG_INFINITY)
    }

    /// Product of `self` and `v` treated as a column vector.
    pub fn mul_vec(&self, v: &Vector) -> Result<Vector> {
        if self.cols != v.len() {
            return Err(Error::Shape(format!(
                "{}x{} matrix times length-{} vector",
                self.rows,
                self.cols,
                v.len()
            )));
        }
        Ok(Vector::from(
            (0..self.rows)
                .map(|i| dot(self.row(i), v.as_slice()))
                .collect::<Vec<_>>(),
        ))
    }
}

impl Vector {
    pub fn zeros(len: usize) -> Self {
        Vector { data: vec![0.0; len] }
    }

    pub fn filled(len: usize, value: f64) -> Self {
        Vector { data: vec![value; len] }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn add(&self, other: &Vector) -> Result<Vector> {
        if self.len() != other.len() {
            return Err(Error::Shape(format!(
                "adding vectors of length {} and {}",
                self.len(),
                other.len()
            )));
        }
        Ok(Vector::from(
            self.data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| a + b)
                .collect::<Vec<_>>(),
        ))
    }

    pub fn scale(&self, s: f64) -> Vector {
        Vector::from(self.data.iter().map(|v| v * s).collect::<Vec<_>>())
    }

    /// Index of the largest entry; ties resolve to the lowest index.
    pub fn argmax(&self) -> Option<usize> {
        argmax(&self.data)
    }
}

impl From<Vec<f64>> for Vector {
    fn from(data: Vec<f64>) -> Self {
        Vector { data }
    }
}

impl std::ops::Index<usize> for Vector {
    type Output = f64;

    fn index(&self, i: usize) -> &f64 {
        &self.data[i]
    }
}

pub fn matmul(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.cols != b.rows {
        return Err(Error::Shape(format!(
            "{}x{} times {}x{}",
            a.rows, a.cols, b.rows, b.cols
        )));
    }
    let mut out = Matrix::zeros(a.rows, b.cols);
    matmul_into(&a.data, &b.data, a.rows, a.cols, b.cols, &mut out.data);
    Ok(out)
}

/// Numerically stable softmax. −∞ logits map to exactly zero.
pub fn softmax_stable(logits: &Vector) -> Result<Vector> {
    if logits.data.iter().any(|v| v.is_nan()) {
        return Err(Error::Input("NaN logit".into()));
    }
    let mut out = logits.data.clone();
    softmax_in_place(&mut out)?;
    Ok(Vector::from(out))
}

// ---------------------------------------------------------------------------
// Slice kernels shared by the model, trainer and decoder.
// ---------------------------------------------------------------------------

#[inline]
pub(crate) fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = 0.0;
    for (x, y) in a.iter().zip(b) {
        acc += x * y;
    }
    acc
}

pub(crate) fn argmax(values: &[f64]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, &v) in values.iter().enumerate() {
        match best {
            Some((_, b)) if v <= b => {}
            _ => best = Some((i, v)),
        }
    }
    best.map(|(i, _)| i)
}

/// `out = a (n×k) · b (k×m)`, overwriting `out`.
pub(crate) fn matmul_into(a: &[f64], b: &[f64], n: usize, k: usize, m: usize, out: &mut [f64]) {
    debug_assert_eq!(a.len(), n * k);
    debug_assert_eq!(b.len(), k * m);
    debug_assert_eq!(out.len(), n * m);
    out.fill(0.0);
    for i in 0..n {
        let row = &mut out[i * m..(i + 1) * m];
        for (p, &aip) in a[i * k..(i + 1) * k].iter().enumerate() {
            axpy(aip, &b[p * m..(p + 1) * m], row);
        }
    }
}

/// `out += aᵀ (k×n)ᵀ · b (n×m)`, i.e. `out[p][j] += Σ_i a[i][p] b[i][j]`.
pub(crate) fn matmul_at_b_acc(a: &[f64], b: &[f64], n: usize, k: usize, m: usize, out: &mut [f64]) {
    debug_assert_eq!(a.len(), n * k);
    debug_assert_eq!(b.len(), n * m);
    debug_assert_eq!(out.len(), k * m);
    for i in 0..n {
        let brow = &b[i * m..(i + 1) * m];
        for (p, &aip) in a[i * k..(i + 1) * k].iter().enumerate() {
            axpy(aip, brow, &mut out[p * m..(p + 1) * m]);
        }
    }
}

pub(crate) fn transpose(data: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; rows * cols];
    for i in 0..rows {
        for j in 0..cols {
            out[j * rows + i] = data[i * cols + j];
        }
    }
    out
}

pub(crate) fn softmax_in_place(values: &mut [f64]) -> Result<()> {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return Err(Error::AllMasked);
    }
    let mut sum = 0.0;
    for v in values.iter_mut() {
        *v = if *v == f64::NEG_INFINITY { 0.0 } else { (*v - max).exp() };
        sum += *v;
    }
    let inv = 1.0 / sum;
    for v in values.iter_mut() {
        *v *= inv;
    }
    Ok(())
}

pub(crate) fn log_softmax_in_place(values: &mut [f64]) -> Result<()> {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return Err(Error::AllMasked);
    }
    let mut sum = 0.0;
    for &v in values.iter() {
        if v != f64::NEG_INFINITY {
            sum += (v - max).exp();
        }
    }
    let log_z = max + sum.ln();
    for v in values.iter_mut() {
        *v -= log_z;
    }
    Ok(())
}
