//! Dense `f64` kernels, the SplitMix64 generator and uniform initialization.
//!
//! Everything here is deliberately small: the flows only ever need
//! matrix-vector products in both orientations and rank-one updates.
//! Matrices are row-major.

use std::ops::{Deref, DerefMut};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    /// Builds a matrix from row-major data.
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::Config(format!(
                "matrix dimensions must be positive, got {rows}x{cols}"
            )));
        }
        if data.len() != rows * cols {
            return Err(Error::dim("Matrix::new", rows * cols, data.len()));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("matrix entries must be finite".into()));
        }
        Ok(Self { rows, cols, data })
    }

    /// # Panics
    /// If either dimension is zero.
    pub fn zeros(rows: usize, cols: usize) -> Self {
        assert!(rows > 0 && cols > 0, "matrix dimensions must be positive");
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_rows(rows: &[&[f64]]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.len());
        if let Some(bad) = rows.iter().find(|r| r.len() != cols) {
            return Err(Error::dim("Matrix::from_rows", cols, bad.len()));
        }
        Self::new(rows.len(), cols, rows.concat())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.cols + col]
    }

    pub fn row(&self, row: usize) -> &[f64] {
        &self.data[row * self.cols..(row + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }
}

/// Dense real vector.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Vector(Vec<f64>);

impl Vector {
    pub fn zeros(len: usize) -> Self {
        Self(vec![0.0; len])
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn norm_squared(&self) -> f64 {
        dot(&self.0, &self.0)
    }
}

impl From<Vec<f64>> for Vector {
    fn from(v: Vec<f64>) -> Self {
        Self(v)
    }
}

impl From<&[f64]> for Vector {
    fn from(v: &[f64]) -> Self {
        Self(v.to_vec())
    }
}

impl<const N: usize> From<[f64; N]> for Vector {
    fn from(v: [f64; N]) -> Self {
        Self(v.to_vec())
    }
}

impl Deref for Vector {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl DerefMut for Vector {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

/// SplitMix64 generator state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Rng {
    state: u64,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Self { state: seed }
    }

    pub fn state(&self) -> u64 {
        self.state
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    /// Uniform on `[0, 1)` from the top 53 bits.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform on `[-bound, bound]`.
    pub fn uniform(&mut self, bound: f64) -> f64 {
        bound * (2.0 * self.next_f64() - 1.0)
    }

    /// Uniform index in `0..n` (multiply-shift, no modulo bias beyond 2^-64).
    pub fn below(&mut self, n: usize) -> usize {
        ((self.next_u64() as u128 * n as u128) >> 64) as usize
    }

    /// Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }

    /// Standard normal via Box-Muller.
    pub fn normal(&mut self) -> f64 {
        let u1 = 1.0 - self.next_f64();
        let u2 = self.next_f64();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }
}

/// Pure state-threading form of [`Rng::next_u64`].
pub fn rng_next(rng: Rng) -> (Rng, u64) {
    let mut next = rng;
    let out = next.next_u64();
    (next, out)
}

/// Fills a `rows x cols` matrix row-major with draws from `U[-bound, bound]`.
pub fn uniform_init(rows: usize, cols: usize, bound: f64, rng: &mut Rng) -> Result<Matrix> {
    if rows == 0 || cols == 0 {
        return Err(Error::dim("uniform_init", 1, 0));
    }
    if bound < 0.0 || !bound.is_finite() {
        return Err(Error::Config(format!("init bound must be >= 0, got {bound}")));
    }
    let data = (0..rows * cols).map(|_| rng.uniform(bound)).collect();
    Ok(Matrix { rows, cols, data })
}

pub fn matvec(m: &Matrix, v: &[f64]) -> Result<Vector> {
    if m.cols != v.len() {
        return Err(Error::dim("matvec", m.cols, v.len()));
    }
    let mut out = vec![0.0; m.rows];
    matvec_into(m, v, &mut out);
    Ok(Vector(out))
}

pub fn matvec_transposed(m: &Matrix, v: &[f64]) -> Result<Vector> {
    if m.rows != v.len() {
        return Err(Error::dim("matvec_transposed", m.rows, v.len()));
    }
    let mut out = vec![0.0; m.cols];
    matvec_transposed_acc(m, v, &mut out);
    Ok(Vector(out))
}

/// Returns `g + alpha * u v^T`.
pub fn outer_accumulate(g: &Matrix, u: &[f64], v: &[f64], alpha: f64) -> Result<Matrix> {
    if g.rows != u.len() {
        return Err(Error::dim("outer_accumulate", g.rows, u.len()));
    }
    if g.cols != v.len() {
        return Err(Error::dim("outer_accumulate", g.cols, v.len()));
    }
    let mut out = g.clone();
    outer_acc(&mut out.data, g.cols, u, v, alpha);
    Ok(out)
}

// Unchecked slice kernels used on the training hot path. Callers guarantee
// shapes; debug builds assert them.

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 4];
    let ca = a.chunks_exact(4);
    let cb = b.chunks_exact(4);
    let tail: f64 = ca
        .remainder()
        .iter()
        .zip(cb.remainder())
        .map(|(x, y)| x * y)
        .sum();
    for (x, y) in ca.zip(cb) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// `out = m v`
pub(crate) fn matvec_into(m: &Matrix, v: &[f64], out: &mut [f64]) {
    debug_assert_eq!(m.cols, v.len());
    debug_assert_eq!(m.rows, out.len());
    for (o, row) in out.iter_mut().zip(m.data.chunks_exact(m.cols)) {
        *o = dot(row, v);
    }
}

/// `out += m^T v`
pub(crate) fn matvec_transposed_acc(m: &Matrix, v: &[f64], out: &mut [f64]) {
    debug_assert_eq!(m.rows, v.len());
    debug_assert_eq!(m.cols, out.len());
    for (&vi, row) in v.iter().zip(m.data.chunks_exact(m.cols)) {
        axpy(vi, row, out);
    }
}

/// `g += alpha u v^T` on a row-major buffer with `cols == v.len()`.
pub(crate) fn outer_acc(g: &mut [f64], cols: usize, u: &[f64], v: &[f64], alpha: f64) {
    debug_assert_eq!(g.len(), u.len() * cols);
    debug_assert_eq!(cols, v.len());
    for (&ui, row) in u.iter().zip(g.chunks_exact_mut(cols)) {
        axpy(alpha * ui, v, row);
    }
}

/// `y += a x`
pub(crate) fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}
