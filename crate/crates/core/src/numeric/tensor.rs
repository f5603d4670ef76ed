use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use serde::{Deserialize, Serialize};

use super::NumericError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Precision {
    F32,
    F64,
}

/// Floating point scalar the library is generic over.
pub trait Real:
    num_traits::Float
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Sum
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    const PRECISION: Precision;

    fn from_f64(v: f64) -> Self;
    fn as_f64(self) -> f64;

    fn from_usize(v: usize) -> Self {
        Self::from_f64(v as f64)
    }
}

impl Real for f32 {
    const PRECISION: Precision = Precision::F32;

    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Real for f64 {
    const PRECISION: Precision = Precision::F64;

    fn from_f64(v: f64) -> Self {
        v
    }
    fn as_f64(self) -> f64 {
        self
    }
}

/// Row-major dense tensor of rank at most 3.
#[derive(Clone, PartialEq)]
pub struct Tensor<T> {
    dims: Vec<usize>,
    data: Vec<T>,
}

impl<T: Debug> Debug for Tensor<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Tensor")
            .field("dims", &self.dims)
            .field("data", &self.data)
            .finish()
    }
}

fn check_dims(dims: &[usize]) -> Result<usize, NumericError> {
    if dims.len() > 3 {
        return Err(NumericError::Rank(dims.len()));
    }
    Ok(dims.iter().product())
}

impl<T: Real> Tensor<T> {
    pub fn new(dims: Vec<usize>, data: Vec<T>) -> Result<Self, NumericError> {
        let n = check_dims(&dims)?;
        if n != data.len() {
            return Err(NumericError::Length { dims, data: data.len() });
        }
        Ok(Self { dims, data })
    }

    /// Panics on rank > 3; callers in this crate only build known-good shapes.
    pub fn zeros(dims: &[usize]) -> Self {
        let n = check_dims(dims).expect("tensor rank");
        Self { dims: dims.to_vec(), data: vec![T::zero(); n] }
    }

    pub fn from_fn(dims: &[usize], mut f: impl FnMut(usize) -> T) -> Self {
        let n = check_dims(dims).expect("tensor rank");
        Self { dims: dims.to_vec(), data: (0..n).map(&mut f).collect() }
    }

    pub fn scalar(v: T) -> Self {
        Self { dims: vec![], data: vec![v] }
    }

    pub fn vector(data: Vec<T>) -> Self {
        Self { dims: vec![data.len()], data }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<T>) -> Result<Self, NumericError> {
        Self::new(vec![rows, cols], data)
    }

    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self, NumericError> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(NumericError::Shape("ragged rows".into()));
        }
        Self::matrix(rows.len(), cols, rows.iter().flatten().copied().collect())
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn rank(&self) -> usize {
        self.dims.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn precision(&self) -> Precision {
        T::PRECISION
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

    /// Leading dimension for a matrix; 1 for vectors and scalars.
    pub fn rows(&self) -> usize {
        match self.dims.len() {
            0 | 1 => 1,
            _ => self.dims[0],
        }
    }

    /// Trailing dimension; 1 for scalars.
    pub fn cols(&self) -> usize {
        self.dims.last().copied().unwrap_or(1)
    }

    pub fn row(&self, i: usize) -> &[T] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [T] {
        let c = self.cols();
        &mut self.data[i * c..(i + 1) * c]
    }

    pub fn get2(&self, i: usize, j: usize) -> T {
        self.data[i * self.cols() + j]
    }

    pub fn set2(&mut self, i: usize, j: usize, v: T) {
        let c = self.cols();
        self.data[i * c + j] = v;
    }

    pub fn reshape(mut self, dims: &[usize]) -> Result<Self, NumericError> {
        let n = check_dims(dims)?;
        if n != self.data.len() {
            return Err(NumericError::Length { dims: dims.to_vec(), data: self.data.len() });
        }
        self.dims = dims.to_vec();
        Ok(self)
    }

    pub fn fill(&mut self, v: T) {
        self.data.iter_mut().for_each(|x| *x = v);
    }

    pub fn zeros_like(&self) -> Self {
        Self { dims: self.dims.clone(), data: vec![T::zero(); self.data.len()] }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn ensure_finite(self, op: &'static str) -> Result<Self, NumericError> {
        if self.all_finite() {
            Ok(self)
        } else {
            Err(NumericError::NonFinite(op))
        }
    }

    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor {
            dims: self.dims.clone(),
            data: self.data.iter().map(|x| U::from_f64(x.as_f64())).collect(),
        }
    }

    pub fn sum_squares(&self) -> T {
        self.data.iter().map(|&x| x * x).sum()
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a.as_f64() - b.as_f64()).abs())
            .fold(0.0, f64::max)
    }
}
