use std::fmt::Debug;
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive, ToPrimitive};

use super::NumericsError;

/// Floating point element type. Training and inference run in `f32`; gradient
/// checks run the same code in `f64`.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + Debug
    + Default
    + Sum
    + AddAssign
    + SubAssign
    + MulAssign
    + Send
    + Sync
    + 'static
{
    fn of(v: f64) -> Self {
        Self::from_f64(v).expect("representable constant")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Dense row-major tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<F = f32> {
    shape: Vec<usize>,
    data: Vec<F>,
}

impl<F: Scalar> Tensor<F> {
    pub fn new(shape: &[usize], data: Vec<F>) -> Result<Self, NumericsError> {
        let expected: usize = shape.iter().product();
        if shape.iter().any(|&e| e == 0) {
            return Err(NumericsError::Contract(format!(
                "tensor extents must be positive, got {shape:?}"
            )));
        }
        if expected != data.len() {
            return Err(NumericsError::Shape(format!(
                "shape {shape:?} needs {expected} values, got {}",
                data.len()
            )));
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, F::zero())
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, F::one())
    }

    pub fn full(shape: &[usize], value: F) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Self::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = F::one();
        }
        t
    }

    pub fn from_rows(rows: &[Vec<F>]) -> Result<Self, NumericsError> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(NumericsError::Shape("ragged rows".into()));
        }
        Self::new(&[rows.len(), cols], rows.concat())
    }

    pub fn scalar(value: F) -> Self {
        Self {
            shape: vec![1],
            data: vec![value],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[F] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [F] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<F> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Rows and columns when viewed as a matrix; vectors are a single row.
    pub fn dims2(&self) -> (usize, usize) {
        match self.shape.as_slice() {
            [n] => (1, *n),
            [r, c] => (*r, *c),
            other => {
                let c = *other.last().unwrap_or(&1);
                (self.data.len() / c.max(1), c)
            }
        }
    }

    pub fn row(&self, r: usize) -> &[F] {
        let (_, c) = self.dims2();
        &self.data[r * c..(r + 1) * c]
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self, NumericsError> {
        let n: usize = shape.iter().product();
        if n != self.data.len() {
            return Err(NumericsError::Shape(format!(
                "cannot reshape {:?} into {shape:?}",
                self.shape
            )));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn map(&self, f: impl Fn(F) -> F) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn sum(&self) -> F {
        self.data.iter().copied().sum()
    }

    /// Elementwise `self += other * scale`.
    pub fn add_scaled(&mut self, other: &Tensor<F>, scale: F) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b * scale;
        }
    }

    pub fn cast<G: Scalar>(&self) -> Tensor<G> {
        Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .map(|x| G::from_f64(x.to_f64().unwrap_or(f64::NAN)).unwrap_or(G::nan()))
                .collect(),
        }
    }

    pub fn max_abs_diff(&self, other: &Tensor<F>) -> F {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| (a - b).abs())
            .fold(F::zero(), F::max)
    }
}
