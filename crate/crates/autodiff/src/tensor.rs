use std::fmt;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::real::{gemm, Real};

/// Dense row-major array.
#[derive(Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: fmt::Debug> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.data.len() <= 16 {
            write!(f, "Tensor{:?}{:?}", self.shape, self.data)
        } else {
            write!(f, "Tensor{:?}[{} values]", self.shape, self.data.len())
        }
    }
}

pub(crate) fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl<T: Real> Tensor<T> {
    pub fn new(shape: &[usize], data: Vec<T>) -> Result<Self> {
        if shape.contains(&0) {
            return Err(Error::invalid("tensor", format!("zero extent in shape {shape:?}")));
        }
        if numel(shape) != data.len() {
            return Err(Error::invalid(
                "tensor",
                format!("shape {shape:?} needs {} values, got {}", numel(shape), data.len()),
            ));
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    /// Like [`Tensor::new`] but panics on a length mismatch; for internal
    /// results whose shapes are known to be consistent.
    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<T>) -> Self {
        debug_assert_eq!(numel(&shape), data.len());
        Self { shape, data }
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        Self::from_parts(shape.to_vec(), vec![value; numel(shape)])
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, T::one())
    }

    pub fn scalar(value: T) -> Self {
        Self::from_parts(vec![1], vec![value])
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> T) -> Self {
        Self::from_parts(shape.to_vec(), (0..numel(shape)).map(&mut f).collect())
    }

    pub fn from_f64(shape: &[usize], data: &[f64]) -> Result<Self> {
        Self::new(shape, data.iter().map(|&v| T::from_f64_lossy(v)).collect())
    }

    /// Rows of equal length as a 2-D tensor.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::invalid("tensor", "ragged rows"));
        }
        let flat: Vec<f64> = rows.iter().flatten().copied().collect();
        Self::from_f64(&[rows.len(), cols], &flat)
    }

    pub fn eye(n: usize) -> Self {
        let mut t = Self::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = T::one();
        }
        t
    }

    pub fn uniform(shape: &[usize], low: f64, high: f64, rng: &mut impl Rng) -> Self {
        Self::from_fn(shape, |_| T::from_f64_lossy(rng.random_range(low..high)))
    }

    pub fn normal(shape: &[usize], std: f64, rng: &mut impl Rng) -> Self {
        Self::from_fn(shape, |_| {
            let z: f64 = StandardNormal.sample(rng);
            T::from_f64_lossy(z * std)
        })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn ndim(&self) -> usize {
        self.shape.len()
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

    pub fn to_f64_vec(&self) -> Vec<f64> {
        self.data.iter().map(|v| v.to_f64_lossy()).collect()
    }

    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor::from_parts(
            self.shape.clone(),
            self.data.iter().map(|v| U::from_f64_lossy(v.to_f64_lossy())).collect(),
        )
    }

    fn offset(&self, index: &[usize]) -> usize {
        assert_eq!(index.len(), self.shape.len(), "index rank");
        index
            .iter()
            .zip(&self.shape)
            .fold(0, |acc, (&i, &d)| {
                assert!(i < d, "index {index:?} out of bounds for {:?}", self.shape);
                acc * d + i
            })
    }

    pub fn at(&self, index: &[usize]) -> T {
        self.data[self.offset(index)]
    }

    pub fn set(&mut self, index: &[usize], value: T) {
        let o = self.offset(index);
        self.data[o] = value;
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Self> {
        if numel(shape) != self.len() {
            return Err(Error::shapes("reshape", &self.shape, shape));
        }
        Ok(Self::from_parts(shape.to_vec(), self.data.clone()))
    }

    pub fn into_reshape(self, shape: &[usize]) -> Result<Self> {
        if numel(shape) != self.len() {
            return Err(Error::shapes("reshape", &self.shape, shape));
        }
        Ok(Self::from_parts(shape.to_vec(), self.data))
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self::from_parts(self.shape.clone(), self.data.iter().map(|&v| f(v)).collect())
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(T, T) -> T) -> Result<Self> {
        if self.shape != other.shape {
            return Err(Error::shapes("zip_map", &self.shape, &other.shape));
        }
        Ok(Self::from_parts(
            self.shape.clone(),
            self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        ))
    }

    pub fn add_assign(&mut self, other: &Self) {
        assert_eq!(self.shape, other.shape, "add_assign shapes");
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a = *a + b;
        }
    }

    /// `self += alpha * other`
    pub fn axpy(&mut self, alpha: T, other: &Self) {
        assert_eq!(self.shape, other.shape, "axpy shapes");
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a = *a + alpha * b;
        }
    }

    pub fn scaled(&self, alpha: T) -> Self {
        self.map(|v| v * alpha)
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn dot(&self, other: &Self) -> T {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| a * b)
            .sum()
    }

    pub fn frobenius(&self) -> T {
        self.dot(self).sqrt()
    }

    pub fn max_abs(&self) -> T {
        self.data
            .iter()
            .fold(T::zero(), |m, &v| if v.abs() > m { v.abs() } else { m })
    }

    pub fn max_abs_diff(&self, other: &Self) -> T {
        assert_eq!(self.shape, other.shape, "max_abs_diff shapes");
        self.data
            .iter()
            .zip(&other.data)
            .fold(T::zero(), |m, (&a, &b)| {
                let d = (a - b).abs();
                if d > m {
                    d
                } else {
                    m
                }
            })
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Plain 2-D matrix product.
    pub fn matmul(&self, other: &Self) -> Result<Self> {
        if self.ndim() != 2 || other.ndim() != 2 || self.shape[1] != other.shape[0] {
            return Err(Error::shapes("matmul", &self.shape, &other.shape));
        }
        let (m, k, n) = (self.shape[0], self.shape[1], other.shape[1]);
        let mut out = vec![T::zero(); m * n];
        gemm(m, k, n, &self.data, false, &other.data, false, &mut out, T::zero());
        Ok(Self::from_parts(vec![m, n], out))
    }

    /// Transpose of a 2-D tensor.
    pub fn t(&self) -> Result<Self> {
        if self.ndim() != 2 {
            return Err(Error::invalid("transpose", format!("expected 2-D, got {:?}", self.shape)));
        }
        let (r, c) = (self.shape[0], self.shape[1]);
        Ok(Self::from_fn(&[c, r], |i| self.data[(i % r) * c + i / r]))
    }

    /// Row `i` of a 2-D tensor.
    pub fn row(&self, i: usize) -> &[T] {
        let c = self.shape[self.ndim() - 1];
        &self.data[i * c..(i + 1) * c]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_length() {
        assert!(Tensor::<f64>::new(&[2, 3], vec![0.0; 5]).is_err());
        assert!(Tensor::<f64>::new(&[0], vec![]).is_err());
    }

    #[test]
    fn matmul_by_hand() {
        let a = Tensor::<f64>::from_rows(&[vec![1.0, 2.0, 3.0], vec![4.0, 5.0, 6.0]]).unwrap();
        let b = Tensor::<f64>::from_rows(&[
            vec![1.0, 0.0, 2.0, 1.0],
            vec![0.0, 1.0, 1.0, 1.0],
            vec![1.0, 1.0, 0.0, 1.0],
        ])
        .unwrap();
        let c = a.matmul(&b).unwrap();
        assert_eq!(c.shape(), &[2, 4]);
        assert_eq!(c.data(), &[4.0, 5.0, 4.0, 6.0, 10.0, 11.0, 13.0, 15.0]);
    }

    #[test]
    fn transpose_round_trip() {
        let a = Tensor::<f64>::from_fn(&[3, 5], |i| i as f64);
        assert_eq!(a.t().unwrap().t().unwrap(), a);
        assert_eq!(a.t().unwrap().at(&[4, 2]), a.at(&[2, 4]));
    }
}
