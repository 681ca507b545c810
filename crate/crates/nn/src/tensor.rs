use crate::error::{shape_err, Result};
use crate::scalar::Scalar;

/// Dense tensor. Feature maps have shape `[c, nx, ny, nz]` with x
/// fastest: element `(c, x, y, z)` lives at `((c·nz + z)·ny + y)·nx + x`.
/// Convolution weights are `[c_out, c_in, k, k, k]` with kx fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    pub shape: Vec<usize>,
    pub data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn zeros(shape: &[usize]) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![T::zero(); shape.iter().product()],
        }
    }

    pub fn full(shape: &[usize], v: T) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![v; shape.iter().product()],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<T>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return shape_err(format!("shape {shape:?} needs {n} values, got {}", data.len()));
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn scalar(v: T) -> Self {
        Self {
            shape: vec![],
            data: vec![v],
        }
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    /// `(c, [nx, ny, nz])` of a feature map.
    pub fn map_dims(&self) -> Result<(usize, [usize; 3])> {
        match self.shape[..] {
            [c, nx, ny, nz] => Ok((c, [nx, ny, nz])),
            _ => shape_err(format!("expected a [c, nx, ny, nz] map, got {:?}", self.shape)),
        }
    }

    pub fn channel(&self, c: usize) -> &[T] {
        let plane = self.numel() / self.shape[0];
        &self.data[c * plane..(c + 1) * plane]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |m, v| m.max(v.abs()))
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| U::from_f64(v.as_f64())).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Tensor<T>) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a = *a + b;
        }
    }
}
