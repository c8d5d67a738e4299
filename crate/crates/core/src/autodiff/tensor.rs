//! Dense f64 tensors of rank 0, 1, or 2.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Shape of a [`Tensor`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Shape {
    Scalar,
    Vector(usize),
    Matrix(usize, usize),
}

impl Shape {
    /// Number of elements.
    pub fn len(&self) -> usize {
        match self {
            Shape::Scalar => 1,
            Shape::Vector(n) => *n,
            Shape::Matrix(r, c) => r * c,
        }
    }

    /// True only for zero-sized vectors and matrices.
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl std::fmt::Display for Shape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Shape::Scalar => write!(f, "scalar"),
            Shape::Vector(n) => write!(f, "vector[{n}]"),
            Shape::Matrix(r, c) => write!(f, "matrix[{r}x{c}]"),
        }
    }
}

/// A row-major dense tensor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Shape,
    data: Vec<f64>,
}

impl Tensor {
    /// A rank-0 tensor.
    pub fn scalar(value: f64) -> Tensor {
        Tensor {
            shape: Shape::Scalar,
            data: vec![value],
        }
    }

    /// A rank-1 tensor.
    pub fn vector(data: Vec<f64>) -> Tensor {
        Tensor {
            shape: Shape::Vector(data.len()),
            data,
        }
    }

    /// A rank-2 tensor from row-major data.
    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Tensor> {
        if rows * cols != data.len() {
            return Err(Error::ShapeMismatch {
                op: "matrix",
                detail: format!("{rows}x{cols} needs {} values, got {}", rows * cols, data.len()),
            });
        }
        Ok(Tensor {
            shape: Shape::Matrix(rows, cols),
            data,
        })
    }

    /// An all-zero tensor of the given shape.
    pub fn zeros(shape: Shape) -> Tensor {
        Tensor {
            shape,
            data: vec![0.0; shape.len()],
        }
    }

    /// An `n x 3` matrix from 3D points.
    pub fn from_points(points: &[[f64; 3]]) -> Tensor {
        let mut data = Vec::with_capacity(points.len() * 3);
        for p in points {
            data.extend_from_slice(p);
        }
        Tensor {
            shape: Shape::Matrix(points.len(), 3),
            data,
        }
    }

    /// Interpret an `n x 3` matrix as 3D points.
    pub fn to_points(&self) -> Result<Vec<[f64; 3]>> {
        match self.shape {
            Shape::Matrix(_, 3) => Ok(self
                .data
                .chunks_exact(3)
                .map(|c| [c[0], c[1], c[2]])
                .collect()),
            other => Err(Error::ShapeMismatch {
                op: "to_points",
                detail: format!("expected matrix[n x 3], got {other}"),
            }),
        }
    }

    /// The tensor's shape.
    pub fn shape(&self) -> Shape {
        self.shape
    }

    /// Flat row-major data.
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Mutable flat row-major data.
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Number of elements.
    pub fn len(&self) -> usize {
        self.data.len()
    }

    /// True only for zero-sized tensors.
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// The value of a rank-0 tensor.
    pub fn scalar_value(&self) -> Result<f64> {
        if self.shape == Shape::Scalar {
            Ok(self.data[0])
        } else {
            Err(Error::ShapeMismatch {
                op: "scalar_value",
                detail: format!("expected scalar, got {}", self.shape),
            })
        }
    }

    /// True when every element is finite.
    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matrix_validates_its_size() {
        assert!(Tensor::matrix(2, 3, vec![0.0; 6]).is_ok());
        assert!(Tensor::matrix(2, 3, vec![0.0; 5]).is_err());
    }

    #[test]
    fn points_round_trip() {
        let pts = vec![[1.0, 2.0, 3.0], [-1.0, 0.5, 0.25]];
        let t = Tensor::from_points(&pts);
        assert_eq!(t.shape(), Shape::Matrix(2, 3));
        assert_eq!(t.to_points().unwrap(), pts);
        assert!(Tensor::vector(vec![1.0]).to_points().is_err());
    }

    #[test]
    fn scalar_value_requires_rank_zero() {
        assert_eq!(Tensor::scalar(4.5).scalar_value().unwrap(), 4.5);
        assert!(Tensor::vector(vec![1.0]).scalar_value().is_err());
    }
}
