//! Dense tensors and a tape-based reverse-mode differentiator.
//!
//! The op set is deliberately closed: affine maps, sine and sigmoid
//! activations, row-wise concatenation, a handful of elementwise and
//! reduction ops, p-norms, and the small convolution/pooling kit used by the
//! feature extractor. Shapes must conform exactly; nothing broadcasts.
//!
//! Every op is generic over [`Real`] so gradient checks can run in `f64`
//! while training runs in `f32`.

mod graph;
mod real;

pub use graph::{Gradients, Graph, Var};
pub use real::Real;

use thiserror::Error;

/// Errors raised by tensor construction and graph ops.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum TensorError {
    #[error("{op}: dimension mismatch between {left:?} and {right:?}")]
    Shape {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("shape {shape:?} holds {expected} elements but {actual} were supplied")]
    DataLength {
        shape: Vec<usize>,
        expected: usize,
        actual: usize,
    },
    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("{0}: produced a non-finite value")]
    NonFinite(&'static str),
    #[error("{0}")]
    Contract(String),
}

pub type Result<T, E = TensorError> = std::result::Result<T, E>;

/// Order of a vector p-norm.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NormOrder {
    /// Finite `p >= 1`.
    P(f64),
    Infinity,
}

impl NormOrder {
    /// Computes `‖values‖_p` in `f64`.
    pub fn norm<T: Real>(self, values: &[T]) -> f64 {
        match self {
            NormOrder::Infinity => values
                .iter()
                .map(|v| v.to_f64().unwrap().abs())
                .fold(0.0, f64::max),
            NormOrder::P(p) if p == 1.0 => values.iter().map(|v| v.to_f64().unwrap().abs()).sum(),
            NormOrder::P(p) if p == 2.0 => values
                .iter()
                .map(|v| {
                    let v = v.to_f64().unwrap();
                    v * v
                })
                .sum::<f64>()
                .sqrt(),
            NormOrder::P(p) => values
                .iter()
                .map(|v| v.to_f64().unwrap().abs().powf(p))
                .sum::<f64>()
                .powf(1.0 / p),
        }
    }
}

impl std::fmt::Display for NormOrder {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            NormOrder::P(p) => write!(f, "{p}"),
            NormOrder::Infinity => f.write_str("inf"),
        }
    }
}

/// A dense row-major array.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T = f32> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    pub fn new(shape: impl Into<Vec<usize>>, data: Vec<T>) -> Result<Self> {
        let shape = shape.into();
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(TensorError::DataLength {
                shape,
                expected,
                actual: data.len(),
            });
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: impl Into<Vec<usize>>) -> Self {
        let shape = shape.into();
        let len = shape.iter().product();
        Self {
            shape,
            data: vec![T::zero(); len],
        }
    }

    pub fn filled(shape: impl Into<Vec<usize>>, value: T) -> Self {
        let shape = shape.into();
        let len = shape.iter().product();
        Self {
            shape,
            data: vec![value; len],
        }
    }

    pub fn scalar(value: T) -> Self {
        Self {
            shape: Vec::new(),
            data: vec![value],
        }
    }

    /// Builds a `rows × cols` matrix from nested rows.
    pub fn from_rows(rows: &[&[T]]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for row in rows {
            if row.len() != cols {
                return Err(TensorError::Shape {
                    op: "from_rows",
                    left: vec![cols],
                    right: vec![row.len()],
                });
            }
            data.extend_from_slice(row);
        }
        Self::new([rows.len(), cols], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
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

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> Option<T> {
        (self.data.len() == 1).then(|| self.data[0])
    }

    pub fn reshape(self, shape: impl Into<Vec<usize>>) -> Result<Self> {
        Self::new(shape, self.data)
    }

    /// Converts every element to another precision.
    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .map(|v| U::from_f64(v.to_f64().unwrap()).unwrap())
                .collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}
