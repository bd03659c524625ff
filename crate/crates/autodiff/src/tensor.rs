use crate::error::{Error, Result};
use crate::real::Real;

/// A dense n-dimensional array in row-major layout.
///
/// `grad` is populated by [`crate::graph::Graph::take_with_grad`] after a
/// backward pass; during graph construction it stays `None`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<R: Real> {
    pub shape: Vec<usize>,
    pub data: Vec<R>,
    pub requires_grad: bool,
    pub grad: Option<Vec<R>>,
}

impl<R: Real> Tensor<R> {
    pub fn new(shape: Vec<usize>, data: Vec<R>) -> Result<Tensor<R>> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::shape(
                "tensor",
                format!("shape {:?} holds {} elements, data has {}", shape, n, data.len()),
            ));
        }
        if shape.iter().any(|&d| d == 0) {
            return Err(Error::dim("tensor", format!("zero-sized axis in {shape:?}")));
        }
        Ok(Tensor {
            shape,
            data,
            requires_grad: false,
            grad: None,
        })
    }

    pub fn zeros(shape: &[usize]) -> Tensor<R> {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![R::ZERO; n],
            requires_grad: false,
            grad: None,
        }
    }

    pub fn filled(shape: &[usize], value: R) -> Tensor<R> {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; n],
            requires_grad: false,
            grad: None,
        }
    }

    pub fn scalar(value: R) -> Tensor<R> {
        Tensor {
            shape: vec![1],
            data: vec![value],
            requires_grad: false,
            grad: None,
        }
    }

    pub fn from_f64s(shape: Vec<usize>, values: &[f64]) -> Result<Tensor<R>> {
        Tensor::new(shape, values.iter().map(|&v| R::from_f64(v)).collect())
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn item(&self) -> R {
        debug_assert_eq!(self.numel(), 1, "item() on non-scalar tensor");
        self.data[0]
    }

    /// Flat index of a 2D position. Caller guarantees the tensor is 2D.
    #[inline]
    pub fn at2(&self, r: usize, c: usize) -> R {
        self.data[r * self.shape[1] + c]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Borrowed view handed to backward rules.
#[derive(Clone, Copy)]
pub struct TensorView<'a, R: Real> {
    pub shape: &'a [usize],
    pub data: &'a [R],
}

impl<'a, R: Real> TensorView<'a, R> {
    pub fn numel(&self) -> usize {
        self.data.len()
    }
}
